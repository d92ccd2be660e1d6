#include "e2em/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "e2em/errors.hpp"

namespace e2em {

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw ContractError("operands live on different tapes");
  return *a.tape;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                         shape_to_string(t.shape()));
  }
}

template <class Fwd, class Deriv>
Var unary(Var x, OpKind kind, Fwd fwd, Deriv deriv) {
  Tape& tape = *x.tape;
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  const std::size_t xid = x.id;
  return tape.record(kind, {xid}, std::move(out), [xid, deriv](Tape& t, const Tensor& g) {
    if (!t.requires_grad(xid)) return;
    const Tensor& in = t.value(xid);
    Tensor& dx = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * deriv(in[i]);
  });
}

double sigmoid_scalar(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_to_string(A.shape()) + " and " +
                         shape_to_string(B.shape()));
  }
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  Tensor C({m, n});
  const double* pa = A.data().data();
  const double* pb = B.data().data();
  double* pc = C.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  const std::size_t aid = a.id, bid = b.id;
  return tape.record(OpKind::MatMul, {aid, bid}, std::move(C), [aid, bid, m, k, n](Tape& t, const Tensor& g) {
    const double* pg = g.data().data();
    if (t.requires_grad(aid)) {
      // dA = g . B^T
      const double* pb = t.value(bid).data().data();
      double* da = t.grad_buffer(aid).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = pg + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double* brow = pb + p * n;
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          da[i * k + p] += acc;
        }
      }
    }
    if (t.requires_grad(bid)) {
      // dB = A^T . g
      const double* pa = t.value(aid).data().data();
      double* db = t.grad_buffer(bid).data().data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = pg + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double av = pa[i * k + p];
          double* drow = db + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
        }
      }
    }
  });
}

Var add(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape("add", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  const std::size_t aid = a.id, bid = b.id;
  return tape.record(OpKind::Add, {aid, bid}, std::move(out), [aid, bid](Tape& t, const Tensor& g) {
    for (auto id : {aid, bid}) {
      if (!t.requires_grad(id)) continue;
      Tensor& d = t.grad_buffer(id);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape("sub", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  const std::size_t aid = a.id, bid = b.id;
  return tape.record(OpKind::Sub, {aid, bid}, std::move(out), [aid, bid](Tape& t, const Tensor& g) {
    if (t.requires_grad(aid)) {
      Tensor& d = t.grad_buffer(aid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(bid)) {
      Tensor& d = t.grad_buffer(bid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  require_same_shape("mul", a.value(), b.value());
  Tensor out = a.value();
  const Tensor& B = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  const std::size_t aid = a.id, bid = b.id;
  return tape.record(OpKind::Mul, {aid, bid}, std::move(out), [aid, bid](Tape& t, const Tensor& g) {
    if (t.requires_grad(aid)) {
      const Tensor& B = t.value(bid);
      Tensor& d = t.grad_buffer(aid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * B[i];
    }
    if (t.requires_grad(bid)) {
      const Tensor& A = t.value(aid);
      Tensor& d = t.grad_buffer(bid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * A[i];
    }
  });
}

Var add_bias(Var x, Var bias) {
  Tape& tape = tape_of(x, bias);
  const Tensor& X = x.value();
  const Tensor& b = bias.value();
  const std::size_t n = X.shape().back();
  if (b.size() != n || b.rank() != 1) {
    throw DimensionError("add_bias: bias " + shape_to_string(b.shape()) + " does not match last axis of " +
                         shape_to_string(X.shape()));
  }
  Tensor out = X;
  const std::size_t rows = X.size() / n;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += b[j];
  }
  const std::size_t xid = x.id, bid = bias.id;
  return tape.record(OpKind::AddBias, {xid, bid}, std::move(out), [xid, bid, rows, n](Tape& t, const Tensor& g) {
    if (t.requires_grad(xid)) {
      Tensor& d = t.grad_buffer(xid);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
    if (t.requires_grad(bid)) {
      Tensor& d = t.grad_buffer(bid);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) d[j] += g[r * n + j];
      }
    }
  });
}

Var affine(Var x, double scale, double shift) {
  return unary(
      x, OpKind::Affine, [scale, shift](double v) { return scale * v + shift; },
      [scale](double) { return scale; });
}

Var sigmoid(Var x) {
  return unary(x, OpKind::Sigmoid, sigmoid_scalar, [](double z) {
    const double s = sigmoid_scalar(z);
    return s * (1.0 - s);
  });
}

Var tanh(Var x) {
  return unary(
      x, OpKind::Tanh, [](double z) { return std::tanh(z); },
      [](double z) {
        const double th = std::tanh(z);
        return 1.0 - th * th;
      });
}

Var leaky_relu(Var x, double slope) {
  return unary(
      x, OpKind::LeakyRelu, [slope](double z) { return z >= 0.0 ? z : slope * z; },
      [slope](double z) { return z >= 0.0 ? 1.0 : slope; });
}

Var softmax_rows(Var z) {
  Tape& tape = *z.tape;
  const Tensor& Z = z.value();
  require_rank("softmax_rows", Z, 2);
  if (!Z.all_finite()) throw NumericError("softmax_rows: non-finite input");
  const std::size_t b = Z.dim(0), c = Z.dim(1);
  Tensor out(Z.shape());
  for (std::size_t r = 0; r < b; ++r) {
    const double* row = Z.data().data() + r * c;
    double* o = out.data().data() + r * c;
    const double mx = *std::max_element(row, row + c);
    double total = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      o[j] = std::exp(row[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < c; ++j) o[j] /= total;
  }
  const std::size_t zid = z.id;
  const std::size_t yid = tape.size();  // id the output node will receive
  return tape.record(OpKind::SoftmaxRows, {zid}, std::move(out), [zid, yid, b, c](Tape& t, const Tensor& g) {
    const Tensor& Y = t.value(yid);
    Tensor& dz = t.grad_buffer(zid);
    for (std::size_t r = 0; r < b; ++r) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[r * c + j] * Y[r * c + j];
      for (std::size_t j = 0; j < c; ++j) dz[r * c + j] += Y[r * c + j] * (g[r * c + j] - dot);
    }
  });
}

Var cross_entropy(Var pred, const Tensor& target) {
  Tape& tape = *pred.tape;
  const Tensor& P = pred.value();
  require_rank("cross_entropy", P, 2);
  require_same_shape("cross_entropy", P, target);
  const std::size_t b = P.dim(0), c = P.dim(1);
  std::vector<std::size_t> labels(b);
  for (std::size_t r = 0; r < b; ++r) {
    std::size_t ones = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const double v = target[r * c + j];
      if (v == 1.0) {
        ++ones;
        labels[r] = j;
      } else if (v != 0.0) {
        throw ValidationError("cross_entropy: target row " + std::to_string(r) + " is not one-hot");
      }
    }
    if (ones != 1) throw ValidationError("cross_entropy: target row " + std::to_string(r) + " is not one-hot");
  }
  constexpr double kFloor = 1e-12;
  double loss = 0.0;
  for (std::size_t r = 0; r < b; ++r) loss -= std::log(std::max(P[r * c + labels[r]], kFloor));
  loss /= static_cast<double>(b);
  const std::size_t pid = pred.id;
  return tape.record(OpKind::CrossEntropy, {pid}, Tensor::scalar(loss),
                     [pid, labels = std::move(labels), b, c](Tape& t, const Tensor& g) {
                       const Tensor& P = t.value(pid);
                       Tensor& dp = t.grad_buffer(pid);
                       const double scale = g[0] / static_cast<double>(b);
                       for (std::size_t r = 0; r < b; ++r) {
                         const double p = P[r * c + labels[r]];
                         if (p > kFloor) dp[r * c + labels[r]] -= scale / p;
                       }
                     });
}

Var sum(Var x) {
  Tape& tape = *x.tape;
  double total = 0.0;
  for (double v : x.value().data()) total += v;
  const std::size_t xid = x.id;
  return tape.record(OpKind::Sum, {xid}, Tensor::scalar(total), [xid](Tape& t, const Tensor& g) {
    Tensor& d = t.grad_buffer(xid);
    for (auto& v : d.data()) v += g[0];
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  Tape& tape = *parts.front().tape;
  const std::size_t b = parts.front().value().dim(0);
  std::vector<std::size_t> ids, widths;
  std::size_t total = 0;
  for (const Var& v : parts) {
    tape_of(parts.front(), v);
    require_rank("concat_cols", v.value(), 2);
    if (v.value().dim(0) != b) {
      throw DimensionError("concat_cols: row count mismatch " + shape_to_string(parts.front().shape()) + " vs " +
                           shape_to_string(v.shape()));
    }
    ids.push_back(v.id);
    widths.push_back(v.value().dim(1));
    total += widths.back();
  }
  Tensor out({b, total});
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& in = parts[p].value();
    for (std::size_t r = 0; r < b; ++r) {
      std::copy_n(in.data().data() + r * widths[p], widths[p], out.data().data() + r * total + offset);
    }
    offset += widths[p];
  }
  auto inputs = ids;
  return tape.record(OpKind::ConcatCols, std::move(inputs), std::move(out),
                     [ids, widths, b, total](Tape& t, const Tensor& g) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < ids.size(); ++p) {
                         if (t.requires_grad(ids[p])) {
                           Tensor& d = t.grad_buffer(ids[p]);
                           for (std::size_t r = 0; r < b; ++r) {
                             for (std::size_t j = 0; j < widths[p]; ++j) d[r * widths[p] + j] += g[r * total + offset + j];
                           }
                         }
                         offset += widths[p];
                       }
                     });
}

Var slice_cols(Var x, std::size_t begin, std::size_t end) {
  Tape& tape = *x.tape;
  const Tensor& X = x.value();
  require_rank("slice_cols", X, 2);
  const std::size_t b = X.dim(0), w = X.dim(1);
  if (begin >= end || end > w) {
    throw ContractError("slice_cols: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                        ") invalid for " + shape_to_string(X.shape()));
  }
  const std::size_t n = end - begin;
  Tensor out({b, n});
  for (std::size_t r = 0; r < b; ++r) std::copy_n(X.data().data() + r * w + begin, n, out.data().data() + r * n);
  const std::size_t xid = x.id;
  return tape.record(OpKind::SliceCols, {xid}, std::move(out), [xid, b, w, n, begin](Tape& t, const Tensor& g) {
    Tensor& d = t.grad_buffer(xid);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t j = 0; j < n; ++j) d[r * w + begin + j] += g[r * n + j];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tape& tape = *x.tape;
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t xid = x.id;
  return tape.record(OpKind::Reshape, {xid}, std::move(out), [xid](Tape& t, const Tensor& g) {
    Tensor& d = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Var slice_time(Var seq, std::size_t step) {
  Tape& tape = *seq.tape;
  const Tensor& S = seq.value();
  require_rank("slice_time", S, 3);
  const std::size_t b = S.dim(0), T = S.dim(1), d = S.dim(2);
  if (step >= T) throw ContractError("slice_time: step " + std::to_string(step) + " out of range");
  Tensor out({b, d});
  for (std::size_t r = 0; r < b; ++r) {
    std::copy_n(S.data().data() + (r * T + step) * d, d, out.data().data() + r * d);
  }
  const std::size_t sid = seq.id;
  return tape.record(OpKind::SliceTime, {sid}, std::move(out), [sid, b, T, d, step](Tape& t, const Tensor& g) {
    Tensor& ds = t.grad_buffer(sid);
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t j = 0; j < d; ++j) ds[(r * T + step) * d + j] += g[r * d + j];
    }
  });
}

Var stack_time(std::span<const Var> steps) {
  if (steps.empty()) throw ContractError("stack_time: empty sequence");
  Tape& tape = *steps.front().tape;
  const Shape first = steps.front().shape();
  if (first.size() != 2) throw DimensionError("stack_time: steps must be [b x d], got " + shape_to_string(first));
  const std::size_t b = first[0], d = first[1], T = steps.size();
  std::vector<std::size_t> ids;
  Tensor out({b, T, d});
  for (std::size_t s = 0; s < T; ++s) {
    tape_of(steps.front(), steps[s]);
    if (steps[s].shape() != first) {
      throw DimensionError("stack_time: step shape " + shape_to_string(steps[s].shape()) + " vs " +
                           shape_to_string(first));
    }
    ids.push_back(steps[s].id);
    const Tensor& v = steps[s].value();
    for (std::size_t r = 0; r < b; ++r) std::copy_n(v.data().data() + r * d, d, out.data().data() + (r * T + s) * d);
  }
  auto inputs = ids;
  return tape.record(OpKind::StackTime, std::move(inputs), std::move(out), [ids, b, T, d](Tape& t, const Tensor& g) {
    for (std::size_t s = 0; s < T; ++s) {
      if (!t.requires_grad(ids[s])) continue;
      Tensor& dv = t.grad_buffer(ids[s]);
      for (std::size_t r = 0; r < b; ++r) {
        for (std::size_t j = 0; j < d; ++j) dv[r * d + j] += g[(r * T + s) * d + j];
      }
    }
  });
}

std::size_t conv_same_output(std::size_t input, std::size_t stride) { return (input + stride - 1) / stride; }

namespace {

struct ConvGeometry {
  std::size_t batch, in_h, in_w, cin, kh, kw, cout, stride, out_h, out_w, pad_top, pad_left;
};

std::size_t same_pad_before(std::size_t input, std::size_t output, std::size_t kernel, std::size_t stride) {
  const std::ptrdiff_t needed = static_cast<std::ptrdiff_t>((output - 1) * stride + kernel) -
                                static_cast<std::ptrdiff_t>(input);
  return needed > 0 ? static_cast<std::size_t>(needed) / 2 : 0;
}

}  // namespace

Var conv2d(Var images, Var kernel, std::size_t stride) {
  Tape& tape = tape_of(images, kernel);
  const Tensor& X = images.value();
  const Tensor& K = kernel.value();
  require_rank("conv2d", X, 4);
  require_rank("conv2d", K, 4);
  if (stride == 0) throw ContractError("conv2d: stride must be positive");
  if (K.dim(2) != X.dim(3)) {
    throw DimensionError("conv2d: kernel " + shape_to_string(K.shape()) + " expects " + std::to_string(K.dim(2)) +
                         " input channels, images are " + shape_to_string(X.shape()));
  }
  ConvGeometry geo{X.dim(0), X.dim(1), X.dim(2), X.dim(3), K.dim(0), K.dim(1), K.dim(3), stride, 0, 0, 0, 0};
  geo.out_h = conv_same_output(geo.in_h, stride);
  geo.out_w = conv_same_output(geo.in_w, stride);
  geo.pad_top = same_pad_before(geo.in_h, geo.out_h, geo.kh, stride);
  geo.pad_left = same_pad_before(geo.in_w, geo.out_w, geo.kw, stride);

  Tensor out({geo.batch, geo.out_h, geo.out_w, geo.cout});
  const double* px = X.data().data();
  const double* pk = K.data().data();
  double* po = out.data().data();
  for (std::size_t n = 0; n < geo.batch; ++n) {
    for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
      for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
        double* o = po + ((n * geo.out_h + oy) * geo.out_w + ox) * geo.cout;
        for (std::size_t ky = 0; ky < geo.kh; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(geo.pad_top);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(geo.in_h)) continue;
          for (std::size_t kx = 0; kx < geo.kw; ++kx) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(geo.pad_left);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(geo.in_w)) continue;
            const double* xin = px + ((n * geo.in_h + static_cast<std::size_t>(iy)) * geo.in_w + static_cast<std::size_t>(ix)) * geo.cin;
            const double* kin = pk + (ky * geo.kw + kx) * geo.cin * geo.cout;
            for (std::size_t ci = 0; ci < geo.cin; ++ci) {
              const double xv = xin[ci];
              const double* krow = kin + ci * geo.cout;
              for (std::size_t co = 0; co < geo.cout; ++co) o[co] += xv * krow[co];
            }
          }
        }
      }
    }
  }

  const std::size_t xid = images.id, kid = kernel.id;
  return tape.record(OpKind::Conv2d, {xid, kid}, std::move(out), [xid, kid, geo](Tape& t, const Tensor& g) {
    const bool want_x = t.requires_grad(xid);
    const bool want_k = t.requires_grad(kid);
    const double* px = t.value(xid).data().data();
    const double* pk = t.value(kid).data().data();
    double* dx = want_x ? t.grad_buffer(xid).data().data() : nullptr;
    double* dk = want_k ? t.grad_buffer(kid).data().data() : nullptr;
    const double* pg = g.data().data();
    for (std::size_t n = 0; n < geo.batch; ++n) {
      for (std::size_t oy = 0; oy < geo.out_h; ++oy) {
        for (std::size_t ox = 0; ox < geo.out_w; ++ox) {
          const double* go = pg + ((n * geo.out_h + oy) * geo.out_w + ox) * geo.cout;
          for (std::size_t ky = 0; ky < geo.kh; ++ky) {
            const std::ptrdiff_t iy =
                static_cast<std::ptrdiff_t>(oy * geo.stride + ky) - static_cast<std::ptrdiff_t>(geo.pad_top);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(geo.in_h)) continue;
            for (std::size_t kx = 0; kx < geo.kw; ++kx) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * geo.stride + kx) - static_cast<std::ptrdiff_t>(geo.pad_left);
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(geo.in_w)) continue;
              const std::size_t xoff =
                  ((n * geo.in_h + static_cast<std::size_t>(iy)) * geo.in_w + static_cast<std::size_t>(ix)) * geo.cin;
              const std::size_t koff = (ky * geo.kw + kx) * geo.cin * geo.cout;
              for (std::size_t ci = 0; ci < geo.cin; ++ci) {
                const double* krow = pk + koff + ci * geo.cout;
                if (dx) {
                  double acc = 0.0;
                  for (std::size_t co = 0; co < geo.cout; ++co) acc += go[co] * krow[co];
                  dx[xoff + ci] += acc;
                }
                if (dk) {
                  const double xv = px[xoff + ci];
                  double* drow = dk + koff + ci * geo.cout;
                  for (std::size_t co = 0; co < geo.cout; ++co) drow[co] += xv * go[co];
                }
              }
            }
          }
        }
      }
    }
  });
}

Var global_avg_pool(Var features) {
  Tape& tape = *features.tape;
  const Tensor& F = features.value();
  require_rank("global_avg_pool", F, 4);
  const std::size_t b = F.dim(0), hw = F.dim(1) * F.dim(2), f = F.dim(3);
  Tensor out({b, f});
  for (std::size_t n = 0; n < b; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t c = 0; c < f; ++c) out[n * f + c] += F[(n * hw + p) * f + c];
    }
    for (std::size_t c = 0; c < f; ++c) out[n * f + c] /= static_cast<double>(hw);
  }
  const std::size_t fid = features.id;
  return tape.record(OpKind::GlobalAvgPool, {fid}, std::move(out), [fid, b, hw, f](Tape& t, const Tensor& g) {
    Tensor& d = t.grad_buffer(fid);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t p = 0; p < hw; ++p) {
        for (std::size_t c = 0; c < f; ++c) d[(n * hw + p) * f + c] += g[n * f + c] * inv;
      }
    }
  });
}

Var mul_const(Var x, const Tensor& factor) {
  Tape& tape = *x.tape;
  require_same_shape("mul_const", x.value(), factor);
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor[i];
  const std::size_t xid = x.id;
  return tape.record(OpKind::MulConst, {xid}, std::move(out), [xid, factor](Tape& t, const Tensor& g) {
    Tensor& d = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * factor[i];
  });
}

Var add_const(Var x, const Tensor& offset) {
  Tape& tape = *x.tape;
  require_same_shape("add_const", x.value(), offset);
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += offset[i];
  const std::size_t xid = x.id;
  return tape.record(OpKind::AddConst, {xid}, std::move(out), [xid](Tape& t, const Tensor& g) {
    Tensor& d = t.grad_buffer(xid);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
  Tensor out({labels.size(), classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= classes) {
      throw ValidationError("label " + std::to_string(labels[r]) + " outside [0, " + std::to_string(classes) + ")");
    }
    out[r * classes + labels[r]] = 1.0;
  }
  return out;
}

}  // namespace e2em
