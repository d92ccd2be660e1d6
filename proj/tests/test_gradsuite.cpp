#include <gtest/gtest.h>

#include "e2em/gradsuite.hpp"

using namespace e2em;

TEST(GradientSuite, CleanBuildPasses) {
  const GradSuiteReport r = run_gradient_suite(0);
  EXPECT_TRUE(r.passed()) << format_gradient_report(r);
  for (const auto& [op, err] : r.per_op) EXPECT_LT(err, 1e-4) << op_name(op);
  EXPECT_TRUE(r.suspects().empty());
}

TEST(GradientSuite, CoversEveryDifferentiableOp) {
  const GradSuiteReport r = run_gradient_suite(1);
  for (int k = static_cast<int>(OpKind::MatMul); k <= static_cast<int>(OpKind::AddConst); ++k)
    EXPECT_TRUE(r.per_op.contains(static_cast<OpKind>(k))) << op_name(static_cast<OpKind>(k));
}

TEST(GradientSuite, InjectedFaultIsAttributedToItsOp) {
  for (int k = static_cast<int>(OpKind::MatMul); k <= static_cast<int>(OpKind::AddConst); ++k) {
    const auto op = static_cast<OpKind>(k);
    const GradSuiteReport r = run_gradient_suite(2, op);
    EXPECT_FALSE(r.passed()) << op_name(op);
    EXPECT_EQ(r.suspects(), std::vector<OpKind>{op}) << op_name(op) << "\n" << format_gradient_report(r);
    const std::string text = format_gradient_report(r);
    EXPECT_NE(text.find("suspect op(s): " + std::string(op_name(op))), std::string::npos) << text;
  }
}
