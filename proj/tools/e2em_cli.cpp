// Command-line front end: every experiment setting is a --<key> flag, a
// `key = value` line in a --config file, or a --set key=value override.

#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "e2em/errors.hpp"
#include "e2em/experiment.hpp"

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kConfig = 2, kRuntime = 3 };

}  // namespace

int main(int argc, char** argv) {
  using namespace e2em;
  CLI::App app{"Staged CNN training, recurrent heads and three-member ensembles"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::string> config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "key = value configuration file");
  app.add_option("--set", overrides, "key=value override (repeatable)")->take_all();

  std::map<std::string, std::string> key_values;
  for (const auto& key : config_keys()) {
    app.add_option("--" + key.name, key_values[key.name], key.help)->group("Settings");
  }

  auto* train = app.add_subcommand("train", "staged training of one single-model pipeline");
  auto* compare = app.add_subcommand("compare-rnn", "train every head variant with identical seeds and compare");
  auto* e2e = app.add_subcommand("e2e3m", "three level-1 models plus a trained meta-head");
  auto* ens = app.add_subcommand("ensemble-eval", "AVG-Softmax vs EXT-Softmax over member checkpoints");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op, cell and model");
  std::optional<std::string> fault;
  grad->add_option("--inject-fault", fault, "flip the sign of one op's gradient rule");
  auto* kfold = app.add_subcommand("kfold-split", "write the fold assignment of the training set");
  std::optional<std::size_t> kfold_n;
  kfold->add_option("-n,--samples", kfold_n, "split this many indices instead of the dataset");
  auto* show = app.add_subcommand("show-config", "print the resolved configuration");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg;
    if (config_path) cfg = load_config_file(*config_path, cfg);
    for (const auto& key : config_keys()) {
      if (app.count("--" + key.name) > 0) apply_setting(cfg, key.name, key_values[key.name]);
    }
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
      apply_setting(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }

    if (*show) {
      std::cout << config_to_text(cfg);
      const auto problems = cfg.problems();
      for (const auto& p : problems) std::cerr << "problem: " << p << "\n";
      return problems.empty() ? kOk : kConfig;
    }
    if (*train) cmd_train(cfg, std::cout);
    if (*compare) cmd_compare_rnn(cfg, std::cout);
    if (*e2e) cmd_e2e3m(cfg, std::cout);
    if (*ens) cmd_ensemble_eval(cfg, std::cout);
    if (*kfold) cmd_kfold_split(cfg, kfold_n, std::cout);
    if (*grad) {
      std::optional<OpKind> op;
      if (fault) {
        op = op_from_name(*fault);
        if (!op) throw ConfigError("unknown op '" + *fault + "' for --inject-fault");
      }
      return cmd_gradcheck(cfg, op, std::cout).passed() ? kOk : kCheckFailed;
    }
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
}
