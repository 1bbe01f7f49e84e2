// Command-line front end: pretrain, adapt, ablate, sweep, report.
//
// Precedence for settings: built-in defaults < config file < --set key=value < dedicated flags
// (--seed, --strategy, --out).
#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <iostream>
#include <optional>

#include "ctta/commands.hpp"

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<std::string> out;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, Common& c, bool with_strategy) {
  cmd->add_option("--config", c.config, "JSON run configuration")->required();
  cmd->add_option("--seed", c.seed, "Run seed (replaces seed and seeds)");
  if (with_strategy) cmd->add_option("--strategy", c.strategy, "source | bn_adapt | tent | dcfs");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--set", c.sets, "Dotted-path override, e.g. --set method.lambda_cdm=0.8");
}

ctta::RunConfig resolve(const Common& c) {
  std::vector<ctta::Override> overrides;
  for (const auto& s : c.sets) overrides.push_back(ctta::parse_override(s));
  if (c.seed) {
    overrides.push_back({"seed", std::to_string(*c.seed)});
    overrides.push_back({"seeds", "[]"});
  }
  if (c.strategy) overrides.push_back({"method.strategy", *c.strategy, true});
  if (c.out) overrides.push_back({"output_dir", *c.out, true});
  return ctta::load_config(c.config, overrides);
}

int run(int argc, char** argv) {
  CLI::App app{"Continual test-time adaptation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace | debug | info | warn | error | off");

  Common pre, adapt, ablate, sweep;
  add_common(app.add_subcommand("pretrain", "Train the source model and write the checkpoint"), pre, false);
  add_common(app.add_subcommand("adapt", "Run one strategy over the corruption stream"), adapt, true);
  add_common(app.add_subcommand("ablate", "Run the five loss configurations"), ablate, false);
  auto* sweep_cmd = app.add_subcommand("sweep", "Sensitivity sweep over lambda_cdm or lambda_scl");
  add_common(sweep_cmd, sweep, false);
  std::string param;
  std::vector<double> values;
  sweep_cmd->add_option("--param", param, "lambda_cdm | lambda_scl");
  sweep_cmd->add_option("--values", values, "Grid values, comma separated (default 0.4 .. 1.6)")->delimiter(',');
  auto* report_cmd = app.add_subcommand("report", "Print the result tables of a run directory");
  std::string report_dir;
  double threshold = 3.0;
  report_cmd->add_option("dir", report_dir, "Run directory")->required();
  report_cmd->add_option("--spread-threshold", threshold, "Sweep insensitivity threshold in error points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }
  spdlog::set_level(spdlog::level::from_str(log_level));

  if (app.got_subcommand("pretrain")) {
    ctta::cmd_pretrain(resolve(pre));
  } else if (app.got_subcommand("adapt")) {
    const auto table = ctta::cmd_adapt(resolve(adapt));
    std::cout << table.to_csv();
  } else if (app.got_subcommand("ablate")) {
    const auto table = ctta::cmd_ablate(resolve(ablate));
    std::cout << table.to_csv();
  } else if (app.got_subcommand("sweep")) {
    if (!param.empty()) sweep.sets.push_back("sweep.param=" + param);
    if (!values.empty()) {
      std::string list = "[";
      for (std::size_t i = 0; i < values.size(); ++i) list += (i ? "," : "") + std::to_string(values[i]);
      sweep.sets.push_back("sweep.values=" + list + "]");
    }
    const auto result = ctta::cmd_sweep(resolve(sweep));
    std::cout << result.to_csv();
  } else if (app.got_subcommand("report")) {
    std::cout << ctta::cmd_report(report_dir, threshold);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ctta::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const ctta::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const ctta::IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kData;
  } catch (const ctta::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
}
