// dfpl: run, partition, bounds and validate-chain front end.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "dfpl/config.hpp"
#include "dfpl/experiment.hpp"
#include "dfpl/ledger.hpp"
#include "dfpl/log.hpp"

namespace {

enum ExitCode : int {
  kOk = 0,
  kInvalidChain = 1,
  kConfigError = 2,
  kRoundFailure = 3,
  kIoError = 4,
};

int report(int code, const char* kind, const std::string& message, const std::string& field = {},
           std::optional<std::uint64_t> round = std::nullopt) {
  nlohmann::ordered_json err;
  err["kind"] = kind;
  err["message"] = message;
  if (!field.empty()) err["field"] = field;
  if (round) err["round"] = *round;
  err["exit_code"] = code;
  std::cerr << nlohmann::ordered_json{{"error", err}}.dump() << '\n';
  return code;
}

/// Turns leftover "--key value" / "--key=value" pairs into config overrides.
void apply_overrides(dfpl::ExperimentConfig& cfg, const std::vector<std::string>& extras) {
  for (std::size_t i = 0; i < extras.size(); ++i) {
    const std::string& arg = extras[i];
    if (arg.rfind("--", 0) != 0 || arg.size() == 2)
      throw dfpl::ConfigError("", fmt::format("unexpected argument '{}'", arg));
    std::string key = arg.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= extras.size()) throw dfpl::ConfigError(key, fmt::format("option --{} needs a value", key));
      value = extras[++i];
    }
    dfpl::set_field(cfg, key, dfpl::parse_override_value(value));
  }
}

dfpl::ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& extras) {
  dfpl::ExperimentConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw dfpl::ConfigError("", fmt::format("cannot read config file {}", path));
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    cfg = dfpl::parse_config_text(text);
  }
  apply_overrides(cfg, extras);
  cfg.validate();
  return cfg;
}

int validate_chain_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) return report(kIoError, "io", fmt::format("cannot read chain file {}", path));
  dfpl::Chain chain;
  try {
    chain = dfpl::read_chain_jsonl(in);
  } catch (const dfpl::Error& e) {
    return report(kInvalidChain, "invalid_chain", fmt::format("malformed chain file: {}", e.what()));
  }
  nlohmann::ordered_json out;
  out["blocks"] = chain.size();
  if (const auto v = dfpl::validate_chain(chain)) {
    out["valid"] = false;
    out["index"] = v->index;
    out["violation"] = dfpl::to_string(v->kind);
    out["detail"] = v->detail;
    std::cout << out.dump() << '\n';
    return kInvalidChain;
  }
  out["valid"] = true;
  std::cout << out.dump() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Decentralised federated prototype learning simulator"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log progress to stderr");

  std::string config_path;
  auto add_config_command = [&](const char* name, const char* help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", config_path, "TOML configuration file");
    sub->allow_extras();
    sub->footer("Any config field can be overridden with --<field> <value>.");
    return sub;
  };
  auto* run = add_config_command("run", "Train, exchange, mine and write run artifacts");
  auto* partition = add_config_command("partition", "Write the client/class heatmap only");
  auto* bounds = add_config_command("bounds", "Sweep the budget and convergence bound over R");

  std::string chain_path;
  auto* check = app.add_subcommand("validate-chain", "Check a chain.jsonl file");
  check->add_option("chain", chain_path, "Chain file written by run")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    return report(kConfigError, "usage", e.what());
  }
  if (verbose) dfpl::set_log_level(dfpl::LogLevel::kInfo);

  if (check->parsed()) return validate_chain_file(chain_path);

  CLI::App* active = run->parsed() ? run : partition->parsed() ? partition : bounds;
  try {
    const auto cfg = load_config(config_path, active->remaining());
    if (active == run) {
      const auto result = dfpl::run_and_write(cfg);
      nlohmann::ordered_json out;
      out["output_dir"] = cfg.output_dir.string();
      out["rounds"] = result.series.size();
      if (!result.series.empty()) {
        out["final_taa"] = result.series.back().taa;
        out["final_tal"] = result.series.back().tal;
      }
      std::cout << out.dump() << '\n';
    } else if (active == partition) {
      const auto p = dfpl::partition_and_write(cfg);
      std::cout << nlohmann::ordered_json{{"output_dir", cfg.output_dir.string()},
                                          {"clients", p.shards.size()},
                                          {"attempts", p.attempts}}
                       .dump()
                << '\n';
    } else {
      const auto rows = dfpl::bounds_and_write(cfg);
      std::cout << nlohmann::ordered_json{{"output_dir", cfg.output_dir.string()}, {"rows", rows.size()}}.dump()
                << '\n';
    }
  } catch (const dfpl::ConfigError& e) {
    return report(kConfigError, "config", e.what(), e.field());
  } catch (const dfpl::RoundFailure& e) {
    return report(kRoundFailure, "round_failure", e.what(), {}, e.round());
  } catch (const dfpl::LoadError& e) {
    return report(kIoError, "io", e.what());
  } catch (const dfpl::IoError& e) {
    return report(kIoError, "io", e.what());
  } catch (const dfpl::BudgetError& e) {
    return report(kConfigError, "config", e.what());
  } catch (const dfpl::InvalidArgument& e) {
    return report(kConfigError, "config", e.what());
  } catch (const std::exception& e) {
    return report(1, "internal", e.what());
  }
  return kOk;
}
