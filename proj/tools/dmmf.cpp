#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dmmf/dmmf.hpp"

namespace {

constexpr int kExitPassed = 0;
constexpr int kExitFailed = 1;
constexpr int kExitConfig = 2;

const char* const kCommands[] = {"simulate",   "analyze",   "pstar",        "best-response",
                                 "ne-scan",    "deviation", "wrm-converge", "verify"};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic max-min fair allocation experiments"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> threads;
  for (const char* name : kCommands) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "JSON config file")->required();
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "base seed (overrides the config)");
    sub->add_option("--threads", threads, "worker threads (DMMF_THREADS overrides)");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPassed : kExitConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  dmmf::ExperimentConfig config;
  try {
    std::ifstream in(config_path);
    if (!in) throw dmmf::ConfigError("cannot open config file '" + config_path + "'");
    dmmf::Json doc;
    try {
      doc = dmmf::Json::parse(in);
    } catch (const dmmf::Json::parse_error& e) {
      throw dmmf::ConfigError(std::string("config: invalid JSON: ") + e.what());
    }
    if (seed) doc["seed"] = *seed;
    config = dmmf::ExperimentConfig::from_json(doc);
    config.threads = dmmf::resolve_threads(threads.value_or(config.threads));
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  }

  try {
    const auto result = dmmf::run_experiment(command, config);
    dmmf::write_result(result, out_dir);
    std::cout << command << ": " << (result.passed ? "passed" : "FAILED") << " (" << out_dir
              << "/summary.json)\n";
    return result.passed ? kExitPassed : kExitFailed;
  } catch (const dmmf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailed;
  }
}
