#include "medcoder/pipeline.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <iostream>
#include <string>

int main(int argc, char** argv) {
  CLI::App app{"medcoder: multimodal diagnosis code assignment pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false, out_set = false;

  const std::vector<std::string> commands = {
      "gen-synthetic", "ingest",  "train-text", "train-ranker", "train-tabular",
      "tune-ensemble", "predict", "explain",    "evaluate",     "report"};
  for (const auto& name : commands) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "run configuration JSON")->required();
    sub->add_option("--seed", seed, "override the configured seed")
        ->each([&](const std::string&) { seed_set = true; });
    sub->add_option("--out", out_dir, "override the configured output directory")
        ->each([&](const std::string&) { out_set = true; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage
  }

  try {
    medcoder::RunConfig config = medcoder::RunConfig::load(config_path);
    if (seed_set) config.seed = seed;
    if (out_set) config.out_dir = out_dir;
    const std::string command = app.get_subcommands().front()->get_name();
    const char* verbose = std::getenv("MEDCODER_VERBOSE");
    if (verbose && std::string(verbose) != "0")
      std::cerr << "medcoder: " << command << " -> " << config.out_dir
                << " (seed " << config.seed << ")\n";
    return medcoder::run_pipeline(config, command);
  } catch (const medcoder::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const medcoder::MissingDependencyError& e) {
    std::cerr << "missing dependency: " << e.what() << "\n";
    return 3;
  } catch (const medcoder::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 4;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
}
