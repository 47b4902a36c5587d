#include "cgt/pipeline.hpp"

#include <iostream>
#include <string>
#include <vector>

namespace {

constexpr const char* kUsage =
    R"(usage: cgt <command> [options]

commands:
  synth       generate the synthetic benchmark into the working directory
  discover    estimate (or copy) the causal graph prior
  train       fit the per-target forecasting blocks
  score       compute per-sensor and aggregated anomaly scores
  threshold   run the streaming extreme-value threshold over the test scores
  attribute   rank root-cause sensors for the labeled events
  evaluate    detection/attribution metrics against the ground truth
  pipeline    all of the above (except synth), in order

options:
  --config FILE     key=value config file (defaults apply when omitted)
  --workdir DIR     working directory for artifacts   [run.workdir]
  --workers N       worker threads                    [run.workers]
  --seed S          master seed                       [run.seed]
  --graph FILE      use this edge list instead of discovery [graph.file]
  --q Q             tail probability                  [spot.q]
  --level L         initial-threshold quantile        [spot.level]
  --lambda-thr X    threshold multiplier              [spot.lambda_thr]
  --burn-frac F     burn-in fraction                  [spot.burn_frac]
  --burn-min N      burn-in floor                     [spot.burn_min]

Any config key can also be set via environment variables named
CGT_<SECTION>_<KEY>, e.g. CGT_SPOT_Q=0.002.  Precedence: defaults, then
config file, then environment, then flags.
)";

struct FlagSpec {
  const char* flag;
  const char* key;
};

constexpr FlagSpec kFlags[] = {
    {"--workdir", "run.workdir"},   {"--workers", "run.workers"},
    {"--seed", "run.seed"},         {"--graph", "graph.file"},
    {"--q", "spot.q"},              {"--level", "spot.level"},
    {"--lambda-thr", "spot.lambda_thr"}, {"--burn-frac", "spot.burn_frac"},
    {"--burn-min", "spot.burn_min"},
};

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty() || args[0] == "--help" || args[0] == "-h") {
    std::cout << kUsage;
    return args.empty() ? 2 : 0;
  }
  const std::string command = args[0];

  try {
    // Flags are collected first so --config is honored before them, keeping
    // the documented precedence regardless of argument order.
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> overrides;
    for (std::size_t i = 1; i < args.size(); ++i) {
      const std::string& arg = args[i];
      const FlagSpec* match = nullptr;
      for (const FlagSpec& f : kFlags) {
        if (arg == f.flag) match = &f;
      }
      if (arg == "--help" || arg == "-h") {
        std::cout << kUsage;
        return 0;
      }
      if (arg != "--config" && match == nullptr) {
        std::cerr << "cgt: unknown option '" << arg << "'\n" << kUsage;
        return 2;
      }
      if (i + 1 >= args.size()) {
        std::cerr << "cgt: option '" << arg << "' needs a value\n";
        return 2;
      }
      const std::string value = args[++i];
      if (arg == "--config") {
        config_file = value;
      } else {
        overrides.emplace_back(match->key, value);
      }
    }

    cgt::PipelineConfig cfg =
        config_file.empty() ? cgt::PipelineConfig{} : cgt::load_pipeline_config(config_file);
    cgt::apply_env_overrides(cfg);
    for (const auto& [key, value] : overrides) cgt::apply_config_kv(cfg, key, value);
    return cgt::run_command(command, std::move(cfg));
  } catch (const cgt::Error& e) {
    std::cerr << "cgt " << command << ": " << e.what() << "\n";
    return 1;
  }
}
