#pragma once

#include "cgt/model.hpp"
#include "cgt/safety.hpp"
#include "cgt/scoring.hpp"
#include "cgt/spot.hpp"
#include "cgt/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cgt {

/// Where the input series lives and how the contiguous stream is split.
/// Empty paths fall back to the benchmark files inside `run.workdir`, so
/// `synth` followed by `pipeline` works without any explicit wiring.
struct DataConfig {
  std::string series;
  bool has_header = true;
  std::string labels;
  std::string causes;
  int train_length = 4000;
  int val_length = 800;  // test split is the remainder
};

struct GraphConfig {
  double alpha_level = 0.01;
  int max_cond = 3;
  std::string file;  // externally supplied edge list; empty -> run discovery
};

/// How per-sensor scores are reduced to one stream score.
struct ScoreConfig {
  AggregateRule rule = AggregateRule::Mean;
  int topk = 1;
};

enum class AttributionSelect { ZScore, Clamp, Both };

AttributionSelect parse_attribution_select(const std::string& name);
std::string attribution_select_name(AttributionSelect sel);

struct AttributionConfig {
  AttributionSelect method = AttributionSelect::Both;
  double gate_threshold = 0.1;          // gate weight below which a sensor is negligible
  std::vector<int> percentages = {100, 150};  // HitRate/NDCG budgets, % of |GT|
};

struct RunConfig {
  std::string workdir = "out";
  int workers = 1;
  std::uint64_t seed = 1;
};

struct SynthConfig {
  std::uint64_t seed = 1;
};

/// Every knob of the pipeline in one place.  Defaults reproduce the reference
/// configuration (window 30, tau_max 7, d_model 64, 2 heads / 2 layers,
/// d_ff 128, d_z 8, 4 MC samples, batch 16, lr 3.90e-4, clip 0.823).
///
/// Values are layered in fixed precedence: built-in defaults, then the config
/// file, then `CGT_<SECTION>_<KEY>` environment variables, then command-line
/// flags.  Unknown keys are rejected outright.
struct PipelineConfig {
  DataConfig data;
  GraphConfig graph;
  ModelConfig model;  // dims is inferred from the series at run time
  TrainConfig train;
  ScoreConfig score;
  SafetyConfig safety;
  SpotConfig spot;
  AttributionConfig attribution;
  RunConfig run;
  SynthConfig synth;

  /// Propagates shared fields (seed, batch size, MC samples, aggregation
  /// rule) into the sub-configs that repeat them, then validates everything
  /// that does not depend on the channel count.  Idempotent.
  void finalize();

  std::string series_path() const;
  std::string labels_path() const;
  std::string causes_path() const;
};

/// Canonical schema, one `section.key` per entry, in file order.
const std::vector<std::string>& config_keys();

/// Sets one key; throws ConfigError on unknown keys or unparsable values.
void apply_config_kv(PipelineConfig& cfg, const std::string& key, const std::string& value);

/// Defaults overlaid with the file's entries.  The file uses `key=value`
/// lines with '#' comments; every key must be in the schema.
PipelineConfig load_pipeline_config(const std::string& path);

/// Applies `CGT_<SECTION>_<KEY>` variables (e.g. CGT_SPOT_Q) for every
/// schema key that is set in the environment.
void apply_env_overrides(PipelineConfig& cfg);

/// Writes the full effective configuration, one schema key per line.
/// Reloading the file reproduces the config exactly.
void save_pipeline_config(const PipelineConfig& cfg, const std::string& path);

}  // namespace cgt
