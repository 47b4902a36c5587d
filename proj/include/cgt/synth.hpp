#pragma once

#include "cgt/common.hpp"
#include "cgt/graph.hpp"
#include "cgt/series.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace cgt {

/// Structural coefficient: x[target] at time t receives weight * x[source] at
/// time t - lag.  Lags are strictly positive; contemporaneous effects are not
/// modelled.
struct ScmEdge {
  int source = 0;
  int lag = 1;
  int target = 0;
  double weight = 0.0;
};

/// Linear-Gaussian structural causal model over `dims` channels:
///
///   x_t[i] = sum over edges (j, l, i) of  w * x_{t-l}[j]  +  noise_std[i] * eps_t[i]
///
/// with eps iid standard normal.  The process is simulated from a zero initial
/// state and the first `burn_in` rows are discarded so the emitted frame is
/// approximately stationary.
struct ScmSpec {
  int dims = 5;
  int tau_max = 2;
  int length = 6000;
  int burn_in = 200;
  std::vector<ScmEdge> edges;
  Vec noise_std;  // per-channel innovation scale; all entries > 0
  std::uint64_t seed = 1;

  void validate() const;
  /// VAR companion matrix of size (dims * tau_max) square.
  Mat companion() const;
  /// Largest eigenvalue modulus of the companion matrix; < 1 iff stable.
  double spectral_radius() const;
};

/// Output of `generate_scm`.  The raw standard-normal draws (including the
/// burn-in rows) are kept so anomaly injection can re-simulate stretches of
/// the series under a modified mechanism but identical innovations.
struct ScmData {
  SeriesFrame frame;       // length x dims, timestamps 0..length-1
  CausalGraphPrior graph;  // ground-truth edges, strength = coefficient
  Mat noise;               // (burn_in + length) x dims standard normals
  ScmSpec spec;
};

/// Simulates the SCM.  Throws SynthError if the spec is invalid or the
/// companion spectral radius is >= 1 (the process would diverge).
ScmData generate_scm(const ScmSpec& spec);

enum class AnomalyType {
  Spike,           // alternating-sign impulses of height magnitude * channel std
  LevelShift,      // constant offset of magnitude * channel std
  MechanismBreak,  // root's incoming edges severed; window re-simulated
};

AnomalyType parse_anomaly_type(const std::string& name);
std::string anomaly_type_name(AnomalyType type);

/// One injected anomaly.  `magnitude` is expressed in units of the clean
/// channel's standard deviation (ignored by MechanismBreak).
struct AnomalyEvent {
  int start = 0;
  int length = 0;
  int root = 0;
  AnomalyType type = AnomalyType::Spike;
  double magnitude = 0.0;
};

struct InjectResult {
  SeriesFrame frame;                     // perturbed copy of the clean series
  std::vector<int> labels;               // 0/1 per timestamp, 1 inside events
  std::vector<std::vector<int>> causes;  // per event, ground-truth root set
};

/// Applies `events` to a clean simulation.  Events must be non-overlapping,
/// start at or after `min_start` (callers pass window + tau_max so every
/// anomalous timestamp has a full clean history), and end by the series end.
///
/// Spike and level-shift perturb only the root channel; a mechanism break
/// re-simulates the window with the root's structural inputs severed, so the
/// change propagates to descendants while channels outside the root's cone
/// reproduce the clean values exactly.
InjectResult inject_anomalies(const ScmData& data, const std::vector<AnomalyEvent>& events,
                              int min_start);

/// Desk-scale default benchmark: 5 channels, tau_max 2, 6000 steps, 9 edges
/// (mix of self-lags, cross-lag-1 and cross-lag-2 links, one negative weight).
ScmSpec default_scm_spec(std::uint64_t seed = 1);

/// Three length-20 events late in the series (spike on 0, level shift on 1,
/// spike on 2) so they fall inside a 1200-step test split after its burn-in.
std::vector<AnomalyEvent> default_events();

struct SynthPaths {
  std::string series;
  std::string graph;
  std::string labels;
  std::string causes;
};

SynthPaths synth_paths(const std::string& dir);

/// Writes the injected series, ground-truth edge list, label column, and
/// per-event cause sets into `dir` using the same formats the pipeline loads.
void write_synth_bench(const std::string& dir, const ScmData& clean, const InjectResult& injected);

/// Reads a `t,label` CSV (header required) and returns the label column.
/// Throws IngestError when timestamps are not 0..expected_length-1 in order.
std::vector<int> load_labels(const std::string& path, int expected_length);

struct CauseRecord {
  int event_id = 0;
  int start = 0;
  int end = 0;  // inclusive
  int sensor = 0;
};

/// Reads an `event_id,start,end,sensor` CSV (header required), one row per
/// (event, cause) pair, ordered by event id.
std::vector<CauseRecord> load_causes(const std::string& path);

}  // namespace cgt
