#pragma once

#include "cgt/scoring.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cgt {

// Both attribution methods are model-based: they quantify how the detector's
// likelihood responds to input replacement, not guaranteed physical
// interventions on the monitored system.

enum class AttributionMethod { ZScore, Clamp };

std::string attribution_method_name(AttributionMethod m);

/// Sensor ranking at a single timestamp, best candidate first.
struct AttributionResult {
  int t = 0;
  std::vector<std::pair<int, double>> ranking;  // (sensor, score)
  AttributionMethod method = AttributionMethod::ZScore;
};

/// Per-dimension location/scale of blended NLLs over a nominal span.
struct ZScoreBaseline {
  Vec mu;
  Vec sigma;  // sample standard deviation
  int count = 0;
};

/// Fits the baseline on rows of `series` with timestamp in [begin_t, end_t).
/// Needs at least 2 rows for a defined sigma; warns below 30.
ZScoreBaseline zscore_baseline(const ScoreSeries& series, double gamma_used, int begin_t,
                               int end_t);

/// Standardized blended NLL ranking at each queried time: Z_i = (A_i - mu_i)
/// / (sigma_i + epsilon) with A = (1-gamma) causal + gamma aux, ranked
/// descending (ties by sensor index).
std::vector<AttributionResult> zscore_attribution(const ScoreSeries& series, double gamma_used,
                                                  const ZScoreBaseline& baseline,
                                                  const std::vector<int>& times,
                                                  double epsilon = 1e-8);

/// Convenience form fitting the baseline from a timestamp span of the same
/// series; warns when a queried time falls inside the baseline span.
std::vector<AttributionResult> zscore_attribution(const ScoreSeries& series, double gamma_used,
                                                  int baseline_begin, int baseline_end,
                                                  const std::vector<int>& times,
                                                  double epsilon = 1e-8);

/// Per-channel medians of a raw training split, mapped through the scaler so
/// they can replace values of an already-scaled stream.
Vec scaled_medians(const SeriesFrame& raw_train, const ScalerParams& scaler);

struct ClampConfig {
  double gamma_used = 0.0;
  AggregateRule rule = AggregateRule::Mean;
  int topk = 1;
  int mc_samples = 4;
  std::uint64_t seed = 1;  // must match the seed that produced the original scores
  int first_t = 0;         // absolute timestamp of frame row 0
  double gate_threshold = 0.1;  // gates above this count as influence paths
};

/// Counterfactual clamping: replaces one sensor's lagged inputs with its
/// training median and measures the change of the aggregated score,
/// recomputing only the target blocks the sensor can influence (its causal
/// children and blocks with a non-negligible gate on it). Untouched blocks
/// reuse the original per-target scores, and recomputed cells use the same
/// per-(target, time) substream seeds, so a sensor with no influence paths
/// yields a delta of exactly zero.
class ClampAttributor {
 public:
  ClampAttributor(const std::vector<BlockParams>& blocks, const std::vector<ParentMask>& masks,
                  const SeriesFrame& scaled_frame, const ScoreSeries& original,
                  Vec medians_scaled, ClampConfig cfg);

  /// Targets whose causal parents or gates give `sensor` influence.
  std::vector<int> affected_blocks(int sensor) const;

  /// Delta_s(t) = S_clamp - S_orig at each queried absolute timestamp.
  /// More negative means clamping `sensor` explains more of the anomaly.
  Vec delta(int sensor, const std::vector<int>& times) const;

  /// Scored timestamps falling inside [start, end], inclusive.
  std::vector<int> scored_times(int start, int end) const;

  const ClampConfig& config() const { return cfg_; }
  int dims() const { return static_cast<int>(blocks_.size()); }

 private:
  int row_of(int t) const;

  const std::vector<BlockParams>& blocks_;
  const std::vector<ParentMask>& masks_;
  const SeriesFrame& frame_;
  const ScoreSeries& original_;
  Vec medians_;
  ClampConfig cfg_;
  Mat blended_;             // original blended per-dimension NLLs
  Vec aggregated_;          // original S_t per scored row
};

/// Contiguous anomalous segment with its ranked root-cause candidates.
struct EventRanking {
  int event_id = 0;
  int start = 0, end = 0;  // inclusive absolute timestamps
  std::vector<std::pair<int, double>> ranking;
  AttributionMethod method = AttributionMethod::ZScore;
};

/// Ranks sensors per event by the segment-mean Z score, descending.
std::vector<EventRanking> rank_root_causes(const ScoreSeries& series, double gamma_used,
                                           const ZScoreBaseline& baseline,
                                           const std::vector<std::pair<int, int>>& events,
                                           double epsilon = 1e-8);

/// Ranks sensors per event by the segment-mean clamp delta, ascending.
/// Deltas for distinct sensors are independent; `workers` > 1 computes them
/// in parallel with a deterministic merge.
std::vector<EventRanking> rank_root_causes(const ClampAttributor& attributor,
                                           const std::vector<std::pair<int, int>>& events,
                                           int workers = 1);

/// CSV `event_id,start,end,rank,sensor,score,method` (rank is 1-based).
void write_attribution_report(const std::string& path,
                              const std::vector<EventRanking>& rankings);

/// Inverse of write_attribution_report; rows of one (event, method) pair must
/// be contiguous with ranks running 1..n.
std::vector<EventRanking> read_attribution_report(const std::string& path);

}  // namespace cgt
