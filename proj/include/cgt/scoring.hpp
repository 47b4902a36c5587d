#pragma once

#include "cgt/model.hpp"
#include "cgt/series.hpp"

#include <string>
#include <utility>
#include <vector>

namespace cgt {

/// Per-target NLL scores over the valid timestamps of a frame.
struct ScoreSeries {
  std::vector<int> timestamps;  // absolute indices into the full stream
  Mat causal;                   // T' x D, mean causal NLL over S samples
  Mat aux;                      // T' x D, mean auxiliary NLL
  double gamma_used = 0.0;      // blend weight used downstream

  int length() const { return static_cast<int>(causal.rows()); }
  int dims() const { return static_cast<int>(causal.cols()); }
};

enum class AggregateRule { Mean, Max, TopK };

AggregateRule parse_aggregate_rule(const std::string& name);
std::string aggregate_rule_name(AggregateRule rule);

/// Substream seed for one (target, absolute timestamp) cell. Selective
/// recomputation (clamping) reuses it so untouched cells score bitwise
/// identically.
inline std::uint64_t score_seed(std::uint64_t base, int target, int t_abs) {
  return derive_seed(base, {static_cast<std::uint64_t>(target), static_cast<std::uint64_t>(t_abs)});
}

/// Mean causal/auxiliary NLL of y under S prior samples of one block.
std::pair<double, double> score_one(const BlockParams& block, const Mat& X,
                                    const ParentMask& mask, double y, int S,
                                    std::uint64_t seed);

/// Scores every valid timestamp of `frame` (already scaled) with every block.
/// `first_t` is the absolute index of frame row 0; emitted timestamps are
/// absolute. Parallel across targets when workers > 1; results do not depend
/// on the worker count.
ScoreSeries score_stream(const std::vector<BlockParams>& blocks, const SeriesFrame& frame,
                         const std::vector<ParentMask>& masks, int S, std::uint64_t seed,
                         int first_t = 0, int workers = 1);

/// (1-gamma) * causal + gamma * aux, entrywise.
Mat blend(const ScoreSeries& series, double gamma);

/// Rowwise reduction: mean, max, or mean of the k largest entries.
Vec aggregate(const Mat& blended, AggregateRule rule, int k = 1);

/// CSV `t,S_t,s_c_0..s_c_{D-1},s_o_0..s_o_{D-1}`.
void write_scores(const std::string& path, const ScoreSeries& series, const Vec& aggregated);

/// Inverse of write_scores. `gamma_used` is not part of the file; the caller
/// restores it from the safety report when it matters.
std::pair<ScoreSeries, Vec> read_scores(const std::string& path);

}  // namespace cgt
