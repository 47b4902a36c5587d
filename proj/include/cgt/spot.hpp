#pragma once

#include "cgt/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cgt {

/// Result of a generalised Pareto tail fit over threshold exceedances.
struct GpdFit {
  double sigma = 0.0;
  double xi = 0.0;
  double log_lik = 0.0;
  /// True when there were too few peaks for a stable profile fit and the
  /// exponential special case (xi = 0, sigma = mean) was used instead.
  bool exponential_fallback = false;
  /// True when the profile optimum sits on the xi search boundary,
  /// suggesting the unconstrained optimum lies outside [-0.5, 1.0].
  bool at_boundary = false;
};

/// GPD log-likelihood of positive exceedances under (sigma, xi).
/// Returns -inf outside the valid region (sigma <= 0, or 1 + xi*y/sigma <= 0).
double gpd_log_lik(const std::vector<double>& peaks, double sigma, double xi);

/// Maximum-likelihood GPD fit via profile likelihood on xi: a 64-point grid
/// over [-0.5, 1.0] followed by ~20 golden-section refinement steps, with the
/// scale solved exactly from the stationarity condition at each xi. The
/// exponential special case xi = 0 is always evaluated as a candidate, so the
/// returned log-likelihood is never below it.
///
/// Fewer than 10 peaks fall back to the exponential fit; fewer than 2
/// distinct peak values raise ThresholdError.
GpdFit fit_gpd(const std::vector<double>& peaks);

/// Risk-q decision threshold for a fitted tail: n observations, n_u of them
/// exceeding u. Uses the exponential limit when |xi| < 1e-6.
double spot_threshold(double u, double sigma, double xi, double q, long long n, long long n_u);

struct SpotConfig {
  double q = 1.53e-3;
  double level = 0.98;
  double lambda_thr = 1.0;
  double burn_frac = 0.1;
  int burn_min = 500;

  void validate() const;
};

/// Streaming peaks-over-threshold state. Strictly sequential: one instance
/// per score stream, not shareable across threads mid-stream.
struct SpotState {
  double u = 0.0;             // initial threshold: `level` quantile of the init set
  std::vector<double> peaks;  // exceedances y = x - u > 0
  double sigma = 0.0;
  double xi = 0.0;
  long long n = 0;    // observations admitted to the tail model (candidates excluded)
  long long n_u = 0;  // peak count, == peaks.size()
  double z_q = 0.0;   // current decision threshold
  double q = 1.53e-3;
  double lambda_thr = 1.0;
  bool warned_boundary = false;
};

/// Fits the initial threshold and tail on a burn-in prefix of scores.
/// u is the ascending order statistic at rank ceil(level * n); peaks are the
/// strict exceedances. Warns below 100 points; raises ThresholdError when
/// nothing exceeds u (level too high for the init set).
SpotState spot_init(const std::vector<double>& init_scores, double q, double level);

struct SpotStep {
  double theta;        // z_q in force after processing this observation
  double theta_tilde;  // lambda_thr * theta
  bool candidate;      // score exceeded z_q; the tail was left untouched
};

/// Processes one observation: scores above z_q are flagged and excluded from
/// the tail model; scores in (u, z_q] become peaks and trigger a refit;
/// everything else only advances the observation count.
SpotStep spot_stream(SpotState& state, double score);

/// Threshold trace over the streamed (post-burn-in) region of a score series.
struct ThresholdTrace {
  std::int64_t first_t = 0;  // timestamp of the first streamed observation
  std::vector<double> theta;
  std::vector<double> theta_tilde;
  std::vector<int> decision_raw;  // 1{score > theta_tilde}, strict
};

/// Burn-in prefix length for a stream of length t: max(ceil(frac*t), min_len).
/// Callers must ensure the result leaves a non-empty streamed region.
inline std::int64_t burn_length(std::int64_t t, double frac, int min_len) {
  auto by_frac = static_cast<std::int64_t>(std::ceil(frac * static_cast<double>(t)));
  return std::max<std::int64_t>(by_frac, min_len);
}

/// Full SPOT pass: init on the burn-in prefix, then stream the remainder.
/// `first_t` is the timestamp of scores[0].
ThresholdTrace run_spot(const std::vector<double>& scores, const SpotConfig& cfg,
                        std::int64_t first_t = 0);

/// Inclusive [start, end] index ranges of the maximal runs of 1s in labels.
std::vector<std::pair<std::int64_t, std::int64_t>> segments_from_labels(
    const std::vector<int>& labels);

struct Decisions {
  std::vector<int> raw;
  std::vector<int> adjusted;
};

/// Raw decisions 1{score > threshold} plus point-adjusted decisions: a true
/// segment with at least one raw hit is marked anomalous end to end;
/// predictions outside every segment are left untouched. Without segments the
/// adjusted decisions equal the raw ones.
Decisions decide_and_adjust(const std::vector<double>& scores,
                            const std::vector<double>& thresholds,
                            const std::vector<std::pair<std::int64_t, std::int64_t>>& gt_segments = {});

/// CSV `t,theta,theta_tilde,decision_raw`.
void write_threshold_trace(const std::string& path, const ThresholdTrace& trace);

/// Inverse of write_threshold_trace; timestamps must be consecutive.
ThresholdTrace read_threshold_trace(const std::string& path);

}  // namespace cgt
