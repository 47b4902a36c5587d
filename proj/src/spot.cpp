#include "cgt/spot.hpp"

#include "cgt/io.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>
#include <set>

namespace cgt {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Profile scale for a fixed xi: the stationarity condition
//   N = (1 + xi) * sum_i y_i / (sigma + xi * y_i)
// has a unique root in sigma (the left side of g below is strictly
// decreasing), found by bracketing and bisection.
double profile_sigma(const std::vector<double>& peaks, double xi, double y_max, double mean) {
  if (xi == 0.0) return mean;
  const auto n = static_cast<double>(peaks.size());
  auto g = [&](double sigma) {
    double s = 0.0;
    for (double y : peaks) s += y / (sigma + xi * y);
    return (1.0 + xi) * s / n - 1.0;
  };
  double lo = xi < 0.0 ? -xi * y_max * (1.0 + 1e-12) + 1e-300 : 1e-12 * mean;
  double hi = std::max(2.0 * mean * (1.0 + std::abs(xi)), 2.0 * lo);
  while (g(hi) > 0.0) hi *= 2.0;
  for (int it = 0; it < 200 && (hi - lo) > 1e-14 * hi; ++it) {
    double mid = 0.5 * (lo + hi);
    (g(mid) > 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

double profile_log_lik(const std::vector<double>& peaks, double xi, double y_max, double mean,
                       double* sigma_out) {
  double sigma = profile_sigma(peaks, xi, y_max, mean);
  if (sigma_out) *sigma_out = sigma;
  return gpd_log_lik(peaks, sigma, xi);
}

}  // namespace

double gpd_log_lik(const std::vector<double>& peaks, double sigma, double xi) {
  if (sigma <= 0.0) return kNegInf;
  const auto n = static_cast<double>(peaks.size());
  if (xi == 0.0) {
    double s = 0.0;
    for (double y : peaks) s += y;
    return -n * std::log(sigma) - s / sigma;
  }
  double s = 0.0;
  for (double y : peaks) {
    double r = xi * y / sigma;
    if (r <= -1.0) return kNegInf;
    s += std::log1p(r);
  }
  return -n * std::log(sigma) - (1.0 + 1.0 / xi) * s;
}

GpdFit fit_gpd(const std::vector<double>& peaks) {
  std::set<double> distinct(peaks.begin(), peaks.end());
  if (distinct.size() < 2)
    throw ThresholdError("degenerate tail fit: fewer than 2 distinct peak values");
  for (double y : peaks)
    if (!(y > 0.0)) throw ThresholdError("peaks must be positive exceedances");

  double mean = 0.0;
  double y_max = 0.0;
  for (double y : peaks) {
    mean += y;
    y_max = std::max(y_max, y);
  }
  mean /= static_cast<double>(peaks.size());

  GpdFit exp_fit;
  exp_fit.sigma = mean;
  exp_fit.xi = 0.0;
  exp_fit.log_lik = gpd_log_lik(peaks, mean, 0.0);

  if (peaks.size() < 10) {
    exp_fit.exponential_fallback = true;
    return exp_fit;
  }

  // 64-point grid over the xi search range.
  constexpr double kXiLo = -0.5;
  constexpr double kXiHi = 1.0;
  constexpr int kGrid = 64;
  int best = 0;
  double best_ll = kNegInf;
  for (int i = 0; i < kGrid; ++i) {
    double xi = kXiLo + (kXiHi - kXiLo) * i / (kGrid - 1);
    double ll = profile_log_lik(peaks, xi, y_max, mean, nullptr);
    if (ll > best_ll) {
      best_ll = ll;
      best = i;
    }
  }

  // Golden-section refinement inside the bracketing grid cells.
  const double step = (kXiHi - kXiLo) / (kGrid - 1);
  double a = std::max(kXiLo, kXiLo + (best - 1) * step);
  double b = std::min(kXiHi, kXiLo + (best + 1) * step);
  constexpr double kInvPhi = 0.6180339887498949;
  double x1 = b - kInvPhi * (b - a);
  double x2 = a + kInvPhi * (b - a);
  double f1 = profile_log_lik(peaks, x1, y_max, mean, nullptr);
  double f2 = profile_log_lik(peaks, x2, y_max, mean, nullptr);
  for (int it = 0; it < 20; ++it) {
    if (f1 > f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - kInvPhi * (b - a);
      f1 = profile_log_lik(peaks, x1, y_max, mean, nullptr);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + kInvPhi * (b - a);
      f2 = profile_log_lik(peaks, x2, y_max, mean, nullptr);
    }
  }

  GpdFit fit;
  double xi_hat = f1 > f2 ? x1 : x2;
  fit.log_lik = profile_log_lik(peaks, xi_hat, y_max, mean, &fit.sigma);
  fit.xi = xi_hat;
  if (exp_fit.log_lik >= fit.log_lik) {
    exp_fit.at_boundary = false;
    return exp_fit;
  }
  fit.at_boundary = xi_hat < kXiLo + 1e-3 || xi_hat > kXiHi - 1e-3;
  return fit;
}

double spot_threshold(double u, double sigma, double xi, double q, long long n, long long n_u) {
  double ratio = q * static_cast<double>(n) / static_cast<double>(n_u);
  if (std::abs(xi) < 1e-6) return u - sigma * std::log(ratio);
  return u + sigma / xi * (std::pow(ratio, -xi) - 1.0);
}

void SpotConfig::validate() const {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("spot: q must be in (0, 1)");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("spot: level must be in (0, 1)");
  if (!(lambda_thr > 0.0)) throw ConfigError("spot: lambda_thr must be positive");
  if (!(burn_frac >= 0.0 && burn_frac <= 1.0))
    throw ConfigError("spot: burn_frac must be in [0, 1]");
  if (burn_min < 1) throw ConfigError("spot: burn_min must be at least 1");
}

SpotState spot_init(const std::vector<double>& init_scores, double q, double level) {
  if (!(q > 0.0 && q < 1.0)) throw ConfigError("spot: q must be in (0, 1)");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("spot: level must be in (0, 1)");
  const auto n = static_cast<long long>(init_scores.size());
  if (n < 2) throw ThresholdError("spot init set needs at least 2 points");
  if (n < 100)
    std::cerr << "warning: spot init set has only " << n << " points; fit may be unstable\n";

  std::vector<double> sorted(init_scores);
  std::sort(sorted.begin(), sorted.end());
  auto rank = static_cast<long long>(std::ceil(level * static_cast<double>(n)));
  rank = std::min(std::max<long long>(rank, 1), n);

  SpotState st;
  st.q = q;
  st.u = sorted[rank - 1];
  for (double x : init_scores)
    if (x > st.u) st.peaks.push_back(x - st.u);
  if (st.peaks.empty())
    throw ThresholdError("no exceedances above the initial threshold: level too high");

  GpdFit fit = fit_gpd(st.peaks);
  st.sigma = fit.sigma;
  st.xi = fit.xi;
  st.n = n;
  st.n_u = static_cast<long long>(st.peaks.size());
  st.z_q = spot_threshold(st.u, st.sigma, st.xi, q, st.n, st.n_u);
  if (fit.at_boundary) {
    std::cerr << "warning: gpd shape estimate clamped to the search boundary (xi = " << fit.xi
              << ")\n";
    st.warned_boundary = true;
  }
  return st;
}

SpotStep spot_stream(SpotState& state, double score) {
  SpotStep step;
  if (score > state.z_q) {
    // Candidate anomaly: excluded from the tail model entirely.
    step.candidate = true;
  } else if (score > state.u) {
    // The new peak enters the tail before the threshold update; the
    // observation count admits it afterwards.
    state.peaks.push_back(score - state.u);
    state.n_u = static_cast<long long>(state.peaks.size());
    GpdFit fit = fit_gpd(state.peaks);
    state.sigma = fit.sigma;
    state.xi = fit.xi;
    state.z_q = spot_threshold(state.u, state.sigma, state.xi, state.q, state.n, state.n_u);
    state.n += 1;
    step.candidate = false;
    if (fit.at_boundary && !state.warned_boundary) {
      std::cerr << "warning: gpd shape estimate clamped to the search boundary (xi = " << fit.xi
                << ")\n";
      state.warned_boundary = true;
    }
  } else {
    state.n += 1;
    step.candidate = false;
  }
  step.theta = state.z_q;
  step.theta_tilde = state.lambda_thr * state.z_q;
  return step;
}

ThresholdTrace run_spot(const std::vector<double>& scores, const SpotConfig& cfg,
                        std::int64_t first_t) {
  cfg.validate();
  const auto t_total = static_cast<std::int64_t>(scores.size());
  const std::int64_t burn = burn_length(t_total, cfg.burn_frac, cfg.burn_min);
  if (burn >= t_total)
    throw ThresholdError("score stream of length " + std::to_string(t_total) +
                         " is not longer than its burn-in prefix (" + std::to_string(burn) + ")");

  std::vector<double> init(scores.begin(), scores.begin() + burn);
  SpotState st = spot_init(init, cfg.q, cfg.level);
  st.lambda_thr = cfg.lambda_thr;

  ThresholdTrace trace;
  trace.first_t = first_t + burn;
  const auto streamed = static_cast<std::size_t>(t_total - burn);
  trace.theta.reserve(streamed);
  trace.theta_tilde.reserve(streamed);
  trace.decision_raw.reserve(streamed);
  for (std::int64_t t = burn; t < t_total; ++t) {
    SpotStep step = spot_stream(st, scores[t]);
    trace.theta.push_back(step.theta);
    trace.theta_tilde.push_back(step.theta_tilde);
    trace.decision_raw.push_back(scores[t] > step.theta_tilde ? 1 : 0);
  }
  return trace;
}

std::vector<std::pair<std::int64_t, std::int64_t>> segments_from_labels(
    const std::vector<int>& labels) {
  std::vector<std::pair<std::int64_t, std::int64_t>> segments;
  const auto n = static_cast<std::int64_t>(labels.size());
  for (std::int64_t t = 0; t < n; ++t) {
    if (!labels[t]) continue;
    std::int64_t start = t;
    while (t + 1 < n && labels[t + 1]) ++t;
    segments.emplace_back(start, t);
  }
  return segments;
}

Decisions decide_and_adjust(const std::vector<double>& scores,
                            const std::vector<double>& thresholds,
                            const std::vector<std::pair<std::int64_t, std::int64_t>>& gt_segments) {
  if (scores.size() != thresholds.size())
    throw ThresholdError("decide_and_adjust: scores and thresholds differ in length");
  const auto n = static_cast<std::int64_t>(scores.size());
  Decisions d;
  d.raw.resize(scores.size());
  for (std::int64_t t = 0; t < n; ++t) d.raw[t] = scores[t] > thresholds[t] ? 1 : 0;
  d.adjusted = d.raw;
  for (const auto& [start, end] : gt_segments) {
    std::int64_t lo = std::max<std::int64_t>(start, 0);
    std::int64_t hi = std::min<std::int64_t>(end, n - 1);
    bool hit = false;
    for (std::int64_t t = lo; t <= hi && !hit; ++t) hit = d.raw[t] == 1;
    if (hit)
      for (std::int64_t t = lo; t <= hi; ++t) d.adjusted[t] = 1;
  }
  return d;
}

void write_threshold_trace(const std::string& path, const ThresholdTrace& trace) {
  std::vector<std::vector<double>> rows(trace.theta.size());
  for (std::size_t i = 0; i < trace.theta.size(); ++i) {
    rows[i] = {static_cast<double>(trace.first_t + static_cast<std::int64_t>(i)), trace.theta[i],
               trace.theta_tilde[i], static_cast<double>(trace.decision_raw[i])};
  }
  write_csv(path, {"t", "theta", "theta_tilde", "decision_raw"}, rows);
}

ThresholdTrace read_threshold_trace(const std::string& path) {
  std::vector<std::string> header;
  const auto rows = read_numeric_csv(path, /*has_header=*/true, &header);
  const std::vector<std::string> expected = {"t", "theta", "theta_tilde", "decision_raw"};
  if (header != expected)
    throw IngestError("threshold trace must have columns t,theta,theta_tilde,decision_raw: " + path);
  if (rows.empty()) throw IngestError("threshold trace has no rows: " + path);
  ThresholdTrace trace;
  trace.first_t = static_cast<std::int64_t>(rows[0][0]);
  trace.theta.reserve(rows.size());
  trace.theta_tilde.reserve(rows.size());
  trace.decision_raw.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != 4) throw IngestError("threshold trace row has the wrong column count");
    if (static_cast<std::int64_t>(row[0]) != trace.first_t + static_cast<std::int64_t>(i))
      throw IngestError("threshold trace timestamps must be consecutive: " + path);
    if (row[3] != 0.0 && row[3] != 1.0)
      throw IngestError("threshold trace decisions must be 0 or 1: " + path);
    trace.theta.push_back(row[1]);
    trace.theta_tilde.push_back(row[2]);
    trace.decision_raw.push_back(static_cast<int>(row[3]));
  }
  return trace;
}

}  // namespace cgt
