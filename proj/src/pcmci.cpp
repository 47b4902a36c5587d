#include "cgt/pcmci.hpp"

#include <Eigen/Cholesky>

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>

namespace cgt {

namespace {

// A lagged variable (sensor j at lag l); lag 0 is only used for the target.
struct LaggedVar {
  int sensor;
  int lag;
  bool operator==(const LaggedVar& o) const { return sensor == o.sensor && lag == o.lag; }
};

struct Candidate {
  LaggedVar var;
  double strength;  // min |partial corr| seen so far
  double p_value;
};

// Extracts the aligned sample column for (sensor, lag): entries x_{t-lag}^sensor
// for t in [t0, T).
Vec lagged_column(const SeriesFrame& frame, int sensor, int lag, int t0) {
  const int n = frame.length() - t0;
  Vec v(n);
  for (int k = 0; k < n; ++k) v[k] = frame.values(t0 + k - lag, sensor);
  return v;
}

Vec residualize(const Vec& y, const Mat& z) {
  if (z.cols() == 0) return y;
  // Normal equations are fine at these sizes; ldlt handles rank deficiency.
  Mat ztz = z.transpose() * z;
  Vec beta = ztz.ldlt().solve(z.transpose() * y);
  return y - z * beta;
}

}  // namespace

double partial_correlation(const Vec& a, const Vec& b, const Mat& z) {
  Vec ac = a.array() - a.mean();
  Vec bc = b.array() - b.mean();
  Mat zc = z;
  for (int c = 0; c < zc.cols(); ++c) zc.col(c).array() -= zc.col(c).mean();
  Vec ra = residualize(ac, zc);
  Vec rb = residualize(bc, zc);
  double na = ra.norm();
  double nb = rb.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  double rho = ra.dot(rb) / (na * nb);
  return std::clamp(rho, -1.0, 1.0);
}

double parcorr_p_value(double rho, int n, int n_cond) {
  int dof = n - n_cond - 2;
  if (dof < 1) return 1.0;
  double r2 = std::min(rho * rho, 1.0 - 1e-15);
  double t = std::abs(rho) * std::sqrt(dof / (1.0 - r2));
  boost::math::students_t_distribution<double> dist(dof);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, t));
}

CausalGraphPrior discover_pcmci_lite(const SeriesFrame& train, int tau_max, double alpha_level,
                                     int max_cond, DiscoveryDiagnostics* diag) {
  const int d = train.dims();
  const int t_len = train.length();
  if (tau_max < 1) throw GraphError("discover_pcmci_lite: tau_max must be >= 1");
  if (max_cond < 0) throw GraphError("discover_pcmci_lite: max_cond must be >= 0");

  CausalGraphPrior graph;
  graph.dims = d;
  graph.tau_max = tau_max;
  if (alpha_level <= 0.0) return graph;  // limit case: nothing can be significant

  // Phase 2 conditions on parents of the source shifted by the link lag, so
  // samples must support lags up to 2 * tau_max.
  const int t0 = 2 * tau_max;
  const int n = t_len - t0;
  if (n < 8) throw GraphError("discover_pcmci_lite: series too short for tau_max=" +
                              std::to_string(tau_max));
  if (diag && n < 10 * d * tau_max)
    diag->warnings.push_back("sample count " + std::to_string(n) +
                             " is small for D*tau_max=" + std::to_string(d * tau_max));

  std::vector<bool> degenerate(d, false);
  for (int j = 0; j < d; ++j) {
    if (train.values.col(j).maxCoeff() == train.values.col(j).minCoeff()) {
      degenerate[j] = true;
      if (diag) {
        diag->excluded_channels.push_back(j);
        diag->warnings.push_back("channel " + std::to_string(j) + " has zero variance; excluded");
      }
    }
  }

  auto column = [&](const LaggedVar& v) { return lagged_column(train, v.sensor, v.lag, t0); };

  auto cond_matrix = [&](const std::vector<LaggedVar>& zs) {
    Mat z(n, static_cast<int>(zs.size()));
    for (std::size_t c = 0; c < zs.size(); ++c) z.col(static_cast<int>(c)) = column(zs[c]);
    return z;
  };

  // Phase 1: per-target condition selection.
  std::vector<std::vector<Candidate>> selected(d);
  for (int i = 0; i < d; ++i) {
    if (degenerate[i]) continue;
    Vec y = lagged_column(train, i, 0, t0);
    std::vector<Candidate> cands;
    for (int j = 0; j < d; ++j) {
      if (degenerate[j]) continue;
      for (int l = 1; l <= tau_max; ++l)
        cands.push_back({{j, l}, std::numeric_limits<double>::infinity(), 1.0});
    }
    for (int q = 0; q <= max_cond; ++q) {
      if (q > static_cast<int>(cands.size()) - 1) break;
      // Ranking snapshot from the previous round drives this round's
      // conditioning sets; removals and re-sorting happen after the round.
      std::vector<Candidate> ranked = cands;
      std::vector<Candidate> kept;
      for (auto& c : cands) {
        std::vector<LaggedVar> z;
        for (const auto& r : ranked) {
          if (static_cast<int>(z.size()) >= q) break;
          if (r.var == c.var) continue;
          z.push_back(r.var);
        }
        double rho = partial_correlation(y, column(c.var), cond_matrix(z));
        double p = parcorr_p_value(rho, n, static_cast<int>(z.size()));
        if (std::abs(rho) < c.strength) {
          c.strength = std::abs(rho);
          c.p_value = p;
        }
        if (p <= alpha_level) kept.push_back(c);
      }
      cands = std::move(kept);
      std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
        if (a.strength != b.strength) return a.strength > b.strength;
        if (a.var.sensor != b.var.sensor) return a.var.sensor < b.var.sensor;
        return a.var.lag < b.var.lag;
      });
      if (cands.empty()) break;
    }
    selected[i] = cands;
  }

  // Phase 2: momentary conditional independence tests.
  for (int i = 0; i < d; ++i) {
    if (degenerate[i]) continue;
    Vec y = lagged_column(train, i, 0, t0);
    for (const auto& cand : selected[i]) {
      const int j = cand.var.sensor;
      const int l = cand.var.lag;
      std::vector<LaggedVar> z;
      int took = 0;
      for (const auto& p : selected[i]) {
        if (took >= max_cond) break;
        if (p.var == cand.var) continue;
        z.push_back(p.var);
        ++took;
      }
      took = 0;
      for (const auto& p : selected[j]) {
        if (took >= max_cond) break;
        LaggedVar shifted{p.var.sensor, p.var.lag + l};
        if (shifted == cand.var) continue;
        if (std::find(z.begin(), z.end(), shifted) == z.end()) z.push_back(shifted);
        ++took;
      }
      double rho = partial_correlation(y, column(cand.var), cond_matrix(z));
      double p = parcorr_p_value(rho, n, static_cast<int>(z.size()));
      if (p <= alpha_level) {
        LaggedEdge e;
        e.source = j;
        e.lag = l;
        e.target = i;
        e.strength = rho;
        e.p_value = p;
        graph.add_edge(e);
      }
    }
  }
  graph.validate();
  return graph;
}

}  // namespace cgt
