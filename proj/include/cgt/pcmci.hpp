#pragma once

#include "cgt/graph.hpp"
#include "cgt/series.hpp"

#include <string>
#include <vector>

namespace cgt {

struct DiscoveryDiagnostics {
  std::vector<int> excluded_channels;  // zero-variance channels
  std::vector<std::string> warnings;
};

/// Two-phase time-lagged discovery with linear partial-correlation tests.
/// Phase 1 iteratively prunes lagged candidates per target, conditioning on
/// the currently strongest survivors (up to max_cond). Phase 2 retests each
/// surviving link conditioned on the selected parents of the target
/// (excluding the link) plus the lag-shifted parents of the source.
/// P-values come from the t-statistic of the partial correlation.
/// Deterministic given (data, tau_max, alpha_level, max_cond).
CausalGraphPrior discover_pcmci_lite(const SeriesFrame& train, int tau_max, double alpha_level,
                                     int max_cond, DiscoveryDiagnostics* diag = nullptr);

/// Linear partial correlation of a and b given the columns of z
/// (residual-on-residual Pearson correlation, variables centered).
double partial_correlation(const Vec& a, const Vec& b, const Mat& z);

/// Two-sided p-value for a partial correlation with the given residual
/// degrees of freedom n - |z| - 2.
double parcorr_p_value(double rho, int n, int n_cond);

}  // namespace cgt
