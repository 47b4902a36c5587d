#pragma once

#include "cgt/common.hpp"

#include <optional>
#include <string>
#include <vector>

namespace cgt {

/// Multivariate series: rows are timestamps, columns are channels.
struct SeriesFrame {
  Mat values;  // T x D, all finite
  std::vector<std::string> channel_names;
  std::optional<double> sample_period;

  int length() const { return static_cast<int>(values.rows()); }
  int dims() const { return static_cast<int>(values.cols()); }

  /// Row-range view [begin, end) copied into a new frame.
  SeriesFrame slice(int begin, int end) const;
};

/// Per-channel Min-Max parameters fitted on the training split.
struct ScalerParams {
  Vec min;
  Vec max;
  double epsilon = 1e-8;

  int dims() const { return static_cast<int>(min.size()); }
};

/// W x P lagged design matrix for one timestamp (P = D * tau_max).
struct LagDesignMatrix {
  int t = 0;
  int tau_max = 0;
  Mat X;  // W x P

  int window() const { return static_cast<int>(X.rows()); }
  int columns() const { return static_cast<int>(X.cols()); }
};

/// Mini-batch routed to a single target's forecasting block.
struct TargetBatch {
  int target = 0;
  std::vector<Mat> inputs;  // each W x P
  Vec targets;              // B
  std::vector<int> timestamps;

  int size() const { return static_cast<int>(inputs.size()); }
};

SeriesFrame load_series(const std::string& path, bool has_header);
void save_series(const SeriesFrame& frame, const std::string& path, bool with_header);

ScalerParams fit_minmax(const SeriesFrame& train);
SeriesFrame apply_minmax(const SeriesFrame& frame, const ScalerParams& scaler);
SeriesFrame invert_minmax(const SeriesFrame& scaled, const ScalerParams& scaler);

void save_scaler(const ScalerParams& scaler, const std::string& path);
ScalerParams load_scaler(const std::string& path, double epsilon = 1e-8);

/// First timestamp with a complete history (see build_lag_matrix).
inline int first_valid_timestamp(int window, int tau_max) { return window + tau_max; }

/// Column (j, l) holds the scaled history [x_{t-W-l}^j .. x_{t-1-l}^j].
/// Valid only for t >= W + tau_max.
LagDesignMatrix build_lag_matrix(const SeriesFrame& frame, int t, int window, int tau_max);

/// Single-consumer stream of fixed-target batches covering every valid
/// timestamp exactly once per epoch. A seed gives a shuffled but
/// reproducible order; without one the order is chronological.
class TargetBatchStream {
 public:
  TargetBatchStream(const SeriesFrame& frame, int target, int window, int tau_max, int batch_size,
                    std::optional<std::uint64_t> shuffle_seed);

  std::optional<TargetBatch> next();
  void reset();
  int total_samples() const { return static_cast<int>(order_.size()); }

 private:
  const SeriesFrame& frame_;
  int target_;
  int window_;
  int tau_max_;
  int batch_size_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
};

}  // namespace cgt
