#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace cgt {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using RowVec = Eigen::RowVectorXd;

/// Base class for all errors thrown by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct IngestError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct GraphError : Error {
  using Error::Error;
};
struct CheckpointError : Error {
  using Error::Error;
};
struct TrainError : Error {
  using Error::Error;
};
struct ThresholdError : Error {
  using Error::Error;
};
struct EvalError : Error {
  using Error::Error;
};

struct SynthError : Error {
  using Error::Error;
};

// Column layout of the lag design matrix: sensor-major, lags contiguous.
// Column (j, l) with l in [1, tau_max] lives at j * tau_max + (l - 1).
inline int lag_column(int sensor, int lag, int tau_max) {
  return sensor * tau_max + (lag - 1);
}
inline std::pair<int, int> lag_column_inverse(int col, int tau_max) {
  return {col / tau_max, col % tau_max + 1};
}

// Round to the nearest float32-representable value. Parameters are kept on
// this grid so checkpoints (stored as f32) round-trip bit-exactly.
inline double snap_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace cgt
