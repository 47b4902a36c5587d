#include "cgt/series.hpp"

#include "cgt/io.hpp"
#include "cgt/rng.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace cgt {

SeriesFrame SeriesFrame::slice(int begin, int end) const {
  if (begin < 0 || end > length() || begin >= end)
    throw Error("SeriesFrame::slice: bad range [" + std::to_string(begin) + ", " +
                std::to_string(end) + ") for length " + std::to_string(length()));
  SeriesFrame out;
  out.values = values.middleRows(begin, end - begin);
  out.channel_names = channel_names;
  out.sample_period = sample_period;
  return out;
}

namespace {

bool parse_double(const std::string& tok, double& out) {
  const char* b = tok.data();
  const char* e = b + tok.size();
  while (b < e && (*b == ' ' || *b == '\t')) ++b;
  while (e > b && (*(e - 1) == ' ' || *(e - 1) == '\t' || *(e - 1) == '\r')) --e;
  auto [ptr, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && ptr == e && b != e;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

SeriesFrame load_series(const std::string& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open series file: " + path);

  std::string line;
  std::vector<std::string> names;
  std::vector<std::vector<double>> rows;
  int cols = -1;
  int lineno = 0;
  bool header_pending = has_header;

  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto toks = split_csv_line(line);
    if (header_pending) {
      names.assign(toks.begin(), toks.end());
      cols = static_cast<int>(toks.size());
      header_pending = false;
      continue;
    }
    if (cols < 0) cols = static_cast<int>(toks.size());
    if (static_cast<int>(toks.size()) != cols)
      throw IngestError(path + ":" + std::to_string(lineno) + ": ragged row, expected " +
                        std::to_string(cols) + " columns, got " + std::to_string(toks.size()));
    std::vector<double> row(cols);
    for (int c = 0; c < cols; ++c) {
      double v;
      if (!parse_double(toks[c], v))
        throw IngestError(path + ":" + std::to_string(lineno) + ": column " +
                          std::to_string(c + 1) + ": cannot parse '" + toks[c] + "'");
      if (!std::isfinite(v))
        throw IngestError(path + ":" + std::to_string(lineno) + ": column " +
                          std::to_string(c + 1) + ": non-finite value '" + toks[c] + "'");
      row[c] = v;
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw IngestError(path + ": no data rows");

  SeriesFrame frame;
  frame.values.resize(static_cast<int>(rows.size()), cols);
  for (int r = 0; r < frame.length(); ++r)
    for (int c = 0; c < cols; ++c) frame.values(r, c) = rows[r][c];
  if (!names.empty()) {
    frame.channel_names = std::move(names);
  } else {
    frame.channel_names.resize(cols);
    for (int c = 0; c < cols; ++c) frame.channel_names[c] = "ch" + std::to_string(c);
  }
  return frame;
}

void save_series(const SeriesFrame& frame, const std::string& path, bool with_header) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write series file: " + path);
  if (with_header) {
    for (int c = 0; c < frame.dims(); ++c)
      out << (c ? "," : "") << frame.channel_names[c];
    out << "\n";
  }
  for (int r = 0; r < frame.length(); ++r) {
    for (int c = 0; c < frame.dims(); ++c)
      out << (c ? "," : "") << format_double(frame.values(r, c));
    out << "\n";
  }
}

ScalerParams fit_minmax(const SeriesFrame& train) {
  if (train.length() < 1) throw Error("fit_minmax: empty frame");
  ScalerParams p;
  p.min = train.values.colwise().minCoeff();
  p.max = train.values.colwise().maxCoeff();
  return p;
}

SeriesFrame apply_minmax(const SeriesFrame& frame, const ScalerParams& scaler) {
  if (frame.dims() != scaler.dims())
    throw Error("apply_minmax: frame has " + std::to_string(frame.dims()) +
                " channels, scaler has " + std::to_string(scaler.dims()));
  SeriesFrame out = frame;
  for (int c = 0; c < frame.dims(); ++c) {
    double denom = scaler.max[c] - scaler.min[c] + scaler.epsilon;
    out.values.col(c) = (frame.values.col(c).array() - scaler.min[c]) / denom;
  }
  return out;
}

SeriesFrame invert_minmax(const SeriesFrame& scaled, const ScalerParams& scaler) {
  if (scaled.dims() != scaler.dims()) throw Error("invert_minmax: dimension mismatch");
  SeriesFrame out = scaled;
  for (int c = 0; c < scaled.dims(); ++c) {
    double denom = scaler.max[c] - scaler.min[c] + scaler.epsilon;
    out.values.col(c) = scaled.values.col(c).array() * denom + scaler.min[c];
  }
  return out;
}

void save_scaler(const ScalerParams& scaler, const std::string& path) {
  KeyValueWriter w(path);
  for (int j = 0; j < scaler.dims(); ++j) w.put("min." + std::to_string(j), scaler.min[j]);
  for (int j = 0; j < scaler.dims(); ++j) w.put("max." + std::to_string(j), scaler.max[j]);
}

ScalerParams load_scaler(const std::string& path, double epsilon) {
  auto kv = read_key_values(path);
  int d = 0;
  while (kv.count("min." + std::to_string(d))) ++d;
  if (d == 0) throw IngestError(path + ": no min.<j> entries");
  ScalerParams p;
  p.epsilon = epsilon;
  p.min.resize(d);
  p.max.resize(d);
  for (int j = 0; j < d; ++j) {
    p.min[j] = parse_kv_double(kv, "min." + std::to_string(j), path);
    p.max[j] = parse_kv_double(kv, "max." + std::to_string(j), path);
  }
  return p;
}

LagDesignMatrix build_lag_matrix(const SeriesFrame& frame, int t, int window, int tau_max) {
  if (window < 1 || tau_max < 1) throw Error("build_lag_matrix: W and tau_max must be >= 1");
  if (t < first_valid_timestamp(window, tau_max))
    throw Error("build_lag_matrix: t=" + std::to_string(t) + " below validity bound " +
                std::to_string(first_valid_timestamp(window, tau_max)));
  if (t >= frame.length())
    throw Error("build_lag_matrix: t=" + std::to_string(t) + " beyond frame length " +
                std::to_string(frame.length()));
  const int d = frame.dims();
  LagDesignMatrix out;
  out.t = t;
  out.tau_max = tau_max;
  out.X.resize(window, d * tau_max);
  for (int j = 0; j < d; ++j)
    for (int l = 1; l <= tau_max; ++l) {
      int col = lag_column(j, l, tau_max);
      for (int r = 0; r < window; ++r) out.X(r, col) = frame.values(t - window - l + r, j);
    }
  return out;
}

TargetBatchStream::TargetBatchStream(const SeriesFrame& frame, int target, int window, int tau_max,
                                     int batch_size, std::optional<std::uint64_t> shuffle_seed)
    : frame_(frame), target_(target), window_(window), tau_max_(tau_max), batch_size_(batch_size) {
  if (target < 0 || target >= frame.dims())
    throw Error("TargetBatchStream: target " + std::to_string(target) + " out of range");
  if (batch_size < 1) throw Error("TargetBatchStream: batch_size must be >= 1");
  int t0 = first_valid_timestamp(window, tau_max);
  for (int t = t0; t < frame.length(); ++t) order_.push_back(t);
  if (order_.empty())
    throw Error("TargetBatchStream: no valid timestamps (T=" + std::to_string(frame.length()) +
                ", first valid t=" + std::to_string(t0) + ")");
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    rng.shuffle(order_);
  }
}

std::optional<TargetBatch> TargetBatchStream::next() {
  if (pos_ >= order_.size()) return std::nullopt;
  std::size_t n = std::min<std::size_t>(batch_size_, order_.size() - pos_);
  TargetBatch batch;
  batch.target = target_;
  batch.targets.resize(static_cast<int>(n));
  for (std::size_t k = 0; k < n; ++k) {
    int t = order_[pos_ + k];
    batch.inputs.push_back(build_lag_matrix(frame_, t, window_, tau_max_).X);
    batch.targets[static_cast<int>(k)] = frame_.values(t, target_);
    batch.timestamps.push_back(t);
  }
  pos_ += n;
  return batch;
}

void TargetBatchStream::reset() { pos_ = 0; }

}  // namespace cgt
