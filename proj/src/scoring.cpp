#include "cgt/scoring.hpp"

#include "cgt/io.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace cgt {

AggregateRule parse_aggregate_rule(const std::string& name) {
  if (name == "mean") return AggregateRule::Mean;
  if (name == "max") return AggregateRule::Max;
  if (name == "topk") return AggregateRule::TopK;
  throw ConfigError("unknown aggregation rule: " + name);
}

std::string aggregate_rule_name(AggregateRule rule) {
  switch (rule) {
    case AggregateRule::Mean: return "mean";
    case AggregateRule::Max: return "max";
    case AggregateRule::TopK: return "topk";
  }
  throw ConfigError("unreachable aggregation rule");
}

std::pair<double, double> score_one(const BlockParams& block, const Mat& X,
                                    const ParentMask& mask, double y, int S,
                                    std::uint64_t seed) {
  Rng rng(seed);
  const InferOutputs out = forward_infer(block, X, mask, S, rng);
  double sc = 0.0, so = 0.0;
  for (const auto& s : out.samples) {
    sc += ad::gaussian_nll_value(y, s.causal.mu, s.causal.log_v);
    so += ad::gaussian_nll_value(y, s.aux.mu, s.aux.log_v);
  }
  return {sc / S, so / S};
}

ScoreSeries score_stream(const std::vector<BlockParams>& blocks, const SeriesFrame& frame,
                         const std::vector<ParentMask>& masks, int S, std::uint64_t seed,
                         int first_t, int workers) {
  if (blocks.empty()) throw Error("score_stream: no blocks");
  const auto& cfg = blocks.front().cfg;
  const int D = cfg.dims;
  if (static_cast<int>(blocks.size()) != D || frame.dims() != D ||
      static_cast<int>(masks.size()) != D)
    throw Error("score_stream: blocks, masks, and frame disagree on D");
  const int start = first_valid_timestamp(cfg.window, cfg.tau_max);
  const int T = frame.length();
  if (T < start + 1)
    throw Error("score_stream: series shorter than W + tau_max + 1 (" + std::to_string(T) +
                " < " + std::to_string(start + 1) + ")");
  if (S < 1) throw Error("score_stream: S must be >= 1");

  ScoreSeries out;
  const int n = T - start;
  out.timestamps.resize(n);
  out.causal.resize(n, D);
  out.aux.resize(n, D);
  for (int r = 0; r < n; ++r) out.timestamps[r] = first_t + start + r;

  // The lag matrix at each t is shared across targets; precompute once.
  std::vector<Mat> inputs(n);
  for (int r = 0; r < n; ++r) inputs[r] = build_lag_matrix(frame, start + r, cfg.window, cfg.tau_max).X;

  const auto score_target = [&](int i) {
    for (int r = 0; r < n; ++r) {
      const double y = frame.values(start + r, i);
      const auto [sc, so] =
          score_one(blocks[i], inputs[r], masks[i], y, S, score_seed(seed, i, out.timestamps[r]));
      out.causal(r, i) = sc;
      out.aux(r, i) = so;
    }
  };

  if (workers <= 1) {
    for (int i = 0; i < D; ++i) score_target(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    const int n_threads = std::min(workers, D);
    for (int w = 0; w < n_threads; ++w)
      pool.emplace_back([&] {
        for (int i = next.fetch_add(1); i < D; i = next.fetch_add(1)) score_target(i);
      });
    for (auto& th : pool) th.join();
  }
  return out;
}

Mat blend(const ScoreSeries& series, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw Error("blend: gamma must lie in [0, 1]");
  return (1.0 - gamma) * series.causal + gamma * series.aux;
}

Vec aggregate(const Mat& blended, AggregateRule rule, int k) {
  const int n = static_cast<int>(blended.rows());
  const int D = static_cast<int>(blended.cols());
  if (rule == AggregateRule::TopK && (k < 1 || k > D))
    throw Error("aggregate: top-k requires 1 <= k <= D");
  Vec out(n);
  std::vector<double> row(D);
  for (int r = 0; r < n; ++r) {
    switch (rule) {
      case AggregateRule::Mean:
        out[r] = blended.row(r).mean();
        break;
      case AggregateRule::Max:
        out[r] = blended.row(r).maxCoeff();
        break;
      case AggregateRule::TopK: {
        for (int c = 0; c < D; ++c) row[c] = blended(r, c);
        std::partial_sort(row.begin(), row.begin() + k, row.end(), std::greater<>());
        double acc = 0.0;
        for (int c = 0; c < k; ++c) acc += row[c];
        out[r] = acc / k;
        break;
      }
    }
  }
  return out;
}

void write_scores(const std::string& path, const ScoreSeries& series, const Vec& aggregated) {
  const int n = series.length();
  const int D = series.dims();
  if (static_cast<int>(aggregated.size()) != n)
    throw Error("write_scores: aggregated length mismatch");
  std::vector<std::string> header = {"t", "S_t"};
  for (int i = 0; i < D; ++i) header.push_back("s_c_" + std::to_string(i));
  for (int i = 0; i < D; ++i) header.push_back("s_o_" + std::to_string(i));
  std::vector<std::vector<double>> rows(n);
  for (int r = 0; r < n; ++r) {
    auto& row = rows[r];
    row.reserve(2 + 2 * D);
    row.push_back(series.timestamps[r]);
    row.push_back(aggregated[r]);
    for (int i = 0; i < D; ++i) row.push_back(series.causal(r, i));
    for (int i = 0; i < D; ++i) row.push_back(series.aux(r, i));
  }
  write_csv(path, header, rows);
}

std::pair<ScoreSeries, Vec> read_scores(const std::string& path) {
  std::vector<std::string> header;
  const auto rows = read_numeric_csv(path, /*has_header=*/true, &header);
  if (header.size() < 4 || (header.size() - 2) % 2 != 0 || header[0] != "t" || header[1] != "S_t")
    throw IngestError("score file must have columns t,S_t,s_c_*,s_o_*: " + path);
  const int D = static_cast<int>(header.size() - 2) / 2;
  const int n = static_cast<int>(rows.size());
  if (n == 0) throw IngestError("score file has no rows: " + path);
  ScoreSeries series;
  series.timestamps.resize(n);
  series.causal.resize(n, D);
  series.aux.resize(n, D);
  Vec aggregated(n);
  for (int r = 0; r < n; ++r) {
    const auto& row = rows[r];
    if (static_cast<int>(row.size()) != 2 + 2 * D)
      throw IngestError("score row has the wrong column count: " + path);
    series.timestamps[r] = static_cast<int>(row[0]);
    if (r > 0 && series.timestamps[r] != series.timestamps[r - 1] + 1)
      throw IngestError("score timestamps must be consecutive: " + path);
    aggregated[r] = row[1];
    for (int i = 0; i < D; ++i) series.causal(r, i) = row[2 + i];
    for (int i = 0; i < D; ++i) series.aux(r, i) = row[2 + D + i];
  }
  return {std::move(series), std::move(aggregated)};
}

}  // namespace cgt
