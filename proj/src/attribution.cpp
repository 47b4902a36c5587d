#include "cgt/attribution.hpp"

#include "cgt/io.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <thread>
#include <unordered_map>

namespace cgt {

std::string attribution_method_name(AttributionMethod m) {
  return m == AttributionMethod::ZScore ? "zscore" : "clamp";
}

namespace {

// Z row for one scored row index, against a fitted baseline.
RowVec zscore_row(const Mat& blended, const ZScoreBaseline& baseline, int row, double epsilon) {
  return ((blended.row(row).transpose() - baseline.mu).array() /
          (baseline.sigma.array() + epsilon))
      .matrix()
      .transpose();
}

std::vector<std::pair<int, double>> rank_descending(const RowVec& scores) {
  std::vector<std::pair<int, double>> out;
  out.reserve(scores.size());
  for (int i = 0; i < scores.size(); ++i) out.emplace_back(i, scores[i]);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  return out;
}

std::vector<std::pair<int, double>> rank_ascending(const RowVec& scores) {
  std::vector<std::pair<int, double>> out;
  out.reserve(scores.size());
  for (int i = 0; i < scores.size(); ++i) out.emplace_back(i, scores[i]);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second < b.second : a.first < b.first;
  });
  return out;
}

int find_row(const ScoreSeries& series, int t) {
  for (int r = 0; r < series.length(); ++r)
    if (series.timestamps[r] == t) return r;
  throw EvalError("time " + std::to_string(t) + " is outside the scored range");
}

std::vector<int> times_within(const ScoreSeries& series, int start, int end) {
  std::vector<int> times;
  for (int t : series.timestamps)
    if (t >= start && t <= end) times.push_back(t);
  if (times.empty())
    throw EvalError("event [" + std::to_string(start) + ".." + std::to_string(end) +
                    "] is outside the scored range");
  return times;
}

}  // namespace

ZScoreBaseline zscore_baseline(const ScoreSeries& series, double gamma_used, int begin_t,
                               int end_t) {
  const int D = series.dims();
  Mat blended = blend(series, gamma_used);
  ZScoreBaseline base;
  base.mu = Vec::Zero(D);
  for (int r = 0; r < series.length(); ++r) {
    if (series.timestamps[r] < begin_t || series.timestamps[r] >= end_t) continue;
    base.mu += blended.row(r).transpose();
    ++base.count;
  }
  if (base.count < 2)
    throw EvalError("zscore baseline needs at least 2 points in [" + std::to_string(begin_t) +
                    ", " + std::to_string(end_t) + "); found " + std::to_string(base.count));
  if (base.count < 30)
    std::cerr << "warning: zscore baseline has only " << base.count << " points\n";
  base.mu /= static_cast<double>(base.count);
  Vec ss = Vec::Zero(D);
  for (int r = 0; r < series.length(); ++r) {
    if (series.timestamps[r] < begin_t || series.timestamps[r] >= end_t) continue;
    ss += (blended.row(r).transpose() - base.mu).array().square().matrix();
  }
  base.sigma = (ss / static_cast<double>(base.count - 1)).array().sqrt().matrix();
  return base;
}

std::vector<AttributionResult> zscore_attribution(const ScoreSeries& series, double gamma_used,
                                                  const ZScoreBaseline& baseline,
                                                  const std::vector<int>& times,
                                                  double epsilon) {
  if (baseline.mu.size() != series.dims() || baseline.sigma.size() != series.dims())
    throw EvalError("zscore baseline dimensionality mismatch");
  Mat blended = blend(series, gamma_used);
  std::vector<AttributionResult> out;
  out.reserve(times.size());
  for (int t : times) {
    AttributionResult res;
    res.t = t;
    res.method = AttributionMethod::ZScore;
    res.ranking = rank_descending(zscore_row(blended, baseline, find_row(series, t), epsilon));
    out.push_back(std::move(res));
  }
  return out;
}

std::vector<AttributionResult> zscore_attribution(const ScoreSeries& series, double gamma_used,
                                                  int baseline_begin, int baseline_end,
                                                  const std::vector<int>& times,
                                                  double epsilon) {
  int overlapping = 0;
  for (int t : times)
    if (t >= baseline_begin && t < baseline_end) ++overlapping;
  if (overlapping > 0)
    std::cerr << "warning: " << overlapping
              << " queried time(s) fall inside the zscore baseline span\n";
  ZScoreBaseline base = zscore_baseline(series, gamma_used, baseline_begin, baseline_end);
  return zscore_attribution(series, gamma_used, base, times, epsilon);
}

Vec scaled_medians(const SeriesFrame& raw_train, const ScalerParams& scaler) {
  if (raw_train.dims() != scaler.dims())
    throw EvalError("scaled_medians: frame and scaler disagree on channels");
  if (raw_train.length() < 1) throw EvalError("scaled_medians: empty training frame");
  const int D = raw_train.dims();
  const int T = raw_train.length();
  Vec medians(D);
  std::vector<double> column(T);
  for (int c = 0; c < D; ++c) {
    for (int r = 0; r < T; ++r) column[r] = raw_train.values(r, c);
    std::sort(column.begin(), column.end());
    double raw = T % 2 ? column[T / 2] : 0.5 * (column[T / 2 - 1] + column[T / 2]);
    medians[c] = (raw - scaler.min[c]) / (scaler.max[c] - scaler.min[c] + scaler.epsilon);
  }
  return medians;
}

ClampAttributor::ClampAttributor(const std::vector<BlockParams>& blocks,
                                 const std::vector<ParentMask>& masks,
                                 const SeriesFrame& scaled_frame, const ScoreSeries& original,
                                 Vec medians_scaled, ClampConfig cfg)
    : blocks_(blocks),
      masks_(masks),
      frame_(scaled_frame),
      original_(original),
      medians_(std::move(medians_scaled)),
      cfg_(cfg) {
  if (blocks_.empty()) throw EvalError("clamp attribution: no blocks");
  const auto& mc = blocks_.front().cfg;
  const int D = mc.dims;
  if (static_cast<int>(blocks_.size()) != D || static_cast<int>(masks_.size()) != D ||
      frame_.dims() != D || original_.dims() != D || medians_.size() != D)
    throw EvalError("clamp attribution: blocks, masks, frame, scores, and medians disagree on D");
  if (cfg_.mc_samples < 1) throw EvalError("clamp attribution: mc_samples must be >= 1");
  if (cfg_.topk < 1) throw EvalError("clamp attribution: topk must be >= 1");
  const int start = first_valid_timestamp(mc.window, mc.tau_max);
  if (original_.length() != frame_.length() - start ||
      (original_.length() > 0 && original_.timestamps.front() != cfg_.first_t + start))
    throw EvalError("clamp attribution: score series does not cover the frame at first_t");
  blended_ = blend(original_, cfg_.gamma_used);
  aggregated_ = aggregate(blended_, cfg_.rule, cfg_.topk);
}

std::vector<int> ClampAttributor::affected_blocks(int sensor) const {
  const auto& mc = blocks_.front().cfg;
  if (sensor < 0 || sensor >= mc.dims)
    throw EvalError("clamp attribution: sensor " + std::to_string(sensor) + " out of range");
  std::vector<int> affected;
  for (int i = 0; i < mc.dims; ++i) {
    const RowVec alpha = blocks_[i].gate_alpha();
    bool hit = false;
    for (int l = 1; l <= mc.tau_max && !hit; ++l) {
      const int col = lag_column(sensor, l, mc.tau_max);
      hit = masks_[i].pi[col] == 1.0 || alpha[col] > cfg_.gate_threshold;
    }
    if (hit) affected.push_back(i);
  }
  return affected;
}

int ClampAttributor::row_of(int t) const { return find_row(original_, t); }

std::vector<int> ClampAttributor::scored_times(int start, int end) const {
  return times_within(original_, start, end);
}

Vec ClampAttributor::delta(int sensor, const std::vector<int>& times) const {
  const std::vector<int> affected = affected_blocks(sensor);
  Vec out = Vec::Zero(static_cast<int>(times.size()));
  // No influence path: nothing is recomputed, so the delta is exactly zero.
  if (affected.empty()) return out;

  const auto& mc = blocks_.front().cfg;
  SeriesFrame clamped = frame_;
  clamped.values.col(sensor).setConstant(medians_[sensor]);

  for (std::size_t k = 0; k < times.size(); ++k) {
    const int t = times[k];
    const int row = row_of(t);
    const int t_local = t - cfg_.first_t;
    const Mat X = build_lag_matrix(clamped, t_local, mc.window, mc.tau_max).X;
    Mat blended_row = blended_.row(row);
    for (int i : affected) {
      const double y = frame_.values(t_local, i);
      const auto [sc, so] = score_one(blocks_[i], X, masks_[i], y, cfg_.mc_samples,
                                      score_seed(cfg_.seed, i, t));
      blended_row(0, i) = (1.0 - cfg_.gamma_used) * sc + cfg_.gamma_used * so;
    }
    out[static_cast<int>(k)] = aggregate(blended_row, cfg_.rule, cfg_.topk)[0] - aggregated_[row];
  }
  return out;
}

std::vector<EventRanking> rank_root_causes(const ScoreSeries& series, double gamma_used,
                                           const ZScoreBaseline& baseline,
                                           const std::vector<std::pair<int, int>>& events,
                                           double epsilon) {
  if (events.empty()) throw EvalError("rank_root_causes: no anomalous events");
  Mat blended = blend(series, gamma_used);
  std::vector<EventRanking> out;
  out.reserve(events.size());
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto [start, end] = events[e];
    const std::vector<int> times = times_within(series, start, end);
    RowVec mean_z = RowVec::Zero(series.dims());
    for (int t : times)
      mean_z += zscore_row(blended, baseline, find_row(series, t), epsilon);
    mean_z /= static_cast<double>(times.size());
    EventRanking r;
    r.event_id = static_cast<int>(e);
    r.start = start;
    r.end = end;
    r.ranking = rank_descending(mean_z);
    r.method = AttributionMethod::ZScore;
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<EventRanking> rank_root_causes(const ClampAttributor& attributor,
                                           const std::vector<std::pair<int, int>>& events,
                                           int workers) {
  if (events.empty()) throw EvalError("rank_root_causes: no anomalous events");
  const int D = attributor.dims();
  std::vector<EventRanking> out;
  out.reserve(events.size());
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto [start, end] = events[e];
    const std::vector<int> scored = attributor.scored_times(start, end);
    std::vector<double> mean_delta(D, 0.0);
    const auto run_sensor = [&](int s, const std::vector<int>& times) {
      Vec d = attributor.delta(s, times);
      mean_delta[s] = d.mean();
    };
    if (workers <= 1) {
      for (int s = 0; s < D; ++s) run_sensor(s, scored);
    } else {
      std::atomic<int> next{0};
      std::vector<std::thread> pool;
      const int n_threads = std::min(workers, D);
      pool.reserve(n_threads);
      for (int w = 0; w < n_threads; ++w) {
        pool.emplace_back([&] {
          for (int s = next.fetch_add(1); s < D; s = next.fetch_add(1)) run_sensor(s, scored);
        });
      }
      for (auto& th : pool) th.join();
    }
    RowVec deltas(D);
    for (int s = 0; s < D; ++s) deltas[s] = mean_delta[s];
    EventRanking r;
    r.event_id = static_cast<int>(e);
    r.start = start;
    r.end = end;
    r.ranking = rank_ascending(deltas);
    r.method = AttributionMethod::Clamp;
    out.push_back(std::move(r));
  }
  return out;
}

void write_attribution_report(const std::string& path,
                              const std::vector<EventRanking>& rankings) {
  std::ofstream out(path);
  if (!out) throw IngestError("cannot write file: " + path);
  out << "event_id,start,end,rank,sensor,score,method\n";
  for (const auto& r : rankings) {
    const std::string method = attribution_method_name(r.method);
    for (std::size_t k = 0; k < r.ranking.size(); ++k) {
      out << r.event_id << ',' << r.start << ',' << r.end << ',' << (k + 1) << ','
          << r.ranking[k].first << ',' << format_double(r.ranking[k].second) << ',' << method
          << "\n";
    }
  }
}

std::vector<EventRanking> read_attribution_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "event_id,start,end,rank,sensor,score,method")
    throw IngestError("attribution report must start with its column header: " + path);

  auto parse_method = [&](const std::string& name) {
    if (name == "zscore") return AttributionMethod::ZScore;
    if (name == "clamp") return AttributionMethod::Clamp;
    throw IngestError("unknown attribution method '" + name + "' in " + path);
  };

  std::vector<EventRanking> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      fields.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (fields.size() != 7) throw IngestError("attribution row has the wrong column count: " + path);
    EventRanking key;
    key.event_id = static_cast<int>(parse_double_strict(fields[0], "attribution event_id"));
    key.start = static_cast<int>(parse_double_strict(fields[1], "attribution start"));
    key.end = static_cast<int>(parse_double_strict(fields[2], "attribution end"));
    const int rank = static_cast<int>(parse_double_strict(fields[3], "attribution rank"));
    const int sensor = static_cast<int>(parse_double_strict(fields[4], "attribution sensor"));
    const double score = parse_double_strict(fields[5], "attribution score");
    key.method = parse_method(fields[6]);

    const bool fresh = out.empty() || out.back().event_id != key.event_id ||
                       out.back().method != key.method || out.back().start != key.start ||
                       out.back().end != key.end;
    if (fresh) {
      if (rank != 1) throw IngestError("attribution ranks must start at 1: " + path);
      out.push_back(std::move(key));
    } else if (rank != static_cast<int>(out.back().ranking.size()) + 1) {
      throw IngestError("attribution ranks must be contiguous: " + path);
    }
    out.back().ranking.emplace_back(sensor, score);
  }
  return out;
}

}  // namespace cgt
