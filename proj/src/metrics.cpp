#include "cgt/metrics.hpp"

#include "cgt/io.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <set>

namespace cgt {

DetectionReport detection_metrics(const std::vector<int>& predictions,
                                  const std::vector<int>& labels, bool point_adjusted) {
  if (predictions.size() != labels.size())
    throw EvalError("detection_metrics: predictions and labels differ in length");
  DetectionReport rep;
  rep.point_adjusted = point_adjusted;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    bool p = predictions[t] != 0;
    bool y = labels[t] != 0;
    rep.tp += p && y;
    rep.fp += p && !y;
    rep.fn += !p && y;
    rep.tn += !p && !y;
  }
  rep.no_positive_labels = rep.tp + rep.fn == 0;
  if (rep.tp + rep.fp > 0) rep.precision = static_cast<double>(rep.tp) / (rep.tp + rep.fp);
  if (rep.tp + rep.fn > 0) rep.recall = static_cast<double>(rep.tp) / (rep.tp + rep.fn);
  if (rep.precision + rep.recall > 0.0)
    rep.f1 = 2.0 * rep.precision * rep.recall / (rep.precision + rep.recall);
  return rep;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw EvalError("auroc: scores and labels differ in length");
  long long n_pos = 0;
  for (int y : labels) n_pos += y != 0;
  const long long n = static_cast<long long>(labels.size());
  const long long n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0)
    throw EvalError("auroc: labels must contain both classes");

  std::vector<int> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int a, int b) { return scores[a] < scores[b]; });

  // Midranks: tied scores share the average of their 1-based rank range.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double midrank = 0.5 * static_cast<double>(i + 1 + j + 1);
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] != 0) rank_sum_pos += midrank;
    i = j + 1;
  }
  double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

namespace {

double ideal_dcg(int n_gt) {
  double s = 0.0;
  for (int i = 1; i <= n_gt; ++i) s += 1.0 / std::log2(static_cast<double>(i) + 1.0);
  return s;
}

}  // namespace

AttributionReport attribution_metrics(const std::vector<EventAttribution>& events, int dims,
                                      const std::vector<int>& percentages) {
  if (dims < 1) throw EvalError("attribution_metrics: dims must be positive");
  for (int p : percentages)
    if (p < 1) throw EvalError("attribution_metrics: percentages must be positive");

  AttributionReport rep;
  for (std::size_t e = 0; e < events.size(); ++e) {
    const auto& ev = events[e];
    if (ev.gt_causes.empty()) {
      std::cerr << "warning: event " << e << " has no ground-truth causes; excluded\n";
      ++rep.skipped_empty_gt;
      continue;
    }
    std::set<int> seen;
    for (int s : ev.ranking) {
      if (s < 0 || s >= dims)
        throw EvalError("attribution_metrics: ranked sensor out of range");
      if (!seen.insert(s).second)
        throw EvalError("attribution_metrics: duplicate sensor in ranking");
    }
    std::set<int> gt(ev.gt_causes.begin(), ev.gt_causes.end());
    for (int s : gt)
      if (s < 0 || s >= dims)
        throw EvalError("attribution_metrics: ground-truth sensor out of range");

    AttributionReport::EventDetail detail;
    detail.event = static_cast<int>(e);
    const auto n_gt = static_cast<int>(gt.size());
    const double idcg = ideal_dcg(n_gt);
    for (int p : percentages) {
      // ceil(p/100 * |GT|) in exact integer arithmetic, capped at dims.
      int k = std::min(dims, (p * n_gt + 99) / 100);
      int hits = 0;
      double dcg = 0.0;
      const int depth = std::min<int>(k, static_cast<int>(ev.ranking.size()));
      for (int r = 0; r < depth; ++r) {
        if (gt.count(ev.ranking[r])) {
          ++hits;
          dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
        }
      }
      detail.hitrate[p] = static_cast<double>(hits) / n_gt;
      detail.ndcg[p] = dcg / idcg;
    }
    rep.events.push_back(std::move(detail));
  }

  if (rep.events.empty())
    throw EvalError("attribution_metrics: no events with ground-truth causes");
  for (int p : percentages) {
    double h = 0.0, nd = 0.0;
    for (const auto& d : rep.events) {
      h += d.hitrate.at(p);
      nd += d.ndcg.at(p);
    }
    rep.hitrate[p] = h / static_cast<double>(rep.events.size());
    rep.ndcg[p] = nd / static_cast<double>(rep.events.size());
  }
  return rep;
}

namespace {

void put_attribution(KeyValueWriter& out, const std::string& prefix,
                     const AttributionReport& report) {
  for (const auto& [p, v] : report.hitrate) out.put(prefix + "hitrate." + std::to_string(p), v);
  for (const auto& [p, v] : report.ndcg) out.put(prefix + "ndcg." + std::to_string(p), v);
  out.put(prefix + "attribution_events", static_cast<long long>(report.events.size()));
  out.put(prefix + "attribution_skipped", report.skipped_empty_gt);
}

}  // namespace

void write_metrics_report(const std::string& path, const DetectionReport& detection,
                          const AttributionReport* attribution) {
  if (attribution) {
    write_metrics_report(path, detection, {{"", *attribution}});
  } else {
    write_metrics_report(path, detection, std::vector<std::pair<std::string, AttributionReport>>{});
  }
}

void write_metrics_report(
    const std::string& path, const DetectionReport& detection,
    const std::vector<std::pair<std::string, AttributionReport>>& attributions) {
  KeyValueWriter out(path);
  out.put("precision", detection.precision);
  out.put("recall", detection.recall);
  out.put("f1", detection.f1);
  out.put("auroc", detection.auroc);
  out.put("tp", detection.tp);
  out.put("fp", detection.fp);
  out.put("tn", detection.tn);
  out.put("fn", detection.fn);
  out.put("point_adjusted", detection.point_adjusted ? 1 : 0);
  out.put("no_positive_labels", detection.no_positive_labels ? 1 : 0);
  for (const auto& [name, report] : attributions)
    put_attribution(out, name.empty() ? name : name + ".", report);
}

}  // namespace cgt
