#pragma once

#include "cgt/common.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace cgt {

struct DetectionReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auroc = 0.0;  // filled separately; confusion metrics do not need scores
  long long tp = 0, fp = 0, tn = 0, fn = 0;
  bool point_adjusted = false;
  /// Labels contained no positives, so recall is undefined and reported as 0.
  bool no_positive_labels = false;
};

/// Confusion-matrix metrics over 0/1 decisions. Undefined ratios (empty
/// prediction or label sets) are reported as 0 rather than raised.
DetectionReport detection_metrics(const std::vector<int>& predictions,
                                  const std::vector<int>& labels, bool point_adjusted);

/// Rank-based AUROC with midrank tie handling, equal to the probability that
/// a random positive outscores a random negative (ties count half).
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

/// One anomalous event: sensors ranked most-causal-first plus the true causes.
struct EventAttribution {
  std::vector<int> ranking;
  std::vector<int> gt_causes;
};

struct AttributionReport {
  std::map<int, double> hitrate;  // P% -> macro-average over events
  std::map<int, double> ndcg;
  struct EventDetail {
    int event = 0;
    std::map<int, double> hitrate;
    std::map<int, double> ndcg;
  };
  std::vector<EventDetail> events;
  int skipped_empty_gt = 0;
};

/// HitRate@P% and NDCG@P% per event, macro-averaged. The cut depth is
/// k = ceil(P/100 * |GT|) capped at dims; NDCG uses binary gains, log2
/// discounts, and the ideal DCG at |GT|. Events with empty ground truth are
/// excluded with a warning.
AttributionReport attribution_metrics(const std::vector<EventAttribution>& events, int dims,
                                      const std::vector<int>& percentages = {100, 150});

/// key=value report of detection (and optionally attribution) metrics.
void write_metrics_report(const std::string& path, const DetectionReport& detection,
                          const AttributionReport* attribution = nullptr);

/// Same report with one named attribution section per method; keys become
/// `<name>.hitrate.P` etc. (an empty name drops the prefix).
void write_metrics_report(
    const std::string& path, const DetectionReport& detection,
    const std::vector<std::pair<std::string, AttributionReport>>& attributions);

}  // namespace cgt
