#include <catch2/catch.hpp>

#include "cgt/metrics.hpp"

#include "cgt/io.hpp"
#include "cgt/rng.hpp"
#include "cgt/spot.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

using namespace cgt;

namespace {

// O(n^2) pair-count AUROC: P(score_pos > score_neg) + half credit for ties.
double auroc_pair_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  long long pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

// Position-indexed DCG: sums discounts at the positions where true causes
// appear, instead of scanning the ranked prefix.
double dcg_position_oracle(const std::vector<int>& ranking, const std::set<int>& gt, int k) {
  double dcg = 0.0;
  for (int g : gt) {
    auto it = std::find(ranking.begin(), ranking.end(), g);
    if (it == ranking.end()) continue;
    auto pos = static_cast<int>(it - ranking.begin());
    if (pos < k) dcg += 1.0 / std::log2(static_cast<double>(pos) + 2.0);
  }
  return dcg;
}

}  // namespace

TEST_CASE("confusion metrics cover the degenerate corners", "[metrics]") {
  SECTION("perfect predictions") {
    DetectionReport rep = detection_metrics({0, 1, 1, 0, 1}, {0, 1, 1, 0, 1}, false);
    CHECK(rep.precision == 1.0);
    CHECK(rep.recall == 1.0);
    CHECK(rep.f1 == 1.0);
    CHECK(rep.tp == 3);
    CHECK(rep.tn == 2);
    CHECK(rep.fp == 0);
    CHECK(rep.fn == 0);
    CHECK_FALSE(rep.no_positive_labels);
  }
  SECTION("all-negative predictions") {
    DetectionReport rep = detection_metrics({0, 0, 0, 0}, {0, 1, 1, 0}, false);
    CHECK(rep.precision == 0.0);
    CHECK(rep.recall == 0.0);
    CHECK(rep.f1 == 0.0);
  }
  SECTION("all-negative labels set the flag") {
    DetectionReport rep = detection_metrics({1, 0, 0, 0}, {0, 0, 0, 0}, false);
    CHECK(rep.no_positive_labels);
    CHECK(rep.recall == 0.0);
    CHECK(rep.precision == 0.0);
  }
  SECTION("length mismatch is rejected") {
    CHECK_THROWS_AS(detection_metrics({1, 0}, {1}, false), EvalError);
  }
}

TEST_CASE("point-adjust turns a single segment hit into full credit", "[metrics]") {
  std::vector<int> labels = {0, 1, 1, 0};
  std::vector<double> scores = {0.0, 1.0, 0.0, 0.0};
  std::vector<double> thresholds(4, 0.5);
  Decisions d = decide_and_adjust(scores, thresholds, segments_from_labels(labels));
  CHECK(d.raw == std::vector<int>{0, 1, 0, 0});
  CHECK(d.adjusted == std::vector<int>{0, 1, 1, 0});
  DetectionReport rep = detection_metrics(d.adjusted, labels, true);
  CHECK(rep.precision == 1.0);
  CHECK(rep.recall == 1.0);
  CHECK(rep.f1 == 1.0);
  CHECK(rep.point_adjusted);
}

TEST_CASE("point-adjust never lowers recall or f1 on random instances", "[metrics]") {
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng(derive_seed(81, {static_cast<std::uint64_t>(trial)}));
    const int T = 5 + static_cast<int>(rng.below(16));  // T <= 20
    std::vector<int> labels(T, 0);
    int start = static_cast<int>(rng.below(T));
    int len = 1 + static_cast<int>(rng.below(5));
    for (int t = start; t < std::min(T, start + len); ++t) labels[t] = 1;
    std::vector<double> scores(T);
    for (double& s : scores) s = rng.uniform(0.0, 1.0);
    std::vector<double> thresholds(T, 0.6);

    Decisions d = decide_and_adjust(scores, thresholds, segments_from_labels(labels));
    DetectionReport raw = detection_metrics(d.raw, labels, false);
    DetectionReport adj = detection_metrics(d.adjusted, labels, true);
    CHECK(adj.recall >= raw.recall);
    CHECK(adj.f1 >= raw.f1);
    // The f1 identity, re-derived from the reported precision/recall.
    double expect = raw.precision + raw.recall > 0.0
                        ? 2.0 * raw.precision * raw.recall / (raw.precision + raw.recall)
                        : 0.0;
    CHECK(raw.f1 == expect);
  }
}

TEST_CASE("auroc separates, ties, and matches pair counting", "[metrics]") {
  SECTION("perfect separation") {
    CHECK(auroc({0.1, 0.2, 0.9, 0.8}, {0, 0, 1, 1}) == 1.0);
    CHECK(auroc({0.9, 0.8, 0.1, 0.2}, {0, 0, 1, 1}) == 0.0);
  }
  SECTION("all-equal scores give exactly one half") {
    CHECK(auroc({3.0, 3.0, 3.0, 3.0}, {0, 1, 0, 1}) == 0.5);
  }
  SECTION("six-point case matches the pair-count oracle") {
    std::vector<double> s = {0.3, 0.7, 0.7, 0.1, 0.9, 0.3};
    std::vector<int> y = {0, 1, 0, 0, 1, 1};
    CHECK(auroc(s, y) == auroc_pair_oracle(s, y));
  }
  SECTION("random tied instances match the pair-count oracle exactly") {
    for (int trial = 0; trial < 50; ++trial) {
      Rng rng(derive_seed(82, {static_cast<std::uint64_t>(trial)}));
      const int T = 4 + static_cast<int>(rng.below(17));
      std::vector<double> s(T);
      std::vector<int> y(T);
      for (int t = 0; t < T; ++t) {
        s[t] = static_cast<double>(rng.below(6));  // heavy ties
        y[t] = static_cast<int>(rng.below(2));
      }
      y[0] = 0;
      y[1] = 1;  // both classes present
      CHECK(auroc(s, y) == auroc_pair_oracle(s, y));
    }
  }
  SECTION("invariant under strictly monotone transforms") {
    Rng rng(83);
    std::vector<double> s(30);
    std::vector<int> y(30);
    for (int t = 0; t < 30; ++t) {
      s[t] = rng.normal();
      y[t] = static_cast<int>(rng.below(2));
    }
    y[0] = 0;
    y[1] = 1;
    std::vector<double> mapped(30);
    for (int t = 0; t < 30; ++t) mapped[t] = std::exp(s[t]);
    CHECK(auroc(s, y) == auroc(mapped, y));
  }
  SECTION("single-class labels are rejected") {
    CHECK_THROWS_AS(auroc({0.1, 0.2}, {1, 1}), EvalError);
    CHECK_THROWS_AS(auroc({0.1, 0.2}, {0, 0}), EvalError);
  }
}

TEST_CASE("attribution metrics follow the ranked-cut definitions", "[metrics]") {
  SECTION("all true causes ranked first") {
    AttributionReport rep =
        attribution_metrics({{{2, 0, 1, 3, 4}, {2, 0}}}, 5);
    CHECK(rep.hitrate.at(100) == 1.0);
    CHECK(rep.hitrate.at(150) == 1.0);
    CHECK(rep.ndcg.at(100) == 1.0);
    CHECK(rep.ndcg.at(150) == 1.0);
  }
  SECTION("one of two causes in the top-2") {
    AttributionReport rep =
        attribution_metrics({{{2, 4, 0, 3, 1}, {2, 1}}}, 5, {100});
    CHECK(rep.hitrate.at(100) == 0.5);
  }
  SECTION("hand-computed three-cause case") {
    // GT {0,1,2}; ranking 3,0,4,1,2. k@100 = 3: hits {0} -> 1/3;
    // dcg = 1/log2(3); idcg = 1/log2(2)+1/log2(3)+1/log2(4).
    AttributionReport rep = attribution_metrics({{{3, 0, 4, 1, 2}, {0, 1, 2}}}, 5, {100, 150});
    double idcg = 1.0 / std::log2(2.0) + 1.0 / std::log2(3.0) + 1.0 / std::log2(4.0);
    CHECK(rep.hitrate.at(100) == Approx(1.0 / 3.0));
    CHECK(rep.ndcg.at(100) == Approx((1.0 / std::log2(3.0)) / idcg));
    // k@150 = ceil(4.5) = 5: all causes found -> hitrate 1.
    CHECK(rep.hitrate.at(150) == 1.0);
    double dcg150 = 1.0 / std::log2(3.0) + 1.0 / std::log2(5.0) + 1.0 / std::log2(6.0);
    CHECK(rep.ndcg.at(150) == Approx(dcg150 / idcg));
  }
  SECTION("random instances match the position oracle exactly") {
    for (int trial = 0; trial < 50; ++trial) {
      Rng rng(derive_seed(84, {static_cast<std::uint64_t>(trial)}));
      const int D = 2 + static_cast<int>(rng.below(4));  // D <= 5
      std::vector<int> ranking = rng.permutation(D);
      int n_gt = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(D)));
      std::vector<int> perm = rng.permutation(D);
      std::set<int> gt(perm.begin(), perm.begin() + n_gt);
      std::vector<int> gt_list(gt.begin(), gt.end());

      AttributionReport rep =
          attribution_metrics({{ranking, gt_list}}, D, {50, 100, 150, 200});
      double idcg = 0.0;
      for (int i = 1; i <= n_gt; ++i) idcg += 1.0 / std::log2(i + 1.0);
      double prev_h = -1.0, prev_n = -1.0;
      for (int p : {50, 100, 150, 200}) {
        int k = std::min(D, (p * n_gt + 99) / 100);
        int hits = 0;
        for (int r = 0; r < k; ++r) hits += gt.count(ranking[r]) ? 1 : 0;
        CHECK(rep.hitrate.at(p) == static_cast<double>(hits) / n_gt);
        CHECK(rep.ndcg.at(p) == dcg_position_oracle(ranking, gt, k) / idcg);
        CHECK(rep.hitrate.at(p) >= prev_h);
        CHECK(rep.ndcg.at(p) >= prev_n);
        prev_h = rep.hitrate.at(p);
        prev_n = rep.ndcg.at(p);
      }
    }
  }
  SECTION("macro-average over events, empty ground truth excluded") {
    std::vector<EventAttribution> events = {
        {{0, 1, 2}, {0}},   // hit at rank 1: hitrate 1
        {{0, 1, 2}, {2}},   // miss in top-1: hitrate 0
        {{0, 1, 2}, {}},    // excluded
    };
    AttributionReport rep = attribution_metrics(events, 3, {100});
    CHECK(rep.skipped_empty_gt == 1);
    REQUIRE(rep.events.size() == 2);
    CHECK(rep.hitrate.at(100) == 0.5);
    CHECK(rep.events[0].event == 0);
    CHECK(rep.events[1].event == 1);
  }
  SECTION("no usable events is an error") {
    CHECK_THROWS_AS(attribution_metrics({{{0, 1}, {}}}, 2), EvalError);
  }
  SECTION("invalid rankings are rejected") {
    CHECK_THROWS_AS(attribution_metrics({{{0, 0, 1}, {0}}}, 3), EvalError);
    CHECK_THROWS_AS(attribution_metrics({{{0, 5}, {0}}}, 3), EvalError);
    CHECK_THROWS_AS(attribution_metrics({{{0, 1}, {7}}}, 3), EvalError);
  }
}

TEST_CASE("metrics report round-trips through key=value", "[metrics]") {
  DetectionReport det = detection_metrics({0, 1, 1, 0}, {0, 1, 0, 0}, true);
  det.auroc = 0.875;
  AttributionReport attr = attribution_metrics({{{1, 0, 2}, {1, 2}}}, 3);
  auto path = std::filesystem::temp_directory_path() / "cgt_metrics_report.kv";
  write_metrics_report(path.string(), det, &attr);
  auto kv = read_key_values(path.string());
  CHECK(parse_kv_double(kv, "precision", "report") == det.precision);
  CHECK(parse_kv_double(kv, "recall", "report") == det.recall);
  CHECK(parse_kv_double(kv, "f1", "report") == det.f1);
  CHECK(parse_kv_double(kv, "auroc", "report") == 0.875);
  CHECK(parse_kv_double(kv, "tp", "report") == 1.0);
  CHECK(parse_kv_double(kv, "point_adjusted", "report") == 1.0);
  CHECK(parse_kv_double(kv, "hitrate.100", "report") == attr.hitrate.at(100));
  CHECK(parse_kv_double(kv, "ndcg.150", "report") == attr.ndcg.at(150));
  std::filesystem::remove(path);
}
