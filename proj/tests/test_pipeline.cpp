#include "cgt/pipeline.hpp"

#include "cgt/attribution.hpp"
#include "cgt/io.hpp"
#include "cgt/metrics.hpp"
#include "cgt/synth.hpp"

#include <catch2/catch.hpp>

#include <filesystem>
#include <fstream>

using namespace cgt;

namespace {

namespace fs = std::filesystem;

/// Desk-sized bench: chain 0 -> 1 -> 2 over 1200 steps with two events in
/// the final 300-step test split.
void write_tiny_bench(const std::string& workdir) {
  ScmSpec spec;
  spec.dims = 3;
  spec.tau_max = 1;
  spec.length = 1200;
  spec.seed = 77;
  spec.noise_std = Vec::Ones(3);
  spec.edges = {{0, 1, 0, 0.6}, {0, 1, 1, 0.8}, {1, 1, 2, 0.8}};
  const ScmData data = generate_scm(spec);
  const std::vector<AnomalyEvent> events = {
      {1050, 10, 0, AnomalyType::Spike, 8.0},
      {1120, 10, 1, AnomalyType::LevelShift, 6.0},
  };
  const InjectResult injected = inject_anomalies(data, events, 8);
  write_synth_bench(workdir, data, injected);
}

PipelineConfig tiny_config(const std::string& workdir) {
  PipelineConfig cfg;
  cfg.run.workdir = workdir;
  cfg.run.workers = 2;
  cfg.run.seed = 5;
  cfg.data.train_length = 700;
  cfg.data.val_length = 200;
  cfg.model.window = 6;
  cfg.model.tau_max = 2;
  cfg.model.d_model = 8;
  cfg.model.n_heads = 2;
  cfg.model.n_layers = 1;
  cfg.model.d_ff = 16;
  cfg.model.d_z = 2;
  cfg.model.mc_samples = 1;
  cfg.train.epochs = 2;
  cfg.train.warmup_epochs = 1;
  cfg.spot.level = 0.9;
  cfg.spot.burn_min = 100;
  cfg.finalize();
  return cfg;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace

TEST_CASE("pipeline stages chain through their artifacts", "[pipeline][slow]") {
  const fs::path dir = fs::temp_directory_path() / "cgt_pipeline_run";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string wd = dir.string();
  write_tiny_bench(wd);
  const PipelineConfig cfg = tiny_config(wd);
  const Artifacts art(wd);

  SECTION("stages refuse to run ahead of their inputs") {
    CHECK_THROWS_WITH(run_train(cfg), Catch::Contains("discover"));
    CHECK_THROWS_WITH(run_score(cfg), Catch::Contains("train"));
    CHECK_THROWS_WITH(run_threshold(cfg), Catch::Contains("score"));
    CHECK_THROWS_WITH(run_evaluate(cfg), Catch::Contains("score"));
    CHECK_THROWS_WITH(run_attribute(cfg), Catch::Contains("score"));
  }

  SECTION("full run, artifact shapes, determinism, reports") {
    run_discover(cfg);
    REQUIRE(fs::exists(art.graph));
    const auto prior = load_edge_list(art.graph, 3, 2);
    CHECK(prior.graph.dims == 3);

    run_train(cfg);
    REQUIRE(fs::exists(art.scaler));
    REQUIRE(fs::exists(fs::path(art.checkpoint_dir) / "manifest"));
    REQUIRE(fs::exists(art.training_log));

    run_score(cfg);
    const auto [val_scores, val_agg] = read_scores(art.scores_val);
    CHECK(val_scores.timestamps.front() == 700);
    CHECK(val_scores.timestamps.back() == 899);
    const auto [test_scores, test_agg] = read_scores(art.scores_test);
    CHECK(test_scores.timestamps.front() == 900);
    CHECK(test_scores.timestamps.back() == 1199);
    CHECK(test_scores.dims() == 3);
    const double gamma =
        parse_kv_double(read_key_values(art.safety_kv), "gamma_used", "safety report");
    CHECK(gamma >= 0.0);
    CHECK(gamma <= 0.0206 + 1e-12);

    run_threshold(cfg);
    const ThresholdTrace trace = read_threshold_trace(art.thresholds);
    CHECK(trace.first_t == 1000);  // 900 + max(ceil(0.1*300), 100)
    CHECK(trace.theta.size() == 200);

    run_attribute(cfg);
    const auto rankings = read_attribution_report(art.attribution);
    REQUIRE(rankings.size() == 4);  // 2 events x {zscore, clamp}
    int n_zscore = 0;
    int n_clamp = 0;
    for (const auto& r : rankings) {
      CHECK(r.ranking.size() == 3);
      if (r.method == AttributionMethod::ZScore) ++n_zscore;
      if (r.method == AttributionMethod::Clamp) ++n_clamp;
      CHECK((r.start == 1050 || r.start == 1120));
    }
    CHECK(n_zscore == 2);
    CHECK(n_clamp == 2);

    run_evaluate(cfg);
    REQUIRE(fs::exists(art.metrics));
    REQUIRE(fs::exists(art.decisions));
    const auto metrics = read_key_values(art.metrics);
    for (const std::string key :
         {"precision", "recall", "f1", "auroc", "point_adjusted", "zscore.hitrate.100",
          "clamp.hitrate.100", "zscore.ndcg.150", "clamp.attribution_events"}) {
      INFO(key);
      CHECK(metrics.count(key) == 1);
    }
    CHECK(parse_kv_double(metrics, "point_adjusted", "metrics") == 1.0);
    const double hr = parse_kv_double(metrics, "zscore.hitrate.100", "metrics");
    CHECK(hr >= 0.0);
    CHECK(hr <= 1.0);

    // Re-running the post-training stages reproduces every artifact bitwise.
    const std::uint64_t h_scores = file_hash(art.scores_test);
    const std::uint64_t h_thresholds = file_hash(art.thresholds);
    const std::uint64_t h_attr = file_hash(art.attribution);
    const std::uint64_t h_metrics = file_hash(art.metrics);
    run_score(cfg);
    run_threshold(cfg);
    run_attribute(cfg);
    run_evaluate(cfg);
    CHECK(file_hash(art.scores_test) == h_scores);
    CHECK(file_hash(art.thresholds) == h_thresholds);
    CHECK(file_hash(art.attribution) == h_attr);
    CHECK(file_hash(art.metrics) == h_metrics);

    // Checkpoint round trip is loss-free: reloading and re-saving the
    // checkpoint leaves the scoring output untouched.
    const auto blocks = load_checkpoint(art.checkpoint_dir);
    save_checkpoint(blocks, art.checkpoint_dir);
    run_score(cfg);
    CHECK(file_hash(art.scores_test) == h_scores);
  }

  fs::remove_all(dir);
}

TEST_CASE("run_command dispatch and failure status", "[pipeline]") {
  const fs::path dir = fs::temp_directory_path() / "cgt_pipeline_cmd";
  fs::remove_all(dir);
  const std::string wd = dir.string();

  PipelineConfig cfg;
  cfg.run.workdir = wd;
  CHECK(run_command("bogus", cfg) != 0);

  // score in a fresh workdir: missing input series -> named failure status.
  CHECK(run_command("score", cfg) != 0);

  CHECK(run_command("synth", cfg) == 0);
  CHECK(fs::exists(dir / "series.csv"));
  CHECK(fs::exists(dir / "config_effective.txt"));

  // Invalid config surfaces as a failure status, not an exception.
  cfg.run.workers = -2;
  CHECK(run_command("synth", cfg) != 0);

  fs::remove_all(dir);
}

TEST_CASE("evaluate validates label alignment", "[pipeline][slow]") {
  const fs::path dir = fs::temp_directory_path() / "cgt_pipeline_labels";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string wd = dir.string();
  write_tiny_bench(wd);
  PipelineConfig cfg = tiny_config(wd);

  run_discover(cfg);
  run_train(cfg);
  run_score(cfg);
  run_threshold(cfg);

  SECTION("missing labels file") {
    cfg.data.labels = (dir / "nope.csv").string();
    CHECK_THROWS_AS(run_evaluate(cfg), EvalError);
  }

  SECTION("label length mismatch") {
    std::vector<std::vector<double>> rows;
    for (int t = 0; t < 600; ++t) rows.push_back({static_cast<double>(t), 0.0});
    const std::string bad = (dir / "short_labels.csv").string();
    write_csv(bad, {"t", "label"}, rows);
    cfg.data.labels = bad;
    CHECK_THROWS_AS(run_evaluate(cfg), IngestError);
  }

  fs::remove_all(dir);
}
