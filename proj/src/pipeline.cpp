#include "cgt/pipeline.hpp"

#include "cgt/attribution.hpp"
#include "cgt/io.hpp"
#include "cgt/metrics.hpp"
#include "cgt/pcmci.hpp"
#include "cgt/synth.hpp"

#include <atomic>
#include <exception>
#include <filesystem>
#include <iostream>
#include <thread>
#include <utility>
#include <vector>

namespace cgt {

namespace {

namespace fs = std::filesystem;

int context_rows(const PipelineConfig& cfg) {
  return first_valid_timestamp(cfg.model.window, cfg.model.tau_max);
}

SeriesFrame load_input(const PipelineConfig& cfg) {
  const std::string path = cfg.series_path();
  if (!fs::exists(path))
    throw IngestError("missing input series " + path + "; run `synth` or set data.series");
  return load_series(path, cfg.data.has_header);
}

/// Split sanity against the actual stream length; finalize() cannot check
/// this because it never sees the data.
void check_split(const PipelineConfig& cfg, const SeriesFrame& frame) {
  const int ctx = context_rows(cfg);
  if (cfg.data.train_length <= ctx)
    throw ConfigError("data.train_length must exceed window + tau_max = " + std::to_string(ctx));
  if (cfg.data.train_length + cfg.data.val_length >= frame.length())
    throw ConfigError("train (" + std::to_string(cfg.data.train_length) + ") + val (" +
                      std::to_string(cfg.data.val_length) + ") splits leave no test data in a " +
                      std::to_string(frame.length()) + "-step series");
}

ModelConfig model_for(const PipelineConfig& cfg, const SeriesFrame& frame) {
  ModelConfig mcfg = cfg.model;
  mcfg.dims = frame.dims();
  mcfg.validate();
  return mcfg;
}

CausalGraphPrior load_prior(const Artifacts& art, int dims, int tau_max) {
  if (!fs::exists(art.graph))
    throw GraphError("missing graph artifact " + art.graph + "; run `discover` first");
  return load_edge_list(art.graph, dims, tau_max).graph;
}

std::vector<ParentMask> masks_for(const CausalGraphPrior& prior) {
  std::vector<ParentMask> masks;
  masks.reserve(prior.dims);
  for (int i = 0; i < prior.dims; ++i) masks.push_back(parent_mask(prior, i));
  return masks;
}

ScalerParams load_scaler_artifact(const Artifacts& art) {
  if (!fs::exists(art.scaler))
    throw IngestError("missing scaler artifact " + art.scaler + "; run `train` first");
  return load_scaler(art.scaler);
}

std::vector<BlockParams> load_checkpoint_artifact(const Artifacts& art, const ModelConfig& mcfg) {
  if (!fs::exists(fs::path(art.checkpoint_dir) / "manifest"))
    throw CheckpointError("missing checkpoint in " + art.checkpoint_dir + "; run `train` first");
  std::vector<BlockParams> blocks = load_checkpoint(art.checkpoint_dir);
  if (static_cast<int>(blocks.size()) != mcfg.dims)
    throw CheckpointError("checkpoint holds " + std::to_string(blocks.size()) +
                          " blocks but the series has " + std::to_string(mcfg.dims) + " channels");
  const ModelConfig& stored = blocks.front().cfg;
  const bool same_arch = stored.window == mcfg.window && stored.tau_max == mcfg.tau_max &&
                         stored.dims == mcfg.dims && stored.d_model == mcfg.d_model &&
                         stored.n_heads == mcfg.n_heads && stored.n_layers == mcfg.n_layers &&
                         stored.d_ff == mcfg.d_ff && stored.d_z == mcfg.d_z &&
                         stored.logvar_lo == mcfg.logvar_lo && stored.logvar_hi == mcfg.logvar_hi &&
                         stored.sinusoidal_position == mcfg.sinusoidal_position;
  if (!same_arch)
    throw ConfigError("checkpoint architecture disagrees with the configured model; retrain or fix the config");
  return blocks;
}

std::vector<double> to_std(const Vec& v) { return {v.data(), v.data() + v.size()}; }

double gamma_from_safety(const Artifacts& art) {
  if (!fs::exists(art.safety_kv))
    throw IngestError("missing safety report " + art.safety_kv + "; run `score` first");
  return parse_kv_double(read_key_values(art.safety_kv), "gamma_used", art.safety_kv);
}

/// Labeled segments (absolute, inclusive) that intersect the scored region.
std::vector<std::pair<int, int>> scored_events(const std::vector<int>& labels_all, int first_t,
                                               int last_t) {
  const std::vector<int> region(labels_all.begin() + first_t, labels_all.begin() + last_t + 1);
  std::vector<std::pair<int, int>> events;
  for (const auto& [s, e] : segments_from_labels(region))
    events.emplace_back(static_cast<int>(s) + first_t, static_cast<int>(e) + first_t);
  return events;
}

}  // namespace

void run_synth(const PipelineConfig& cfg) {
  fs::create_directories(cfg.run.workdir);
  const ScmSpec spec = default_scm_spec(cfg.synth.seed);
  const ScmData data = generate_scm(spec);
  const InjectResult injected =
      inject_anomalies(data, default_events(), context_rows(cfg));
  write_synth_bench(cfg.run.workdir, data, injected);
  const SynthPaths paths = synth_paths(cfg.run.workdir);
  std::cout << "synth: wrote " << paths.series << " (" << data.frame.length() << " x "
            << data.frame.dims() << "), " << paths.graph << " (" << data.graph.edges.size()
            << " edges), " << injected.causes.size() << " events\n";
}

void run_discover(const PipelineConfig& cfg) {
  const Artifacts art(cfg.run.workdir);
  const SeriesFrame frame = load_input(cfg);
  check_split(cfg, frame);
  CausalGraphPrior prior;
  if (!cfg.graph.file.empty()) {
    if (!fs::exists(cfg.graph.file))
      throw GraphError("graph.file points at a missing edge list: " + cfg.graph.file);
    const EdgeListLoadResult loaded =
        load_edge_list(cfg.graph.file, frame.dims(), cfg.model.tau_max);
    prior = loaded.graph;
    std::cout << "discover: using supplied prior " << cfg.graph.file << " ("
              << prior.edges.size() << " edges)\n";
  } else {
    DiscoveryDiagnostics diag;
    const SeriesFrame train = frame.slice(0, cfg.data.train_length);
    prior = discover_pcmci_lite(train, cfg.model.tau_max, cfg.graph.alpha_level,
                                cfg.graph.max_cond, &diag);
    for (const std::string& w : diag.warnings) std::cerr << "discover: " << w << "\n";
    std::cout << "discover: found " << prior.edges.size() << " edges at alpha "
              << cfg.graph.alpha_level << "\n";
  }
  fs::create_directories(cfg.run.workdir);
  save_edge_list(prior, art.graph);
}

void run_train(const PipelineConfig& cfg) {
  const Artifacts art(cfg.run.workdir);
  const SeriesFrame frame = load_input(cfg);
  check_split(cfg, frame);
  const ModelConfig mcfg = model_for(cfg, frame);
  const CausalGraphPrior prior = load_prior(art, mcfg.dims, mcfg.tau_max);
  const std::vector<ParentMask> masks = masks_for(prior);

  const SeriesFrame raw_train = frame.slice(0, cfg.data.train_length);
  const ScalerParams scaler = fit_minmax(raw_train);
  const SeriesFrame train = apply_minmax(raw_train, scaler);

  std::vector<BlockParams> blocks;
  blocks.reserve(mcfg.dims);
  for (int i = 0; i < mcfg.dims; ++i)
    blocks.push_back(init_block(mcfg, i, masks[i], derive_seed(cfg.run.seed, {0xb10cULL, static_cast<std::uint64_t>(i)})));

  std::vector<TrainResult> results(mcfg.dims);
  std::exception_ptr failure;
  std::atomic<int> next{0};
  const auto work = [&] {
    for (int i = next.fetch_add(1); i < mcfg.dims; i = next.fetch_add(1)) {
      try {
        results[i] = train_block(blocks[i], train, masks[i], cfg.train);
      } catch (...) {
        failure = std::current_exception();
        return;
      }
    }
  };
  const int n_threads = std::min(cfg.run.workers, mcfg.dims);
  if (n_threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int w = 0; w < n_threads; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  fs::create_directories(art.checkpoint_dir);
  save_scaler(scaler, art.scaler);
  save_checkpoint(blocks, art.checkpoint_dir);
  std::vector<std::pair<int, TrainResult>> per_target;
  per_target.reserve(results.size());
  for (int i = 0; i < mcfg.dims; ++i) {
    per_target.emplace_back(i, results[i]);
    const auto& logs = results[i].epochs;
    std::cout << "train: target " << i << " final loss "
              << (logs.empty() ? 0.0 : logs.back().mean.total) << " over " << logs.size()
              << " epochs\n";
  }
  write_training_log(art.training_log, per_target);
}

void run_score(const PipelineConfig& cfg) {
  const Artifacts art(cfg.run.workdir);
  const SeriesFrame frame = load_input(cfg);
  check_split(cfg, frame);
  const ModelConfig mcfg = model_for(cfg, frame);
  const ScalerParams scaler = load_scaler_artifact(art);
  const std::vector<BlockParams> blocks = load_checkpoint_artifact(art, mcfg);
  const CausalGraphPrior prior = load_prior(art, mcfg.dims, mcfg.tau_max);
  const std::vector<ParentMask> masks = masks_for(prior);

  const SeriesFrame scaled = apply_minmax(frame, scaler);
  const int ctx = context_rows(cfg);
  const int val_first = cfg.data.train_length - ctx;
  const int test_first = cfg.data.train_length + cfg.data.val_length - ctx;
  const SeriesFrame val_slice = scaled.slice(val_first, cfg.data.train_length + cfg.data.val_length);
  const SeriesFrame test_slice = scaled.slice(test_first, frame.length());

  const SafetyDiagnostics diag =
      compute_safety(blocks, val_slice, masks, cfg.train.gamma, cfg.safety, val_first);
  const double gamma = diag.gamma_used;

  ScoreSeries val_scores = score_stream(blocks, val_slice, masks, mcfg.mc_samples, cfg.run.seed,
                                        val_first, cfg.run.workers);
  val_scores.gamma_used = gamma;
  write_scores(art.scores_val, val_scores,
               aggregate(blend(val_scores, gamma), cfg.score.rule, cfg.score.topk));

  ScoreSeries test_scores = score_stream(blocks, test_slice, masks, mcfg.mc_samples, cfg.run.seed,
                                         test_first, cfg.run.workers);
  test_scores.gamma_used = gamma;
  write_scores(art.scores_test, test_scores,
               aggregate(blend(test_scores, gamma), cfg.score.rule, cfg.score.topk));

  write_safety_report(art.safety_kv, art.safety_text, diag, cfg.safety);
  std::cout << "score: gamma_used " << gamma << (diag.triggered ? " (fallback triggered)" : "")
            << ", scored " << val_scores.length() << " val + " << test_scores.length()
            << " test points\n";
}

void run_threshold(const PipelineConfig& cfg) {
  const Artifacts art(cfg.run.workdir);
  if (!fs::exists(art.scores_test))
    throw IngestError("missing score artifact " + art.scores_test + "; run `score` first");
  const auto [series, aggregated] = read_scores(art.scores_test);
  const ThresholdTrace trace =
      run_spot(to_std(aggregated), cfg.spot, series.timestamps.front());
  write_threshold_trace(art.thresholds, trace);
  int flagged = 0;
  for (int d : trace.decision_raw) flagged += d;
  std::cout << "threshold: burn-in " << (trace.first_t - series.timestamps.front())
            << " points, " << flagged << " of " << trace.decision_raw.size()
            << " flagged raw\n";
}

void run_attribute(const PipelineConfig& cfg) {
  const Artifacts art(cfg.run.workdir);
  if (!fs::exists(art.scores_test))
    throw IngestError("missing score artifact " + art.scores_test + "; run `score` first");
  const auto [test_scores, test_agg] = read_scores(art.scores_test);
  const double gamma = gamma_from_safety(art);

  const SeriesFrame frame = load_input(cfg);
  check_split(cfg, frame);
  if (!fs::exists(cfg.labels_path()))
    throw EvalError("missing labels file " + cfg.labels_path() + "; attribution needs labeled events");
  const std::vector<int> labels_all = load_labels(cfg.labels_path(), frame.length());
  const std::vector<std::pair<int, int>> events =
      scored_events(labels_all, test_scores.timestamps.front(), test_scores.timestamps.back());

  std::vector<EventRanking> rankings;
  if (events.empty()) {
    std::cerr << "attribute: no labeled events in the scored test region; writing an empty report\n";
  } else {
    if (cfg.attribution.method != AttributionSelect::Clamp) {
      if (!fs::exists(art.scores_val))
        throw IngestError("missing score artifact " + art.scores_val + "; run `score` first");
      const auto [val_scores, val_agg] = read_scores(art.scores_val);
      const ZScoreBaseline baseline =
          zscore_baseline(val_scores, gamma, cfg.data.train_length,
                          cfg.data.train_length + cfg.data.val_length);
      for (EventRanking& r : rank_root_causes(test_scores, gamma, baseline, events))
        rankings.push_back(std::move(r));
    }
    if (cfg.attribution.method != AttributionSelect::ZScore) {
      const ModelConfig mcfg = model_for(cfg, frame);
      const ScalerParams scaler = load_scaler_artifact(art);
      const std::vector<BlockParams> blocks = load_checkpoint_artifact(art, mcfg);
      const CausalGraphPrior prior = load_prior(art, mcfg.dims, mcfg.tau_max);
      const std::vector<ParentMask> masks = masks_for(prior);
      const Vec medians = scaled_medians(frame.slice(0, cfg.data.train_length), scaler);
      const SeriesFrame scaled = apply_minmax(frame, scaler);
      const int test_first = cfg.data.train_length + cfg.data.val_length - context_rows(cfg);
      const SeriesFrame test_slice = scaled.slice(test_first, frame.length());
      ClampConfig ccfg;
      ccfg.gamma_used = gamma;
      ccfg.rule = cfg.score.rule;
      ccfg.topk = cfg.score.topk;
      ccfg.mc_samples = mcfg.mc_samples;
      ccfg.seed = cfg.run.seed;
      ccfg.first_t = test_first;
      ccfg.gate_threshold = cfg.attribution.gate_threshold;
      const ClampAttributor attributor(blocks, masks, test_slice, test_scores, medians, ccfg);
      for (EventRanking& r : rank_root_causes(attributor, events, cfg.run.workers))
        rankings.push_back(std::move(r));
    }
  }
  write_attribution_report(art.attribution, rankings);
  std::cout << "attribute: ranked " << events.size() << " events with "
            << attribution_select_name(cfg.attribution.method) << "\n";
}

void run_evaluate(const PipelineConfig& cfg) {
  const Artifacts art(cfg.run.workdir);
  if (!fs::exists(art.scores_test))
    throw IngestError("missing score artifact " + art.scores_test + "; run `score` first");
  const auto [test_scores, test_agg] = read_scores(art.scores_test);
  if (!fs::exists(art.thresholds))
    throw IngestError("missing threshold artifact " + art.thresholds + "; run `threshold` first");
  const ThresholdTrace trace = read_threshold_trace(art.thresholds);

  const SeriesFrame frame = load_input(cfg);
  if (!fs::exists(cfg.labels_path()))
    throw EvalError("missing labels file " + cfg.labels_path() + "; evaluation needs ground truth");
  const std::vector<int> labels_all = load_labels(cfg.labels_path(), frame.length());

  const int offset = static_cast<int>(trace.first_t) - test_scores.timestamps.front();
  const int n = static_cast<int>(trace.theta.size());
  if (offset < 0 || offset + n != test_scores.length())
    throw EvalError("threshold trace does not align with the scored test region");

  const std::vector<double> scores_region(test_agg.data() + offset, test_agg.data() + offset + n);
  const std::vector<int> labels_region(labels_all.begin() + trace.first_t,
                                       labels_all.begin() + trace.first_t + n);
  const auto segments = segments_from_labels(labels_region);
  const Decisions decisions = decide_and_adjust(scores_region, trace.theta_tilde, segments);
  {
    std::vector<std::vector<double>> rows(n);
    for (int i = 0; i < n; ++i)
      rows[i] = {static_cast<double>(trace.first_t + i), static_cast<double>(decisions.raw[i]),
                 static_cast<double>(decisions.adjusted[i])};
    write_csv(art.decisions, {"t", "raw", "adjusted"}, rows);
  }

  DetectionReport detection = detection_metrics(decisions.adjusted, labels_region, true);
  // AUROC is threshold-free, so it uses every scored test point, including
  // the burn-in prefix the streaming threshold cannot judge.
  std::vector<int> labels_scored(labels_all.begin() + test_scores.timestamps.front(),
                                 labels_all.begin() + test_scores.timestamps.back() + 1);
  try {
    detection.auroc = auroc(to_std(test_agg), labels_scored);
  } catch (const EvalError& e) {
    std::cerr << "evaluate: AUROC undefined (" << e.what() << ")\n";
  }

  std::vector<std::pair<std::string, AttributionReport>> attribution_sections;
  if (fs::exists(art.attribution) && fs::exists(cfg.causes_path())) {
    const std::vector<EventRanking> rankings = read_attribution_report(art.attribution);
    const std::vector<CauseRecord> causes = load_causes(cfg.causes_path());
    std::vector<std::pair<AttributionMethod, std::string>> methods = {
        {AttributionMethod::ZScore, "zscore"}, {AttributionMethod::Clamp, "clamp"}};
    for (const auto& [method, name] : methods) {
      std::vector<EventAttribution> events;
      for (const EventRanking& r : rankings) {
        if (r.method != method) continue;
        EventAttribution ev;
        for (const auto& [sensor, score] : r.ranking) ev.ranking.push_back(sensor);
        for (const CauseRecord& c : causes) {
          if (c.start <= r.start && r.end <= c.end) ev.gt_causes.push_back(c.sensor);
        }
        if (ev.gt_causes.empty())
          throw EvalError("no ground-truth causes cover event [" + std::to_string(r.start) + ", " +
                          std::to_string(r.end) + "]");
        events.push_back(std::move(ev));
      }
      if (!events.empty())
        attribution_sections.emplace_back(
            name, attribution_metrics(events, frame.dims(), cfg.attribution.percentages));
    }
  }

  write_metrics_report(art.metrics, detection, attribution_sections);
  std::cout << "evaluate: PA-F1 " << detection.f1 << ", precision " << detection.precision
            << ", recall " << detection.recall << ", AUROC " << detection.auroc << "\n";
  for (const auto& [name, report] : attribution_sections) {
    std::cout << "evaluate: " << name;
    for (const auto& [p, v] : report.hitrate) std::cout << " hitrate@" << p << "% " << v;
    for (const auto& [p, v] : report.ndcg) std::cout << " ndcg@" << p << "% " << v;
    std::cout << "\n";
  }
}

void run_pipeline(const PipelineConfig& cfg) {
  const std::pair<const char*, void (*)(const PipelineConfig&)> stages[] = {
      {"discover", run_discover}, {"train", run_train},         {"score", run_score},
      {"threshold", run_threshold}, {"attribute", run_attribute}, {"evaluate", run_evaluate},
  };
  for (const auto& [name, fn] : stages) {
    std::cout << "[" << name << "]\n";
    try {
      fn(cfg);
    } catch (const Error& e) {
      throw Error(std::string(name) + ": " + e.what());
    }
  }
}

int run_command(const std::string& command, PipelineConfig cfg) {
  try {
    cfg.finalize();
    fs::create_directories(cfg.run.workdir);
    save_pipeline_config(cfg, Artifacts(cfg.run.workdir).config_effective);
    if (command == "synth") {
      run_synth(cfg);
    } else if (command == "discover") {
      run_discover(cfg);
    } else if (command == "train") {
      run_train(cfg);
    } else if (command == "score") {
      run_score(cfg);
    } else if (command == "threshold") {
      run_threshold(cfg);
    } else if (command == "attribute") {
      run_attribute(cfg);
    } else if (command == "evaluate") {
      run_evaluate(cfg);
    } else if (command == "pipeline") {
      run_pipeline(cfg);
    } else {
      throw ConfigError("unknown command: " + command);
    }
  } catch (const Error& e) {
    std::cerr << "cgt " << command << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace cgt
