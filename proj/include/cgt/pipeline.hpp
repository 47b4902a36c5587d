#pragma once

#include "cgt/config.hpp"

#include <string>

namespace cgt {

/// Locations of every artifact a run reads or writes inside the working
/// directory.  Stages communicate exclusively through these files, so any
/// stage can be re-run in isolation.
struct Artifacts {
  explicit Artifacts(const std::string& dir)
      : workdir(dir),
        config_effective(dir + "/config_effective.txt"),
        graph(dir + "/graph.csv"),
        scaler(dir + "/scaler.csv"),
        checkpoint_dir(dir + "/checkpoint"),
        training_log(dir + "/training_log.csv"),
        scores_val(dir + "/scores_val.csv"),
        scores_test(dir + "/scores_test.csv"),
        safety_kv(dir + "/safety.txt"),
        safety_text(dir + "/safety_report.txt"),
        thresholds(dir + "/thresholds.csv"),
        decisions(dir + "/decisions.csv"),
        metrics(dir + "/metrics.txt"),
        attribution(dir + "/attribution.csv") {}

  std::string workdir;
  std::string config_effective;
  std::string graph;
  std::string scaler;
  std::string checkpoint_dir;
  std::string training_log;
  std::string scores_val;
  std::string scores_test;
  std::string safety_kv;
  std::string safety_text;
  std::string thresholds;
  std::string decisions;
  std::string metrics;
  std::string attribution;
};

/// Stage entry points.  Each one loads its inputs from disk, computes, and
/// writes its artifacts; a missing upstream artifact raises a named error
/// telling the user which stage to run first.
void run_synth(const PipelineConfig& cfg);
void run_discover(const PipelineConfig& cfg);
void run_train(const PipelineConfig& cfg);
void run_score(const PipelineConfig& cfg);
void run_threshold(const PipelineConfig& cfg);
void run_attribute(const PipelineConfig& cfg);
void run_evaluate(const PipelineConfig& cfg);

/// discover -> train -> score -> threshold -> attribute -> evaluate.
/// Failures are re-raised with the failing stage's name prefixed.
void run_pipeline(const PipelineConfig& cfg);

/// Finalizes the config, records the effective configuration in the working
/// directory, and dispatches one subcommand.  Returns a process exit status;
/// failures print `cgt <command>: <reason>` to stderr.
int run_command(const std::string& command, PipelineConfig cfg);

}  // namespace cgt
