#pragma once

#include "cgt/model.hpp"
#include "cgt/series.hpp"

#include <utility>
#include <vector>

namespace cgt {

struct TrainConfig {
  int epochs = 15;
  int warmup_epochs = 5;  // E_warm
  double gamma = 0.0206;  // cap on the auxiliary (shadow) loss weight
  double beta = 0.1;      // cap on the KL weight
  double lambda_res = 0.01;
  double lambda_prior = 0.1;
  double lambda_other = 0.05;
  double lambda_push = 0.05;
  double lambda_margin = 0.1;
  double margin = 0.1;
  double lambda_group = 0.01;
  double parent_bce_weight = 5.0;
  double learning_rate = 3.90e-4;
  double clip_norm = 0.823;
  int batch_size = 16;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Scale on each objective term; train_block uses
/// {1-gamma_t, gamma_t, beta_t, lambda_res, 1}. The gate regularizers carry
/// their lambdas internally, so `gate` is normally 1.
struct TermWeights {
  double causal = 1.0;
  double aux = 0.0;
  double kl = 0.0;
  double res = 0.0;
  double gate = 0.0;
};

/// Stop-gradient path values captured at a base point. Finite-difference
/// probes replay them so that the difference quotient matches the derivative
/// of the objective *with the detached values held fixed* - which is what
/// backpropagation through a stop-gradient computes.
struct ShadowFreeze {
  RowVec alpha;              // gate values at the base point (diagnostic)
  std::vector<RowVec> h_o;   // shadow trunk summaries, one per sample
  std::vector<RowVec> z;     // detached latent draws
  std::vector<double> mu_c;  // detached causal means
  std::vector<double> logv_c;
};

struct LossNodes {
  ad::Tape::Id total, causal_nll, aux_nll, kl, res_penalty;
  ad::Tape::Id r_prior, r_other, r_push, r_margin, r_grp, gate_reg;
};

struct LossBreakdown {
  double total = 0, causal_nll = 0, aux_nll = 0, kl = 0, res_penalty = 0;
  double r_prior = 0, r_other = 0, r_push = 0, r_margin = 0, r_grp = 0, gate_reg = 0;
};

LossBreakdown read_loss(const ad::Tape& tape, const LossNodes& nodes);

/// Builds the full training objective for one batch on `tape`.
/// `eps` is B x d_z reparameterization noise, one row per batch sample.
/// With `freeze` set, the detached values are replayed instead of recomputed;
/// with `capture` set, the live detached values are recorded.
LossNodes build_block_loss(ad::Tape& tape, const BlockVars& vars, const BlockParams& params,
                           const TargetBatch& batch, const ParentMask& mask,
                           const TrainConfig& cfg, const TermWeights& w, const Mat& eps,
                           const ShadowFreeze* freeze = nullptr,
                           ShadowFreeze* capture = nullptr);

struct GateRegValues {
  double r_prior = 0, r_other = 0, r_push = 0, r_margin = 0, r_grp = 0;
  double total() const { return r_prior + r_other + r_push + r_margin + r_grp; }
};

/// Lambda-scaled regularizer values (no gradients).
GateRegValues gate_regularizers(const RowVec& logits, const ParentMask& mask,
                                const TrainConfig& cfg, int dims, int tau_max);

double gamma_schedule(int epoch, const TrainConfig& cfg);
double beta_schedule(int epoch, const TrainConfig& cfg);

class Adam {
 public:
  Adam(const BlockParams& params, const TrainConfig& cfg);

  /// Clips the accumulated gradients to `clip_norm` (global norm across all
  /// tensors), applies one update, snaps parameters to the f32 grid.
  /// Returns the pre-clip global norm.
  double step(BlockParams& params);

 private:
  double lr_, beta1_, beta2_, eps_, clip_;
  long step_count_ = 0;
  std::vector<Mat> m_, v_;
};

struct EpochLog {
  int epoch = 0;
  LossBreakdown mean;  // averaged over the batches that were kept
  int skipped_batches = 0;
  double grad_norm = 0;  // mean pre-clip global norm
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  int skipped_batches = 0;
};

/// Trains one target block in place. `train` must hold scaled values.
/// Deterministic for a fixed cfg.seed. Throws TrainError when every batch
/// of an epoch produced a non-finite loss.
TrainResult train_block(BlockParams& params, const SeriesFrame& train, const ParentMask& mask,
                        const TrainConfig& cfg);

/// One CSV row per (target, epoch) with every LossBreakdown field.
void write_training_log(const std::string& path,
                        const std::vector<std::pair<int, TrainResult>>& per_target);

}  // namespace cgt
