#include "cgt/train.hpp"

#include "cgt/io.hpp"
#include "cgt/rng.hpp"

#include <cmath>

namespace cgt {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (warmup_epochs < 1) throw ConfigError("train: E_warm must be >= 1");
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("train: gamma must lie in [0, 1]");
  if (beta < 0.0) throw ConfigError("train: beta must be >= 0");
  for (double l : {lambda_res, lambda_prior, lambda_other, lambda_push, lambda_margin,
                   lambda_group, margin})
    if (l < 0.0) throw ConfigError("train: regularizer weights and margin must be >= 0");
  if (parent_bce_weight <= 0.0) throw ConfigError("train: parent BCE weight must be > 0");
  if (learning_rate <= 0.0) throw ConfigError("train: learning rate must be > 0");
  if (clip_norm <= 0.0) throw ConfigError("train: clip norm must be > 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
}

double gamma_schedule(int epoch, const TrainConfig& cfg) {
  return std::min(cfg.gamma, (epoch + 1.0) / cfg.warmup_epochs * cfg.gamma);
}

double beta_schedule(int epoch, const TrainConfig& cfg) {
  return cfg.beta * std::min(1.0, (epoch + 1.0) / cfg.warmup_epochs);
}

LossBreakdown read_loss(const ad::Tape& tape, const LossNodes& nodes) {
  LossBreakdown b;
  b.total = tape.scalar(nodes.total);
  b.causal_nll = tape.scalar(nodes.causal_nll);
  b.aux_nll = tape.scalar(nodes.aux_nll);
  b.kl = tape.scalar(nodes.kl);
  b.res_penalty = tape.scalar(nodes.res_penalty);
  b.r_prior = tape.scalar(nodes.r_prior);
  b.r_other = tape.scalar(nodes.r_other);
  b.r_push = tape.scalar(nodes.r_push);
  b.r_margin = tape.scalar(nodes.r_margin);
  b.r_grp = tape.scalar(nodes.r_grp);
  b.gate_reg = tape.scalar(nodes.gate_reg);
  return b;
}

namespace {

/// Adds the five lambda-scaled gate regularizer nodes to `n`.
void build_gate_regs(ad::Tape& tape, ad::Tape::Id gate, const ParentMask& mask,
                     const TrainConfig& cfg, int dims, int tau_max, LossNodes& n) {
  const int P = static_cast<int>(mask.pi.size());
  const RowVec pi_row = mask.pi.transpose();
  n.r_prior =
      tape.scale(tape.weighted_bce_logits(gate, pi_row, cfg.parent_bce_weight), cfg.lambda_prior);

  const auto alpha = tape.sigmoid(gate);
  const int n_par = mask.parent_count();
  const int n_oth = P - n_par;
  // Empty parent or non-parent sets contribute 0 to their conditional means.
  const auto mean_par = n_par > 0 ? tape.dot_const(alpha, pi_row / n_par)
                                  : tape.constant_scalar(0.0);
  const auto mean_oth = n_oth > 0
                            ? tape.dot_const(alpha, (RowVec::Ones(P) - pi_row) / n_oth)
                            : tape.constant_scalar(0.0);
  n.r_other = tape.scale(mean_oth, cfg.lambda_other);
  n.r_push = n_par > 0 ? tape.scale(tape.affine(mean_par, -1.0, 1.0), cfg.lambda_push)
                       : tape.constant_scalar(0.0);
  n.r_margin =
      tape.scale(tape.relu(tape.affine(tape.sub(mean_oth, mean_par), 1.0, cfg.margin)),
                 cfg.lambda_margin);
  n.r_grp = tape.scale(tape.group_l2_mean(alpha, dims, tau_max), cfg.lambda_group);
  n.gate_reg = tape.lincomb(
      {{n.r_prior, 1.0}, {n.r_other, 1.0}, {n.r_push, 1.0}, {n.r_margin, 1.0}, {n.r_grp, 1.0}});
}

}  // namespace

GateRegValues gate_regularizers(const RowVec& logits, const ParentMask& mask,
                                const TrainConfig& cfg, int dims, int tau_max) {
  if (logits.size() != mask.pi.size() || logits.size() != dims * tau_max)
    throw ConfigError("gate_regularizers: logits, mask, and D*tau_max disagree");
  ad::Tape tape(32);
  LossNodes n{};
  build_gate_regs(tape, tape.constant(logits), mask, cfg, dims, tau_max, n);
  GateRegValues v;
  v.r_prior = tape.scalar(n.r_prior);
  v.r_other = tape.scalar(n.r_other);
  v.r_push = tape.scalar(n.r_push);
  v.r_margin = tape.scalar(n.r_margin);
  v.r_grp = tape.scalar(n.r_grp);
  return v;
}

LossNodes build_block_loss(ad::Tape& tape, const BlockVars& vars, const BlockParams& params,
                           const TargetBatch& batch, const ParentMask& mask,
                           const TrainConfig& cfg, const TermWeights& w, const Mat& eps,
                           const ShadowFreeze* freeze, ShadowFreeze* capture) {
  const int B = batch.size();
  const auto& mcfg = params.cfg;
  if (B < 1) throw TrainError("build_block_loss: empty batch");
  if (batch.target != params.target) throw TrainError("build_block_loss: batch routed to wrong block");
  if (mask.pi.size() != mcfg.feature_columns())
    throw TrainError("build_block_loss: mask length mismatch");
  if (eps.rows() != B || eps.cols() != mcfg.d_z)
    throw TrainError("build_block_loss: eps must be B x d_z");
  if (freeze && static_cast<int>(freeze->h_o.size()) != B)
    throw TrainError("build_block_loss: freeze size mismatch");

  const RowVec pi_row = mask.pi.transpose();
  const RowVec alpha_val = params.gate_alpha();
  if (capture) {
    capture->alpha = alpha_val;
    capture->h_o.clear();
    capture->z.clear();
    capture->mu_c.clear();
    capture->logv_c.clear();
  }
  // Value-only parameter copies drive the stop-gradient trunk.
  BlockVars shadow_vars;
  if (!freeze) shadow_vars = register_block(tape, params, /*trainable=*/false);

  const double inv_b = 1.0 / B;
  std::vector<std::pair<ad::Tape::Id, double>> c_terms, o_terms, kl_terms, res_terms;
  for (int b = 0; b < B; ++b) {
    const double y = batch.targets[b];
    auto x = tape.constant(batch.inputs[b]);
    auto h_c = trunk_forward(tape, vars, params, tape.scale_columns(x, pi_row));
    auto prior = latent_prior(tape, vars, params, h_c);
    auto post = latent_posterior(tape, vars, params, h_c, y);
    auto z = tape.reparam_sample(post.mu, post.logv, eps.row(b));
    auto head = causal_head(tape, vars, params, h_c, z);
    c_terms.push_back({tape.gaussian_nll(y, head.mu, head.logv), inv_b});
    kl_terms.push_back({tape.kl_diag_gaussian(post.mu, post.logv, prior.mu, prior.logv), inv_b});

    // Auxiliary path: every ingredient except the residual head is detached.
    ad::Tape::Id h_o, z_det, mu_det, logv_det;
    if (freeze) {
      h_o = tape.constant(freeze->h_o[b]);
      z_det = tape.constant(freeze->z[b]);
      mu_det = tape.constant_scalar(freeze->mu_c[b]);
      logv_det = tape.constant_scalar(freeze->logv_c[b]);
    } else {
      h_o = trunk_forward(tape, shadow_vars, params, tape.scale_columns(x, alpha_val));
      z_det = tape.stop_gradient(z);
      mu_det = tape.stop_gradient(head.mu);
      logv_det = tape.stop_gradient(head.logv);
      if (capture) {
        capture->h_o.push_back(tape.val(h_o).row(0));
        capture->z.push_back(tape.val(z).row(0));
        capture->mu_c.push_back(tape.scalar(head.mu));
        capture->logv_c.push_back(tape.scalar(head.logv));
      }
    }
    auto res = residual_head(tape, vars, params, tape.concat_cols(h_o, z_det));
    auto aux_mu = tape.add(mu_det, res.mu);
    auto aux_logv =
        tape.clamp(tape.add(logv_det, res.logv), mcfg.logvar_lo, mcfg.logvar_hi);
    o_terms.push_back({tape.gaussian_nll(y, aux_mu, aux_logv), inv_b});
    res_terms.push_back({tape.add(tape.square(res.mu), tape.square(res.logv)), inv_b});
  }

  LossNodes n{};
  n.causal_nll = tape.lincomb(c_terms);
  n.aux_nll = tape.lincomb(o_terms);
  n.kl = tape.lincomb(kl_terms);
  n.res_penalty = tape.lincomb(res_terms);
  build_gate_regs(tape, vars[params.idx.gate], mask, cfg, mcfg.dims, mcfg.tau_max, n);
  n.total = tape.lincomb({{n.causal_nll, w.causal},
                          {n.aux_nll, w.aux},
                          {n.kl, w.kl},
                          {n.res_penalty, w.res},
                          {n.gate_reg, w.gate}});
  return n;
}

Adam::Adam(const BlockParams& params, const TrainConfig& cfg)
    : lr_(cfg.learning_rate),
      beta1_(0.9),
      beta2_(0.999),
      eps_(1e-8),
      clip_(cfg.clip_norm) {
  m_.reserve(params.tensors.size());
  v_.reserve(params.tensors.size());
  for (const auto& t : params.tensors) {
    m_.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
    v_.push_back(Mat::Zero(t.value.rows(), t.value.cols()));
  }
}

double Adam::step(BlockParams& params) {
  if (m_.size() != params.tensors.size()) throw TrainError("Adam: tensor count changed");
  double sq = 0.0;
  for (const auto& t : params.tensors) sq += t.grad.squaredNorm();
  const double global_norm = std::sqrt(sq);
  if (!std::isfinite(global_norm)) return global_norm;  // leave parameters untouched
  const double scale = global_norm > clip_ ? clip_ / global_norm : 1.0;

  ++step_count_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const Mat g = params.tensors[i].grad * scale;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    params.tensors[i].value.array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
  params.snap_to_f32();
  return global_norm;
}

namespace {

void add_into(LossBreakdown& a, const LossBreakdown& b) {
  a.total += b.total;
  a.causal_nll += b.causal_nll;
  a.aux_nll += b.aux_nll;
  a.kl += b.kl;
  a.res_penalty += b.res_penalty;
  a.r_prior += b.r_prior;
  a.r_other += b.r_other;
  a.r_push += b.r_push;
  a.r_margin += b.r_margin;
  a.r_grp += b.r_grp;
  a.gate_reg += b.gate_reg;
}

void scale_in_place(LossBreakdown& a, double s) {
  a.total *= s;
  a.causal_nll *= s;
  a.aux_nll *= s;
  a.kl *= s;
  a.res_penalty *= s;
  a.r_prior *= s;
  a.r_other *= s;
  a.r_push *= s;
  a.r_margin *= s;
  a.r_grp *= s;
  a.gate_reg *= s;
}

}  // namespace

TrainResult train_block(BlockParams& params, const SeriesFrame& train, const ParentMask& mask,
                        const TrainConfig& cfg) {
  cfg.validate();
  const auto& mcfg = params.cfg;
  if (train.dims() != mcfg.dims) throw TrainError("train_block: series width mismatch");
  if (mask.pi.size() != mcfg.feature_columns())
    throw TrainError("train_block: parent mask length mismatch");

  Adam opt(params, cfg);
  TrainResult result;
  const auto target_key = static_cast<std::uint64_t>(params.target);
  const std::size_t reserve = 192u * static_cast<std::size_t>(cfg.batch_size) + 64u;

  for (int e = 0; e < cfg.epochs; ++e) {
    const auto epoch_key = static_cast<std::uint64_t>(e);
    TargetBatchStream stream(train, params.target, mcfg.window, mcfg.tau_max, cfg.batch_size,
                             derive_seed(cfg.seed, {target_key, epoch_key}));
    Rng noise(derive_seed(cfg.seed, {0x5eedULL, target_key, epoch_key}));
    const TermWeights w{1.0 - gamma_schedule(e, cfg), gamma_schedule(e, cfg),
                        beta_schedule(e, cfg), cfg.lambda_res, 1.0};

    EpochLog log;
    log.epoch = e;
    int kept = 0;
    double norm_sum = 0.0;
    while (auto batch = stream.next()) {
      const Mat eps = noise.normal_mat(batch->size(), mcfg.d_z);
      ad::Tape tape(reserve);
      auto vars = register_block(tape, params, /*trainable=*/true);
      const auto nodes = build_block_loss(tape, vars, params, *batch, mask, cfg, w, eps);
      if (!std::isfinite(tape.scalar(nodes.total))) {
        ++log.skipped_batches;
        continue;
      }
      tape.backward(nodes.total);
      params.zero_grads();
      accumulate_grads(tape, vars, params);
      const double gn = opt.step(params);
      if (!std::isfinite(gn)) {
        // Defensive: a non-finite gradient would have poisoned the update.
        ++log.skipped_batches;
        continue;
      }
      norm_sum += gn;
      add_into(log.mean, read_loss(tape, nodes));
      ++kept;
    }
    if (kept == 0)
      throw TrainError("train_block: every batch in epoch " + std::to_string(e) +
                       " was skipped (non-finite loss)");
    scale_in_place(log.mean, 1.0 / kept);
    log.grad_norm = norm_sum / kept;
    result.skipped_batches += log.skipped_batches;
    result.epochs.push_back(log);
  }
  return result;
}

void write_training_log(const std::string& path,
                        const std::vector<std::pair<int, TrainResult>>& per_target) {
  const std::vector<std::string> header = {
      "target",   "epoch",   "total",  "causal_nll", "aux_nll",  "kl",
      "res_penalty", "r_prior", "r_other", "r_push",  "r_margin", "r_grp",
      "gate_reg", "grad_norm", "skipped_batches"};
  std::vector<std::vector<double>> rows;
  for (const auto& [target, res] : per_target)
    for (const auto& log : res.epochs)
      rows.push_back({static_cast<double>(target), static_cast<double>(log.epoch),
                      log.mean.total, log.mean.causal_nll, log.mean.aux_nll, log.mean.kl,
                      log.mean.res_penalty, log.mean.r_prior, log.mean.r_other, log.mean.r_push,
                      log.mean.r_margin, log.mean.r_grp, log.mean.gate_reg, log.grad_norm,
                      static_cast<double>(log.skipped_batches)});
  write_csv(path, header, rows);
}

}  // namespace cgt
