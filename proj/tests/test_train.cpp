#include <catch2/catch.hpp>

#include "cgt/train.hpp"

#include "cgt/io.hpp"
#include "cgt/rng.hpp"

#include <cmath>
#include <filesystem>

using namespace cgt;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.window = 4;
  cfg.tau_max = 2;
  cfg.dims = 3;
  cfg.d_model = 8;
  cfg.n_heads = 2;
  cfg.n_layers = 1;
  cfg.d_ff = 16;
  cfg.d_z = 2;
  return cfg;
}

ParentMask tiny_mask(const ModelConfig& cfg) {
  CausalGraphPrior g(cfg.dims, cfg.tau_max);
  g.add_edge({0, 1, 0, {}, {}});
  g.add_edge({1, 1, 0, {}, {}});
  g.add_edge({2, 2, 0, {}, {}});
  return parent_mask(g, 0);
}

TargetBatch make_batch(const ModelConfig& cfg, int B, std::uint64_t seed) {
  Rng rng(seed);
  TargetBatch batch;
  batch.target = 0;
  batch.targets = rng.normal_vec(B);
  for (int b = 0; b < B; ++b) {
    batch.inputs.push_back(rng.normal_mat(cfg.window, cfg.feature_columns()));
    batch.timestamps.push_back(b);
  }
  return batch;
}

/// Random but f32-snapped parameters so every head actually produces signal.
BlockParams perturbed_block(const ModelConfig& cfg, const ParentMask& mask, std::uint64_t seed) {
  BlockParams p = init_block(cfg, 0, mask, seed);
  Rng rng(derive_seed(seed, {99}));
  for (auto& t : p.tensors)
    for (int r = 0; r < t.value.rows(); ++r)
      for (int c = 0; c < t.value.cols(); ++c) t.value(r, c) += 0.2 * rng.normal();
  p.snap_to_f32();
  return p;
}

SeriesFrame ar1_series(int T, std::uint64_t seed) {
  Rng rng(seed);
  SeriesFrame f;
  f.values = Mat::Zero(T, 1);
  double x = 0.0;
  for (int t = 0; t < T; ++t) {
    x = 0.8 * x + 0.1 * rng.normal();
    f.values(t, 0) = x;
  }
  f.channel_names = {"x0"};
  return f;
}

}  // namespace

TEST_CASE("warmup schedules ramp linearly and saturate", "[train]") {
  TrainConfig cfg;
  cfg.gamma = 0.4;
  cfg.beta = 0.8;
  cfg.warmup_epochs = 5;
  CHECK(gamma_schedule(0, cfg) == Approx(0.4 / 5).epsilon(1e-15));
  CHECK(beta_schedule(0, cfg) == Approx(0.8 / 5).epsilon(1e-15));
  CHECK(gamma_schedule(2, cfg) == Approx(0.4 * 3 / 5).epsilon(1e-15));
  CHECK(gamma_schedule(4, cfg) == 0.4);  // e = E_warm - 1 reaches the cap
  CHECK(gamma_schedule(9, cfg) == 0.4);
  CHECK(beta_schedule(7, cfg) == 0.8);

  cfg.warmup_epochs = 1;
  CHECK(gamma_schedule(0, cfg) == 0.4);
  CHECK(beta_schedule(0, cfg) == 0.8);
}

TEST_CASE("train config validation", "[train]") {
  TrainConfig cfg;
  cfg.validate();
  TrainConfig bad = cfg;
  bad.gamma = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.lambda_res = -0.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.clip_norm = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.warmup_epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("gate regularizers match hand-derived values", "[train]") {
  const ModelConfig mcfg = tiny_config();
  const ParentMask mask = tiny_mask(mcfg);  // parents at columns 0, 2, 5
  const int P = mcfg.feature_columns();
  TrainConfig cfg;
  cfg.lambda_prior = 0.1;
  cfg.lambda_other = 0.05;
  cfg.lambda_push = 0.05;
  cfg.lambda_margin = 0.1;
  cfg.margin = 0.1;
  cfg.lambda_group = 0.01;
  cfg.parent_bce_weight = 5.0;

  SECTION("all logits zero: alpha = 0.5 everywhere") {
    const RowVec logits = RowVec::Zero(P);
    const auto v = gate_regularizers(logits, mask, cfg, mcfg.dims, mcfg.tau_max);
    const int n_par = mask.parent_count();
    const double log2 = std::log(2.0);
    const double bce = log2 * (cfg.parent_bce_weight * n_par + (P - n_par)) / P;
    CHECK(v.r_prior == Approx(cfg.lambda_prior * bce).epsilon(1e-12));
    CHECK(v.r_other == Approx(cfg.lambda_other * 0.5).epsilon(1e-12));
    CHECK(v.r_push == Approx(cfg.lambda_push * 0.5).epsilon(1e-12));
    // Means coincide, so the hinge sits exactly at the margin.
    CHECK(v.r_margin == Approx(cfg.lambda_margin * cfg.margin).epsilon(1e-12));
    // Each sensor group is a 0.5-vector over tau_max lags.
    CHECK(v.r_grp ==
          Approx(cfg.lambda_group * 0.5 * std::sqrt(double(mcfg.tau_max))).epsilon(1e-12));
  }

  SECTION("perfect separation sends the soft penalties to zero") {
    RowVec logits(P);
    for (int c = 0; c < P; ++c) logits[c] = mask.pi[c] != 0.0 ? 40.0 : -40.0;
    const auto v = gate_regularizers(logits, mask, cfg, mcfg.dims, mcfg.tau_max);
    CHECK(v.r_other <= 1e-12);
    CHECK(v.r_push <= 1e-12);
    CHECK(v.r_margin == 0.0);  // hinge argument is 0 - 1 + 0.1 < 0
  }

  SECTION("empty parent set contributes 0 to its conditional mean") {
    ParentMask none;
    none.target = 0;
    none.pi = Vec::Zero(P);
    const RowVec logits = RowVec::Zero(P);
    const auto v = gate_regularizers(logits, none, cfg, mcfg.dims, mcfg.tau_max);
    CHECK(v.r_push == 0.0);
    CHECK(v.r_margin == Approx(cfg.lambda_margin * (0.5 + cfg.margin)).epsilon(1e-12));
  }
}

TEST_CASE("zero-initialized loss matches the unit Gaussian closed form", "[train]") {
  const ModelConfig mcfg = tiny_config();
  const ParentMask mask = tiny_mask(mcfg);
  BlockParams params = init_block(mcfg, 0, mask, 7);
  const TargetBatch batch = make_batch(mcfg, 5, 31);
  TrainConfig cfg;
  Rng rng(3);
  const Mat eps = rng.normal_mat(batch.size(), mcfg.d_z);

  ad::Tape tape(2048);
  auto vars = register_block(tape, params, true);
  const TermWeights w{1.0, 0.0, 0.0, 0.0, 0.0};
  const auto nodes = build_block_loss(tape, vars, params, batch, mask, cfg, w, eps);
  const auto loss = read_loss(tape, nodes);

  double expected = 0.0;
  for (int b = 0; b < batch.size(); ++b)
    expected += (0.9189385332046727 + 0.5 * batch.targets[b] * batch.targets[b]) / batch.size();
  CHECK(loss.causal_nll == Approx(expected).epsilon(1e-13));
  CHECK(loss.total == loss.causal_nll);
  // Zero residual layers leave the auxiliary head identical to the causal one,
  // and matched prior/posterior make the KL vanish exactly.
  CHECK(loss.aux_nll == loss.causal_nll);
  CHECK(loss.kl == 0.0);
  CHECK(loss.res_penalty == 0.0);
}

TEST_CASE("gate regularizer wrapper agrees bitwise with the tape nodes", "[train]") {
  const ModelConfig mcfg = tiny_config();
  const ParentMask mask = tiny_mask(mcfg);
  BlockParams params = perturbed_block(mcfg, mask, 7);
  const TargetBatch batch = make_batch(mcfg, 3, 31);
  TrainConfig cfg;
  Rng rng(3);
  const Mat eps = rng.normal_mat(batch.size(), mcfg.d_z);

  ad::Tape tape(2048);
  auto vars = register_block(tape, params, true);
  const auto nodes =
      build_block_loss(tape, vars, params, batch, mask, cfg, TermWeights{}, eps);
  const auto wrap =
      gate_regularizers(params.gate_logits(), mask, cfg, mcfg.dims, mcfg.tau_max);
  CHECK(tape.scalar(nodes.r_prior) == wrap.r_prior);
  CHECK(tape.scalar(nodes.r_other) == wrap.r_other);
  CHECK(tape.scalar(nodes.r_push) == wrap.r_push);
  CHECK(tape.scalar(nodes.r_margin) == wrap.r_margin);
  CHECK(tape.scalar(nodes.r_grp) == wrap.r_grp);
  CHECK(tape.scalar(nodes.gate_reg) == wrap.total());
}

namespace {

/// Collects which parameter groups received a nonzero gradient.
struct GroupTouch {
  bool trunk = false, latent = false, causal = false, residual = false, gate = false;
};

GroupTouch backward_touch(const BlockParams& params, const ParentMask& mask,
                          const TargetBatch& batch, const TrainConfig& cfg,
                          const TermWeights& w, const Mat& eps) {
  ad::Tape tape(4096);
  auto vars = register_block(tape, params, true);
  const auto nodes = build_block_loss(tape, vars, params, batch, mask, cfg, w, eps);
  tape.backward(nodes.total);
  BlockParams scratch = params;
  scratch.zero_grads();
  accumulate_grads(tape, vars, scratch);
  GroupTouch touch;
  for (const auto& t : scratch.tensors) {
    if (t.grad.isZero(0.0)) continue;
    switch (t.group) {
      case ParamGroup::Trunk: touch.trunk = true; break;
      case ParamGroup::Latent: touch.latent = true; break;
      case ParamGroup::CausalHead: touch.causal = true; break;
      case ParamGroup::ResidualHead: touch.residual = true; break;
      case ParamGroup::Gate: touch.gate = true; break;
    }
  }
  return touch;
}

}  // namespace

TEST_CASE("partial losses touch exactly the advertised parameter groups", "[train]") {
  const ModelConfig mcfg = tiny_config();
  const ParentMask mask = tiny_mask(mcfg);
  const BlockParams params = perturbed_block(mcfg, mask, 7);
  const TargetBatch batch = make_batch(mcfg, 4, 31);
  TrainConfig cfg;
  Rng rng(3);
  const Mat eps = rng.normal_mat(batch.size(), mcfg.d_z);

  SECTION("auxiliary NLL plus residual penalty reaches only the residual heads") {
    const auto touch =
        backward_touch(params, mask, batch, cfg, TermWeights{0, 1, 0, cfg.lambda_res, 0}, eps);
    CHECK(touch.residual);
    CHECK_FALSE(touch.trunk);
    CHECK_FALSE(touch.latent);
    CHECK_FALSE(touch.causal);
    CHECK_FALSE(touch.gate);
  }
  SECTION("gate regularizers reach only the gate logits") {
    const auto touch = backward_touch(params, mask, batch, cfg, TermWeights{0, 0, 0, 0, 1}, eps);
    CHECK(touch.gate);
    CHECK_FALSE(touch.trunk);
    CHECK_FALSE(touch.latent);
    CHECK_FALSE(touch.causal);
    CHECK_FALSE(touch.residual);
  }
  SECTION("causal NLL leaves residual heads and gate untouched") {
    const auto touch = backward_touch(params, mask, batch, cfg, TermWeights{1, 0, 0, 0, 0}, eps);
    CHECK(touch.trunk);
    CHECK(touch.latent);
    CHECK(touch.causal);
    CHECK_FALSE(touch.residual);
    CHECK_FALSE(touch.gate);
  }
}

TEST_CASE("backward gradients match finite differences under the shadow freeze", "[train][fd]") {
  const ModelConfig mcfg = tiny_config();
  const ParentMask mask = tiny_mask(mcfg);
  BlockParams params = perturbed_block(mcfg, mask, 7);
  // Mid-range gate logits keep the margin hinge strictly active.
  for (int c = 0; c < mcfg.feature_columns(); ++c)
    params.value(params.idx.gate)(0, c) = (c % 2 == 0) ? 0.15 : -0.15;
  params.snap_to_f32();

  const TargetBatch batch = make_batch(mcfg, 3, 31);
  TrainConfig cfg;
  cfg.margin = 0.3;  // hinge argument stays well inside the active branch
  Rng rng(3);
  const Mat eps = rng.normal_mat(batch.size(), mcfg.d_z);
  const TermWeights w{0.8, 0.2, 0.3, 0.01, 1.0};

  // Base point: capture the stop-gradient values and run backprop.
  ShadowFreeze freeze;
  ad::Tape tape(4096);
  auto vars = register_block(tape, params, true);
  const auto nodes =
      build_block_loss(tape, vars, params, batch, mask, cfg, w, eps, nullptr, &freeze);
  tape.backward(nodes.total);
  BlockParams with_grads = params;
  with_grads.zero_grads();
  accumulate_grads(tape, vars, with_grads);

  const auto loss_at = [&](const BlockParams& point) {
    ad::Tape t(4096);
    auto v = register_block(t, point, false);
    const auto n = build_block_loss(t, v, point, batch, mask, cfg, w, eps, &freeze, nullptr);
    return t.scalar(n.total);
  };

  const double h = 1e-5;
  Rng pick(42);
  int checked = 0;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    for (int probe = 0; probe < 2; ++probe) {
      const int r = static_cast<int>(pick.below(static_cast<std::uint64_t>(
          params.tensors[i].value.rows())));
      const int c = static_cast<int>(pick.below(static_cast<std::uint64_t>(
          params.tensors[i].value.cols())));
      BlockParams probe_params = params;
      probe_params.tensors[i].value(r, c) += h;
      const double up = loss_at(probe_params);
      probe_params.tensors[i].value(r, c) -= 2 * h;
      const double down = loss_at(probe_params);
      const double fd = (up - down) / (2 * h);
      const double bp = with_grads.tensors[i].grad(r, c);
      const double denom = std::max({1.0, std::abs(fd), std::abs(bp)});
      INFO(params.tensors[i].name << "(" << r << "," << c << ")");
      CHECK(std::abs(fd - bp) / denom < 1e-4);
      ++checked;
    }
  }
  CHECK(checked >= 2 * static_cast<int>(params.tensors.size()));
}

TEST_CASE("pure causal training reduces the NLL on a learnable AR(1) target", "[train]") {
  ModelConfig mcfg;
  mcfg.window = 8;
  mcfg.tau_max = 1;
  mcfg.dims = 1;
  mcfg.d_model = 8;
  mcfg.n_heads = 2;
  mcfg.n_layers = 1;
  mcfg.d_ff = 16;
  mcfg.d_z = 2;

  SeriesFrame raw = ar1_series(260, 11);
  const ScalerParams scaler = fit_minmax(raw);
  const SeriesFrame train = apply_minmax(raw, scaler);

  ParentMask mask;
  mask.target = 0;
  mask.pi = Vec::Ones(1);

  BlockParams params = init_block(mcfg, 0, mask, 5);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  cfg.learning_rate = 3e-3;
  cfg.gamma = 0.0;
  cfg.beta = 0.0;
  cfg.lambda_res = 0.0;
  cfg.lambda_prior = 0.0;
  cfg.lambda_other = 0.0;
  cfg.lambda_push = 0.0;
  cfg.lambda_margin = 0.0;
  cfg.lambda_group = 0.0;
  cfg.seed = 17;

  const TrainResult res = train_block(params, train, mask, cfg);
  REQUIRE(res.epochs.size() == 5);
  // With every weight at zero the objective is the causal NLL alone.
  for (const auto& log : res.epochs) CHECK(log.mean.total == log.mean.causal_nll);
  CHECK(res.epochs.back().mean.causal_nll < res.epochs.front().mean.causal_nll - 0.01);
  CHECK(res.skipped_batches == 0);
}

TEST_CASE("non-finite losses skip the batch and never touch the parameters", "[train]") {
  ModelConfig mcfg;
  mcfg.window = 4;
  mcfg.tau_max = 1;
  mcfg.dims = 1;
  mcfg.d_model = 8;
  mcfg.n_heads = 2;
  mcfg.n_layers = 1;
  mcfg.d_ff = 16;
  mcfg.d_z = 2;
  ParentMask mask;
  mask.target = 0;
  mask.pi = Vec::Ones(1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.seed = 3;

  SECTION("poisoned region is skipped, clean batches still train") {
    SeriesFrame series = ar1_series(60, 11);
    series.values(40, 0) = std::numeric_limits<double>::quiet_NaN();
    BlockParams params = init_block(mcfg, 0, mask, 5);
    const TrainResult res = train_block(params, series, mask, cfg);
    CHECK(res.skipped_batches >= 1);
    for (const auto& t : params.tensors) CHECK(t.value.allFinite());
  }

  SECTION("an epoch with every batch skipped is a training failure") {
    SeriesFrame series = ar1_series(6, 11);  // exactly one valid timestamp
    series.values(5, 0) = std::numeric_limits<double>::quiet_NaN();
    BlockParams params = init_block(mcfg, 0, mask, 5);
    CHECK_THROWS_AS(train_block(params, series, mask, cfg), TrainError);
  }
}

TEST_CASE("gradient clipping bounds the applied update at the configured norm", "[train]") {
  const ModelConfig mcfg = tiny_config();
  const ParentMask mask = tiny_mask(mcfg);
  BlockParams params = init_block(mcfg, 0, mask, 7);
  TrainConfig cfg;  // clip_norm = 0.823
  Adam opt(params, cfg);

  // Artificially large gradients, far beyond the clip threshold.
  Rng rng(9);
  double sq = 0.0;
  for (auto& t : params.tensors) {
    t.grad = 50.0 * rng.normal_mat(static_cast<int>(t.value.rows()),
                                   static_cast<int>(t.value.cols()));
    sq += t.grad.squaredNorm();
  }
  const double raw_norm = std::sqrt(sq);
  REQUIRE(raw_norm > cfg.clip_norm);

  const BlockParams before = params;
  const double reported = opt.step(params);
  CHECK(reported == Approx(raw_norm).epsilon(1e-12));

  // Oracle: one Adam step from zero moments with the clipped gradient.
  const double scale = cfg.clip_norm / raw_norm;
  double clipped_sq = 0.0;
  for (std::size_t i = 0; i < params.tensors.size(); ++i) {
    const Mat g = before.tensors[i].grad * scale;
    clipped_sq += g.squaredNorm();
    const Mat m_hat = (0.1 * g) / (1.0 - 0.9);
    const Mat v_hat = (0.001 * g.cwiseProduct(g)) / (1.0 - 0.999);
    const Mat expect = before.tensors[i].value.array() -
                       cfg.learning_rate * m_hat.array() / (v_hat.array().sqrt() + 1e-8);
    for (int r = 0; r < expect.rows(); ++r)
      for (int c = 0; c < expect.cols(); ++c)
        CHECK(params.tensors[i].value(r, c) ==
              Approx(snap_f32(expect(r, c))).margin(1e-7));
  }
  CHECK(std::sqrt(clipped_sq) <= cfg.clip_norm + 1e-6);
}

TEST_CASE("training is deterministic for a fixed seed", "[train]") {
  ModelConfig mcfg;
  mcfg.window = 6;
  mcfg.tau_max = 1;
  mcfg.dims = 1;
  mcfg.d_model = 8;
  mcfg.n_heads = 2;
  mcfg.n_layers = 1;
  mcfg.d_ff = 16;
  mcfg.d_z = 2;
  ParentMask mask;
  mask.target = 0;
  mask.pi = Vec::Ones(1);
  const SeriesFrame train = ar1_series(80, 11);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 21;

  BlockParams a = init_block(mcfg, 0, mask, 5);
  BlockParams b = init_block(mcfg, 0, mask, 5);
  const TrainResult ra = train_block(a, train, mask, cfg);
  const TrainResult rb = train_block(b, train, mask, cfg);
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    CHECK(a.tensors[i].value == b.tensors[i].value);
  REQUIRE(ra.epochs.size() == rb.epochs.size());
  for (std::size_t e = 0; e < ra.epochs.size(); ++e)
    CHECK(ra.epochs[e].mean.total == rb.epochs[e].mean.total);

  cfg.seed = 22;
  BlockParams c = init_block(mcfg, 0, mask, 5);
  train_block(c, train, mask, cfg);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (a.tensors[i].value != c.tensors[i].value) any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("training log CSV round-trips every breakdown field", "[train]") {
  TrainResult res;
  EpochLog log;
  log.epoch = 0;
  log.mean.total = 1.25;
  log.mean.causal_nll = 1.0;
  log.mean.aux_nll = 0.75;
  log.mean.kl = 0.5;
  log.mean.res_penalty = 0.25;
  log.mean.r_prior = 0.1;
  log.mean.r_other = 0.05;
  log.mean.r_push = 0.025;
  log.mean.r_margin = 0.0125;
  log.mean.r_grp = 0.00625;
  log.mean.gate_reg = 0.19375;
  log.skipped_batches = 1;
  log.grad_norm = 0.5;
  res.epochs.push_back(log);
  log.epoch = 1;
  res.epochs.push_back(log);

  const auto path =
      (std::filesystem::temp_directory_path() / "cgt_train_log.csv").string();
  write_training_log(path, {{0, res}, {2, res}});

  std::vector<std::string> header;
  const auto rows = read_numeric_csv(path, true, &header);
  REQUIRE(header.size() == 15);
  CHECK(header[0] == "target");
  CHECK(header[13] == "grad_norm");
  REQUIRE(rows.size() == 4);
  CHECK(rows[2][0] == 2.0);  // second target
  CHECK(rows[1][1] == 1.0);  // second epoch
  CHECK(rows[0][2] == 1.25);
  CHECK(rows[0][14] == 1.0);  // skipped batches
  std::filesystem::remove(path);
}
