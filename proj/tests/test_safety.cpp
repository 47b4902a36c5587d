#include <catch2/catch.hpp>

#include "cgt/safety.hpp"

#include "cgt/io.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

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

std::vector<ParentMask> mixed_masks(const ModelConfig& cfg) {
  CausalGraphPrior g(cfg.dims, cfg.tau_max);
  for (int i = 0; i < cfg.dims; ++i) g.add_edge({i, 1, i, {}, {}});
  g.add_edge({0, 2, 1, {}, {}});
  g.add_edge({1, 1, 2, {}, {}});
  std::vector<ParentMask> masks;
  for (int i = 0; i < cfg.dims; ++i) masks.push_back(parent_mask(g, i));
  return masks;
}

void activate_block(BlockParams& p, std::uint64_t seed) {
  Rng rng(seed);
  for (auto& t : p.tensors) {
    if (t.group == ParamGroup::Gate) continue;
    for (int r = 0; r < t.value.rows(); ++r)
      for (int c = 0; c < t.value.cols(); ++c) t.value(r, c) += 0.15 * rng.normal();
  }
  p.snap_to_f32();
}

std::vector<BlockParams> live_blocks(const ModelConfig& cfg,
                                     const std::vector<ParentMask>& masks) {
  std::vector<BlockParams> blocks;
  for (int i = 0; i < cfg.dims; ++i) {
    BlockParams p = init_block(cfg, i, masks[i], 40 + i);
    activate_block(p, 60 + i);
    blocks.push_back(std::move(p));
  }
  return blocks;
}

SeriesFrame noise_frame(int T, int D, std::uint64_t seed) {
  Rng rng(seed);
  SeriesFrame f;
  f.values = rng.normal_mat(T, D) * 0.25;
  for (int j = 0; j < D; ++j) f.channel_names.push_back("c" + std::to_string(j));
  return f;
}

TargetBatch sample_batch(const ModelConfig& cfg, int B, std::uint64_t seed) {
  Rng rng(seed);
  TargetBatch b;
  b.target = 0;
  b.targets = rng.normal_vec(B);
  for (int i = 0; i < B; ++i) {
    b.inputs.push_back(rng.normal_mat(cfg.window, cfg.feature_columns()));
    b.timestamps.push_back(i);
  }
  return b;
}

}  // namespace

TEST_CASE("non-parent permutation preserves marginals and parent columns", "[safety]") {
  const ModelConfig cfg = tiny_config();
  const auto masks = mixed_masks(cfg);
  const TargetBatch batch = sample_batch(cfg, 6, 3);
  const int P = cfg.feature_columns();

  SECTION("all-parent mask leaves the batch unchanged") {
    ParentMask all;
    all.target = 0;
    all.pi = Vec::Ones(P);
    const auto out = permute_non_parents(batch, all, 9);
    CHECK_FALSE(out.degenerate);
    for (int b = 0; b < batch.size(); ++b) CHECK(out.batch.inputs[b] == batch.inputs[b]);
  }

  SECTION("size-1 batch is identity and flagged") {
    const TargetBatch one = sample_batch(cfg, 1, 3);
    const auto out = permute_non_parents(one, masks[0], 9);
    CHECK(out.degenerate);
    CHECK(out.batch.inputs[0] == one.inputs[0]);
  }

  SECTION("column multisets survive; parent columns stay with their sample") {
    const auto out = permute_non_parents(batch, masks[1], 9);
    CHECK(out.batch.targets == batch.targets);
    for (int c = 0; c < P; ++c) {
      if (masks[1].pi[c] != 0.0) {
        for (int b = 0; b < batch.size(); ++b)
          CHECK(out.batch.inputs[b].col(c) == batch.inputs[b].col(c));
        continue;
      }
      for (int r = 0; r < cfg.window; ++r) {
        std::vector<double> before, after;
        for (int b = 0; b < batch.size(); ++b) {
          before.push_back(batch.inputs[b](r, c));
          after.push_back(out.batch.inputs[b](r, c));
        }
        std::sort(before.begin(), before.end());
        std::sort(after.begin(), after.end());
        CHECK(before == after);
      }
    }
    // The same seed replays the same permutation; a fresh seed changes it.
    const auto again = permute_non_parents(batch, masks[1], 9);
    for (int b = 0; b < batch.size(); ++b)
      CHECK(again.batch.inputs[b] == out.batch.inputs[b]);
  }
}

TEST_CASE("soft fallback weight hits its endpoints exactly", "[safety]") {
  const double tau = 0.01;
  const double base = 0.0206;
  CHECK(soft_gamma(tau, base, tau) == 0.0);
  CHECK(soft_gamma(1.0, base, tau) == base);
  CHECK(soft_gamma(tau - 0.5, base, tau) == 0.0);  // clipped below
  CHECK(soft_gamma(2.0, base, tau) == base);       // clipped above
  // Nondecreasing in M.
  double prev = -1.0;
  for (double m = 0.0; m <= 1.0; m += 0.05) {
    const double g = soft_gamma(m, base, tau);
    CHECK(g >= prev);
    prev = g;
  }
}

TEST_CASE("causal-only scoring is bitwise invariant under the stress pass", "[safety]") {
  const ModelConfig cfg = tiny_config();
  const auto masks = mixed_masks(cfg);
  const auto blocks = live_blocks(cfg, masks);
  const SeriesFrame calib = noise_frame(cfg.window + cfg.tau_max + 12, cfg.dims, 5);

  SafetyConfig scfg;
  scfg.mc_samples = 2;
  scfg.batch_size = 5;
  const auto diag = compute_safety(blocks, calib, masks, /*gamma_base=*/0.0, scfg);
  // Hard-mask invariance: with gamma_base = 0 the aggregated score only sees
  // the causal head, which cannot react to non-parent permutations.
  CHECK(diag.R == 0.0);
  CHECK(diag.gamma_used == 0.0);
  CHECK(diag.gamma_base == 0.0);
}

TEST_CASE("gate separation M matches a direct computation", "[safety]") {
  const ModelConfig cfg = tiny_config();
  const auto masks = mixed_masks(cfg);
  const auto blocks = live_blocks(cfg, masks);
  const SeriesFrame calib = noise_frame(cfg.window + cfg.tau_max + 8, cfg.dims, 5);

  SafetyConfig scfg;
  scfg.mc_samples = 1;
  const auto diag = compute_safety(blocks, calib, masks, 0.0206, scfg);

  double expect = 0.0;
  for (int i = 0; i < cfg.dims; ++i) {
    const RowVec alpha = blocks[i].gate_alpha();
    double par = 0, oth = 0;
    int np = 0, no = 0;
    for (int c = 0; c < alpha.size(); ++c)
      if (masks[i].pi[c] != 0.0) {
        par += alpha[c];
        ++np;
      } else {
        oth += alpha[c];
        ++no;
      }
    expect += (np ? par / np : 0.0) - (no ? oth / no : 0.0);
  }
  expect /= cfg.dims;
  CHECK(diag.M == Approx(expect).epsilon(1e-15));
  // Default gate init separates parents (0.9) from the rest (0.05).
  CHECK(diag.M == Approx(0.85).margin(1e-6));
  CHECK(diag.fallback_fraction == 0.0);
  for (const bool f : diag.fallback_flags) CHECK_FALSE(f);
}

TEST_CASE("fallback selection routes through hard and soft modes", "[safety]") {
  const ModelConfig cfg = tiny_config();
  const auto masks = mixed_masks(cfg);
  auto blocks = live_blocks(cfg, masks);
  const SeriesFrame calib = noise_frame(cfg.window + cfg.tau_max + 12, cfg.dims, 5);
  const double base = 0.0206;

  SECTION("untriggered: gamma passes through") {
    SafetyConfig scfg;
    scfg.mc_samples = 2;
    scfg.tau_rel = 1e9;  // sensitivity can never trigger
    const auto diag = compute_safety(blocks, calib, masks, base, scfg);
    CHECK_FALSE(diag.triggered);
    CHECK(diag.gamma_used == base);
  }

  SECTION("triggered via R: soft scaling uses the measured M") {
    SafetyConfig scfg;
    scfg.mc_samples = 2;
    scfg.tau_rel = 0.0;  // any nonzero sensitivity triggers
    const auto diag = compute_safety(blocks, calib, masks, base, scfg);
    REQUIRE(diag.R > 0.0);  // live aux heads react to permuted non-parents
    CHECK(diag.triggered);
    CHECK(diag.gamma_used == soft_gamma(diag.M, base, scfg.tau_alpha));
    CHECK(diag.gamma_used > 0.0);
    CHECK(diag.gamma_used <= base);
  }

  SECTION("triggered hard mode zeroes gamma") {
    SafetyConfig scfg;
    scfg.mc_samples = 2;
    scfg.tau_rel = 0.0;
    scfg.hard_mode = true;
    const auto diag = compute_safety(blocks, calib, masks, base, scfg);
    CHECK(diag.triggered);
    CHECK(diag.gamma_used == 0.0);
  }

  SECTION("collapsed gates are flagged and drive M below the floor") {
    for (auto& b : blocks) {
      b.value(b.idx.gate).setZero();  // alpha = 0.5 everywhere, separation 0
      b.snap_to_f32();
    }
    SafetyConfig scfg;
    scfg.mc_samples = 2;
    const auto diag = compute_safety(blocks, calib, masks, base, scfg);
    CHECK(diag.M == Approx(0.0).margin(1e-12));
    CHECK(diag.triggered);  // M < tau_alpha
    CHECK(diag.gamma_used == 0.0);
    CHECK(diag.fallback_fraction == 1.0);
  }
}

TEST_CASE("degenerate trailing batch is counted once", "[safety]") {
  const ModelConfig cfg = tiny_config();
  const auto masks = mixed_masks(cfg);
  const auto blocks = live_blocks(cfg, masks);
  // 9 valid timestamps with batch 4 -> batches of 4, 4, 1.
  const SeriesFrame calib = noise_frame(cfg.window + cfg.tau_max + 9, cfg.dims, 5);
  SafetyConfig scfg;
  scfg.mc_samples = 1;
  scfg.batch_size = 4;
  const auto diag = compute_safety(blocks, calib, masks, 0.0206, scfg);
  CHECK(diag.degenerate_batches == 1);
}

TEST_CASE("safety report is written as key=value plus text", "[safety]") {
  SafetyDiagnostics diag;
  diag.R = 0.0437;
  diag.M = 0.0814;
  diag.gamma_base = 0.0206;
  diag.gamma_used = 0.0191;
  diag.triggered = true;
  diag.fallback_flags = {false, true, false};
  diag.fallback_fraction = 1.0 / 3.0;
  SafetyConfig cfg;

  const auto dir = std::filesystem::temp_directory_path();
  const auto kv_path = (dir / "cgt_safety.kv").string();
  const auto txt_path = (dir / "cgt_safety.txt").string();
  write_safety_report(kv_path, txt_path, diag, cfg);

  const auto kv = read_key_values(kv_path);
  CHECK(parse_kv_double(kv, "R", "safety") == 0.0437);
  CHECK(parse_kv_double(kv, "M", "safety") == 0.0814);
  CHECK(parse_kv_double(kv, "gamma_used", "safety") == 0.0191);
  CHECK(kv.at("mode") == "soft");
  CHECK(kv.at("triggered") == "1");
  CHECK(kv.at("fallback.1") == "1");
  CHECK(kv.at("fallback.2") == "0");

  std::ifstream text(txt_path);
  std::string body((std::istreambuf_iterator<char>(text)), std::istreambuf_iterator<char>());
  CHECK(body.find("gamma") != std::string::npos);
  CHECK(body.find("TRIGGERED") != std::string::npos);
  std::filesystem::remove(kv_path);
  std::filesystem::remove(txt_path);
}

TEST_CASE("safety configuration and prefix validation", "[safety]") {
  SafetyConfig cfg;
  cfg.validate();
  SafetyConfig bad = cfg;
  bad.tau_alpha = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  const ModelConfig mcfg = tiny_config();
  const auto masks = mixed_masks(mcfg);
  const auto blocks = live_blocks(mcfg, masks);
  SeriesFrame empty;
  empty.values = Mat::Zero(mcfg.window + mcfg.tau_max, mcfg.dims);
  CHECK_THROWS_AS(compute_safety(blocks, empty, masks, 0.01, SafetyConfig{}), Error);
}
