#include "cgt/safety.hpp"

#include "cgt/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace cgt {

void SafetyConfig::validate() const {
  if (tau_rel < 0.0) throw ConfigError("safety: tau_rel must be >= 0");
  if (tau_alpha < 0.0 || tau_alpha >= 1.0)
    throw ConfigError("safety: tau_alpha must lie in [0, 1)");
  if (epsilon < 0.0) throw ConfigError("safety: epsilon must be >= 0");
  if (batch_size < 1) throw ConfigError("safety: batch size must be >= 1");
  if (mc_samples < 1) throw ConfigError("safety: S must be >= 1");
}

PermuteResult permute_non_parents(const TargetBatch& batch, const ParentMask& mask,
                                  std::uint64_t seed) {
  PermuteResult out;
  out.batch = batch;
  const int B = batch.size();
  if (B <= 1) {
    out.degenerate = B == 1;
    return out;
  }
  Rng rng(seed);
  const auto perm = rng.permutation(B);
  const int P = static_cast<int>(mask.pi.size());
  for (int b = 0; b < B; ++b) {
    if (static_cast<int>(perm[b]) == b) continue;
    for (int c = 0; c < P; ++c)
      if (mask.pi[c] == 0.0) out.batch.inputs[b].col(c) = batch.inputs[perm[b]].col(c);
  }
  return out;
}

double soft_gamma(double M, double gamma_base, double tau_alpha) {
  const double ratio = (M - tau_alpha) / (1.0 - tau_alpha);
  return gamma_base * std::clamp(ratio, 0.0, 1.0);
}

namespace {

/// Mean gate separation of one block; empty sets contribute 0 to their mean.
double gate_separation(const BlockParams& block, const ParentMask& mask) {
  const RowVec alpha = block.gate_alpha();
  const int P = static_cast<int>(alpha.size());
  double par = 0.0, oth = 0.0;
  int n_par = 0, n_oth = 0;
  for (int c = 0; c < P; ++c) {
    if (mask.pi[c] != 0.0) {
      par += alpha[c];
      ++n_par;
    } else {
      oth += alpha[c];
      ++n_oth;
    }
  }
  const double mean_par = n_par > 0 ? par / n_par : 0.0;
  const double mean_oth = n_oth > 0 ? oth / n_oth : 0.0;
  return mean_par - mean_oth;
}

}  // namespace

SafetyDiagnostics compute_safety(const std::vector<BlockParams>& blocks,
                                 const SeriesFrame& calib,
                                 const std::vector<ParentMask>& masks, double gamma_base,
                                 const SafetyConfig& cfg, int first_t) {
  cfg.validate();
  if (gamma_base < 0.0 || gamma_base > 1.0)
    throw ConfigError("compute_safety: gamma_base must lie in [0, 1]");
  if (blocks.empty()) throw Error("compute_safety: no blocks");
  const auto& mcfg = blocks.front().cfg;
  const int start = first_valid_timestamp(mcfg.window, mcfg.tau_max);
  if (calib.length() < start + 1)
    throw Error("compute_safety: empty calibration prefix (needs > W + tau_max rows)");

  const ScoreSeries base = score_stream(blocks, calib, masks, cfg.mc_samples, cfg.seed, first_t);
  const Vec s_mix = aggregate(blend(base, gamma_base), cfg.rule, cfg.topk);

  // Stress pass: same per-(t, i) seeds, inputs permuted batch by batch.
  const int D = mcfg.dims;
  const int n = base.length();
  ScoreSeries stressed = base;  // same shape and timestamps
  SafetyDiagnostics diag;
  for (int b0 = 0; b0 < n; b0 += cfg.batch_size) {
    const int B = std::min(cfg.batch_size, n - b0);
    const std::uint64_t batch_idx = static_cast<std::uint64_t>(b0 / cfg.batch_size);
    for (int i = 0; i < D; ++i) {
      TargetBatch tb;
      tb.target = i;
      tb.targets.resize(B);
      for (int b = 0; b < B; ++b) {
        const int r = b0 + b;
        tb.inputs.push_back(
            build_lag_matrix(calib, r + start, mcfg.window, mcfg.tau_max).X);
        tb.targets[b] = calib.values(r + start, i);
        tb.timestamps.push_back(base.timestamps[r]);
      }
      const auto perm = permute_non_parents(
          tb, masks[i],
          derive_seed(cfg.seed, {0xABCDULL, static_cast<std::uint64_t>(i), batch_idx}));
      if (perm.degenerate && i == 0) ++diag.degenerate_batches;
      for (int b = 0; b < B; ++b) {
        const auto [sc, so] =
            score_one(blocks[i], perm.batch.inputs[b], masks[i], perm.batch.targets[b],
                      cfg.mc_samples, score_seed(cfg.seed, i, perm.batch.timestamps[b]));
        stressed.causal(b0 + b, i) = sc;
        stressed.aux(b0 + b, i) = so;
      }
    }
  }
  const Vec s_perm = aggregate(blend(stressed, gamma_base), cfg.rule, cfg.topk);

  diag.R = (s_mix - s_perm).cwiseAbs().mean() / (s_mix.cwiseAbs().mean() + cfg.epsilon);
  diag.fallback_flags.resize(D);
  double sep_sum = 0.0;
  int flagged = 0;
  for (int i = 0; i < D; ++i) {
    const double sep = gate_separation(blocks[i], masks[i]);
    sep_sum += sep;
    diag.fallback_flags[i] = sep < cfg.tau_alpha;
    if (diag.fallback_flags[i]) ++flagged;
  }
  diag.M = sep_sum / D;
  diag.fallback_fraction = static_cast<double>(flagged) / D;
  diag.gamma_base = gamma_base;
  diag.hard_mode = cfg.hard_mode;
  diag.triggered = diag.R > cfg.tau_rel || diag.M < cfg.tau_alpha;
  if (!diag.triggered)
    diag.gamma_used = gamma_base;
  else if (cfg.hard_mode)
    diag.gamma_used = 0.0;
  else
    diag.gamma_used = soft_gamma(diag.M, gamma_base, cfg.tau_alpha);
  return diag;
}

void write_safety_report(const std::string& kv_path, const std::string& text_path,
                         const SafetyDiagnostics& diag, const SafetyConfig& cfg) {
  {
    KeyValueWriter kv(kv_path);
    kv.put("R", diag.R);
    kv.put("M", diag.M);
    kv.put("gamma_base", diag.gamma_base);
    kv.put("gamma_used", diag.gamma_used);
    kv.put("mode", std::string(diag.hard_mode ? "hard" : "soft"));
    kv.put("triggered", diag.triggered ? 1 : 0);
    kv.put("tau_rel", cfg.tau_rel);
    kv.put("tau_alpha", cfg.tau_alpha);
    kv.put("epsilon", cfg.epsilon);
    kv.put("fallback_fraction", diag.fallback_fraction);
    kv.put("degenerate_batches", diag.degenerate_batches);
    for (std::size_t i = 0; i < diag.fallback_flags.size(); ++i)
      kv.put("fallback." + std::to_string(i), diag.fallback_flags[i] ? 1 : 0);
  }
  std::ofstream text(text_path);
  if (!text) throw Error("write_safety_report: cannot write " + text_path);
  text << "blend-weight safety check\n"
       << "  sensitivity ratio R = " << format_double(diag.R) << " (limit "
       << format_double(cfg.tau_rel) << ")\n"
       << "  gate separation  M = " << format_double(diag.M) << " (floor "
       << format_double(cfg.tau_alpha) << ")\n"
       << "  mode " << (diag.hard_mode ? "hard" : "soft") << ", "
       << (diag.triggered ? "fallback TRIGGERED" : "no fallback") << "\n"
       << "  gamma: base " << format_double(diag.gamma_base) << " -> used "
       << format_double(diag.gamma_used) << "\n"
       << "  targets below separation floor: "
       << format_double(100.0 * diag.fallback_fraction) << "%\n";
}

}  // namespace cgt
