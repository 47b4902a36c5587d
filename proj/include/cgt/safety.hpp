#pragma once

#include "cgt/scoring.hpp"

#include <string>
#include <vector>

namespace cgt {

struct SafetyConfig {
  double tau_rel = 0.08;   // sensitivity ratio threshold
  double tau_alpha = 0.01; // gate-separation threshold
  double epsilon = 1e-8;
  bool hard_mode = false;  // hard fallback instead of soft scaling
  int batch_size = 16;     // permutation granularity on the calibration prefix
  AggregateRule rule = AggregateRule::Mean;
  int topk = 1;
  int mc_samples = 4;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SafetyDiagnostics {
  double R = 0.0;  // permutation sensitivity of the aggregated blended score
  double M = 0.0;  // mean gate separation over targets
  double gamma_base = 0.0;
  double gamma_used = 0.0;
  bool hard_mode = false;
  bool triggered = false;  // R > tau_rel or M < tau_alpha
  std::vector<bool> fallback_flags;  // per target: separation below tau_alpha
  double fallback_fraction = 0.0;
  int degenerate_batches = 0;  // size-1 batches where permutation is identity
};

struct PermuteResult {
  TargetBatch batch;
  bool degenerate = false;  // size-1 batch: identity permutation
};

/// One shared within-batch permutation applied to every non-parent column;
/// parent columns and targets stay with their own sample.
PermuteResult permute_non_parents(const TargetBatch& batch, const ParentMask& mask,
                                  std::uint64_t seed);

/// Soft fallback weight: gamma_base * clip((M - tau_alpha)/(1 - tau_alpha), 0, 1).
double soft_gamma(double M, double gamma_base, double tau_alpha);

/// Selects gamma_used on an unlabeled calibration prefix (already scaled).
/// `first_t` is the absolute index of the prefix's first row.
SafetyDiagnostics compute_safety(const std::vector<BlockParams>& blocks,
                                 const SeriesFrame& calib,
                                 const std::vector<ParentMask>& masks, double gamma_base,
                                 const SafetyConfig& cfg, int first_t = 0);

/// Text report plus machine-readable key=value file.
void write_safety_report(const std::string& kv_path, const std::string& text_path,
                         const SafetyDiagnostics& diag, const SafetyConfig& cfg);

}  // namespace cgt
