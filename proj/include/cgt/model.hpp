#pragma once

#include "cgt/autodiff.hpp"
#include "cgt/graph.hpp"
#include "cgt/rng.hpp"
#include "cgt/series.hpp"

#include <string>
#include <vector>

namespace cgt {

struct ModelConfig {
  int window = 30;
  int tau_max = 7;
  int dims = 0;  // D, number of channels
  int d_model = 64;
  int n_heads = 2;
  int n_layers = 2;
  int d_ff = 128;
  int d_z = 8;
  int mc_samples = 4;  // S
  double logvar_lo = -8.0;
  double logvar_hi = 8.0;
  bool sinusoidal_position = false;

  int feature_columns() const { return dims * tau_max; }  // P
  void validate() const;
};

enum class ParamGroup { Trunk, Latent, CausalHead, ResidualHead, Gate };

struct Tensor {
  std::string name;
  ParamGroup group;
  Mat value;
  Mat grad;  // accumulated by the trainer; same shape as value
};

struct EncoderLayerIdx {
  int ln1_g, ln1_b;
  int wq, bq, wk, bk, wv, bv, wo, bo;
  int ln2_g, ln2_b;
  int w1, b1, w2, b2;
};

struct BlockIdx {
  int ln_in_g, ln_in_b;
  int w_proj, b_proj;
  std::vector<EncoderLayerIdx> layers;
  int ln_f_g, ln_f_b;
  int prior_w1, prior_b1, prior_w2, prior_b2;
  int post_w1, post_b1, post_w2, post_b2;
  int head_w1, head_b1, head_w2, head_b2;  // causal head
  int res_w1, res_b1, res_w2, res_b2;      // residual (auxiliary) head
  int gate;                                // 1 x P logits
};

/// All parameters of one target's forecasting block. Values live on the
/// float32 grid (snap_f32) so checkpoints round-trip bit-exactly.
struct BlockParams {
  int target = 0;
  ModelConfig cfg;
  std::vector<Tensor> tensors;
  BlockIdx idx;

  Mat& value(int i) { return tensors[i].value; }
  const Mat& value(int i) const { return tensors[i].value; }
  void zero_grads();
  void snap_to_f32();
  RowVec gate_logits() const { return tensors[idx.gate].value.row(0); }
  RowVec gate_alpha() const;  // sigmoid of the logits
};

/// Xavier-uniform trunk, zeroed Gaussian-head output layers (so initial
/// predictions are N(0,1)), gate logits at logit(0.9) for parents and
/// logit(0.05) for non-parents.
BlockParams init_block(const ModelConfig& cfg, int target, const ParentMask& mask,
                       std::uint64_t seed);

/// Tape registration: ids parallel to BlockParams::tensors. With
/// trainable=false every parameter enters as a constant, which turns any
/// forward build into a pure value computation.
struct BlockVars {
  std::vector<ad::Tape::Id> ids;
  ad::Tape::Id operator[](int i) const { return ids[i]; }
};
BlockVars register_block(ad::Tape& tape, const BlockParams& params, bool trainable = true);

/// Adds the tape's gradients into each tensor's grad accumulator.
void accumulate_grads(const ad::Tape& tape, const BlockVars& vars, BlockParams& params);

/// Encoder trunk: LN over features, linear projection, pre-LN transformer
/// layers, final LN; returns the last-row summary (1 x d_model).
ad::Tape::Id trunk_forward(ad::Tape& tape, const BlockVars& vars, const BlockParams& params,
                           ad::Tape::Id x_gated);

struct LatentIds {
  ad::Tape::Id mu, logv;  // 1 x d_z each, logv clamped
};
LatentIds latent_prior(ad::Tape& tape, const BlockVars& vars, const BlockParams& params,
                       ad::Tape::Id h);
LatentIds latent_posterior(ad::Tape& tape, const BlockVars& vars, const BlockParams& params,
                           ad::Tape::Id h, double y);

struct HeadIds {
  ad::Tape::Id mu, logv;  // 1 x 1 each, logv clamped
};
HeadIds causal_head(ad::Tape& tape, const BlockVars& vars, const BlockParams& params,
                    ad::Tape::Id h, ad::Tape::Id z);
/// Residual corrections (delta_mu, delta_logv) from u_o = [h_o; z]; the
/// caller supplies u_o as a detached node per the stop-gradient contract.
HeadIds residual_head(ad::Tape& tape, const BlockVars& vars, const BlockParams& params,
                      ad::Tape::Id u_o);

/// Value-only trunk run (parameters enter as constants).
RowVec trunk_forward_value(const BlockParams& params, const Mat& x_gated);

struct GaussianPrediction {
  double mu = 0.0;
  double log_v = 0.0;
};

struct SamplePrediction {
  GaussianPrediction causal;
  GaussianPrediction aux;
};

struct InferOutputs {
  RowVec h_c;                             // causal summary
  RowVec h_o;                             // shadow summary (gated input)
  RowVec alpha;                           // sigmoid gate values
  RowVec prior_mu, prior_logv;            // conditional prior
  std::vector<SamplePrediction> samples;  // S entries
};

/// Inference forward: causal trunk under the hard mask, shadow trunk under
/// the gate, S prior samples; each sample yields a (causal, aux) pair
/// sharing h_c and z. Deterministic for a given rng state.
InferOutputs forward_infer(const BlockParams& params, const Mat& X, const ParentMask& mask, int S,
                           Rng& rng);

inline double sigmoid_value(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Checkpoint directory: `manifest` (config + tensor table with shapes,
/// offsets, checksums) and one `block_<i>.bin` of row-major little-endian
/// float32 per block.
void save_checkpoint(const std::vector<BlockParams>& blocks, const std::string& dir);
std::vector<BlockParams> load_checkpoint(const std::string& dir);

}  // namespace cgt
