#include "cgt/model.hpp"

#include "cgt/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace cgt {

void ModelConfig::validate() const {
  if (window < 1 || tau_max < 1 || dims < 1) throw ConfigError("model: W, tau_max, D must be >= 1");
  if (d_model < 1 || n_layers < 0 || d_ff < 1) throw ConfigError("model: bad encoder dimensions");
  if (n_heads < 1 || d_model % n_heads != 0)
    throw ConfigError("model: d_model must be divisible by n_heads");
  if (d_z < 1) throw ConfigError("model: d_z must be >= 1");
  if (mc_samples < 1) throw ConfigError("model: S must be >= 1");
  if (!(logvar_lo < logvar_hi)) throw ConfigError("model: logvar bounds must satisfy lo < hi");
}

void BlockParams::zero_grads() {
  for (auto& t : tensors) t.grad.setZero();
}

void BlockParams::snap_to_f32() {
  for (auto& t : tensors)
    t.value = t.value.unaryExpr([](double v) { return snap_f32(v); });
}

RowVec BlockParams::gate_alpha() const {
  RowVec logits = gate_logits();
  for (int i = 0; i < logits.size(); ++i) logits[i] = sigmoid_value(logits[i]);
  return logits;
}

namespace {

int add_tensor(BlockParams& p, const std::string& name, ParamGroup group, int rows, int cols) {
  Tensor t;
  t.name = name;
  t.group = group;
  t.value = Mat::Zero(rows, cols);
  t.grad = Mat::Zero(rows, cols);
  p.tensors.push_back(std::move(t));
  return static_cast<int>(p.tensors.size()) - 1;
}

void xavier_fill(Mat& m, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-limit, limit);
}

/// Sinusoidal position table (rows are positions, columns alternate sin/cos).
Mat position_encoding(int window, int d_model) {
  Mat pe(window, d_model);
  for (int r = 0; r < window; ++r)
    for (int c = 0; c < d_model; ++c) {
      const double rate = std::pow(10000.0, -2.0 * (c / 2) / static_cast<double>(d_model));
      pe(r, c) = (c % 2 == 0) ? std::sin(r * rate) : std::cos(r * rate);
    }
  return pe;
}

ad::Tape::Id mlp2(ad::Tape& t, const BlockVars& v, int w1, int b1, int w2, int b2,
                  ad::Tape::Id in) {
  auto hidden = t.tanh_act(t.linear(in, v[w1], v[b1]));
  return t.linear(hidden, v[w2], v[b2]);
}

}  // namespace

BlockParams init_block(const ModelConfig& cfg, int target, const ParentMask& mask,
                       std::uint64_t seed) {
  cfg.validate();
  if (target < 0 || target >= cfg.dims)
    throw ConfigError("init_block: target " + std::to_string(target) + " out of range");
  const int P = cfg.feature_columns();
  const int d = cfg.d_model;

  BlockParams p;
  p.target = target;
  p.cfg = cfg;

  p.idx.ln_in_g = add_tensor(p, "trunk.ln_in.gamma", ParamGroup::Trunk, 1, P);
  p.idx.ln_in_b = add_tensor(p, "trunk.ln_in.beta", ParamGroup::Trunk, 1, P);
  p.idx.w_proj = add_tensor(p, "trunk.proj.weight", ParamGroup::Trunk, P, d);
  p.idx.b_proj = add_tensor(p, "trunk.proj.bias", ParamGroup::Trunk, 1, d);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string base = "trunk.layer" + std::to_string(l) + ".";
    EncoderLayerIdx li;
    li.ln1_g = add_tensor(p, base + "ln1.gamma", ParamGroup::Trunk, 1, d);
    li.ln1_b = add_tensor(p, base + "ln1.beta", ParamGroup::Trunk, 1, d);
    li.wq = add_tensor(p, base + "attn.wq", ParamGroup::Trunk, d, d);
    li.bq = add_tensor(p, base + "attn.bq", ParamGroup::Trunk, 1, d);
    li.wk = add_tensor(p, base + "attn.wk", ParamGroup::Trunk, d, d);
    li.bk = add_tensor(p, base + "attn.bk", ParamGroup::Trunk, 1, d);
    li.wv = add_tensor(p, base + "attn.wv", ParamGroup::Trunk, d, d);
    li.bv = add_tensor(p, base + "attn.bv", ParamGroup::Trunk, 1, d);
    li.wo = add_tensor(p, base + "attn.wo", ParamGroup::Trunk, d, d);
    li.bo = add_tensor(p, base + "attn.bo", ParamGroup::Trunk, 1, d);
    li.ln2_g = add_tensor(p, base + "ln2.gamma", ParamGroup::Trunk, 1, d);
    li.ln2_b = add_tensor(p, base + "ln2.beta", ParamGroup::Trunk, 1, d);
    li.w1 = add_tensor(p, base + "ffn.w1", ParamGroup::Trunk, d, cfg.d_ff);
    li.b1 = add_tensor(p, base + "ffn.b1", ParamGroup::Trunk, 1, cfg.d_ff);
    li.w2 = add_tensor(p, base + "ffn.w2", ParamGroup::Trunk, cfg.d_ff, d);
    li.b2 = add_tensor(p, base + "ffn.b2", ParamGroup::Trunk, 1, d);
    p.idx.layers.push_back(li);
  }
  p.idx.ln_f_g = add_tensor(p, "trunk.ln_f.gamma", ParamGroup::Trunk, 1, d);
  p.idx.ln_f_b = add_tensor(p, "trunk.ln_f.beta", ParamGroup::Trunk, 1, d);

  p.idx.prior_w1 = add_tensor(p, "latent.prior.w1", ParamGroup::Latent, d, d);
  p.idx.prior_b1 = add_tensor(p, "latent.prior.b1", ParamGroup::Latent, 1, d);
  p.idx.prior_w2 = add_tensor(p, "latent.prior.w2", ParamGroup::Latent, d, 2 * cfg.d_z);
  p.idx.prior_b2 = add_tensor(p, "latent.prior.b2", ParamGroup::Latent, 1, 2 * cfg.d_z);
  p.idx.post_w1 = add_tensor(p, "latent.post.w1", ParamGroup::Latent, d + 1, d);
  p.idx.post_b1 = add_tensor(p, "latent.post.b1", ParamGroup::Latent, 1, d);
  p.idx.post_w2 = add_tensor(p, "latent.post.w2", ParamGroup::Latent, d, 2 * cfg.d_z);
  p.idx.post_b2 = add_tensor(p, "latent.post.b2", ParamGroup::Latent, 1, 2 * cfg.d_z);

  p.idx.head_w1 = add_tensor(p, "head.causal.w1", ParamGroup::CausalHead, d + cfg.d_z, d);
  p.idx.head_b1 = add_tensor(p, "head.causal.b1", ParamGroup::CausalHead, 1, d);
  p.idx.head_w2 = add_tensor(p, "head.causal.w2", ParamGroup::CausalHead, d, 2);
  p.idx.head_b2 = add_tensor(p, "head.causal.b2", ParamGroup::CausalHead, 1, 2);

  p.idx.res_w1 = add_tensor(p, "head.residual.w1", ParamGroup::ResidualHead, d + cfg.d_z, d);
  p.idx.res_b1 = add_tensor(p, "head.residual.b1", ParamGroup::ResidualHead, 1, d);
  p.idx.res_w2 = add_tensor(p, "head.residual.w2", ParamGroup::ResidualHead, d, 2);
  p.idx.res_b2 = add_tensor(p, "head.residual.b2", ParamGroup::ResidualHead, 1, 2);

  p.idx.gate = add_tensor(p, "gate.logits", ParamGroup::Gate, 1, P);

  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(target)}));
  p.value(p.idx.ln_in_g).setOnes();
  xavier_fill(p.value(p.idx.w_proj), rng);
  for (auto& li : p.idx.layers) {
    p.value(li.ln1_g).setOnes();
    p.value(li.ln2_g).setOnes();
    xavier_fill(p.value(li.wq), rng);
    xavier_fill(p.value(li.wk), rng);
    xavier_fill(p.value(li.wv), rng);
    xavier_fill(p.value(li.wo), rng);
    xavier_fill(p.value(li.w1), rng);
    xavier_fill(p.value(li.w2), rng);
  }
  p.value(p.idx.ln_f_g).setOnes();
  xavier_fill(p.value(p.idx.prior_w1), rng);
  xavier_fill(p.value(p.idx.post_w1), rng);
  xavier_fill(p.value(p.idx.head_w1), rng);
  xavier_fill(p.value(p.idx.res_w1), rng);
  // Output layers of every Gaussian producer stay zero so the model starts
  // at mu=0, log v=0.

  Mat& gate = p.value(p.idx.gate);
  const double parent_logit = std::log(0.9 / 0.1);
  const double other_logit = std::log(0.05 / 0.95);
  if (mask.pi.size() != 0 && mask.pi.size() != P)
    throw ConfigError("init_block: parent mask has wrong length");
  for (int c = 0; c < P; ++c) {
    const bool is_parent = mask.pi.size() == P && mask.pi[c] != 0.0;
    gate(0, c) = is_parent ? parent_logit : other_logit;
  }

  p.snap_to_f32();
  return p;
}

BlockVars register_block(ad::Tape& tape, const BlockParams& params, bool trainable) {
  BlockVars v;
  v.ids.reserve(params.tensors.size());
  for (const auto& t : params.tensors)
    v.ids.push_back(trainable ? tape.leaf(t.value) : tape.constant(t.value));
  return v;
}

void accumulate_grads(const ad::Tape& tape, const BlockVars& vars, BlockParams& params) {
  for (std::size_t i = 0; i < vars.ids.size(); ++i) params.tensors[i].grad += tape.grad(vars.ids[i]);
}

ad::Tape::Id trunk_forward(ad::Tape& tape, const BlockVars& v, const BlockParams& p,
                           ad::Tape::Id x_gated) {
  const auto& cfg = p.cfg;
  if (tape.val(x_gated).rows() != cfg.window || tape.val(x_gated).cols() != cfg.feature_columns())
    throw Error("trunk_forward: input must be W x P");
  auto normed = tape.layer_norm(x_gated, v[p.idx.ln_in_g], v[p.idx.ln_in_b]);
  auto x = tape.linear(normed, v[p.idx.w_proj], v[p.idx.b_proj]);
  if (cfg.sinusoidal_position)
    x = tape.add(x, tape.constant(position_encoding(cfg.window, cfg.d_model)));

  const int dh = cfg.d_model / cfg.n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& li : p.idx.layers) {
    auto u = tape.layer_norm(x, v[li.ln1_g], v[li.ln1_b]);
    auto q = tape.linear(u, v[li.wq], v[li.bq]);
    auto k = tape.linear(u, v[li.wk], v[li.bk]);
    auto val = tape.linear(u, v[li.wv], v[li.bv]);
    ad::Tape::Id mixed = -1;
    for (int h = 0; h < cfg.n_heads; ++h) {
      auto qs = tape.cols(q, h * dh, dh);
      auto ks = tape.cols(k, h * dh, dh);
      auto vs = tape.cols(val, h * dh, dh);
      auto attn = tape.softmax_rows(tape.scale(tape.matmul_nt(qs, ks), inv_sqrt_dh));
      auto out = tape.matmul(attn, vs);
      mixed = (h == 0) ? out : tape.concat_cols(mixed, out);
    }
    x = tape.add(x, tape.linear(mixed, v[li.wo], v[li.bo]));
    auto w = tape.layer_norm(x, v[li.ln2_g], v[li.ln2_b]);
    auto ffn = tape.linear(tape.gelu(tape.linear(w, v[li.w1], v[li.b1])), v[li.w2], v[li.b2]);
    x = tape.add(x, ffn);
  }
  auto final_norm = tape.layer_norm(x, v[p.idx.ln_f_g], v[p.idx.ln_f_b]);
  return tape.row(final_norm, cfg.window - 1);
}

LatentIds latent_prior(ad::Tape& tape, const BlockVars& v, const BlockParams& p, ad::Tape::Id h) {
  auto out = mlp2(tape, v, p.idx.prior_w1, p.idx.prior_b1, p.idx.prior_w2, p.idx.prior_b2, h);
  LatentIds ids;
  ids.mu = tape.cols(out, 0, p.cfg.d_z);
  ids.logv = tape.clamp(tape.cols(out, p.cfg.d_z, p.cfg.d_z), p.cfg.logvar_lo, p.cfg.logvar_hi);
  return ids;
}

LatentIds latent_posterior(ad::Tape& tape, const BlockVars& v, const BlockParams& p, ad::Tape::Id h,
                           double y) {
  Mat y_mat(1, 1);
  y_mat(0, 0) = y;
  auto in = tape.concat_cols(h, tape.constant(y_mat));
  auto out = mlp2(tape, v, p.idx.post_w1, p.idx.post_b1, p.idx.post_w2, p.idx.post_b2, in);
  LatentIds ids;
  ids.mu = tape.cols(out, 0, p.cfg.d_z);
  ids.logv = tape.clamp(tape.cols(out, p.cfg.d_z, p.cfg.d_z), p.cfg.logvar_lo, p.cfg.logvar_hi);
  return ids;
}

HeadIds causal_head(ad::Tape& tape, const BlockVars& v, const BlockParams& p, ad::Tape::Id h,
                    ad::Tape::Id z) {
  auto u = tape.concat_cols(h, z);
  auto out = mlp2(tape, v, p.idx.head_w1, p.idx.head_b1, p.idx.head_w2, p.idx.head_b2, u);
  HeadIds ids;
  ids.mu = tape.cols(out, 0, 1);
  ids.logv = tape.clamp(tape.cols(out, 1, 1), p.cfg.logvar_lo, p.cfg.logvar_hi);
  return ids;
}

HeadIds residual_head(ad::Tape& tape, const BlockVars& v, const BlockParams& p, ad::Tape::Id u_o) {
  auto out = mlp2(tape, v, p.idx.res_w1, p.idx.res_b1, p.idx.res_w2, p.idx.res_b2, u_o);
  HeadIds ids;
  ids.mu = tape.cols(out, 0, 1);     // delta mu, unclamped
  ids.logv = tape.cols(out, 1, 1);   // delta log v; the sum is clamped
  return ids;
}

RowVec trunk_forward_value(const BlockParams& params, const Mat& x_gated) {
  ad::Tape tape(128);
  auto vars = register_block(tape, params, /*trainable=*/false);
  auto h = trunk_forward(tape, vars, params, tape.constant(x_gated));
  return tape.val(h).row(0);
}

InferOutputs forward_infer(const BlockParams& params, const Mat& X, const ParentMask& mask, int S,
                           Rng& rng) {
  const auto& cfg = params.cfg;
  if (mask.pi.size() != cfg.feature_columns())
    throw Error("forward_infer: mask length mismatch");
  if (S < 1) throw Error("forward_infer: S must be >= 1");

  ad::Tape tape(256);
  auto vars = register_block(tape, params, /*trainable=*/false);
  auto x = tape.constant(X);
  RowVec pi_row = mask.pi.transpose();
  auto h_c = trunk_forward(tape, vars, params, tape.scale_columns(x, pi_row));
  auto prior = latent_prior(tape, vars, params, h_c);

  InferOutputs out;
  out.h_c = tape.val(h_c).row(0);
  out.prior_mu = tape.val(prior.mu).row(0);
  out.prior_logv = tape.val(prior.logv).row(0);
  out.alpha = params.gate_alpha();
  auto h_o = trunk_forward(tape, vars, params, tape.scale_columns(x, out.alpha));
  out.h_o = tape.val(h_o).row(0);

  out.samples.reserve(S);
  for (int s = 0; s < S; ++s) {
    RowVec eps = rng.normal_vec(cfg.d_z).transpose();
    RowVec z =
        (out.prior_mu.array() + (out.prior_logv.array() * 0.5).exp() * eps.array()).matrix();
    auto z_id = tape.constant(z);
    auto head = causal_head(tape, vars, params, h_c, z_id);
    SamplePrediction sp;
    sp.causal.mu = tape.scalar(head.mu);
    sp.causal.log_v = tape.scalar(head.logv);
    Mat u_o(1, cfg.d_model + cfg.d_z);
    u_o << out.h_o, z;
    auto res = residual_head(tape, vars, params, tape.constant(u_o));
    sp.aux.mu = sp.causal.mu + tape.scalar(res.mu);
    sp.aux.log_v =
        std::clamp(sp.causal.log_v + tape.scalar(res.logv), cfg.logvar_lo, cfg.logvar_hi);
    out.samples.push_back(sp);
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpointing

namespace {

std::vector<float> tensor_to_f32(const Mat& m) {
  std::vector<float> out;
  out.reserve(static_cast<std::size_t>(m.size()));
  for (int r = 0; r < m.rows(); ++r)
    for (int c = 0; c < m.cols(); ++c) out.push_back(static_cast<float>(m(r, c)));
  return out;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void save_checkpoint(const std::vector<BlockParams>& blocks, const std::string& dir) {
  if (blocks.empty()) throw CheckpointError("save_checkpoint: no blocks");
  std::filesystem::create_directories(dir);
  const auto& cfg = blocks.front().cfg;
  KeyValueWriter manifest((std::filesystem::path(dir) / "manifest").string());
  manifest.put("format", 1);
  manifest.put("dtype", std::string("f32"));
  manifest.put("blocks", static_cast<int>(blocks.size()));
  manifest.put("model.window", cfg.window);
  manifest.put("model.tau_max", cfg.tau_max);
  manifest.put("model.dims", cfg.dims);
  manifest.put("model.d_model", cfg.d_model);
  manifest.put("model.n_heads", cfg.n_heads);
  manifest.put("model.n_layers", cfg.n_layers);
  manifest.put("model.d_ff", cfg.d_ff);
  manifest.put("model.d_z", cfg.d_z);
  manifest.put("model.mc_samples", cfg.mc_samples);
  manifest.put("model.logvar_lo", cfg.logvar_lo);
  manifest.put("model.logvar_hi", cfg.logvar_hi);
  manifest.put("model.positional", std::string(cfg.sinusoidal_position ? "sinusoidal" : "none"));

  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& block = blocks[b];
    if (block.target != static_cast<int>(b))
      throw CheckpointError("save_checkpoint: blocks must be ordered by target");
    const auto bin_path = std::filesystem::path(dir) / ("block_" + std::to_string(b) + ".bin");
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw CheckpointError("save_checkpoint: cannot write " + bin_path.string());
    std::size_t offset = 0;
    for (const auto& t : block.tensors) {
      const auto data = tensor_to_f32(t.value);
      const std::size_t bytes = data.size() * sizeof(float);
      bin.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(bytes));
      const std::uint64_t sum = fnv1a64(data.data(), bytes);
      manifest.put("tensor." + std::to_string(b) + "." + t.name,
                   std::to_string(t.value.rows()) + "x" + std::to_string(t.value.cols()) + ":" +
                       std::to_string(offset) + ":" + hex64(sum));
      offset += bytes;
    }
  }
}

std::vector<BlockParams> load_checkpoint(const std::string& dir) {
  const auto manifest_path = (std::filesystem::path(dir) / "manifest").string();
  if (!std::filesystem::exists(manifest_path))
    throw CheckpointError("load_checkpoint: missing manifest in " + dir);
  auto kv = read_key_values(manifest_path);
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw CheckpointError("load_checkpoint: manifest missing key " + key);
    return it->second;
  };
  if (get("format") != "1")
    throw CheckpointError("load_checkpoint: unsupported format version " + get("format"));
  if (get("dtype") != "f32")
    throw CheckpointError("load_checkpoint: unsupported dtype " + get("dtype"));

  ModelConfig cfg;
  cfg.window = std::stoi(get("model.window"));
  cfg.tau_max = std::stoi(get("model.tau_max"));
  cfg.dims = std::stoi(get("model.dims"));
  cfg.d_model = std::stoi(get("model.d_model"));
  cfg.n_heads = std::stoi(get("model.n_heads"));
  cfg.n_layers = std::stoi(get("model.n_layers"));
  cfg.d_ff = std::stoi(get("model.d_ff"));
  cfg.d_z = std::stoi(get("model.d_z"));
  cfg.mc_samples = std::stoi(get("model.mc_samples"));
  cfg.logvar_lo = parse_kv_double(kv, "model.logvar_lo", "manifest");
  cfg.logvar_hi = parse_kv_double(kv, "model.logvar_hi", "manifest");
  cfg.sinusoidal_position = get("model.positional") == "sinusoidal";
  cfg.validate();
  const int n_blocks = std::stoi(get("blocks"));
  if (n_blocks != cfg.dims)
    throw CheckpointError("load_checkpoint: block count does not match model dims");

  std::vector<BlockParams> blocks;
  ParentMask no_mask;  // gate logits are overwritten from the file
  for (int b = 0; b < n_blocks; ++b) {
    BlockParams block = init_block(cfg, b, no_mask, 0);
    const auto bin_path = std::filesystem::path(dir) / ("block_" + std::to_string(b) + ".bin");
    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw CheckpointError("load_checkpoint: missing " + bin_path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(bin)),
                            std::istreambuf_iterator<char>());
    for (auto& t : block.tensors) {
      const std::string key = "tensor." + std::to_string(b) + "." + t.name;
      const std::string& entry = get(key);
      // <rows>x<cols>:<offset>:<checksum>
      const auto colon1 = entry.find(':');
      const auto colon2 = entry.find(':', colon1 + 1);
      const auto x_pos = entry.find('x');
      if (colon1 == std::string::npos || colon2 == std::string::npos || x_pos > colon1)
        throw CheckpointError("load_checkpoint: malformed entry for " + key);
      const int rows = std::stoi(entry.substr(0, x_pos));
      const int cols = std::stoi(entry.substr(x_pos + 1, colon1 - x_pos - 1));
      const std::size_t offset = std::stoull(entry.substr(colon1 + 1, colon2 - colon1 - 1));
      const std::string checksum = entry.substr(colon2 + 1);
      if (rows != t.value.rows() || cols != t.value.cols())
        throw CheckpointError("load_checkpoint: shape mismatch for parameter " + t.name);
      const std::size_t n_bytes = static_cast<std::size_t>(rows) * cols * sizeof(float);
      if (offset + n_bytes > bytes.size())
        throw CheckpointError("load_checkpoint: truncated data for parameter " + t.name);
      const char* src = bytes.data() + offset;
      if (hex64(fnv1a64(src, n_bytes)) != checksum)
        throw CheckpointError("load_checkpoint: checksum mismatch for parameter " + t.name);
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
          float f;
          std::memcpy(&f, src + (static_cast<std::size_t>(r) * cols + c) * sizeof(float),
                      sizeof(float));
          t.value(r, c) = static_cast<double>(f);
        }
    }
    blocks.push_back(std::move(block));
  }
  return blocks;
}

}  // namespace cgt
