#pragma once

#include "cgt/common.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace cgt::ad {

/// Reverse-mode tape over dense matrices. Nodes are created by ops and
/// referenced by id; backward() accumulates gradients for every node that
/// (a) transitively depends on a tracked leaf and (b) is reached from the
/// loss. Detached subgraphs (constants, stop_gradient) are never visited,
/// so their derivative contributions are exactly zero.
///
/// A tape is built per evaluation and discarded; it is not thread-safe.
class Tape {
 public:
  using Id = int;

  explicit Tape(std::size_t reserve_nodes = 1024);

  /// Untracked value; gradients never flow into it.
  Id constant(Mat v);
  Id constant_scalar(double v);
  /// Tracked value (parameter or input requiring a gradient).
  Id leaf(const Mat& v);
  /// Value copy of x with the derivative defined to be zero.
  Id stop_gradient(Id x);

  const Mat& val(Id id) const { return nodes_[id].value; }
  double scalar(Id id) const { return nodes_[id].value(0, 0); }
  /// Gradient of the last backward() target w.r.t. node `id` (zero matrix
  /// if the node was never reached).
  Mat grad(Id id) const;

  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);  // elementwise
  Id scale(Id a, double c);
  /// y = c0 + c1 * x elementwise.
  Id affine(Id x, double c1, double c0);
  Id matmul(Id a, Id b);
  Id matmul_nt(Id a, Id b);  // A * B^T
  /// y = x * W + b with the row vector b broadcast over rows.
  Id linear(Id x, Id w, Id b);
  Id cols(Id x, int start, int n);
  Id row(Id x, int r);
  Id concat_cols(Id a, Id b);
  /// Per-column gain by a constant vector (hard masks, detached gates).
  Id scale_columns(Id x, const RowVec& gain);
  /// Row-wise normalization over columns with learnable gamma/beta (1 x C).
  Id layer_norm(Id x, Id gamma, Id beta, double eps = 1e-5);
  Id softmax_rows(Id x);
  Id gelu(Id x);  // exact erf form
  Id tanh_act(Id x);
  Id sigmoid(Id x);
  Id relu(Id x);
  Id clamp(Id x, double lo, double hi);
  Id square(Id x);
  Id sum_all(Id x);
  Id mean_all(Id x);
  /// <x, w> as a 1x1 node, w constant and same shape as x.
  Id dot_const(Id x, const Mat& w);
  /// Weighted sum of 1x1 nodes as a 1x1 node.
  Id lincomb(const std::vector<std::pair<Id, double>>& terms);

  /// z = mu + exp(logv / 2) .* eps with constant noise eps.
  Id reparam_sample(Id mu, Id logv, const RowVec& eps);
  /// 0.5 * (log 2pi + logv + (y - mu)^2 * exp(-logv)); mu, logv are 1x1.
  Id gaussian_nll(double y, Id mu, Id logv);
  /// KL(N(mu_q, e^logv_q) || N(mu_p, e^logv_p)) for diagonal Gaussians (1 x d rows).
  Id kl_diag_gaussian(Id mu_q, Id logv_q, Id mu_p, Id logv_p);
  /// Mean over entries of binary cross-entropy on logits against constant
  /// targets pi in {0,1}, with weight pos_weight on the positive term.
  Id weighted_bce_logits(Id logits, const RowVec& pi, double pos_weight);
  /// (1/G) * sum over G contiguous column groups of size group_size of the
  /// group L2 norm; x is 1 x (G * group_size).
  Id group_l2_mean(Id x, int n_groups, int group_size);

  void backward(Id loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    bool seen = false;
    std::function<void(Tape&, int)> back;
  };

  Id push(Mat value, bool needs_grad, std::function<void(Tape&, int)> back);
  bool tracked(Id id) const { return nodes_[id].needs_grad; }
  /// Accumulates into a parent's gradient, allocating it on first touch.
  void accum(Id parent, const Mat& delta);
  Mat& node_grad(Id id) { return nodes_[id].grad; }

  std::vector<Node> nodes_;

  friend struct TapeTestAccess;
};

/// Scalar helpers shared by tape ops and plain evaluation paths.
double gaussian_nll_value(double y, double mu, double log_v);
double kl_diag_gaussian_value(const RowVec& mu_q, const RowVec& logv_q, const RowVec& mu_p,
                              const RowVec& logv_p);

}  // namespace cgt::ad
