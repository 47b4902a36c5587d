#include "cgt/autodiff.hpp"

#include <cmath>
#include <numbers>

namespace cgt::ad {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727417803297364;  // 0.5 * log(2*pi)
constexpr double kInvSqrt2 = std::numbers::sqrt2 / 2.0;
constexpr double kInvSqrt2Pi = 0.3989422804014326779399461;  // 1 / sqrt(2*pi)

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void check_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                std::to_string(b.cols()));
  }
}

}  // namespace

double gaussian_nll_value(double y, double mu, double log_v) {
  const double d = y - mu;
  return kHalfLog2Pi + 0.5 * (log_v + d * d * std::exp(-log_v));
}

double kl_diag_gaussian_value(const RowVec& mu_q, const RowVec& logv_q, const RowVec& mu_p,
                              const RowVec& logv_p) {
  double acc = 0.0;
  for (int k = 0; k < mu_q.size(); ++k) {
    const double dm = mu_q[k] - mu_p[k];
    acc += logv_p[k] - logv_q[k] +
           (std::exp(logv_q[k]) + dm * dm) * std::exp(-logv_p[k]) - 1.0;
  }
  return 0.5 * acc;
}

Tape::Tape(std::size_t reserve_nodes) { nodes_.reserve(reserve_nodes); }

Tape::Id Tape::push(Mat value, bool needs_grad, std::function<void(Tape&, int)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

void Tape::accum(Id parent, const Mat& delta) {
  Node& p = nodes_[parent];
  if (!p.needs_grad) return;
  if (!p.seen) {
    p.seen = true;
    p.grad = delta;
  } else {
    p.grad += delta;
  }
}

Mat Tape::grad(Id id) const {
  const Node& n = nodes_[id];
  if (n.seen && n.grad.size() > 0) return n.grad;
  return Mat::Zero(n.value.rows(), n.value.cols());
}

void Tape::backward(Id loss) {
  Node& top = nodes_[loss];
  if (top.value.rows() != 1 || top.value.cols() != 1) {
    throw Error("backward: loss node must be 1x1");
  }
  for (Node& n : nodes_) {
    n.seen = false;
    n.grad.resize(0, 0);
  }
  if (!top.needs_grad) return;  // fully detached objective
  top.seen = true;
  top.grad = Mat::Ones(1, 1);
  for (Id id = loss; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.seen && n.back) n.back(*this, id);
  }
}

Tape::Id Tape::constant(Mat v) { return push(std::move(v), false, nullptr); }

Tape::Id Tape::constant_scalar(double v) {
  Mat m(1, 1);
  m(0, 0) = v;
  return push(std::move(m), false, nullptr);
}

Tape::Id Tape::leaf(const Mat& v) { return push(v, true, nullptr); }

Tape::Id Tape::stop_gradient(Id x) { return push(nodes_[x].value, false, nullptr); }

Tape::Id Tape::add(Id a, Id b) {
  check_same_shape(val(a), val(b), "add");
  return push(val(a) + val(b), tracked(a) || tracked(b), [a, b](Tape& t, int self) {
    const Mat& g = t.node_grad(self);
    t.accum(a, g);
    t.accum(b, g);
  });
}

Tape::Id Tape::sub(Id a, Id b) {
  check_same_shape(val(a), val(b), "sub");
  return push(val(a) - val(b), tracked(a) || tracked(b), [a, b](Tape& t, int self) {
    const Mat& g = t.node_grad(self);
    t.accum(a, g);
    t.accum(b, Mat(-g));
  });
}

Tape::Id Tape::mul(Id a, Id b) {
  check_same_shape(val(a), val(b), "mul");
  return push(val(a).cwiseProduct(val(b)), tracked(a) || tracked(b),
              [a, b](Tape& t, int self) {
                const Mat& g = t.node_grad(self);
                t.accum(a, g.cwiseProduct(t.val(b)));
                t.accum(b, g.cwiseProduct(t.val(a)));
              });
}

Tape::Id Tape::scale(Id a, double c) {
  return push(val(a) * c, tracked(a), [a, c](Tape& t, int self) {
    t.accum(a, Mat(t.node_grad(self) * c));
  });
}

Tape::Id Tape::affine(Id x, double c1, double c0) {
  return push(Mat((val(x).array() * c1 + c0).matrix()), tracked(x),
              [x, c1](Tape& t, int self) { t.accum(x, Mat(t.node_grad(self) * c1)); });
}

Tape::Id Tape::matmul(Id a, Id b) {
  if (val(a).cols() != val(b).rows()) throw Error("matmul: inner dimension mismatch");
  return push(val(a) * val(b), tracked(a) || tracked(b), [a, b](Tape& t, int self) {
    const Mat& g = t.node_grad(self);
    t.accum(a, g * t.val(b).transpose());
    t.accum(b, t.val(a).transpose() * g);
  });
}

Tape::Id Tape::matmul_nt(Id a, Id b) {
  if (val(a).cols() != val(b).cols()) throw Error("matmul_nt: inner dimension mismatch");
  return push(val(a) * val(b).transpose(), tracked(a) || tracked(b),
              [a, b](Tape& t, int self) {
                const Mat& g = t.node_grad(self);
                t.accum(a, g * t.val(b));
                t.accum(b, g.transpose() * t.val(a));
              });
}

Tape::Id Tape::linear(Id x, Id w, Id b) {
  if (val(x).cols() != val(w).rows()) throw Error("linear: inner dimension mismatch");
  if (val(b).rows() != 1 || val(b).cols() != val(w).cols()) {
    throw Error("linear: bias must be 1 x out_dim");
  }
  Mat y = val(x) * val(w);
  y.rowwise() += val(b).row(0);
  return push(std::move(y), tracked(x) || tracked(w) || tracked(b),
              [x, w, b](Tape& t, int self) {
                const Mat& g = t.node_grad(self);
                t.accum(x, g * t.val(w).transpose());
                t.accum(w, t.val(x).transpose() * g);
                t.accum(b, Mat(g.colwise().sum()));
              });
}

Tape::Id Tape::cols(Id x, int start, int n) {
  if (start < 0 || n <= 0 || start + n > val(x).cols()) throw Error("cols: slice out of range");
  return push(val(x).middleCols(start, n), tracked(x), [x, start, n](Tape& t, int self) {
    Mat d = Mat::Zero(t.val(x).rows(), t.val(x).cols());
    d.middleCols(start, n) = t.node_grad(self);
    t.accum(x, d);
  });
}

Tape::Id Tape::row(Id x, int r) {
  if (r < 0 || r >= val(x).rows()) throw Error("row: index out of range");
  return push(val(x).row(r), tracked(x), [x, r](Tape& t, int self) {
    Mat d = Mat::Zero(t.val(x).rows(), t.val(x).cols());
    d.row(r) = t.node_grad(self);
    t.accum(x, d);
  });
}

Tape::Id Tape::concat_cols(Id a, Id b) {
  if (val(a).rows() != val(b).rows()) throw Error("concat_cols: row count mismatch");
  const int ca = static_cast<int>(val(a).cols());
  const int cb = static_cast<int>(val(b).cols());
  Mat y(val(a).rows(), ca + cb);
  y.leftCols(ca) = val(a);
  y.rightCols(cb) = val(b);
  return push(std::move(y), tracked(a) || tracked(b), [a, b, ca, cb](Tape& t, int self) {
    const Mat& g = t.node_grad(self);
    t.accum(a, g.leftCols(ca));
    t.accum(b, g.rightCols(cb));
  });
}

Tape::Id Tape::scale_columns(Id x, const RowVec& gain) {
  if (gain.size() != val(x).cols()) throw Error("scale_columns: gain size mismatch");
  Mat y = val(x);
  y.array().rowwise() *= gain.array();
  return push(std::move(y), tracked(x), [x, gain](Tape& t, int self) {
    Mat d = t.node_grad(self);
    d.array().rowwise() *= gain.array();
    t.accum(x, d);
  });
}

Tape::Id Tape::layer_norm(Id x, Id gamma, Id beta, double eps) {
  const Mat& v = val(x);
  const int rows = static_cast<int>(v.rows());
  const int c = static_cast<int>(v.cols());
  if (val(gamma).rows() != 1 || val(gamma).cols() != c || val(beta).rows() != 1 ||
      val(beta).cols() != c) {
    throw Error("layer_norm: gamma/beta must be 1 x cols");
  }
  Mat xhat(rows, c);
  Vec inv_std(rows);
  for (int r = 0; r < rows; ++r) {
    const double m = v.row(r).mean();
    const double var = (v.row(r).array() - m).square().mean();
    const double s = std::sqrt(var + eps);
    inv_std[r] = 1.0 / s;
    xhat.row(r) = (v.row(r).array() - m) / s;
  }
  Mat y = xhat;
  y.array().rowwise() *= val(gamma).row(0).array();
  y.rowwise() += val(beta).row(0);
  return push(std::move(y), tracked(x) || tracked(gamma) || tracked(beta),
              [x, gamma, beta, xhat, inv_std](Tape& t, int self) {
                const Mat& g = t.node_grad(self);
                t.accum(gamma, Mat(g.cwiseProduct(xhat).colwise().sum()));
                t.accum(beta, Mat(g.colwise().sum()));
                if (!t.tracked(x)) return;
                Mat dx(g.rows(), g.cols());
                const auto gm = t.val(gamma).row(0).array();
                for (int r = 0; r < g.rows(); ++r) {
                  const Eigen::ArrayXd dxhat = g.row(r).array() * gm;
                  const double mean_d = dxhat.mean();
                  const double mean_dx = (dxhat * xhat.row(r).array().transpose()).mean();
                  dx.row(r) =
                      ((dxhat - mean_d - xhat.row(r).array().transpose() * mean_dx) * inv_std[r])
                          .matrix();
                }
                t.accum(x, dx);
              });
}

Tape::Id Tape::softmax_rows(Id x) {
  const Mat& v = val(x);
  Mat y(v.rows(), v.cols());
  for (int r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    Eigen::ArrayXd e = (v.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  return push(std::move(y), tracked(x), [x](Tape& t, int self) {
    const Mat& g = t.node_grad(self);
    const Mat& y = t.val(self);
    Mat dx(g.rows(), g.cols());
    for (int r = 0; r < g.rows(); ++r) {
      const double dot = g.row(r).dot(y.row(r));
      dx.row(r) = y.row(r).cwiseProduct(g.row(r) - RowVec::Constant(g.cols(), dot));
    }
    t.accum(x, dx);
  });
}

Tape::Id Tape::gelu(Id x) {
  Mat y = val(x).unaryExpr(
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
  return push(std::move(y), tracked(x), [x](Tape& t, int self) {
    const Mat& v = t.val(x);
    Mat d = v.unaryExpr([](double a) {
      const double phi = 0.5 * (1.0 + std::erf(a * kInvSqrt2));
      const double pdf = kInvSqrt2Pi * std::exp(-0.5 * a * a);
      return phi + a * pdf;
    });
    t.accum(x, Mat(t.node_grad(self).cwiseProduct(d)));
  });
}

Tape::Id Tape::tanh_act(Id x) {
  Mat y = val(x).array().tanh().matrix();
  return push(std::move(y), tracked(x), [x](Tape& t, int self) {
    const Mat& y = t.val(self);
    t.accum(x, Mat(t.node_grad(self).cwiseProduct(
                   (1.0 - y.array().square()).matrix())));
  });
}

Tape::Id Tape::sigmoid(Id x) {
  Mat y = val(x).unaryExpr([](double v) { return sigmoid_scalar(v); });
  return push(std::move(y), tracked(x), [x](Tape& t, int self) {
    const Mat& y = t.val(self);
    t.accum(x, Mat(t.node_grad(self).cwiseProduct(
                   (y.array() * (1.0 - y.array())).matrix())));
  });
}

Tape::Id Tape::relu(Id x) {
  Mat y = val(x).cwiseMax(0.0);
  return push(std::move(y), tracked(x), [x](Tape& t, int self) {
    const Mat& v = t.val(x);
    t.accum(x, Mat(t.node_grad(self).cwiseProduct(
                   v.unaryExpr([](double a) { return a > 0.0 ? 1.0 : 0.0; }))));
  });
}

Tape::Id Tape::clamp(Id x, double lo, double hi) {
  if (!(lo < hi)) throw Error("clamp: lo must be < hi");
  Mat y = val(x).cwiseMax(lo).cwiseMin(hi);
  // Gradient passes only where the input is strictly inside the interval.
  return push(std::move(y), tracked(x), [x, lo, hi](Tape& t, int self) {
    const Mat& v = t.val(x);
    t.accum(x, Mat(t.node_grad(self).cwiseProduct(v.unaryExpr(
                   [lo, hi](double a) { return (a > lo && a < hi) ? 1.0 : 0.0; }))));
  });
}

Tape::Id Tape::square(Id x) {
  Mat y = val(x).array().square().matrix();
  return push(std::move(y), tracked(x), [x](Tape& t, int self) {
    t.accum(x, Mat(2.0 * t.node_grad(self).cwiseProduct(t.val(x))));
  });
}

Tape::Id Tape::sum_all(Id x) {
  Mat y(1, 1);
  y(0, 0) = val(x).sum();
  return push(std::move(y), tracked(x), [x](Tape& t, int self) {
    const double g = t.node_grad(self)(0, 0);
    t.accum(x, Mat(Mat::Constant(t.val(x).rows(), t.val(x).cols(), g)));
  });
}

Tape::Id Tape::mean_all(Id x) {
  const double n = static_cast<double>(val(x).size());
  Mat y(1, 1);
  y(0, 0) = val(x).sum() / n;
  return push(std::move(y), tracked(x), [x, n](Tape& t, int self) {
    const double g = t.node_grad(self)(0, 0) / n;
    t.accum(x, Mat(Mat::Constant(t.val(x).rows(), t.val(x).cols(), g)));
  });
}

Tape::Id Tape::dot_const(Id x, const Mat& w) {
  check_same_shape(val(x), w, "dot_const");
  Mat y(1, 1);
  y(0, 0) = val(x).cwiseProduct(w).sum();
  return push(std::move(y), tracked(x), [x, w](Tape& t, int self) {
    t.accum(x, Mat(w * t.node_grad(self)(0, 0)));
  });
}

Tape::Id Tape::lincomb(const std::vector<std::pair<Id, double>>& terms) {
  double acc = 0.0;
  bool needs = false;
  for (const auto& [id, c] : terms) {
    if (val(id).rows() != 1 || val(id).cols() != 1) throw Error("lincomb: terms must be 1x1");
    acc += c * val(id)(0, 0);
    needs = needs || tracked(id);
  }
  Mat y(1, 1);
  y(0, 0) = acc;
  return push(std::move(y), needs, [terms](Tape& t, int self) {
    const double g = t.node_grad(self)(0, 0);
    for (const auto& [id, c] : terms) {
      if (c == 0.0) continue;  // keeps zero-weight subgraphs out of the backward pass
      Mat d(1, 1);
      d(0, 0) = g * c;
      t.accum(id, d);
    }
  });
}

Tape::Id Tape::reparam_sample(Id mu, Id logv, const RowVec& eps) {
  check_same_shape(val(mu), val(logv), "reparam_sample");
  if (val(mu).rows() != 1 || val(mu).cols() != eps.size()) {
    throw Error("reparam_sample: eps size mismatch");
  }
  Mat y = val(mu);
  y.row(0).array() += (val(logv).row(0).array() * 0.5).exp() * eps.array();
  return push(std::move(y), tracked(mu) || tracked(logv), [mu, logv, eps](Tape& t, int self) {
    const Mat& g = t.node_grad(self);
    t.accum(mu, g);
    // dz/dlogv = 0.5 * exp(logv/2) * eps = 0.5 * (z - mu).
    t.accum(logv, Mat(0.5 * g.cwiseProduct(t.val(self) - t.val(mu))));
  });
}

Tape::Id Tape::gaussian_nll(double y, Id mu, Id logv) {
  if (val(mu).size() != 1 || val(logv).size() != 1) {
    throw Error("gaussian_nll: mu and logv must be 1x1");
  }
  Mat out(1, 1);
  out(0, 0) = gaussian_nll_value(y, val(mu)(0, 0), val(logv)(0, 0));
  return push(std::move(out), tracked(mu) || tracked(logv),
              [y, mu, logv](Tape& t, int self) {
                const double g = t.node_grad(self)(0, 0);
                const double d = y - t.val(mu)(0, 0);
                const double inv_v = std::exp(-t.val(logv)(0, 0));
                Mat dm(1, 1), dv(1, 1);
                dm(0, 0) = -g * d * inv_v;
                dv(0, 0) = g * 0.5 * (1.0 - d * d * inv_v);
                t.accum(mu, dm);
                t.accum(logv, dv);
              });
}

Tape::Id Tape::kl_diag_gaussian(Id mu_q, Id logv_q, Id mu_p, Id logv_p) {
  check_same_shape(val(mu_q), val(logv_q), "kl_diag_gaussian");
  check_same_shape(val(mu_q), val(mu_p), "kl_diag_gaussian");
  check_same_shape(val(mu_q), val(logv_p), "kl_diag_gaussian");
  Mat out(1, 1);
  out(0, 0) = kl_diag_gaussian_value(val(mu_q).row(0), val(logv_q).row(0), val(mu_p).row(0),
                                     val(logv_p).row(0));
  return push(std::move(out),
              tracked(mu_q) || tracked(logv_q) || tracked(mu_p) || tracked(logv_p),
              [mu_q, logv_q, mu_p, logv_p](Tape& t, int self) {
                const double g = t.node_grad(self)(0, 0);
                const auto dm = (t.val(mu_q) - t.val(mu_p)).array();
                const auto ivp = (-t.val(logv_p).array()).exp();
                const auto evq = t.val(logv_q).array().exp();
                t.accum(mu_q, Mat((g * dm * ivp).matrix()));
                t.accum(mu_p, Mat((-g * dm * ivp).matrix()));
                t.accum(logv_q, Mat((g * 0.5 * (evq * ivp - 1.0)).matrix()));
                t.accum(logv_p, Mat((g * 0.5 * (1.0 - (evq + dm.square()) * ivp)).matrix()));
              });
}

Tape::Id Tape::weighted_bce_logits(Id logits, const RowVec& pi, double pos_weight) {
  const Mat& l = val(logits);
  if (l.rows() != 1 || l.cols() != pi.size()) throw Error("weighted_bce_logits: size mismatch");
  double acc = 0.0;
  for (int i = 0; i < pi.size(); ++i) {
    acc += pos_weight * pi[i] * softplus(-l(0, i)) + (1.0 - pi[i]) * softplus(l(0, i));
  }
  Mat out(1, 1);
  out(0, 0) = acc / static_cast<double>(pi.size());
  return push(std::move(out), tracked(logits), [logits, pi, pos_weight](Tape& t, int self) {
    const double g = t.node_grad(self)(0, 0) / static_cast<double>(pi.size());
    const Mat& l = t.val(logits);
    Mat d(1, l.cols());
    for (int i = 0; i < l.cols(); ++i) {
      const double s = sigmoid_scalar(l(0, i));
      d(0, i) = g * (-pos_weight * pi[i] * (1.0 - s) + (1.0 - pi[i]) * s);
    }
    t.accum(logits, d);
  });
}

Tape::Id Tape::group_l2_mean(Id x, int n_groups, int group_size) {
  const Mat& v = val(x);
  if (v.rows() != 1 || v.cols() != static_cast<long>(n_groups) * group_size) {
    throw Error("group_l2_mean: dimension mismatch");
  }
  double acc = 0.0;
  for (int gidx = 0; gidx < n_groups; ++gidx) {
    acc += v.row(0).segment(gidx * group_size, group_size).norm();
  }
  Mat out(1, 1);
  out(0, 0) = acc / static_cast<double>(n_groups);
  return push(std::move(out), tracked(x), [x, n_groups, group_size](Tape& t, int self) {
    const double g = t.node_grad(self)(0, 0) / static_cast<double>(n_groups);
    const Mat& v = t.val(x);
    Mat d = Mat::Zero(1, v.cols());
    for (int gidx = 0; gidx < n_groups; ++gidx) {
      const auto seg = v.row(0).segment(gidx * group_size, group_size);
      const double norm = seg.norm();
      if (norm > 0.0) d.row(0).segment(gidx * group_size, group_size) = (g / norm) * seg;
    }
    t.accum(x, d);
  });
}

}  // namespace cgt::ad
