#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "archopt/tensor.hpp"

namespace archopt {

template <typename Scalar>
class Tape;

/// Handle to one recorded value on a tape.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, Index id) : tape_(tape), id_(id) {}

  Tape<Scalar>& tape() const { return *tape_; }
  Index id() const { return id_; }
  const Mat<Scalar>& value() const { return tape_->value(id_); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }

 private:
  Tape<Scalar>* tape_ = nullptr;
  Index id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the
/// recording order is already topological; `backward` walks it in reverse.
/// A tape is built for one step and thrown away.
template <typename Scalar>
class Tape {
 public:
  using Matrix = Mat<Scalar>;

  struct Node {
    std::string_view op;
    std::vector<Index> inputs;
    Matrix value;
    const Matrix* external = nullptr;
    Tensor<Scalar>* leaf = nullptr;
    Matrix grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Node&)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Matrix value) {
    check_finite("constant", value);
    Node& n = nodes_.emplace_back();
    n.op = "constant";
    n.value = std::move(value);
    return {this, static_cast<Index>(nodes_.size()) - 1};
  }

  /// Binds a tensor as a leaf. The tensor is read in place and must outlive
  /// the tape; its gradient receives the accumulated adjoint on backward.
  Var<Scalar> leaf(Tensor<Scalar>& tensor) {
    if (auto it = leaves_.find(&tensor); it != leaves_.end()) return {this, it->second};
    check_finite("leaf", tensor.matrix());
    Node& n = nodes_.emplace_back();
    n.op = "leaf";
    n.external = &tensor.matrix();
    n.leaf = &tensor;
    n.requires_grad = tensor.requires_grad();
    const Index id = static_cast<Index>(nodes_.size()) - 1;
    leaves_.emplace(&tensor, id);
    return {this, id};
  }

  Var<Scalar> record(std::string_view op, std::initializer_list<Var<Scalar>> inputs, Matrix value,
                     std::function<void(Tape&, const Node&)> backward) {
    bool needs_grad = false;
    for (const auto& in : inputs) needs_grad = needs_grad || nodes_[in.id()].requires_grad;
    check_finite(op, value);
    Node& n = nodes_.emplace_back();
    n.op = op;
    n.inputs.reserve(inputs.size());
    for (const auto& in : inputs) n.inputs.push_back(in.id());
    n.value = std::move(value);
    n.requires_grad = needs_grad;
    if (needs_grad) n.backward = std::move(backward);
    return {this, static_cast<Index>(nodes_.size()) - 1};
  }

  const Matrix& value(Index id) const {
    const Node& n = nodes_[id];
    return n.external ? *n.external : n.value;
  }
  bool requires_grad(Index id) const { return nodes_[id].requires_grad; }
  const Matrix& grad(Index id) const { return nodes_[id].grad; }
  const Node& node(Index id) const { return nodes_[id]; }
  std::size_t size() const { return nodes_.size(); }

  template <typename Expr>
  void accumulate(Index id, const Expr& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  /// Propagates d(loss)/d(node) to every node and adds the leaf adjoints to
  /// the bound tensors' gradients.
  void backward(Var<Scalar> loss) {
    if (value(loss.id()).size() != 1) throw Error(ErrorKind::invalid_shape, "backward needs a scalar loss");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    Node& root = nodes_[loss.id()];
    if (!root.requires_grad) return;
    root.grad = Matrix::Ones(1, 1);
    for (Index i = loss.id(); i >= 0; --i) {
      const Node& n = nodes_[i];
      if (n.grad.size() == 0) continue;
      if (!n.grad.allFinite())
        throw Error(ErrorKind::numerical_error,
                    "non-finite gradient at node " + std::to_string(i) + " (" + std::string(n.op) + ")");
      if (n.backward) n.backward(*this, n);
    }
    for (Node& n : nodes_)
      if (n.leaf && n.grad.size() != 0) n.leaf->ensure_grad() += n.grad;
  }

 private:
  void check_finite(std::string_view op, const Matrix& m) const {
    if (!m.allFinite())
      throw Error(ErrorKind::numerical_error,
                  "op '" + std::string(op) + "' (node " + std::to_string(nodes_.size()) +
                      ") produced non-finite values");
  }

  std::deque<Node> nodes_;
  std::unordered_map<const Tensor<Scalar>*, Index> leaves_;
};

namespace detail {

inline Index normalize_axis(int axis) {
  if (axis == -1 || axis == 1) return 1;
  if (axis == 0) return 0;
  throw Error(ErrorKind::invalid_shape, "axis must be 0, 1 or -1");
}

template <typename Scalar>
void require_same_shape(const char* op, const Var<Scalar>& a, const Var<Scalar>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw Error(ErrorKind::invalid_shape, std::string(op) + ": shape mismatch");
}

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (S(1) + (-x).exp()).inverse();
}

template <typename Scalar>
Mat<Scalar> softmax_rows(const Mat<Scalar>& x) {
  Mat<Scalar> y = x.colwise() - x.rowwise().maxCoeff();
  y = y.array().exp().matrix();
  y.array().colwise() /= y.rowwise().sum().array();
  return y;
}

template <typename Scalar>
Mat<Scalar> log_softmax_rows(const Mat<Scalar>& x) {
  Mat<Scalar> shifted = x.colwise() - x.rowwise().maxCoeff();
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> lse = shifted.array().exp().rowwise().sum().log();
  return shifted.colwise() - lse;
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  if (a.cols() != b.rows())
    throw Error(ErrorKind::invalid_shape, "matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                                              std::to_string(b.rows()) + " differ");
  Mat<Scalar> out = a.value() * b.value();
  return a.tape().record("matmul", {a, b}, std::move(out), [](Tape<Scalar>& t, const auto& n) {
    const Index ia = n.inputs[0], ib = n.inputs[1];
    if (t.requires_grad(ia)) t.accumulate(ia, n.grad * t.value(ib).transpose());
    if (t.requires_grad(ib)) t.accumulate(ib, t.value(ia).transpose() * n.grad);
  });
}

template <typename Scalar>
Var<Scalar> transpose(Var<Scalar> a) {
  Mat<Scalar> out = a.value().transpose();
  return a.tape().record("transpose", {a}, std::move(out), [](Tape<Scalar>& t, const auto& n) {
    t.accumulate(n.inputs[0], n.grad.transpose());
  });
}

template <typename Scalar>
Var<Scalar> slice_cols(Var<Scalar> a, Index begin, Index count) {
  if (begin < 0 || count < 1 || begin + count > a.cols())
    throw Error(ErrorKind::invalid_shape, "slice_cols: range out of bounds");
  Mat<Scalar> out = a.value().middleCols(begin, count);
  return a.tape().record("slice_cols", {a}, std::move(out), [begin, count](Tape<Scalar>& t, const auto& n) {
    const auto& v = t.value(n.inputs[0]);
    Mat<Scalar> g = Mat<Scalar>::Zero(v.rows(), v.cols());
    g.middleCols(begin, count) = n.grad;
    t.accumulate(n.inputs[0], g);
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("add", a, b);
  Mat<Scalar> out = a.value() + b.value();
  return a.tape().record("add", {a, b}, std::move(out), [](Tape<Scalar>& t, const auto& n) {
    t.accumulate(n.inputs[0], n.grad);
    t.accumulate(n.inputs[1], n.grad);
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("sub", a, b);
  Mat<Scalar> out = a.value() - b.value();
  return a.tape().record("sub", {a, b}, std::move(out), [](Tape<Scalar>& t, const auto& n) {
    t.accumulate(n.inputs[0], n.grad);
    t.accumulate(n.inputs[1], -n.grad);
  });
}

/// Elementwise (Hadamard) product.
template <typename Scalar>
Var<Scalar> mul(Var<Scalar> a, Var<Scalar> b) {
  detail::require_same_shape("mul", a, b);
  Mat<Scalar> out = a.value().cwiseProduct(b.value());
  return a.tape().record("mul", {a, b}, std::move(out), [](Tape<Scalar>& t, const auto& n) {
    const Index ia = n.inputs[0], ib = n.inputs[1];
    if (t.requires_grad(ia)) t.accumulate(ia, n.grad.cwiseProduct(t.value(ib)));
    if (t.requires_grad(ib)) t.accumulate(ib, n.grad.cwiseProduct(t.value(ia)));
  });
}

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Scalar c) {
  Mat<Scalar> out = a.value().array() + c;
  return a.tape().record("add_scalar", {a}, std::move(out), [](Tape<Scalar>& t, const auto& n) {
    t.accumulate(n.inputs[0], n.grad);
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> a, Scalar c) {
  Mat<Scalar> out = a.value() * c;
  return a.tape().record("scale", {a}, std::move(out), [c](Tape<Scalar>& t, const auto& n) {
    t.accumulate(n.inputs[0], n.grad * c);
  });
}

/// `a * s` where `s` is a recorded 1x1 value that itself receives a gradient.
template <typename Scalar>
Var<Scalar> scale_by(Var<Scalar> a, Var<Scalar> s) {
  if (s.value().size() != 1) throw Error(ErrorKind::invalid_shape, "scale_by: factor must be 1x1");
  Mat<Scalar> out = a.value() * s.value()(0, 0);
  return a.tape().record("scale_by", {a, s}, std::move(out), [](Tape<Scalar>& t, const auto& n) {
    const Index ia = n.inputs[0], is = n.inputs[1];
    if (t.requires_grad(ia)) t.accumulate(ia, n.grad * t.value(is)(0, 0));
    if (t.requires_grad(is)) {
      Mat<Scalar> gs(1, 1);
      gs(0, 0) = n.grad.cwiseProduct(t.value(ia)).sum();
      t.accumulate(is, gs);
    }
  });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> a) {
  Mat<Scalar> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record("sum", {a}, std::move(out), [](Tape<Scalar>& t, const auto& n) {
    const auto& v = t.value(n.inputs[0]);
    t.accumulate(n.inputs[0], Mat<Scalar>::Constant(v.rows(), v.cols(), n.grad(0, 0)));
  });
}

template <typename Scalar>
Var<Scalar> sigmoid(Var<Scalar> x) {
  Mat<Scalar> y = detail::sigmoid(x.value().array()).matrix();
  return x.tape().record("sigmoid", {x}, std::move(y), [](Tape<Scalar>& t, const auto& n) {
    t.accumulate(n.inputs[0], (n.grad.array() * n.value.array() * (Scalar(1) - n.value.array())).matrix());
  });
}

/// x * sigmoid(x)
template <typename Scalar>
Var<Scalar> swish(Var<Scalar> x) {
  Mat<Scalar> sig = detail::sigmoid(x.value().array()).matrix();
  Mat<Scalar> y = x.value().cwiseProduct(sig);
  return x.tape().record("swish", {x}, std::move(y),
                         [sig = std::move(sig)](Tape<Scalar>& t, const auto& n) {
                           const auto& xv = t.value(n.inputs[0]).array();
                           const auto s = sig.array();
                           t.accumulate(n.inputs[0],
                                        (n.grad.array() * (s + xv * s * (Scalar(1) - s))).matrix());
                         });
}

/// Gated linear unit: splits `axis` in half and returns first * sigmoid(second).
template <typename Scalar>
Var<Scalar> glu(Var<Scalar> x, int axis = -1) {
  const Index ax = detail::normalize_axis(axis);
  const Index extent = ax == 1 ? x.cols() : x.rows();
  if (extent % 2 != 0) throw Error(ErrorKind::invalid_shape, "glu: axis length must be even");
  const Index half = extent / 2;
  const Mat<Scalar>& v = x.value();
  Mat<Scalar> value = ax == 1 ? Mat<Scalar>(v.leftCols(half)) : Mat<Scalar>(v.topRows(half));
  Mat<Scalar> gate = ax == 1 ? Mat<Scalar>(v.rightCols(half)) : Mat<Scalar>(v.bottomRows(half));
  Mat<Scalar> sig = detail::sigmoid(gate.array()).matrix();
  Mat<Scalar> y = value.cwiseProduct(sig);
  return x.tape().record(
      "glu", {x}, std::move(y),
      [ax, half, value = std::move(value), sig = std::move(sig)](Tape<Scalar>& t, const auto& n) {
        const auto& g = n.grad.array();
        Mat<Scalar> gv = (g * sig.array()).matrix();
        Mat<Scalar> gg = (g * value.array() * sig.array() * (Scalar(1) - sig.array())).matrix();
        Mat<Scalar> gx(ax == 1 ? gv.rows() : 2 * half, ax == 1 ? 2 * half : gv.cols());
        gx << gv, gg;
        t.accumulate(n.inputs[0], gx);
      });
}

template <typename Scalar>
Var<Scalar> softmax(Var<Scalar> x, int axis = -1) {
  const Index ax = detail::normalize_axis(axis);
  Mat<Scalar> y = ax == 1 ? detail::softmax_rows<Scalar>(x.value())
                          : Mat<Scalar>(detail::softmax_rows<Scalar>(x.value().transpose()).transpose());
  return x.tape().record("softmax", {x}, std::move(y), [ax](Tape<Scalar>& t, const auto& n) {
    const auto& y = n.value;
    Mat<Scalar> gy = n.grad.cwiseProduct(y);
    Mat<Scalar> gx;
    if (ax == 1)
      gx = gy - (y.array().colwise() * gy.rowwise().sum().array()).matrix();
    else
      gx = gy - (y.array().rowwise() * gy.colwise().sum().array()).matrix();
    t.accumulate(n.inputs[0], gx);
  });
}

template <typename Scalar>
Var<Scalar> log_softmax(Var<Scalar> x, int axis = -1) {
  const Index ax = detail::normalize_axis(axis);
  Mat<Scalar> y = ax == 1 ? detail::log_softmax_rows<Scalar>(x.value())
                          : Mat<Scalar>(detail::log_softmax_rows<Scalar>(x.value().transpose()).transpose());
  return x.tape().record("log_softmax", {x}, std::move(y), [ax](Tape<Scalar>& t, const auto& n) {
    Mat<Scalar> p = n.value.array().exp().matrix();
    Mat<Scalar> gx;
    if (ax == 1)
      gx = n.grad - (p.array().colwise() * n.grad.rowwise().sum().array()).matrix();
    else
      gx = n.grad - (p.array().rowwise() * n.grad.colwise().sum().array()).matrix();
    t.accumulate(n.inputs[0], gx);
  });
}

/// Normalizes each row to zero mean / unit variance, then applies the
/// per-column affine map.
template <typename Scalar>
Var<Scalar> layer_norm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, Scalar eps) {
  if (!(eps > Scalar(0))) throw Error(ErrorKind::invalid_config, "layer_norm: eps must be positive");
  const Index d = x.cols();
  if (gamma.value().size() != d || beta.value().size() != d)
    throw Error(ErrorKind::invalid_shape, "layer_norm: affine parameters must have length " + std::to_string(d));
  using Col = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  const Mat<Scalar>& xv = x.value();
  Col mean = xv.rowwise().mean();
  Mat<Scalar> centered = xv.colwise() - mean;
  Col inv_std = ((centered.array().square().rowwise().sum() / Scalar(d)) + eps).rsqrt();
  Mat<Scalar> xhat = centered.array().colwise() * inv_std.array();
  Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> g(gamma.value().data(), d);
  Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> b(beta.value().data(), d);
  Mat<Scalar> y = (xhat.array().rowwise() * g.array()).rowwise() + b.array();
  return x.tape().record(
      "layer_norm", {x, gamma, beta}, std::move(y),
      [d, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<Scalar>& t, const auto& n) {
        const Index ix = n.inputs[0], ig = n.inputs[1], ib = n.inputs[2];
        const auto& gv = t.value(ig);
        if (t.requires_grad(ig)) {
          Mat<Scalar> gg = n.grad.cwiseProduct(xhat).colwise().sum();
          t.accumulate(ig, gg.reshaped(gv.rows(), gv.cols()).eval());
        }
        if (t.requires_grad(ib)) {
          Mat<Scalar> gb = n.grad.colwise().sum();
          t.accumulate(ib, gb.reshaped(gv.rows(), gv.cols()).eval());
        }
        if (t.requires_grad(ix)) {
          Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>> g(gv.data(), d);
          Mat<Scalar> gxhat = n.grad.array().rowwise() * g.array();
          Col mean_g = gxhat.rowwise().mean();
          Col mean_gx = gxhat.cwiseProduct(xhat).rowwise().mean();
          Mat<Scalar> gx = gxhat.colwise() - mean_g;
          gx -= (xhat.array().colwise() * mean_gx.array()).matrix();
          gx = gx.array().colwise() * inv_std.array();
          t.accumulate(ix, gx);
        }
      });
}

/// Per-channel temporal convolution with zero "same" padding:
/// out[t, c] = sum_j kernel[j, c] * x[t + j - (k - 1) / 2, c].
template <typename Scalar>
Var<Scalar> depthwise_conv1d(Var<Scalar> x, Var<Scalar> kernel) {
  const Index k = kernel.rows();
  if (k % 2 == 0) throw Error(ErrorKind::invalid_config, "depthwise_conv1d: kernel length must be odd");
  if (kernel.cols() != x.cols())
    throw Error(ErrorKind::invalid_shape, "depthwise_conv1d: kernel channels differ from input");
  const Index steps = x.rows();
  const Index pad = (k - 1) / 2;
  const Mat<Scalar>& xv = x.value();
  const Mat<Scalar>& kv = kernel.value();
  Mat<Scalar> y = Mat<Scalar>::Zero(steps, x.cols());
  for (Index j = 0; j < k; ++j) {
    const Index shift = j - pad;
    const Index t0 = std::max<Index>(0, -shift);
    const Index t1 = std::min<Index>(steps, steps - shift);
    if (t1 <= t0) continue;
    y.middleRows(t0, t1 - t0).array() += xv.middleRows(t0 + shift, t1 - t0).array().rowwise() * kv.row(j).array();
  }
  return x.tape().record("depthwise_conv1d", {x, kernel}, std::move(y), [k, pad, steps](Tape<Scalar>& t,
                                                                                         const auto& n) {
    const Index ix = n.inputs[0], ik = n.inputs[1];
    const auto& xv = t.value(ix);
    const auto& kv = t.value(ik);
    Mat<Scalar> gx = Mat<Scalar>::Zero(xv.rows(), xv.cols());
    Mat<Scalar> gk = Mat<Scalar>::Zero(kv.rows(), kv.cols());
    for (Index j = 0; j < k; ++j) {
      const Index shift = j - pad;
      const Index t0 = std::max<Index>(0, -shift);
      const Index t1 = std::min<Index>(steps, steps - shift);
      if (t1 <= t0) continue;
      const auto g = n.grad.middleRows(t0, t1 - t0).array();
      gx.middleRows(t0 + shift, t1 - t0).array() += g.rowwise() * kv.row(j).array();
      gk.row(j) += (g * xv.middleRows(t0 + shift, t1 - t0).array()).colwise().sum().matrix();
    }
    if (t.requires_grad(ix)) t.accumulate(ix, gx);
    if (t.requires_grad(ik)) t.accumulate(ik, gk);
  });
}

/// Stacks `stride` consecutive rows into one, dropping trailing rows that do
/// not fill a full stack: [T, f] -> [T / stride, stride * f].
template <typename Scalar>
Var<Scalar> frame_stack(Var<Scalar> x, Index stride) {
  const Index out_rows = x.rows() / stride;
  if (stride < 1 || out_rows < 1)
    throw Error(ErrorKind::invalid_shape, "frame_stack: need at least " + std::to_string(stride) + " frames");
  const Index f = x.cols();
  Mat<Scalar> y = Eigen::Map<const Mat<Scalar>>(x.value().data(), out_rows, stride * f);
  return x.tape().record("frame_stack", {x}, std::move(y), [out_rows, stride, f](Tape<Scalar>& t, const auto& n) {
    const auto& xv = t.value(n.inputs[0]);
    Mat<Scalar> gx = Mat<Scalar>::Zero(xv.rows(), xv.cols());
    gx.topRows(out_rows * stride) = Eigen::Map<const Mat<Scalar>>(n.grad.data(), out_rows * stride, f);
    t.accumulate(n.inputs[0], gx);
  });
}

}  // namespace archopt
