#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <type_traits>
#include <utility>
#include <variant>
#include <vector>

#include "archopt/error.hpp"

namespace archopt {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Row-major dense matrix; every tensor is viewed as one of these with the
/// last axis as columns and all leading axes folded into rows.
template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace init {
struct Zeros {};
struct Constant {
  double value;
};
struct Uniform {
  double lo;
  double hi;
  std::uint64_t seed;
};
struct Normal {
  double mean;
  double std;
  std::uint64_t seed;
};
}  // namespace init

using Init = std::variant<init::Zeros, init::Constant, init::Uniform, init::Normal>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Scalar>
class Tensor {
 public:
  using Matrix = Mat<Scalar>;

  Tensor() : shape_{1}, data_(Matrix::Zero(1, 1)) {}

  explicit Tensor(Shape shape) : shape_(checked(std::move(shape))) {
    data_ = Matrix::Zero(leading(shape_), shape_.back());
  }

  Tensor(Shape shape, Matrix values) : shape_(checked(std::move(shape))), data_(std::move(values)) {
    if (data_.rows() != leading(shape_) || data_.cols() != shape_.back())
      throw Error(ErrorKind::invalid_shape, "values do not match shape " + shape_string(shape_));
  }

  static Tensor from_matrix(Matrix values) {
    Shape shape{values.rows(), values.cols()};
    return Tensor(std::move(shape), std::move(values));
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index size() const { return data_.size(); }
  Index rows() const { return data_.rows(); }
  Index cols() const { return data_.cols(); }

  Matrix& matrix() { return data_; }
  const Matrix& matrix() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return grad_.size() != 0; }
  const Matrix& grad() const { return grad_; }
  Matrix& ensure_grad() {
    if (!has_grad()) grad_ = Matrix::Zero(data_.rows(), data_.cols());
    return grad_;
  }
  void zero_grad() { grad_.resize(0, 0); }

  bool all_finite() const { return data_.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    Tensor<Other> out(shape_, data_.template cast<Other>());
    out.set_requires_grad(requires_grad_);
    return out;
  }

 private:
  static Shape checked(Shape shape) {
    if (shape.empty()) throw Error(ErrorKind::invalid_shape, "tensor needs at least one axis");
    for (Index d : shape)
      if (d < 1) throw Error(ErrorKind::invalid_shape, "non-positive dimension in " + shape_string(shape));
    return shape;
  }
  static Index leading(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end() - 1, Index{1}, std::multiplies<>());
  }

  Shape shape_;
  Matrix data_;
  Matrix grad_;
  bool requires_grad_ = false;
};

/// Allocates a tensor filled according to `how`. Stochastic fills are a pure
/// function of their seed.
template <typename Scalar>
Tensor<Scalar> alloc(Shape shape, const Init& how, bool requires_grad = false) {
  Tensor<Scalar> t(std::move(shape));
  auto& m = t.matrix();
  std::visit(
      [&](const auto& spec) {
        using Spec = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<Spec, init::Constant>) {
          m.setConstant(static_cast<Scalar>(spec.value));
        } else if constexpr (std::is_same_v<Spec, init::Uniform>) {
          std::mt19937_64 rng(spec.seed);
          std::uniform_real_distribution<double> dist(spec.lo, spec.hi);
          for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
        } else if constexpr (std::is_same_v<Spec, init::Normal>) {
          std::mt19937_64 rng(spec.seed);
          std::normal_distribution<double> dist(spec.mean, spec.std);
          for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<Scalar>(dist(rng));
        }
      },
      how);
  t.set_requires_grad(requires_grad);
  return t;
}

}  // namespace archopt
