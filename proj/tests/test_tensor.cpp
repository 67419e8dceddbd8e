#include <doctest.h>

#include <cmath>

#include "support.hpp"

using namespace archopt;
using archopt::testing::check_all;
using archopt::testing::random_tensor;
using archopt::testing::weighted_sum;
using Vars = std::vector<Var<double>>;

namespace {

Mat<double> mat(Index r, Index c, std::initializer_list<double> values) {
  Mat<double> m(r, c);
  Index i = 0;
  for (double v : values) m.data()[i++] = v;
  return m;
}

}  // namespace

TEST_CASE("alloc fills and validates shapes") {
  auto z = alloc<double>({2, 2}, init::Zeros{});
  CHECK(z.matrix() == Mat<double>::Zero(2, 2));
  auto c = alloc<double>({3}, init::Constant{1.5});
  CHECK(c.shape() == Shape{3});
  CHECK(c.matrix() == Mat<double>::Constant(1, 3, 1.5));
  auto u1 = alloc<float>({4}, init::Uniform{-1, 1, 7});
  auto u2 = alloc<float>({4}, init::Uniform{-1, 1, 7});
  CHECK(u1.matrix() == u2.matrix());
  CHECK((u1.matrix().array().abs() <= 1.0f).all());
  CHECK_THROWS_AS(alloc<double>({2, 0}, init::Zeros{}), Error);
  try {
    alloc<double>({-1}, init::Zeros{});
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_shape);
  }
  auto t = alloc<double>({2, 3, 4}, init::Zeros{});
  CHECK(t.rows() == 6);
  CHECK(t.cols() == 4);
  CHECK(t.size() == 24);
}

TEST_CASE("matmul values, shape errors and gradient") {
  Tape<double> tape;
  auto id = tape.constant(Mat<double>::Identity(2, 2));
  auto m = tape.constant(mat(2, 2, {1, 2, 3, 4}));
  CHECK(matmul(id, m).value() == mat(2, 2, {1, 2, 3, 4}));
  CHECK(matmul(tape.constant(mat(1, 2, {1, 2})), tape.constant(mat(2, 1, {3, 4}))).value()(0, 0) == 11);
  try {
    matmul(m, tape.constant(Mat<double>::Zero(3, 1)));
    FAIL("expected InvalidShape");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_shape);
  }

  for (auto [r, k, c] : {std::tuple{3, 3, 3}, std::tuple{2, 5, 1}, std::tuple{4, 1, 6}}) {
    auto a = random_tensor({r, k}, 1), b = random_tensor({k, c}, 2);
    auto rep = check_all({&a, &b}, [](Tape<double>&, Vars& v) { return sum(matmul(v[0], v[1])); });
    CHECK(rep.max_rel_error < 1e-4);
    CHECK(rep.checked == static_cast<std::size_t>(r * k + k * c));
  }
}

TEST_CASE("elementwise ops") {
  Tape<double> tape;
  auto a = tape.constant(mat(1, 2, {1, 2}));
  auto b = tape.constant(mat(1, 2, {3, 4}));
  CHECK(add(a, b).value() == mat(1, 2, {4, 6}));
  CHECK(sub(a, b).value() == mat(1, 2, {-2, -2}));
  CHECK(mul(a, b).value() == mat(1, 2, {3, 8}));
  CHECK(scale(tape.constant(mat(1, 2, {1, -2})), 1.0).value() == mat(1, 2, {1, -2}));
  CHECK(add(a, 0.5).value() == mat(1, 2, {1.5, 2.5}));
  CHECK_THROWS_AS(add(a, tape.constant(Mat<double>::Zero(2, 1))), Error);

  for (Index n : {5, 3, 8}) {
    auto x = random_tensor({n}, 3), y = random_tensor({n}, 4);
    CHECK(check_all({&x, &y}, [](Tape<double>&, Vars& v) { return weighted_sum(mul(v[0], v[1]), 9); }).passed);
    CHECK(check_all({&x, &y}, [](Tape<double>&, Vars& v) { return weighted_sum(sub(v[0], v[1]), 9); }).passed);
    CHECK(check_all({&x, &y}, [](Tape<double>&, Vars& v) { return weighted_sum(add(v[0], v[1]), 9); }).passed);
    CHECK(check_all({&x}, [](Tape<double>&, Vars& v) { return weighted_sum(scale(add(v[0], 0.3), -1.7), 9); }).passed);
  }
  auto x = random_tensor({3, 4}, 5);
  auto s = random_tensor({1, 1}, 6, 0.5, 1.5);
  CHECK(check_all({&x, &s}, [](Tape<double>&, Vars& v) { return weighted_sum(scale_by(v[0], v[1]), 2); }).passed);
}

TEST_CASE("activations") {
  Tape<double> tape;
  CHECK(swish(tape.constant(Mat<double>::Zero(1, 1))).value()(0, 0) == 0.0);
  auto sm = softmax(tape.constant(Mat<double>::Constant(1, 3, 2.5)), 1).value();
  for (Index i = 0; i < 3; ++i) CHECK(sm(0, i) == doctest::Approx(1.0 / 3).epsilon(1e-15));

  auto g = glu(tape.constant(mat(1, 4, {1, 2, 0, 100})), 1).value();
  CHECK(g(0, 0) == doctest::Approx(0.5));
  CHECK(g(0, 1) == doctest::Approx(2.0));
  auto gr = glu(tape.constant(mat(2, 1, {3, 0})), 0).value();
  CHECK(gr(0, 0) == doctest::Approx(1.5));
  try {
    glu(tape.constant(Mat<double>::Zero(2, 3)), 1);
    FAIL("expected InvalidShape");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_shape);
  }

  // rows sum to one and log_softmax == log(softmax), including large logits
  auto big = random_tensor({4, 7}, 11, -50, 50);
  auto p = softmax(tape.constant(big.matrix()), 1).value();
  auto lp = log_softmax(tape.constant(big.matrix()), 1).value();
  for (Index r = 0; r < 4; ++r) CHECK(std::abs(p.row(r).sum() - 1.0) < 1e-6);
  CHECK((lp - p.array().log().matrix()).cwiseAbs().maxCoeff() < 1e-6);
  auto pc = softmax(tape.constant(big.matrix()), 0).value();
  for (Index c = 0; c < 7; ++c) CHECK(std::abs(pc.col(c).sum() - 1.0) < 1e-6);

  for (Shape shape : {Shape{7}, Shape{3, 5}, Shape{2, 6}}) {
    auto x = random_tensor(shape, 12, -3, 3);
    CHECK(check_all({&x}, [](Tape<double>&, Vars& v) { return weighted_sum(log_softmax(v[0], 1), 1); }).passed);
    CHECK(check_all({&x}, [](Tape<double>&, Vars& v) { return weighted_sum(softmax(v[0], 1), 1); }).passed);
    CHECK(check_all({&x}, [](Tape<double>&, Vars& v) { return weighted_sum(log_softmax(v[0], 0), 1); }).passed);
    CHECK(check_all({&x}, [](Tape<double>&, Vars& v) { return weighted_sum(softmax(v[0], 0), 1); }).passed);
    CHECK(check_all({&x}, [](Tape<double>&, Vars& v) { return weighted_sum(swish(v[0]), 1); }).passed);
    CHECK(check_all({&x}, [](Tape<double>&, Vars& v) { return weighted_sum(sigmoid(v[0]), 1); }).passed);
    CHECK(check_all({&x}, [](Tape<double>&, Vars& v) { return weighted_sum(transpose(v[0]), 1); }).passed);
  }
  for (Shape shape : {Shape{8}, Shape{2, 6}, Shape{3, 4}}) {
    auto x = random_tensor(shape, 14, -3, 3);
    CHECK(check_all({&x}, [](Tape<double>&, Vars& v) { return weighted_sum(glu(v[0], 1), 1); }).passed);
  }
  auto x = random_tensor({4, 3}, 13);
  CHECK(check_all({&x}, [](Tape<double>&, Vars& v) { return weighted_sum(glu(v[0], 0), 1); }).passed);
  CHECK(check_all({&x}, [](Tape<double>&, Vars& v) { return weighted_sum(slice_cols(v[0], 1, 2), 1); }).passed);
}

TEST_CASE("layer_norm") {
  Tape<double> tape;
  auto one = tape.constant(Mat<double>::Ones(1, 4));
  auto zero = tape.constant(Mat<double>::Zero(1, 4));
  auto flat = layer_norm(tape.constant(Mat<double>::Constant(2, 4, 3.0)), one, zero, 1e-5).value();
  CHECK(flat.cwiseAbs().maxCoeff() == 0.0);
  auto unit = layer_norm(tape.constant(mat(1, 2, {1, -1})), tape.constant(Mat<double>::Ones(1, 2)),
                         tape.constant(Mat<double>::Zero(1, 2)), 1e-12)
                  .value();
  CHECK(unit(0, 0) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(unit(0, 1) == doctest::Approx(-1.0).epsilon(1e-9));
  auto x = random_tensor({3, 8}, 21, -2, 2);
  auto y = layer_norm(tape.constant(x.matrix()), tape.constant(Mat<double>::Ones(1, 8)),
                      tape.constant(Mat<double>::Zero(1, 8)), 1e-5)
               .value();
  for (Index r = 0; r < 3; ++r) {
    CHECK(std::abs(y.row(r).mean()) < 1e-12);
    CHECK(std::abs(y.row(r).squaredNorm() / 8 - 1.0) < 1e-4);
  }
  CHECK_THROWS_AS(layer_norm(tape.constant(x.matrix()), one, zero, 1e-5), Error);
  try {
    layer_norm(tape.constant(mat(1, 4, {1, 2, 3, 4})), one, zero, 0.0);
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_config);
  }

  for (Shape shape : {Shape{3, 8}, Shape{1, 5}, Shape{4, 2}}) {
    auto xs = random_tensor(shape, 22, -2, 2);
    auto g = random_tensor({shape[1]}, 23, 0.5, 1.5), b = random_tensor({shape[1]}, 24);
    auto rep = check_all({&xs, &g, &b}, [](Tape<double>&, Vars& v) {
      return weighted_sum(layer_norm(v[0], v[1], v[2], 1e-5), 3);
    });
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("depthwise_conv1d") {
  Tape<double> tape;
  auto x = tape.constant(mat(3, 2, {1, 10, 2, 20, 3, 30}));
  auto identity = depthwise_conv1d(x, tape.constant(mat(3, 2, {0, 0, 1, 1, 0, 0})));
  CHECK(identity.value() == x.value());
  // tap 0 looks one frame back under zero padding: [a,b,c] -> [0,a,b]
  auto shifted = depthwise_conv1d(x, tape.constant(mat(3, 2, {1, 1, 0, 0, 0, 0}))).value();
  CHECK(shifted == mat(3, 2, {0, 0, 1, 10, 2, 20}));
  try {
    depthwise_conv1d(x, tape.constant(Mat<double>::Zero(2, 2)));
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_config);
  }
  CHECK_THROWS_AS(depthwise_conv1d(x, tape.constant(Mat<double>::Zero(3, 3))), Error);

  for (auto [t, ch, k] : {std::tuple{5, 2, 3}, std::tuple{2, 3, 5}, std::tuple{7, 1, 1}}) {
    auto xs = random_tensor({t, ch}, 31), ks = random_tensor({k, ch}, 32);
    auto rep = check_all({&xs, &ks},
                         [](Tape<double>&, Vars& v) { return weighted_sum(depthwise_conv1d(v[0], v[1]), 4); });
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("frame_stack") {
  Tape<double> tape;
  auto x = tape.constant(mat(5, 1, {1, 2, 3, 4, 5}));
  auto y = frame_stack(x, 2).value();
  CHECK(y == mat(2, 2, {1, 2, 3, 4}));
  auto xs = random_tensor({9, 3}, 41);
  CHECK(check_all({&xs}, [](Tape<double>&, Vars& v) { return weighted_sum(frame_stack(v[0], 4), 5); }).passed);
}

TEST_CASE("backward semantics") {
  auto w = alloc<double>({3}, init::Constant{0.7}, true);
  {
    Tape<double> tape;
    tape.backward(sum(tape.leaf(w)));
  }
  CHECK(w.grad() == Mat<double>::Ones(1, 3));

  auto q = alloc<double>({2}, init::Zeros{}, true);
  q.matrix() << 1, 2;
  {
    Tape<double> tape;
    auto v = tape.leaf(q);
    tape.backward(sum(mul(v, v)));
  }
  CHECK(q.grad() == mat(1, 2, {2, 4}));
  {
    Tape<double> tape;
    auto v = tape.leaf(q);
    tape.backward(sum(mul(v, v)));
  }
  CHECK(q.grad() == mat(1, 2, {4, 8}));  // accumulates until zeroed
  q.zero_grad();
  CHECK_FALSE(q.has_grad());

  Tape<double> tape;
  try {
    tape.backward(tape.leaf(q));
    FAIL("expected InvalidShape");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::invalid_shape);
  }
}

TEST_CASE("non-finite values raise NumericalError") {
  Tape<double> tape;
  auto huge = tape.constant(Mat<double>::Constant(1, 1, 1e200));
  try {
    mul(huge, huge);
    FAIL("expected NumericalError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::numerical_error);
    CHECK(std::string(e.what()).find("mul") != std::string::npos);
  }
  auto bad = alloc<double>({2}, init::Zeros{}, true);
  bad.matrix()(0, 1) = std::nan("");
  CHECK_FALSE(bad.all_finite());
  CHECK_THROWS_AS(tape.leaf(bad), Error);
}

TEST_CASE("finite_diff_check") {
  auto w = random_tensor({1}, 51);
  auto rep = check_all({&w}, [](Tape<double>&, Vars& v) { return sum(v[0]); });
  CHECK(rep.max_rel_error < 1e-9);
  CHECK_THROWS_AS(check_all({&w}, [](Tape<double>&, Vars& v) { return sum(v[0]); }, 0.0), Error);

  // two-layer MLP
  auto x = random_tensor({4, 3}, 52), w1 = random_tensor({3, 5}, 53), w2 = random_tensor({5, 2}, 54);
  auto mlp = check_all(
      {&w1, &w2},
      [&x](Tape<double>& tape, Vars& v) {
        return weighted_sum(matmul(swish(matmul(tape.constant(x.matrix()), v[0])), v[1]), 6);
      },
      1e-5);
  CHECK(mlp.max_rel_error < 1e-4);

  // a square op whose backward forgets the factor 2 must be caught
  auto broken_square = [](Var<double> a) {
    Mat<double> out = a.value().array().square().matrix();
    return a.tape().record("broken_square", {a}, std::move(out), [](Tape<double>& t, const auto& n) {
      t.accumulate(n.inputs[0], n.grad.cwiseProduct(t.value(n.inputs[0])));
    });
  };
  auto z = random_tensor({4}, 55, 0.5, 1.0);
  auto neg = check_all({&z}, [&](Tape<double>&, Vars& v) { return sum(broken_square(v[0])); });
  CHECK_FALSE(neg.passed);
  CHECK(neg.max_rel_error > 0.4);
}

TEST_CASE("ops are bitwise deterministic") {
  auto run = [] {
    auto a = alloc<float>({6, 8}, init::Normal{0, 1, 3}, true);
    auto k = alloc<float>({3, 8}, init::Normal{0, 1, 4}, true);
    Tape<float> tape;
    auto y = log_softmax(swish(depthwise_conv1d(tape.leaf(a), tape.leaf(k))), 1);
    tape.backward(sum(y));
    return std::pair{y.value(), a.grad()};
  };
  auto [y1, g1] = run();
  auto [y2, g2] = run();
  CHECK(y1 == y2);
  CHECK(g1 == g2);
}
