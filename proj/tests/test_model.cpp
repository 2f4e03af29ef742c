#include <doctest.h>

#include <cmath>
#include <random>

#include "gibbsnet/errors.hpp"
#include "gibbsnet/model.hpp"
#include "gibbsnet/rng.hpp"
#include "reference_net.hpp"

using namespace gibbsnet;
using namespace gibbsnet::testing;

TEST_CASE("parameter count and flat layout offsets") {
  Architecture a;
  a.layer_sizes = {3, 4, 2};
  CHECK(a.param_count() == 3 * 4 + 4 + 4 * 2 + 2);
  CHECK(a.weight_offset(0) == 0);
  CHECK(a.bias_offset(0) == 12);
  CHECK(a.weight_offset(1) == 16);
  CHECK(a.bias_offset(1) == 24);
  Architecture bad;
  bad.layer_sizes = {3};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("forward: 1->1 linear is theta_1 * x with zero bias") {
  Architecture a;
  a.layer_sizes = {1, 1};
  Vector p(2);
  p << 0.7, 0.0;
  CHECK(forward(a, p, Vector::Constant(1, 3.0))[0] == doctest::Approx(2.1).epsilon(1e-15));
}

TEST_CASE("forward: zero parameters give zero output for linear networks") {
  Architecture a;
  a.layer_sizes = {4, 5, 3};
  const Vector out = forward(a, Vector::Zero(a.param_count()), Vector::Ones(4));
  CHECK(out.size() == 3);
  CHECK(out.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("forward: hand-evaluated affine map") {
  Architecture a;
  a.layer_sizes = {2, 1};
  Vector p(3);
  p << 1.0, -1.0, 0.5;
  Vector x(2);
  x << 2.0, 3.0;
  CHECK(forward(a, p, x)[0] == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("forward: dimension mismatch names both sizes") {
  Architecture a;
  a.layer_sizes = {2, 1};
  try {
    forward(a, Vector::Zero(3), Vector::Zero(5));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find('2') != std::string::npos);
    CHECK(msg.find('5') != std::string::npos);
  }
  CHECK_THROWS_AS(forward(a, Vector::Zero(4), Vector::Zero(2)), ConfigError);
}

TEST_CASE("harmonic loss a*theta^2 and gradient 2*a*theta") {
  Architecture arch;
  arch.layer_sizes = {1, 1};
  for (double a : {0.01, 1.0, 4.0}) {
    Matrix x(1, 1), y(1, 1);
    x << std::sqrt(a);
    y << 0.0;
    Vector p(2);
    p << -1.3, 0.0;
    const LossGrad lg = loss_and_gradient(arch, p, x, y);
    CHECK(lg.loss == doctest::Approx(a * 1.69).epsilon(1e-14));
    CHECK(lg.grad[0] == doctest::Approx(2 * a * -1.3).epsilon(1e-14));
  }
}

TEST_CASE("exact interpolation gives zero loss and gradient") {
  Architecture arch;
  arch.layer_sizes = {2, 1};
  Vector p(3);
  p << 0.5, -2.0, 1.0;
  Matrix x(3, 2), y(3, 1);
  x << 1, 2, -1, 0.5, 3, 3;
  for (Eigen::Index i = 0; i < 3; ++i) y(i, 0) = 0.5 * x(i, 0) - 2.0 * x(i, 1) + 1.0;
  const LossGrad lg = loss_and_gradient(arch, p, x, y);
  CHECK(lg.loss == doctest::Approx(0.0));
  CHECK(lg.grad.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("three-parameter network on five points matches central differences") {
  Rng rng(11);
  Architecture arch;
  arch.layer_sizes = {2, 1};
  const Vector p = random_matrix(rng, 3, 1).col(0);
  const Matrix x = random_matrix(rng, 5, 2), y = random_matrix(rng, 5, 1);
  const LossGrad lg = loss_and_gradient(arch, p, x, y);
  CHECK(lg.loss == doctest::Approx(naive_loss(arch, p, x, y)).epsilon(1e-12));
  CHECK(gradient_close(lg.grad, central_differences(arch, p, x, y)));
}

TEST_CASE("property: backprop agrees with finite differences on random small networks") {
  std::mt19937_64 shape(5);
  Rng rng(17);
  int checked = 0;
  for (int draw = 0; draw < 100; ++draw) {
    Architecture arch;
    arch.hidden_activation = draw % 2 ? Activation::sigmoid : Activation::linear;
    arch.loss = (draw / 2) % 2 ? LossKind::softmax_cross_entropy : LossKind::mean_squared_error;
    do {
      arch.layer_sizes.clear();
      const int depth = 1 + int(shape() % 3);
      for (int l = 0; l <= depth; ++l) arch.layer_sizes.push_back(1 + int(shape() % 4));
      if (arch.loss == LossKind::softmax_cross_entropy) arch.layer_sizes.back() = 2 + int(shape() % 3);
    } while (arch.param_count() > 50);
    const Vector p = random_matrix(rng, arch.param_count(), 1).col(0);
    const Matrix x = random_matrix(rng, 4, arch.input_dim());
    const Matrix y = arch.loss == LossKind::mean_squared_error ? random_matrix(rng, 4, arch.output_dim())
                                                               : random_one_hot(rng, 4, arch.output_dim());
    const LossGrad lg = loss_and_gradient(arch, p, x, y);
    CHECK(std::isfinite(lg.loss));
    CHECK(lg.loss >= 0.0);
    CHECK(lg.grad.size() == arch.param_count());
    CHECK_MESSAGE(gradient_close(lg.grad, central_differences(arch, p, x, y)), "draw " << draw);
    ++checked;
  }
  CHECK(checked == 100);
}

TEST_CASE("softmax cross-entropy examples") {
  for (int k : {2, 3, 10}) {
    const Vector logits = Vector::Constant(k, 0.37);
    Vector label = Vector::Zero(k);
    label[k - 1] = 1.0;
    CHECK(softmax_cross_entropy(logits, label) == doctest::Approx(std::log(double(k))).epsilon(1e-14));
  }
  Vector logits(2), label(2);
  logits << 10.0, 0.0;
  label << 1.0, 0.0;
  const double expected = std::log1p(std::exp(-10.0));  // -log(e^10 / (e^10 + 1))
  CHECK(softmax_cross_entropy(logits, label) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(4.54e-5).epsilon(1e-3));
}

TEST_CASE("softmax cross-entropy is shift invariant and overflow safe") {
  Rng rng(3);
  for (int t = 0; t < 50; ++t) {
    Vector logits(5);
    rng.fill_normal(logits);
    Vector label = Vector::Zero(5);
    label[t % 5] = 1.0;
    const double base = softmax_cross_entropy(logits, label);
    const double c = 20.0 * rng.normal();
    CHECK(std::abs(softmax_cross_entropy(logits.array() + c, label) - base) < 1e-12);
    CHECK(base >= 0.0);
  }
  Vector big(2), label(2);
  big << 1000.0, 0.0;
  label << 0.0, 1.0;
  CHECK(softmax_cross_entropy(big, label) == doctest::Approx(1000.0));
}

TEST_CASE("cross-entropy rejects labels that are not one-hot") {
  Architecture arch;
  arch.layer_sizes = {2, 2};
  arch.loss = LossKind::softmax_cross_entropy;
  Matrix x = Matrix::Ones(1, 2);
  Matrix soft(1, 2), neg(1, 2);
  soft << 0.5, 0.5;
  neg << -1.0, 2.0;
  CHECK_THROWS_AS(loss_and_gradient(arch, Vector::Zero(6), x, soft), ConfigError);
  CHECK_THROWS_AS(loss_and_gradient(arch, Vector::Zero(6), x, neg), ConfigError);
}

TEST_CASE("unflatten then flatten is the identity") {
  Rng rng(8);
  Architecture arch;
  arch.layer_sizes = {3, 5, 4, 2};
  Vector p(arch.param_count());
  rng.fill_normal(p);
  const LayerParams lp = unflatten(arch, p);
  REQUIRE(lp.weights.size() == 3);
  CHECK(lp.weights[0].rows() == 5);
  CHECK(lp.weights[0].cols() == 3);
  CHECK(lp.weights[0](1, 2) == p[1 * 3 + 2]);  // row-major: output index major
  CHECK(lp.biases[0][4] == p[15 + 4]);
  CHECK(flatten(arch, lp) == p);
}

TEST_CASE("workspace reuse gives the same result as fresh evaluation") {
  Rng rng(21);
  Architecture arch;
  arch.layer_sizes = {3, 4, 2};
  arch.hidden_activation = Activation::sigmoid;
  Workspace ws(arch);
  for (int t = 0; t < 3; ++t) {
    Vector p(arch.param_count());
    rng.fill_normal(p);
    const Matrix x = random_matrix(rng, 6 + t, 3), y = random_matrix(rng, 6 + t, 2);
    Vector g;
    const double l = ws.loss_and_gradient(p, x, y, g);
    const LossGrad ref = loss_and_gradient(arch, p, x, y);
    CHECK(l == ref.loss);
    CHECK(g == ref.grad);
    CHECK(ws.loss(p, x, y) == doctest::Approx(l).epsilon(1e-14));
  }
}
