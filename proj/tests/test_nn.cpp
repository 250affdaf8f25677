#include "evgen/nn.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace evgen;
using namespace evgen::nn;

namespace {

LayerSpec dense(int units, std::optional<double> slope = 0.2) {
  LayerSpec s;
  s.kind = LayerKind::Dense;
  s.name = "fc" + std::to_string(units);
  s.units = units;
  s.leaky_slope = slope;
  return s;
}

LayerSpec conv(int filters, std::optional<double> slope = 0.2, int kernel = 5) {
  LayerSpec s;
  s.kind = LayerKind::Conv1d;
  s.name = "conv" + std::to_string(filters);
  s.units = filters;
  s.kernel = kernel;
  s.leaky_slope = slope;
  return s;
}

LayerSpec pool() {
  LayerSpec s;
  s.kind = LayerKind::MaxPool;
  s.name = "pool";
  return s;
}

LayerSpec reshape(std::vector<int> target) {
  LayerSpec s;
  s.kind = LayerKind::Reshape;
  s.name = "reshape";
  s.target = std::move(target);
  return s;
}

double leaky(double v, double a) { return v > 0 ? v : a * v; }

// Direct 1-d convolution with replicate padding on channels-last rows.
Matrix conv_oracle(const Matrix& x, int cin, int cout, int len, int k, const double* w,
                   const double* b, double slope) {
  Matrix y(x.rows(), cout * len);
  for (Eigen::Index s = 0; s < x.rows(); ++s)
    for (int t = 0; t < len; ++t)
      for (int o = 0; o < cout; ++o) {
        double acc = b[o];
        for (int j = 0; j < k; ++j) {
          const int from = std::clamp(t + j - k / 2, 0, len - 1);
          for (int c = 0; c < cin; ++c) acc += w[o * k * cin + j * cin + c] * x(s, from * cin + c);
        }
        y(s, t * cout + o) = leaky(acc, slope);
      }
  return y;
}

NetworkSpec small_spec() {
  NetworkSpec spec;
  spec.input = {12};
  spec.layers = {reshape({1, 12}), conv(3), pool(), conv(2), reshape({12}), dense(5), dense(1)};
  return spec;
}

}  // namespace

TEST_CASE("shape bookkeeping and construction errors name the layer") {
  const auto net = Network::build(small_spec(), 1);
  REQUIRE(net.layer_shapes().size() == 7);
  CHECK(net.layer_shapes()[1] == Shape{{3, 12}});
  CHECK(net.layer_shapes()[2] == Shape{{3, 6}});
  CHECK(net.layer_shapes()[3] == Shape{{2, 6}});
  CHECK(net.output_shape() == Shape{{1}});
  CHECK(net.parameter_count() == (3 * 5 + 3) + (2 * 15 + 2) + (5 * 12 + 5) + (5 + 1));

  auto expect_error = [](NetworkSpec spec, const std::string& needle) {
    try {
      Network::build(spec, 0);
      FAIL("expected a construction error");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  NetworkSpec a;
  a.input = {10};
  a.layers = {conv(4)};
  expect_error(a, "conv4");
  NetworkSpec b;
  b.input = {1, 7};
  b.layers = {pool()};
  expect_error(b, "pool");
  NetworkSpec c;
  c.input = {2, 6};
  c.layers = {dense(3)};
  expect_error(c, "fc3");
  NetworkSpec d;
  d.input = {12};
  d.layers = {reshape({5, 2})};
  expect_error(d, "reshape");
}

TEST_CASE("dense and conv layers match direct evaluation") {
  NetworkSpec spec;
  spec.input = {2, 9};
  spec.layers = {conv(3, 0.2)};
  const auto net = Network::build(spec, 4);
  Matrix x = Matrix::Random(5, 18);
  const auto p = net.parameters();
  const Matrix expect = conv_oracle(x, 2, 3, 9, 5, p.data(), p.data() + 30, 0.2);
  CHECK((net.forward(x) - expect).cwiseAbs().maxCoeff() < 1e-14);

  NetworkSpec ds;
  ds.input = {4};
  ds.layers = {dense(3, 0.1)};
  const auto dn = Network::build(ds, 5);
  const Matrix xin = Matrix::Random(6, 4);
  const auto q = dn.parameters();
  const Matrix out = dn.forward(xin);
  for (Eigen::Index s = 0; s < 6; ++s)
    for (int o = 0; o < 3; ++o) {
      double acc = q[12 + o];
      for (int i = 0; i < 4; ++i) acc += q[o * 4 + i] * xin(s, i);
      CHECK(std::abs(out(s, o) - leaky(acc, 0.1)) < 1e-14);
    }
}

TEST_CASE("max pooling keeps the larger of each pair per channel") {
  NetworkSpec spec;
  spec.input = {2, 4};
  spec.layers = {pool()};
  const auto net = Network::build(spec, 0);
  Matrix x(1, 8);
  // (c, t) at t * 2 + c: channel 0 = {1, 5, 2, 0}, channel 1 = {-1, -3, 7, 8}.
  x << 1, -1, 5, -3, 2, 7, 0, 8;
  Matrix expect(1, 4);
  expect << 5, -1, 2, 8;
  CHECK(net.forward(x) == expect);
}

TEST_CASE("chunked batches agree with one-row evaluation") {
  const auto net = Network::build(small_spec(), 2);
  const Matrix x = Matrix::Random(3 * kChunkRows + 5, 12);
  const Matrix all = net.forward(x);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    CHECK((net.forward(Matrix(x.row(i))) - all.row(i)).cwiseAbs().maxCoeff() < 1e-13);
}

TEST_CASE("backward matches central differences") {
  const auto net = Network::build(small_spec(), 3);
  const Matrix x = Matrix::Random(kChunkRows + 3, 12);
  const Matrix seed_grad = Matrix::Random(x.rows(), 1);
  Tape tape;
  net.forward(x, tape);
  std::vector<double> grad(net.parameter_count(), 0.0);
  const Matrix gx = net.backward(tape, seed_grad, grad);

  auto objective = [&](const Network& n, const Matrix& in) { return (n.forward(in).array() * seed_grad.array()).sum(); };
  const double h = 1e-6;
  Network probe = net;
  for (std::size_t k = 0; k < grad.size(); ++k) {
    const double keep = probe.parameters()[k];
    probe.parameters()[k] = keep + h;
    const double up = objective(probe, x);
    probe.parameters()[k] = keep - h;
    const double down = objective(probe, x);
    probe.parameters()[k] = keep;
    CHECK(grad[k] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6).scale(1.0));
  }
  for (int trial = 0; trial < 20; ++trial) {
    const auto i = static_cast<Eigen::Index>(trial % x.rows());
    const int j = trial % 12;
    Matrix xp = x, xm = x;
    xp(i, j) += h;
    xm(i, j) -= h;
    CHECK(gx(i, j) == doctest::Approx((objective(net, xp) - objective(net, xm)) / (2 * h)).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("tangent passes are the Jacobian-vector product and its parameter derivative") {
  const auto net = Network::build(small_spec(), 6);
  const Matrix x = Matrix::Random(7, 12);
  const Matrix v = Matrix::Random(7, 12);
  Tape tape;
  net.forward(x, tape);
  const Matrix jv = net.tangent_forward(tape, v);
  const double h = 1e-6;
  const Matrix fd = (net.forward(x + h * v) - net.forward(x - h * v)) / (2 * h);
  CHECK((jv - fd).cwiseAbs().maxCoeff() < 1e-7);

  // d/dtheta sum_n grad_x D(x_n) . v_n, differenced through backward.
  std::vector<double> grad(net.parameter_count(), 0.0);
  net.tangent_backward(tape, Matrix::Ones(7, 1), grad);
  auto objective = [&](const Network& n) {
    Tape t;
    n.forward(x, t);
    const Matrix gx = n.backward(t, Matrix::Ones(7, 1), {});
    return (gx.array() * v.array()).sum();
  };
  Network probe = net;
  for (std::size_t k = 0; k < grad.size(); ++k) {
    const double keep = probe.parameters()[k];
    probe.parameters()[k] = keep + h;
    const double up = objective(probe);
    probe.parameters()[k] = keep - h;
    const double down = objective(probe);
    probe.parameters()[k] = keep;
    CHECK(grad[k] == doctest::Approx((up - down) / (2 * h)).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("gradient buffers of the wrong size are rejected") {
  const auto net = Network::build(small_spec(), 1);
  Tape tape;
  net.forward(Matrix::Random(2, 12), tape);
  std::vector<double> wrong(3);
  CHECK_THROWS(net.backward(tape, Matrix::Ones(2, 1), wrong));
  CHECK_THROWS(net.backward(tape, Matrix::Ones(3, 1), {}));
  CHECK_THROWS_AS(net.forward(Matrix::Random(2, 11)), InputError);
}

TEST_CASE("Adam first step moves each parameter by about lr against its gradient") {
  Adam opt(3, 0.01, 0.5, 0.9);
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 0.0};
  opt.step(p, g);
  CHECK(p[0] == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)));
  CHECK(p[2] == 0.5);
  CHECK(opt.steps() == 1);
}

TEST_CASE("weights are drawn inside the fan-in bound and depend on the seed") {
  const auto a = Network::build(small_spec(), 1);
  const auto b = Network::build(small_spec(), 1);
  const auto c = Network::build(small_spec(), 2);
  CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  CHECK_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
  // First conv: fan-in 5.
  for (int k = 0; k < 18; ++k) CHECK(std::abs(a.parameters()[k]) <= 1.0 / std::sqrt(5.0));
}
