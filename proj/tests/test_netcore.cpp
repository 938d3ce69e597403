#include <doctest.h>

#include <cmath>
#include <functional>

#include "helpers.hpp"
#include "polyrom/errors.hpp"
#include "polyrom/netcore.hpp"

using namespace polyrom;
using testutil::fd_gradient;
using testutil::max_rel_diff;
using testutil::random_vector;

namespace {

LayerSpec lin_spec(int in, int out, bool bias = true) {
  LayerSpec s;
  s.kind = LayerKind::Linear;
  s.c_in = in;
  s.c_out = out;
  s.bias = bias;
  return s;
}

LayerSpec conv_spec(LayerKind kind, int ci, int co, int k, int stride, bool bias = false) {
  LayerSpec s;
  s.kind = kind;
  s.c_in = ci;
  s.c_out = co;
  s.k = k;
  s.stride = stride;
  s.bias = bias;
  return s;
}

Tensor make_tensor(std::vector<int> shape, std::mt19937_64& gen) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (auto& x : t.data) x = dist(gen);
  return t;
}

// Scalar readout sum_i mix_i * out_i used by all gradient checks.
double mixed_output(Network& net, const Tensor& input, const Vector& mix) {
  Tensor out = net.forward(input);
  REQUIRE(out.size() == mix.size());
  double s = 0.0;
  for (std::size_t i = 0; i < mix.size(); ++i) s += mix[i] * out.data[i];
  return s;
}

// Checks parameter and input gradients of a network against central
// differences; returns the larger relative mismatch.
double gradient_check(Network& net, const Tensor& input, unsigned seed) {
  auto gen = testutil::rng(seed);
  Tensor probe = net.forward(input);
  Vector mix = random_vector(gen, probe.size());

  net.zero_grads();
  net.forward(input);
  Tensor up(probe.shape);
  up.data = mix;
  Tensor din = net.backward(up, true);
  Vector pg = net.flatten_grads();

  const Vector p0 = net.flatten_params();
  Vector pg_fd = fd_gradient(
      [&](const Vector& p) {
        net.load_params(p);
        return mixed_output(net, input, mix);
      },
      p0);
  net.load_params(p0);
  double worst = pg.empty() ? 0.0 : max_rel_diff(pg, pg_fd, 1e-4);

  Vector ig_fd = fd_gradient(
      [&](const Vector& x) {
        Tensor t(input.shape);
        t.data = x;
        return mixed_output(net, t, mix);
      },
      input.data);
  worst = std::max(worst, max_rel_diff(din.data, ig_fd, 1e-4));
  return worst;
}

}  // namespace

TEST_SUITE("netcore") {

TEST_CASE("msoftmax matches its defining formula") {
  Vector y = msoftmax({3.0, 3.0});
  CHECK(y[0] == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(y[1] == doctest::Approx(0.5).epsilon(1e-14));

  Vector z = msoftmax({0.7, 0.0, 0.0});
  CHECK(z[0] == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(z[1] == 0.0);  // exact: 0 * tanh(0) = 0
  CHECK(z[2] == 0.0);

  // Direct scalar oracle for (2, 1).
  const double g2 = 2.0 * std::tanh(20.0), g1 = 1.0 * std::tanh(10.0);
  Vector w = msoftmax({2.0, 1.0});
  CHECK(w[0] == doctest::Approx(g2 / (g1 + g2)).epsilon(1e-14));
  CHECK(w[1] == doctest::Approx(g1 / (g1 + g2)).epsilon(1e-14));
  CHECK(w[0] == doctest::Approx(0.66667).epsilon(1e-4));

  // All-zero input falls back to the uniform vector.
  Vector u = msoftmax({0.0, 0.0, 0.0, 0.0});
  for (double x : u) CHECK(x == doctest::Approx(0.25).epsilon(1e-14));
}

TEST_CASE("msoftmax stays on the simplex for random inputs") {
  auto gen = testutil::rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    Vector x = random_vector(gen, 1 + trial % 7, -3.0, 3.0);
    Vector y = msoftmax(x);
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      CHECK(y[i] >= 0.0);
      if (x[i] == 0.0) CHECK(y[i] == 0.0);
      sum += y[i];
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("msoftmax backward matches finite differences") {
  auto gen = testutil::rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    Vector x = random_vector(gen, 5, -2.0, 2.0);
    Vector up = random_vector(gen, 5);
    Vector got = msoftmax_backward(x, up);
    Vector fd = fd_gradient(
        [&](const Vector& p) {
          Vector y = msoftmax(p);
          double s = 0.0;
          for (std::size_t i = 0; i < y.size(); ++i) s += up[i] * y[i];
          return s;
        },
        x);
    CHECK(max_rel_diff(got, fd, 1e-5) < 1e-5);
  }
  // Output sum is constant one, so an all-ones upstream yields zero.
  Vector zero_grad = msoftmax_backward({0.4, 0.4}, {1.0, 1.0});
  for (double g : zero_grad) CHECK(std::abs(g) < 1e-12);
  Vector null_up = msoftmax_backward({0.3, -0.7, 1.1}, {0.0, 0.0, 0.0});
  for (double g : null_up) CHECK(g == 0.0);
}

TEST_CASE("elu values and derivative") {
  CHECK(elu(0.0) == 0.0);
  CHECK(elu(1.0) == 1.0);
  CHECK(elu(-1.0) == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-14));
  auto gen = testutil::rng(31);
  std::uniform_real_distribution<double> dist(-2.0, 2.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double x = dist(gen);
    const double h = 1e-6;
    const double fd = (elu(x + h) - elu(x - h)) / (2.0 * h);
    CHECK(std::abs(elu_grad(x) - fd) < 1e-6);
  }
}

TEST_CASE("pointwise identity kernel passes the input through") {
  const int c = 3, h = 5, w = 4;
  Network net = build_network({conv_spec(LayerKind::Pointwise, c, c, 1, 1)}, 0);
  Vector ident(static_cast<std::size_t>(c) * c, 0.0);
  for (int i = 0; i < c; ++i) ident[static_cast<std::size_t>(i) * c + i] = 1.0;
  net.load_params(ident);
  auto gen = testutil::rng(4);
  Tensor x = make_tensor({c, h, w}, gen);
  Tensor y = net.forward(x);
  REQUIRE(y.shape == x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    CHECK(y.data[i] == doctest::Approx(x.data[i]).epsilon(1e-14));
  }
}

TEST_CASE("all-ones depthwise kernel counts covered cells under zero padding") {
  Network net = build_network({conv_spec(LayerKind::Depthwise, 1, 1, 3, 1)}, 0);
  net.load_params(Vector(9, 1.0));
  Tensor x({1, 5, 5});
  for (auto& v : x.data) v = 1.0;
  Tensor y = net.forward(x);
  REQUIRE(y.shape == std::vector<int>{1, 5, 5});
  CHECK(y.data[2 * 5 + 2] == doctest::Approx(9.0).epsilon(1e-14));  // interior
  CHECK(y.data[0] == doctest::Approx(4.0).epsilon(1e-14));          // corner
  CHECK(y.data[1] == doctest::Approx(6.0).epsilon(1e-14));          // edge
}

TEST_CASE("conv forward matches a naive six-loop oracle") {
  auto gen = testutil::rng(77);
  for (int stride = 1; stride <= 2; ++stride) {
    const int ci = 2, co = 3, k = 3, h = 6, w = 5;
    Network net = build_network({conv_spec(LayerKind::Conv3x3, ci, co, k, stride)}, 12);
    Tensor x = make_tensor({ci, h, w}, gen);
    Tensor y = net.forward(x);
    const Vector wts = net.flatten_params();
    const int p = k / 2;
    const int ho = (h + 2 * p - k) / stride + 1;
    const int wo = (w + 2 * p - k) / stride + 1;
    REQUIRE(y.shape == std::vector<int>{co, ho, wo});
    for (int oc = 0; oc < co; ++oc) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (int icn = 0; icn < ci; ++icn) {
            for (int ky = 0; ky < k; ++ky) {
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride + ky - p;
                const int ix = ox * stride + kx - p;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += wts[((static_cast<std::size_t>(oc) * ci + icn) * k + ky) * k + kx] *
                       x.data[(static_cast<std::size_t>(icn) * h + iy) * w + ix];
              }
            }
          }
          const double got = y.data[(static_cast<std::size_t>(oc) * ho + oy) * wo + ox];
          CHECK(got == doctest::Approx(acc).epsilon(1e-12));
        }
      }
    }
  }
}

TEST_CASE("conv and depthwise gradients match finite differences") {
  auto gen = testutil::rng(55);
  {
    Network net = build_network({conv_spec(LayerKind::Conv3x3, 2, 3, 3, 1, true)}, 5);
    Tensor x = make_tensor({2, 6, 6}, gen);
    CHECK(gradient_check(net, x, 100) < 1e-5);
  }
  {
    Network net = build_network({conv_spec(LayerKind::Conv3x3, 2, 2, 3, 2)}, 6);
    Tensor x = make_tensor({2, 7, 5}, gen);
    CHECK(gradient_check(net, x, 101) < 1e-5);
  }
  {
    Network net = build_network({conv_spec(LayerKind::Depthwise, 3, 3, 3, 1)}, 7);
    Tensor x = make_tensor({3, 5, 5}, gen);
    CHECK(gradient_check(net, x, 102) < 1e-5);
  }
  {
    Network net = build_network({conv_spec(LayerKind::Pointwise, 3, 2, 1, 1)}, 8);
    Tensor x = make_tensor({3, 4, 4}, gen);
    CHECK(gradient_check(net, x, 103) < 1e-5);
  }
  {
    Network net = build_network({lin_spec(6, 4)}, 9);
    Tensor x = make_tensor({6}, gen);
    CHECK(gradient_check(net, x, 104) < 1e-5);
  }
}

TEST_CASE("inverted residual passthrough, shape law, and gradients") {
  // All-zero parameters with stride 1 and matching channels reduce the block
  // to its skip connection.
  Network net = build_network({conv_spec(LayerKind::InvertedResidual, 2, 2, 3, 1)}, 3);
  net.load_params(Vector(net.param_count(), 0.0));
  auto gen = testutil::rng(13);
  Tensor x = make_tensor({2, 6, 6}, gen);
  Tensor y = net.forward(x);
  REQUIRE(y.shape == x.shape);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == x.data[i]);

  // Stride 2 halves spatial dims with ceiling rounding and drops the skip.
  Network down = build_network({conv_spec(LayerKind::InvertedResidual, 2, 4, 3, 2)}, 4);
  Tensor x2 = make_tensor({2, 7, 9}, gen);
  Tensor y2 = down.forward(x2);
  CHECK(y2.shape == std::vector<int>{4, 4, 5});

  Network grad_net = build_network({conv_spec(LayerKind::InvertedResidual, 2, 2, 3, 1)}, 19);
  Tensor x3 = make_tensor({2, 8, 8}, gen);
  CHECK(gradient_check(grad_net, x3, 105) < 1e-5);

  Network grad_net2 = build_network({conv_spec(LayerKind::InvertedResidual, 2, 3, 3, 2)}, 20);
  CHECK(gradient_check(grad_net2, x3, 106) < 1e-5);
}

TEST_CASE("global average pooling") {
  LayerSpec gap;
  gap.kind = LayerKind::GlobalAveragePool;
  Network net = build_network({gap}, 0);
  Tensor x({2, 3, 3});
  for (int i = 0; i < 9; ++i) x.data[static_cast<std::size_t>(i)] = 2.5;
  auto gen = testutil::rng(91);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  double mean = 0.0;
  for (int i = 9; i < 18; ++i) {
    x.data[static_cast<std::size_t>(i)] = dist(gen);
    mean += x.data[static_cast<std::size_t>(i)];
  }
  mean /= 9.0;
  Tensor y = net.forward(x);
  REQUIRE(y.shape == std::vector<int>{2});
  CHECK(y.data[0] == doctest::Approx(2.5).epsilon(1e-14));
  CHECK(y.data[1] == doctest::Approx(mean).epsilon(1e-14));

  // Single pixel acts as the identity.
  Tensor px({3, 1, 1});
  px.data = {1.0, -2.0, 0.5};
  Tensor py = net.forward(px);
  CHECK(py.data == px.data);

  Tensor g = make_tensor({2, 4, 4}, gen);
  CHECK(gradient_check(net, g, 107) < 1e-5);
}

TEST_CASE("cross entropy values, batch mean, and gradient") {
  CHECK(cross_entropy({1.0, 0.0}, {1.0, 0.0}) <= 1e-11);
  CHECK(cross_entropy({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy({1.0, 0.0, 0.0}, {0.5, 0.5}), DimensionError);
  CHECK_THROWS(cross_entropy({0.7, 0.7}, {0.5, 0.5}));  // label off the simplex

  auto gen = testutil::rng(23);
  double batch = 0.0, oracle = 0.0;
  const int P = 16;
  for (int p = 0; p < P; ++p) {
    Vector probs = msoftmax(random_vector(gen, 4, -1.0, 1.0));
    Vector label(4, 0.0);
    label[static_cast<std::size_t>(p % 4)] = 1.0;
    batch += cross_entropy(label, probs) / P;
    double s = 0.0;
    for (int i = 0; i < 4; ++i) {
      s -= label[static_cast<std::size_t>(i)] *
           std::log(std::max(probs[static_cast<std::size_t>(i)], 1e-12));
    }
    oracle += s / P;
  }
  CHECK(batch == doctest::Approx(oracle).epsilon(1e-12));

  // Gradient against finite differences at an interior point; renormalizing
  // keeps the perturbed argument on the simplex.
  Vector probs{0.2, 0.3, 0.5};
  Vector label{0.0, 1.0, 0.0};
  Vector g = cross_entropy_grad(label, probs);
  for (int i = 0; i < 3; ++i) {
    const double want = -label[static_cast<std::size_t>(i)] / probs[static_cast<std::size_t>(i)];
    CHECK(g[static_cast<std::size_t>(i)] == doctest::Approx(want).epsilon(1e-12));
  }
}

TEST_CASE("adam first step, zero gradient, and optimization run") {
  AdamConfig cfg;
  cfg.lr = 1e-3;
  {
    Vector p{0.5, -0.5};
    Vector g{0.3, -0.2};
    AdamState st;
    adam_step(p, g, st, cfg);
    CHECK(p[0] == doctest::Approx(0.5 - cfg.lr).epsilon(1e-7));
    CHECK(p[1] == doctest::Approx(-0.5 + cfg.lr).epsilon(1e-7));
  }
  {
    Vector p{1.0, 2.0};
    AdamState st;
    adam_step(p, {0.0, 0.0}, st, cfg);
    CHECK(p[0] == 1.0);
    CHECK(p[1] == 2.0);
  }
  {
    // Step small enough that the iterate never crosses the optimum, so the
    // objective decreases strictly.
    Vector p{1.0, 1.0};
    AdamState st;
    AdamConfig fast;
    fast.lr = 0.002;
    const double initial = dot(p, p);
    double prev = initial;
    for (int step = 1; step <= 200; ++step) {
      Vector g = scaled(p, 2.0);
      adam_step(p, g, st, fast);
      const double f = dot(p, p);
      if (step > 5) CHECK(f < prev);
      prev = f;
    }
    CHECK(prev < 0.5 * initial);
  }
}

TEST_CASE("depthwise separable parameter bookkeeping") {
  CHECK(depthwise_separable_param_ratio(3, 8) == doctest::Approx(17.0 / 72.0).epsilon(1e-15));
  CHECK(depthwise_separable_param_ratio(1, 1) == doctest::Approx(2.0).epsilon(1e-15));
  // Absolute counts agree with constructed layers.
  const int k = 3, ci = 4, co = 8;
  auto [sep, full] = depthwise_separable_param_counts(k, ci, co);
  Network dw = build_network({conv_spec(LayerKind::Depthwise, ci, ci, k, 1),
                              conv_spec(LayerKind::Pointwise, ci, co, 1, 1)},
                             2);
  Network dense = build_network({conv_spec(LayerKind::Conv3x3, ci, co, k, 1)}, 2);
  CHECK(sep == dw.param_count());
  CHECK(full == dense.param_count());
  CHECK(static_cast<double>(sep) / static_cast<double>(full) <=
        depthwise_separable_param_ratio(k, co) + 1e-12);
}

TEST_CASE("conv encoder factory: structure, simplex output, parameter count") {
  Network enc = make_conv_encoder(2, 16, 16, 3, 42);
  auto specs = enc.specs();
  REQUIRE(specs.size() >= 7);
  CHECK(specs[0].kind == LayerKind::Conv3x3);
  int ir_count = 0, stride2 = 0;
  bool saw_gap = false, saw_linear_after_gap = false;
  for (const auto& s : specs) {
    if (s.kind == LayerKind::InvertedResidual) {
      ++ir_count;
      if (s.stride == 2) ++stride2;
    }
    if (s.kind == LayerKind::GlobalAveragePool) saw_gap = true;
    if (saw_gap && s.kind == LayerKind::Linear) saw_linear_after_gap = true;
  }
  CHECK(ir_count == 3);
  CHECK(stride2 == 2);
  CHECK(saw_gap);
  CHECK(saw_linear_after_gap);
  CHECK(specs.back().kind == LayerKind::Msoftmax);

  // Parameter count equals the sum over layer specs computed independently.
  std::size_t expect = 0;
  for (const auto& s : specs) {
    switch (s.kind) {
      case LayerKind::Linear:
        expect += static_cast<std::size_t>(s.c_in) * s.c_out + (s.bias ? s.c_out : 0);
        break;
      case LayerKind::Conv3x3:
        expect += static_cast<std::size_t>(s.c_out) * s.c_in * s.k * s.k +
                  (s.bias ? s.c_out : 0);
        break;
      case LayerKind::Depthwise:
        expect += static_cast<std::size_t>(s.c_in) * s.k * s.k;
        break;
      case LayerKind::Pointwise:
        expect += static_cast<std::size_t>(s.c_out) * s.c_in;
        break;
      case LayerKind::InvertedResidual: {
        const std::size_t mid = static_cast<std::size_t>(s.c_in) * s.expand;
        expect += mid * s.c_in + mid * s.k * s.k + static_cast<std::size_t>(s.c_out) * mid;
        break;
      }
      default:
        break;
    }
  }
  CHECK(enc.param_count() == expect);

  auto gen = testutil::rng(2);
  Tensor x = make_tensor({2, 16, 16}, gen);
  Tensor rho = enc.forward(x);
  REQUIRE(rho.shape == std::vector<int>{3});
  double sum = 0.0;
  for (double v : rho.data) {
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("mlp encoder and cluster net produce simplex outputs") {
  auto gen = testutil::rng(3);
  Network enc = make_mlp_encoder(40, 4, 7);
  Vector rho = enc.forward_vec(random_vector(gen, 40));
  REQUIRE(rho.size() == 4);
  double s = 0.0;
  for (double v : rho) {
    CHECK(v >= 0.0);
    s += v;
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));

  Network cnet = make_cluster_net(4, 3, 9);
  auto specs = cnet.specs();
  REQUIRE(specs.size() == 6);
  CHECK(specs[0].c_out == 12);
  CHECK(specs[2].c_out == 12);
  CHECK(specs[4].c_out == 3);
  CHECK(specs[5].kind == LayerKind::Msoftmax);
  Vector alpha = cnet.forward_vec(rho);
  REQUIRE(alpha.size() == 3);
  double sa = 0.0;
  for (double v : alpha) {
    CHECK(v >= 0.0);
    sa += v;
  }
  CHECK(sa == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("whole encoders pass gradient checks") {
  auto gen = testutil::rng(12);
  {
    Network enc = make_mlp_encoder(12, 3, 1);
    Tensor x = make_tensor({12}, gen);
    CHECK(gradient_check(enc, x, 110) < 1e-5);
  }
  {
    Network enc = make_conv_encoder(2, 8, 8, 2, 2);
    Tensor x = make_tensor({2, 8, 8}, gen);
    CHECK(gradient_check(enc, x, 111) < 1e-5);
  }
}

TEST_CASE("network backward is repeatable after one forward") {
  auto gen = testutil::rng(44);
  Network enc = make_mlp_encoder(10, 3, 5);
  Vector x = random_vector(gen, 10);
  enc.forward_vec(x);
  Vector up = random_vector(gen, 3);
  Vector g1 = enc.backward_vec(up, false);
  Vector g2 = enc.backward_vec(up, false);
  CHECK(g1 == g2);
}

TEST_CASE("network parameter round trip and copies are independent") {
  Network a = make_mlp_encoder(8, 2, 11);
  Vector p = a.flatten_params();
  Network b = a;  // deep copy
  auto gen = testutil::rng(1);
  Vector x = random_vector(gen, 8);
  Vector ya = a.forward_vec(x);
  b.load_params(Vector(p.size(), 0.0));
  // Mutating the copy's parameters must not disturb the original.
  Vector ya2 = a.forward_vec(x);
  CHECK(ya == ya2);
  a.load_params(p);
  CHECK(a.flatten_params() == p);
  CHECK_THROWS_AS(a.load_params(Vector(p.size() + 1, 0.0)), DimensionError);
}

}  // TEST_SUITE
