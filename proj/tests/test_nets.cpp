/* Copyright 2026 The fdistill Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "fdistill/errors.hpp"
#include "fdistill/nets.hpp"
#include "fdistill/rng.hpp"

using namespace fdistill;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double scale = 1.0) {
  const CounterRng rng(seed, 3);
  Matrix m(rows, cols);
  for (std::size_t k = 0; k < m.data.size(); ++k) m.data[k] = scale * rng.normal(k);
  return m;
}

std::vector<double> random_sigmas(std::size_t n, std::uint64_t seed) {
  const CounterRng rng(seed, 4);
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) s[i] = std::exp(4.0 * rng.uniform(i) - 3.0);
  return s;
}

// Randomised biases as well as weights, so every parameter gets a gradient.
FeedForwardNet random_net(std::vector<std::size_t> widths, Activation act, bool cond, std::uint64_t seed) {
  FeedForwardNet net(std::move(widths), act, cond);
  initialize(net, seed, 1.0);
  auto p = net.mutable_parameters();
  const CounterRng rng(seed, 5);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    for (std::size_t k = 0; k < net.bias(l).size(); ++k) p[net.bias_offset(l) + k] = 0.3 * rng.normal(l * 1000 + k);
  }
  return net;
}

double objective(const FeedForwardNet& net, const Matrix& x, std::span<const double> sigma, const Matrix& g) {
  const auto c = forward(net, x, sigma);
  double s = 0.0;
  for (std::size_t k = 0; k < g.data.size(); ++k) s += c.output().data[k] * g.data[k];
  return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-3}); }

}  // namespace

TEST_CASE("parameter layout") {
  const FeedForwardNet net({3, 5, 2}, Activation::tanh, false);
  CHECK(net.parameter_count() == (3 + 1) * 5 + (5 + 1) * 2);
  CHECK(FeedForwardNet::parameter_count_for({18, 128, 128, 2}) == 19 * 128 + 129 * 128 + 129 * 2);
  const FeedForwardNet cond({kSigmaFeatures + 2, 4, 1}, Activation::silu, true);
  CHECK(cond.data_width() == 2);
  CHECK_THROWS(FeedForwardNet({3}, Activation::tanh, false));
}

TEST_CASE("forward examples") {
  FeedForwardNet zero({3, 6, 2}, Activation::tanh, false);
  const Matrix x = random_matrix(5, 3, 1);
  CHECK(std::all_of(forward(zero, x).output().data.begin(), forward(zero, x).output().data.end(),
                    [](double v) { return v == 0.0; }));

  FeedForwardNet id({3, 3}, Activation::silu, false);
  auto p = id.mutable_parameters();
  for (std::size_t i = 0; i < 3; ++i) p[id.weight_offset(0) + i * 3 + i] = 1.0;
  CHECK(forward(id, x).output().data == x.data);

  const auto net = random_net({3, 8, 8, 2}, Activation::silu, false, 2);
  CHECK(forward(net, x).output().data == forward(net, x).output().data);

  CHECK_THROWS_AS(forward(net, random_matrix(5, 4, 1)), ShapeError);
  const auto cnet = random_net({kSigmaFeatures + 3, 8, 2}, Activation::silu, true, 3);
  CHECK_THROWS_AS(forward(cnet, x), ShapeError);
  CHECK_NOTHROW(forward(cnet, x, random_sigmas(5, 1)));
}

TEST_CASE("backward examples") {
  const auto net = random_net({3, 7, 2}, Activation::tanh, false, 4);
  const Matrix x = random_matrix(6, 3, 5);
  const auto cache = forward(net, x);
  const auto g0 = backward(net, cache, Matrix(6, 2));
  CHECK(std::all_of(g0.params.begin(), g0.params.end(), [](double v) { return v == 0.0; }));
  CHECK(std::all_of(g0.input.data.begin(), g0.input.data.end(), [](double v) { return v == 0.0; }));

  const auto lin = random_net({4, 3}, Activation::tanh, false, 6);
  const Matrix xl = random_matrix(2, 4, 7);
  const Matrix gl = random_matrix(2, 3, 8);
  const auto gr = backward(lin, forward(lin, xl), gl);
  const auto w = lin.weights(0);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t k = 0; k < 4; ++k) {
      double expect = 0.0;
      for (std::size_t o = 0; o < 3; ++o) expect += w[k * 3 + o] * gl(i, o);
      CHECK(gr.input(i, k) == expect);
    }
  }

  auto stale = random_net({3, 7, 2}, Activation::tanh, false, 4);
  const auto old = forward(stale, x);
  stale.mutable_parameters()[0] += 1.0;
  CHECK_THROWS(backward(stale, old, Matrix(6, 2)));
  const auto other = random_net({3, 7, 2}, Activation::tanh, false, 4);
  CHECK_THROWS(backward(other, old, Matrix(6, 2)));
  CHECK_THROWS_AS(backward(net, cache, Matrix(6, 3)), ShapeError);
}

TEST_CASE("gradients match central finite differences") {
  for (Activation act : {Activation::tanh, Activation::silu}) {
    CAPTURE(to_string(act));
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
      const bool cond = trial % 2 == 1;
      const std::size_t in = 2 + trial % 3;
      std::vector<std::size_t> widths{in + (cond ? kSigmaFeatures : 0), 6 + trial % 4, 5, 1 + trial % 3};
      auto net = random_net(widths, act, cond, 100 + trial);
      const Matrix x = random_matrix(4, in, 200 + trial);
      const auto sigma = cond ? random_sigmas(4, trial) : std::vector<double>{};
      const Matrix g = random_matrix(4, widths.back(), 300 + trial);
      const auto grads = backward(net, forward(net, x, sigma), g);
      const double h = 1e-5;
      for (std::size_t k = 0; k < net.parameter_count(); ++k) {
        const double orig = net.parameters()[k];
        net.mutable_parameters()[k] = orig + h;
        const double up = objective(net, x, sigma, g);
        net.mutable_parameters()[k] = orig - h;
        const double dn = objective(net, x, sigma, g);
        net.mutable_parameters()[k] = orig;
        worst = std::max(worst, rel_err(grads.params[k], (up - dn) / (2 * h)));
      }
      for (std::size_t k = 0; k < x.data.size(); ++k) {
        Matrix xu = x;
        Matrix xd = x;
        xu.data[k] += h;
        xd.data[k] -= h;
        const double fd = (objective(net, xu, sigma, g) - objective(net, xd, sigma, g)) / (2 * h);
        worst = std::max(worst, rel_err(grads.input.data[k], fd));
      }
    }
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("chain rule through stacked nets") {
  // Backpropagating the second net's input gradient into the first gives the
  // gradient of the composition.
  auto a = random_net({3, 6, 4}, Activation::silu, false, 11);
  const auto b = random_net({4, 5, 2}, Activation::tanh, false, 12);
  const Matrix x = random_matrix(3, 3, 13);
  const Matrix g = random_matrix(3, 2, 14);
  const auto ca = forward(a, x);
  const auto cb = forward(b, ca.output());
  const auto gb = backward(b, cb, g);
  const auto ga = backward(a, ca, gb.input);
  const auto composite = [&](const FeedForwardNet& first) {
    const auto out = forward(b, forward(first, x).output()).output();
    double s = 0.0;
    for (std::size_t k = 0; k < g.data.size(); ++k) s += out.data[k] * g.data[k];
    return s;
  };
  for (std::size_t k = 0; k < a.parameter_count(); ++k) {
    const double orig = a.parameters()[k];
    a.mutable_parameters()[k] = orig + 1e-6;
    const double up = composite(a);
    a.mutable_parameters()[k] = orig - 1e-6;
    const double dn = composite(a);
    a.mutable_parameters()[k] = orig;
    CHECK(std::abs(ga.params[k] - (up - dn) / 2e-6) <= 1e-7);
  }
}

TEST_CASE("input gradient norm penalty") {
  for (Activation act : {Activation::tanh, Activation::silu}) {
    auto net = random_net({kSigmaFeatures + 2, 7, 6, 1}, act, true, 21);
    const Matrix x = random_matrix(5, 2, 22);
    const auto sigma = random_sigmas(5, 23);
    const std::vector<double> w{0.5, 1.0, 2.0, 0.0, 1.5};
    const auto cache = forward(net, x, sigma);
    const auto pen = input_grad_norm_backward(net, cache, w);
    const auto penalty = [&](const FeedForwardNet& n) {
      const auto gi = backward(n, forward(n, x, sigma), Matrix(5, 1, 1.0)).input;
      double s = 0.0;
      for (std::size_t i = 0; i < 5; ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < 2; ++j) sq += gi(i, j) * gi(i, j);
        s += 0.5 * w[i] * sq;
      }
      return s;
    };
    const auto gi = backward(net, cache, Matrix(5, 1, 1.0)).input;
    for (std::size_t i = 0; i < 5; ++i) {
      CHECK(pen.sq_norms[i] == doctest::Approx(gi(i, 0) * gi(i, 0) + gi(i, 1) * gi(i, 1)).epsilon(1e-12));
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < net.parameter_count(); ++k) {
      const double orig = net.parameters()[k];
      net.mutable_parameters()[k] = orig + 1e-5;
      const double up = penalty(net);
      net.mutable_parameters()[k] = orig - 1e-5;
      const double dn = penalty(net);
      net.mutable_parameters()[k] = orig;
      worst = std::max(worst, rel_err(pen.params[k], (up - dn) / 2e-5));
    }
    CHECK(worst <= 1e-4);
  }
  const FeedForwardNet wide({2, 3, 2}, Activation::tanh, false);
  CHECK_THROWS(input_grad_norm_backward(wide, forward(wide, Matrix(1, 2)), std::vector<double>{1.0}));
}

TEST_CASE("adam") {
  {
    AdamState s(3, {0.1, 0.9, 0.999, 1e-8, 0.0});
    std::vector<double> p{1.0, -2.0, 3.0};
    const auto before = p;
    adam_step(s, p, std::vector<double>(3, 0.0));
    CHECK(p == before);
    CHECK(s.step == 1);
  }
  {
    AdamState s(1, {0.1, 0.9, 0.999, 1e-8, 0.0});
    std::vector<double> p{0.0};
    adam_step(s, p, std::vector<double>{1.0});
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
  }
  {
    AdamState s(1, {0.1, 0.9, 0.999, 1e-8, 0.5});
    std::vector<double> p{2.0};
    adam_step(s, p, std::vector<double>{0.0});
    CHECK(p[0] == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  }
  {
    auto a = random_net({3, 5, 2}, Activation::silu, false, 31);
    auto b = random_net({3, 5, 2}, Activation::silu, false, 31);
    AdamState sa(a.parameter_count(), {});
    AdamState sb(b.parameter_count(), {});
    const auto g = random_matrix(1, a.parameter_count(), 32).data;
    for (int i = 0; i < 3; ++i) {
      adam_step(sa, a, g);
      adam_step(sb, b, g);
    }
    CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  }
  {
    AdamState s(3, {});
    std::vector<double> p{1.0, 2.0, 3.0};
    CHECK_THROWS_WITH_AS(adam_step(s, p, std::vector<double>{0.0, NAN, 0.0}), doctest::Contains("index 1"),
                         NumericalAbort);
    CHECK(p == std::vector<double>{1.0, 2.0, 3.0});
    CHECK(s.step == 0);
    CHECK_THROWS_AS(adam_step(s, p, std::vector<double>{0.0}), ShapeError);
  }
}

TEST_CASE("initialization and embedding") {
  FeedForwardNet net({kSigmaFeatures + 2, 64, 64, 2}, Activation::silu, true);
  initialize(net, 5, 0.0);
  for (double v : net.weights(2)) CHECK(v == 0.0);
  double s2 = 0.0;
  for (double v : net.weights(1)) s2 += v * v;
  CHECK(std::sqrt(s2 / net.weights(1).size()) == doctest::Approx(std::sqrt(2.0 / 64)).epsilon(0.05));
  FeedForwardNet again({kSigmaFeatures + 2, 64, 64, 2}, Activation::silu, true);
  initialize(again, 5, 0.0);
  CHECK(std::equal(net.parameters().begin(), net.parameters().end(), again.parameters().begin()));

  std::vector<double> e(kSigmaFeatures);
  std::vector<double> e2(kSigmaFeatures);
  sigma_features(1.0, e);
  for (std::size_t j = 0; j < kSigmaFeatures; j += 2) {
    CHECK(e[j] == 0.0);
    CHECK(e[j + 1] == 1.0);
  }
  sigma_features(0.5, e);
  sigma_features(0.5 * (1 + 1e-6), e2);
  for (std::size_t j = 0; j < kSigmaFeatures; ++j) CHECK(std::abs(e[j] - e2[j]) <= 1e-5);
  CHECK_THROWS_AS(sigma_features(0.0, e), DomainError);
  CHECK(parse_activation("tanh") == Activation::tanh);
  CHECK_THROWS(parse_activation("relu"));
}
