#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "mkgan/error.h"
#include "mkgan/nn.h"
#include "mkgan/ops.h"
#include "test_util.h"

using namespace mkgan;
using namespace mkgan::nn;

namespace {

Tensor random_tensor(int n, int c, int h, int w, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Tensor t(n, c, h, w);
  for (double& v : t.data) v = g(rng);
  return t;
}

// Scalar loss <forward(x), r> so the upstream gradient is r.
double probe_loss(const Network& net, const Tensor& x, const Tensor& r) {
  const Tensor y = net.infer(x);
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data[i] * r.data[i];
  return s;
}

struct GradCheck {
  double worst_param = 0.0;
  double worst_input = 0.0;
};

// Central differences (h = 1e-4) against backward(); relative error with a
// floor so tiny gradients do not blow up the ratio.
GradCheck finite_difference_check(Network& net, const Tensor& x, std::uint64_t seed) {
  const Tensor y = net.forward(x);
  const Tensor r = random_tensor(y.n, y.c, y.h, y.w, seed);
  net.zero_grad();
  const Tensor gx = net.backward(r, true);
  constexpr double h = 1e-4;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1e-2, std::abs(a) + std::abs(b)); };
  GradCheck out;
  for (ConvLayer& layer : net.layers()) {
    for (auto* pair : {&layer.weight, &layer.bias}) {
      const auto& grads = pair == &layer.weight ? layer.weight_grad : layer.bias_grad;
      for (std::size_t i = 0; i < pair->size(); i += 1 + pair->size() / 40) {
        const double keep = (*pair)[i];
        (*pair)[i] = keep + h;
        const double up = probe_loss(net, x, r);
        (*pair)[i] = keep - h;
        const double down = probe_loss(net, x, r);
        (*pair)[i] = keep;
        out.worst_param = std::max(out.worst_param, rel((up - down) / (2 * h), grads[i]));
      }
    }
  }
  Tensor xp = x;
  for (std::size_t i = 0; i < x.size(); i += 1 + x.size() / 40) {
    xp.data[i] = x.data[i] + h;
    const double up = probe_loss(net, xp, r);
    xp.data[i] = x.data[i] - h;
    const double down = probe_loss(net, xp, r);
    xp.data[i] = x.data[i];
    out.worst_input = std::max(out.worst_input, rel((up - down) / (2 * h), gx.data[i]));
  }
  return out;
}

std::vector<double> all_grads(const Network& net) {
  std::vector<double> g;
  for (const ConvLayer& l : net.layers()) {
    g.insert(g.end(), l.weight_grad.begin(), l.weight_grad.end());
    g.insert(g.end(), l.bias_grad.begin(), l.bias_grad.end());
  }
  return g;
}

}  // namespace

TEST(NnForward, OneByOneIdentity) {
  Network net;
  ConvLayer& l = net.add_conv(1, 1, 1, 1, false);
  l.weight = {1.0};
  const Tensor x = random_tensor(2, 1, 5, 6, 1);
  EXPECT_EQ(net.forward(x).data, x.data);
}

TEST(NnForward, ReluOnNegativeIsZero) {
  Network net;
  ConvLayer& l = net.add_conv(1, 1, 1, 1, false, Activation::relu);
  l.weight = {1.0};
  Tensor x(1, 1, 4, 4, -0.5);
  for (double v : net.forward(x).data) EXPECT_EQ(v, 0.0);
}

TEST(NnForward, StackedLinearEqualsComposedKernel) {
  Network net;
  ConvLayer& a = net.add_conv(1, 1, 3, 1, false);
  ConvLayer& b = net.add_conv(1, 1, 5, 1, false);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (double& v : a.weight) v = g(rng);
  for (double& v : b.weight) v = g(rng);
  // Layers correlate; the equivalent true-convolution kernels are flipped.
  Kernel ka(3), kb(5);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) ka(2 - r, 2 - c) = net.layers()[0].weight[r * 3 + c];
  }
  for (int r = 0; r < 5; ++r) {
    for (int c = 0; c < 5; ++c) kb(4 - r, 4 - c) = net.layers()[1].weight[r * 5 + c];
  }
  const Image img = mkgan::test::random_image(20, 20, 1, 3);
  const Tensor y = net.forward(from_image(img));
  ASSERT_EQ(y.h, 14);
  const Image ref = conv2d(img, compose_kernels(ka, kb), Border::zero);
  double worst = 0.0;
  for (int yy = 0; yy < 14; ++yy) {
    for (int xx = 0; xx < 14; ++xx) worst = std::max(worst, std::abs(y.at(0, 0, yy, xx) - ref.at(0, yy + 3, xx + 3)));
  }
  EXPECT_LE(worst, 1e-10);
}

TEST(NnForward, ChannelMismatch) {
  Network net;
  net.add_conv(3, 4, 3);
  EXPECT_THROW(net.forward(Tensor(1, 1, 8, 8)), ShapeError);
  EXPECT_THROW(net.add_conv(5, 1, 1), ShapeError);
}

TEST(NnForward, ValidShrinkAndStride) {
  Network net;
  net.add_conv(1, 4, 7);
  net.add_conv(4, 4, 5);
  net.add_conv(4, 1, 1, 2);
  const auto [h, w] = net.output_dims(64, 50);
  EXPECT_EQ(h, 27);
  EXPECT_EQ(w, 20);
  EXPECT_EQ(net.receptive_field(), 11);
  Network same(Padding::same);
  same.add_conv(1, 2, 3);
  same.add_conv(2, 1, 3, 2);
  EXPECT_EQ(same.output_dims(9, 8), std::make_pair(5, 4));
}

TEST(NnBackward, WithoutForwardIsStateError) {
  Network net;
  net.add_conv(1, 1, 3);
  EXPECT_THROW(net.backward(Tensor(1, 1, 1, 1)), InvalidState);
}

TEST(NnBackward, ZeroUpstreamGivesZeroGrads) {
  Network net;
  net.add_conv(1, 3, 3, 1, true, Activation::relu);
  net.add_conv(3, 1, 3);
  std::mt19937_64 rng(4);
  init_he(net, rng);
  const Tensor y = net.forward(random_tensor(1, 1, 9, 9, 5));
  net.zero_grad();
  net.backward(Tensor(y.n, y.c, y.h, y.w));
  for (double g : all_grads(net)) EXPECT_EQ(g, 0.0);
}

TEST(NnBackward, DoublingUpstreamDoublesGrads) {
  Network net;
  net.add_conv(1, 3, 3, 1, true, Activation::leaky_relu);
  net.add_conv(3, 1, 3, 2, true, Activation::sigmoid);
  std::mt19937_64 rng(6);
  init_he(net, rng);
  const Tensor y = net.forward(random_tensor(2, 1, 11, 11, 7));
  Tensor r = random_tensor(y.n, y.c, y.h, y.w, 8);
  net.zero_grad();
  net.backward(r);
  const auto g1 = all_grads(net);
  for (double& v : r.data) v *= 2.0;
  net.zero_grad();
  net.backward(r);
  const auto g2 = all_grads(net);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g2[i], 2.0 * g1[i], 1e-12 * std::max(1.0, std::abs(g1[i])));
}

class ActivationGradCheck : public ::testing::TestWithParam<std::tuple<Activation, Padding, int>> {};

TEST_P(ActivationGradCheck, MatchesFiniteDifferences) {
  const auto [act, pad, stride] = GetParam();
  Network net(pad);
  net.add_conv(2, 3, 3, 1, true, act);
  net.add_conv(3, 2, 3, stride, true, act);
  net.add_conv(2, 1, 1, 1, true, Activation::none);
  std::mt19937_64 rng(9);
  init_he(net, rng);
  for (ConvLayer& l : net.layers()) {
    for (double& b : l.bias) b = 0.1;
  }
  const GradCheck r = finite_difference_check(net, random_tensor(2, 2, 10, 9, 10), 11);
  EXPECT_LE(r.worst_param, 1e-3);
  EXPECT_LE(r.worst_input, 1e-3);
}

INSTANTIATE_TEST_SUITE_P(
    AllKinds, ActivationGradCheck,
    ::testing::Combine(::testing::Values(Activation::none, Activation::relu, Activation::leaky_relu,
                                         Activation::sigmoid),
                       ::testing::Values(Padding::valid, Padding::same), ::testing::Values(1, 2)));

TEST(NnBackward, SpectralNormGradCheck) {
  Network net;
  net.add_conv(1, 4, 3, 1, true, Activation::leaky_relu, true);
  net.add_conv(4, 1, 1, 1, true, Activation::sigmoid, true);
  std::mt19937_64 rng(12);
  init_he(net, rng);
  for (ConvLayer& l : net.layers()) {
    for (int i = 0; i < 5; ++i) spectral_normalize(l);
  }
  const GradCheck r = finite_difference_check(net, random_tensor(1, 1, 8, 8, 13), 14);
  EXPECT_LE(r.worst_param, 1e-3);
  EXPECT_LE(r.worst_input, 1e-3);
}

TEST(NnBackward, SecondBackwardReusesCache) {
  Network net;
  net.add_conv(1, 2, 3, 1, true, Activation::relu);
  net.add_conv(2, 1, 3);
  std::mt19937_64 rng(15);
  init_he(net, rng);
  const Tensor y = net.forward(random_tensor(1, 1, 9, 9, 16));
  const Tensor r = random_tensor(y.n, y.c, y.h, y.w, 17);
  net.zero_grad();
  const Tensor a = net.backward(r);
  const auto g1 = all_grads(net);
  const Tensor b = net.backward(r);
  EXPECT_EQ(a.data, b.data);
  const auto g2 = all_grads(net);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g2[i], 2.0 * g1[i], 1e-12);
}

TEST(NnNetwork, LinearSuperposition) {
  Network net;
  net.add_conv(1, 8, 5, 1, false);
  net.add_conv(8, 8, 3, 1, false);
  net.add_conv(8, 1, 1, 2, false);
  std::mt19937_64 rng(18);
  init_he(net, rng);
  ASSERT_TRUE(net.is_linear());
  const Tensor x = random_tensor(1, 1, 16, 16, 19), z = random_tensor(1, 1, 16, 16, 20);
  const double alpha = 0.3, beta = -1.7;
  Tensor mix = x;
  for (std::size_t i = 0; i < mix.size(); ++i) mix.data[i] = alpha * x.data[i] + beta * z.data[i];
  const Tensor fx = net.infer(x), fz = net.infer(z), fm = net.infer(mix);
  for (std::size_t i = 0; i < fm.size(); ++i) EXPECT_NEAR(fm.data[i], alpha * fx.data[i] + beta * fz.data[i], 1e-6);
}

TEST(Adam, ZeroGradLeavesParameters) {
  Network net;
  net.add_conv(1, 2, 3);
  std::mt19937_64 rng(21);
  init_he(net, rng);
  const auto before = net.layers()[0].weight;
  Adam opt(1e-3);
  net.zero_grad();
  opt.step(net);
  EXPECT_EQ(net.layers()[0].weight, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Network net;
  ConvLayer& l = net.add_conv(1, 1, 1, 1, false);
  l.weight = {0.5};
  Adam opt(1e-3);
  net.layers()[0].weight_grad = {1.0};
  opt.step(net);
  EXPECT_NEAR(net.layers()[0].weight[0], 0.5 - 1e-3, 1e-9);
  EXPECT_EQ(net.layers()[0].weight_grad[0], 0.0);
  EXPECT_EQ(opt.steps(), 1);
}

TEST(Adam, QuadraticConverges) {
  Network net;
  ConvLayer& l = net.add_conv(1, 1, 1, 1, false);
  l.weight = {0.0};
  Adam opt(0.1);
  for (int i = 0; i < 200; ++i) {
    const double p = net.layers()[0].weight[0];
    net.layers()[0].weight_grad = {2.0 * (p - 3.0)};
    opt.step(net);
  }
  EXPECT_NEAR(net.layers()[0].weight[0], 3.0, 0.1);
}

TEST(Adam, DeterministicTrajectory) {
  auto run = [] {
    Network net;
    net.add_conv(1, 4, 3, 1, true, Activation::relu);
    net.add_conv(4, 1, 3);
    std::mt19937_64 rng(22);
    init_he(net, rng);
    Adam opt(1e-2);
    const Tensor x = random_tensor(2, 1, 10, 10, 23);
    for (int i = 0; i < 20; ++i) {
      const Tensor y = net.forward(x);
      Tensor g = y;
      for (double& v : g.data) v = 2.0 * (v - 0.5) / static_cast<double>(g.size());
      net.zero_grad();
      net.backward(g, false);
      opt.step(net);
    }
    return net.layers()[1].weight;
  };
  EXPECT_EQ(run(), run());
}

TEST(SpectralNorm, ConvergesToLeadingSingularValue) {
  Network net;
  net.add_conv(2, 3, 1, 1, false, Activation::none, true);
  std::mt19937_64 rng(24);
  init_he(net, rng);
  ConvLayer& layer = net.layers()[0];
  // Rank-one-dominated 3x2 matrix with singular values {2, 0.5}.
  Eigen::MatrixXd u = Eigen::MatrixXd::Random(3, 2), v = Eigen::MatrixXd::Random(2, 2);
  Eigen::HouseholderQR<Eigen::MatrixXd> qu(u), qv(v);
  const Eigen::MatrixXd U = qu.householderQ() * Eigen::MatrixXd::Identity(3, 2);
  const Eigen::MatrixXd V = qv.householderQ() * Eigen::MatrixXd::Identity(2, 2);
  const Eigen::MatrixXd w = U * Eigen::Vector2d(2.0, 0.5).asDiagonal() * V.transpose();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 2; ++c) layer.weight[r * 2 + c] = w(r, c);
  }
  double prev_err = 1e9;
  for (int i = 0; i < 30; ++i) {
    spectral_normalize(layer);
    const double err = std::abs(layer.spectral_scale() - 2.0);
    EXPECT_LE(err, prev_err + 1e-12);
    prev_err = err;
  }
  EXPECT_NEAR(layer.spectral_scale(), 2.0, 1e-6);
  Eigen::MatrixXd eff(3, 2);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 2; ++c) eff(r, c) = layer.weight[r * 2 + c] / layer.spectral_scale();
  }
  EXPECT_NEAR(Eigen::JacobiSVD<Eigen::MatrixXd>(eff).singularValues()(0), 1.0, 1e-6);

  for (double& v2 : layer.weight) v2 /= 2.0;
  for (int i = 0; i < 30; ++i) spectral_normalize(layer);
  EXPECT_NEAR(layer.spectral_scale(), 1.0, 0.01);
}

TEST(SpectralNorm, ZeroWeightsGuarded) {
  Network net;
  net.add_conv(1, 2, 3, 1, false, Activation::none, true);
  std::mt19937_64 rng(25);
  init_he(net, rng);
  std::fill(net.layers()[0].weight.begin(), net.layers()[0].weight.end(), 0.0);
  spectral_normalize(net.layers()[0]);
  EXPECT_GT(net.layers()[0].spectral_scale(), 0.0);
  for (double v : net.infer(Tensor(1, 1, 5, 5, 1.0)).data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Checkpoint, RoundTripAndMismatch) {
  const auto dir = mkgan::test::scratch_dir("ckpt");
  Network a;
  a.add_conv(1, 3, 3, 1, true, Activation::relu);
  a.add_conv(3, 1, 1);
  std::mt19937_64 rng(26);
  init_he(a, rng);
  save_parameters(a, dir / "net.bin");
  Network b;
  b.add_conv(1, 3, 3, 1, true, Activation::relu);
  b.add_conv(3, 1, 1);
  load_parameters(b, dir / "net.bin");
  for (std::size_t i = 0; i < a.layers()[0].weight.size(); ++i) {
    EXPECT_EQ(b.layers()[0].weight[i], static_cast<double>(static_cast<float>(a.layers()[0].weight[i])));
  }
  Network c;
  c.add_conv(1, 2, 3);
  EXPECT_THROW(load_parameters(c, dir / "net.bin"), ShapeError);
  EXPECT_THROW(load_parameters(c, dir / "missing.bin"), FormatError);
}
