#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rsedit/denoiser.hpp"
#include "rsedit/trainer.hpp"
#include "support.hpp"

using namespace rsedit;
using Catch::Approx;

namespace {

DenoiserConfig tiny_config() {
  DenoiserConfig c;
  c.num_blocks = 2;
  c.channels = 4;
  c.embed_dim = 8;
  return c;
}

// Random parameters everywhere, including the tail, so every path carries gradient.
void randomize(Denoiser<double>& net, std::uint64_t seed, double scale) {
  Rng rng(seed);
  for (double& p : net.parameters()) p = scale * rng.normal();
}

double loss_of(const Denoiser<double>& net, const Image<double>& x, const Image<double>& eps, int t, int s,
               LossKind kind) {
  std::vector<Image<double>> noise{eps};
  std::vector<Image<double>> pred{net.predict_noise(x, t, s)};
  return noise_loss<double>(noise, pred, kind);
}

std::vector<double> analytic_grad(const Denoiser<double>& net, const Image<double>& x, const Image<double>& eps,
                                  int t, int s, LossKind kind) {
  Denoiser<double>::Tape tape;
  std::vector<Image<double>> noise{eps};
  std::vector<Image<double>> pred{net.forward(x, t, s, tape)};
  std::vector<Image<double>> grad_pred;
  noise_loss<double>(noise, pred, kind, &grad_pred);
  std::vector<double> grad(net.parameter_count(), 0.0);
  net.backward(tape, grad_pred[0], grad);
  return grad;
}

}  // namespace

TEST_CASE("sinusoidal codes", "[denoiser]") {
  const auto zero = spe_embed<double>(0, 4);
  CHECK(zero == std::vector<double>{0.0, 1.0, 0.0, 1.0});

  const auto one = spe_embed<double>(1, 2);
  CHECK(one[0] == Approx(std::sin(1.0)).margin(1e-15));
  CHECK(one[1] == Approx(std::cos(1.0)).margin(1e-15));

  const auto v = spe_embed<double>(37, 8);
  for (int i = 0; i < 4; ++i) {
    const double f = std::pow(10000.0, -2.0 * i / 8.0);
    CHECK(v[2 * i] == Approx(std::sin(37 * f)).margin(1e-14));
    CHECK(v[2 * i + 1] == Approx(std::cos(37 * f)).margin(1e-14));
    CHECK(v[2 * i] * v[2 * i] + v[2 * i + 1] * v[2 * i + 1] == Approx(1.0).margin(1e-14));
  }

  CHECK_THROWS_AS(spe_embed<double>(3, 5), InvalidConfig);
  CHECK_THROWS_AS(spe_embed<double>(3, 0), InvalidConfig);
  CHECK_THROWS_AS(spe_embed<double>(-1, 4), InvalidInput);
}

TEST_CASE("config validation", "[denoiser]") {
  auto c = tiny_config();
  c.embed_dim = 7;
  CHECK_THROWS_AS(Denoiser<float>(c), InvalidConfig);
  c = tiny_config();
  c.kernel_size = 4;
  CHECK_THROWS_AS(Denoiser<float>(c), InvalidConfig);
  c = tiny_config();
  c.num_blocks = 0;
  CHECK_THROWS_AS(Denoiser<float>(c), InvalidConfig);
}

TEST_CASE("output keeps the input shape", "[denoiser]") {
  DenoiserConfig c;
  c.channels = 16;
  c.embed_dim = 32;
  Denoiser<float> net(c, 3);
  for (Dims d : {Dims{24, 24}, Dims{61, 47}}) {
    const auto x = test::random_image<float>(d, 3, 11);
    const auto y = net.predict_noise(x, 5, 1);
    CHECK(y.dims() == d);
    CHECK(y.channels() == 3);
  }
  const auto wrong = test::random_image<float>({8, 8}, 1, 1);
  CHECK_THROWS_AS(net.predict_noise(wrong, 0, 0), InvalidInput);
  auto bad = test::random_image<float>({8, 8}, 3, 1);
  bad.at(0, 2, 2) = std::nanf("");
  CHECK_THROWS_AS(net.predict_noise(bad, 0, 0), InvalidInput);
}

TEST_CASE("fresh model predicts zero noise", "[denoiser]") {
  Denoiser<float> net(tiny_config(), 9);
  const auto x = test::random_image<float>({12, 10}, 3, 4);
  const auto y = net.predict_noise(x, 40, 2);
  for (float v : y.data()) CHECK(v == 0.0f);
}

TEST_CASE("parameter count does not depend on image size", "[denoiser]") {
  const auto c = tiny_config();
  Denoiser<float> net(c, 1);
  const std::size_t k2 = 9;
  const std::size_t ch = c.channels, h = c.hidden_width(), e = c.embed_dim;
  const std::size_t expected = (h * 2 * e + h) + (h * h + h) + (ch * 3 * k2 + ch) +
                               c.num_blocks * (2 * (ch * ch * k2 + ch) + (ch * h + ch)) + (3 * ch * k2 + 3);
  CHECK(net.parameter_count() == expected);
  Denoiser<double> other(c, 1);
  randomize(other, 2, 0.3);
  CHECK_NOTHROW(other.predict_noise(test::random_image<double>({5, 7}, 3, 1), 1, 0));
  CHECK_NOTHROW(other.predict_noise(test::random_image<double>({30, 9}, 3, 1), 1, 0));
  CHECK(other.parameter_count() == expected);
}

TEST_CASE("deterministic for a seed", "[denoiser]") {
  Denoiser<float> a(tiny_config(), 42), b(tiny_config(), 42), c(tiny_config(), 43);
  CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  CHECK_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
  const auto ts1 = a.time_scale_embed(10, 1);
  const auto ts2 = a.time_scale_embed(10, 1);
  CHECK(ts1 == ts2);
  CHECK(ts1.size() == static_cast<std::size_t>(tiny_config().hidden_width()));
  CHECK(a.time_scale_embed(11, 1) != ts1);
  CHECK(a.time_scale_embed(10, 2) != ts1);
}

TEST_CASE("convolutions commute with translation away from borders", "[denoiser]") {
  Denoiser<double> net(tiny_config(), 5);
  randomize(net, 6, 0.3);
  const auto x = test::random_image<double>({20, 20}, 3, 8);
  Image<double> shifted({20, 20}, 3);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 20; ++y) {
      for (int xx = 0; xx < 20; ++xx) shifted.at(c, y, xx) = x.at(c, (y + 2) % 20, (xx + 3) % 20);
    }
  }
  const auto a = net.predict_noise(x, 7, 1);
  const auto b = net.predict_noise(shifted, 7, 1);
  // Receptive field radius is (2 * blocks + 2) = 6 pixels for 3x3 kernels.
  const int r = 6;
  for (int c = 0; c < 3; ++c) {
    for (int y = r; y < 20 - r - 2; ++y) {
      for (int xx = r; xx < 20 - r - 3; ++xx) {
        CHECK(b.at(c, y, xx) == Approx(a.at(c, y + 2, xx + 3)).margin(1e-12));
      }
    }
  }
}

TEST_CASE("parameter gradients match finite differences", "[denoiser]") {
  const auto kind = GENERATE(LossKind::L1, LossKind::L2);
  Denoiser<double> net(tiny_config(), 3);
  randomize(net, 17, 0.2);
  const auto x = test::random_image<double>({8, 8}, 3, 21);
  const auto eps = test::random_image<double>({8, 8}, 3, 22);
  const int t = 13, s = 2;

  const auto grad = analytic_grad(net, x, eps, t, s, kind);
  // Small enough to stay clear of L1 kinks, large enough to keep roundoff below 1e-4.
  const double h = 1e-5;
  double largest = 0.0;
  for (double g : grad) largest = std::max(largest, std::abs(g));
  // Entries far below the largest one are compared in absolute terms.
  const double floor = 1e-4 * largest;
  double worst = 0.0;
  std::size_t checked = 0;
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double saved = params[i];
    params[i] = saved + h;
    const double up = loss_of(net, x, eps, t, s, kind);
    params[i] = saved - h;
    const double down = loss_of(net, x, eps, t, s, kind);
    params[i] = saved;
    const double fd = (up - down) / (2 * h);
    const double scale = std::max(std::abs(fd), std::abs(grad[i]));
    if (scale < floor) {
      CHECK(std::abs(fd - grad[i]) <= 1e-4 * floor);
      continue;
    }
    worst = std::max(worst, std::abs(fd - grad[i]) / scale);
    ++checked;
  }
  INFO((kind == LossKind::L1 ? "L1" : "L2") << " worst relative error " << worst << " over " << checked << " parameters");
  CHECK(checked > params.size() / 2);
  CHECK(worst <= 1e-4);
}

TEST_CASE("directional derivative along a random parameter direction", "[denoiser]") {
  Denoiser<double> net(tiny_config(), 3);
  randomize(net, 19, 0.2);
  const auto x = test::random_image<double>({7, 9}, 3, 31);
  const auto eps = test::random_image<double>({7, 9}, 3, 32);
  const auto grad = analytic_grad(net, x, eps, 4, 0, LossKind::L2);
  const auto dir = test::random_image<double>({1, static_cast<int>(grad.size())}, 1, 33);
  const double h = 1e-6;
  Denoiser<double> up = net, down = net;
  double directional = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    up.parameters()[i] += h * dir.data()[i];
    down.parameters()[i] -= h * dir.data()[i];
    directional += grad[i] * dir.data()[i];
  }
  const double fd = (loss_of(up, x, eps, 4, 0, LossKind::L2) - loss_of(down, x, eps, 4, 0, LossKind::L2)) / (2 * h);
  CHECK(fd == Approx(directional).epsilon(1e-6));
}

TEST_CASE("float and double agree", "[denoiser]") {
  Denoiser<double> net(tiny_config(), 3);
  randomize(net, 23, 0.3);
  const Denoiser<float> f = net.cast<float>();
  const auto x = test::random_image<double>({9, 9}, 3, 2);
  Image<float> xf(x.dims(), 3);
  for (std::size_t i = 0; i < x.size(); ++i) xf.data()[i] = static_cast<float>(x.data()[i]);
  const auto a = net.predict_noise(x, 3, 1);
  const auto b = f.predict_noise(xf, 3, 1);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b.data()[i] == Approx(a.data()[i]).margin(1e-4));
}
