#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "dfp/skipnet.hpp"
#include "dfp/synthetic.hpp"

using namespace dfp;

namespace {

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.depth = 2;
  cfg.kernel_size = 3;
  cfg.encoder_channels = {4, 8};
  cfg.skip_channels = {2, 2};
  return cfg;
}

template <typename T>
Tensor<T> random_input(int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<T> t(c, h, w);
  for (T& v : t.values()) v = static_cast<T>(u(rng));
  return t;
}

std::size_t conv_params(int cin, int cout, int k) { return static_cast<std::size_t>(cout) * cin * k * k + cout; }

std::size_t expected_parameter_count(const NetworkConfig& cfg) {
  const auto& e = cfg.encoder_channels;
  const auto& s = cfg.skip_channels;
  const int k = cfg.kernel_size;
  std::size_t n = 0;
  int cin = cfg.input_channels;
  for (int d = 0; d < cfg.depth; ++d) {
    n += conv_params(cin, e[d], k) + 2 * e[d] + conv_params(e[d], e[d], k) + 2 * e[d];
    n += conv_params(cin, s[d], 1);
    const int up = d == cfg.depth - 1 ? e[d] : e[d + 1];
    n += 2 * (up + s[d]) + conv_params(up + s[d], e[d], k) + 2 * e[d] + conv_params(e[d], e[d], k) + 2 * e[d];
    cin = e[d];
  }
  return n + conv_params(e[0], cfg.output_channels, 1);
}

double sum(const Tensor<double>& t) {
  double s = 0.0;
  for (double v : t.values()) s += v;
  return s;
}

}  // namespace

TEST(SkipNet, ParameterCountMatchesClosedForm) {
  EXPECT_EQ(SkipNet<float>(NetworkConfig{}, 0).parameter_count(), expected_parameter_count(NetworkConfig{}));
  EXPECT_EQ(SkipNet<float>(tiny_config(), 0).parameter_count(), expected_parameter_count(tiny_config()));
}

TEST(SkipNet, DefaultShapesAndCentralSize) {
  SkipNet<float> net(NetworkConfig{}, 1);
  EXPECT_EQ(net.size_divisor(), 32);
  const Tensor<float> out = net.forward(random_input<float>(3, 256, 256, 2));
  EXPECT_EQ(out.channels(), 3);
  EXPECT_EQ(out.height(), 256);
  EXPECT_EQ(out.width(), 256);
  EXPECT_EQ(net.central_size(), std::make_pair(8, 8));
  for (float v : out.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(SkipNet, SingleChannelOutput) {
  NetworkConfig cfg = tiny_config();
  cfg.output_channels = 1;
  SkipNet<float> net(cfg, 3);
  const Tensor<float> out = net.forward(random_input<float>(3, 16, 24, 4));
  EXPECT_EQ(out.channels(), 1);
  EXPECT_EQ(out.height(), 16);
  EXPECT_EQ(out.width(), 24);
}

TEST(SkipNet, RejectsIndivisibleInput) {
  SkipNet<float> net(tiny_config(), 0);
  EXPECT_THROW(net.forward(random_input<float>(3, 18, 16, 0)), std::invalid_argument);
  EXPECT_THROW(net.forward(random_input<float>(1, 16, 16, 0)), std::invalid_argument);
}

TEST(SkipNet, SeedDeterminism) {
  SkipNet<float> a(NetworkConfig{}, 42), b(NetworkConfig{}, 42), c(NetworkConfig{}, 43);
  ASSERT_EQ(a.parameter_count(), b.parameter_count());
  EXPECT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  EXPECT_FALSE(std::equal(a.parameters().begin(), a.parameters().end(), c.parameters().begin()));
  const auto z = random_input<float>(3, 32, 32, 5);
  EXPECT_EQ(a.forward(z), b.forward(z));
}

TEST(SkipNet, InteriorPixelInfluencesOutput) {
  SkipNet<double> net(tiny_config(), 6);
  auto z = random_input<double>(3, 16, 16, 7);
  const Tensor<double> before = net.forward(z);
  z(1, 8, 8) += 0.5;
  const Tensor<double> after = net.forward(z);
  EXPECT_GT(std::abs(after(0, 8, 8) - before(0, 8, 8)), 1e-9);
}

TEST(SkipNet, GradientsMatchFiniteDifferences) {
  struct Case {
    int kernel;
    bool split;
    int size;
  };
  // The last case pads 2 pixels around a 2x2 feature map, so reflection wraps more than once.
  for (const Case tc : {Case{3, false, 16}, Case{5, true, 16}, Case{5, false, 8}}) {
    const bool split = tc.split;
    NetworkConfig cfg = tiny_config();
    cfg.kernel_size = tc.kernel;
    cfg.use_split_conv = split;
    SkipNet<double> net(cfg, 8);
    const auto z = random_input<double>(3, tc.size, tc.size, 9);
    const Tensor<double> out = net.forward(z);
    net.zero_grad();
    const Tensor<double> gz = net.backward(Tensor<double>(out.channels(), out.height(), out.width(), 1.0), true);
    const std::vector<double> analytic(net.gradients().begin(), net.gradients().end());

    const double h = 1e-5;
    auto params = net.parameters();
    std::size_t checked = 0, bad = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double orig = params[i];
      params[i] = orig + h;
      const double up = sum(net.forward(z));
      params[i] = orig - h;
      const double down = sum(net.forward(z));
      params[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-4});
      ++checked;
      if (std::abs(numeric - analytic[i]) / scale > 1e-3) {
        ++bad;
        ADD_FAILURE() << "parameter " << i << " analytic " << analytic[i] << " numeric " << numeric;
      }
    }
    EXPECT_EQ(bad, 0u) << "of " << checked << " (split " << split << ")";

    auto zz = z;
    for (int probe : {0, 77, 150, 191}) {
      const double orig = zz.data()[probe];
      zz.data()[probe] = orig + h;
      const double up = sum(net.forward(zz));
      zz.data()[probe] = orig - h;
      const double down = sum(net.forward(zz));
      zz.data()[probe] = orig;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(gz.data()[probe], numeric, 1e-3 * std::max(std::abs(numeric), 1e-4));
    }
  }
}

TEST(SkipNet, CheckpointRoundTrip) {
  SkipNet<float> a(tiny_config(), 10), b(tiny_config(), 11);
  const auto path = std::filesystem::temp_directory_path() / "dfp_ckpt_test.bin";
  a.save(path);
  b.load(path);
  EXPECT_TRUE(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  std::filesystem::remove(path);
}

TEST(Downsampler, ShapeAndConstant) {
  const Image big(512, 512, 3, 0.3);
  const Image small = downsample_for_loss(big, 2, ResampleMethod::lanczos);
  EXPECT_EQ(small.height(), 256);
  EXPECT_EQ(small.width(), 256);
  for (const auto& p : small.planes())
    for (double v : p.values()) EXPECT_NEAR(v, 0.3, 1e-12);
  EXPECT_THROW(downsample_for_loss(big, 3, ResampleMethod::lanczos), std::invalid_argument);
  EXPECT_THROW(downsample_for_loss(Image(10, 10, 3), 4, ResampleMethod::lanczos), std::invalid_argument);
}

TEST(Downsampler, MatchesReferenceResampler) {
  Plane ramp(64, 48);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 48; ++x) ramp(y, x) = 0.1 + 0.6 * x / 47.0 + 0.2 * y / 63.0;
  const Image img = Image::from_plane(ramp);
  for (auto m : {ResampleMethod::bilinear, ResampleMethod::bicubic, ResampleMethod::lanczos})
    for (int s : {2, 4}) {
      const Image a = downsample_for_loss(img, s, m);
      const Image b = resample(img, Scale{1, s}, m);
      ASSERT_TRUE(a.same_shape(b));
      for (int y = 0; y < a.height(); ++y)
        for (int x = 0; x < a.width(); ++x) EXPECT_NEAR(a(0, y, x), b(0, y, x), 1e-6);
    }
}

TEST(Downsampler, AdjointIdentity) {
  const Downsampler down(32, 24, 2, ResampleMethod::lanczos);
  const auto x = random_input<double>(2, 32, 24, 12);
  const auto y = random_input<double>(2, 16, 12, 13);
  const auto ax = down.apply(x);
  const auto aty = down.adjoint(y);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < ax.size(); ++i) lhs += ax.data()[i] * y.data()[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data()[i] * aty.data()[i];
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::abs(lhs));
  const Downsampler identity(8, 8, 1, ResampleMethod::lanczos);
  const auto z = random_input<double>(1, 8, 8, 14);
  const auto iz = identity.apply(z);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(iz.data()[i], z.data()[i], 1e-12);
}
