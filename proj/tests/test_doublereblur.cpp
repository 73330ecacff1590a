#include <gtest/gtest.h>

#include <cmath>

#include "dfp/doublereblur.hpp"
#include "dfp/synthetic.hpp"

using namespace dfp;

namespace {

Plane test_plane(int n, std::uint64_t seed) { return luma_plane(synth::scene(n, n, 3, seed)); }

double kernel_rel_error(const Kernel& est, const Kernel& truth) {
  double num = 0.0, den = 0.0;
  const int r = est.radius();
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const bool inside = std::abs(dy) <= truth.radius() && std::abs(dx) <= truth.radius();
      const double t = inside ? truth(dy, dx) : 0.0;
      num += (est(dy, dx) - t) * (est(dy, dx) - t);
      den += t * t;
    }
  return std::sqrt(num / den);
}

Plane with_noise(const Plane& p, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  Plane out = p;
  for (double& v : out.values()) v += n(rng);
  return out;
}

BinaryMask disk(int n, double radius) {
  BinaryMask m(n, n);
  const double c = (n - 1) / 2.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) m.set(y, x, std::hypot(y - c, x - c) <= radius);
  return m;
}

// Plain dilation and erosion with a square element, no separability.
BinaryMask reference_square(const BinaryMask& m, int k, bool dilate) {
  const int r = k / 2;
  BinaryMask out(m.height(), m.width());
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x) {
      bool v = !dilate;
      for (int yy = y - r; yy <= y + r; ++yy)
        for (int xx = x - r; xx <= x + r; ++xx) {
          if (yy < 0 || yy >= m.height() || xx < 0 || xx >= m.width()) continue;
          v = dilate ? v || m(yy, xx) : v && m(yy, xx);
        }
      out.set(y, x, v);
    }
  return out;
}

}  // namespace

TEST(ReblurParams, DefaultsAndParsing) {
  const ReblurParams p;
  EXPECT_EQ(p.to_string(), "5,3,3,0.01,1");
  EXPECT_EQ(ReblurParams::parse("5,3,3,0.01,1"), p);
  EXPECT_THROW(ReblurParams::parse("4,3,3,0.01,1"), std::invalid_argument);
  EXPECT_THROW(ReblurParams::parse("5,3,3,1.5,1"), std::invalid_argument);
  EXPECT_THROW(ReblurParams::parse("5,3,3"), std::invalid_argument);
}

TEST(SpreadKernel, IdenticalPlanesGiveNearDelta) {
  const Plane p = test_plane(128, 1);
  EXPECT_GE(estimate_spread_kernel(p, p)(0, 0), 0.9);
}

TEST(SpreadKernel, RecoversGaussianNoiseless) {
  const Plane p = test_plane(256, 2);
  const Kernel truth = gaussian_kernel(9, 2.0);
  const Kernel est = estimate_spread_kernel(p, convolve2d(p, truth));
  EXPECT_LE(kernel_rel_error(est, truth), 0.1);
  EXPECT_NEAR(est.sum(), 1.0, 1e-12);
}

TEST(SpreadKernel, RecoversGaussianUnderNoise) {
  const Plane p = test_plane(256, 3);
  const Kernel truth = gaussian_kernel(9, 2.0);
  const Kernel est = estimate_spread_kernel(p, with_noise(convolve2d(p, truth), 0.01, 4));
  EXPECT_LE(kernel_rel_error(est, truth), 0.25);
}

TEST(SpreadKernel, ConstantInputIsDegenerate) {
  EXPECT_THROW(estimate_spread_kernel(Plane(32, 32, 0.5), test_plane(32, 1)), degenerate_input);
}

TEST(Reblur, DeltaAndConstant) {
  const Plane p = test_plane(16, 5);
  EXPECT_EQ(reblur(p, Kernel::identity()), p);
  const Plane flat = reblur(Plane(9, 9, 0.3), gaussian_kernel(3, 1.0));
  for (double v : flat.values()) EXPECT_NEAR(v, 0.3, 1e-12);
}

TEST(Sharpness, ConstantGivesZero) {
  const Plane s = sharpness_difference(Plane(12, 12, 0.6), ReblurParams{});
  for (double v : s.values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Sharpness, StepEdgePeaksOnEdge) {
  Plane p(20, 20);
  for (int y = 0; y < 20; ++y)
    for (int x = 10; x < 20; ++x) p(y, x) = 1.0;
  const Plane s = sharpness_difference(p, ReblurParams{});
  for (int y = 0; y < 20; ++y) {
    EXPECT_GT(s(y, 9), 0.1);
    EXPECT_GT(s(y, 10), 0.1);
    EXPECT_NEAR(s(y, 2), 0.0, 1e-12);
    EXPECT_NEAR(s(y, 17), 0.0, 1e-12);
  }
}

TEST(Sharpness, RangeIsUnitInterval) {
  Plane p = with_noise(Plane(24, 24, 0.5), 3.0, 9);
  const Plane s = sharpness_difference(p, ReblurParams{});
  for (double v : s.values()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Threshold, StrictComparison) {
  EXPECT_TRUE(segment_threshold(Plane(4, 4, 0.02), 0.01).all());
  EXPECT_TRUE(segment_threshold(Plane(4, 4, 0.005), 0.01).none());
  Plane s(3, 3);
  s(1, 1) = 1e-9;
  const BinaryMask d = segment_threshold(s, 0.0);
  EXPECT_EQ(d.count(), 1u);
  EXPECT_TRUE(d(1, 1));
}

TEST(Morphology, AllZerosStayZero) { EXPECT_TRUE(morph_close(BinaryMask(10, 10), 3, 3).none()); }

TEST(Morphology, ClosingFillsPinhole) {
  BinaryMask m = disk(21, 7.0);
  m.set(10, 10, false);
  EXPECT_EQ(morph_close(m, 3, 3), disk(21, 7.0));
}

TEST(Morphology, MatchesReferenceAndIsIdempotent) {
  const BinaryMask m = synth::corrupt(disk(24, 8.0), 0.1, 3);
  for (int k : {3, 5}) {
    EXPECT_EQ(dilate(m, k), reference_square(m, k, true));
    EXPECT_EQ(erode(m, k), reference_square(m, k, false));
    const BinaryMask once = morph_close(m, k, k);
    EXPECT_EQ(morph_close(once, k, k), once);
  }
}

TEST(RegionFill, FlagOffReturnsInput) {
  const BinaryMask m = synth::corrupt(BinaryMask(12, 12), 0.3, 5);
  EXPECT_EQ(largest_region_fill(m, false), m);
}

TEST(RegionFill, KeepsLargestComponent) {
  BinaryMask m(12, 12);
  for (int x = 0; x < 10; ++x) m.set(1, x, true);
  for (int x = 0; x < 3; ++x) m.set(8, x + 5, true);
  std::vector<int> labels;
  const auto sizes = label_components(m, labels);
  ASSERT_EQ(sizes.size(), 3u);
  EXPECT_EQ(sizes[1], 10u);
  EXPECT_EQ(sizes[2], 3u);
  const BinaryMask kept = largest_region_fill(m, true);
  EXPECT_EQ(kept.count(), 10u);
  EXPECT_TRUE(kept(1, 0));
  EXPECT_FALSE(kept(8, 5));
}

TEST(RegionFill, SingleSolidComponentUnchangedAndHolesFilled) {
  const BinaryMask solid = disk(15, 5.0);
  EXPECT_EQ(largest_region_fill(solid, true), solid);
  BinaryMask ring = solid;
  ring.set(7, 7, false);
  ring.set(7, 8, false);
  EXPECT_EQ(largest_region_fill(ring, true), solid);
}

TEST(DecisionMap, SplitFocusPairIoU) {
  for (int n : {128, 256}) {
    const Image gt = synth::scene(n, n, 3, 11);
    const auto pair = synth::split_focus_pair(gt, synth::left_half(n, n), 2.0);
    const FocusMeasurement fm = measure_focus(pair.fore, pair.back);
    EXPECT_FALSE(fm.degenerate);
    EXPECT_GE(iou(BinaryMask::from_plane(fm.foreground), pair.fore_region), 0.9) << n;
  }
}

TEST(DecisionMap, BinaryAndComplementSumsToOne) {
  const Image gt = synth::scene(64, 64, 3, 12);
  const auto pair = synth::split_focus_pair(gt, synth::left_half(64, 64), 2.0);
  const DecisionMap m = compute_decision_map(pair.fore, pair.back);
  const Plane c = complement(m);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_TRUE(m.values()[i] == 0.0 || m.values()[i] == 1.0);
    EXPECT_EQ(m.values()[i] + c.values()[i], 1.0);
  }
}

TEST(DecisionMap, IdenticalInputsFallBackToAllForeground) {
  const Image img = synth::scene(48, 48, 3, 13);
  const FocusMeasurement fm = measure_focus(img, img);
  if (fm.degenerate) {
    for (double v : fm.foreground.values()) EXPECT_EQ(v, 1.0);
  }
  EXPECT_THROW(compute_decision_map(img, synth::scene(32, 32, 3, 1)), std::invalid_argument);
}
