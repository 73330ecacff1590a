#pragma once

// Synthetic scenes and multi-focus observations built from the layered
// imaging model: each observation is the scene blurred by an in-focus PSF
// inside its focused region and by a defocus PSF elsewhere, plus noise.
// Used for fixtures, acceptance checks and the CLI's `synth` command.

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dfp/doublereblur.hpp"
#include "dfp/errors.hpp"
#include "dfp/image.hpp"

namespace dfp::synth {

struct SceneOptions {
  int octaves = 6;          // layers of the 1/f base field
  int disks = 25;           // flat-shaded occluding disks
  double fine_texture = 0.15;  // amplitude of the pixel-scale texture
  double colour_tint = 0.12;   // per-channel low-frequency variation
};

namespace detail {

inline Plane gaussian_noise(int h, int w, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Plane p(h, w);
  for (double& v : p.values()) v = n(rng);
  return p;
}

inline void normalize01(Plane& p) {
  const double lo = p.min();
  const double hi = p.max();
  const double span = hi > lo ? hi - lo : 1.0;
  for (double& v : p.values()) v = (v - lo) / span;
}

inline void standardize(Plane& p) {
  const double m = p.mean();
  double var = 0.0;
  for (double v : p.values()) var += (v - m) * (v - m);
  const double sd = std::sqrt(var / static_cast<double>(p.size()));
  for (double& v : p.values()) v = sd > 0.0 ? (v - m) / sd : 0.0;
}

// Sum of octaves of smoothed noise with amplitude proportional to the
// octave's wavelength (an approximately 1/f spectrum), normalized to [0,1].
inline Plane multi_octave(int h, int w, int octaves, std::mt19937_64& rng) {
  Plane acc(h, w);
  for (int o = 0; o < octaves; ++o) {
    const int step = 1 << o;
    const int gh = std::max(4, h / step + 2);
    const int gw = std::max(4, w / step + 2);
    const Plane coarse = gaussian_noise(gh, gw, rng);
    const Plane up = resize(coarse, h, w, ResampleMethod::bicubic);
    const double amp = static_cast<double>(step);
    auto a = acc.values();
    const auto u = up.values();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += amp * u[i];
  }
  normalize01(acc);
  return acc;
}

}  // namespace detail

/// Procedural scene with structure at every scale: a 1/f base field,
/// occluding disks with hard edges, and a fine texture so that focus is
/// measurable everywhere.
inline Image scene(int height, int width, int channels, std::uint64_t seed, const SceneOptions& opt = {}) {
  if (height < 8 || width < 8) throw invalid_argument("synth::scene: size must be at least 8x8");
  std::mt19937_64 rng(seed);
  Plane base = detail::multi_octave(height, width, opt.octaves, rng);

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const int rmin = std::max(2, std::min(height, width) / 40);
  const int rmax = std::max(rmin + 1, std::min(height, width) / 8);
  for (int i = 0; i < opt.disks; ++i) {
    const double cy = u01(rng) * height;
    const double cx = u01(rng) * width;
    const double r = rmin + u01(rng) * (rmax - rmin);
    const double level = u01(rng);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        if ((y - cy) * (y - cy) + (x - cx) * (x - cx) < r * r) base(y, x) = 0.6 * level + 0.4 * base(y, x);
  }

  Plane fine = gaussian_blur(detail::gaussian_noise(height, width, rng), 5, 0.8);
  detail::standardize(fine);

  std::vector<Plane> planes;
  for (int c = 0; c < channels; ++c) {
    Plane tint = channels == 1 ? Plane(height, width, 0.5) : detail::multi_octave(height, width, 3, rng);
    Plane p(height, width);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        p(y, x) = 0.15 + 0.7 * base(y, x) + opt.fine_texture * fine(y, x) + opt.colour_tint * (tint(y, x) - 0.5);
    planes.push_back(std::move(p));
  }
  return Image::from_planes(std::move(planes));
}

/// Mask of the left half (columns < width / 2).
inline BinaryMask left_half(int height, int width) {
  BinaryMask m(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width / 2; ++x) m.set(y, x, true);
  return m;
}

/// Adds zero-mean Gaussian noise; the result is clamped to [0,1].
inline Image add_noise(const Image& img, double sigma, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  Image out = img;
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) out.set(c, y, x, img(c, y, x) + n(rng));
  return out;
}

inline Image blur(const Image& img, double sigma) {
  const int size = std::max(3, 2 * static_cast<int>(std::ceil(3.0 * sigma)) + 1);
  const Kernel k = gaussian_kernel(size, sigma);
  return map_channels(img, [&](const Plane& p) { return convolve2d(p, k); });
}

/// Pixelwise selection: `inside` where the mask is set, `outside` elsewhere.
inline Image compose(const Image& inside, const Image& outside, const BinaryMask& mask) {
  if (!inside.same_shape(outside) || mask.height() != inside.height() || mask.width() != inside.width())
    throw invalid_argument("synth::compose: shape mismatch");
  Image out = outside;
  for (int c = 0; c < inside.channels(); ++c)
    for (int y = 0; y < inside.height(); ++y)
      for (int x = 0; x < inside.width(); ++x)
        if (mask(y, x)) out.set(c, y, x, inside(c, y, x));
  return out;
}

struct FocusPair {
  Image fore;              // sharp inside the foreground region
  Image back;              // sharp outside it
  BinaryMask fore_region;  // ground-truth foreground mask
};

/// Two observations of `scene`: `fore` is defocused outside `fore_region`,
/// `back` inside it. Defocus is a Gaussian PSF of `defocus_sigma`.
inline FocusPair split_focus_pair(const Image& scene, const BinaryMask& fore_region, double defocus_sigma) {
  const Image defocused = blur(scene, defocus_sigma);
  return {compose(scene, defocused, fore_region), compose(defocused, scene, fore_region), fore_region};
}

/// Focal stack over vertical depth bands: image k is sharp on band k and
/// increasingly defocused with band distance (sigma_per_band per step).
inline std::vector<Image> banded_focal_stack(const Image& scene, int bands, double sigma_per_band) {
  if (bands < 2) throw invalid_argument("synth::banded_focal_stack: need at least two bands");
  std::vector<Image> blurred(bands);
  blurred[0] = scene;
  for (int d = 1; d < bands; ++d) blurred[d] = blur(scene, sigma_per_band * d);
  std::vector<Image> stack;
  for (int k = 0; k < bands; ++k) {
    Image img = scene;
    for (int c = 0; c < scene.channels(); ++c)
      for (int y = 0; y < scene.height(); ++y)
        for (int x = 0; x < scene.width(); ++x) {
          const int band = std::min(bands - 1, x * bands / scene.width());
          img.set(c, y, x, blurred[std::abs(band - k)](c, y, x));
        }
    stack.push_back(std::move(img));
  }
  return stack;
}

/// Column range [begin, end) of band k.
inline std::pair<int, int> band_columns(int width, int bands, int k) {
  int begin = -1, end = width;
  for (int x = 0; x < width; ++x) {
    const int b = std::min(bands - 1, x * bands / width);
    if (b == k && begin < 0) begin = x;
    if (b > k) {
      end = x;
      break;
    }
  }
  return {begin, end};
}

/// 5% style salt-and-pepper corruption: each pixel flips with probability p.
inline BinaryMask corrupt(const BinaryMask& m, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution flip(p);
  BinaryMask out = m;
  for (int y = 0; y < m.height(); ++y)
    for (int x = 0; x < m.width(); ++x)
      if (flip(rng)) out.set(y, x, !m(y, x));
  return out;
}

}  // namespace dfp::synth
