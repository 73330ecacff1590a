#pragma once

#include "dfp/image.hpp"
#include "dfp/skipnet.hpp"
#include "dfp/synthetic.hpp"

namespace dfp::fixtures {

/// Classical baseline: per pixel, take the input with the larger absolute
/// luma Laplacian.
inline Image max_laplacian_composite(const Image& a, const Image& b) {
  const Plane la = laplacian_map(luma_plane(a));
  const Plane lb = laplacian_map(luma_plane(b));
  BinaryMask pick_a(a.height(), a.width());
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) pick_a.set(y, x, std::abs(la(y, x)) >= std::abs(lb(y, x)));
  return synth::compose(a, b, pick_a);
}

struct SrFixture {
  Image ground_truth;  // high resolution, all in focus
  Image fore, back;    // low-resolution observations
  BinaryMask fore_region;  // at low resolution
};

/// Ground truth at lr * scale, split-focus blur applied at high resolution,
/// then both observations downsampled by `scale`.
inline SrFixture sr_fixture(int lr_size, int scale, std::uint64_t seed, double defocus_sigma = 2.0,
                            const synth::SceneOptions& opt = {}) {
  const int hr = lr_size * scale;
  SrFixture f;
  f.ground_truth = synth::scene(hr, hr, 3, seed, opt);
  const auto pair = synth::split_focus_pair(f.ground_truth, synth::left_half(hr, hr), defocus_sigma);
  f.fore = scale == 1 ? pair.fore : downsample_for_loss(pair.fore, scale, ResampleMethod::lanczos);
  f.back = scale == 1 ? pair.back : downsample_for_loss(pair.back, scale, ResampleMethod::lanczos);
  f.fore_region = synth::left_half(lr_size, lr_size);
  return f;
}

}  // namespace dfp::fixtures
