#pragma once

// Handcrafted focus measurement ("DoubleReblur").
//
// Given a foreground-focused image and a background-focused image of the same
// scene, the pipeline
//   1. estimates the spread kernel relating the two focus states,
//   2. reblurs the background-focused image with it,
//   3. measures what a second (Gaussian) reblur removes,
//   4. thresholds that sharpness difference,
//   5. closes gaps with dilation followed by erosion,
//   6. keeps the largest region and fills its holes.
// The resulting region is where the background-focused image still carries
// detail; the foreground decision map is its complement.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "dfp/errors.hpp"
#include "dfp/image.hpp"
#include "dfp/log.hpp"

namespace dfp {

/// Decision maps are planes on [0,1]; binary maps hold exactly 0 or 1.
using DecisionMap = Plane;

/// The five DoubleReblur parameters [k_g, k_d, k_e, t, f].
struct ReblurParams {
  int k_g = 5;       // Gaussian reblur kernel size
  int k_d = 3;       // dilation element size
  int k_e = 3;       // erosion element size
  double t = 0.01;   // segmentation threshold on the sharpness difference
  bool f = true;     // keep only the largest region and fill its holes

  void validate() const {
    auto odd = [](int k) { return k >= 1 && k % 2 == 1; };
    if (!odd(k_g)) throw invalid_argument("reblur: k_g must be odd and >= 1, got " + std::to_string(k_g));
    if (!odd(k_d)) throw invalid_argument("reblur: k_d must be odd and >= 1, got " + std::to_string(k_d));
    if (!odd(k_e)) throw invalid_argument("reblur: k_e must be odd and >= 1, got " + std::to_string(k_e));
    if (!(t >= 0.0 && t <= 1.0)) throw invalid_argument("reblur: t must lie in [0,1]");
  }

  std::string to_string() const {
    std::ostringstream os;
    os << k_g << ',' << k_d << ',' << k_e << ',' << t << ',' << (f ? 1 : 0);
    return os.str();
  }

  // Parses "k_g,k_d,k_e,t,f", e.g. "5,3,3,0.01,1".
  static ReblurParams parse(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) parts.push_back(item);
    if (parts.size() != 5) throw invalid_argument("reblur: expected k_g,k_d,k_e,t,f but got '" + s + "'");
    ReblurParams p;
    try {
      std::size_t used = 0;
      auto as_int = [&](const std::string& v) {
        const int r = std::stoi(v, &used);
        if (used != v.size()) throw invalid_argument(v);
        return r;
      };
      p.k_g = as_int(parts[0]);
      p.k_d = as_int(parts[1]);
      p.k_e = as_int(parts[2]);
      p.t = std::stod(parts[3], &used);
      if (used != parts[3].size()) throw invalid_argument(parts[3]);
      const int flag = as_int(parts[4]);
      if (flag != 0 && flag != 1) throw invalid_argument("flag");
      p.f = flag == 1;
    } catch (const std::exception&) {
      throw invalid_argument("reblur: cannot parse '" + s + "' as k_g,k_d,k_e,t,f");
    }
    p.validate();
    return p;
  }

  bool operator==(const ReblurParams&) const = default;
};

/// Spread-kernel estimation settings.
///  * support: side of the centred window the estimate is cropped to;
///  * lowpass_sigma: width, in DFT bins, of the Gaussian that smooths the
///    cross- and auto-spectra across frequency before division;
///  * epsilon: regularizer added to the smoothed auto-spectrum, relative to
///    the mean spectral power of the foreground input.
struct KernelEstConfig {
  int support = 21;
  double lowpass_sigma = 2.0;
  double epsilon = 1e-4;

  void validate() const {
    if (support < 3 || support % 2 == 0) throw invalid_argument("kernel_est: support must be odd and >= 3");
    if (!(lowpass_sigma > 0.0)) throw invalid_argument("kernel_est: lowpass_sigma must be positive");
    if (!(epsilon > 0.0)) throw invalid_argument("kernel_est: epsilon must be positive");
  }

  bool operator==(const KernelEstConfig&) const = default;
};

/// H x W map holding exactly 0 or 1 per pixel.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int height, int width, bool fill = false)
      : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {}

  static BinaryMask from_plane(const Plane& p, double threshold = 0.5) {
    BinaryMask m(p.height(), p.width());
    for (int y = 0; y < p.height(); ++y)
      for (int x = 0; x < p.width(); ++x) m.set(y, x, p(y, x) > threshold);
    return m;
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }

  bool operator()(int y, int x) const { return data_[idx(y, x)] != 0; }
  void set(int y, int x, bool v) { data_[idx(y, x)] = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool all() const { return count() == size(); }
  bool none() const { return count() == 0; }

  BinaryMask complement() const {
    BinaryMask c = *this;
    for (auto& v : c.data_) v = v ? 0 : 1;
    return c;
  }

  Plane to_plane() const {
    Plane p(height_, width_);
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) p(y, x) = (*this)(y, x) ? 1.0 : 0.0;
    return p;
  }

  bool operator==(const BinaryMask&) const = default;

 private:
  std::size_t idx(int y, int x) const noexcept { return static_cast<std::size_t>(y) * width_ + x; }

  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Intersection over union; two empty masks count as identical.
inline double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw invalid_argument("iou: shape mismatch");
  std::size_t inter = 0, uni = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      inter += a(y, x) && b(y, x);
      uni += a(y, x) || b(y, x);
    }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {

// Mirror-extend to (2H-2) x (2W-2) so that the periodic DFT sees the same
// reflect-101 continuation used by spatial convolution.
inline cv::Mat mirror_extend(const Plane& p, double offset) {
  const int h = p.height();
  const int w = p.width();
  const int mh = 2 * h - 2;
  const int mw = 2 * w - 2;
  cv::Mat out(mh, mw, CV_64FC1);
  for (int y = 0; y < mh; ++y) {
    const int sy = y < h ? y : mh - y;
    double* row = out.ptr<double>(y);
    for (int x = 0; x < mw; ++x) row[x] = p(sy, x < w ? x : mw - x) - offset;
  }
  return out;
}

inline cv::Mat forward_dft(const cv::Mat& real) {
  cv::Mat spec;
  cv::dft(real, spec, cv::DFT_COMPLEX_OUTPUT);
  return spec;
}

// Circularly smooth a spectrum along both frequency axes with a Gaussian of
// `sigma` bins, done as a multiplication by the matching window in the
// conjugate domain.
inline cv::Mat smooth_spectrum(const cv::Mat& spec, double sigma) {
  cv::Mat lag;
  cv::idft(spec, lag, cv::DFT_SCALE);
  const int mh = lag.rows;
  const int mw = lag.cols;
  const double sy = mh / (2.0 * std::numbers::pi * sigma);
  const double sx = mw / (2.0 * std::numbers::pi * sigma);
  for (int y = 0; y < mh; ++y) {
    const double ay = std::min(y, mh - y);
    const double wy = std::exp(-ay * ay / (2.0 * sy * sy));
    auto* row = lag.ptr<cv::Vec2d>(y);
    for (int x = 0; x < mw; ++x) {
      const double ax = std::min(x, mw - x);
      row[x] *= wy * std::exp(-ax * ax / (2.0 * sx * sx));
    }
  }
  cv::Mat out;
  cv::dft(lag, out);
  return out;
}

inline double variance(const Plane& p) {
  const double m = p.mean();
  double acc = 0.0;
  for (double v : p.values()) acc += (v - m) * (v - m);
  return acc / static_cast<double>(p.size());
}

}  // namespace detail

/// Spread kernel h with i_back ~= i_fore (*) h, from the ratio of smoothed
/// cross- and auto-spectra. The estimate is cropped to `support`, negative
/// taps are clamped to zero and the result is normalized to unit sum.
inline Kernel estimate_spread_kernel(const Plane& i_fore, const Plane& i_back, const KernelEstConfig& cfg = {}) {
  cfg.validate();
  if (!i_fore.same_shape(i_back)) throw invalid_argument("estimate_spread_kernel: shape mismatch");
  if (i_fore.height() < 2 || i_fore.width() < 2) throw invalid_argument("estimate_spread_kernel: plane too small");
  if (detail::variance(i_fore) < 1e-14 || detail::variance(i_back) < 1e-14)
    throw degenerate_input("estimate_spread_kernel: constant input plane, spectrum ratio undefined");

  const cv::Mat f = detail::mirror_extend(i_fore, i_fore.mean());
  const cv::Mat b = detail::mirror_extend(i_back, i_back.mean());
  const cv::Mat F = detail::forward_dft(f);
  const cv::Mat B = detail::forward_dft(b);

  cv::Mat cross, power;
  cv::mulSpectrums(B, F, cross, 0, /*conjB=*/true);
  cv::mulSpectrums(F, F, power, 0, /*conjB=*/true);
  const double mean_power = cv::mean(power)[0];

  const cv::Mat s_bf = detail::smooth_spectrum(cross, cfg.lowpass_sigma);
  const cv::Mat s_ff = detail::smooth_spectrum(power, cfg.lowpass_sigma);
  const double reg = cfg.epsilon * mean_power;

  cv::Mat ratio(s_bf.size(), CV_64FC2);
  for (int y = 0; y < ratio.rows; ++y) {
    const auto* num = s_bf.ptr<cv::Vec2d>(y);
    const auto* den = s_ff.ptr<cv::Vec2d>(y);
    auto* out = ratio.ptr<cv::Vec2d>(y);
    for (int x = 0; x < ratio.cols; ++x) out[x] = num[x] * (1.0 / (den[x][0] + reg));
  }

  cv::Mat h;
  cv::idft(ratio, h, cv::DFT_SCALE | cv::DFT_REAL_OUTPUT);

  const int r = cfg.support / 2;
  if (2 * r + 1 > h.rows || 2 * r + 1 > h.cols)
    throw invalid_argument("estimate_spread_kernel: support larger than the planes");
  Kernel k(cfg.support);
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const int y = (dy + h.rows) % h.rows;
      const int x = (dx + h.cols) % h.cols;
      k(dy, dx) = std::max(0.0, h.at<double>(y, x));
    }
  const double total = k.sum();
  if (!(total > 0.0)) throw degenerate_input("estimate_spread_kernel: estimate has no positive mass");
  for (double& v : k.values()) v /= total;
  return k;
}

/// First reblur: the plane convolved with the estimated spread kernel.
inline Plane reblur(const Plane& p, const Kernel& h) { return convolve2d(p, h); }

/// s = | r - G(r) | with G a k_g x k_g Gaussian of sigma k_g / 3, clamped to
/// [0,1]. The threshold t is applied to s in intensity units.
inline Plane sharpness_difference(const Plane& reblurred, const ReblurParams& params) {
  params.validate();
  Plane s(reblurred.height(), reblurred.width());
  if (params.k_g == 1) return s;
  const Plane g = gaussian_blur(reblurred, params.k_g, params.k_g / 3.0);
  auto out = s.values();
  const auto a = reblurred.values();
  const auto b = g.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(std::abs(a[i] - b[i]), 0.0, 1.0);
  return s;
}

/// d = 1 where s > t, else 0.
inline BinaryMask segment_threshold(const Plane& s, double t) {
  BinaryMask d(s.height(), s.width());
  for (int y = 0; y < s.height(); ++y)
    for (int x = 0; x < s.width(); ++x) d.set(y, x, s(y, x) > t);
  return d;
}

namespace detail {

// Square-element max (dilate) or min (erode) over in-bounds neighbours,
// done separably.
inline BinaryMask square_filter(const BinaryMask& m, int k, bool dilate) {
  if (k < 1 || k % 2 == 0) throw invalid_argument("morphology: element size must be odd and >= 1");
  const int r = k / 2;
  const int h = m.height();
  const int w = m.width();
  if (r == 0) return m;
  BinaryMask tmp(h, w), out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool v = !dilate;
      for (int xx = std::max(0, x - r); xx <= std::min(w - 1, x + r); ++xx)
        v = dilate ? (v || m(y, xx)) : (v && m(y, xx));
      tmp.set(y, x, v);
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      bool v = !dilate;
      for (int yy = std::max(0, y - r); yy <= std::min(h - 1, y + r); ++yy)
        v = dilate ? (v || tmp(yy, x)) : (v && tmp(yy, x));
      out.set(y, x, v);
    }
  return out;
}

}  // namespace detail

inline BinaryMask dilate(const BinaryMask& m, int k) { return detail::square_filter(m, k, true); }
inline BinaryMask erode(const BinaryMask& m, int k) { return detail::square_filter(m, k, false); }

/// Closing: dilation with a k_d x k_d square, then erosion with k_e x k_e.
inline BinaryMask morph_close(const BinaryMask& d, int k_d, int k_e) { return erode(dilate(d, k_d), k_e); }

/// 4-connected component labels (0 = background, 1.. in raster order of
/// first pixel). Returns the component sizes indexed by label.
inline std::vector<std::size_t> label_components(const BinaryMask& m, std::vector<int>& labels) {
  const int h = m.height();
  const int w = m.width();
  labels.assign(static_cast<std::size_t>(h) * w, 0);
  std::vector<std::size_t> sizes{0};
  std::deque<std::pair<int, int>> queue;
  for (int y0 = 0; y0 < h; ++y0)
    for (int x0 = 0; x0 < w; ++x0) {
      if (!m(y0, x0) || labels[static_cast<std::size_t>(y0) * w + x0] != 0) continue;
      const int label = static_cast<int>(sizes.size());
      std::size_t count = 0;
      labels[static_cast<std::size_t>(y0) * w + x0] = label;
      queue.emplace_back(y0, x0);
      while (!queue.empty()) {
        auto [y, x] = queue.front();
        queue.pop_front();
        ++count;
        constexpr int dy[] = {-1, 1, 0, 0};
        constexpr int dx[] = {0, 0, -1, 1};
        for (int n = 0; n < 4; ++n) {
          const int ny = y + dy[n];
          const int nx = x + dx[n];
          if (ny < 0 || ny >= h || nx < 0 || nx >= w || !m(ny, nx)) continue;
          int& l = labels[static_cast<std::size_t>(ny) * w + nx];
          if (l != 0) continue;
          l = label;
          queue.emplace_back(ny, nx);
        }
      }
      sizes.push_back(count);
    }
  return sizes;
}

/// Background pixels not 4-connected to the image border become foreground.
inline BinaryMask fill_holes(const BinaryMask& m) {
  const int h = m.height();
  const int w = m.width();
  BinaryMask outside(h, w);
  std::deque<std::pair<int, int>> queue;
  auto seed = [&](int y, int x) {
    if (!m(y, x) && !outside(y, x)) {
      outside.set(y, x, true);
      queue.emplace_back(y, x);
    }
  };
  for (int x = 0; x < w; ++x) {
    seed(0, x);
    seed(h - 1, x);
  }
  for (int y = 0; y < h; ++y) {
    seed(y, 0);
    seed(y, w - 1);
  }
  while (!queue.empty()) {
    auto [y, x] = queue.front();
    queue.pop_front();
    if (y > 0) seed(y - 1, x);
    if (y + 1 < h) seed(y + 1, x);
    if (x > 0) seed(y, x - 1);
    if (x + 1 < w) seed(y, x + 1);
  }
  return outside.complement();
}

/// With f set: keep the largest 4-connected component and fill its holes.
/// Without: the input, unchanged.
inline BinaryMask largest_region_fill(const BinaryMask& d, bool f) {
  if (!f) return d;
  std::vector<int> labels;
  const auto sizes = label_components(d, labels);
  if (sizes.size() <= 1) return d;
  const int best = static_cast<int>(std::max_element(sizes.begin() + 1, sizes.end()) - sizes.begin());
  BinaryMask kept(d.height(), d.width());
  for (int y = 0; y < d.height(); ++y)
    for (int x = 0; x < d.width(); ++x) kept.set(y, x, labels[static_cast<std::size_t>(y) * d.width() + x] == best);
  return fill_holes(kept);
}

/// Every intermediate of the focus measurement, for inspection and output.
struct FocusMeasurement {
  Kernel spread_kernel;
  Plane sharpness;          // s
  BinaryMask segmented;     // d
  BinaryMask closed;        // d-hat
  BinaryMask background;    // C{d-hat}: where the background-focused image is sharp
  DecisionMap foreground;   // m, selects i_fore
  bool degenerate = false;  // region empty or full; foreground fell back to all ones
};

inline FocusMeasurement measure_focus(const Image& i_fore, const Image& i_back, const ReblurParams& params = {},
                                      const KernelEstConfig& cfg = {}) {
  params.validate();
  if (!i_fore.same_shape(i_back)) throw invalid_argument("compute_decision_map: input shapes differ");
  const Plane y_fore = luma_plane(i_fore);
  const Plane y_back = luma_plane(i_back);

  FocusMeasurement out;
  out.spread_kernel = estimate_spread_kernel(y_fore, y_back, cfg);
  out.sharpness = sharpness_difference(reblur(y_back, out.spread_kernel), params);
  out.segmented = segment_threshold(out.sharpness, params.t);
  out.closed = morph_close(out.segmented, params.k_d, params.k_e);
  out.background = largest_region_fill(out.closed, params.f);

  if (out.background.none() || out.background.all()) {
    out.degenerate = true;
    out.foreground = Plane(i_fore.height(), i_fore.width(), 1.0);
    log::emit(log::Level::warn, "decision_map_degenerate", "params", params.to_string(), "fallback",
              "all_foreground");
  } else {
    out.foreground = out.background.complement().to_plane();
  }
  return out;
}

/// Binary foreground decision map m; the background map is 1 - m.
inline DecisionMap compute_decision_map(const Image& i_fore, const Image& i_back, const ReblurParams& params = {},
                                        const KernelEstConfig& cfg = {}) {
  return measure_focus(i_fore, i_back, params, cfg).foreground;
}

inline Plane complement(const DecisionMap& m) {
  Plane c(m.height(), m.width());
  auto out = c.values();
  const auto in = m.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 - in[i];
  return c;
}

}  // namespace dfp
