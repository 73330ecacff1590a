#pragma once

// Image, Plane and Kernel types plus the resampling and convolution
// primitives shared by every stage of the fusion pipeline.
//
// Conventions used throughout:
//  * intensities are doubles on [0,1]; 8-bit data is scaled on load/save;
//  * borders are mirrored without repeating the edge sample ("reflect-101",
//    the same rule as a reflection-padding layer);
//  * resampling uses a corner-aligned grid: output sample o maps to input
//    coordinate o * (in - 1) / (out - 1), so corners stay registered across
//    scales.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dfp/errors.hpp"

namespace dfp {

/// Storage for buffers handed to Eigen. A fixed base alignment keeps the
/// vectorized reduction order, and therefore the results, identical from
/// run to run.
template <typename T>
using aligned_vector = std::vector<T, Eigen::aligned_allocator<T>>;

// Mirror an out-of-range index back into [0, n).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i >= n ? period - i : i;
}

/// Single-channel real-valued map (may be signed, e.g. Laplacian responses).
class Plane {
 public:
  Plane() = default;
  Plane(int height, int width, double fill = 0.0)
      : height_(height), width_(width),
        data_(static_cast<std::size_t>(height) * width, fill) {
    if (height < 0 || width < 0) throw invalid_argument("Plane: negative size");
  }

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(int y, int x) { return data_[index(y, x)]; }
  double operator()(int y, int x) const { return data_[index(y, x)]; }
  // Border-reflected read.
  double at_reflect(int y, int x) const {
    return data_[index(reflect_index(y, height_), reflect_index(x, width_))];
  }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  bool same_shape(const Plane& o) const noexcept {
    return height_ == o.height_ && width_ == o.width_;
  }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }
  double mean() const { return data_.empty() ? 0.0 : sum() / static_cast<double>(data_.size()); }
  double min() const { return *std::min_element(data_.begin(), data_.end()); }
  double max() const { return *std::max_element(data_.begin(), data_.end()); }

  bool operator==(const Plane&) const = default;

 private:
  std::size_t index(int y, int x) const noexcept {
    return static_cast<std::size_t>(y) * width_ + x;
  }

  int height_ = 0;
  int width_ = 0;
  aligned_vector<double> data_;
};

/// H x W x C photographic image, C in {1, 3}, every value in [0,1].
/// All writes clamp, so the range invariant cannot be broken from outside.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0) {
    check_channels(channels);
    planes_.assign(channels, Plane(height, width, clamp01(fill)));
  }

  static Image from_planes(std::vector<Plane> planes) {
    check_channels(static_cast<int>(planes.size()));
    for (const auto& p : planes)
      if (!p.same_shape(planes.front())) throw invalid_argument("Image: plane shapes differ");
    Image img;
    img.planes_ = std::move(planes);
    for (auto& p : img.planes_)
      for (double& v : p.values()) v = clamp01(v);
    return img;
  }

  static Image from_plane(const Plane& p) { return from_planes({p}); }

  int height() const noexcept { return planes_.empty() ? 0 : planes_.front().height(); }
  int width() const noexcept { return planes_.empty() ? 0 : planes_.front().width(); }
  int channels() const noexcept { return static_cast<int>(planes_.size()); }
  bool empty() const noexcept { return planes_.empty(); }

  double operator()(int c, int y, int x) const { return planes_[c](y, x); }
  void set(int c, int y, int x, double v) { planes_[c](y, x) = clamp01(v); }

  const Plane& channel(int c) const { return planes_.at(c); }
  const std::vector<Plane>& planes() const noexcept { return planes_; }

  bool same_shape(const Image& o) const noexcept {
    return channels() == o.channels() && height() == o.height() && width() == o.width();
  }

  bool operator==(const Image&) const = default;

  static double clamp01(double v) {
    if (!(v > 0.0)) return 0.0;  // also maps NaN to 0
    return v < 1.0 ? v : 1.0;
  }

 private:
  static void check_channels(int c) {
    if (c != 1 && c != 3) throw invalid_argument("Image: channels must be 1 or 3");
  }

  std::vector<Plane> planes_;
};

/// Square k x k filter, k odd. Taps are indexed from the centre, so
/// (dy, dx) ranges over [-radius, radius].
class Kernel {
 public:
  Kernel() : Kernel(1) { taps_[0] = 1.0; }
  explicit Kernel(int size, double fill = 0.0) : size_(size) {
    if (size < 1 || size % 2 == 0) throw invalid_argument("Kernel: size must be odd and >= 1");
    taps_.assign(static_cast<std::size_t>(size) * size, fill);
  }
  Kernel(int size, std::vector<double> taps) : Kernel(size) {
    if (taps.size() != taps_.size()) throw invalid_argument("Kernel: tap count mismatch");
    taps_ = std::move(taps);
  }

  static Kernel identity() { return Kernel(); }

  int size() const noexcept { return size_; }
  int radius() const noexcept { return size_ / 2; }

  double& operator()(int dy, int dx) { return taps_[index(dy, dx)]; }
  double operator()(int dy, int dx) const { return taps_[index(dy, dx)]; }

  std::span<double> values() noexcept { return taps_; }
  std::span<const double> values() const noexcept { return taps_; }

  double sum() const {
    double s = 0.0;
    for (double v : taps_) s += v;
    return s;
  }

  bool operator==(const Kernel&) const = default;

 private:
  std::size_t index(int dy, int dx) const noexcept {
    return static_cast<std::size_t>(dy + radius()) * size_ + (dx + radius());
  }

  int size_ = 1;
  std::vector<double> taps_;
};

// ---------------------------------------------------------------------------
// Colour

/// BT.601 luma of an RGB image.
inline Plane to_luma(const Image& img) {
  if (img.channels() != 3) throw invalid_argument("to_luma: expected a 3-channel image");
  Plane y(img.height(), img.width());
  const auto r = img.channel(0).values();
  const auto g = img.channel(1).values();
  const auto b = img.channel(2).values();
  auto out = y.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  return y;
}

// Luma for RGB input, the single channel otherwise.
inline Plane luma_plane(const Image& img) {
  return img.channels() == 3 ? to_luma(img) : img.channel(0);
}

// ---------------------------------------------------------------------------
// Resampling

enum class ResampleMethod { bilinear, bicubic, lanczos };

inline std::string to_string(ResampleMethod m) {
  switch (m) {
    case ResampleMethod::bilinear: return "bilinear";
    case ResampleMethod::bicubic: return "bicubic";
    case ResampleMethod::lanczos: return "lanczos";
  }
  return "?";
}

inline ResampleMethod parse_resample_method(const std::string& s) {
  if (s == "bilinear") return ResampleMethod::bilinear;
  if (s == "bicubic") return ResampleMethod::bicubic;
  if (s == "lanczos") return ResampleMethod::lanczos;
  throw invalid_argument("unknown resample method '" + s + "' (bilinear|bicubic|lanczos)");
}

/// Positive rational scale factor num/den.
struct Scale {
  long num = 1;
  long den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  // Scaled extent; throws unless n * num / den is an integer.
  int apply(int n) const {
    if (num <= 0 || den <= 0) throw invalid_argument("Scale: must be positive");
    const long prod = static_cast<long>(n) * num;
    if (prod % den != 0)
      throw invalid_argument("resample: " + std::to_string(n) + " * " + std::to_string(num) + "/" +
                             std::to_string(den) + " is not an integer");
    return static_cast<int>(prod / den);
  }
};

namespace detail {

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

inline double filter_support(ResampleMethod m) {
  switch (m) {
    case ResampleMethod::bilinear: return 1.0;
    case ResampleMethod::bicubic: return 2.0;
    case ResampleMethod::lanczos: return 3.0;
  }
  return 1.0;
}

inline double filter_weight(ResampleMethod m, double x) {
  const double a = std::abs(x);
  switch (m) {
    case ResampleMethod::bilinear:
      return a < 1.0 ? 1.0 - a : 0.0;
    case ResampleMethod::bicubic: {
      // Keys cubic convolution, a = -0.5.
      constexpr double k = -0.5;
      if (a < 1.0) return ((k + 2.0) * a - (k + 3.0)) * a * a + 1.0;
      if (a < 2.0) return (((a - 5.0) * a + 8.0) * a - 4.0) * k;
      return 0.0;
    }
    case ResampleMethod::lanczos:
      return a < 3.0 ? sinc(a) * sinc(a / 3.0) : 0.0;
  }
  return 0.0;
}

}  // namespace detail

/// Dense (out x in) 1-D resampling matrix on the corner-aligned grid.
/// Downscaling widens the filter by the scale ratio (antialiasing); every
/// row sums to one, so constants are preserved exactly.
inline Eigen::MatrixXd resample_weights(int in, int out, ResampleMethod method) {
  if (in < 1 || out < 1) throw invalid_argument("resample_weights: empty extent");
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(out, in);
  if (in == out) return Eigen::MatrixXd::Identity(out, in);
  if (in == 1) {
    w.setOnes();
    return w;
  }
  const double ratio = out > 1 ? static_cast<double>(in - 1) / static_cast<double>(out - 1) : 0.0;
  const double stretch = std::max(ratio, 1.0);
  const double support = detail::filter_support(method) * stretch;
  for (int o = 0; o < out; ++o) {
    const double centre = o * ratio;
    const int lo = static_cast<int>(std::floor(centre - support));
    const int hi = static_cast<int>(std::ceil(centre + support));
    double total = 0.0;
    for (int j = lo; j <= hi; ++j) {
      const double v = detail::filter_weight(method, (j - centre) / stretch);
      if (v == 0.0) continue;
      w(o, reflect_index(j, in)) += v;
      total += v;
    }
    w.row(o) /= total;
  }
  return w;
}

/// Apply separable row/column resampling matrices to a plane:
/// out = rows * P * cols^T.
inline Plane apply_separable(const Plane& p, const Eigen::MatrixXd& rows, const Eigen::MatrixXd& cols) {
  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  if (rows.cols() != p.height() || cols.cols() != p.width())
    throw invalid_argument("apply_separable: matrix/plane size mismatch");
  Plane out(static_cast<int>(rows.rows()), static_cast<int>(cols.rows()));
  Eigen::Map<const RowMat> in(p.values().data(), p.height(), p.width());
  Eigen::Map<RowMat> dst(out.values().data(), out.height(), out.width());
  dst.noalias() = rows * in * cols.transpose();
  return out;
}

inline Plane resample(const Plane& p, Scale scale, ResampleMethod method) {
  const int h = scale.apply(p.height());
  const int w = scale.apply(p.width());
  if (h < 4 || w < 4) throw invalid_argument("resample: target smaller than 4 pixels");
  return apply_separable(p, resample_weights(p.height(), h, method), resample_weights(p.width(), w, method));
}

// Resample to explicit dimensions.
inline Plane resize(const Plane& p, int height, int width, ResampleMethod method) {
  return apply_separable(p, resample_weights(p.height(), height, method),
                         resample_weights(p.width(), width, method));
}

inline Image resample(const Image& img, Scale scale, ResampleMethod method) {
  const int h = scale.apply(img.height());
  const int w = scale.apply(img.width());
  if (h < 4 || w < 4) throw invalid_argument("resample: target smaller than 4 pixels");
  const auto rows = resample_weights(img.height(), h, method);
  const auto cols = resample_weights(img.width(), w, method);
  std::vector<Plane> planes;
  for (const auto& p : img.planes()) planes.push_back(apply_separable(p, rows, cols));
  return Image::from_planes(std::move(planes));
}

// ---------------------------------------------------------------------------
// Convolution

/// True 2-D convolution with reflect-101 borders:
/// out(y,x) = sum_{dy,dx} k(dy,dx) * p(y - dy, x - dx).
inline Plane convolve2d(const Plane& p, const Kernel& k) {
  if (k.size() > p.height() || k.size() > p.width())
    throw invalid_argument("convolve2d: kernel larger than plane");
  const int r = k.radius();
  const int h = p.height();
  const int w = p.width();
  Plane out(h, w);
  for (int y = 0; y < h; ++y) {
    const bool interior_y = y - r >= 0 && y + r < h;
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      if (interior_y && x - r >= 0 && x + r < w) {
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) acc += k(dy, dx) * p(y - dy, x - dx);
      } else {
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) acc += k(dy, dx) * p.at_reflect(y - dy, x - dx);
      }
      out(y, x) = acc;
    }
  }
  return out;
}

/// Normalized isotropic Gaussian, size odd >= 3.
inline Kernel gaussian_kernel(int size, double sigma) {
  if (size < 3 || size % 2 == 0) throw invalid_argument("gaussian_kernel: size must be odd and >= 3");
  if (!(sigma > 0.0)) throw invalid_argument("gaussian_kernel: sigma must be positive");
  Kernel k(size);
  const int r = k.radius();
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) k(dy, dx) = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
  const double total = k.sum();
  for (double& v : k.values()) v /= total;
  return k;
}

inline Plane gaussian_blur(const Plane& p, int size, double sigma) {
  return convolve2d(p, gaussian_kernel(size, sigma));
}

inline Kernel laplacian_kernel() {
  return Kernel(3, {0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0});
}

/// 4-neighbour Laplacian with reflect-101 borders.
inline Plane laplacian_map(const Plane& p) {
  const int h = p.height();
  const int w = p.width();
  Plane out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out(y, x) = p.at_reflect(y - 1, x) + p.at_reflect(y + 1, x) + p.at_reflect(y, x - 1) +
                  p.at_reflect(y, x + 1) - 4.0 * p(y, x);
  return out;
}

// Channel-wise application of a plane filter; the result is clamped.
template <typename Fn>
Image map_channels(const Image& img, Fn&& fn) {
  std::vector<Plane> planes;
  planes.reserve(img.channels());
  for (const auto& p : img.planes()) planes.push_back(fn(p));
  return Image::from_planes(std::move(planes));
}

}  // namespace dfp
