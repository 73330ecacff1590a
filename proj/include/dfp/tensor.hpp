#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dfp/errors.hpp"
#include "dfp/image.hpp"

namespace dfp {

/// Channel-planar C x H x W feature tensor (batch of one).
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  Tensor(int channels, int height, int width, T fill = T(0))
      : c_(channels), h_(height), w_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {}

  int channels() const noexcept { return c_; }
  int height() const noexcept { return h_; }
  int width() const noexcept { return w_; }
  std::size_t plane_size() const noexcept { return static_cast<std::size_t>(h_) * w_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(int c, int y, int x) { return data_[(c * plane_size()) + static_cast<std::size_t>(y) * w_ + x]; }
  T operator()(int c, int y, int x) const {
    return data_[(c * plane_size()) + static_cast<std::size_t>(y) * w_ + x];
  }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  T* plane(int c) noexcept { return data_.data() + c * plane_size(); }
  const T* plane(int c) const noexcept { return data_.data() + c * plane_size(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool same_shape(const Tensor& o) const noexcept { return c_ == o.c_ && h_ == o.h_ && w_ == o.w_; }
  std::string shape_string() const {
    return std::to_string(c_) + "x" + std::to_string(h_) + "x" + std::to_string(w_);
  }

  bool operator==(const Tensor&) const = default;

 private:
  int c_ = 0;
  int h_ = 0;
  int w_ = 0;
  aligned_vector<T> data_;
};

template <typename T>
Tensor<T> to_tensor(const Image& img) {
  Tensor<T> t(img.channels(), img.height(), img.width());
  for (int c = 0; c < img.channels(); ++c) {
    const auto src = img.channel(c).values();
    std::transform(src.begin(), src.end(), t.plane(c), [](double v) { return static_cast<T>(v); });
  }
  return t;
}

template <typename T>
Tensor<T> to_tensor(const Plane& p) {
  Tensor<T> t(1, p.height(), p.width());
  std::transform(p.values().begin(), p.values().end(), t.data(), [](double v) { return static_cast<T>(v); });
  return t;
}

template <typename T>
Image to_image(const Tensor<T>& t) {
  std::vector<Plane> planes;
  for (int c = 0; c < t.channels(); ++c) {
    Plane p(t.height(), t.width());
    std::transform(t.plane(c), t.plane(c) + t.plane_size(), p.values().begin(),
                   [](T v) { return static_cast<double>(v); });
    planes.push_back(std::move(p));
  }
  return Image::from_planes(std::move(planes));
}

template <typename T>
Plane to_plane(const Tensor<T>& t, int channel = 0) {
  Plane p(t.height(), t.width());
  std::transform(t.plane(channel), t.plane(channel) + t.plane_size(), p.values().begin(),
                 [](T v) { return static_cast<double>(v); });
  return p;
}

/// Reflect-pad on the bottom and right edges up to (height, width).
template <typename T>
Tensor<T> pad_reflect(const Tensor<T>& t, int height, int width) {
  if (height < t.height() || width < t.width()) throw invalid_argument("pad_reflect: target smaller than input");
  Tensor<T> out(t.channels(), height, width);
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x)
        out(c, y, x) = t(c, reflect_index(y, t.height()), reflect_index(x, t.width()));
  return out;
}

/// Top-left crop.
template <typename T>
Tensor<T> crop(const Tensor<T>& t, int height, int width) {
  if (height > t.height() || width > t.width()) throw invalid_argument("crop: target larger than input");
  Tensor<T> out(t.channels(), height, width);
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < height; ++y)
      std::copy_n(t.plane(c) + static_cast<std::size_t>(y) * t.width(), width,
                  out.plane(c) + static_cast<std::size_t>(y) * width);
  return out;
}

}  // namespace dfp
