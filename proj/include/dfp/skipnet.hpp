#pragma once

// Encoder-decoder generator with per-scale skip concatenations and a sigmoid
// head, plus the layers it is built from. Every layer has a hand-written
// backward pass; parameters and gradients live in one flat store so the
// optimizer, checkpointing and gradient checks can treat them as vectors.
//
// Layout: D encoder blocks halve the resolution down to the central feature
// map; D decoder blocks double it back. Skip path d projects the input of
// encoder block d through a 1x1 convolution and is concatenated onto the
// upsampled decoder features at the same scale.
//
//   encoder block: pad, conv(n, s1), BN, lrelu, pad, conv(n, s2), BN, lrelu
//   decoder block: up2x, [concat skip], BN, pad, conv(n, s1), BN, lrelu,
//                  pad, conv(n, s1), BN, lrelu
//   head:          conv 1x1, sigmoid
//
// Batch normalization always uses the statistics of the current forward pass
// (single-instance optimization has no separate evaluation mode).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dfp/errors.hpp"
#include "dfp/image.hpp"
#include "dfp/tensor.hpp"

namespace dfp {

struct NetworkConfig {
  int depth = 5;
  int kernel_size = 5;
  std::vector<int> encoder_channels{16, 32, 64, 128, 128};
  std::vector<int> skip_channels{4, 4, 4, 4, 4};
  bool use_split_conv = false;
  int input_channels = 3;
  int output_channels = 3;
  double leaky_slope = 0.1;

  void validate() const {
    if (depth < 1) throw invalid_argument("network: depth must be >= 1");
    if (kernel_size < 1 || kernel_size % 2 == 0) throw invalid_argument("network: kernel_size must be odd");
    if (static_cast<int>(encoder_channels.size()) != depth || static_cast<int>(skip_channels.size()) != depth)
      throw invalid_argument("network: channel lists must have one entry per depth level");
    for (int c : encoder_channels)
      if (c < 1) throw invalid_argument("network: encoder channel counts must be >= 1");
    for (int c : skip_channels)
      if (c < 1) throw invalid_argument("network: skip channel counts must be >= 1");
    if (input_channels < 1 || output_channels < 1) throw invalid_argument("network: channel counts must be >= 1");
    if (!(leaky_slope >= 0.0)) throw invalid_argument("network: leaky_slope must be >= 0");
  }

  bool operator==(const NetworkConfig&) const = default;
};

namespace nn {

/// Flat parameter/gradient storage with named, shape-tagged entries.
template <typename T>
struct ParamStore {
  struct Entry {
    std::string name;
    std::vector<int> shape;
    std::size_t offset;
    std::size_t size;
  };

  std::size_t allocate(std::string name, std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    const std::size_t off = values.size();
    values.resize(off + n, T(0));
    grads.resize(off + n, T(0));
    entries.push_back({std::move(name), std::move(shape), off, n});
    return off;
  }

  aligned_vector<T> values;
  aligned_vector<T> grads;
  std::vector<Entry> entries;
};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// k x k convolution with reflection padding k/2 and the given stride.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, int cin, int cout, int k, int stride, std::mt19937_64& rng,
         double slope)
      : cin_(cin), cout_(cout), k_(k), stride_(stride) {
    w_off_ = store.allocate(name + ".weight", {cout, cin, k, k});
    b_off_ = store.allocate(name + ".bias", {cout});
    // Kaiming-style uniform fan-in initialization for leaky-ReLU networks.
    const double fan_in = static_cast<double>(cin) * k * k;
    const double wb = std::sqrt(6.0 / ((1.0 + slope * slope) * fan_in));
    const double bb = 1.0 / std::sqrt(fan_in);
    std::uniform_real_distribution<double> uw(-wb, wb), ub(-bb, bb);
    for (std::size_t i = 0; i < weights(); ++i) store.values[w_off_ + i] = static_cast<T>(uw(rng));
    for (int i = 0; i < cout; ++i) store.values[b_off_ + i] = static_cast<T>(ub(rng));
  }

  std::size_t weights() const { return static_cast<std::size_t>(cout_) * cin_ * k_ * k_; }
  int out_channels() const { return cout_; }

  Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>& store) {
    if (x.channels() != cin_)
      throw invalid_argument("conv: expected " + std::to_string(cin_) + " channels, got " + x.shape_string());
    in_h_ = x.height();
    in_w_ = x.width();
    const int pad = k_ / 2;
    out_h_ = (in_h_ + 2 * pad - k_) / stride_ + 1;
    out_w_ = (in_w_ + 2 * pad - k_) / stride_ + 1;
    build_tables();
    x_ = x;

    const int K = cin_ * k_ * k_;
    const int P = out_h_ * out_w_;
    Tensor<T> y(cout_, out_h_, out_w_);
    Eigen::Map<const RowMat<T>> w(store.values.data() + w_off_, cout_, K);
    Eigen::Map<RowMat<T>> out(y.data(), cout_, P);
    for_each_block([&](int oy0, int oy1) {
      const int p0 = oy0 * out_w_;
      const int n = (oy1 - oy0) * out_w_;
      im2col(oy0, oy1);
      Eigen::Map<const RowMat<T>> col(col_.data(), K, n);
      out.middleCols(p0, n).noalias() = w * col;
    });
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> b(store.values.data() + b_off_, cout_);
    out.colwise() += b;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, ParamStore<T>& store, bool need_dx) {
    const int K = cin_ * k_ * k_;
    const int P = out_h_ * out_w_;
    Eigen::Map<const RowMat<T>> g(dy.data(), cout_, P);
    Eigen::Map<RowMat<T>> dw(store.grads.data() + w_off_, cout_, K);
    Eigen::Map<const RowMat<T>> w(store.values.data() + w_off_, cout_, K);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(store.grads.data() + b_off_, cout_);
    db += g.rowwise().sum();
    Tensor<T> dx;
    if (need_dx) dx = Tensor<T>(cin_, in_h_, in_w_);
    for_each_block([&](int oy0, int oy1) {
      const int p0 = oy0 * out_w_;
      const int n = (oy1 - oy0) * out_w_;
      im2col(oy0, oy1);
      Eigen::Map<const RowMat<T>> col(col_.data(), K, n);
      dw.noalias() += g.middleCols(p0, n) * col.transpose();
      if (need_dx) {
        Eigen::Map<RowMat<T>> dcol(col_.data(), K, n);
        dcol.noalias() = w.transpose() * g.middleCols(p0, n);
        col2im(col_.data(), dx, oy0, oy1);
      }
    });
    return dx;
  }

 private:
  // Output rows are processed in blocks small enough for the column
  // buffer to stay cache resident.
  template <typename Fn>
  void for_each_block(Fn&& fn) {
    const std::size_t per_row = static_cast<std::size_t>(cin_) * k_ * k_ * out_w_;
    const int rows = static_cast<int>(std::clamp<std::size_t>(kBlockElements / std::max<std::size_t>(per_row, 1), 1,
                                                              static_cast<std::size_t>(out_h_)));
    col_.resize(per_row * rows);
    for (int oy0 = 0; oy0 < out_h_; oy0 += rows) fn(oy0, std::min(out_h_, oy0 + rows));
  }

  void build_tables() {
    const int pad = k_ / 2;
    rows_.assign(static_cast<std::size_t>(k_) * out_h_, 0);
    cols_.assign(static_cast<std::size_t>(k_) * out_w_, 0);
    for (int ky = 0; ky < k_; ++ky)
      for (int oy = 0; oy < out_h_; ++oy) rows_[ky * out_h_ + oy] = reflect_index(oy * stride_ + ky - pad, in_h_);
    for (int kx = 0; kx < k_; ++kx)
      for (int ox = 0; ox < out_w_; ++ox) cols_[kx * out_w_ + ox] = reflect_index(ox * stride_ + kx - pad, in_w_);
    // Range of output columns whose source column needs no reflection.
    lo_.assign(k_, 0);
    hi_.assign(k_, 0);
    for (int kx = 0; kx < k_; ++kx) {
      int lo = 0;
      while (lo < out_w_ && lo * stride_ + kx - pad < 0) ++lo;
      int hi = lo;
      while (hi < out_w_ && hi * stride_ + kx - pad < in_w_) ++hi;
      lo_[kx] = lo;
      hi_[kx] = hi;
    }
  }

  void im2col(int oy0, int oy1) {
    const int pad = k_ / 2;
    T* dst = col_.data();
    for (int c = 0; c < cin_; ++c) {
      const T* src = x_.plane(c);
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const int* ct = cols_.data() + kx * out_w_;
          const int lo = lo_[kx], hi = hi_[kx];
          for (int oy = oy0; oy < oy1; ++oy) {
            const T* srow = src + static_cast<std::size_t>(rows_[ky * out_h_ + oy]) * in_w_;
            for (int ox = 0; ox < lo; ++ox) dst[ox] = srow[ct[ox]];
            if (stride_ == 1) {
              std::copy(srow + lo + kx - pad, srow + hi + kx - pad, dst + lo);
            } else {
              const T* s0 = srow + kx - pad;
              for (int ox = lo; ox < hi; ++ox) dst[ox] = s0[ox * stride_];
            }
            for (int ox = hi; ox < out_w_; ++ox) dst[ox] = srow[ct[ox]];
            dst += out_w_;
          }
        }
    }
  }

  void col2im(const T* dcol, Tensor<T>& dx, int oy0, int oy1) const {
    const int pad = k_ / 2;
    const T* src = dcol;
    for (int c = 0; c < cin_; ++c) {
      T* plane = dx.plane(c);
      for (int ky = 0; ky < k_; ++ky)
        for (int kx = 0; kx < k_; ++kx) {
          const int* ct = cols_.data() + kx * out_w_;
          const int lo = lo_[kx], hi = hi_[kx];
          for (int oy = oy0; oy < oy1; ++oy) {
            T* drow = plane + static_cast<std::size_t>(rows_[ky * out_h_ + oy]) * in_w_;
            for (int ox = 0; ox < lo; ++ox) drow[ct[ox]] += src[ox];
            if (stride_ == 1) {
              T* d0 = drow + kx - pad;
              for (int ox = lo; ox < hi; ++ox) d0[ox] += src[ox];
            } else {
              T* d0 = drow + kx - pad;
              for (int ox = lo; ox < hi; ++ox) d0[ox * stride_] += src[ox];
            }
            for (int ox = hi; ox < out_w_; ++ox) drow[ct[ox]] += src[ox];
            src += out_w_;
          }
        }
    }
  }

  static constexpr std::size_t kBlockElements = std::size_t{1} << 17;

  int cin_ = 0, cout_ = 0, k_ = 1, stride_ = 1;
  std::size_t w_off_ = 0, b_off_ = 0;
  int in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
  std::vector<int> rows_, cols_, lo_, hi_;
  aligned_vector<T> col_;
  Tensor<T> x_;
};

/// Per-channel normalization with the statistics of the current input.
template <typename T>
class BatchNorm {
 public:
  static constexpr double kEps = 1e-5;

  BatchNorm() = default;
  BatchNorm(ParamStore<T>& store, const std::string& name, int channels) : c_(channels) {
    g_off_ = store.allocate(name + ".gamma", {channels});
    b_off_ = store.allocate(name + ".beta", {channels});
    for (int i = 0; i < channels; ++i) store.values[g_off_ + i] = T(1);
  }

  Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>& store) {
    xhat_ = Tensor<T>(x.channels(), x.height(), x.width());
    inv_std_.assign(c_, 0.0);
    Tensor<T> y(x.channels(), x.height(), x.width());
    const std::size_t n = x.plane_size();
    for (int c = 0; c < c_; ++c) {
      const T* in = x.plane(c);
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += in[i];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i) var += (in[i] - mean) * (in[i] - mean);
      var /= static_cast<double>(n);
      const double inv = 1.0 / std::sqrt(var + kEps);
      inv_std_[c] = inv;
      const double gamma = store.values[g_off_ + c];
      const double beta = store.values[b_off_ + c];
      T* xh = xhat_.plane(c);
      T* out = y.plane(c);
      for (std::size_t i = 0; i < n; ++i) {
        const double v = (in[i] - mean) * inv;
        xh[i] = static_cast<T>(v);
        out[i] = static_cast<T>(gamma * v + beta);
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy, ParamStore<T>& store) {
    Tensor<T> dx(dy.channels(), dy.height(), dy.width());
    const std::size_t n = dy.plane_size();
    const double nn = static_cast<double>(n);
    for (int c = 0; c < c_; ++c) {
      const T* g = dy.plane(c);
      const T* xh = xhat_.plane(c);
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sum_g += g[i];
        sum_gx += static_cast<double>(g[i]) * xh[i];
      }
      store.grads[g_off_ + c] += static_cast<T>(sum_gx);
      store.grads[b_off_ + c] += static_cast<T>(sum_g);
      const double scale = store.values[g_off_ + c] * inv_std_[c] / nn;
      T* out = dx.plane(c);
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(scale * (nn * g[i] - sum_g - xh[i] * sum_gx));
    }
    return dx;
  }

 private:
  int c_ = 0;
  std::size_t g_off_ = 0, b_off_ = 0;
  Tensor<T> xhat_;
  std::vector<double> inv_std_;
};

template <typename T>
class LeakyRelu {
 public:
  LeakyRelu() = default;
  explicit LeakyRelu(double slope) : slope_(static_cast<T>(slope)) {}

  Tensor<T> forward(Tensor<T> x) {
    positive_.assign(x.size(), 0);
    auto v = x.values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (v[i] > T(0)) {
        positive_[i] = 1;
      } else {
        v[i] *= slope_;
      }
    }
    return x;
  }

  Tensor<T> backward(Tensor<T> dy) const {
    auto v = dy.values();
    for (std::size_t i = 0; i < v.size(); ++i)
      if (!positive_[i]) v[i] *= slope_;
    return dy;
  }

 private:
  T slope_ = T(0.1);
  std::vector<std::uint8_t> positive_;
};

/// Bilinear 2x upsampling on the corner-aligned grid, as separable matrices.
template <typename T>
class Upsample2x {
 public:
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.height() != in_h_ || x.width() != in_w_) {
      in_h_ = x.height();
      in_w_ = x.width();
      rows_ = resample_weights(in_h_, 2 * in_h_, ResampleMethod::bilinear).cast<T>();
      cols_ = resample_weights(in_w_, 2 * in_w_, ResampleMethod::bilinear).cast<T>();
    }
    Tensor<T> y(x.channels(), 2 * in_h_, 2 * in_w_);
    for (int c = 0; c < x.channels(); ++c) {
      Eigen::Map<const RowMat<T>> in(x.plane(c), in_h_, in_w_);
      Eigen::Map<RowMat<T>> out(y.plane(c), 2 * in_h_, 2 * in_w_);
      out.noalias() = rows_ * in * cols_.transpose();
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) const {
    Tensor<T> dx(dy.channels(), in_h_, in_w_);
    for (int c = 0; c < dy.channels(); ++c) {
      Eigen::Map<const RowMat<T>> g(dy.plane(c), 2 * in_h_, 2 * in_w_);
      Eigen::Map<RowMat<T>> out(dx.plane(c), in_h_, in_w_);
      out.noalias() = rows_.transpose() * g * cols_;
    }
    return dx;
  }

 private:
  int in_h_ = -1, in_w_ = -1;
  Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic> rows_, cols_;
};

template <typename T>
class Sigmoid {
 public:
  Tensor<T> forward(Tensor<T> x) {
    // Keep outputs strictly inside (0,1) even where the logistic saturates.
    const T lo = std::numeric_limits<T>::min();
    const T hi = std::nextafter(T(1), T(0));
    for (T& v : x.values()) {
      const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(v)));
      v = std::clamp(static_cast<T>(s), lo, hi);
    }
    y_ = x;
    return x;
  }

  Tensor<T> backward(Tensor<T> dy) const {
    auto g = dy.values();
    const auto y = y_.values();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (T(1) - y[i]);
    return dy;
  }

 private:
  Tensor<T> y_;
};

template <typename T>
Tensor<T> concat(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw invalid_argument("concat: spatial mismatch");
  Tensor<T> out(a.channels() + b.channels(), a.height(), a.width());
  std::copy(a.values().begin(), a.values().end(), out.data());
  std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> split(const Tensor<T>& t, int first_channels) {
  Tensor<T> a(first_channels, t.height(), t.width());
  Tensor<T> b(t.channels() - first_channels, t.height(), t.width());
  std::copy_n(t.data(), a.size(), a.data());
  std::copy_n(t.data() + a.size(), b.size(), b.data());
  return {std::move(a), std::move(b)};
}

template <typename T>
void accumulate(Tensor<T>& into, const Tensor<T>& g) {
  auto a = into.values();
  const auto b = g.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

/// One n x n convolution, or with splitting enabled a stack of (n-1)/2 3x3
/// convolutions with normalization and activation between them. The stride
/// is applied by the last convolution.
template <typename T>
class ConvUnit {
 public:
  ConvUnit() = default;
  ConvUnit(ParamStore<T>& store, const std::string& name, int cin, int cout, int k, int stride, bool split,
           std::mt19937_64& rng, double slope) {
    const int parts = (split && k > 3) ? (k - 1) / 2 : 1;
    const int ksize = parts > 1 ? 3 : k;
    for (int i = 0; i < parts; ++i) {
      const bool last = i + 1 == parts;
      convs_.emplace_back(store, name + ".conv" + std::to_string(i), i == 0 ? cin : cout, cout, ksize,
                          last ? stride : 1, rng, slope);
      if (!last) {
        norms_.emplace_back(store, name + ".bn" + std::to_string(i), cout);
        acts_.emplace_back(slope);
      }
    }
  }

  Tensor<T> forward(Tensor<T> x, const ParamStore<T>& store) {
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      x = convs_[i].forward(x, store);
      if (i < norms_.size()) x = acts_[i].forward(norms_[i].forward(x, store));
    }
    return x;
  }

  Tensor<T> backward(Tensor<T> g, ParamStore<T>& store, bool need_dx) {
    for (std::size_t i = convs_.size(); i-- > 0;) {
      if (i < norms_.size()) g = norms_[i].backward(acts_[i].backward(std::move(g)), store);
      g = convs_[i].backward(g, store, need_dx || i > 0);
    }
    return g;
  }

 private:
  std::vector<Conv2d<T>> convs_;
  std::vector<BatchNorm<T>> norms_;
  std::vector<LeakyRelu<T>> acts_;
};

template <typename T>
struct EncoderBlock {
  ConvUnit<T> conv1, conv2;
  BatchNorm<T> bn1, bn2;
  LeakyRelu<T> act1, act2;

  Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>& s) {
    Tensor<T> h = act1.forward(bn1.forward(conv1.forward(x, s), s));
    return act2.forward(bn2.forward(conv2.forward(std::move(h), s), s));
  }
  Tensor<T> backward(Tensor<T> g, ParamStore<T>& s, bool need_dx) {
    g = conv2.backward(bn2.backward(act2.backward(std::move(g)), s), s, true);
    return conv1.backward(bn1.backward(act1.backward(std::move(g)), s), s, need_dx);
  }
};

template <typename T>
struct DecoderBlock {
  Upsample2x<T> up;
  BatchNorm<T> bn0, bn1, bn2;
  ConvUnit<T> conv1, conv2;
  LeakyRelu<T> act1, act2;
  int up_channels = 0;

  Tensor<T> forward(const Tensor<T>& deeper, const Tensor<T>& skip, const ParamStore<T>& s) {
    Tensor<T> h = bn0.forward(concat(up.forward(deeper), skip), s);
    h = act1.forward(bn1.forward(conv1.forward(std::move(h), s), s));
    return act2.forward(bn2.forward(conv2.forward(std::move(h), s), s));
  }
  // Returns (gradient wrt deeper features, gradient wrt skip features).
  std::pair<Tensor<T>, Tensor<T>> backward(Tensor<T> g, ParamStore<T>& s) {
    g = conv2.backward(bn2.backward(act2.backward(std::move(g)), s), s, true);
    g = conv1.backward(bn1.backward(act1.backward(std::move(g)), s), s, true);
    g = bn0.backward(g, s);
    auto [g_up, g_skip] = split(g, up_channels);
    return {up.backward(g_up), std::move(g_skip)};
  }
};

}  // namespace nn

/// Skip-connected encoder-decoder generator ending in a sigmoid.
template <typename T>
class SkipNet {
 public:
  SkipNet(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const int D = cfg_.depth;
    const int k = cfg_.kernel_size;
    const double slope = cfg_.leaky_slope;
    const bool split = cfg_.use_split_conv;
    int cin = cfg_.input_channels;
    std::vector<int> level_in(D);
    for (int d = 0; d < D; ++d) {
      const std::string p = "enc" + std::to_string(d);
      const int c = cfg_.encoder_channels[d];
      level_in[d] = cin;
      nn::EncoderBlock<T> b;
      b.conv1 = nn::ConvUnit<T>(store_, p + ".conv1", cin, c, k, 1, split, rng, slope);
      b.bn1 = nn::BatchNorm<T>(store_, p + ".bn1", c);
      b.act1 = nn::LeakyRelu<T>(slope);
      b.conv2 = nn::ConvUnit<T>(store_, p + ".conv2", c, c, k, 2, split, rng, slope);
      b.bn2 = nn::BatchNorm<T>(store_, p + ".bn2", c);
      b.act2 = nn::LeakyRelu<T>(slope);
      encoders_.push_back(std::move(b));
      skips_.emplace_back(store_, "skip" + std::to_string(d), cin, cfg_.skip_channels[d], 1, 1, rng, slope);
      cin = c;
    }
    decoders_.resize(D);
    for (int d = D - 1; d >= 0; --d) {
      const std::string p = "dec" + std::to_string(d);
      const int up_c = d == D - 1 ? cfg_.encoder_channels[D - 1] : cfg_.encoder_channels[d + 1];
      const int in_c = up_c + cfg_.skip_channels[d];
      const int c = cfg_.encoder_channels[d];
      auto& b = decoders_[d];
      b.up_channels = up_c;
      b.bn0 = nn::BatchNorm<T>(store_, p + ".bn0", in_c);
      b.conv1 = nn::ConvUnit<T>(store_, p + ".conv1", in_c, c, k, 1, split, rng, slope);
      b.bn1 = nn::BatchNorm<T>(store_, p + ".bn1", c);
      b.act1 = nn::LeakyRelu<T>(slope);
      b.conv2 = nn::ConvUnit<T>(store_, p + ".conv2", c, c, k, 1, split, rng, slope);
      b.bn2 = nn::BatchNorm<T>(store_, p + ".bn2", c);
      b.act2 = nn::LeakyRelu<T>(slope);
    }
    head_ = nn::Conv2d<T>(store_, "head", cfg_.encoder_channels[0], cfg_.output_channels, 1, 1, rng, slope);
  }

  const NetworkConfig& config() const noexcept { return cfg_; }

  /// Spatial sizes must be multiples of this.
  int size_divisor() const noexcept { return 1 << cfg_.depth; }

  Tensor<T> forward(const Tensor<T>& z) {
    if (z.channels() != cfg_.input_channels)
      throw invalid_argument("SkipNet: expected " + std::to_string(cfg_.input_channels) + " input channels, got " +
                             z.shape_string());
    const int div = size_divisor();
    if (z.height() % div != 0 || z.width() % div != 0 || z.height() == 0 || z.width() == 0)
      throw invalid_argument("SkipNet: input " + z.shape_string() + " not divisible by " + std::to_string(div));
    const int D = cfg_.depth;
    std::vector<Tensor<T>> skip_out(D);
    Tensor<T> x = z;
    for (int d = 0; d < D; ++d) {
      skip_out[d] = skips_[d].forward(x, store_);
      x = encoders_[d].forward(x, store_);
    }
    central_h_ = x.height();
    central_w_ = x.width();
    for (int d = D - 1; d >= 0; --d) x = decoders_[d].forward(x, skip_out[d], store_);
    return sigmoid_.forward(head_.forward(x, store_));
  }

  /// Backpropagate dL/d(output); parameter gradients are accumulated.
  /// Returns dL/d(input) when requested, an empty tensor otherwise.
  Tensor<T> backward(const Tensor<T>& grad_output, bool need_input_grad = false) {
    const int D = cfg_.depth;
    Tensor<T> g = head_.backward(sigmoid_.backward(grad_output), store_, true);
    std::vector<Tensor<T>> g_skip(D);
    for (int d = 0; d < D; ++d) {
      auto [g_deeper, gs] = decoders_[d].backward(std::move(g), store_);
      g = std::move(g_deeper);
      g_skip[d] = std::move(gs);
    }
    for (int d = D - 1; d >= 0; --d) {
      const bool need = d > 0 || need_input_grad;
      Tensor<T> gx = encoders_[d].backward(std::move(g), store_, need);
      Tensor<T> gs = skips_[d].backward(g_skip[d], store_, need);
      if (need) {
        nn::accumulate(gx, gs);
        g = std::move(gx);
      }
    }
    return need_input_grad ? g : Tensor<T>{};
  }

  void zero_grad() { std::fill(store_.grads.begin(), store_.grads.end(), T(0)); }

  std::span<T> parameters() noexcept { return store_.values; }
  std::span<const T> parameters() const noexcept { return store_.values; }
  std::span<T> gradients() noexcept { return store_.grads; }
  std::size_t parameter_count() const noexcept { return store_.values.size(); }
  const std::vector<typename nn::ParamStore<T>::Entry>& parameter_entries() const { return store_.entries; }

  /// Spatial size of the central feature map from the last forward pass.
  std::pair<int, int> central_size() const noexcept { return {central_h_, central_w_}; }

  // Checkpoint container: "DFPCKPT1", entry count, then per entry the name,
  // rank, dimensions and float32 data. All integers are little-endian u32.
  void save(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot write checkpoint '" + path.string() + "'");
    os.write("DFPCKPT1", 8);
    auto put = [&](std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
    put(static_cast<std::uint32_t>(store_.entries.size()));
    for (const auto& e : store_.entries) {
      put(static_cast<std::uint32_t>(e.name.size()));
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      put(static_cast<std::uint32_t>(e.shape.size()));
      for (int d : e.shape) put(static_cast<std::uint32_t>(d));
      for (std::size_t i = 0; i < e.size; ++i) {
        const float v = static_cast<float>(store_.values[e.offset + i]);
        os.write(reinterpret_cast<const char*>(&v), 4);
      }
    }
    if (!os) throw io_error("short write on checkpoint '" + path.string() + "'");
  }

  void load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot read checkpoint '" + path.string() + "'");
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != "DFPCKPT1") throw io_error("'" + path.string() + "' is not a checkpoint");
    auto get = [&]() {
      std::uint32_t v = 0;
      is.read(reinterpret_cast<char*>(&v), 4);
      if (!is) throw io_error("truncated checkpoint '" + path.string() + "'");
      return v;
    };
    if (get() != store_.entries.size()) throw invalid_argument("checkpoint: entry count does not match network");
    for (const auto& e : store_.entries) {
      std::string name(get(), '\0');
      is.read(name.data(), static_cast<std::streamsize>(name.size()));
      std::vector<int> shape(get());
      for (int& d : shape) d = static_cast<int>(get());
      if (name != e.name || shape != e.shape)
        throw invalid_argument("checkpoint: tensor '" + name + "' does not match '" + e.name + "'");
      for (std::size_t i = 0; i < e.size; ++i) {
        float v = 0;
        is.read(reinterpret_cast<char*>(&v), 4);
        store_.values[e.offset + i] = static_cast<T>(v);
      }
      if (!is) throw io_error("truncated checkpoint '" + path.string() + "'");
    }
  }

 private:
  NetworkConfig cfg_;
  nn::ParamStore<T> store_;
  std::vector<nn::EncoderBlock<T>> encoders_;
  std::vector<nn::Conv2d<T>> skips_;
  std::vector<nn::DecoderBlock<T>> decoders_;
  nn::Conv2d<T> head_;
  nn::Sigmoid<T> sigmoid_;
  int central_h_ = 0, central_w_ = 0;
};

template <typename T>
SkipNet<T> build_network(const NetworkConfig& cfg, std::uint64_t seed) {
  return SkipNet<T>(cfg, seed);
}

/// Fixed resampling from the generator's resolution down to the input
/// resolution, with its adjoint for backpropagation. This operator alone
/// sets the super-resolution factor.
class Downsampler {
 public:
  Downsampler(int height, int width, int scale, ResampleMethod method) : scale_(scale), method_(method) {
    if (scale != 1 && scale != 2 && scale != 4) throw invalid_argument("downsampler: scale must be 1, 2 or 4");
    if (height % scale != 0 || width % scale != 0)
      throw invalid_argument("downsampler: " + std::to_string(height) + "x" + std::to_string(width) +
                             " not divisible by " + std::to_string(scale));
    rows_ = resample_weights(height, height / scale, method);
    cols_ = resample_weights(width, width / scale, method);
  }

  int scale() const noexcept { return scale_; }
  ResampleMethod method() const noexcept { return method_; }

  template <typename T>
  Tensor<T> apply(const Tensor<T>& hr) const {
    check(hr.height(), hr.width());
    Tensor<T> lr(hr.channels(), static_cast<int>(rows_.rows()), static_cast<int>(cols_.rows()));
    for (int c = 0; c < hr.channels(); ++c) {
      Eigen::Map<const nn::RowMat<T>> in(hr.plane(c), hr.height(), hr.width());
      Eigen::Map<nn::RowMat<T>> out(lr.plane(c), lr.height(), lr.width());
      out.noalias() = (rows_.cast<T>() * in * cols_.cast<T>().transpose());
    }
    return lr;
  }

  template <typename T>
  Tensor<T> adjoint(const Tensor<T>& g_lr) const {
    Tensor<T> g(g_lr.channels(), static_cast<int>(rows_.cols()), static_cast<int>(cols_.cols()));
    for (int c = 0; c < g_lr.channels(); ++c) {
      Eigen::Map<const nn::RowMat<T>> in(g_lr.plane(c), g_lr.height(), g_lr.width());
      Eigen::Map<nn::RowMat<T>> out(g.plane(c), g.height(), g.width());
      out.noalias() = rows_.cast<T>().transpose() * in * cols_.cast<T>();
    }
    return g;
  }

 private:
  void check(int h, int w) const {
    if (h != rows_.cols() || w != cols_.cols()) throw invalid_argument("downsampler: input size mismatch");
  }

  int scale_;
  ResampleMethod method_;
  Eigen::MatrixXd rows_, cols_;
};

/// Fixed (non-learned) resampling of an image by 1/scale.
inline Image downsample_for_loss(const Image& img, int scale, ResampleMethod method) {
  if (scale != 2 && scale != 4) throw invalid_argument("downsample_for_loss: scale must be 2 or 4");
  if (img.height() % scale != 0 || img.width() % scale != 0)
    throw invalid_argument("downsample_for_loss: image dimensions not divisible by scale");
  return to_image(Downsampler(img.height(), img.width(), scale, method).apply(to_tensor<double>(img)));
}

}  // namespace dfp
