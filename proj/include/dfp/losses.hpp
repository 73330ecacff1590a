#pragma once

// Loss terms driving the per-instance optimization:
//   content   (1/HW) sum [ l1 m |p - f| + l2 (1 - m) |p - b| ]
//   joint     (1/HW) sum | lap(p) - max(lap(f), lap(b)) |   (signed max)
//   gradient  (1/HW) sum ( |dx p| + |dy p| )                (forward diffs)
// and their weighted sum. Every term averages over channels, so the channel
// count does not rescale it. Each function optionally writes dLoss/dPred.
//
// Subgradient convention: d|u|/du = 0 at u = 0.

#include <algorithm>
#include <cmath>
#include <string>

#include "dfp/errors.hpp"
#include "dfp/image.hpp"
#include "dfp/tensor.hpp"

namespace dfp {

struct LossWeights {
  double alpha = 1.0;    // content
  double beta = 0.5;     // joint gradient
  double gamma = 0.1;    // gradient limit
  double lambda1 = 1.0;  // foreground content
  double lambda2 = 1.0;  // background content

  void validate() const {
    for (double v : {alpha, beta, gamma, lambda1, lambda2})
      if (!(v >= 0.0) || !std::isfinite(v)) throw invalid_argument("loss weights must be finite and >= 0");
  }

  bool operator==(const LossWeights&) const = default;
};

/// How the gradient-limit term combines forward differences.
/// `absolute` penalizes |dx| + |dy|; `signed_sum` is the literal dx + dy,
/// which telescopes to boundary terms.
enum class GradLimitMode { absolute, signed_sum };

struct LossParts {
  double content = 0.0;
  double joint_grad = 0.0;
  double grad_limit = 0.0;
};

namespace detail {

inline double sgn(double v) { return (v > 0.0) - (v < 0.0); }

template <typename T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) throw invalid_argument(std::string(what) + ": shape mismatch " + a.shape_string() + " vs " +
                                               b.shape_string());
}

// 4-neighbour Laplacian of one channel with reflect-101 borders.
template <typename T>
void laplacian_channel(const T* in, double* out, int h, int w) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto at = [&](int yy, int xx) {
        return static_cast<double>(in[static_cast<std::size_t>(reflect_index(yy, h)) * w + reflect_index(xx, w)]);
      };
      out[static_cast<std::size_t>(y) * w + x] =
          at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) - 4.0 * at(y, x);
    }
}

// Transpose of laplacian_channel: scatter g through the same stencil.
template <typename T>
void laplacian_adjoint_accumulate(const double* g, T* out, int h, int w) {
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = g[static_cast<std::size_t>(y) * w + x];
      if (v == 0.0) continue;
      const auto add = [&](int yy, int xx, double c) {
        out[static_cast<std::size_t>(reflect_index(yy, h)) * w + reflect_index(xx, w)] += static_cast<T>(c * v);
      };
      add(y - 1, x, 1.0);
      add(y + 1, x, 1.0);
      add(y, x - 1, 1.0);
      add(y, x + 1, 1.0);
      add(y, x, -4.0);
    }
}

}  // namespace detail

/// Content loss against the decision-map composite. `m` is 1 x H x W.
template <typename T>
double content_loss(const Tensor<T>& pred, const Tensor<T>& fore, const Tensor<T>& back, const Tensor<T>& m,
                    const LossWeights& w, Tensor<T>* grad = nullptr) {
  detail::check_same(pred, fore, "content_loss");
  detail::check_same(pred, back, "content_loss");
  if (m.channels() != 1 || m.height() != pred.height() || m.width() != pred.width())
    throw invalid_argument("content_loss: decision map shape mismatch");
  const std::size_t n = pred.plane_size();
  const double norm = 1.0 / (static_cast<double>(n) * pred.channels());
  if (grad) *grad = Tensor<T>(pred.channels(), pred.height(), pred.width());
  double total = 0.0;
  for (int c = 0; c < pred.channels(); ++c) {
    const T* p = pred.plane(c);
    const T* f = fore.plane(c);
    const T* b = back.plane(c);
    const T* mm = m.plane(0);
    for (std::size_t i = 0; i < n; ++i) {
      const double mf = w.lambda1 * mm[i];
      const double mb = w.lambda2 * (1.0 - mm[i]);
      const double df = static_cast<double>(p[i]) - f[i];
      const double db = static_cast<double>(p[i]) - b[i];
      total += mf * std::abs(df) + mb * std::abs(db);
      if (grad) grad->plane(c)[i] = static_cast<T>(norm * (mf * detail::sgn(df) + mb * detail::sgn(db)));
    }
  }
  return total * norm;
}

/// L1 distance between the Laplacian of the prediction and the pixelwise
/// (signed) maximum of the inputs' Laplacians.
template <typename T>
double joint_gradient_loss(const Tensor<T>& pred, const Tensor<T>& fore, const Tensor<T>& back,
                           Tensor<T>* grad = nullptr) {
  detail::check_same(pred, fore, "joint_gradient_loss");
  detail::check_same(pred, back, "joint_gradient_loss");
  const int h = pred.height();
  const int w = pred.width();
  const std::size_t n = pred.plane_size();
  const double norm = 1.0 / (static_cast<double>(n) * pred.channels());
  std::vector<double> lp(n), lf(n), lb(n), g(n);
  if (grad) *grad = Tensor<T>(pred.channels(), h, w);
  double total = 0.0;
  for (int c = 0; c < pred.channels(); ++c) {
    detail::laplacian_channel(pred.plane(c), lp.data(), h, w);
    detail::laplacian_channel(fore.plane(c), lf.data(), h, w);
    detail::laplacian_channel(back.plane(c), lb.data(), h, w);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = lp[i] - std::max(lf[i], lb[i]);
      total += std::abs(r);
      g[i] = norm * detail::sgn(r);
    }
    if (grad) detail::laplacian_adjoint_accumulate(g.data(), grad->plane(c), h, w);
  }
  return total * norm;
}

/// Forward differences; the last column (rows) contributes a zero x (y)
/// difference, so a ramp of slope c gives |c| (W - 1) / W.
template <typename T>
double gradient_limit_loss(const Tensor<T>& pred, Tensor<T>* grad = nullptr,
                           GradLimitMode mode = GradLimitMode::absolute) {
  const int h = pred.height();
  const int w = pred.width();
  const double norm = 1.0 / (static_cast<double>(pred.plane_size()) * pred.channels());
  if (grad) *grad = Tensor<T>(pred.channels(), h, w);
  double total = 0.0;
  const bool abs_mode = mode == GradLimitMode::absolute;
  for (int c = 0; c < pred.channels(); ++c) {
    const T* p = pred.plane(c);
    T* g = grad ? grad->plane(c) : nullptr;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        if (x + 1 < w) {
          const double d = static_cast<double>(p[i + 1]) - p[i];
          total += abs_mode ? std::abs(d) : d;
          if (g) {
            const double s = norm * (abs_mode ? detail::sgn(d) : 1.0);
            g[i + 1] += static_cast<T>(s);
            g[i] -= static_cast<T>(s);
          }
        }
        if (y + 1 < h) {
          const double d = static_cast<double>(p[i + w]) - p[i];
          total += abs_mode ? std::abs(d) : d;
          if (g) {
            const double s = norm * (abs_mode ? detail::sgn(d) : 1.0);
            g[i + w] += static_cast<T>(s);
            g[i] -= static_cast<T>(s);
          }
        }
      }
  }
  return total * norm;
}

/// alpha * content + beta * joint + gamma * gradient. Throws numeric_error
/// (iteration -1) on a non-finite part.
inline double total_loss(const LossParts& parts, const LossWeights& w) {
  if (!std::isfinite(parts.content) || !std::isfinite(parts.joint_grad) || !std::isfinite(parts.grad_limit))
    throw numeric_error("total_loss: non-finite loss component", -1);
  return w.alpha * parts.content + w.beta * parts.joint_grad + w.gamma * parts.grad_limit;
}

// Image-level conveniences.

inline double content_loss(const Image& pred, const Image& fore, const Image& back, const Plane& m,
                           const LossWeights& w = {}) {
  return content_loss(to_tensor<double>(pred), to_tensor<double>(fore), to_tensor<double>(back),
                      to_tensor<double>(m), w);
}

inline double joint_gradient_loss(const Image& pred, const Image& fore, const Image& back) {
  return joint_gradient_loss(to_tensor<double>(pred), to_tensor<double>(fore), to_tensor<double>(back));
}

inline double gradient_limit_loss(const Image& pred, GradLimitMode mode = GradLimitMode::absolute) {
  return gradient_limit_loss<double>(to_tensor<double>(pred), nullptr, mode);
}

}  // namespace dfp
