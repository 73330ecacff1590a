#pragma once

// No-reference quality metrics on the 0-255 luma plane and their
// deviation from a ground-truth reference.
//
//   MG   mean over interior pixels of sqrt((dx^2 + dy^2) / 2), forward differences
//   EI   mean over pixels of the 3x3 Sobel gradient magnitude (reflect borders)
//   IE   Shannon entropy (bits) of the 256-bin histogram of the 8-bit luma
//   MGA  mean of the 8-bit luma
//   X_r  |X(gt) - X(test)|

#include <array>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "dfp/errors.hpp"
#include "dfp/image.hpp"
#include "dfp/image_io.hpp"

namespace dfp::metrics {

namespace detail {

inline Plane luma255(const Image& img) {
  Plane l = luma_plane(img);
  for (double& v : l.values()) v *= 255.0;
  return l;
}

inline std::vector<int> luma8(const Image& img) {
  const Plane l = luma_plane(img);
  std::vector<int> out;
  out.reserve(l.size());
  for (double v : l.values()) out.push_back(quantize8(v));
  return out;
}

}  // namespace detail

inline double mean_gradient(const Image& img) {
  const Plane l = detail::luma255(img);
  const int h = l.height();
  const int w = l.width();
  if (h < 2 || w < 2) return 0.0;
  double acc = 0.0;
  for (int y = 0; y + 1 < h; ++y)
    for (int x = 0; x + 1 < w; ++x) {
      const double dx = l(y, x + 1) - l(y, x);
      const double dy = l(y + 1, x) - l(y, x);
      acc += std::sqrt((dx * dx + dy * dy) / 2.0);
    }
  return acc / (static_cast<double>(h - 1) * (w - 1));
}

inline double edge_intensity(const Image& img) {
  const Plane l = detail::luma255(img);
  double acc = 0.0;
  for (int y = 0; y < l.height(); ++y)
    for (int x = 0; x < l.width(); ++x) {
      const auto p = [&](int dy, int dx) { return l.at_reflect(y + dy, x + dx); };
      const double sx = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
      const double sy = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
      acc += std::sqrt(sx * sx + sy * sy);
    }
  return acc / static_cast<double>(l.size());
}

inline double info_entropy(const Image& img) {
  const auto levels = detail::luma8(img);
  std::array<std::size_t, 256> hist{};
  for (int v : levels) ++hist[v];
  double e = 0.0;
  const double n = static_cast<double>(levels.size());
  for (std::size_t c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    e -= p * std::log2(p);
  }
  return e;
}

inline double mean_gray(const Image& img) {
  const auto levels = detail::luma8(img);
  double s = 0.0;
  for (int v : levels) s += v;
  return levels.empty() ? 0.0 : s / static_cast<double>(levels.size());
}

/// Peak signal-to-noise ratio in dB for [0,1] images (infinite when equal).
inline double psnr(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw invalid_argument("psnr: shape mismatch");
  double se = 0.0;
  std::size_t n = 0;
  for (int c = 0; c < a.channels(); ++c) {
    const auto pa = a.channel(c).values();
    const auto pb = b.channel(c).values();
    for (std::size_t i = 0; i < pa.size(); ++i, ++n) se += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(static_cast<double>(n) / se);
}

inline double relative_metric(double gt_value, double test_value) { return std::abs(gt_value - test_value); }

struct MetricReport {
  std::string id;
  double mg = 0, ei = 0, ie = 0, mga = 0;
  double mg_r = 0, ei_r = 0, ie_r = 0, mga_r = 0;
  // Reserved: edge-coherence scores are not computed.
  std::optional<double> eco, eco_r;
};

inline MetricReport evaluate_report(const Image& gt, const Image& test, std::string id = {}) {
  if (gt.height() != test.height() || gt.width() != test.width())
    throw shape_error("evaluate_report: dimension mismatch (" + std::to_string(gt.height()) + "x" +
                           std::to_string(gt.width()) + " vs " + std::to_string(test.height()) + "x" +
                           std::to_string(test.width()) + ")");
  MetricReport r;
  r.id = std::move(id);
  r.mg = mean_gradient(test);
  r.ei = edge_intensity(test);
  r.ie = info_entropy(test);
  r.mga = mean_gray(test);
  r.mg_r = relative_metric(mean_gradient(gt), r.mg);
  r.ei_r = relative_metric(edge_intensity(gt), r.ei);
  r.ie_r = relative_metric(info_entropy(gt), r.ie);
  r.mga_r = relative_metric(mean_gray(gt), r.mga);
  return r;
}

/// Column-wise mean of the rows, labelled "mean".
inline MetricReport mean_report(const std::vector<MetricReport>& rows) {
  MetricReport m;
  m.id = "mean";
  if (rows.empty()) return m;
  for (const auto& r : rows) {
    m.mg += r.mg, m.ei += r.ei, m.ie += r.ie, m.mga += r.mga;
    m.mg_r += r.mg_r, m.ei_r += r.ei_r, m.ie_r += r.ie_r, m.mga_r += r.mga_r;
  }
  const double n = static_cast<double>(rows.size());
  for (double* v : {&m.mg, &m.ei, &m.ie, &m.mga, &m.mg_r, &m.ei_r, &m.ie_r, &m.mga_r}) *v /= n;
  return m;
}

/// CSV with a commented header documenting the formulas, one row per
/// pair and a trailing mean row.
inline void write_csv(std::ostream& os, const std::vector<MetricReport>& rows) {
  os << "# mg: mean sqrt((dx^2+dy^2)/2) over interior pixels, forward differences, luma 0-255\n"
     << "# ei: mean 3x3 Sobel magnitude, luma 0-255, reflected borders\n"
     << "# ie: entropy in bits of the 256-bin 8-bit luma histogram\n"
     << "# mga: mean 8-bit luma\n"
     << "# *_r: absolute difference from the ground-truth value\n"
     << "id,mg,ei,ie,mga,mg_r,ei_r,ie_r,mga_r\n";
  auto line = [&](const MetricReport& r) {
    std::ostringstream s;
    s << std::setprecision(10) << r.id << ',' << r.mg << ',' << r.ei << ',' << r.ie << ',' << r.mga << ',' << r.mg_r
      << ',' << r.ei_r << ',' << r.ie_r << ',' << r.mga_r << '\n';
    os << s.str();
  };
  for (const auto& r : rows) line(r);
  line(mean_report(rows));
}

}  // namespace dfp::metrics
