#pragma once

// 8-bit PNG/JPEG load and save. Loading scales to [0,1]; saving rounds half
// up to 8 bits. Colour images are held as RGB.

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>

#include "dfp/errors.hpp"
#include "dfp/image.hpp"

namespace dfp {

inline std::uint8_t quantize8(double v) {
  const double c = Image::clamp01(v);
  return static_cast<std::uint8_t>(std::floor(c * 255.0 + 0.5));
}

inline Image load_image(const std::filesystem::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw io_error("cannot read image '" + path.string() + "'");
  if (m.depth() != CV_8U) throw io_error("'" + path.string() + "': only 8-bit images are supported");
  const int ch = m.channels();
  if (ch != 1 && ch != 3 && ch != 4) throw io_error("'" + path.string() + "': unsupported channel count");
  const int out_ch = ch == 1 ? 1 : 3;
  std::vector<Plane> planes(out_ch, Plane(m.rows, m.cols));
  for (int y = 0; y < m.rows; ++y) {
    const std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < m.cols; ++x) {
      if (out_ch == 1) {
        planes[0](y, x) = row[x] / 255.0;
      } else {
        // OpenCV stores BGR(A).
        planes[0](y, x) = row[x * ch + 2] / 255.0;
        planes[1](y, x) = row[x * ch + 1] / 255.0;
        planes[2](y, x) = row[x * ch + 0] / 255.0;
      }
    }
  }
  return Image::from_planes(std::move(planes));
}

inline cv::Mat to_mat8(const Image& img) {
  const int ch = img.channels();
  cv::Mat m(img.height(), img.width(), ch == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    std::uint8_t* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width(); ++x) {
      if (ch == 1) {
        row[x] = quantize8(img(0, y, x));
      } else {
        row[x * 3 + 0] = quantize8(img(2, y, x));
        row[x * 3 + 1] = quantize8(img(1, y, x));
        row[x * 3 + 2] = quantize8(img(0, y, x));
      }
    }
  }
  return m;
}

inline void save_image(const std::filesystem::path& path, const Image& img) {
  const cv::Mat m = to_mat8(img);
  std::vector<int> params;
  // Fixed compression level keeps the encoded bytes reproducible.
  if (path.extension() == ".png") params = {cv::IMWRITE_PNG_COMPRESSION, 6};
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m, params);
  } catch (const cv::Exception& e) {
    throw io_error("cannot write '" + path.string() + "': " + e.what());
  }
  if (!ok) throw io_error("cannot write '" + path.string() + "'");
}

// Encode to an in-memory PNG; used for byte-level reproducibility checks.
inline std::vector<std::uint8_t> encode_png(const Image& img) {
  std::vector<std::uint8_t> buf;
  cv::imencode(".png", to_mat8(img), buf, {cv::IMWRITE_PNG_COMPRESSION, 6});
  return buf;
}

}  // namespace dfp
