#pragma once

// Learned refinement of a handcrafted decision map: a single-output
// generator network is fitted per instance so that its output agrees with
// the handcrafted map while selecting the sharp content of both inputs.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dfp/doublereblur.hpp"
#include "dfp/errors.hpp"
#include "dfp/image.hpp"
#include "dfp/log.hpp"
#include "dfp/optim.hpp"
#include "dfp/skipnet.hpp"
#include "dfp/tensor.hpp"

namespace dfp {

enum class InputMode { averaged_inputs, noise };

inline std::string to_string(InputMode m) { return m == InputMode::noise ? "noise" : "averaged_inputs"; }

inline InputMode parse_input_mode(const std::string& s) {
  if (s == "averaged_inputs" || s == "averaged") return InputMode::averaged_inputs;
  if (s == "noise") return InputMode::noise;
  throw invalid_argument("unknown input mode '" + s + "' (expected averaged_inputs or noise)");
}

struct EmbeddingConfig {
  int iterations = 500;
  double binarize_threshold = 0.5;
  double learning_rate = 0.01;
  std::uint64_t seed = 0;
  InputMode input_mode = InputMode::averaged_inputs;
  // Evaluate the loss on the thresholded map and pass its gradient
  // straight through to the continuous output.
  bool straight_through = false;
  NetworkConfig network = [] {
    NetworkConfig n;
    n.output_channels = 1;
    return n;
  }();

  void validate() const {
    if (iterations < 1) throw invalid_argument("embedding: iterations must be >= 1");
    if (!(binarize_threshold > 0.0 && binarize_threshold < 1.0))
      throw invalid_argument("embedding: binarize_threshold must lie in (0, 1)");
    if (!(learning_rate > 0.0)) throw invalid_argument("embedding: learning_rate must be positive");
    network.validate();
  }
};

/// (1/HW) sum [ |mh - m| + |mh f - f| + |(1 - mh) b - b| ], the image terms
/// averaged over channels. `m_hat` and `m` are 1 x H x W. Optionally
/// writes dLoss/dm_hat.
template <typename T>
double embedding_loss(const Tensor<T>& m_hat, const Tensor<T>& m, const Tensor<T>& fore, const Tensor<T>& back,
                      Tensor<T>* grad = nullptr) {
  if (m_hat.channels() != 1 || !m_hat.same_shape(m)) throw invalid_argument("embedding_loss: map shape mismatch");
  if (!fore.same_shape(back) || fore.height() != m.height() || fore.width() != m.width())
    throw invalid_argument("embedding_loss: image shape mismatch");
  const auto sgn = [](double v) { return static_cast<double>((v > 0.0) - (v < 0.0)); };
  const std::size_t n = m.plane_size();
  const int C = fore.channels();
  const double norm = 1.0 / static_cast<double>(n);
  if (grad) *grad = Tensor<T>(1, m.height(), m.width());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double mh = m_hat.data()[i];
    const double d = mh - static_cast<double>(m.data()[i]);
    double term = std::abs(d);
    double g = sgn(d);
    for (int c = 0; c < C; ++c) {
      const double f = fore.plane(c)[i];
      const double b = back.plane(c)[i];
      const double rf = mh * f - f;
      const double rb = (1.0 - mh) * b - b;
      term += (std::abs(rf) + std::abs(rb)) / C;
      g += (sgn(rf) * f - sgn(rb) * b) / C;
    }
    total += term;
    if (grad) grad->data()[i] = static_cast<T>(norm * g);
  }
  return total * norm;
}

inline double embedding_loss(const Plane& m_hat, const Plane& m, const Image& i_fore, const Image& i_back) {
  return embedding_loss(to_tensor<double>(m_hat), to_tensor<double>(m), to_tensor<double>(i_fore),
                        to_tensor<double>(i_back));
}

struct EmbeddingResult {
  DecisionMap map;                 // binary, input resolution
  std::vector<double> loss_trace;  // one value per iteration, before the step
};

inline int round_up(int v, int multiple) { return (v + multiple - 1) / multiple * multiple; }

inline EmbeddingResult optimize_decision_map(const Image& i_fore, const Image& i_back, const DecisionMap& m_handcrafted,
                                             const EmbeddingConfig& cfg = {}) {
  cfg.validate();
  if (!i_fore.same_shape(i_back) || m_handcrafted.height() != i_fore.height() ||
      m_handcrafted.width() != i_fore.width())
    throw invalid_argument("optimize_decision_map: inputs and map must share dimensions");
  for (double v : m_handcrafted.values())
    if (v != 0.0 && v != 1.0) throw invalid_argument("optimize_decision_map: handcrafted map must be binary");

  NetworkConfig net_cfg = cfg.network;
  net_cfg.input_channels = i_fore.channels();
  net_cfg.output_channels = 1;
  SkipNet<float> net(net_cfg, cfg.seed);

  const int h = i_fore.height();
  const int w = i_fore.width();
  const int ph = round_up(h, net.size_divisor());
  const int pw = round_up(w, net.size_divisor());

  Tensor<float> z;
  if (cfg.input_mode == InputMode::averaged_inputs) {
    Tensor<float> avg = to_tensor<float>(i_fore);
    const Tensor<float> b = to_tensor<float>(i_back);
    for (std::size_t i = 0; i < avg.size(); ++i) avg.data()[i] = 0.5f * (avg.data()[i] + b.data()[i]);
    z = pad_reflect(avg, ph, pw);
  } else {
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<float> u(0.0f, 0.1f);
    z = Tensor<float>(net_cfg.input_channels, ph, pw);
    for (float& v : z.values()) v = u(rng);
  }

  const Tensor<float> m = to_tensor<float>(m_handcrafted);
  const Tensor<float> fore = to_tensor<float>(i_fore);
  const Tensor<float> back = to_tensor<float>(i_back);
  const float thr = static_cast<float>(cfg.binarize_threshold);

  Adam<float> adam(net.parameter_count(), {.learning_rate = cfg.learning_rate});
  EmbeddingResult result;
  result.loss_trace.reserve(cfg.iterations);
  Tensor<float> g_map;
  for (int it = 1; it <= cfg.iterations; ++it) {
    Tensor<float> m_hat = crop(net.forward(z), h, w);
    if (cfg.straight_through)
      for (float& v : m_hat.values()) v = v > thr ? 1.0f : 0.0f;
    const double loss = embedding_loss(m_hat, m, fore, back, &g_map);
    if (!std::isfinite(loss)) throw numeric_error("decision embedding diverged", it);
    result.loss_trace.push_back(loss);
    if (it == 1 || it % 100 == 0 || it == cfg.iterations)
      log::emit(log::Level::debug, "embedding_step", "iteration", it, "loss", loss);

    Tensor<float> g(1, ph, pw);
    for (int y = 0; y < h; ++y)
      std::copy_n(g_map.plane(0) + static_cast<std::size_t>(y) * w, w, g.plane(0) + static_cast<std::size_t>(y) * pw);
    net.zero_grad();
    net.backward(g);
    adam.step(net.parameters(), net.gradients());
  }

  const Tensor<float> final_map = crop(net.forward(z), h, w);
  result.map = Plane(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) result.map(y, x) = final_map(0, y, x) > thr ? 1.0 : 0.0;
  return result;
}

}  // namespace dfp
