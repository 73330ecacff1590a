#pragma once

// Per-instance optimization of the generator network: the high-resolution
// prediction is downsampled to the input resolution, compared against the
// inputs under the decision map, and regularized at full resolution.

#include <chrono>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dfp/decision_embedding.hpp"
#include "dfp/doublereblur.hpp"
#include "dfp/errors.hpp"
#include "dfp/image.hpp"
#include "dfp/log.hpp"
#include "dfp/losses.hpp"
#include "dfp/optim.hpp"
#include "dfp/skipnet.hpp"
#include "dfp/tensor.hpp"

namespace dfp {

struct FusionConfig {
  int scale = 2;
  int iterations = 3000;
  double learning_rate = 0.01;
  InputMode input_mode = InputMode::averaged_inputs;
  double noise_perturb_sigma = 0.03;
  LossWeights weights;
  GradLimitMode grad_limit_mode = GradLimitMode::absolute;
  NetworkConfig network;
  ReblurParams reblur;
  KernelEstConfig kernel_est;
  std::optional<EmbeddingConfig> embedding;
  ResampleMethod downsample_method = ResampleMethod::lanczos;
  std::uint64_t seed = 0;

  void validate() const {
    if (scale != 1 && scale != 2 && scale != 4) throw invalid_argument("scale must be 1, 2 or 4");
    if (iterations < 1) throw invalid_argument("iterations must be >= 1");
    if (!(learning_rate > 0.0)) throw invalid_argument("learning_rate must be positive");
    if (!(noise_perturb_sigma >= 0.0)) throw invalid_argument("noise_perturb_sigma must be >= 0");
    weights.validate();
    network.validate();
    reblur.validate();
    kernel_est.validate();
    if (embedding) embedding->validate();
  }
};

struct LossRecord {
  int iteration = 0;
  double content = 0.0;
  double joint_grad = 0.0;
  double grad_limit = 0.0;
  double total = 0.0;
};

struct FusionResult {
  Image fused;                       // scale x input resolution
  DecisionMap decision_map;          // input resolution
  std::vector<LossRecord> loss_trace;
  double wall_time = 0.0;            // seconds
  bool map_degenerate = false;
};

struct NetInput {
  Tensor<float> z;  // padded to a multiple of the network's size divisor
  int height = 0;   // unpadded target size
  int width = 0;
};

/// Network input at scale x resolution, reflect-padded on the bottom/right.
inline NetInput prepare_input(const Image& i_fore, const Image& i_back, const FusionConfig& cfg) {
  if (!i_fore.same_shape(i_back)) throw shape_error("prepare_input: input shapes differ");
  const int div = 1 << cfg.network.depth;
  NetInput in;
  in.height = i_fore.height() * cfg.scale;
  in.width = i_fore.width() * cfg.scale;
  const int ph = round_up(in.height, div);
  const int pw = round_up(in.width, div);
  if (cfg.input_mode == InputMode::averaged_inputs) {
    std::vector<Plane> avg;
    for (int c = 0; c < i_fore.channels(); ++c) {
      Plane p(i_fore.height(), i_fore.width());
      const auto f = i_fore.channel(c).values();
      const auto b = i_back.channel(c).values();
      auto o = p.values();
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = 0.5 * (f[i] + b[i]);
      if (cfg.scale != 1) p = resample(p, Scale{cfg.scale, 1}, ResampleMethod::bicubic);
      avg.push_back(std::move(p));
    }
    in.z = pad_reflect(to_tensor<float>(Image::from_planes(std::move(avg))), ph, pw);
  } else {
    std::mt19937_64 rng(cfg.seed ^ 0x5851f42d4c957f2dULL);
    std::uniform_real_distribution<float> u(0.0f, 0.1f);
    in.z = Tensor<float>(i_fore.channels(), ph, pw);
    for (float& v : in.z.values()) v = u(rng);
  }
  return in;
}

inline FusionResult fuse_pair(const Image& i_fore, const Image& i_back, const FusionConfig& cfg) {
  cfg.validate();
  if (!i_fore.same_shape(i_back))
    throw shape_error("fuse_pair: input shapes differ (" + std::to_string(i_fore.height()) + "x" +
                           std::to_string(i_fore.width()) + "x" + std::to_string(i_fore.channels()) + " vs " +
                           std::to_string(i_back.height()) + "x" + std::to_string(i_back.width()) + "x" +
                           std::to_string(i_back.channels()) + ")");
  const auto t0 = std::chrono::steady_clock::now();

  FusionResult result;
  const FocusMeasurement focus = measure_focus(i_fore, i_back, cfg.reblur, cfg.kernel_est);
  result.decision_map = focus.foreground;
  result.map_degenerate = focus.degenerate;
  if (cfg.embedding) {
    result.decision_map = optimize_decision_map(i_fore, i_back, result.decision_map, *cfg.embedding).map;
  }

  NetworkConfig net_cfg = cfg.network;
  net_cfg.input_channels = i_fore.channels();
  net_cfg.output_channels = i_fore.channels();
  SkipNet<float> net(net_cfg, cfg.seed);

  const NetInput input = prepare_input(i_fore, i_back, cfg);
  const int hh = input.height;
  const int hw = input.width;
  const int ph = input.z.height();
  const int pw = input.z.width();
  const Downsampler down(hh, hw, cfg.scale, cfg.downsample_method);

  const Tensor<float> fore = to_tensor<float>(i_fore);
  const Tensor<float> back = to_tensor<float>(i_back);
  const Tensor<float> m = to_tensor<float>(result.decision_map);

  std::mt19937_64 jitter_rng(cfg.seed ^ 0xda942042e4dd58b5ULL);
  std::normal_distribution<float> jitter(0.0f, static_cast<float>(cfg.noise_perturb_sigma));
  Adam<float> adam(net.parameter_count(), {.learning_rate = cfg.learning_rate});
  const LossWeights& w = cfg.weights;

  log::emit(log::Level::info, "fusion_start", "input", std::to_string(i_fore.height()) + "x" +
            std::to_string(i_fore.width()), "scale", cfg.scale, "iterations", cfg.iterations, "parameters",
            net.parameter_count(), "reblur", cfg.reblur.to_string(), "map_degenerate", focus.degenerate);

  result.loss_trace.reserve(cfg.iterations);
  Tensor<float> z = input.z;
  Tensor<float> g_con, g_joint, g_lim;
  for (int it = 1; it <= cfg.iterations; ++it) {
    if (cfg.noise_perturb_sigma > 0.0) {
      const auto src = input.z.values();
      auto dst = z.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] + jitter(jitter_rng);
    }
    const Tensor<float> y_hr = crop(net.forward(z), hh, hw);
    const Tensor<float> y_lr = down.apply(y_hr);

    LossParts parts;
    parts.content = content_loss(y_lr, fore, back, m, w, &g_con);
    parts.joint_grad = w.beta > 0.0 ? joint_gradient_loss(y_lr, fore, back, &g_joint) : 0.0;
    parts.grad_limit = gradient_limit_loss(y_hr, &g_lim, cfg.grad_limit_mode);
    double total = 0.0;
    try {
      total = total_loss(parts, w);
    } catch (const numeric_error&) {
      throw numeric_error("fusion diverged: non-finite loss at iteration " + std::to_string(it), it);
    }
    result.loss_trace.push_back({it, parts.content, parts.joint_grad, parts.grad_limit, total});
    if (it == 1 || it % 100 == 0 || it == cfg.iterations)
      log::emit(log::Level::debug, "fusion_step", "iteration", it, "content", parts.content, "joint_grad",
                parts.joint_grad, "grad_limit", parts.grad_limit, "total", total);

    Tensor<float> g_lr(g_con.channels(), g_con.height(), g_con.width());
    for (std::size_t i = 0; i < g_lr.size(); ++i) {
      float v = static_cast<float>(w.alpha) * g_con.data()[i];
      if (w.beta > 0.0) v += static_cast<float>(w.beta) * g_joint.data()[i];
      g_lr.data()[i] = v;
    }
    const Tensor<float> g_hr = down.adjoint(g_lr);
    Tensor<float> g(g_hr.channels(), ph, pw);
    const float gamma = static_cast<float>(w.gamma);
    for (int c = 0; c < g.channels(); ++c)
      for (int y = 0; y < hh; ++y)
        for (int x = 0; x < hw; ++x) g(c, y, x) = g_hr(c, y, x) + gamma * g_lim(c, y, x);

    net.zero_grad();
    net.backward(g);
    adam.step(net.parameters(), net.gradients());
  }

  const Tensor<float> out = crop(net.forward(input.z), hh, hw);
  for (float v : out.values())
    if (!std::isfinite(v)) throw numeric_error("fusion diverged: non-finite output", cfg.iterations);
  result.fused = to_image(out);
  result.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  log::emit(log::Level::info, "fusion_done", "seconds", result.wall_time, "final_total",
            result.loss_trace.back().total);
  return result;
}

/// Adjacent-first cascade over a focal stack: the running result is fused
/// with the next plane at scale 1, and the last fusion runs at the
/// configured scale. Stage k (1-based) uses seed + k - 1.
inline FusionResult fuse_stack(const std::vector<Image>& stack, const FusionConfig& cfg) {
  if (stack.size() < 2) throw invalid_argument("fuse_stack: need at least two images");
  for (const Image& img : stack)
    if (!img.same_shape(stack.front())) throw shape_error("fuse_stack: stack images differ in shape");
  cfg.validate();
  Image running = stack.front();
  double seconds = 0.0;
  for (std::size_t k = 1; k < stack.size(); ++k) {
    FusionConfig stage = cfg;
    stage.seed = cfg.seed + (k - 1);
    const bool last = k + 1 == stack.size();
    if (!last) stage.scale = 1;
    log::emit(log::Level::info, "stack_stage", "stage", k, "of", stack.size() - 1, "scale", stage.scale);
    FusionResult r = fuse_pair(running, stack[k], stage);
    seconds += r.wall_time;
    if (last) {
      r.wall_time = seconds;
      return r;
    }
    running = std::move(r.fused);
  }
  throw std::logic_error("fuse_stack: unreachable");
}

}  // namespace dfp
