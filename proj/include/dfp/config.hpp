#pragma once

// Flat key-value configuration for FusionConfig.
//
//   # comment
//   iterations = 3000
//   [weights]            # optional section: prefixes the following keys
//   gamma = 0.1
//
// Keys mirror the FusionConfig fields with dotted paths (weights.gamma,
// network.encoder_channels, ...). Lists are comma separated; booleans
// accept on/off, true/false, 1/0.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dfp/errors.hpp"
#include "dfp/trainer.hpp"

namespace dfp {

class config_error : public invalid_argument {
 public:
  using invalid_argument::invalid_argument;
};

namespace config_detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string join(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* kind) {
  T out{};
  const char* first = value.data();
  const char* last = value.data() + value.size();
  const auto r = std::from_chars(first, last, out);
  if (r.ec != std::errc() || r.ptr != last)
    throw config_error("config key '" + key + "': expected " + kind + ", got '" + value + "'");
  return out;
}

inline int parse_int(const std::string& k, const std::string& v) { return parse_number<int>(k, v, "an integer"); }
inline double parse_real(const std::string& k, const std::string& v) { return parse_number<double>(k, v, "a number"); }
inline std::uint64_t parse_u64(const std::string& k, const std::string& v) {
  return parse_number<std::uint64_t>(k, v, "a non-negative integer");
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") return true;
  if (v == "off" || v == "false" || v == "0" || v == "no") return false;
  throw config_error("config key '" + key + "': expected on/off, got '" + v + "'");
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
  if (out.empty()) throw config_error("config key '" + key + "': expected a comma-separated integer list");
  return out;
}

template <typename Fn>
auto wrap(const std::string& key, Fn&& fn) {
  try {
    return fn();
  } catch (const config_error&) {
    throw;
  } catch (const std::exception& e) {
    throw config_error("config key '" + key + "': " + e.what());
  }
}

struct Field {
  std::function<void(FusionConfig&, EmbeddingConfig&, bool&, const std::string&)> set;
  std::function<std::string(const FusionConfig&, const EmbeddingConfig&, bool)> get;
};

// Ordered schema; the order is the manifest order.
inline const std::vector<std::pair<std::string, Field>>& schema() {
  using E = EmbeddingConfig;
  using F = FusionConfig;
  static const std::vector<std::pair<std::string, Field>> fields = [] {
    std::vector<std::pair<std::string, Field>> s;
    auto add = [&](std::string key, auto set, auto get) {
      s.push_back({std::move(key), Field{set, get}});
    };
    const auto k = [](const char* name) { return std::string(name); };
    add(k("scale"), [](F& c, E&, bool&, const std::string& v) { c.scale = parse_int("scale", v); },
        [](const F& c, const E&, bool) { return std::to_string(c.scale); });
    add(k("iterations"), [](F& c, E&, bool&, const std::string& v) { c.iterations = parse_int("iterations", v); },
        [](const F& c, const E&, bool) { return std::to_string(c.iterations); });
    add(k("learning_rate"),
        [](F& c, E&, bool&, const std::string& v) { c.learning_rate = parse_real("learning_rate", v); },
        [](const F& c, const E&, bool) { return format_double(c.learning_rate); });
    add(k("input_mode"),
        [](F& c, E&, bool&, const std::string& v) { c.input_mode = wrap("input_mode", [&] { return parse_input_mode(v); }); },
        [](const F& c, const E&, bool) { return to_string(c.input_mode); });
    add(k("noise_perturb_sigma"),
        [](F& c, E&, bool&, const std::string& v) { c.noise_perturb_sigma = parse_real("noise_perturb_sigma", v); },
        [](const F& c, const E&, bool) { return format_double(c.noise_perturb_sigma); });
    add(k("seed"), [](F& c, E&, bool&, const std::string& v) { c.seed = parse_u64("seed", v); },
        [](const F& c, const E&, bool) { return std::to_string(c.seed); });
    add(k("downsample_method"),
        [](F& c, E&, bool&, const std::string& v) {
          c.downsample_method = wrap("downsample_method", [&] { return parse_resample_method(v); });
        },
        [](const F& c, const E&, bool) { return to_string(c.downsample_method); });
    add(k("grad_limit_mode"),
        [](F& c, E&, bool&, const std::string& v) {
          if (v == "absolute") c.grad_limit_mode = GradLimitMode::absolute;
          else if (v == "signed_sum") c.grad_limit_mode = GradLimitMode::signed_sum;
          else throw config_error("config key 'grad_limit_mode': expected absolute or signed_sum, got '" + v + "'");
        },
        [](const F& c, const E&, bool) {
          return std::string(c.grad_limit_mode == GradLimitMode::absolute ? "absolute" : "signed_sum");
        });

    const auto weight = [&](const char* name, double LossWeights::*m) {
      const std::string key = std::string("weights.") + name;
      add(key, [key, m](F& c, E&, bool&, const std::string& v) { c.weights.*m = parse_real(key, v); },
          [m](const F& c, const E&, bool) { return format_double(c.weights.*m); });
    };
    weight("alpha", &LossWeights::alpha);
    weight("beta", &LossWeights::beta);
    weight("gamma", &LossWeights::gamma);
    weight("lambda1", &LossWeights::lambda1);
    weight("lambda2", &LossWeights::lambda2);

    add(k("network.depth"),
        [](F& c, E& e, bool&, const std::string& v) { c.network.depth = e.network.depth = parse_int("network.depth", v); },
        [](const F& c, const E&, bool) { return std::to_string(c.network.depth); });
    add(k("network.kernel_size"),
        [](F& c, E& e, bool&, const std::string& v) {
          c.network.kernel_size = e.network.kernel_size = parse_int("network.kernel_size", v);
        },
        [](const F& c, const E&, bool) { return std::to_string(c.network.kernel_size); });
    add(k("network.encoder_channels"),
        [](F& c, E& e, bool&, const std::string& v) {
          c.network.encoder_channels = e.network.encoder_channels = parse_int_list("network.encoder_channels", v);
        },
        [](const F& c, const E&, bool) { return join(c.network.encoder_channels); });
    add(k("network.skip_channels"),
        [](F& c, E& e, bool&, const std::string& v) {
          c.network.skip_channels = e.network.skip_channels = parse_int_list("network.skip_channels", v);
        },
        [](const F& c, const E&, bool) { return join(c.network.skip_channels); });
    add(k("network.use_split_conv"),
        [](F& c, E& e, bool&, const std::string& v) {
          c.network.use_split_conv = e.network.use_split_conv = parse_bool("network.use_split_conv", v);
        },
        [](const F& c, const E&, bool) { return std::string(c.network.use_split_conv ? "on" : "off"); });
    add(k("network.leaky_slope"),
        [](F& c, E& e, bool&, const std::string& v) {
          c.network.leaky_slope = e.network.leaky_slope = parse_real("network.leaky_slope", v);
        },
        [](const F& c, const E&, bool) { return format_double(c.network.leaky_slope); });

    add(k("reblur"),
        [](F& c, E&, bool&, const std::string& v) { c.reblur = wrap("reblur", [&] { return ReblurParams::parse(v); }); },
        [](const F& c, const E&, bool) { return c.reblur.to_string(); });

    add(k("kernel_est.support"),
        [](F& c, E&, bool&, const std::string& v) { c.kernel_est.support = parse_int("kernel_est.support", v); },
        [](const F& c, const E&, bool) { return std::to_string(c.kernel_est.support); });
    add(k("kernel_est.lowpass_sigma"),
        [](F& c, E&, bool&, const std::string& v) {
          c.kernel_est.lowpass_sigma = parse_real("kernel_est.lowpass_sigma", v);
        },
        [](const F& c, const E&, bool) { return format_double(c.kernel_est.lowpass_sigma); });
    add(k("kernel_est.epsilon"),
        [](F& c, E&, bool&, const std::string& v) { c.kernel_est.epsilon = parse_real("kernel_est.epsilon", v); },
        [](const F& c, const E&, bool) { return format_double(c.kernel_est.epsilon); });

    add(k("embedding"), [](F&, E&, bool& on, const std::string& v) { on = parse_bool("embedding", v); },
        [](const F&, const E&, bool on) { return std::string(on ? "on" : "off"); });
    add(k("embedding.iterations"),
        [](F&, E& e, bool&, const std::string& v) { e.iterations = parse_int("embedding.iterations", v); },
        [](const F&, const E& e, bool) { return std::to_string(e.iterations); });
    add(k("embedding.binarize_threshold"),
        [](F&, E& e, bool&, const std::string& v) {
          e.binarize_threshold = parse_real("embedding.binarize_threshold", v);
        },
        [](const F&, const E& e, bool) { return format_double(e.binarize_threshold); });
    add(k("embedding.learning_rate"),
        [](F&, E& e, bool&, const std::string& v) { e.learning_rate = parse_real("embedding.learning_rate", v); },
        [](const F&, const E& e, bool) { return format_double(e.learning_rate); });
    add(k("embedding.seed"), [](F&, E& e, bool&, const std::string& v) { e.seed = parse_u64("embedding.seed", v); },
        [](const F&, const E& e, bool) { return std::to_string(e.seed); });
    add(k("embedding.input_mode"),
        [](F&, E& e, bool&, const std::string& v) {
          e.input_mode = wrap("embedding.input_mode", [&] { return parse_input_mode(v); });
        },
        [](const F&, const E& e, bool) { return to_string(e.input_mode); });
    add(k("embedding.straight_through"),
        [](F&, E& e, bool&, const std::string& v) {
          e.straight_through = parse_bool("embedding.straight_through", v);
        },
        [](const F&, const E& e, bool) { return std::string(e.straight_through ? "on" : "off"); });
    return s;
  }();
  return fields;
}

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : config_detail::schema()) keys.push_back(k);
  return keys;
}

/// Closest valid key by edit distance.
inline std::string suggest_key(const std::string& key) {
  std::string best;
  std::size_t best_d = static_cast<std::size_t>(-1);
  for (const auto& k : config_keys()) {
    const std::size_t d = config_detail::edit_distance(key, k);
    if (d < best_d) best_d = d, best = k;
  }
  return best;
}

/// Applies key/value overrides in order on top of `base`.
class ConfigBuilder {
 public:
  explicit ConfigBuilder(FusionConfig base = {}) : cfg_(std::move(base)) {
    if (cfg_.embedding) {
      emb_ = *cfg_.embedding;
      emb_on_ = true;
    }
  }

  void set(const std::string& key, const std::string& value) {
    for (const auto& [k, f] : config_detail::schema()) {
      if (k != key) continue;
      f.set(cfg_, emb_, emb_on_, value);
      return;
    }
    std::string valid;
    for (const auto& k : config_keys()) valid += (valid.empty() ? "" : ", ") + k;
    throw config_error("unknown config key '" + key + "' (did you mean '" + suggest_key(key) + "'?); valid keys: " +
                       valid);
  }

  FusionConfig build() const {
    FusionConfig out = cfg_;
    if (emb_on_) out.embedding = emb_;
    else out.embedding.reset();
    return out;
  }

 private:
  FusionConfig cfg_;
  EmbeddingConfig emb_;
  bool emb_on_ = false;
};

inline void apply_config_text(ConfigBuilder& b, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  std::string section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = config_detail::trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw config_error(origin + ":" + std::to_string(lineno) + ": malformed section header");
      section = config_detail::trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw config_error(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    std::string key = config_detail::trim(std::string_view(t).substr(0, eq));
    if (!section.empty()) key = section + "." + key;
    b.set(key, config_detail::trim(std::string_view(t).substr(eq + 1)));
  }
}

inline FusionConfig parse_config(const std::string& text, FusionConfig base = {}) {
  ConfigBuilder b(std::move(base));
  apply_config_text(b, text);
  return b.build();
}

inline FusionConfig load_config(const std::filesystem::path& path, FusionConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot read config file '" + path.string() + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  ConfigBuilder b(std::move(base));
  apply_config_text(b, ss.str(), path.string());
  return b.build();
}

/// Every field with its resolved value, in schema order.
inline std::vector<std::pair<std::string, std::string>> to_key_values(const FusionConfig& cfg) {
  const EmbeddingConfig emb = cfg.embedding.value_or(EmbeddingConfig{});
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [k, f] : config_detail::schema()) out.emplace_back(k, f.get(cfg, emb, cfg.embedding.has_value()));
  return out;
}

inline std::string to_config_text(const FusionConfig& cfg) {
  std::string s;
  for (const auto& [k, v] : to_key_values(cfg)) s += k + " = " + v + "\n";
  return s;
}

}  // namespace dfp
