// dfp: multi-focus super-resolution fusion from the command line.
//
//   dfp fuse --fore a.png --back b.png --out fused.png [--scale 2] ...
//   dfp fuse-stack --inputs p0.png p1.png p2.png --out fused.png ...
//   dfp decision-map --fore a.png --back b.png --out map.png
//   dfp metrics --gt gt_dir --test fused_dir --out report.csv
//   dfp synth --out-dir fixture --size 64 --scale 2
//
// Exit codes: 0 success, 2 input error, 3 shape error, 4 numeric error.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dfp/config.hpp"
#include "dfp/decision_embedding.hpp"
#include "dfp/doublereblur.hpp"
#include "dfp/errors.hpp"
#include "dfp/image_io.hpp"
#include "dfp/log.hpp"
#include "dfp/manifest.hpp"
#include "dfp/metrics.hpp"
#include "dfp/synthetic.hpp"
#include "dfp/trainer.hpp"
#include "dfp/version.hpp"

namespace fs = std::filesystem;
using namespace dfp;

namespace {

enum Exit { kOk = 0, kInput = 2, kShape = 3, kNumeric = 4 };

struct CommonOptions {
  std::optional<std::string> config_path;
  std::optional<int> scale;
  std::optional<std::string> reblur;
  std::optional<int> iterations;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> embedding;
  std::optional<std::string> input_mode;
  std::vector<std::string> set;  // key=value overrides
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_path, "Key-value configuration file");
  cmd->add_option("--scale", o.scale, "Super-resolution factor (1, 2 or 4)");
  cmd->add_option("--reblur", o.reblur, "Decision-map parameters k_g,k_d,k_e,t,f");
  cmd->add_option("--iters", o.iterations, "Optimization iterations");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--embedding", o.embedding, "Learned decision-map refinement: on|off");
  cmd->add_option("--input-mode", o.input_mode, "Network input: averaged_inputs|noise");
  cmd->add_option("--set", o.set, "Override any config key (key=value); repeatable");
}

// Defaults, then the config file, then command-line flags.
FusionConfig resolve_config(const CommonOptions& o) {
  FusionConfig base;
  if (o.config_path) base = load_config(*o.config_path);
  ConfigBuilder b(base);
  for (const auto& kv : o.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw config_error("--set expects key=value, got '" + kv + "'");
    b.set(config_detail::trim(kv.substr(0, eq)), config_detail::trim(kv.substr(eq + 1)));
  }
  if (o.scale) b.set("scale", std::to_string(*o.scale));
  if (o.reblur) b.set("reblur", *o.reblur);
  if (o.iterations) b.set("iterations", std::to_string(*o.iterations));
  if (o.seed) b.set("seed", std::to_string(*o.seed));
  if (o.embedding) b.set("embedding", *o.embedding);
  if (o.input_mode) b.set("input_mode", *o.input_mode);
  FusionConfig cfg = b.build();
  cfg.validate();
  return cfg;
}

fs::path sibling(const fs::path& out, const std::string& suffix) {
  fs::path p = out;
  p.replace_filename(out.stem().string() + suffix);
  return p;
}

Image binary_map_image(const Plane& m) { return Image::from_plane(m); }

void write_loss_csv(const fs::path& path, const std::vector<LossRecord>& trace) {
  std::ofstream f(path);
  if (!f) throw io_error("cannot write '" + path.string() + "'");
  f << "iteration,content,joint_grad,grad_limit,total\n" << std::setprecision(9);
  for (const auto& r : trace)
    f << r.iteration << ',' << r.content << ',' << r.joint_grad << ',' << r.grad_limit << ',' << r.total << '\n';
}

void ensure_same_shape(const std::vector<Image>& images, const std::vector<std::string>& paths) {
  for (std::size_t i = 1; i < images.size(); ++i)
    if (!images[i].same_shape(images[0]))
      throw shape_error("'" + paths[i] + "' is " + std::to_string(images[i].width()) + "x" +
                        std::to_string(images[i].height()) + "x" + std::to_string(images[i].channels()) + " but '" +
                        paths[0] + "' is " + std::to_string(images[0].width()) + "x" +
                        std::to_string(images[0].height()) + "x" + std::to_string(images[0].channels()));
}

double laplacian_energy(const Image& img) {
  const Plane l = laplacian_map(luma_plane(img));
  double s = 0.0;
  for (double v : l.values()) s += v * v;
  return s / static_cast<double>(l.size());
}

void write_outputs(const fs::path& out, const std::string& command, const FusionConfig& cfg,
                   const std::vector<ManifestInput>& inputs, const FusionResult& r,
                   std::vector<std::pair<std::string, std::string>> extra) {
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const fs::path map_path = sibling(out, ".map.png");
  const fs::path loss_path = sibling(out, ".loss.csv");
  const fs::path manifest_path = sibling(out, ".manifest.txt");
  const fs::path timing_path = sibling(out, ".timing.txt");
  save_image(out, r.fused);
  save_image(map_path, binary_map_image(r.decision_map));
  write_loss_csv(loss_path, r.loss_trace);
  {
    std::ofstream t(timing_path);
    t << "wall_time_seconds = " << std::setprecision(6) << r.wall_time << "\n";
  }
  RunManifest m;
  m.command = command;
  m.config = cfg;
  m.inputs = inputs;
  m.outputs = {{"fused", out.filename().string()},
               {"decision_map", map_path.filename().string()},
               {"loss_trace", loss_path.filename().string()},
               {"timing", timing_path.filename().string()}};
  extra.emplace_back("map_degenerate", r.map_degenerate ? "1" : "0");
  m.extra = std::move(extra);
  m.write(manifest_path);
  log::emit(log::Level::info, "outputs_written", "fused", out.string(), "manifest", manifest_path.string());
}

int cmd_fuse(const std::string& fore_path, const std::string& back_path, const fs::path& out, bool auto_roles,
             const CommonOptions& o) {
  const FusionConfig cfg = resolve_config(o);
  std::vector<std::string> paths{fore_path, back_path};
  std::vector<Image> imgs{load_image(fore_path), load_image(back_path)};
  ensure_same_shape(imgs, paths);
  bool swapped = false;
  if (auto_roles && laplacian_energy(imgs[1]) > laplacian_energy(imgs[0])) {
    std::swap(imgs[0], imgs[1]);
    std::swap(paths[0], paths[1]);
    swapped = true;
    log::emit(log::Level::info, "roles_swapped", "fore", paths[0], "back", paths[1]);
  }
  const FusionResult r = fuse_pair(imgs[0], imgs[1], cfg);
  std::vector<ManifestInput> inputs{{"fore", paths[0], sha256_file(paths[0])}, {"back", paths[1], sha256_file(paths[1])}};
  write_outputs(out, "fuse", cfg, inputs, r, {{"roles_swapped", swapped ? "1" : "0"}});
  return kOk;
}

int cmd_fuse_stack(const std::vector<std::string>& paths, const fs::path& out, const CommonOptions& o) {
  if (paths.size() < 2) throw invalid_argument("fuse-stack needs at least two inputs, got " + std::to_string(paths.size()));
  const FusionConfig cfg = resolve_config(o);
  std::vector<Image> imgs;
  for (const auto& p : paths) imgs.push_back(load_image(p));
  ensure_same_shape(imgs, paths);
  const FusionResult r = fuse_stack(imgs, cfg);
  std::vector<ManifestInput> inputs;
  for (std::size_t i = 0; i < paths.size(); ++i)
    inputs.push_back({"stack" + std::to_string(i), paths[i], sha256_file(paths[i])});
  write_outputs(out, "fuse-stack", cfg, inputs, r, {});
  return kOk;
}

int cmd_decision_map(const std::string& fore_path, const std::string& back_path, const fs::path& out,
                     const CommonOptions& o) {
  const FusionConfig cfg = resolve_config(o);
  const std::vector<std::string> paths{fore_path, back_path};
  const std::vector<Image> imgs{load_image(fore_path), load_image(back_path)};
  ensure_same_shape(imgs, paths);
  DecisionMap m = compute_decision_map(imgs[0], imgs[1], cfg.reblur, cfg.kernel_est);
  if (cfg.embedding) {
    const EmbeddingResult e = optimize_decision_map(imgs[0], imgs[1], m, *cfg.embedding);
    m = e.map;
    log::emit(log::Level::info, "embedding_done", "initial_loss", e.loss_trace.front(), "final_loss",
              e.loss_trace.back());
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_image(out, binary_map_image(m));
  return kOk;
}

bool is_image(const fs::path& p) {
  static const std::set<std::string> ext{".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"};
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext.count(e) > 0;
}

std::map<std::string, fs::path> list_images(const fs::path& dir) {
  std::map<std::string, fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_image(entry.path())) out[entry.path().filename().string()] = entry.path();
  return out;
}

int cmd_metrics(const fs::path& gt, const fs::path& test, const std::optional<fs::path>& out) {
  if (!fs::exists(gt)) throw io_error("'" + gt.string() + "' does not exist");
  if (!fs::exists(test)) throw io_error("'" + test.string() + "' does not exist");
  std::vector<std::pair<std::string, std::pair<fs::path, fs::path>>> pairs;
  if (fs::is_directory(gt) != fs::is_directory(test))
    throw invalid_argument("--gt and --test must both be files or both be directories");
  if (fs::is_directory(gt)) {
    const auto g = list_images(gt);
    const auto t = list_images(test);
    std::vector<std::string> orphans;
    for (const auto& [name, p] : g)
      if (!t.count(name)) orphans.push_back(p.string());
    for (const auto& [name, p] : t)
      if (!g.count(name)) orphans.push_back(p.string());
    if (!orphans.empty()) {
      std::string msg = "unpaired files:";
      for (const auto& s : orphans) msg += "\n  " + s;
      throw invalid_argument(msg);
    }
    for (const auto& [name, p] : g) pairs.push_back({name, {p, t.at(name)}});
    if (pairs.empty()) throw invalid_argument("no images found in '" + gt.string() + "'");
  } else {
    pairs.push_back({test.filename().string(), {gt, test}});
  }
  std::vector<metrics::MetricReport> rows;
  for (const auto& [id, p] : pairs) rows.push_back(metrics::evaluate_report(load_image(p.first), load_image(p.second), id));
  if (out) {
    if (out->has_parent_path()) fs::create_directories(out->parent_path());
    std::ofstream f(*out);
    if (!f) throw io_error("cannot write '" + out->string() + "'");
    metrics::write_csv(f, rows);
  } else {
    metrics::write_csv(std::cout, rows);
  }
  return kOk;
}

int cmd_synth(const fs::path& dir, int size, int scale, double sigma, std::uint64_t seed, int bands) {
  if (size < 8) throw invalid_argument("--size must be at least 8");
  fs::create_directories(dir);
  const int hr = size * scale;
  const Image gt = synth::scene(hr, hr, 3, seed);
  const auto down = [&](const Image& img) {
    return scale == 1 ? img : downsample_for_loss(img, scale, ResampleMethod::lanczos);
  };
  save_image(dir / "gt.png", gt);
  if (bands >= 2) {
    const auto stack = synth::banded_focal_stack(gt, bands, sigma);
    for (std::size_t k = 0; k < stack.size(); ++k) save_image(dir / ("plane" + std::to_string(k) + ".png"), down(stack[k]));
  } else {
    const auto pair = synth::split_focus_pair(gt, synth::left_half(hr, hr), sigma);
    save_image(dir / "fore.png", down(pair.fore));
    save_image(dir / "back.png", down(pair.back));
    save_image(dir / "mask.png", Image::from_plane(synth::left_half(size, size).to_plane()));
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-focus super-resolution image fusion with a per-instance deep prior"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug|info|warn|error|off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  CommonOptions fuse_opts, stack_opts, map_opts;
  std::string fore, back, out;
  bool auto_roles = false;
  auto* fuse = app.add_subcommand("fuse", "Fuse a foreground-focused and a background-focused image");
  fuse->add_option("--fore", fore, "Image focused on the foreground")->required();
  fuse->add_option("--back", back, "Image focused on the background")->required();
  fuse->add_option("--out", out, "Fused PNG; sidecar files use the same stem")->required();
  fuse->add_flag("--auto-roles", auto_roles, "Swap inputs if --back has more Laplacian energy");
  add_common(fuse, fuse_opts);

  std::vector<std::string> stack_inputs;
  std::string stack_out;
  auto* stack = app.add_subcommand("fuse-stack", "Fuse a focal stack given in focal order");
  stack->add_option("--inputs", stack_inputs, "Images ordered by focal plane")->required();
  stack->add_option("--out", stack_out, "Fused PNG")->required();
  add_common(stack, stack_opts);

  std::string map_fore, map_back, map_out;
  auto* dmap = app.add_subcommand("decision-map", "Compute the foreground decision map only");
  dmap->add_option("--fore", map_fore, "Image focused on the foreground")->required();
  dmap->add_option("--back", map_back, "Image focused on the background")->required();
  dmap->add_option("--out", map_out, "Binary map PNG")->required();
  add_common(dmap, map_opts);

  std::string gt, test;
  std::optional<std::string> report;
  auto* met = app.add_subcommand("metrics", "MG/EI/IE/MGA and deviations from ground truth");
  met->add_option("--gt", gt, "Ground-truth image or directory")->required();
  met->add_option("--test", test, "Test image or directory")->required();
  met->add_option("--out", report, "CSV report (standard output if omitted)");

  std::string synth_dir;
  int synth_size = 64, synth_scale = 2, synth_bands = 0;
  double synth_sigma = 2.0;
  std::uint64_t synth_seed = 7;
  auto* syn = app.add_subcommand("synth", "Write a synthetic multi-focus fixture with its ground truth");
  syn->add_option("--out-dir", synth_dir, "Output directory")->required();
  syn->add_option("--size", synth_size, "Low-resolution side length");
  syn->add_option("--scale", synth_scale, "Ground truth is scale x size")->check(CLI::IsMember({1, 2, 4}));
  syn->add_option("--sigma", synth_sigma, "Defocus blur sigma at ground-truth resolution");
  syn->add_option("--seed", synth_seed, "Scene seed");
  syn->add_option("--bands", synth_bands, "Write an N-plane banded focal stack instead of a pair");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInput;
  }

  static const std::map<std::string, log::Level> levels{{"debug", log::Level::debug}, {"info", log::Level::info},
                                                         {"warn", log::Level::warn}, {"error", log::Level::error},
                                                         {"off", log::Level::off}};
  log::set_level(levels.at(log_level));

  try {
    if (*fuse) return cmd_fuse(fore, back, out, auto_roles, fuse_opts);
    if (*stack) return cmd_fuse_stack(stack_inputs, stack_out, stack_opts);
    if (*dmap) return cmd_decision_map(map_fore, map_back, map_out, map_opts);
    if (*met) return cmd_metrics(gt, test, report ? std::optional<fs::path>(*report) : std::nullopt);
    if (*syn) return cmd_synth(synth_dir, synth_size, synth_scale, synth_sigma, synth_seed, synth_bands);
  } catch (const numeric_error& e) {
    std::cerr << "error: " << e.what() << " (iteration " << e.iteration() << ")\n";
    return kNumeric;
  } catch (const shape_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kShape;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  }
  return kOk;
}
