#pragma once

// Run manifests: everything needed to repeat a run, as `key = value` lines.
// Wall-clock timings vary between otherwise identical runs, so they are
// written to a sidecar file that the manifest points to.

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dfp/config.hpp"
#include "dfp/errors.hpp"
#include "dfp/version.hpp"

namespace dfp {

inline std::string sha256_hex(const std::vector<unsigned char>& bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx.get(), md, &len) != 1)
    throw std::runtime_error("sha256: digest failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot read '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

struct ManifestInput {
  std::string role;  // fore, back, or stack position
  std::filesystem::path path;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  FusionConfig config;
  std::vector<ManifestInput> inputs;
  std::vector<std::pair<std::string, std::string>> outputs;  // label -> file name
  std::vector<std::pair<std::string, std::string>> extra;    // run facts (e.g. map degeneracy)

  std::string to_text() const {
    std::ostringstream os;
    os << "# dfp run manifest\n";
    os << "software.version = " << kVersion << "\n";
    os << "command = " << command << "\n";
    os << "seed = " << config.seed << "\n";
    for (const auto& [k, v] : to_key_values(config)) os << "config." << k << " = " << v << "\n";
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      os << "input." << i << ".role = " << inputs[i].role << "\n";
      os << "input." << i << ".path = " << inputs[i].path.string() << "\n";
      os << "input." << i << ".sha256 = " << inputs[i].sha256 << "\n";
    }
    for (const auto& [k, v] : outputs) os << "output." << k << " = " << v << "\n";
    for (const auto& [k, v] : extra) os << "run." << k << " = " << v << "\n";
    return os.str();
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot write manifest '" + path.string() + "'");
    f << to_text();
  }
};

/// Reads the `config.*` entries of a manifest back into a FusionConfig.
inline FusionConfig config_from_manifest(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot read manifest '" + path.string() + "'");
  ConfigBuilder b;
  std::string line;
  while (std::getline(f, line)) {
    if (line.rfind("config.", 0) != 0) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    b.set(config_detail::trim(std::string_view(line).substr(7, eq - 7)),
          config_detail::trim(std::string_view(line).substr(eq + 1)));
  }
  return b.build();
}

}  // namespace dfp
