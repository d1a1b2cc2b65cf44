#pragma once

// Output directories with a run record: every artifact is written once under
// a versioned name, listed with its SHA-256 digest and the hash of the
// settings that produced it, and reused when those settings recur.

#include <openssl/evp.h>

#include <json.hpp>

#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <string_view>

#include "qent/errors.hpp"

namespace qent {

inline std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    fail(ErrorKind::IoFailure, "SHA-256 computation failed");
  }
  std::ostringstream s;
  for (unsigned int i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return s.str();
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoFailure, "cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_file_bytes(path)); }

inline std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream s;
  s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return s.str();
}

/// Format versions written into the run record.
inline nlohmann::json artifact_versions() {
  return {{"dataset", 1}, {"forest", 1}, {"mlp", 1}, {"manifest", 1}};
}

struct ArtifactEntry {
  std::string file;
  std::string sha256;
  std::string settings_hash;
  std::string stage;
  std::string written_at;
};

class Workspace {
 public:
  explicit Workspace(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec || !std::filesystem::is_directory(dir_)) fail(ErrorKind::IoFailure, "cannot create " + dir_.string());
    if (std::filesystem::exists(manifest_path())) load();
  }

  const std::filesystem::path& dir() const { return dir_; }
  std::filesystem::path manifest_path() const { return dir_ / "manifest.json"; }
  std::filesystem::path path_of(const std::string& logical) const { return dir_ / entry(logical).file; }

  bool has(const std::string& logical) const { return entries_.contains(logical); }
  const ArtifactEntry& entry(const std::string& logical) const {
    if (!entries_.contains(logical)) fail(ErrorKind::IoFailure, "artifact '" + logical + "' is missing");
    return entries_.at(logical);
  }

  /// The artifact is current if it was produced from the same settings and
  /// the file still has the recorded digest.
  bool is_current(const std::string& logical, const std::string& settings_hash) const {
    const auto it = entries_.find(logical);
    if (it == entries_.end() || it->second.settings_hash != settings_hash) return false;
    const auto path = dir_ / it->second.file;
    return std::filesystem::exists(path) && sha256_file(path) == it->second.sha256;
  }

  /// Stores bytes under `name` (e.g. "train.qds"). An existing file with other
  /// content is left in place and the new one gets a ".vN" suffix.
  std::filesystem::path put(const std::string& logical, const std::string& name, const std::string& bytes,
                            const std::string& settings_hash, const std::string& stage) {
    const std::string digest = sha256_hex(bytes);
    std::filesystem::path target = dir_ / name;
    for (int v = 2; std::filesystem::exists(target); ++v) {
      if (sha256_file(target) == digest) break;
      const std::filesystem::path p(name);
      target = dir_ / (p.stem().string() + ".v" + std::to_string(v) + p.extension().string());
    }
    if (!std::filesystem::exists(target)) {
      std::ofstream out(target, std::ios::binary);
      out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
      if (!out) fail(ErrorKind::IoFailure, "cannot write " + target.string());
    }
    entries_[logical] = {target.filename().string(), digest, settings_hash, stage, utc_timestamp()};
    save();
    return target;
  }

  void set_config(const nlohmann::json& canonical) {
    config_ = canonical;
    save();
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["config"] = config_;
    j["config_sha256"] = sha256_hex(config_.dump());
    j["artifact_versions"] = artifact_versions();
    for (const auto& [k, e] : entries_) {
      j["artifacts"][k] = {{"file", e.file},
                           {"sha256", e.sha256},
                           {"settings_sha256", e.settings_hash},
                           {"stage", e.stage},
                           {"written_at", e.written_at}};
    }
    return j;
  }

 private:
  void load() {
    try {
      const nlohmann::json j = nlohmann::json::parse(read_file_bytes(manifest_path()));
      if (j.contains("config")) config_ = j["config"];
      if (j.contains("artifacts")) {
        for (const auto& [k, v] : j["artifacts"].items()) {
          entries_[k] = {v.at("file"), v.at("sha256"), v.at("settings_sha256"), v.at("stage"), v.at("written_at")};
        }
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::FormatError, "unreadable manifest: " + std::string(e.what()));
    }
  }

  void save() const {
    const std::filesystem::path tmp = dir_ / "manifest.json.tmp";
    {
      std::ofstream out(tmp);
      out << to_json().dump(2) << '\n';
      if (!out) fail(ErrorKind::IoFailure, "cannot write manifest");
    }
    std::filesystem::rename(tmp, manifest_path());
  }

  std::filesystem::path dir_;
  nlohmann::json config_ = nlohmann::json::object();
  std::map<std::string, ArtifactEntry> entries_;
};

}  // namespace qent
