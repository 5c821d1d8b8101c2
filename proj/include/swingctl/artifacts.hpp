#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "swingctl/errors.hpp"
#include "swingctl/rng.hpp"
#include "swingctl/train.hpp"

namespace swingctl {

inline constexpr const char* kVersion = "0.1.0";

inline std::string hash_hex(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Collects a run's primary outputs. Every file written through it lands in
/// the manifest with a content hash; the manifest and the metadata are
/// flushed last. Timestamps live only in the metadata so the primary
/// outputs stay byte-reproducible.
class RunArtifacts {
 public:
  RunArtifacts(std::string out_dir, std::string command, std::uint64_t seed,
               const nlohmann::json& config)
      : dir_(std::move(out_dir)), command_(std::move(command)), seed_(seed) {
    std::filesystem::create_directories(dir_);
    config_hash_ = hash_hex(config.dump());
  }

  std::string path_of(const std::string& name) const { return dir_ + "/" + name; }

  void write_text(const std::string& name, const std::string& content) {
    const std::string path = path_of(name);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ParseError("cannot open " + path + " for writing");
    os << content;
    os.close();
    files_.push_back({name, content.size(), hash_hex(content)});
  }

  void write_json(const std::string& name, const nlohmann::json& j) {
    write_text(name, j.dump(2) + "\n");
  }

  /// metadata.json (hashed, timestamp-free payload stays in manifest) and
  /// manifest.json listing every emitted file.
  void finalize(const nlohmann::json& extra = {}) {
    nlohmann::json meta;
    meta["command"] = command_;
    meta["seed"] = seed_;
    meta["config_hash"] = config_hash_;
    meta["version"] = kVersion;
    const auto now = std::chrono::system_clock::now();
    meta["timestamp_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count();
    if (!extra.is_null()) meta["summary"] = extra;
    const std::string meta_text = meta.dump(2) + "\n";
    {
      std::ofstream os(path_of("metadata.json"), std::ios::binary);
      os << meta_text;
    }
    files_.push_back({"metadata.json", meta_text.size(), hash_hex(meta_text)});
    nlohmann::json manifest;
    manifest["files"] = nlohmann::json::array();
    for (const auto& f : files_)
      manifest["files"].push_back(
          {{"path", f.name}, {"bytes", f.bytes}, {"fnv1a64", f.hash}});
    std::ofstream os(path_of("manifest.json"), std::ios::binary);
    os << manifest.dump(2) << "\n";
  }

 private:
  struct Entry {
    std::string name;
    std::size_t bytes;
    std::string hash;
  };
  std::string dir_, command_;
  std::uint64_t seed_;
  std::string config_hash_;
  std::vector<Entry> files_;
};

inline std::string loss_log_csv(const std::vector<LossBreakdown>& log) {
  std::ostringstream os;
  os << "episode,total,maxdev,action_ms\n";
  for (std::size_t e = 0; e < log.size(); ++e) {
    double dev = 0.0, act = 0.0;
    for (double v : log[e].max_deviation) dev += v;
    for (double v : log[e].action_mean_square) act += v;
    os << e << "," << detail::format_double(log[e].total) << ","
       << detail::format_double(dev) << "," << detail::format_double(act) << "\n";
  }
  return os.str();
}

inline std::string vseries_csv(const Vec& t, const Vec& v, const Vec& vdot) {
  std::ostringstream os;
  os << "t,V,Vdot\n";
  for (std::size_t k = 0; k < t.size(); ++k)
    os << detail::format_double(t[k]) << "," << detail::format_double(v[k]) << ","
       << detail::format_double(vdot[k]) << "\n";
  return os.str();
}

inline std::string trajectory_csv(const Trajectory& traj) {
  std::ostringstream os;
  write_trajectory_csv(os, traj);
  return os.str();
}

}  // namespace swingctl
