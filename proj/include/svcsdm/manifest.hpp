#pragma once

// Run manifests: what a command read, what it wrote, and with which seed.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace svcsdm {

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);
/// SHA-256 of a file's contents. Throws std::runtime_error when unreadable.
std::string sha256_file(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file in the same directory and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

/// Current UTC time as ISO 8601 with a trailing Z.
std::string utc_timestamp();

struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  std::vector<std::filesystem::path> config_files;
  /// SHA-256 over the concatenated bytes of config_files (or of the canonical flag
  /// JSON when a command takes no config file).
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string software_version;
  std::string started_at;
  std::string finished_at;
  nlohmann::json extra = nlohmann::json::object();
  /// Output files relative to the manifest's directory.
  std::vector<std::string> outputs;

  /// Hashes every output and writes <dir>/manifest.json atomically.
  void write(const std::filesystem::path& dir) const;
};

}  // namespace svcsdm
