#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace mocha {

// SHA-1 of "blob <size>\0" + content, as lowercase hex (git's object id).
std::string git_blob_hash(std::string_view content);
std::string git_blob_hash_file(const std::filesystem::path& path);

// UTC, second resolution: 2024-01-01T00:00:00Z.
std::string iso8601_utc(std::chrono::system_clock::time_point t);

struct ManifestFile {
  std::string path;  // relative to the manifest's directory when inside it
  std::string hash;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string config_text;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> module_versions;
  std::map<std::string, std::string> parameters;  // resolved settings worth surfacing
  std::string started;
  std::string finished;
  std::vector<ManifestFile> inputs;
  std::vector<ManifestFile> outputs;
  std::string input_hash;  // hash over the config text and every input hash
  nlohmann::json results;  // command-specific summary

  void add_input(const std::filesystem::path& path);
  void add_output(const std::filesystem::path& path, const std::filesystem::path& root);
  // Fills input_hash from config_text and inputs.
  void seal_inputs();

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
  // Writes to a sibling temporary file, then renames it over `path`.
  void write_atomic(const std::filesystem::path& path) const;
};

const std::map<std::string, std::string>& module_versions();

}  // namespace mocha
