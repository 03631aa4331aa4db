#include "mocha/manifest.hpp"

#include <openssl/evp.h>

#include <cstdio>
#include <ctime>
#include <fstream>
#include <sstream>

#include "mocha/errors.hpp"

namespace mocha {

namespace {

std::string to_hex(const unsigned char* data, unsigned len) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned i = 0; i < len; ++i) {
    out.push_back(digits[data[i] >> 4]);
    out.push_back(digits[data[i] & 0xf]);
  }
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json files_json(const std::vector<ManifestFile>& files) {
  auto arr = nlohmann::json::array();
  for (const auto& f : files) arr.push_back({{"path", f.path}, {"hash", f.hash}, {"bytes", f.bytes}});
  return arr;
}

std::vector<ManifestFile> files_from_json(const nlohmann::json& arr) {
  std::vector<ManifestFile> out;
  for (const auto& f : arr) out.push_back({f.at("path"), f.at("hash"), f.at("bytes")});
  return out;
}

}  // namespace

std::string git_blob_hash(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + std::string(1, '\0');
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr) throw std::runtime_error("sha1: cannot allocate context");
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, digest, &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw std::runtime_error("sha1: digest failed");
  return to_hex(digest, len);
}

std::string git_blob_hash_file(const std::filesystem::path& path) { return git_blob_hash(read_file(path)); }

std::string iso8601_utc(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

const std::map<std::string, std::string>& module_versions() {
  static const std::map<std::string, std::string> versions{
      {"seqmodel", "1.0"}, {"synthcap", "1.0"}, {"policy", "1.0"},   {"reward", "1.0"},
      {"rl", "1.0"},       {"halleval", "1.0"}, {"benchgen", "1.0"}, {"cli", "1.0"},
  };
  return versions;
}

void RunManifest::add_input(const std::filesystem::path& path) {
  inputs.push_back({path.string(), git_blob_hash_file(path), std::filesystem::file_size(path)});
}

void RunManifest::add_output(const std::filesystem::path& path, const std::filesystem::path& root) {
  auto rel = std::filesystem::relative(path, root);
  const std::string shown = rel.empty() || rel.native().starts_with("..") ? path.string() : rel.string();
  outputs.push_back({shown, git_blob_hash_file(path), std::filesystem::file_size(path)});
}

void RunManifest::seal_inputs() {
  std::string all = git_blob_hash(config_text);
  for (const auto& f : inputs) all += "\n" + f.hash;
  input_hash = git_blob_hash(all);
}

nlohmann::json RunManifest::to_json() const {
  return {{"command", command},
          {"config_path", config_path},
          {"config", config_text},
          {"seeds", seeds},
          {"module_versions", module_versions},
          {"parameters", parameters},
          {"started", started},
          {"finished", finished},
          {"inputs", files_json(inputs)},
          {"outputs", files_json(outputs)},
          {"input_hash", input_hash},
          {"results", results}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  m.command = j.at("command");
  m.config_path = j.at("config_path");
  m.config_text = j.at("config");
  m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
  m.module_versions = j.at("module_versions").get<std::map<std::string, std::string>>();
  m.parameters = j.at("parameters").get<std::map<std::string, std::string>>();
  m.started = j.at("started");
  m.finished = j.at("finished");
  m.inputs = files_from_json(j.at("inputs"));
  m.outputs = files_from_json(j.at("outputs"));
  m.input_hash = j.at("input_hash");
  m.results = j.value("results", nlohmann::json());
  return m;
}

void RunManifest::write_atomic(const std::filesystem::path& path) const {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << to_json().dump(2) << "\n";
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace mocha
