#include "mts2graph/artifacts.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mts2graph/common.hpp"

namespace mts2graph {

using nlohmann::json;

namespace {
constexpr const char* kManifest = "manifest.json";
constexpr int kManifestVersion = 1;
}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  // write-then-rename so an aborted run never leaves a half-written artifact behind
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ArtifactStore::ArtifactStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
  if (std::filesystem::exists(dir_ / kManifest)) load_manifest();
}

void ArtifactStore::load_manifest() {
  json j;
  try {
    j = json::parse(read_text_file(dir_ / kManifest));
  } catch (const json::exception& e) {
    throw Error("manifest " + (dir_ / kManifest).string() + ": " + e.what());
  }
  if (j.value("format", "") != "mts2graph-manifest") throw Error("manifest: wrong format tag");
  if (j.value("version", 0) != kManifestVersion) throw Error("manifest: unsupported version");
  entries_.clear();
  for (const auto& s : j.at("stages")) {
    ArtifactEntry e;
    e.stage = s.at("stage").get<std::string>();
    e.file = s.at("file").get<std::string>();
    e.sha256 = s.at("sha256").get<std::string>();
    e.version = s.value("version", 1);
    if (s.contains("input_stage") && !s["input_stage"].is_null()) e.input_stage = s["input_stage"].get<std::string>();
    e.input_sha256 = s.value("input_sha256", "");
    entries_.push_back(std::move(e));
  }
}

void ArtifactStore::save_manifest() const {
  json stages = json::array();
  for (const auto& e : entries_) {
    json s = {{"stage", e.stage}, {"file", e.file}, {"sha256", e.sha256}, {"version", e.version}};
    s["input_stage"] = e.input_stage ? json(*e.input_stage) : json(nullptr);
    s["input_sha256"] = e.input_sha256;
    stages.push_back(s);
  }
  json j = {{"format", "mts2graph-manifest"}, {"version", kManifestVersion}, {"stages", stages}};
  write_text_file(dir_ / kManifest, j.dump(2) + "\n");
}

bool ArtifactStore::has(const std::string& stage) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.stage == stage; });
}

const ArtifactEntry& ArtifactStore::entry(const std::string& stage) const {
  for (const auto& e : entries_)
    if (e.stage == stage) return e;
  throw Error("artifact store " + dir_.string() + ": stage '" + stage + "' missing");
}

std::string ArtifactStore::read_file(const ArtifactEntry& e) const { return read_text_file(dir_ / e.file); }

void ArtifactStore::put(const std::string& stage, const std::string& file, const std::string& bytes,
                        const std::optional<std::string>& input_stage, int version) {
  ArtifactEntry e;
  e.stage = stage;
  e.file = file;
  e.version = version;
  e.input_stage = input_stage;
  if (input_stage) {
    verify(*input_stage);
    e.input_sha256 = entry(*input_stage).sha256;
  }
  write_text_file(dir_ / file, bytes);
  e.sha256 = sha256_hex(bytes);
  auto it = std::find_if(entries_.begin(), entries_.end(), [&](const auto& x) { return x.stage == stage; });
  if (it != entries_.end())
    *it = std::move(e);
  else
    entries_.push_back(std::move(e));
  save_manifest();
}

void ArtifactStore::verify(const std::string& stage) const {
  std::string current = stage;
  for (std::size_t guard = 0; guard <= entries_.size(); ++guard) {
    const auto& e = entry(current);
    if (!std::filesystem::exists(dir_ / e.file)) throw Error("artifact '" + current + "': file " + e.file + " missing");
    if (sha256_hex(read_file(e)) != e.sha256) throw Error("artifact '" + current + "': hash mismatch, file was modified");
    if (!e.input_stage) return;
    if (entry(*e.input_stage).sha256 != e.input_sha256)
      throw Error("artifact '" + current + "': input stage '" + *e.input_stage + "' changed since it was written");
    current = *e.input_stage;
  }
  throw Error("artifact '" + stage + "': cyclic stage chain");
}

void ArtifactStore::verify_all() const {
  for (const auto& e : entries_) verify(e.stage);
}

std::string ArtifactStore::get(const std::string& stage) const {
  verify(stage);
  return read_file(entry(stage));
}

}  // namespace mts2graph
