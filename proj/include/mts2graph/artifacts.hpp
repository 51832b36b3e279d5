#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mts2graph {

/// One stage entry of a fold manifest.
struct ArtifactEntry {
  std::string stage;
  std::string file;
  std::string sha256;
  int version = 1;
  std::optional<std::string> input_stage;
  std::string input_sha256;  // sha256 of the input stage's file when this one was written
};

/// A directory holding one file per stage plus manifest.json. Every stage records the hash of
/// the artifact it was computed from, so a modified upstream file breaks every downstream load.
class ArtifactStore {
 public:
  explicit ArtifactStore(std::filesystem::path dir);

  const std::filesystem::path& dir() const { return dir_; }

  /// Writes `bytes` to `file`, replaces any previous entry for `stage` and persists the manifest.
  /// The input stage, when given, must already be present and intact.
  void put(const std::string& stage, const std::string& file, const std::string& bytes,
           const std::optional<std::string>& input_stage, int version = 1);

  /// Reads a stage after checking its own hash and the whole chain of inputs behind it.
  std::string get(const std::string& stage) const;

  bool has(const std::string& stage) const;
  const ArtifactEntry& entry(const std::string& stage) const;
  std::vector<ArtifactEntry> entries() const { return entries_; }

  /// Throws Error naming the first stage whose file or chain link does not match.
  void verify(const std::string& stage) const;
  void verify_all() const;

 private:
  void load_manifest();
  void save_manifest() const;
  std::string read_file(const ArtifactEntry& e) const;

  std::filesystem::path dir_;
  std::vector<ArtifactEntry> entries_;
};

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace mts2graph
