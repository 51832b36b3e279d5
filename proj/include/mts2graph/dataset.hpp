#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mts2graph/common.hpp"

namespace mts2graph {

/// One labelled multivariate series, d channels x T time steps.
struct MTSSample {
  Matrix values;
  int label = 0;
  std::size_t original_length = 0;  // before zero padding
};

struct MTSDataset {
  std::vector<MTSSample> samples;
  std::size_t d = 0;
  std::size_t T = 0;
  std::size_t C = 0;
  std::vector<std::string> class_names;

  std::size_t size() const { return samples.size(); }
  std::vector<int> labels() const;
  MTSDataset subset(const std::vector<std::size_t>& indices) const;
  /// Throws Error if shapes, labels or values violate the dataset invariants.
  void validate() const;
};

enum class DatasetFormat { TabularPerSample, SingleFile };

DatasetFormat parse_dataset_format(const std::string& name);
std::string to_string(DatasetFormat f);

/// Loads either layout (see docs/formats.md). Ragged series are zero padded to the longest
/// one when `pad_ragged` is set and rejected otherwise. Labels are remapped to [0, C).
MTSDataset load_dataset(const std::filesystem::path& path, DatasetFormat format, bool pad_ragged = true);

/// Writes the tabular-per-sample layout (meta.json plus one CSV per sample).
void save_dataset_tabular(const MTSDataset& ds, const std::filesystem::path& dir);

/// Writes the single-file layout: `file` plus a sibling meta.json.
void save_dataset_single_file(const MTSDataset& ds, const std::filesystem::path& file);

/// Per (sample, channel) z-normalisation with population standard deviation.
MTSDataset znormalize(const MTSDataset& ds);

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

struct FoldPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<Fold> folds;
};

/// Stratified k-fold plan. Each class is shuffled and cut into k blocks; fold f tests on
/// block f, validates on block (f + 1) mod k and trains on the rest.
FoldPlan make_folds(const MTSDataset& ds, std::size_t k, std::uint64_t seed);

struct ChannelMask {
  std::vector<std::uint8_t> active;

  std::size_t count() const;
  /// "1" for active channels, channel 0 first.
  std::string bits() const;
  static ChannelMask from_bits(const std::string& bits);
  static ChannelMask all(std::size_t d);

  auto operator<=>(const ChannelMask&) const = default;
  bool operator==(const ChannelMask&) const = default;
};

enum class InputSetPolicy {
  Auto,          // full power set for d <= 10, capped otherwise
  FullPowerset,  // all 2^d - 1 non-empty masks
  Capped,        // singletons, pairs and the all-channel mask
};

InputSetPolicy parse_input_set_policy(const std::string& name);
std::string to_string(InputSetPolicy p);

/// The masks that `build_input_set` applies, in output order.
std::vector<ChannelMask> input_masks(std::size_t d, InputSetPolicy policy);

/// Copy of `sample` with inactive channels zeroed.
MTSSample apply_mask(const MTSSample& sample, const ChannelMask& mask);

std::vector<std::pair<ChannelMask, MTSSample>> build_input_set(const MTSSample& sample, InputSetPolicy policy);

}  // namespace mts2graph
