#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "mts2graph/dataset.hpp"
#include "mts2graph/nn.hpp"

namespace mts2graph {

/// Per (layer, filter) activation thresholds.
struct ActivationThresholds {
  std::vector<std::vector<double>> values;  // [layer][filter]
  double q = 0.95;
  std::string pool_policy = "unmasked-train";

  double at(std::size_t layer, std::size_t channel) const { return values.at(layer).at(channel); }
};

/// ceil(q * N)-th smallest value (1-based nearest rank). Throws on an empty pool.
double nearest_rank_quantile(std::vector<double> pool, double q);

/// Thresholds from activations pooled over every neuron of every sample in `ds`. The
/// pool holds unmasked samples only, unless `include_masked` adds every input-set
/// variant under `policy`.
ActivationThresholds compute_thresholds(const TrainedCNN& model, const MTSDataset& ds, double q = 0.95,
                                        bool include_masked = false, InputSetPolicy policy = InputSetPolicy::Auto);

struct NeuronRef {
  std::size_t channel = 0;
  std::size_t neuron = 0;
  bool operator==(const NeuronRef&) const = default;
};

/// Highly activated neurons: A(n) >= T[l][c] and A(n) > 0, ascending (channel, neuron).
std::vector<NeuronRef> extract_han(const ActivationTensor& act, const ActivationThresholds& thr);

/// One highly activated input period.
struct MHAP {
  std::size_t sample_id = 0;
  ChannelMask mask;
  std::size_t layer = 0;
  std::size_t channel = 0;  // filter of `layer`
  std::size_t neuron = 0;
  Interval window;
  Matrix values;  // d x rf_length, inactive channels zero
  double peak = 0.0;

  /// Channel-major flattening of `values`.
  std::vector<double> flattened() const { return values.data; }
};

struct ExtractOptions {
  InputSetPolicy policy = InputSetPolicy::Auto;
  bool nms = true;
};

/// MHAPs of one sample over its whole input set, all layers, sorted by
/// (window start, layer, channel, mask).
std::vector<MHAP> extract_sample_mhaps(const TrainedCNN& model, const MTSSample& sample, std::size_t sample_id,
                                       const ActivationThresholds& thr, const ExtractOptions& opts);

/// MHAPs of every sample, grouped per layer. Within a layer the list is ordered by sample id
/// and then by the per-sample order above. Samples are processed in parallel.
/// `sample_ids` (optional) gives the id recorded for each sample of `ds`.
std::vector<std::vector<MHAP>> extract_mhaps(const TrainedCNN& model, const MTSDataset& ds,
                                             const ActivationThresholds& thr, const ExtractOptions& opts,
                                             const std::vector<std::size_t>& sample_ids = {});

/// Line-delimited dump, one MHAP per line:
/// sample_id mask_bits layer channel neuron a b peak d rf v_0 ... v_{d*rf-1}
void write_mhap_dump(std::ostream& out, const std::vector<std::vector<MHAP>>& per_layer);
std::vector<std::vector<MHAP>> read_mhap_dump(std::istream& in);

}  // namespace mts2graph
