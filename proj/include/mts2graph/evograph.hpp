#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mts2graph/mhap.hpp"
#include "mts2graph/nn.hpp"

namespace mts2graph {

using EdgeKey = std::pair<std::size_t, std::size_t>;  // (src, dst)
using EdgeWeights = std::map<EdgeKey, std::uint64_t>;

/// Directed weighted evolution graph of one layer; nodes are cluster ids.
struct LayerGraph {
  std::size_t layer = 0;
  std::size_t num_nodes = 0;
  EdgeWeights edges;
};

/// Counts every adjacent pair (a, b) of each per-sample sequence as an edge a -> b.
LayerGraph build_layer_graph(std::size_t layer, const std::vector<std::vector<std::size_t>>& sequences, std::size_t k);

/// Per-sample cluster-id sequences of one layer. MHAPs are grouped by sample id and ordered by
/// (window start, mask, filter channel); `assignments[i]` is the cluster of `mhaps[i]`.
/// Returns one sequence per distinct sample id, ascending.
std::vector<std::vector<std::size_t>> layer_sequences(const std::vector<MHAP>& mhaps,
                                                      const std::vector<std::size_t>& assignments);

enum class EdgeKind { Intra, Cross };

struct GraphEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  std::uint64_t weight = 0;
  EdgeKind kind = EdgeKind::Intra;
};

/// All layer graphs on one node set. Global node id = offset[layer] + cluster.
struct MergedGraph {
  std::vector<std::size_t> cluster_counts;
  std::vector<std::size_t> offsets;
  EdgeWeights intra;
  EdgeWeights cross;  // lower layer -> adjacent higher layer

  std::size_t node_count() const;
  std::size_t node_id(std::size_t layer, std::size_t cluster) const;
  std::pair<std::size_t, std::size_t> layer_cluster(std::size_t node) const;
  /// Both edge kinds, ordered by (src, dst, kind).
  std::vector<GraphEdge> edges() const;
  /// Out-neighbours with summed weights, per node.
  std::vector<std::vector<std::pair<std::size_t, double>>> adjacency() const;
};

MergedGraph make_merged_graph(const std::vector<std::size_t>& cluster_counts);

/// Copies intra-layer edges and adds cross-layer edges: for each layer-l MHAP at neuron n
/// (l >= 1), every layer-(l-1) MHAP of the same (sample, mask) whose neuron lies in
/// [n, n + kernel_l - 1] adds 1 to the edge lower cluster -> upper cluster.
MergedGraph merge_graphs(const std::vector<LayerGraph>& layer_graphs, const std::vector<std::vector<MHAP>>& mhaps,
                         const std::vector<std::vector<std::size_t>>& assignments, const TrainedCNN& model);

struct LayerStats {
  std::size_t nodes = 0;
  std::size_t intra_edges = 0;
  std::uint64_t intra_weight = 0;
  std::size_t cross_in_edges = 0;  // cross edges arriving from the layer below
  std::uint64_t cross_in_weight = 0;
};

struct GraphStats {
  std::size_t nodes = 0;
  std::size_t edges = 0;
  std::uint64_t total_weight = 0;
  std::vector<LayerStats> per_layer;
};

GraphStats graph_stats(const MergedGraph& g);

struct DotOptions {
  std::string name = "mhap_evolution";
  /// Only these nodes are emitted when set.
  std::optional<std::vector<std::size_t>> restrict_to;
  /// Edges drawn highlighted.
  std::vector<EdgeKey> highlight;
};

/// Graphviz export: nodes labelled L<layer>C<cluster>, edge weights as attributes,
/// cross-layer edges dashed.
void write_dot(std::ostream& out, const MergedGraph& g, const DotOptions& opts = {});

/// Tab-separated adjacency: a header with cluster counts, then src dst weight kind.
void write_adjacency(std::ostream& out, const MergedGraph& g);
MergedGraph read_adjacency(std::istream& in);

}  // namespace mts2graph
