#include "mts2graph/evograph.hpp"

#include <algorithm>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <tuple>

namespace mts2graph {

LayerGraph build_layer_graph(std::size_t layer, const std::vector<std::vector<std::size_t>>& sequences, std::size_t k) {
  LayerGraph g;
  g.layer = layer;
  g.num_nodes = k;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const auto& seq = sequences[s];
    for (std::size_t id : seq)
      if (id >= k)
        throw Error("build_layer_graph: cluster id " + std::to_string(id) + " out of range for k=" + std::to_string(k) +
                    " (sequence " + std::to_string(s) + ")");
    for (std::size_t i = 0; i + 1 < seq.size(); ++i) ++g.edges[{seq[i], seq[i + 1]}];
  }
  return g;
}

std::vector<std::vector<std::size_t>> layer_sequences(const std::vector<MHAP>& mhaps,
                                                      const std::vector<std::size_t>& assignments) {
  if (mhaps.size() != assignments.size()) throw Error("layer_sequences: assignment count mismatch");
  std::vector<std::size_t> order(mhaps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto& x = mhaps[a];
    const auto& y = mhaps[b];
    return std::tie(x.sample_id, x.window.begin, x.mask, x.channel) < std::tie(y.sample_id, y.window.begin, y.mask, y.channel);
  });
  std::vector<std::vector<std::size_t>> seqs;
  std::size_t current = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& m = mhaps[order[i]];
    if (i == 0 || m.sample_id != current) {
      seqs.emplace_back();
      current = m.sample_id;
    }
    seqs.back().push_back(assignments[order[i]]);
  }
  return seqs;
}

std::size_t MergedGraph::node_count() const {
  return std::accumulate(cluster_counts.begin(), cluster_counts.end(), std::size_t{0});
}

std::size_t MergedGraph::node_id(std::size_t layer, std::size_t cluster) const {
  if (layer >= cluster_counts.size() || cluster >= cluster_counts[layer])
    throw Error("node (" + std::to_string(layer) + ", " + std::to_string(cluster) + ") not in graph");
  return offsets[layer] + cluster;
}

std::pair<std::size_t, std::size_t> MergedGraph::layer_cluster(std::size_t node) const {
  for (std::size_t l = 0; l < cluster_counts.size(); ++l)
    if (node < offsets[l] + cluster_counts[l]) return {l, node - offsets[l]};
  throw Error("node " + std::to_string(node) + " not in graph");
}

std::vector<GraphEdge> MergedGraph::edges() const {
  std::vector<GraphEdge> out;
  for (const auto& [key, w] : intra) out.push_back({key.first, key.second, w, EdgeKind::Intra});
  for (const auto& [key, w] : cross) out.push_back({key.first, key.second, w, EdgeKind::Cross});
  std::sort(out.begin(), out.end(), [](const GraphEdge& a, const GraphEdge& b) {
    return std::tie(a.src, a.dst, a.kind) < std::tie(b.src, b.dst, b.kind);
  });
  return out;
}

std::vector<std::vector<std::pair<std::size_t, double>>> MergedGraph::adjacency() const {
  std::vector<std::vector<std::pair<std::size_t, double>>> adj(node_count());
  for (const auto& e : edges()) {
    auto& list = adj[e.src];
    if (!list.empty() && list.back().first == e.dst)
      list.back().second += static_cast<double>(e.weight);
    else
      list.emplace_back(e.dst, static_cast<double>(e.weight));
  }
  return adj;
}

MergedGraph make_merged_graph(const std::vector<std::size_t>& cluster_counts) {
  MergedGraph g;
  g.cluster_counts = cluster_counts;
  std::size_t off = 0;
  for (std::size_t k : cluster_counts) {
    g.offsets.push_back(off);
    off += k;
  }
  return g;
}

MergedGraph merge_graphs(const std::vector<LayerGraph>& layer_graphs, const std::vector<std::vector<MHAP>>& mhaps,
                         const std::vector<std::vector<std::size_t>>& assignments, const TrainedCNN& model) {
  const std::size_t L = layer_graphs.size();
  if (L != model.num_layers() || mhaps.size() != L || assignments.size() != L)
    throw Error("merge_graphs: inconsistent provenance: " + std::to_string(L) + " layer graphs, " +
                std::to_string(mhaps.size()) + " MHAP layers, model has " + std::to_string(model.num_layers()));
  std::vector<std::size_t> counts;
  for (std::size_t l = 0; l < L; ++l) {
    if (layer_graphs[l].layer != l) throw Error("merge_graphs: layer graphs out of order");
    if (mhaps[l].size() != assignments[l].size())
      throw Error("merge_graphs: inconsistent provenance: layer " + std::to_string(l) + " assignment count mismatch");
    for (auto a : assignments[l])
      if (a >= layer_graphs[l].num_nodes)
        throw Error("merge_graphs: inconsistent provenance: layer " + std::to_string(l) + " graph has " +
                    std::to_string(layer_graphs[l].num_nodes) + " nodes but an MHAP is assigned to cluster " +
                    std::to_string(a));
    counts.push_back(layer_graphs[l].num_nodes);
  }
  MergedGraph g = make_merged_graph(counts);
  for (std::size_t l = 0; l < L; ++l)
    for (const auto& [key, w] : layer_graphs[l].edges) g.intra[{g.node_id(l, key.first), g.node_id(l, key.second)}] += w;

  // (sample, mask) -> lower-layer MHAP indices sorted by neuron
  using Key = std::pair<std::size_t, std::string>;
  for (std::size_t l = 1; l < L; ++l) {
    std::map<Key, std::vector<std::size_t>> lower;
    for (std::size_t i = 0; i < mhaps[l - 1].size(); ++i) {
      const auto& m = mhaps[l - 1][i];
      lower[{m.sample_id, m.mask.bits()}].push_back(i);
    }
    for (auto& [key, idx] : lower)
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return mhaps[l - 1][a].neuron < mhaps[l - 1][b].neuron; });
    const std::size_t kernel = model.conv[l].kernel;
    for (std::size_t i = 0; i < mhaps[l].size(); ++i) {
      const auto& up = mhaps[l][i];
      const auto it = lower.find({up.sample_id, up.mask.bits()});
      if (it == lower.end()) continue;
      const std::size_t lo = up.neuron, hi = up.neuron + kernel - 1;
      const auto& idx = it->second;
      auto first = std::lower_bound(idx.begin(), idx.end(), lo,
                                    [&](std::size_t a, std::size_t v) { return mhaps[l - 1][a].neuron < v; });
      for (auto p = first; p != idx.end() && mhaps[l - 1][*p].neuron <= hi; ++p)
        ++g.cross[{g.node_id(l - 1, assignments[l - 1][*p]), g.node_id(l, assignments[l][i])}];
    }
  }
  return g;
}

GraphStats graph_stats(const MergedGraph& g) {
  GraphStats s;
  s.nodes = g.node_count();
  s.per_layer.resize(g.cluster_counts.size());
  for (std::size_t l = 0; l < g.cluster_counts.size(); ++l) s.per_layer[l].nodes = g.cluster_counts[l];
  for (const auto& [key, w] : g.intra) {
    auto& ls = s.per_layer[g.layer_cluster(key.first).first];
    ++ls.intra_edges;
    ls.intra_weight += w;
    ++s.edges;
    s.total_weight += w;
  }
  for (const auto& [key, w] : g.cross) {
    auto& ls = s.per_layer[g.layer_cluster(key.second).first];
    ++ls.cross_in_edges;
    ls.cross_in_weight += w;
    ++s.edges;
    s.total_weight += w;
  }
  return s;
}

void write_dot(std::ostream& out, const MergedGraph& g, const DotOptions& opts) {
  std::vector<bool> keep(g.node_count(), !opts.restrict_to.has_value());
  if (opts.restrict_to)
    for (auto n : *opts.restrict_to)
      if (n < keep.size()) keep[n] = true;
  out << "digraph " << opts.name << " {\n";
  out << "  rankdir=LR;\n";
  for (std::size_t l = 0; l < g.cluster_counts.size(); ++l) {
    out << "  subgraph cluster_layer" << l << " {\n    label=\"layer " << l << "\";\n";
    for (std::size_t c = 0; c < g.cluster_counts[l]; ++c) {
      const auto id = g.node_id(l, c);
      if (keep[id]) out << "    n" << id << " [label=\"L" << l << "C" << c << "\"];\n";
    }
    out << "  }\n";
  }
  for (const auto& e : g.edges()) {
    if (!keep[e.src] || !keep[e.dst]) continue;
    const bool hot = std::find(opts.highlight.begin(), opts.highlight.end(), EdgeKey{e.src, e.dst}) != opts.highlight.end();
    out << "  n" << e.src << " -> n" << e.dst << " [weight=" << e.weight << ", label=\"" << e.weight << "\"";
    if (e.kind == EdgeKind::Cross) out << ", style=dashed";
    if (hot && e.kind == EdgeKind::Intra) out << ", color=red, penwidth=2.5";
    out << "];\n";
  }
  out << "}\n";
}

void write_adjacency(std::ostream& out, const MergedGraph& g) {
  out << "# mts2graph-graph v1\n# cluster_counts";
  for (auto k : g.cluster_counts) out << '\t' << k;
  out << "\n# src\tdst\tweight\tkind\n";
  for (const auto& e : g.edges())
    out << e.src << '\t' << e.dst << '\t' << e.weight << '\t' << (e.kind == EdgeKind::Intra ? "intra" : "cross") << '\n';
}

MergedGraph read_adjacency(std::istream& in) {
  std::string line;
  std::optional<MergedGraph> g;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.rfind("# cluster_counts", 0) == 0) {
      std::istringstream ss(line.substr(16));
      std::vector<std::size_t> counts;
      std::size_t k;
      while (ss >> k) counts.push_back(k);
      g = make_merged_graph(counts);
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    if (!g) throw Error("graph file: missing cluster_counts header");
    std::istringstream ss(line);
    std::size_t src, dst;
    std::uint64_t w;
    std::string kind;
    if (!(ss >> src >> dst >> w >> kind)) throw Error("graph file: malformed line " + std::to_string(lineno));
    if (src >= g->node_count() || dst >= g->node_count())
      throw Error("graph file: node out of range on line " + std::to_string(lineno));
    if (kind == "intra")
      g->intra[{src, dst}] += w;
    else if (kind == "cross")
      g->cross[{src, dst}] += w;
    else
      throw Error("graph file: unknown edge kind '" + kind + "'");
  }
  if (!g) throw Error("graph file: missing cluster_counts header");
  return *g;
}

}  // namespace mts2graph
