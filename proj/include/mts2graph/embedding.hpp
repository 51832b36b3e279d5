#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <utility>
#include <vector>

#include "mts2graph/common.hpp"
#include "mts2graph/evograph.hpp"

namespace mts2graph {

struct EmbeddingConfig {
  std::size_t dim = 100;
  std::size_t walks_per_node = 20;
  std::size_t walk_length = 10;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double learning_rate = 0.025;  // decays linearly to 1e-4 of its value
  std::uint64_t seed = 0;

  void validate() const;
};

using Walk = std::vector<std::size_t>;
using Adjacency = std::vector<std::vector<std::pair<std::size_t, double>>>;

/// walks_per_node walks from every node; each step picks an out-neighbour with probability
/// proportional to edge weight and a node without out-edges ends the walk. Walk w of start
/// node v uses its own generator, so walks are generated in parallel and are deterministic.
/// Corpus order: walk round r, then start node.
std::vector<Walk> random_walks(const Adjacency& adj, const EmbeddingConfig& cfg);
std::vector<Walk> random_walks(const MergedGraph& g, const EmbeddingConfig& cfg);

struct NodeEmbeddings {
  std::size_t dim = 0;
  Matrix vectors;  // nodes x dim (input vectors of the skip-gram model)
  double initial_loss = 0.0;       // corpus_loss before the first update
  std::vector<double> epoch_loss;  // corpus_loss after each epoch, same negatives

  std::size_t size() const { return vectors.rows; }
  std::span<const double> operator[](std::size_t node) const { return vectors.row(node); }
};

/// Loss -log s(u.v_ctx) - sum_k log s(-u.v_neg_k) of one training example and its gradient
/// with respect to the centre vector `u` and every output vector.
/// `outputs[0]` is the context, the rest are negatives.
double sgns_loss(std::span<const double> center, const std::vector<std::span<const double>>& outputs,
                 std::vector<double>* grad_center, std::vector<std::vector<double>>* grad_outputs);

/// Skip-gram with negative sampling (unigram^0.75 noise), single threaded.
/// `num_nodes` defaults to 1 + the largest id in the corpus.
NodeEmbeddings train_skipgram(const std::vector<Walk>& corpus, const EmbeddingConfig& cfg, std::size_t num_nodes = 0);

/// Mean SGNS loss of the current input/output vectors over every (centre, context) pair of
/// the corpus with negatives drawn from a generator seeded by `seed`.
double corpus_loss(const Matrix& input, const Matrix& output, const std::vector<Walk>& corpus, const EmbeddingConfig& cfg,
                   std::uint64_t seed);

NodeEmbeddings embed_graph(const MergedGraph& g, const EmbeddingConfig& cfg);

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// "# nodes D seed" header followed by rows "node_id v_0 ... v_{D-1}".
void write_embeddings(std::ostream& out, const NodeEmbeddings& emb, std::uint64_t seed);
NodeEmbeddings read_embeddings(std::istream& in);

}  // namespace mts2graph
