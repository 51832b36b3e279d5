#include "mts2graph/embedding.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace mts2graph {

void EmbeddingConfig::validate() const {
  if (dim < 1) throw Error("embedding: dim must be at least 1");
  if (walk_length < 2) throw Error("embedding: walk_length must be at least 2");
  if (window < 1) throw Error("embedding: window must be at least 1");
  if (!(learning_rate > 0.0)) throw Error("embedding: learning_rate must be positive");
}

std::vector<Walk> random_walks(const Adjacency& adj, const EmbeddingConfig& cfg) {
  cfg.validate();
  const std::size_t n = adj.size();
  if (n == 0) throw Error("random_walks: graph has no nodes");
  std::vector<Walk> corpus(n * cfg.walks_per_node);
  const auto total = static_cast<std::ptrdiff_t>(corpus.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t w = 0; w < total; ++w) {
    const auto uw = static_cast<std::size_t>(w);
    std::mt19937_64 rng(derive_seed(cfg.seed, "walk", uw));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Walk walk{uw % n};
    while (walk.size() < cfg.walk_length) {
      const auto& out = adj[walk.back()];
      double sum = 0.0;
      for (const auto& [dst, wt] : out) sum += wt;
      if (out.empty() || sum <= 0.0) break;
      const double u = unif(rng) * sum;
      double acc = 0.0;
      std::size_t next = out.back().first;
      for (const auto& [dst, wt] : out) {
        acc += wt;
        if (u < acc) {
          next = dst;
          break;
        }
      }
      walk.push_back(next);
    }
    corpus[uw] = std::move(walk);
  }
  return corpus;
}

std::vector<Walk> random_walks(const MergedGraph& g, const EmbeddingConfig& cfg) { return random_walks(g.adjacency(), cfg); }

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

// Cumulative unigram^0.75 table over corpus frequencies.
class NoiseSampler {
 public:
  NoiseSampler(const std::vector<Walk>& corpus, std::size_t num_nodes) : cumulative_(num_nodes, 0.0) {
    std::vector<double> freq(num_nodes, 0.0);
    for (const auto& w : corpus)
      for (auto v : w) freq[v] += 1.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < num_nodes; ++i) {
      acc += std::pow(freq[i], 0.75);
      cumulative_[i] = acc;
    }
  }
  std::size_t operator()(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unif(0.0, cumulative_.back());
    const double u = unif(rng);
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), cumulative_.size() - 1);
  }

 private:
  std::vector<double> cumulative_;
};

template <typename Fn>
void for_each_pair(const std::vector<Walk>& corpus, std::size_t window, Fn&& fn) {
  for (const auto& walk : corpus)
    for (std::size_t i = 0; i < walk.size(); ++i) {
      const std::size_t lo = i >= window ? i - window : 0;
      const std::size_t hi = std::min(walk.size() - 1, i + window);
      for (std::size_t j = lo; j <= hi; ++j)
        if (j != i) fn(walk[i], walk[j]);
    }
}

std::size_t corpus_nodes(const std::vector<Walk>& corpus) {
  std::size_t n = 0;
  for (const auto& w : corpus)
    for (auto v : w) n = std::max(n, v + 1);
  return n;
}

}  // namespace

double sgns_loss(std::span<const double> center, const std::vector<std::span<const double>>& outputs,
                 std::vector<double>* grad_center, std::vector<std::vector<double>>* grad_outputs) {
  const std::size_t D = center.size();
  double loss = 0.0;
  if (grad_center) grad_center->assign(D, 0.0);
  if (grad_outputs) grad_outputs->assign(outputs.size(), std::vector<double>(D, 0.0));
  for (std::size_t k = 0; k < outputs.size(); ++k) {
    const double label = k == 0 ? 1.0 : 0.0;
    const double s = dot(center, outputs[k]);
    loss -= k == 0 ? log_sigmoid(s) : log_sigmoid(-s);
    const double g = sigmoid(s) - label;
    for (std::size_t d = 0; d < D; ++d) {
      if (grad_center) (*grad_center)[d] += g * outputs[k][d];
      if (grad_outputs) (*grad_outputs)[k][d] = g * center[d];
    }
  }
  return loss;
}

double corpus_loss(const Matrix& input, const Matrix& output, const std::vector<Walk>& corpus, const EmbeddingConfig& cfg,
                   std::uint64_t seed) {
  const NoiseSampler noise(corpus, input.rows);
  std::mt19937_64 rng(seed);
  double total = 0.0;
  std::size_t count = 0;
  std::vector<std::span<const double>> outs;
  for_each_pair(corpus, cfg.window, [&](std::size_t u, std::size_t v) {
    outs.assign(1, output.row(v));
    for (std::size_t k = 0; k < cfg.negatives; ++k) outs.push_back(output.row(noise(rng)));
    total += sgns_loss(input.row(u), outs, nullptr, nullptr);
    ++count;
  });
  return count ? total / static_cast<double>(count) : 0.0;
}

NodeEmbeddings train_skipgram(const std::vector<Walk>& corpus, const EmbeddingConfig& cfg, std::size_t num_nodes) {
  cfg.validate();
  if (corpus.empty()) throw Error("train_skipgram: empty corpus");
  num_nodes = std::max(num_nodes, corpus_nodes(corpus));
  const std::size_t D = cfg.dim;

  NodeEmbeddings emb;
  emb.dim = D;
  emb.vectors = Matrix(num_nodes, D);
  Matrix output(num_nodes, D, 0.0);
  std::mt19937_64 rng(derive_seed(cfg.seed, "skipgram-init"));
  std::uniform_real_distribution<double> init(-0.5 / static_cast<double>(D), 0.5 / static_cast<double>(D));
  for (double& v : emb.vectors.data) v = init(rng);

  const NoiseSampler noise(corpus, num_nodes);
  std::size_t pairs_per_epoch = 0;
  for_each_pair(corpus, cfg.window, [&](std::size_t, std::size_t) { ++pairs_per_epoch; });
  const double total_steps = static_cast<double>(std::max<std::size_t>(1, pairs_per_epoch * cfg.epochs));
  const std::uint64_t eval_seed = derive_seed(cfg.seed, "skipgram-eval");

  emb.initial_loss = corpus_loss(emb.vectors, output, corpus, cfg, eval_seed);

  std::vector<double> grad_u(D);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for_each_pair(corpus, cfg.window, [&](std::size_t u, std::size_t v) {
      const double lr = cfg.learning_rate * std::max(1e-4, 1.0 - static_cast<double>(step) / total_steps);
      ++step;
      auto in = emb.vectors.row(u);
      std::fill(grad_u.begin(), grad_u.end(), 0.0);
      for (std::size_t k = 0; k <= cfg.negatives; ++k) {
        std::size_t target = v;
        double label = 1.0;
        if (k > 0) {
          target = noise(rng);
          if (target == v) continue;
          label = 0.0;
        }
        auto out = output.row(target);
        const double g = (sigmoid(dot(in, out)) - label) * lr;
        for (std::size_t d = 0; d < D; ++d) {
          grad_u[d] += g * out[d];
          out[d] -= g * in[d];
        }
      }
      for (std::size_t d = 0; d < D; ++d) in[d] -= grad_u[d];
    });
    emb.epoch_loss.push_back(corpus_loss(emb.vectors, output, corpus, cfg, eval_seed));
  }
  return emb;
}

NodeEmbeddings embed_graph(const MergedGraph& g, const EmbeddingConfig& cfg) {
  if (g.node_count() == 0) throw Error("embed_graph: empty graph");
  return train_skipgram(random_walks(g, cfg), cfg, g.node_count());
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

void write_embeddings(std::ostream& out, const NodeEmbeddings& emb, std::uint64_t seed) {
  out << "# " << emb.size() << ' ' << emb.dim << ' ' << seed << '\n';
  const auto old = out.precision(17);
  for (std::size_t i = 0; i < emb.size(); ++i) {
    out << i;
    for (double v : emb[i]) out << ' ' << v;
    out << '\n';
  }
  out.precision(old);
}

NodeEmbeddings read_embeddings(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.size() < 2 || line[0] != '#') throw Error("embedding file: missing header");
  std::istringstream hs(line.substr(1));
  std::size_t n = 0, D = 0;
  std::uint64_t seed = 0;
  if (!(hs >> n >> D >> seed)) throw Error("embedding file: malformed header");
  NodeEmbeddings emb;
  emb.dim = D;
  emb.vectors = Matrix(n, D);
  std::vector<bool> seen(n, false);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::size_t id;
    if (!(ss >> id) || id >= n) throw Error("embedding file: bad node id");
    for (double& v : emb.vectors.row(id))
      if (!(ss >> v)) throw Error("embedding file: short row for node " + std::to_string(id));
    seen[id] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) throw Error("embedding file: missing node rows");
  return emb;
}

}  // namespace mts2graph
