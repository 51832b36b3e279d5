#include "mts2graph/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

namespace mts2graph {

void GBDTConfig::validate() const {
  if (rounds < 1) throw Error("gbdt: rounds must be at least 1");
  if (max_depth < 1) throw Error("gbdt: max_depth must be at least 1");
  if (!(learning_rate > 0.0)) throw Error("gbdt: learning_rate must be positive");
  if (min_samples_leaf < 1) throw Error("gbdt: min_samples_leaf must be at least 1");
  if (!(lambda >= 0.0)) throw Error("gbdt: lambda must be non-negative");
}

double RegressionTree::predict(std::span<const double> x) const {
  if (nodes.empty()) return 0.0;
  int i = 0;
  while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
    const auto& n = nodes[static_cast<std::size_t>(i)];
    i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(i)].value;
}

std::vector<double> GBDTModel::scores(std::span<const double> x) const {
  if (x.size() != num_features)
    throw Error("gbdt: expected " + std::to_string(num_features) + " features, got " + std::to_string(x.size()));
  std::vector<double> s(num_classes, 0.0);
  for (const auto& round : rounds)
    for (std::size_t c = 0; c < num_classes; ++c) s[c] += learning_rate * round[c].predict(x);
  return s;
}

SoftmaxGradients softmax_gradients(const Matrix& scores, const std::vector<int>& y) {
  const std::size_t n = scores.rows, C = scores.cols;
  if (y.size() != n) throw Error("softmax_gradients: label count mismatch");
  SoftmaxGradients out{0.0, Matrix(n, C), Matrix(n, C)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto p = softmax(scores.row(i));
    const auto yi = static_cast<std::size_t>(y[i]);
    out.loss -= std::log(std::max(p[yi], 1e-300));
    for (std::size_t c = 0; c < C; ++c) {
      out.grad(i, c) = p[c] - (c == yi ? 1.0 : 0.0);
      out.hess(i, c) = std::max(p[c] * (1.0 - p[c]), 1e-16);
    }
  }
  if (n) out.loss /= static_cast<double>(n);
  return out;
}

namespace {

struct SplitCandidate {
  double gain = 0.0;
  int feature = -1;
  double threshold = 0.0;
};

double leaf_value(double G, double H, double lambda) { return -G / (H + lambda); }
double score(double G, double H, double lambda) { return G * G / (H + lambda); }

// Level-wise exact greedy growth. `order[f]` lists sample indices sorted by feature f.
RegressionTree grow_tree(const Matrix& X, const std::vector<std::vector<std::uint32_t>>& order, std::span<const double> g,
                         std::span<const double> h, const GBDTConfig& cfg) {
  const std::size_t n = X.rows, F = X.cols;
  RegressionTree tree;
  std::vector<int> node_of(n, 0);  // tree node each sample currently sits in

  struct Open {
    int node;
    double G, H;
    std::size_t count;
  };
  double G0 = 0, H0 = 0;
  for (std::size_t i = 0; i < n; ++i) G0 += g[i], H0 += h[i];
  tree.nodes.push_back(TreeNode{-1, 0.0, -1, -1, leaf_value(G0, H0, cfg.lambda)});
  std::vector<Open> open{{0, G0, H0, n}};

  for (std::size_t depth = 0; depth < cfg.max_depth && !open.empty(); ++depth) {
    std::vector<int> slot(tree.nodes.size(), -1);
    for (std::size_t k = 0; k < open.size(); ++k) slot[static_cast<std::size_t>(open[k].node)] = static_cast<int>(k);
    const std::size_t K = open.size();

    std::vector<std::vector<SplitCandidate>> per_feature(F, std::vector<SplitCandidate>(K));
    const auto nf = static_cast<std::ptrdiff_t>(F);
#pragma omp parallel for schedule(dynamic, 16)
    for (std::ptrdiff_t fi = 0; fi < nf; ++fi) {
      const auto f = static_cast<std::size_t>(fi);
      std::vector<double> GL(K, 0.0), HL(K, 0.0), last(K, 0.0);
      std::vector<std::size_t> nL(K, 0);
      auto& best = per_feature[f];
      for (std::uint32_t i : order[f]) {
        const int s = slot[static_cast<std::size_t>(node_of[i])];
        if (s < 0) continue;
        const auto k = static_cast<std::size_t>(s);
        const double x = X(i, f);
        if (nL[k] > 0 && x != last[k] && nL[k] >= cfg.min_samples_leaf && open[k].count - nL[k] >= cfg.min_samples_leaf) {
          const double GR = open[k].G - GL[k], HR = open[k].H - HL[k];
          const double gain = score(GL[k], HL[k], cfg.lambda) + score(GR, HR, cfg.lambda) - score(open[k].G, open[k].H, cfg.lambda);
          if (gain > best[k].gain) {
            double thr = last[k] + (x - last[k]) / 2.0;
            if (!(thr < x)) thr = last[k];
            best[k] = {gain, static_cast<int>(f), thr};
          }
        }
        GL[k] += g[i];
        HL[k] += h[i];
        ++nL[k];
        last[k] = x;
      }
    }

    std::vector<Open> next;
    std::vector<SplitCandidate> chosen(K);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t k = 0; k < K; ++k)
        if (per_feature[f][k].gain > chosen[k].gain + 1e-12) chosen[k] = per_feature[f][k];

    for (std::size_t k = 0; k < K; ++k) {
      if (chosen[k].feature < 0) continue;
      const auto parent = static_cast<std::size_t>(open[k].node);
      const int left = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back(TreeNode{});
      tree.nodes.push_back(TreeNode{});
      tree.nodes[parent].feature = chosen[k].feature;
      tree.nodes[parent].threshold = chosen[k].threshold;
      tree.nodes[parent].left = left;
      tree.nodes[parent].right = left + 1;
      tree.nodes[parent].value = 0.0;
    }
    // route samples and accumulate child statistics
    std::vector<double> cG(tree.nodes.size(), 0.0), cH(tree.nodes.size(), 0.0);
    std::vector<std::size_t> cN(tree.nodes.size(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto& nd = tree.nodes[static_cast<std::size_t>(node_of[i])];
      if (nd.feature < 0) continue;
      node_of[i] = X(i, static_cast<std::size_t>(nd.feature)) <= nd.threshold ? nd.left : nd.right;
      const auto c = static_cast<std::size_t>(node_of[i]);
      cG[c] += g[i];
      cH[c] += h[i];
      ++cN[c];
    }
    for (std::size_t k = 0; k < K; ++k) {
      const auto& parent = tree.nodes[static_cast<std::size_t>(open[k].node)];
      if (parent.feature < 0) continue;
      for (int c : {parent.left, parent.right}) {
        const auto uc = static_cast<std::size_t>(c);
        tree.nodes[uc].value = leaf_value(cG[uc], cH[uc], cfg.lambda);
        next.push_back({c, cG[uc], cH[uc], cN[uc]});
      }
    }
    open = std::move(next);
  }
  return tree;
}

void check_inputs(const Matrix& X, const std::vector<int>& y) {
  if (y.size() != X.rows) throw Error("gbdt: label count does not match row count");
  for (std::size_t i = 0; i < X.rows; ++i)
    for (std::size_t f = 0; f < X.cols; ++f)
      if (!std::isfinite(X(i, f)))
        throw Error("gbdt: non-finite feature at row " + std::to_string(i) + ", column " + std::to_string(f));
}

}  // namespace

GBDTModel fit(const Matrix& X, const std::vector<int>& y, const GBDTConfig& cfg) {
  cfg.validate();
  check_inputs(X, y);
  if (X.rows == 0) throw Error("gbdt: empty training set");
  for (int v : y)
    if (v < 0) throw Error("gbdt: negative label");
  const std::size_t C = static_cast<std::size_t>(*std::max_element(y.begin(), y.end())) + 1;
  if (std::all_of(y.begin(), y.end(), [&](int v) { return v == y.front(); }))
    throw Error("gbdt: training labels contain a single class");

  const std::size_t n = X.rows, F = X.cols;
  GBDTModel model;
  model.num_features = F;
  model.num_classes = C;
  model.learning_rate = cfg.learning_rate;
  model.seed = cfg.seed;

  std::vector<std::vector<std::uint32_t>> order(F, std::vector<std::uint32_t>(n));
  const auto nf = static_cast<std::ptrdiff_t>(F);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t fi = 0; fi < nf; ++fi) {
    auto& o = order[static_cast<std::size_t>(fi)];
    std::iota(o.begin(), o.end(), 0u);
    std::stable_sort(o.begin(), o.end(), [&](std::uint32_t a, std::uint32_t b) {
      return X(a, static_cast<std::size_t>(fi)) < X(b, static_cast<std::size_t>(fi));
    });
  }

  Matrix scores(n, C, 0.0);
  std::vector<double> g(n), h(n);
  auto grads = softmax_gradients(scores, y);
  model.train_loss.push_back(grads.loss);
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    std::vector<RegressionTree> trees(C);
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t i = 0; i < n; ++i) g[i] = grads.grad(i, c), h[i] = grads.hess(i, c);
      trees[c] = grow_tree(X, order, g, h, cfg);
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < C; ++c) scores(i, c) += cfg.learning_rate * trees[c].predict(X.row(i));
    model.rounds.push_back(std::move(trees));
    grads = softmax_gradients(scores, y);
    model.train_loss.push_back(grads.loss);
  }
  return model;
}

GBDTPrediction predict(const GBDTModel& model, const Matrix& X) {
  if (X.cols != model.num_features)
    throw Error("gbdt: expected " + std::to_string(model.num_features) + " features, got " + std::to_string(X.cols));
  for (double v : X.data)
    if (!std::isfinite(v)) throw Error("gbdt: non-finite feature value");
  GBDTPrediction out{Matrix(X.rows, model.num_classes), std::vector<int>(X.rows)};
  for (std::size_t i = 0; i < X.rows; ++i) {
    const auto p = softmax(model.scores(X.row(i)));
    std::copy(p.begin(), p.end(), out.probs.row(i).begin());
    out.labels[i] = static_cast<int>(argmax(std::span<const double>(p)));
  }
  return out;
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) throw Error("accuracy: size mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += predicted[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

double evaluate(const GBDTModel& model, const Matrix& X, const std::vector<int>& y) {
  if (y.size() != X.rows) throw Error("gbdt: label count does not match row count");
  return accuracy(predict(model, X).labels, y);
}

void write_gbdt(std::ostream& out, const GBDTModel& model) {
  const auto old = out.precision(17);
  out << "mts2graph-gbdt 1\n";
  out << "classes " << model.num_classes << " features " << model.num_features << " rounds " << model.rounds.size()
      << " learning_rate " << model.learning_rate << " seed " << model.seed << '\n';
  out << "train_loss";
  for (double l : model.train_loss) out << ' ' << l;
  out << '\n';
  for (std::size_t r = 0; r < model.rounds.size(); ++r)
    for (std::size_t c = 0; c < model.num_classes; ++c) {
      const auto& t = model.rounds[r][c];
      out << "tree " << r << ' ' << c << ' ' << t.nodes.size() << '\n';
      for (const auto& n : t.nodes) out << n.feature << ' ' << n.threshold << ' ' << n.left << ' ' << n.right << ' ' << n.value << '\n';
    }
  out.precision(old);
}

GBDTModel read_gbdt(std::istream& in) {
  std::string tag;
  int version = 0;
  if (!(in >> tag >> version) || tag != "mts2graph-gbdt") throw Error("gbdt model: bad header");
  if (version != 1) throw Error("gbdt model: unsupported version " + std::to_string(version));
  GBDTModel m;
  std::size_t R = 0;
  std::string k1, k2, k3, k4, k5;
  if (!(in >> k1 >> m.num_classes >> k2 >> m.num_features >> k3 >> R >> k4 >> m.learning_rate >> k5 >> m.seed) || k1 != "classes")
    throw Error("gbdt model: malformed summary line");
  std::string line;
  std::getline(in, line);
  if (!std::getline(in, line) || line.rfind("train_loss", 0) != 0) throw Error("gbdt model: missing train_loss");
  {
    std::istringstream ss(line.substr(10));
    double v;
    while (ss >> v) m.train_loss.push_back(v);
  }
  m.rounds.assign(R, std::vector<RegressionTree>(m.num_classes));
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < m.num_classes; ++c) {
      std::size_t rr, cc, nn;
      if (!(in >> tag >> rr >> cc >> nn) || tag != "tree" || rr != r || cc != c) throw Error("gbdt model: malformed tree header");
      auto& t = m.rounds[r][c];
      t.nodes.resize(nn);
      for (auto& n : t.nodes) {
        if (!(in >> n.feature >> n.threshold >> n.left >> n.right >> n.value)) throw Error("gbdt model: truncated tree");
        const int lim = static_cast<int>(nn);
        if (n.feature >= static_cast<int>(m.num_features) || (n.feature >= 0 && (n.left <= 0 || n.left >= lim || n.right <= 0 || n.right >= lim)))
          throw Error("gbdt model: invalid node");
      }
    }
  return m;
}

}  // namespace mts2graph
