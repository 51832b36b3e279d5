#include "mts2graph/representation.hpp"

#include <istream>
#include <ostream>
#include <sstream>

namespace mts2graph {

std::size_t segment_count(std::size_t T, std::size_t segment_length) {
  if (segment_length == 0) throw Error("segment_length must be positive");
  return (T + segment_length - 1) / segment_length;
}

std::vector<double> represent_sample(std::span<const NodeHit> hits, const NodeEmbeddings& emb,
                                     std::size_t segment_length, std::size_t T) {
  const std::size_t M = segment_count(T, segment_length);
  const std::size_t D = emb.dim;
  std::vector<double> out(M * D, 0.0);
  for (const auto& h : hits) {
    if (h.node >= emb.size()) throw Error("represent_sample: unknown node id " + std::to_string(h.node));
    if (h.window_begin >= T) throw Error("represent_sample: window start beyond series length");
    const std::size_t m = h.window_begin / segment_length;
    const auto v = emb[h.node];
    for (std::size_t d = 0; d < D; ++d) out[m * D + d] += v[d];
  }
  return out;
}

Matrix represent_dataset(const std::vector<std::vector<NodeHit>>& hits, const NodeEmbeddings& emb,
                         std::size_t segment_length, std::size_t T) {
  Matrix X(hits.size(), segment_count(T, segment_length) * emb.dim);
  const auto n = static_cast<std::ptrdiff_t>(hits.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    const auto row = represent_sample(hits[ui], emb, segment_length, T);
    std::copy(row.begin(), row.end(), X.row(ui).begin());
  }
  return X;
}

void write_features(std::ostream& out, const Matrix& X, const std::vector<int>& labels) {
  if (labels.size() != X.rows) throw Error("write_features: label count mismatch");
  const auto old = out.precision(17);
  for (std::size_t i = 0; i < X.rows; ++i) {
    out << labels[i];
    for (double v : X.row(i)) out << ' ' << v;
    out << '\n';
  }
  out.precision(old);
}

void read_features(std::istream& in, Matrix& X, std::vector<int>& labels) {
  std::vector<std::vector<double>> rows;
  labels.clear();
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    int label;
    if (!(ss >> label)) throw Error("feature file: missing label");
    std::vector<double> row;
    double v;
    while (ss >> v) row.push_back(v);
    if (!rows.empty() && row.size() != rows.front().size()) throw Error("feature file: ragged rows");
    labels.push_back(label);
    rows.push_back(std::move(row));
  }
  X = Matrix(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), X.row(i).begin());
}

}  // namespace mts2graph
