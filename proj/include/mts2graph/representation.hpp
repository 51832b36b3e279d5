#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "mts2graph/common.hpp"
#include "mts2graph/embedding.hpp"

namespace mts2graph {

/// An assigned MHAP reduced to what the representation needs.
struct NodeHit {
  std::size_t window_begin = 0;
  std::size_t node = 0;
};

/// ceil(T / segment_length)
std::size_t segment_count(std::size_t T, std::size_t segment_length);

/// Segment m covers [m*s, min((m+1)*s, T) - 1]; a hit belongs to the segment holding its
/// window start. Block m of the output is the sum of the hits' embeddings in segment m.
/// Output length is segment_count(T, s) * D.
std::vector<double> represent_sample(std::span<const NodeHit> hits, const NodeEmbeddings& emb,
                                     std::size_t segment_length, std::size_t T);

/// Row i = represent_sample(hits[i]).
Matrix represent_dataset(const std::vector<std::vector<NodeHit>>& hits, const NodeEmbeddings& emb,
                         std::size_t segment_length, std::size_t T);

/// Rows "label v_0 ... v_{MD-1}".
void write_features(std::ostream& out, const Matrix& X, const std::vector<int>& labels);
void read_features(std::istream& in, Matrix& X, std::vector<int>& labels);

}  // namespace mts2graph
