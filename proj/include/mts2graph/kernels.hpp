#pragma once

// Data-parallel inner loops. Every kernel has a serial reference in
// `kernels::serial` and an OpenMP version in `kernels::parallel` with the same
// signature; the parallel versions partition independent outputs only, so the
// two produce bitwise-identical results. tests/test_kernels.cpp checks this and
// bench/kernels_bench.cpp compares their speed.

#include <cstddef>
#include <span>
#include <vector>

#include "mts2graph/common.hpp"

namespace mts2graph::kernels {

/// Shape of a valid (unpadded, stride 1) 1-D convolution.
struct ConvShape {
  std::size_t in_channels = 0;
  std::size_t in_length = 0;
  std::size_t filters = 0;
  std::size_t kernel = 0;
  std::size_t out_length() const { return in_length - kernel + 1; }
};

/// Best centroid per vector under the shape-based distance.
struct NearestResult {
  std::vector<std::size_t> ids;
  std::vector<double> distances;
};

namespace serial {

/// out[f][t] = bias[f] + sum_c sum_k w[f][c][k] * in[c][t + k], optionally passed through ReLU.
/// `in` is in_channels x in_length, `weights` filters x in_channels x kernel, `out` filters x out_length.
void conv1d_forward(const ConvShape& shape, std::span<const double> in, std::span<const double> weights,
                    std::span<const double> bias, std::span<double> out, bool relu);

/// For each vector, the centroid with minimum SBD (ties to the lowest id).
NearestResult nearest_centroids(const std::vector<std::vector<double>>& vectors,
                                const std::vector<std::vector<double>>& centroids);

}  // namespace serial

namespace parallel {

void conv1d_forward(const ConvShape& shape, std::span<const double> in, std::span<const double> weights,
                    std::span<const double> bias, std::span<double> out, bool relu);

NearestResult nearest_centroids(const std::vector<std::vector<double>>& vectors,
                                const std::vector<std::vector<double>>& centroids);

}  // namespace parallel

}  // namespace mts2graph::kernels
