#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mts2graph {

/// Shape-based distance and the shift that aligns y to x.
struct SbdResult {
  double distance = 1.0;
  std::ptrdiff_t shift = 0;
};

/// cc[s + n - 1] = sum_i x[i] * y[i - s] for s in [-(n - 1), n - 1] (zero outside the range).
std::vector<double> cross_correlation_direct(std::span<const double> x, std::span<const double> y);
/// Same sequence computed through FFTW.
std::vector<double> cross_correlation_fft(std::span<const double> x, std::span<const double> y);

/// Vectors at least this long use the FFT route inside `sbd`.
inline constexpr std::size_t kFftThreshold = 64;

/// 1 - max_s cc(x, y, s) / (|x| |y|). The returned shift s satisfies
/// shift_zero_pad(y, s) ~ x. Zero-norm input gives distance 1, shift 0.
SbdResult sbd(std::span<const double> x, std::span<const double> y);

/// out[i] = y[i - s], zero where i - s falls outside y.
std::vector<double> shift_zero_pad(std::span<const double> y, std::ptrdiff_t s);

struct ShapeExtractionOptions {
  std::size_t max_iter = 100;
  double tol = 1e-8;
};

/// K-shape centroid update: aligns members to `ref`, then returns the z-normalised dominant
/// eigenvector of Q^T S Q with S = X^T X over the aligned z-normalised members and Q the
/// centring matrix, sign fixed so that it correlates non-negatively with `ref`
/// (with the member mean when `ref` is zero).
std::vector<double> shape_extraction(const std::vector<std::vector<double>>& members, std::span<const double> ref,
                                     const ShapeExtractionOptions& opts = {});

/// Clusters of one layer.
struct LayerClusters {
  std::size_t k = 0;
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> assignments;
  double inertia = 0.0;
  std::vector<double> inertia_trace;  // inertia after each accepted iteration of the winning restart
  std::size_t iterations = 0;
};

struct KShapeOptions {
  std::size_t max_iter = 100;
  std::size_t restarts = 5;
};

/// K-shape over z-normalised copies of `vectors`. Each restart starts from a seeded random
/// balanced assignment; the restart with the lowest inertia wins. An iteration that would raise
/// the inertia is rejected and ends that restart.
LayerClusters kshape_cluster(const std::vector<std::vector<double>>& vectors, std::size_t k, std::uint64_t seed,
                             const KShapeOptions& opts = {});

struct Assignment {
  std::size_t id = 0;
  double distance = 0.0;
};

/// Nearest centroid by SBD of the z-normalised vector; ties to the lowest id.
Assignment assign(std::span<const double> v, const LayerClusters& clusters);

struct ClusterModel {
  std::vector<LayerClusters> layers;
  std::uint64_t seed = 0;
};

/// Container with a JSON index (k, seed, inertia per layer) followed by little-endian
/// float64 centroid blobs and uint32 assignment blobs; see docs/formats.md.
std::string serialize_cluster_model(const ClusterModel& model);
ClusterModel deserialize_cluster_model(const std::string& bytes);

/// Final inertia for each cluster count in `ks` (elbow curve).
std::vector<double> kshape_elbow(const std::vector<std::vector<double>>& vectors, const std::vector<std::size_t>& ks,
                                 std::uint64_t seed, const KShapeOptions& opts = {});

}  // namespace mts2graph
