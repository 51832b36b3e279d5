#include "mts2graph/kernels.hpp"

#include <algorithm>
#include <limits>

#include "mts2graph/kshape.hpp"

namespace mts2graph::kernels {

namespace {

inline void conv_filter(const ConvShape& s, std::span<const double> in, std::span<const double> w,
                        double bias, std::span<double> out_row, std::size_t f, bool relu) {
  const std::size_t L = s.out_length();
  std::fill(out_row.begin(), out_row.end(), bias);
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    const double* x = in.data() + c * s.in_length;
    const double* wk = w.data() + (f * s.in_channels + c) * s.kernel;
    for (std::size_t k = 0; k < s.kernel; ++k) {
      const double wv = wk[k];
      const double* xk = x + k;
      for (std::size_t t = 0; t < L; ++t) out_row[t] += wv * xk[t];
    }
  }
  if (relu)
    for (double& v : out_row) v = v > 0.0 ? v : 0.0;
}

inline void nearest_one(const std::vector<double>& v, const std::vector<std::vector<double>>& centroids,
                        std::size_t& id, double& dist) {
  id = 0;
  dist = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.size(); ++j) {
    const double d = sbd(v, centroids[j]).distance;
    if (d < dist) {
      dist = d;
      id = j;
    }
  }
}

}  // namespace

namespace serial {

void conv1d_forward(const ConvShape& shape, std::span<const double> in, std::span<const double> weights,
                    std::span<const double> bias, std::span<double> out, bool relu) {
  const std::size_t L = shape.out_length();
  for (std::size_t f = 0; f < shape.filters; ++f)
    conv_filter(shape, in, weights, bias[f], out.subspan(f * L, L), f, relu);
}

NearestResult nearest_centroids(const std::vector<std::vector<double>>& vectors,
                                const std::vector<std::vector<double>>& centroids) {
  NearestResult r;
  r.ids.resize(vectors.size());
  r.distances.resize(vectors.size());
  for (std::size_t i = 0; i < vectors.size(); ++i) nearest_one(vectors[i], centroids, r.ids[i], r.distances[i]);
  return r;
}

}  // namespace serial

namespace parallel {

void conv1d_forward(const ConvShape& shape, std::span<const double> in, std::span<const double> weights,
                    std::span<const double> bias, std::span<double> out, bool relu) {
  const std::size_t L = shape.out_length();
  const auto filters = static_cast<std::ptrdiff_t>(shape.filters);
#pragma omp parallel for schedule(static) if (shape.filters * L * shape.kernel * shape.in_channels > 32768)
  for (std::ptrdiff_t f = 0; f < filters; ++f) {
    const auto uf = static_cast<std::size_t>(f);
    conv_filter(shape, in, weights, bias[uf], out.subspan(uf * L, L), uf, relu);
  }
}

NearestResult nearest_centroids(const std::vector<std::vector<double>>& vectors,
                                const std::vector<std::vector<double>>& centroids) {
  NearestResult r;
  r.ids.resize(vectors.size());
  r.distances.resize(vectors.size());
  const auto n = static_cast<std::ptrdiff_t>(vectors.size());
#pragma omp parallel for schedule(dynamic, 64)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    nearest_one(vectors[ui], centroids, r.ids[ui], r.distances[ui]);
  }
  return r;
}

}  // namespace parallel

}  // namespace mts2graph::kernels
