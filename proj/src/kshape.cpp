#include "mts2graph/kshape.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <random>

#include "binary_io.hpp"
#include "json.hpp"
#include "mts2graph/common.hpp"
#include "mts2graph/kernels.hpp"

namespace mts2graph {

using nlohmann::json;

std::vector<double> cross_correlation_direct(std::span<const double> x, std::span<const double> y) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  const auto m = static_cast<std::ptrdiff_t>(y.size());
  const std::ptrdiff_t lo = -(m - 1), hi = n - 1;
  std::vector<double> cc(static_cast<std::size_t>(hi - lo + 1), 0.0);
  for (std::ptrdiff_t s = lo; s <= hi; ++s) {
    double acc = 0.0;
    const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, s), i1 = std::min(n, m + s);
    for (std::ptrdiff_t i = i0; i < i1; ++i) acc += x[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i - s)];
    cc[static_cast<std::size_t>(s - lo)] = acc;
  }
  return cc;
}

namespace {

// FFTW's planner is not re-entrant; execution is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

std::vector<double> cross_correlation_fft(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size(), m = y.size();
  if (n == 0 || m == 0) return {};
  const std::size_t N = next_pow2(n + m - 1);
  const std::size_t H = N / 2 + 1;

  double* bx = fftw_alloc_real(N);
  double* by = fftw_alloc_real(N);
  fftw_complex* fx = fftw_alloc_complex(H);
  fftw_complex* fy = fftw_alloc_complex(H);
  fftw_plan px, py, pinv;
  {
    std::lock_guard lock(fftw_planner_mutex());
    px = fftw_plan_dft_r2c_1d(static_cast<int>(N), bx, fx, FFTW_ESTIMATE);
    py = fftw_plan_dft_r2c_1d(static_cast<int>(N), by, fy, FFTW_ESTIMATE);
    pinv = fftw_plan_dft_c2r_1d(static_cast<int>(N), fx, bx, FFTW_ESTIMATE);
  }
  std::fill(bx, bx + N, 0.0);
  std::fill(by, by + N, 0.0);
  std::copy(x.begin(), x.end(), bx);
  std::copy(y.begin(), y.end(), by);
  fftw_execute(px);
  fftw_execute(py);
  // X * conj(Y) gives r[s] = sum_i x[i + s] y[i] at circular index s
  for (std::size_t i = 0; i < H; ++i) {
    const double a = fx[i][0], b = fx[i][1], c = fy[i][0], d = fy[i][1];
    fx[i][0] = a * c + b * d;
    fx[i][1] = b * c - a * d;
  }
  fftw_execute(pinv);

  std::vector<double> cc(n + m - 1);
  const double scale = 1.0 / static_cast<double>(N);
  const auto lo = -static_cast<std::ptrdiff_t>(m - 1);
  for (std::ptrdiff_t s = lo; s <= static_cast<std::ptrdiff_t>(n) - 1; ++s) {
    const std::size_t idx = s >= 0 ? static_cast<std::size_t>(s) : N - static_cast<std::size_t>(-s);
    cc[static_cast<std::size_t>(s - lo)] = bx[idx] * scale;
  }
  {
    std::lock_guard lock(fftw_planner_mutex());
    fftw_destroy_plan(px);
    fftw_destroy_plan(py);
    fftw_destroy_plan(pinv);
  }
  fftw_free(bx);
  fftw_free(by);
  fftw_free(fx);
  fftw_free(fy);
  return cc;
}

SbdResult sbd(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("sbd: length mismatch");
  if (x.empty()) throw Error("sbd: empty input");
  const double nx = norm2(x), ny = norm2(y);
  if (nx == 0.0 || ny == 0.0) return {1.0, 0};
  const auto cc = x.size() >= kFftThreshold ? cross_correlation_fft(x, y) : cross_correlation_direct(x, y);
  std::size_t best = 0;
  for (std::size_t i = 1; i < cc.size(); ++i)
    if (cc[i] > cc[best]) best = i;
  const double ncc = cc[best] / (nx * ny);
  SbdResult r;
  r.distance = std::clamp(1.0 - ncc, 0.0, 2.0);
  r.shift = static_cast<std::ptrdiff_t>(best) - static_cast<std::ptrdiff_t>(x.size() - 1);
  return r;
}

std::vector<double> shift_zero_pad(std::span<const double> y, std::ptrdiff_t s) {
  const auto n = static_cast<std::ptrdiff_t>(y.size());
  std::vector<double> out(y.size(), 0.0);
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t j = i - s;
    if (j >= 0 && j < n) out[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(j)];
  }
  return out;
}

std::vector<double> shape_extraction(const std::vector<std::vector<double>>& members, std::span<const double> ref,
                                     const ShapeExtractionOptions& opts) {
  if (members.empty()) throw Error("shape_extraction: no members");
  const std::size_t n = members.front().size();
  if (ref.size() != n) throw Error("shape_extraction: reference length mismatch");
  const bool have_ref = norm2(ref) > 0.0;

  std::vector<std::vector<double>> aligned;
  aligned.reserve(members.size());
  for (const auto& m : members) {
    if (m.size() != n) throw Error("shape_extraction: member length mismatch");
    if (have_ref) {
      const auto r = sbd(ref, m);
      aligned.push_back(znormalize(shift_zero_pad(m, r.shift)));
    } else {
      aligned.push_back(znormalize(m));
    }
  }

  std::vector<double> mean(n, 0.0);
  for (const auto& a : aligned)
    for (std::size_t i = 0; i < n; ++i) mean[i] += a[i];
  if (std::all_of(aligned.begin(), aligned.end(), [](const auto& a) { return norm2(a) == 0.0; }))
    return std::vector<double>(n, 0.0);

  // S = sum_a a a^T, then M = Q S Q with Q = I - 11^T / n (double centring).
  Matrix M(n, n);
  for (const auto& a : aligned)
    for (std::size_t i = 0; i < n; ++i) {
      if (a[i] == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) M(i, j) += a[i] * a[j];
    }
  std::vector<double> row_mean(n, 0.0), col_mean(n, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      row_mean[i] += M(i, j);
      col_mean[j] += M(i, j);
      grand += M(i, j);
    }
  const double dn = static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) M(i, j) += -row_mean[i] / dn - col_mean[j] / dn + grand / (dn * dn);

  // Power iteration from the member mean (or the first non-zero member if the mean vanishes).
  std::vector<double> v = mean;
  if (norm2(v) < 1e-12) {
    for (const auto& a : aligned)
      if (norm2(a) > 0.0) {
        v = a;
        break;
      }
  }
  double nv = norm2(v);
  for (double& x : v) x /= nv;
  std::vector<double> w(n);
  for (std::size_t it = 0; it < opts.max_iter; ++it) {
    for (std::size_t i = 0; i < n; ++i) w[i] = dot(M.row(i), v);
    const double nw = norm2(w);
    if (nw == 0.0) break;
    double change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] /= nw;
      change += (w[i] - v[i]) * (w[i] - v[i]);
    }
    v.swap(w);
    if (std::sqrt(change) < opts.tol) break;
  }

  const double orient = have_ref ? dot(v, ref) : 0.0;
  if (orient < 0.0 || (orient == 0.0 && dot(v, mean) < 0.0))
    for (double& x : v) x = -x;
  return znormalize(v);
}

namespace {

struct RestartResult {
  std::vector<std::vector<double>> centroids;
  std::vector<std::size_t> assignments;
  double inertia = std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  std::size_t iterations = 0;
};

RestartResult run_restart(const std::vector<std::vector<double>>& Z, std::size_t k, std::uint64_t seed,
                          std::size_t max_iter) {
  const std::size_t n = Z.size(), len = Z.front().size();
  RestartResult st;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  st.assignments.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) st.assignments[perm[i]] = i % k;
  st.centroids.assign(k, std::vector<double>(len, 0.0));

  bool first = true;
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    std::vector<std::vector<std::vector<double>>> members(k);
    for (std::size_t i = 0; i < n; ++i) members[st.assignments[i]].push_back(Z[i]);
    std::vector<std::vector<double>> centroids(k);
    for (std::size_t j = 0; j < k; ++j)
      centroids[j] = members[j].empty() ? st.centroids[j] : shape_extraction(members[j], st.centroids[j]);

    auto nearest = kernels::parallel::nearest_centroids(Z, centroids);
    std::vector<std::size_t> counts(k, 0);
    for (auto id : nearest.ids) ++counts[id];
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] > 0) continue;
      // reseed an empty cluster with the point farthest from its centroid
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i)
        if (counts[nearest.ids[i]] > 1 && (far == n || nearest.distances[i] > nearest.distances[far])) far = i;
      if (far == n) continue;
      --counts[nearest.ids[far]];
      ++counts[j];
      nearest.ids[far] = j;
      centroids[j] = Z[far];
      nearest.distances[far] = sbd(Z[far], centroids[j]).distance;
    }
    double inertia = 0.0;
    for (double d : nearest.distances) inertia += d;

    if (!first && inertia > st.inertia) break;
    const bool stable = !first && nearest.ids == st.assignments;
    st.centroids = std::move(centroids);
    st.assignments = std::move(nearest.ids);
    st.inertia = inertia;
    st.trace.push_back(inertia);
    st.iterations = iter + 1;
    first = false;
    if (stable) break;
  }
  return st;
}

}  // namespace

LayerClusters kshape_cluster(const std::vector<std::vector<double>>& vectors, std::size_t k, std::uint64_t seed,
                             const KShapeOptions& opts) {
  if (k == 0) throw Error("kshape: k must be at least 1");
  if (k > vectors.size())
    throw Error("kshape: k=" + std::to_string(k) + " exceeds the number of vectors (" + std::to_string(vectors.size()) + ")");
  const std::size_t len = vectors.front().size();
  std::vector<std::vector<double>> Z;
  Z.reserve(vectors.size());
  for (const auto& v : vectors) {
    if (v.size() != len) throw Error("kshape: vectors differ in length");
    Z.push_back(znormalize(v));
  }
  RestartResult best;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, opts.restarts); ++r) {
    auto st = run_restart(Z, k, derive_seed(seed, "kshape-restart", r), std::max<std::size_t>(1, opts.max_iter));
    if (st.inertia < best.inertia) best = std::move(st);
  }
  LayerClusters out;
  out.k = k;
  out.centroids = std::move(best.centroids);
  out.assignments = std::move(best.assignments);
  out.inertia = best.inertia;
  out.inertia_trace = std::move(best.trace);
  out.iterations = best.iterations;
  return out;
}

Assignment assign(std::span<const double> v, const LayerClusters& clusters) {
  if (clusters.centroids.empty()) throw Error("assign: no centroids");
  if (v.size() != clusters.centroids.front().size())
    throw Error("assign: vector length " + std::to_string(v.size()) + " does not match centroid length " +
                std::to_string(clusters.centroids.front().size()));
  const auto z = znormalize(v);
  Assignment a{0, std::numeric_limits<double>::infinity()};
  for (std::size_t j = 0; j < clusters.centroids.size(); ++j) {
    const double d = sbd(z, clusters.centroids[j]).distance;
    if (d < a.distance) a = {j, d};
  }
  return a;
}

std::vector<double> kshape_elbow(const std::vector<std::vector<double>>& vectors, const std::vector<std::size_t>& ks,
                                 std::uint64_t seed, const KShapeOptions& opts) {
  std::vector<double> out;
  for (std::size_t k : ks) out.push_back(kshape_cluster(vectors, k, seed, opts).inertia);
  return out;
}

namespace {
constexpr char kClusterMagic[8] = {'M', 'T', 'S', '2', 'G', 'K', 'S', 'H'};
constexpr std::uint32_t kClusterVersion = 1;
}  // namespace

std::string serialize_cluster_model(const ClusterModel& model) {
  std::string blob;
  json layers = json::array();
  for (const auto& L : model.layers) {
    const std::size_t len = L.centroids.empty() ? 0 : L.centroids.front().size();
    const std::size_t centroid_offset = blob.size();
    for (const auto& c : L.centroids)
      for (double v : c) binary::put_f64(blob, v);
    const std::size_t assign_offset = blob.size();
    for (auto a : L.assignments) binary::put_le<std::uint32_t>(blob, static_cast<std::uint32_t>(a));
    layers.push_back({{"k", L.k},
                      {"length", len},
                      {"inertia", L.inertia},
                      {"iterations", L.iterations},
                      {"inertia_trace", L.inertia_trace},
                      {"centroid_offset", centroid_offset},
                      {"assignment_count", L.assignments.size()},
                      {"assignment_offset", assign_offset}});
  }
  json index = {{"format", "mts2graph-clusters"}, {"version", kClusterVersion}, {"seed", model.seed}, {"layers", layers}};
  return binary::write_container(kClusterMagic, kClusterVersion, index.dump(), blob);
}

ClusterModel deserialize_cluster_model(const std::string& bytes) {
  const auto c = binary::read_container(bytes, kClusterMagic, "cluster model");
  if (c.version != kClusterVersion) throw Error("cluster model: unsupported version " + std::to_string(c.version));
  json index;
  try {
    index = json::parse(c.index);
  } catch (const json::exception& e) {
    throw Error(std::string("cluster model: bad index: ") + e.what());
  }
  ClusterModel m;
  m.seed = index.at("seed").get<std::uint64_t>();
  for (const auto& jl : index.at("layers")) {
    LayerClusters L;
    L.k = jl.at("k").get<std::size_t>();
    L.inertia = jl.at("inertia").get<double>();
    L.iterations = jl.at("iterations").get<std::size_t>();
    L.inertia_trace = jl.at("inertia_trace").get<std::vector<double>>();
    const auto len = jl.at("length").get<std::size_t>();
    std::size_t pos = c.blob_start + jl.at("centroid_offset").get<std::size_t>();
    for (std::size_t j = 0; j < L.k; ++j) {
      std::vector<double> v(len);
      for (double& x : v) x = binary::get_f64(bytes, pos);
      L.centroids.push_back(std::move(v));
    }
    pos = c.blob_start + jl.at("assignment_offset").get<std::size_t>();
    const auto count = jl.at("assignment_count").get<std::size_t>();
    for (std::size_t i = 0; i < count; ++i) {
      const auto a = binary::get_le<std::uint32_t>(bytes, pos);
      if (a >= L.k) throw Error("cluster model: assignment out of range");
      L.assignments.push_back(a);
    }
    m.layers.push_back(std::move(L));
  }
  return m;
}

}  // namespace mts2graph
