#include <random>
#include <sstream>

#include "doctest.h"
#include "mts2graph/representation.hpp"
#include "support/synthetic.hpp"

using namespace mts2graph;

namespace {

NodeEmbeddings random_embeddings(std::size_t nodes, std::size_t D, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  NodeEmbeddings e;
  e.dim = D;
  e.vectors = testing::random_matrix(nodes, D, rng);
  return e;
}

std::vector<NodeHit> random_hits(std::size_t count, std::size_t T, std::size_t nodes, std::mt19937_64& rng) {
  std::vector<NodeHit> h(count);
  for (auto& x : h) x = {rng() % T, rng() % nodes};
  return h;
}

}  // namespace

TEST_CASE("output length is ceil(T/s) * D") {
  const auto e = random_embeddings(3, 100, 1);
  CHECK(represent_sample({}, e, 10, 100).size() == 1000);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t T = 1 + rng() % 200, s = 1 + rng() % 25, D = 1 + rng() % 12;
    const auto emb = random_embeddings(4, D, trial);
    const std::size_t M = (T + s - 1) / s;
    CHECK(segment_count(T, s) == M);
    CHECK(represent_sample(random_hits(5, T, 4, rng), emb, s, T).size() == M * D);
  }
  CHECK(segment_count(37, 10) == 4);
  CHECK_THROWS_AS(segment_count(10, 0), Error);
}

TEST_CASE("zero MHAPs give the zero vector; two hits in segment 3 sum into block 3 only") {
  const auto e = random_embeddings(6, 4, 3);
  for (double v : represent_sample({}, e, 10, 50)) CHECK(v == 0.0);

  const std::vector<NodeHit> hits{{30, 2}, {39, 5}};
  const auto r = represent_sample(hits, e, 10, 50);
  REQUIRE(r.size() == 20);
  for (std::size_t m = 0; m < 5; ++m)
    for (std::size_t d = 0; d < 4; ++d) {
      const double expect = m == 3 ? e[2][d] + e[5][d] : 0.0;
      CHECK(r[m * 4 + d] == expect);
    }
}

TEST_CASE("the last partial segment is kept; errors") {
  const auto e = random_embeddings(2, 3, 4);
  const std::vector<NodeHit> tail{{36, 1}};
  const auto r = represent_sample(tail, e, 10, 37);
  REQUIRE(r.size() == 12);
  for (std::size_t d = 0; d < 3; ++d) CHECK(r[9 + d] == e[1][d]);
  CHECK_THROWS_AS(represent_sample(std::vector<NodeHit>{{0, 2}}, e, 10, 37), Error);
  CHECK_THROWS_AS(represent_sample(std::vector<NodeHit>{{37, 0}}, e, 10, 37), Error);
}

TEST_CASE("additivity: a sample's vector is the sum of its single-hit vectors") {
  std::mt19937_64 rng(5);
  const auto e = random_embeddings(7, 6, 5);
  const auto hits = random_hits(25, 64, 7, rng);
  const auto whole = represent_sample(hits, e, 8, 64);
  std::vector<double> sum(whole.size(), 0.0);
  for (const auto& h : hits) {
    const auto part = represent_sample(std::vector<NodeHit>{h}, e, 8, 64);
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += part[i];
  }
  for (std::size_t i = 0; i < sum.size(); ++i) CHECK(std::abs(whole[i] - sum[i]) <= 1e-12);
}

TEST_CASE("order sensitivity: same node multiset in swapped segments differs, a global sum does not") {
  const auto e = random_embeddings(3, 5, 6);
  const std::vector<NodeHit> a{{2, 0}, {15, 1}}, b{{2, 1}, {15, 0}};
  const auto ra = represent_sample(a, e, 10, 20), rb = represent_sample(b, e, 10, 20);
  double dist = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) dist += (ra[i] - rb[i]) * (ra[i] - rb[i]);
  CHECK(dist > 0.0);
  // one segment spanning the series is the global sum
  const auto ga = represent_sample(a, e, 20, 20), gb = represent_sample(b, e, 20, 20);
  for (std::size_t i = 0; i < ga.size(); ++i) CHECK(std::abs(ga[i] - gb[i]) <= 1e-12);
}

TEST_CASE("dataset: one row per sample, permutation permutes rows, file round-trip") {
  std::mt19937_64 rng(7);
  const auto e = random_embeddings(5, 8, 7);
  std::vector<std::vector<NodeHit>> hits;
  for (int i = 0; i < 4; ++i) hits.push_back(random_hits(3 + i, 37, 5, rng));
  const auto X = represent_dataset(hits, e, 10, 37);
  CHECK(X.rows == 4);
  CHECK(X.cols == 32);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<std::vector<NodeHit>> permuted;
  for (auto p : perm) permuted.push_back(hits[p]);
  const auto Y = represent_dataset(permuted, e, 10, 37);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 32; ++j) CHECK(Y(i, j) == X(perm[i], j));

  std::stringstream ss;
  write_features(ss, X, {0, 1, 1, 0});
  Matrix back;
  std::vector<int> labels;
  read_features(ss, back, labels);
  CHECK(back == X);
  CHECK(labels == std::vector<int>{0, 1, 1, 0});
}
