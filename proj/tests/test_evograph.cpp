#include <random>
#include <sstream>

#include "doctest.h"
#include "mts2graph/evograph.hpp"
#include "support/synthetic.hpp"

using namespace mts2graph;

namespace {

MHAP hand_mhap(std::size_t sample, const std::string& mask, std::size_t layer, std::size_t channel, std::size_t neuron,
               std::size_t rf) {
  MHAP m;
  m.sample_id = sample;
  m.mask = ChannelMask::from_bits(mask);
  m.layer = layer;
  m.channel = channel;
  m.neuron = neuron;
  m.window = {neuron, neuron + rf - 1};
  return m;
}

std::uint64_t total(const EdgeWeights& e) {
  std::uint64_t s = 0;
  for (const auto& [k, w] : e) s += w;
  return s;
}

}  // namespace

TEST_CASE("layer graph: direct counts") {
  const std::size_t a = 0, b = 1, c = 2;
  const auto g = build_layer_graph(0, {{a, b, b, c}}, 3);
  CHECK(g.edges.size() == 3);
  CHECK(g.edges.at({a, b}) == 1);
  CHECK(g.edges.at({b, b}) == 1);
  CHECK(g.edges.at({b, c}) == 1);

  const auto path = build_layer_graph(0, {{29, 25, 10}}, 38);
  CHECK(path.edges.at({29, 25}) == 1);
  CHECK(path.edges.at({25, 10}) == 1);
  CHECK(path.edges.size() == 2);

  const auto twice = build_layer_graph(0, {{a, b}, {a, b}}, 2);
  CHECK(twice.edges.at({a, b}) == 2);
  CHECK(twice.edges.size() == 1);

  // no edge between the end of one sample and the start of the next
  const auto split = build_layer_graph(0, {{0}, {1}}, 2);
  CHECK(split.edges.empty());
  CHECK_THROWS_AS(build_layer_graph(0, {{0, 5}}, 3), Error);
}

TEST_CASE("layer graph: weight conservation and order independence on random sequences") {
  std::mt19937_64 rng(1);
  std::vector<std::vector<std::size_t>> seqs;
  std::uint64_t pairs = 0;
  for (int s = 0; s < 50; ++s) {
    std::vector<std::size_t> seq(rng() % 12);
    for (auto& v : seq) v = rng() % 7;
    pairs += seq.empty() ? 0 : seq.size() - 1;
    seqs.push_back(seq);
  }
  const auto g = build_layer_graph(1, seqs, 7);
  CHECK(total(g.edges) == pairs);
  std::map<EdgeKey, std::uint64_t> oracle;
  for (const auto& s : seqs)
    for (std::size_t i = 1; i < s.size(); ++i) ++oracle[{s[i - 1], s[i]}];
  CHECK(g.edges == oracle);
  auto shuffled = seqs;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  CHECK(build_layer_graph(1, shuffled, 7).edges == g.edges);
}

TEST_CASE("layer_sequences orders by window start, then mask, then channel") {
  std::vector<MHAP> m{hand_mhap(3, "11", 0, 1, 5, 3), hand_mhap(0, "10", 0, 0, 2, 3), hand_mhap(3, "01", 0, 0, 5, 3),
                      hand_mhap(3, "01", 0, 2, 5, 3), hand_mhap(3, "10", 0, 0, 1, 3)};
  const std::vector<std::size_t> assign{10, 11, 12, 13, 14};
  const auto seqs = layer_sequences(m, assign);
  REQUIRE(seqs.size() == 2);
  CHECK(seqs[0] == std::vector<std::size_t>{11});
  CHECK(seqs[1] == std::vector<std::size_t>{14, 12, 13, 10});
  CHECK_THROWS_AS(layer_sequences(m, {1, 2}), Error);
}

TEST_CASE("merge: second-layer MHAP at j links first-layer MHAPs at j and j + 2 (kernels 5 and 3)") {
  const auto model = testing::random_cnn(1, 20, 2, {{2, 5}, {2, 3}}, 1);
  const std::size_t j = 4;
  std::vector<std::vector<MHAP>> mh(2);
  mh[0] = {hand_mhap(0, "1", 0, 0, j, 5), hand_mhap(0, "1", 0, 1, j + 2, 5), hand_mhap(0, "1", 0, 0, j + 3, 5)};
  mh[1] = {hand_mhap(0, "1", 1, 0, j, 7)};
  const std::vector<std::vector<std::size_t>> assign{{0, 1, 2}, {0}};
  std::vector<LayerGraph> lg{build_layer_graph(0, layer_sequences(mh[0], assign[0]), 3),
                             build_layer_graph(1, layer_sequences(mh[1], assign[1]), 2)};
  const auto g = merge_graphs(lg, mh, assign, model);
  CHECK(g.node_count() == 5);
  CHECK(g.cross.size() == 2);
  CHECK(g.cross.at({g.node_id(0, 0), g.node_id(1, 0)}) == 1);
  CHECK(g.cross.at({g.node_id(0, 1), g.node_id(1, 0)}) == 1);
  // intra edges copied with offsets
  CHECK(g.intra.at({g.node_id(0, 0), g.node_id(0, 1)}) == 1);
  CHECK(g.intra.at({g.node_id(0, 1), g.node_id(0, 2)}) == 1);
}

TEST_CASE("merge: no lower MHAP inside any upper window gives a disjoint union") {
  const auto model = testing::random_cnn(1, 20, 2, {{2, 5}, {2, 3}}, 1);
  std::vector<std::vector<MHAP>> mh(2);
  mh[0] = {hand_mhap(0, "1", 0, 0, 0, 5), hand_mhap(1, "1", 0, 0, 9, 5)};
  mh[1] = {hand_mhap(0, "1", 1, 0, 5, 7), hand_mhap(1, "1", 1, 0, 2, 7)};
  const std::vector<std::vector<std::size_t>> assign{{0, 1}, {1, 0}};
  std::vector<LayerGraph> lg{build_layer_graph(0, layer_sequences(mh[0], assign[0]), 2),
                             build_layer_graph(1, layer_sequences(mh[1], assign[1]), 2)};
  const auto g = merge_graphs(lg, mh, assign, model);
  CHECK(g.cross.empty());
  CHECK(total(g.intra) == total(lg[0].edges) + total(lg[1].edges));

  // provenance checks
  auto bad = lg;
  bad[1].num_nodes = 1;
  CHECK_THROWS_AS(merge_graphs(bad, mh, assign, model), Error);
  CHECK_THROWS_AS(merge_graphs({lg[0]}, mh, assign, model), Error);
}

TEST_CASE("merge: cross edges equal the brute-force window-intersection enumeration on 10 samples") {
  const auto model = testing::random_cnn(2, 40, 2, {{3, 5}, {3, 3}, {3, 2}}, 2);
  std::mt19937_64 rng(5);
  const std::vector<std::string> masks{"10", "01", "11"};
  const std::vector<std::size_t> k{4, 3, 2};
  std::vector<std::vector<MHAP>> mh(3);
  std::vector<std::vector<std::size_t>> assign(3);
  for (std::size_t s = 0; s < 10; ++s)
    for (std::size_t l = 0; l < 3; ++l)
      for (int i = 0; i < 6; ++i) {
        const std::size_t n = rng() % model.layer_length(l);
        mh[l].push_back(hand_mhap(s, masks[rng() % 3], l, rng() % 3, n, model.rf_length(l)));
        assign[l].push_back(rng() % k[l]);
      }
  std::vector<LayerGraph> lg;
  for (std::size_t l = 0; l < 3; ++l) lg.push_back(build_layer_graph(l, layer_sequences(mh[l], assign[l]), k[l]));
  const auto g = merge_graphs(lg, mh, assign, model);

  EdgeWeights oracle;
  for (std::size_t l = 1; l < 3; ++l)
    for (std::size_t u = 0; u < mh[l].size(); ++u)
      for (std::size_t d = 0; d < mh[l - 1].size(); ++d) {
        const auto& up = mh[l][u];
        const auto& lo = mh[l - 1][d];
        if (up.sample_id != lo.sample_id || up.mask != lo.mask) continue;
        if (lo.neuron < up.neuron || lo.neuron > up.neuron + model.conv[l].kernel - 1) continue;
        ++oracle[{g.node_id(l - 1, assign[l - 1][d]), g.node_id(l, assign[l][u])}];
      }
  CHECK(g.cross == oracle);
  CHECK(!oracle.empty());
  for (const auto& [key, w] : g.cross) {
    CHECK(g.layer_cluster(key.second).first == g.layer_cluster(key.first).first + 1);
    CHECK(w >= 1);
  }
  std::uint64_t pairs = 0;
  for (std::size_t l = 0; l < 3; ++l)
    for (const auto& s : layer_sequences(mh[l], assign[l])) pairs += s.size() - 1;
  CHECK(total(g.intra) == pairs);

  // sample processing order does not matter
  auto mh2 = mh;
  auto assign2 = assign;
  for (std::size_t l = 0; l < 3; ++l) {
    std::reverse(mh2[l].begin(), mh2[l].end());
    std::reverse(assign2[l].begin(), assign2[l].end());
  }
  std::vector<LayerGraph> lg2;
  for (std::size_t l = 0; l < 3; ++l) lg2.push_back(build_layer_graph(l, layer_sequences(mh2[l], assign2[l]), k[l]));
  const auto g2 = merge_graphs(lg2, mh2, assign2, model);
  CHECK(g2.cross == g.cross);
  CHECK(total(g2.intra) == total(g.intra));
}

TEST_CASE("graph stats: empty, path, recount") {
  const auto empty = graph_stats(make_merged_graph({}));
  CHECK(empty.nodes == 0);
  CHECK(empty.edges == 0);
  CHECK(empty.total_weight == 0);

  auto g = make_merged_graph({38});
  g.intra = {{{29, 25}, 1}, {{25, 10}, 1}, {{10, 3}, 1}};
  const auto s = graph_stats(g);
  CHECK(s.nodes == 38);
  CHECK(s.edges == 3);
  CHECK(s.total_weight == 3);

  std::mt19937_64 rng(3);
  auto r = make_merged_graph({5, 4, 3});
  for (int i = 0; i < 60; ++i) {
    const std::size_t l = rng() % 3;
    r.intra[{r.node_id(l, rng() % r.cluster_counts[l]), r.node_id(l, rng() % r.cluster_counts[l])}] += 1 + rng() % 4;
    if (l > 0) r.cross[{r.node_id(l - 1, rng() % r.cluster_counts[l - 1]), r.node_id(l, rng() % r.cluster_counts[l])}] += 1;
  }
  const auto rs = graph_stats(r);
  CHECK(rs.nodes == 12);
  CHECK(rs.edges == r.intra.size() + r.cross.size());
  CHECK(rs.total_weight == total(r.intra) + total(r.cross));
  std::size_t per = 0;
  for (const auto& ls : rs.per_layer) per += ls.intra_edges + ls.cross_in_edges;
  CHECK(per == rs.edges);
  CHECK(rs.per_layer[0].cross_in_edges == 0);
}

TEST_CASE("adjacency dump round-trips; DOT output styles cross edges") {
  auto g = make_merged_graph({2, 2});
  g.intra = {{{0, 1}, 3}, {{1, 1}, 1}, {{2, 3}, 2}};
  g.cross = {{{0, 2}, 4}, {{1, 2}, 1}};
  std::ostringstream out;
  write_adjacency(out, g);
  std::istringstream in(out.str());
  const auto back = read_adjacency(in);
  CHECK(back.cluster_counts == g.cluster_counts);
  CHECK(back.intra == g.intra);
  CHECK(back.cross == g.cross);

  std::ostringstream dot;
  write_dot(dot, g);
  const auto text = dot.str();
  CHECK(text.find("digraph mhap_evolution") != std::string::npos);
  CHECK(text.find("label=\"L1C0\"") != std::string::npos);
  CHECK(text.find("n0 -> n2 [weight=4, label=\"4\", style=dashed]") != std::string::npos);
  CHECK(text.find("n0 -> n1 [weight=3, label=\"3\"]") != std::string::npos);

  std::istringstream junk("0\t1\t1\tintra\n");
  CHECK_THROWS_AS(read_adjacency(junk), Error);
}
