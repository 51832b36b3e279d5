#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "mts2graph/dataset.hpp"
#include "support/synthetic.hpp"

using namespace mts2graph;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mts2graph_test_dataset_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

std::string row(std::size_t T, double v0) {
  std::string s;
  for (std::size_t t = 0; t < T; ++t) s += (t ? "," : "") + std::to_string(v0 + static_cast<double>(t));
  return s + "\n";
}

}  // namespace

TEST_CASE("tabular directory: 4 samples, 2 channels, length 100") {
  const auto dir = scratch("tabular");
  write(dir / "meta.json", R"({"d": 2, "T": 100})");
  for (int i = 0; i < 4; ++i) write(dir / (std::to_string(i) + "_" + std::to_string(i % 2) + ".csv"), row(100, i) + row(100, -i));
  const auto ds = load_dataset(dir, DatasetFormat::TabularPerSample);
  CHECK(ds.d == 2);
  CHECK(ds.T == 100);
  CHECK(ds.C == 2);
  CHECK(ds.size() == 4);
  CHECK(ds.samples[3].values(0, 5) == doctest::Approx(8.0));
  CHECK(ds.samples[3].values(1, 0) == doctest::Approx(-3.0));
  CHECK(ds.labels() == std::vector<int>{0, 1, 0, 1});
}

TEST_CASE("files are ordered by numeric id") {
  const auto dir = scratch("order");
  write(dir / "meta.json", R"({"d": 1})");
  write(dir / "10_a.csv", "10,10\n");
  write(dir / "2_b.csv", "2,2\n");
  write(dir / "1_a.csv", "1,1\n");
  const auto ds = load_dataset(dir, DatasetFormat::TabularPerSample);
  REQUIRE(ds.size() == 3);
  CHECK(ds.samples[0].values(0, 0) == 1);
  CHECK(ds.samples[1].values(0, 0) == 2);
  CHECK(ds.samples[2].values(0, 0) == 10);
}

TEST_CASE("NaN cell is reported with its position") {
  const auto dir = scratch("nan");
  write(dir / "meta.json", R"({"d": 2})");
  write(dir / "0_0.csv", "1,2,3\n4,nan,6\n");
  write(dir / "1_1.csv", "1,2,3\n4,5,6\n");
  try {
    load_dataset(dir, DatasetFormat::TabularPerSample);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("non-finite value at (0, 1, 1)") != std::string::npos);
  }
}

TEST_CASE("labels {3, 7} are remapped to {0, 1}") {
  const auto dir = scratch("remap");
  write(dir / "meta.json", R"({"d": 1})");
  write(dir / "0_7.csv", "1,2\n");
  write(dir / "1_3.csv", "1,2\n");
  write(dir / "2_7.csv", "1,2\n");
  const auto ds = load_dataset(dir, DatasetFormat::TabularPerSample);
  CHECK(ds.class_names == std::vector<std::string>{"3", "7"});
  CHECK(ds.labels() == std::vector<int>{1, 0, 1});
}

TEST_CASE("numeric labels order numerically, not lexicographically") {
  const auto dir = scratch("numeric");
  write(dir / "meta.json", R"({"d": 1})");
  write(dir / "0_10.csv", "1\n");
  write(dir / "1_9.csv", "1\n");
  const auto ds = load_dataset(dir, DatasetFormat::TabularPerSample);
  CHECK(ds.class_names == std::vector<std::string>{"9", "10"});
}

TEST_CASE("loader errors") {
  CHECK_THROWS_AS(load_dataset("/nonexistent/mts2graph", DatasetFormat::TabularPerSample), Error);
  const auto dir = scratch("errors");
  write(dir / "meta.json", R"({"d": 1})");
  write(dir / "0_0.csv", "1,abc\n");
  CHECK_THROWS_WITH_AS(load_dataset(dir, DatasetFormat::TabularPerSample), doctest::Contains("non-numeric"), Error);

  const auto dir2 = scratch("nolabel");
  write(dir2 / "meta.json", R"({"d": 1})");
  write(dir2 / "sample.csv", "1,2\n");
  CHECK_THROWS_WITH_AS(load_dataset(dir2, DatasetFormat::TabularPerSample), doctest::Contains("label"), Error);

  const auto dir3 = scratch("ragged");
  write(dir3 / "meta.json", R"({"d": 2})");
  write(dir3 / "0_0.csv", "1,2,3\n1,2\n");
  write(dir3 / "1_1.csv", "1,2,3\n1,2,3\n");
  CHECK_THROWS_WITH_AS(load_dataset(dir3, DatasetFormat::TabularPerSample, false), doctest::Contains("ragged"), Error);
  const auto padded = load_dataset(dir3, DatasetFormat::TabularPerSample, true);
  CHECK(padded.T == 3);
  CHECK(padded.samples[0].values(1, 2) == 0.0);
  CHECK(padded.samples[0].original_length == 3);
}

TEST_CASE("single-file format and round trips") {
  std::mt19937_64 rng(3);
  MTSDataset ds;
  ds.d = 2;
  ds.T = 7;
  ds.C = 2;
  ds.class_names = {"x", "y"};
  for (int i = 0; i < 6; ++i) ds.samples.push_back(testing::random_sample(2, 7, rng, i % 2));
  for (auto& s : ds.samples) s.original_length = 7;

  const auto dir = scratch("single");
  save_dataset_single_file(ds, dir / "data.csv");
  const auto back = load_dataset(dir / "data.csv", DatasetFormat::SingleFile);
  CHECK(back.class_names == ds.class_names);
  CHECK(back.labels() == ds.labels());
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(back.samples[i].values == ds.samples[i].values);

  const auto dir2 = scratch("tab_roundtrip");
  save_dataset_tabular(ds, dir2);
  const auto back2 = load_dataset(dir2, DatasetFormat::TabularPerSample);
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(back2.samples[i].values == ds.samples[i].values);
}

TEST_CASE("znormalize dataset: [1,2,3], constant channel, idempotence") {
  MTSDataset ds;
  ds.d = 2;
  ds.T = 3;
  ds.C = 1;
  MTSSample s;
  s.values = Matrix(2, 3);
  s.values(0, 0) = 1, s.values(0, 1) = 2, s.values(0, 2) = 3;
  s.values(1, 0) = 5, s.values(1, 1) = 5, s.values(1, 2) = 5;
  ds.samples.push_back(s);
  const auto z = znormalize(ds);
  CHECK(z.samples[0].values(0, 0) == doctest::Approx(-1.2247).epsilon(1e-4));
  CHECK(z.samples[0].values(0, 1) == doctest::Approx(0.0));
  CHECK(z.samples[0].values(0, 2) == doctest::Approx(1.2247).epsilon(1e-4));
  for (std::size_t t = 0; t < 3; ++t) CHECK(z.samples[0].values(1, t) == 0.0);

  std::mt19937_64 rng(5);
  MTSDataset r;
  r.d = 3;
  r.T = 50;
  r.C = 1;
  for (int i = 0; i < 10; ++i) r.samples.push_back(testing::random_sample(3, 50, rng));
  const auto z1 = znormalize(r), z2 = znormalize(z1);
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t k = 0; k < z1.samples[i].values.data.size(); ++k)
      CHECK(std::abs(z1.samples[i].values.data[k] - z2.samples[i].values.data[k]) <= 1e-9);
}

TEST_CASE("make_folds: 100 balanced samples, k=10") {
  const auto ds = testing::sign_dataset(100, 1, 10, 1);
  const auto plan = make_folds(ds, 10, 7);
  REQUIRE(plan.folds.size() == 10);
  for (const auto& f : plan.folds) {
    CHECK(f.train.size() == 80);
    CHECK(f.val.size() == 10);
    CHECK(f.test.size() == 10);
    std::size_t class0 = 0;
    for (auto i : f.test) class0 += ds.samples[i].label == 0;
    CHECK(class0 == 5);
  }
  const auto again = make_folds(ds, 10, 7);
  for (std::size_t f = 0; f < 10; ++f) {
    CHECK(again.folds[f].train == plan.folds[f].train);
    CHECK(again.folds[f].test == plan.folds[f].test);
  }
}

TEST_CASE("make_folds: partition and stratification on uneven classes") {
  MTSDataset ds;
  ds.d = 1;
  ds.T = 2;
  ds.C = 3;
  const std::vector<std::size_t> counts{23, 37, 14};
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < counts[c]; ++i) {
      MTSSample s;
      s.values = Matrix(1, 2);
      s.label = static_cast<int>(c);
      ds.samples.push_back(s);
    }
  const std::size_t n = ds.size();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto plan = make_folds(ds, 10, seed);
    for (const auto& f : plan.folds) {
      std::vector<int> seen(n, 0);
      for (auto i : f.train) ++seen[i];
      for (auto i : f.val) ++seen[i];
      for (auto i : f.test) ++seen[i];
      for (int v : seen) CHECK(v == 1);
      const std::vector<std::pair<const std::vector<std::size_t>*, double>> parts{
          {&f.train, 0.8}, {&f.val, 0.1}, {&f.test, 0.1}};
      for (const auto& [part, share] : parts) {
        for (std::size_t c = 0; c < 3; ++c) {
          std::size_t have = 0;
          for (auto i : *part) have += static_cast<std::size_t>(ds.samples[i].label) == c;
          const double expect = static_cast<double>(counts[c]) * share;
          CHECK(std::abs(static_cast<double>(have) - expect) <= 1.0 + 1e-9);
        }
      }
    }
  }
}

TEST_CASE("make_folds: class with 3 samples and k=10 is an error") {
  MTSDataset ds;
  ds.d = 1;
  ds.T = 1;
  ds.C = 2;
  for (int i = 0; i < 13; ++i) {
    MTSSample s;
    s.values = Matrix(1, 1);
    s.label = i < 3 ? 1 : 0;
    ds.samples.push_back(s);
  }
  CHECK_THROWS_AS(make_folds(ds, 10, 0), Error);
}

TEST_CASE("input set sizes") {
  std::mt19937_64 rng(1);
  const auto s2 = testing::random_sample(2, 5, rng);
  const auto set2 = build_input_set(s2, InputSetPolicy::FullPowerset);
  REQUIRE(set2.size() == 3);
  std::set<std::string> bits;
  for (const auto& [m, x] : set2) bits.insert(m.bits());
  CHECK(bits == std::set<std::string>{"10", "01", "11"});

  const auto s1 = testing::random_sample(1, 5, rng);
  const auto set1 = build_input_set(s1, InputSetPolicy::FullPowerset);
  REQUIRE(set1.size() == 1);
  CHECK(set1[0].second.values == s1.values);

  const auto s12 = testing::random_sample(12, 4, rng);
  CHECK(build_input_set(s12, InputSetPolicy::Capped).size() == 79);
  CHECK(build_input_set(s12, InputSetPolicy::Auto).size() == 79);
  CHECK(input_masks(10, InputSetPolicy::Auto).size() == 1023);
}

TEST_CASE("masked variants: active channels exact, inactive channels zero") {
  std::mt19937_64 rng(9);
  const auto s = testing::random_sample(4, 11, rng);
  for (const auto& [mask, x] : build_input_set(s, InputSetPolicy::FullPowerset)) {
    CHECK(mask.count() >= 1);
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t t = 0; t < 11; ++t) CHECK(x.values(c, t) == (mask.active[c] ? s.values(c, t) : 0.0));
  }
}
