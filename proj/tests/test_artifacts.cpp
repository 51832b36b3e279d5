#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "mts2graph/artifacts.hpp"
#include "mts2graph/common.hpp"

using namespace mts2graph;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mts2graph_test_artifacts_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("stages chain by hash and reload from the manifest") {
  const auto dir = scratch("chain");
  {
    ArtifactStore s(dir);
    s.put("a", "a.txt", "alpha", std::nullopt);
    s.put("b", "b.txt", "beta", std::string("a"));
    s.put("c", "c.txt", "gamma", std::string("b"), 2);
  }
  ArtifactStore s(dir);
  CHECK(s.has("c"));
  CHECK(!s.has("d"));
  CHECK(s.get("b") == "beta");
  CHECK(s.entry("c").version == 2);
  CHECK(s.entry("b").input_sha256 == sha256_hex("alpha"));
  CHECK(s.entry("a").sha256 == sha256_hex("alpha"));
  CHECK_NOTHROW(s.verify_all());
  CHECK(fs::exists(dir / "manifest.json"));
  for (const auto& e : fs::directory_iterator(dir)) CHECK(e.path().extension() != ".tmp");
  CHECK_THROWS_AS(s.put("x", "x.txt", "x", std::string("missing")), Error);
}

TEST_CASE("tampering with a file is detected downstream") {
  const auto dir = scratch("tamper");
  ArtifactStore s(dir);
  s.put("a", "a.txt", "alpha", std::nullopt);
  s.put("b", "b.txt", "beta", std::string("a"));
  s.put("c", "c.txt", "gamma", std::string("b"));
  {
    std::ofstream out(dir / "a.txt");
    out << "alpha!";
  }
  CHECK_THROWS_WITH_AS(s.get("a"), doctest::Contains("modified"), Error);
  CHECK_THROWS_AS(s.get("c"), Error);
  CHECK_THROWS_AS(s.verify_all(), Error);
}

TEST_CASE("rewriting an upstream stage invalidates stages computed from the old version") {
  const auto dir = scratch("rewrite");
  ArtifactStore s(dir);
  s.put("a", "a.txt", "alpha", std::nullopt);
  s.put("b", "b.txt", "beta", std::string("a"));
  s.put("a", "a.txt", "alpha v2", std::nullopt);
  CHECK(s.get("a") == "alpha v2");
  CHECK_THROWS_WITH_AS(s.get("b"), doctest::Contains("changed since"), Error);
  s.put("b", "b.txt", "beta v2", std::string("a"));
  CHECK(s.get("b") == "beta v2");
}

TEST_CASE("missing files and text helpers") {
  const auto dir = scratch("missing");
  ArtifactStore s(dir);
  s.put("a", "a.txt", "alpha", std::nullopt);
  fs::remove(dir / "a.txt");
  CHECK_THROWS_AS(s.get("a"), Error);
  CHECK_THROWS_AS(s.entry("zzz"), Error);
  write_text_file(dir / "t.txt", "hello\n");
  CHECK(read_text_file(dir / "t.txt") == "hello\n");
  CHECK_THROWS_AS(read_text_file(dir / "nope.txt"), Error);
}
