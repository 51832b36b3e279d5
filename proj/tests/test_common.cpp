#include <cmath>

#include "doctest.h"
#include "mts2graph/common.hpp"

using namespace mts2graph;

TEST_CASE("znormalize: closed form and constant input") {
  const std::vector<double> x{1, 2, 3};
  const auto z = znormalize(x);
  CHECK(z[0] == doctest::Approx(-std::sqrt(1.5)).epsilon(1e-12));
  CHECK(z[1] == doctest::Approx(0.0));
  CHECK(z[2] == doctest::Approx(std::sqrt(1.5)).epsilon(1e-12));
  for (double v : znormalize(std::vector<double>{5, 5, 5})) CHECK(v == 0.0);
}

TEST_CASE("argmax ties resolve to the lowest index") {
  CHECK(argmax(std::vector<double>{1, 3, 3, 2}) == 1);
  CHECK(argmax(std::vector<double>{0.5, 0.5}) == 0);
}

TEST_CASE("softmax sums to one and survives large logits") {
  const auto p = softmax(std::vector<double>{1000, 1001, 999});
  double s = 0;
  for (double v : p) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p[1] > p[0]);
}

TEST_CASE("derive_seed separates tags and indices and is stable") {
  CHECK(derive_seed(1, "cnn", 0) == derive_seed(1, "cnn", 0));
  CHECK(derive_seed(1, "cnn", 0) != derive_seed(1, "cnn", 1));
  CHECK(derive_seed(1, "cnn", 0) != derive_seed(1, "kshape", 0));
  CHECK(derive_seed(1, "cnn", 0) != derive_seed(2, "cnn", 0));
}

TEST_CASE("sha256 of known strings") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
