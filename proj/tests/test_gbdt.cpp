#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "doctest.h"
#include "mts2graph/gbdt.hpp"
#include "support/synthetic.hpp"

using namespace mts2graph;

namespace {

// 100 points, class = sign of w.x with a margin
void separable(Matrix& X, std::vector<int>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  X = Matrix(100, 3);
  y.assign(100, 0);
  for (std::size_t i = 0; i < 100; ++i) {
    double s = 0;
    do {
      for (std::size_t f = 0; f < 3; ++f) X(i, f) = u(rng);
      s = X(i, 0) + 0.5 * X(i, 1) - 0.25 * X(i, 2);
    } while (std::abs(s) < 0.1);
    y[i] = s > 0 ? 1 : 0;
  }
}

}  // namespace

TEST_CASE("softmax gradient matches finite differences on a 5-sample toy") {
  std::mt19937_64 rng(1);
  Matrix S = testing::random_matrix(5, 3, rng, -2.0, 2.0);
  const std::vector<int> y{0, 2, 1, 1, 0};
  const auto g = softmax_gradients(S, y);
  const double h = 1e-6;
  double worst = 0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const double keep = S(i, c);
      S(i, c) = keep + h;
      const double lp = softmax_gradients(S, y).loss;
      S(i, c) = keep - h;
      const double lm = softmax_gradients(S, y).loss;
      S(i, c) = keep;
      const double numeric = (lp - lm) / (2 * h) * 5.0;  // loss is a mean, gradients are per sample
      const double analytic = g.grad(i, c);
      worst = std::max(worst, std::abs(numeric - analytic) / std::max({std::abs(numeric), std::abs(analytic), 1e-7}));
      CHECK(g.hess(i, c) > 0.0);
    }
  CHECK(worst <= 1e-5);
}

TEST_CASE("separable toy: training accuracy 1.0 within 100 rounds, monotone loss") {
  Matrix X;
  std::vector<int> y;
  separable(X, y, 3);
  GBDTConfig cfg;
  cfg.rounds = 100;
  const auto m = fit(X, y, cfg);
  REQUIRE(m.train_loss.size() == 101);
  for (std::size_t r = 1; r < m.train_loss.size(); ++r) CHECK(m.train_loss[r] <= m.train_loss[r - 1] + 1e-12);
  const auto p = predict(m, X);
  CHECK(p.labels == y);
  CHECK(evaluate(m, X, y) == 1.0);
  for (std::size_t i = 0; i < X.rows; ++i) {
    double s = 0;
    for (double v : p.probs.row(i)) s += v;
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
  for (const auto& round : m.rounds)
    for (const auto& tree : round)
      for (const auto& n : tree.nodes) {
        CHECK(n.feature < 3);
        CHECK(std::isfinite(n.value));
      }
}

TEST_CASE("depth-1 first tree picks the brute-force best split") {
  std::mt19937_64 rng(4);
  Matrix X = testing::random_matrix(30, 4, rng);
  std::vector<int> y(30);
  for (std::size_t i = 0; i < 30; ++i) y[i] = X(i, 2) + 0.3 * X(i, 0) > 0.1 ? 1 : 0;
  GBDTConfig cfg;
  cfg.rounds = 1;
  cfg.max_depth = 1;
  cfg.min_samples_leaf = 1;
  const auto m = fit(X, y, cfg);
  const auto& root = m.rounds[0][0].nodes[0];

  // oracle over every feature and every gap between distinct values
  const auto grads = softmax_gradients(Matrix(30, 2), y);
  double G = 0, H = 0;
  for (std::size_t i = 0; i < 30; ++i) G += grads.grad(i, 0), H += grads.hess(i, 0);
  double best = 0;
  int best_f = -1;
  double best_t = 0;
  for (std::size_t f = 0; f < 4; ++f) {
    std::vector<double> vals;
    for (std::size_t i = 0; i < 30; ++i) vals.push_back(X(i, f));
    std::sort(vals.begin(), vals.end());
    for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
      if (vals[k] == vals[k + 1]) continue;
      const double t = 0.5 * (vals[k] + vals[k + 1]);
      double GL = 0, HL = 0;
      for (std::size_t i = 0; i < 30; ++i)
        if (X(i, f) <= t) GL += grads.grad(i, 0), HL += grads.hess(i, 0);
      const double GR = G - GL, HR = H - HL;
      const double gain = GL * GL / (HL + cfg.lambda) + GR * GR / (HR + cfg.lambda) - G * G / (H + cfg.lambda);
      if (gain > best + 1e-12) {
        best = gain;
        best_f = static_cast<int>(f);
        best_t = t;
      }
    }
  }
  CHECK(root.feature == best_f);
  CHECK(root.threshold == doctest::Approx(best_t).epsilon(1e-12));
}

TEST_CASE("constant features predict the class prior; zero-round model is uniform") {
  Matrix X(9, 2, 1.5);
  const std::vector<int> y{0, 1, 1, 2, 1, 0, 1, 2, 1};
  GBDTConfig cfg;
  cfg.rounds = 20;
  const auto m = fit(X, y, cfg);
  for (int l : predict(m, X).labels) CHECK(l == 1);

  GBDTModel empty;
  empty.num_features = 2;
  empty.num_classes = 3;
  const auto p = predict(empty, X);
  for (double v : p.probs.data) CHECK(v == doctest::Approx(1.0 / 3.0));
  for (int l : p.labels) CHECK(l == 0);
}

TEST_CASE("determinism and serialisation") {
  Matrix X;
  std::vector<int> y;
  separable(X, y, 8);
  GBDTConfig cfg;
  cfg.rounds = 15;
  cfg.seed = 5;
  const auto a = fit(X, y, cfg), b = fit(X, y, cfg);
  std::ostringstream sa, sb;
  write_gbdt(sa, a);
  write_gbdt(sb, b);
  CHECK(sa.str() == sb.str());
  std::istringstream in(sa.str());
  const auto back = read_gbdt(in);
  CHECK(predict(back, X).probs == predict(a, X).probs);
  CHECK(back.train_loss == a.train_loss);
  std::istringstream junk("not a model\n");
  CHECK_THROWS_AS(read_gbdt(junk), Error);
}

TEST_CASE("accuracy cases and input errors") {
  CHECK(accuracy({0, 1, 2}, {0, 1, 2}) == 1.0);
  CHECK(accuracy({1, 0, 0}, {0, 1, 1}) == 0.0);
  CHECK(accuracy({0, 0, 0, 0, 0, 1, 1, 1, 1, 1}, {0, 0, 0, 0, 0, 0, 0, 0, 0, 0}) == 0.5);
  CHECK_THROWS_AS(accuracy({0}, {0, 1}), Error);

  Matrix X(4, 2, 0.0);
  CHECK_THROWS_AS(fit(X, {1, 1, 1, 1}, {}), Error);
  X(2, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(fit(X, {0, 1, 0, 1}, {}), Error);
  Matrix ok(4, 2, 0.0);
  ok(0, 0) = 1;
  const auto m = fit(ok, {0, 1, 0, 1}, {});
  CHECK_THROWS_AS(predict(m, Matrix(2, 3)), Error);
  CHECK_THROWS_AS(evaluate(m, ok, {0, 1}), Error);
  GBDTConfig bad;
  bad.rounds = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
}
