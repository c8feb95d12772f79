#include <doctest.h>

#include <cmath>
#include <optional>
#include <vector>

#include "kmine/autodiff.hpp"
#include "kmine/errors.hpp"
#include "kmine/objectives.hpp"
#include "kmine/util.hpp"

using namespace kmine;
using namespace kmine::objectives;
using ad::Expr;
using ad::Graph;
using ad::Mat;

namespace {

Mat random_mat(Rng& rng, int r, int c) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("nll_response: uniform logits over V=4 give ln 4") {
  Mat logits = Mat::Constant(3, 4, 0.7);  // any constant row = uniform
  auto [nll, count] = nll_response(logits, {0, 2, 3}, /*ignore_id=*/99);
  CHECK(count == 3);
  CHECK(nll == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("nll_response: probability one on targets gives zero") {
  Mat logits = Mat::Zero(2, 5);
  logits(0, 1) = 1000.0;
  logits(1, 4) = 1000.0;
  auto [nll, count] = nll_response(logits, {1, 4}, 99);
  CHECK(count == 2);
  CHECK(nll == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("nll_response: model probs 0.5 and 0.25 average to (ln2+ln4)/2") {
  // row 0: probs [0.5, 0.25, 0.25] target 0; row 1: same, target 1
  Mat logits(2, 3);
  logits << std::log(2.0), 0.0, 0.0, std::log(2.0), 0.0, 0.0;
  auto [nll, count] = nll_response(logits, {0, 1}, 99);
  CHECK(count == 2);
  const double expect = (std::log(2.0) + std::log(4.0)) / 2.0;
  CHECK(nll == doctest::Approx(expect).epsilon(1e-12));
  CHECK(nll == doctest::Approx(1.0397).epsilon(1e-4));
}

TEST_CASE("nll_response: PAD positions are skipped; all-PAD raises") {
  Mat logits = Mat::Constant(3, 4, 0.0);
  logits(1, 2) = 50.0;  // would dominate if counted
  auto [nll, count] = nll_response(logits, {0, 99, 3}, 99);
  CHECK(count == 2);
  CHECK(nll == doctest::Approx(std::log(4.0)).epsilon(1e-9));
  CHECK_THROWS_AS(nll_response(logits, {99, 99, 99}, 99), NoTargetTokens);
}

TEST_CASE("nll_response: shape violations rejected") {
  Mat logits = Mat::Zero(2, 4);
  CHECK_THROWS_AS(nll_response(logits, {0, 1, 2}, 99), ShapeMismatch);
}

TEST_CASE("nll is numerically stable for large logits") {
  Mat logits(1, 3);
  logits << 1e4, -1e4, 0.0;
  auto [nll, count] = nll_response(logits, {0}, 99);
  CHECK(std::isfinite(nll));
  CHECK(nll == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("bce_selection: near one-hot at gold is near zero") {
  Eigen::VectorXd alpha(3);
  alpha << 1.0, 0.0, 0.0;
  CHECK(bce_selection(alpha, 0) < 1e-5);
}

TEST_CASE("bce_selection: uniform two options, gold 0, gives ln 2") {
  Eigen::VectorXd alpha(2);
  alpha << 0.5, 0.5;
  CHECK(bce_selection(alpha, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("bce_selection: clamping bounds the worst case") {
  Eigen::VectorXd alpha(2);
  alpha << 0.0, 1.0;
  const double loss = bce_selection(alpha, 0);
  CHECK(std::isfinite(loss));
  CHECK(loss <= -std::log(1e-7) + 1e-9);
  CHECK(loss > 10.0);  // still a huge penalty
}

TEST_CASE("bce_selection: independent oracle on random distributions") {
  Rng rng(5);
  for (int it = 0; it < 50; ++it) {
    const int m = 2 + static_cast<int>(rng.uniform_int(0, 5));
    Eigen::VectorXd raw(m);
    for (int i = 0; i < m; ++i) raw(i) = rng.normal();
    Eigen::VectorXd alpha = raw.array().exp();
    alpha /= alpha.sum();
    const int gold = rng.uniform_int(0, m - 1);
    double expect = 0.0;
    for (int i = 0; i < m; ++i) {
      double p = std::min(1.0 - 1e-7, std::max(1e-7, alpha(i)));
      expect += (i == gold) ? -std::log(p) : -std::log(1.0 - p);
    }
    expect /= m;
    CHECK(bce_selection(alpha, gold) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("bce/ce selection: bounds errors") {
  Eigen::VectorXd alpha(2);
  alpha << 0.5, 0.5;
  CHECK_THROWS_AS(bce_selection(alpha, -1), GoldMissing);
  CHECK_THROWS_AS(bce_selection(alpha, 2), GoldMissing);
  CHECK_THROWS_AS(ce_selection(alpha, 5), GoldMissing);
  CHECK_THROWS_AS(bce_selection(Eigen::VectorXd(), 0), EmptyPool);
}

TEST_CASE("ce_selection is the clamped negative log of the gold entry") {
  Eigen::VectorXd alpha(4);
  alpha << 0.1, 0.2, 0.3, 0.4;
  CHECK(ce_selection(alpha, 2) == doctest::Approx(-std::log(0.3)).epsilon(1e-12));
  Eigen::VectorXd hard(2);
  hard << 0.0, 1.0;
  CHECK(ce_selection(hard, 0) == doctest::Approx(-std::log(1e-7)).epsilon(1e-9));
}

TEST_CASE("validate_lambda accepts [0,1] and rejects outside") {
  validate_lambda(0.0);
  validate_lambda(0.5);
  validate_lambda(1.0);
  CHECK_THROWS_AS(validate_lambda(-0.1), ConfigError);
  CHECK_THROWS_AS(validate_lambda(1.1), ConfigError);
}

TEST_CASE("selection_loss_from_string") {
  CHECK(selection_loss_from_string("bce") == SelectionLoss::bce);
  CHECK(selection_loss_from_string("ce") == SelectionLoss::ce);
  CHECK_THROWS_AS(selection_loss_from_string("mse"), ConfigError);
}

TEST_CASE("combined_loss: lambda 0 totals exactly l_rg") {
  Graph g;
  Rng rng(7);
  Expr logits = g.leaf(random_mat(rng, 3, 6));
  Eigen::VectorXd av(3);
  av << 0.2, 0.5, 0.3;
  Expr alpha = g.leaf(av);
  auto sl = combined_loss(g, logits, {1, 2, 3}, 99, alpha, 1, 0.0);
  CHECK(g.value(sl.total)(0, 0) == sl.response);
  CHECK(sl.token_count == 3);
}

TEST_CASE("combined_loss: lambda 0.5 with l_rg 2 and l_ks 4 totals 3") {
  Graph g;
  // logits chosen so the row NLL is exactly 2: probs [e^-2, 1-e^-2]
  Mat lg(1, 2);
  lg << 0.0, std::log(std::exp(2.0) - 1.0);
  Expr logits = g.leaf(lg);
  // alpha chosen so BCE is exactly 4:
  // mean over 2 entries of -[log p_g + log(1-p_o)] with symmetric entries
  // p = [x, 1-x]: loss = -log(x). Want 4 -> x = e^-4.
  Eigen::VectorXd av(2);
  av << std::exp(-4.0), 1.0 - std::exp(-4.0);
  Expr alpha = g.leaf(av);
  auto sl = combined_loss(g, logits, {0}, 99, alpha, 0, 0.5);
  CHECK(sl.response == doctest::Approx(2.0).epsilon(1e-12));
  REQUIRE(sl.selection.has_value());
  CHECK(*sl.selection == doctest::Approx(4.0).epsilon(1e-9));
  CHECK(g.value(sl.total)(0, 0) == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("combined_loss: lambda 1 totals l_ks alone") {
  Graph g;
  Rng rng(8);
  Expr logits = g.leaf(random_mat(rng, 2, 5));
  Eigen::VectorXd av(2);
  av << 0.5, 0.5;
  Expr alpha = g.leaf(av);
  auto sl = combined_loss(g, logits, {1, 2}, 99, alpha, 0, 1.0);
  REQUIRE(sl.selection.has_value());
  CHECK(g.value(sl.total)(0, 0) == doctest::Approx(*sl.selection).epsilon(1e-12));
}

TEST_CASE("combined_loss: missing gold drops the selection term entirely") {
  Graph g;
  Rng rng(9);
  Mat lg = random_mat(rng, 2, 5);
  Expr logits = g.leaf(lg);
  Eigen::VectorXd av(2);
  av << 0.9, 0.1;
  Expr alpha = g.leaf(av);
  auto sl = combined_loss(g, logits, {1, 2}, 99, alpha, std::nullopt, 0.5);
  CHECK_FALSE(sl.selection.has_value());
  // total equals the full (un-reweighted) l_rg
  auto [nll, count] = nll_response(lg, {1, 2}, 99);
  CHECK(g.value(sl.total)(0, 0) == doctest::Approx(nll).epsilon(1e-12));
}

TEST_CASE("combined loss is continuous and piecewise linear in lambda") {
  Rng rng(10);
  Mat lg = random_mat(rng, 2, 4);
  Eigen::VectorXd av(3);
  av << 0.6, 0.3, 0.1;
  auto total_at = [&](double lam) {
    Graph g;
    auto sl = combined_loss(g, g.leaf(lg), {1, 3}, 99, g.leaf(av), 0, lam);
    return g.value(sl.total)(0, 0);
  };
  const double t0 = total_at(0.0), t025 = total_at(0.25), t05 = total_at(0.5),
               t1 = total_at(1.0);
  CHECK(t05 == doctest::Approx((t0 + t1) / 2.0).epsilon(1e-9));
  CHECK(t025 == doctest::Approx(0.75 * t0 + 0.25 * t1).epsilon(1e-9));
}

TEST_CASE("gradient of the mixture is the mixture of gradients") {
  Rng rng(11);
  Mat lg = random_mat(rng, 3, 5);
  Eigen::VectorXd raw(4);
  for (int i = 0; i < 4; ++i) raw(i) = rng.normal();

  // at lambda=0 only logits receive gradient; at 1 only the alpha path
  auto run = [&](double lam) {
    Graph g;
    Expr logits = g.leaf(lg);
    Expr rawl = g.leaf(raw);
    Expr alpha = g.softmax_vec(rawl);
    auto sl = combined_loss(g, logits, {0, 2, 4}, 99, alpha, 1, lam);
    g.backward(sl.total);
    return std::make_pair(g.grad(logits), g.grad(rawl));
  };
  auto [gl0, gr0] = run(0.0);
  auto [gl1, gr1] = run(1.0);
  auto [gl5, gr5] = run(0.5);
  CHECK((gr0.array() == 0.0).all());
  CHECK((gl1.array() == 0.0).all());
  CHECK((gl5 - 0.5 * gl0).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((gr5 - 0.5 * gr1).cwiseAbs().maxCoeff() < 1e-12);

  // and both match central finite differences
  auto value_at = [&](const Mat& l, const Eigen::VectorXd& r, double lam) {
    Graph g;
    auto sl = combined_loss(g, g.leaf(l), {0, 2, 4}, 99, g.softmax_vec(g.leaf(r)), 1, lam);
    return g.value(sl.total)(0, 0);
  };
  const double h = 1e-6;
  double worst = 0.0;
  for (int i = 0; i < lg.rows(); ++i)
    for (int j = 0; j < lg.cols(); ++j) {
      Mat p = lg, m = lg;
      p(i, j) += h;
      m(i, j) -= h;
      double fd = (value_at(p, raw, 0.5) - value_at(m, raw, 0.5)) / (2 * h);
      worst = std::max(worst, std::abs(fd - gl5(i, j)) /
                                  std::max({std::abs(fd), std::abs(gl5(i, j)), 1e-8}));
    }
  for (int i = 0; i < raw.size(); ++i) {
    Eigen::VectorXd p = raw, m = raw;
    p(i) += h;
    m(i) -= h;
    double fd = (value_at(lg, p, 0.5) - value_at(lg, m, 0.5)) / (2 * h);
    worst = std::max(worst,
                     std::abs(fd - gr5(i, 0)) / std::max({std::abs(fd), std::abs(gr5(i, 0)), 1e-8}));
  }
  CHECK(worst < 1e-4);
}
