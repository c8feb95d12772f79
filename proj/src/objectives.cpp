#include "kmine/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "kmine/errors.hpp"

namespace kmine::objectives {

SelectionLoss selection_loss_from_string(const std::string& s) {
  if (s == "bce") return SelectionLoss::bce;
  if (s == "ce") return SelectionLoss::ce;
  throw ConfigError("unknown selection loss: " + s);
}

void validate_lambda(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1]");
}

std::pair<double, int> nll_response(const Mat& logits, const std::vector<int>& targets,
                                    int ignore_id) {
  if (logits.rows() != static_cast<Eigen::Index>(targets.size()))
    throw ShapeMismatch("one logits row per target token required");
  double total = 0.0;
  int count = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const int y = targets[t];
    if (y == ignore_id) continue;
    if (y < 0 || y >= logits.cols()) throw ShapeMismatch("target id outside vocabulary");
    const auto row = logits.row(static_cast<Eigen::Index>(t));
    const double mx = row.maxCoeff();
    const double lse = std::log((row.array() - mx).exp().sum()) + mx;
    total += lse - row(y);
    ++count;
  }
  if (count == 0) throw NoTargetTokens("response has no scorable tokens");
  return {total / count, count};
}

double bce_selection(const Eigen::VectorXd& alpha, int gold_index, double clamp_eps) {
  const int m = static_cast<int>(alpha.size());
  if (m == 0) throw EmptyPool("empty distribution");
  if (gold_index < 0 || gold_index >= m) throw GoldMissing("gold index out of range");
  const double lo = clamp_eps, hi = 1.0 - clamp_eps;
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const double a = std::clamp(alpha(i), lo, hi);
    total += i == gold_index ? -std::log(a) : -std::log(1.0 - a);
  }
  return total / m;
}

double ce_selection(const Eigen::VectorXd& alpha, int gold_index, double clamp_eps) {
  const int m = static_cast<int>(alpha.size());
  if (m == 0) throw EmptyPool("empty distribution");
  if (gold_index < 0 || gold_index >= m) throw GoldMissing("gold index out of range");
  return -std::log(std::clamp(alpha(gold_index), clamp_eps, 1.0 - clamp_eps));
}

SampleLoss combined_loss(ad::Graph& g, ad::Expr logits, const std::vector<int>& targets,
                         int ignore_id, ad::Expr alpha, std::optional<int> gold_index,
                         double lambda, SelectionLoss sel) {
  validate_lambda(lambda);
  SampleLoss out;
  ad::Expr l_rg = g.nll_from_logits(logits, targets, ignore_id, &out.token_count);
  out.response = g.value(l_rg)(0, 0);
  if (lambda > 0.0 && gold_index.has_value()) {
    ad::Expr l_ks = sel == SelectionLoss::bce ? g.bce_onehot(alpha, *gold_index)
                                              : g.neg_log_entry(alpha, *gold_index);
    out.selection = g.value(l_ks)(0, 0);
    out.total = g.add(g.scale(l_rg, 1.0 - lambda), g.scale(l_ks, lambda));
  } else {
    out.total = l_rg;
  }
  return out;
}

}  // namespace kmine::objectives
