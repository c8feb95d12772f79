#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "kmine/autodiff.hpp"

namespace kmine::objectives {

using ad::Mat;

enum class SelectionLoss { bce, ce };

SelectionLoss selection_loss_from_string(const std::string& s);

// Mean negative log-likelihood over non-ignored target positions plus the
// number of positions counted. logits row t scores targets[t].
std::pair<double, int> nll_response(const Mat& logits, const std::vector<int>& targets,
                                    int ignore_id);

// Binary cross-entropy of alpha against a one-hot gold vector, averaged
// over the pool. Probabilities are clamped to [eps, 1-eps].
double bce_selection(const Eigen::VectorXd& alpha, int gold_index, double clamp_eps = 1e-7);
double ce_selection(const Eigen::VectorXd& alpha, int gold_index, double clamp_eps = 1e-7);

struct SampleLoss {
  ad::Expr total;
  double response = 0.0;               // l_rg value
  std::optional<double> selection;     // l_ks value when the sample has gold
  int token_count = 0;
};

// (1 - lambda) * l_rg + lambda * l_ks when gold is present and lambda > 0;
// plain l_rg otherwise (the selection term is dropped, not re-weighted).
SampleLoss combined_loss(ad::Graph& g, ad::Expr logits, const std::vector<int>& targets,
                         int ignore_id, ad::Expr alpha, std::optional<int> gold_index,
                         double lambda, SelectionLoss sel = SelectionLoss::bce);

void validate_lambda(double lambda);

}  // namespace kmine::objectives
