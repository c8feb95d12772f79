#pragma once

#include <string>

#include "kmine/assembly.hpp"
#include "kmine/autodiff.hpp"
#include "kmine/model.hpp"

namespace kmine::fusion {

using ad::Mat;
using model::EncoderStates;
using model::FusedState;

enum class Mode { fused, mean, max };

Mode mode_from_string(const std::string& s);
std::string to_string(Mode mode);

// Lowest index wins ties so runs are reproducible.
int argmax_lowest(const Eigen::VectorXd& v);

// -- value-level ops (plain Eigen, no tape) --

// Per-row feature: [ CLS state ; mean of states over the non-pad part of the
// last-utterance span ]. Result is m x 2d.
Mat pool_features(const EncoderStates& states, const encoding::AssembledInput& input);
Eigen::VectorXd score(const Mat& features, const Mat& W, const Mat& b);
Eigen::VectorXd normalize(const Eigen::VectorXd& raw, double temperature = 1.0);
FusedState aggregate(const EncoderStates& states, const Eigen::VectorXd& alpha, Mode mode);
// A position is attendable in the fused sequence if any row attends to it.
Eigen::RowVectorXd union_mask(const Mat& attention_mask);

bool is_distribution(const Eigen::VectorXd& alpha, double tol = 1e-9);

// -- graph builders (same math on the tape; stacked is m*T x d) --

ad::Expr pool_features_expr(ad::Graph& g, ad::Expr stacked,
                            const encoding::AssembledInput& input);
ad::Expr score_expr(ad::Graph& g, ad::Expr features, ad::Parameter& W, ad::Parameter& b);
ad::Expr normalize_expr(ad::Graph& g, ad::Expr raw, double temperature = 1.0);
ad::Expr aggregate_expr(ad::Graph& g, ad::Expr stacked, ad::Expr alpha, Mode mode, int m, int T);

}  // namespace kmine::fusion
