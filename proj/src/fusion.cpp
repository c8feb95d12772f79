#include "kmine/fusion.hpp"

#include <cmath>

#include "kmine/errors.hpp"

namespace kmine::fusion {

Mode mode_from_string(const std::string& s) {
  if (s == "fused") return Mode::fused;
  if (s == "mean") return Mode::mean;
  if (s == "max") return Mode::max;
  throw ConfigError("unknown fusion mode: " + s);
}

std::string to_string(Mode mode) {
  switch (mode) {
    case Mode::fused: return "fused";
    case Mode::mean: return "mean";
    case Mode::max: return "max";
  }
  throw Error("unreachable");
}

int argmax_lowest(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw EmptyPool("argmax over empty vector");
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

namespace {

std::vector<int> span_rows(const encoding::AssembledInput& input, int row) {
  std::vector<int> idx;
  for (int t = input.last_utterance_span.begin; t < input.last_utterance_span.end; ++t)
    if (input.attention_mask(row, t) != 0.0) idx.push_back(t);
  if (idx.empty()) throw EmptySpan("last-utterance span has no attendable positions");
  return idx;
}

}  // namespace

Mat pool_features(const EncoderStates& states, const encoding::AssembledInput& input) {
  const int m = states.m();
  if (m == 0) throw EmptyPool("no encoder states to pool");
  if (m != input.m || states.T() != input.T)
    throw ShapeMismatch("encoder states do not match the assembled input");
  const int d = static_cast<int>(states.rows[0].cols());
  Mat out(m, 2 * d);
  for (int i = 0; i < m; ++i) {
    out.block(i, 0, 1, d) = states.rows[i].row(0);
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
    std::vector<int> idx = span_rows(input, i);
    for (int t : idx) mean += states.rows[i].row(t);
    out.block(i, d, 1, d) = mean / static_cast<double>(idx.size());
  }
  return out;
}

Eigen::VectorXd score(const Mat& features, const Mat& W, const Mat& b) {
  if (features.cols() != W.rows() || W.cols() != 1 || b.rows() != 1 || b.cols() != 1)
    throw ShapeMismatch("scorer shapes: features m x 2d, W 2d x 1, b 1 x 1");
  return (features * W).col(0).array() + b(0, 0);
}

Eigen::VectorXd normalize(const Eigen::VectorXd& raw, double temperature) {
  if (raw.size() == 0) throw EmptyPool("cannot normalize an empty score vector");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  Eigen::ArrayXd z = raw.array() / temperature;
  z -= z.maxCoeff();
  Eigen::ArrayXd e = z.exp();
  return e / e.sum();
}

Eigen::RowVectorXd union_mask(const Mat& attention_mask) {
  return attention_mask.colwise().maxCoeff();
}

bool is_distribution(const Eigen::VectorXd& alpha, double tol) {
  if (alpha.size() == 0) return false;
  for (int i = 0; i < alpha.size(); ++i)
    if (!std::isfinite(alpha(i)) || alpha(i) < 0.0) return false;
  return std::abs(alpha.sum() - 1.0) <= tol;
}

FusedState aggregate(const EncoderStates& states, const Eigen::VectorXd& alpha, Mode mode) {
  const int m = states.m();
  if (m == 0) throw EmptyPool("no encoder states to aggregate");
  if (alpha.size() != m) throw ShapeMismatch("alpha length does not match pool size");
  FusedState out;
  out.mask = union_mask(states.mask);
  switch (mode) {
    case Mode::fused: {
      out.states = Mat::Zero(states.T(), states.rows[0].cols());
      for (int i = 0; i < m; ++i) out.states += alpha(i) * states.rows[i];
      break;
    }
    case Mode::mean: {
      out.states = Mat::Zero(states.T(), states.rows[0].cols());
      for (int i = 0; i < m; ++i) out.states += states.rows[i];
      out.states /= static_cast<double>(m);
      break;
    }
    case Mode::max: {
      out.states = states.rows[static_cast<std::size_t>(argmax_lowest(alpha))];
      break;
    }
  }
  return out;
}

ad::Expr pool_features_expr(ad::Graph& g, ad::Expr stacked,
                            const encoding::AssembledInput& input) {
  const int m = input.m;
  const int T = input.T;
  if (m == 0) throw EmptyPool("no rows to pool");
  if (g.value(stacked).rows() != static_cast<Eigen::Index>(m) * T)
    throw ShapeMismatch("stacked states do not match the assembled input");
  std::vector<ad::Expr> feats;
  feats.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    ad::Expr cls = g.slice_rows(stacked, i * T, 1);
    std::vector<int> idx = span_rows(input, i);
    for (int& t : idx) t += i * T;
    ad::Expr lu = g.mean_rows_subset(stacked, std::move(idx));
    feats.push_back(g.hstack({cls, lu}));
  }
  return g.vstack(feats);
}

ad::Expr score_expr(ad::Graph& g, ad::Expr features, ad::Parameter& W, ad::Parameter& b) {
  return g.linear(features, W, b);
}

ad::Expr normalize_expr(ad::Graph& g, ad::Expr raw, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  return g.softmax_vec(raw, temperature);
}

ad::Expr aggregate_expr(ad::Graph& g, ad::Expr stacked, ad::Expr alpha, Mode mode, int m, int T) {
  if (m <= 0) throw EmptyPool("no rows to aggregate");
  switch (mode) {
    case Mode::fused: {
      std::vector<ad::Expr> terms;
      terms.reserve(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i)
        terms.push_back(g.row_scale(g.slice_rows(stacked, i * T, T), alpha, i));
      return g.sum(terms);
    }
    case Mode::mean: {
      std::vector<ad::Expr> terms;
      terms.reserve(static_cast<std::size_t>(m));
      for (int i = 0; i < m; ++i) terms.push_back(g.slice_rows(stacked, i * T, T));
      return g.scale(g.sum(terms), 1.0 / static_cast<double>(m));
    }
    case Mode::max: {
      Eigen::VectorXd a = g.value(alpha).col(0);
      return g.slice_rows(stacked, argmax_lowest(a) * T, T);
    }
  }
  throw Error("unreachable");
}

}  // namespace kmine::fusion
