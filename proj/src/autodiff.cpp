#include "kmine/autodiff.hpp"

#include <cmath>

#include "kmine/errors.hpp"

namespace kmine::ad {

namespace {
constexpr double kMaskedLogit = -1e30;

inline double gelu_val(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }
inline double gelu_deriv(double x) {
  const double phi = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  return 0.5 * (1.0 + std::erf(x * M_SQRT1_2)) + x * phi;
}

// Row-stable softmax in place.
inline void softmax_rows_inplace(Mat& s) {
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    const double mx = s.row(r).maxCoeff();
    s.row(r) = (s.row(r).array() - mx).exp();
    s.row(r) /= s.row(r).sum();
  }
}
}  // namespace

Expr Graph::make(Mat v, bool needs_grad) {
  Node n;
  n.storage = std::move(v);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  nodes_.back().value = &nodes_.back().storage;
  return Expr{static_cast<int>(nodes_.size()) - 1};
}

Graph::Node& Graph::node(Expr e) { return nodes_.at(static_cast<std::size_t>(e.idx)); }
const Graph::Node& Graph::node(Expr e) const {
  return nodes_.at(static_cast<std::size_t>(e.idx));
}

bool Graph::any_needs_grad(const std::vector<Expr>& xs) const {
  for (Expr e : xs)
    if (node(e).needs_grad) return true;
  return false;
}

const Mat& Graph::value(Expr e) const { return *node(e).value; }

const Mat& Graph::grad(Expr e) {
  Node& n = node(e);
  if (!n.touched) n.grad.setZero(n.value->rows(), n.value->cols());
  return n.grad;
}

Expr Graph::input(Mat v) { return make(std::move(v), false); }

Expr Graph::leaf(Mat v) { return make(std::move(v), true); }

Expr Graph::param(Parameter& p) {
  Node n;
  n.value = &p.value;
  n.needs_grad = true;
  n.bound = &p;
  nodes_.push_back(std::move(n));
  return Expr{static_cast<int>(nodes_.size()) - 1};
}

Expr Graph::add(Expr a, Expr b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw ShapeMismatch("add: shapes differ");
  Expr y = make(value(a) + value(b), node(a).needs_grad || node(b).needs_grad);
  if (node(y).needs_grad) {
    const int ia = a.idx, ib = b.idx;
    node(y).backward = [ia, ib](Graph& g, int self) {
      g.accum(ia, g.grd(self));
      g.accum(ib, g.grd(self));
    };
  }
  return y;
}

Expr Graph::sub(Expr a, Expr b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw ShapeMismatch("sub: shapes differ");
  Expr y = make(value(a) - value(b), node(a).needs_grad || node(b).needs_grad);
  if (node(y).needs_grad) {
    const int ia = a.idx, ib = b.idx;
    node(y).backward = [ia, ib](Graph& g, int self) {
      g.accum(ia, g.grd(self));
      g.accum(ib, -g.grd(self));
    };
  }
  return y;
}

Expr Graph::cmul(Expr a, Expr b) {
  if (value(a).rows() != value(b).rows() || value(a).cols() != value(b).cols())
    throw ShapeMismatch("cmul: shapes differ");
  Expr y = make(value(a).cwiseProduct(value(b)), node(a).needs_grad || node(b).needs_grad);
  if (node(y).needs_grad) {
    const int ia = a.idx, ib = b.idx;
    node(y).backward = [ia, ib](Graph& g, int self) {
      g.accum(ia, g.grd(self).cwiseProduct(g.val(ib)));
      g.accum(ib, g.grd(self).cwiseProduct(g.val(ia)));
    };
  }
  return y;
}

Expr Graph::scale(Expr a, double c) {
  Expr y = make(value(a) * c, node(a).needs_grad);
  if (node(y).needs_grad) {
    const int ia = a.idx;
    node(y).backward = [ia, c](Graph& g, int self) { g.accum(ia, g.grd(self) * c); };
  }
  return y;
}

Expr Graph::add_rowvec(Expr a, Expr row) {
  if (value(row).rows() != 1 || value(row).cols() != value(a).cols())
    throw ShapeMismatch("add_rowvec: row vector shape");
  Mat v = value(a);
  v.rowwise() += value(row).row(0);
  Expr y = make(std::move(v), node(a).needs_grad || node(row).needs_grad);
  if (node(y).needs_grad) {
    const int ia = a.idx, ir = row.idx;
    node(y).backward = [ia, ir](Graph& g, int self) {
      g.accum(ia, g.grd(self));
      g.accum(ir, g.grd(self).colwise().sum());
    };
  }
  return y;
}

Expr Graph::matmul(Expr a, Expr b) {
  if (value(a).cols() != value(b).rows()) throw ShapeMismatch("matmul: inner dims differ");
  Expr y = make(value(a) * value(b), node(a).needs_grad || node(b).needs_grad);
  if (node(y).needs_grad) {
    const int ia = a.idx, ib = b.idx;
    node(y).backward = [ia, ib](Graph& g, int self) {
      g.accum(ia, g.grd(self) * g.val(ib).transpose());
      g.accum(ib, g.val(ia).transpose() * g.grd(self));
    };
  }
  return y;
}

Expr Graph::matmul_nt(Expr a, Expr b) {
  if (value(a).cols() != value(b).cols()) throw ShapeMismatch("matmul_nt: inner dims differ");
  Expr y = make(value(a) * value(b).transpose(), node(a).needs_grad || node(b).needs_grad);
  if (node(y).needs_grad) {
    const int ia = a.idx, ib = b.idx;
    node(y).backward = [ia, ib](Graph& g, int self) {
      g.accum(ia, g.grd(self) * g.val(ib));
      g.accum(ib, g.grd(self).transpose() * g.val(ia));
    };
  }
  return y;
}

Expr Graph::sum(const std::vector<Expr>& xs) {
  if (xs.empty()) throw ShapeMismatch("sum: no inputs");
  Mat v = value(xs[0]);
  for (std::size_t i = 1; i < xs.size(); ++i) {
    if (value(xs[i]).rows() != v.rows() || value(xs[i]).cols() != v.cols())
      throw ShapeMismatch("sum: shapes differ");
    v += value(xs[i]);
  }
  Expr y = make(std::move(v), any_needs_grad(xs));
  if (node(y).needs_grad) {
    std::vector<int> ids;
    for (Expr e : xs) ids.push_back(e.idx);
    node(y).backward = [ids](Graph& g, int self) {
      for (int i : ids) g.accum(i, g.grd(self));
    };
  }
  return y;
}

Expr Graph::slice_rows(Expr a, int r0, int h) {
  if (r0 < 0 || h < 0 || r0 + h > value(a).rows()) throw ShapeMismatch("slice_rows: range");
  Expr y = make(value(a).middleRows(r0, h), node(a).needs_grad);
  if (node(y).needs_grad) {
    const int ia = a.idx;
    node(y).backward = [ia, r0](Graph& g, int self) { g.accum_rows(ia, r0, g.grd(self)); };
  }
  return y;
}

Expr Graph::slice_cols(Expr a, int c0, int w) {
  if (c0 < 0 || w < 0 || c0 + w > value(a).cols()) throw ShapeMismatch("slice_cols: range");
  Expr y = make(value(a).middleCols(c0, w), node(a).needs_grad);
  if (node(y).needs_grad) {
    const int ia = a.idx;
    node(y).backward = [ia, c0](Graph& g, int self) { g.accum_cols(ia, c0, g.grd(self)); };
  }
  return y;
}

Expr Graph::hstack(const std::vector<Expr>& xs) {
  if (xs.empty()) throw ShapeMismatch("hstack: no inputs");
  Eigen::Index rows = value(xs[0]).rows(), cols = 0;
  for (Expr e : xs) {
    if (value(e).rows() != rows) throw ShapeMismatch("hstack: row counts differ");
    cols += value(e).cols();
  }
  Mat v(rows, cols);
  Eigen::Index c = 0;
  for (Expr e : xs) {
    v.middleCols(c, value(e).cols()) = value(e);
    c += value(e).cols();
  }
  Expr y = make(std::move(v), any_needs_grad(xs));
  if (node(y).needs_grad) {
    std::vector<std::pair<int, int>> spans;  // (idx, c0)
    int c0 = 0;
    for (Expr e : xs) {
      spans.emplace_back(e.idx, c0);
      c0 += static_cast<int>(value(e).cols());
    }
    node(y).backward = [spans](Graph& g, int self) {
      for (auto [i, c0] : spans) {
        const auto w = g.val(i).cols();
        g.accum(i, g.grd(self).middleCols(c0, w));
      }
    };
  }
  return y;
}

Expr Graph::vstack(const std::vector<Expr>& xs) {
  if (xs.empty()) throw ShapeMismatch("vstack: no inputs");
  Eigen::Index cols = value(xs[0]).cols(), rows = 0;
  for (Expr e : xs) {
    if (value(e).cols() != cols) throw ShapeMismatch("vstack: col counts differ");
    rows += value(e).rows();
  }
  Mat v(rows, cols);
  Eigen::Index r = 0;
  for (Expr e : xs) {
    v.middleRows(r, value(e).rows()) = value(e);
    r += value(e).rows();
  }
  Expr y = make(std::move(v), any_needs_grad(xs));
  if (node(y).needs_grad) {
    std::vector<std::pair<int, int>> spans;  // (idx, r0)
    int r0 = 0;
    for (Expr e : xs) {
      spans.emplace_back(e.idx, r0);
      r0 += static_cast<int>(value(e).rows());
    }
    node(y).backward = [spans](Graph& g, int self) {
      for (auto [i, r0] : spans) {
        const auto h = g.val(i).rows();
        g.accum(i, g.grd(self).middleRows(r0, h));
      }
    };
  }
  return y;
}

Expr Graph::mean_rows(Expr a) {
  const auto n = static_cast<double>(value(a).rows());
  if (n == 0) throw EmptySpan("mean_rows: no rows");
  Expr y = make(value(a).colwise().mean(), node(a).needs_grad);
  if (node(y).needs_grad) {
    const int ia = a.idx;
    node(y).backward = [ia, n](Graph& g, int self) {
      g.accum(ia, (g.grd(self) / n).replicate(g.val(ia).rows(), 1));
    };
  }
  return y;
}

Expr Graph::mean_rows_subset(Expr a, std::vector<int> rows) {
  if (rows.empty()) throw EmptySpan("mean_rows_subset: empty row set");
  Mat v = Mat::Zero(1, value(a).cols());
  for (int r : rows) v += value(a).row(r);
  v /= static_cast<double>(rows.size());
  Expr y = make(std::move(v), node(a).needs_grad);
  if (node(y).needs_grad) {
    const int ia = a.idx;
    const double n = static_cast<double>(rows.size());
    node(y).backward = [ia, rows, n](Graph& g, int self) {
      for (int r : rows) g.accum_row(ia, r, g.grd(self).row(0) / n);
    };
  }
  return y;
}

Expr Graph::gelu(Expr x) {
  Mat v = value(x).unaryExpr([](double a) { return gelu_val(a); });
  Expr y = make(std::move(v), node(x).needs_grad);
  if (node(y).needs_grad) {
    const int ix = x.idx;
    node(y).backward = [ix](Graph& g, int self) {
      g.accum(ix, g.grd(self).cwiseProduct(
                      g.val(ix).unaryExpr([](double a) { return gelu_deriv(a); })));
    };
  }
  return y;
}

Expr Graph::layer_norm(Expr x, Expr gain, Expr bias, double eps) {
  const Mat& X = value(x);
  const Eigen::Index d = X.cols();
  if (value(gain).cols() != d || value(bias).cols() != d)
    throw ShapeMismatch("layer_norm: gain/bias width");
  auto aux = std::make_shared<std::pair<Mat, Eigen::VectorXd>>();  // xhat, istd
  Mat& xhat = aux->first;
  Eigen::VectorXd& istd = aux->second;
  xhat.resize(X.rows(), d);
  istd.resize(X.rows());
  for (Eigen::Index r = 0; r < X.rows(); ++r) {
    const double mu = X.row(r).mean();
    const double var = (X.row(r).array() - mu).square().mean();
    istd(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (X.row(r).array() - mu) * istd(r);
  }
  Mat v = xhat;
  v.array().rowwise() *= value(gain).row(0).array();
  v.rowwise() += value(bias).row(0);
  Expr y = make(std::move(v),
                node(x).needs_grad || node(gain).needs_grad || node(bias).needs_grad);
  if (node(y).needs_grad) {
    const int ix = x.idx, ig = gain.idx, ib = bias.idx;
    node(y).backward = [ix, ig, ib, aux](Graph& g, int self) {
      const Mat& G = g.grd(self);
      const Mat& xh = aux->first;
      const Eigen::VectorXd& is = aux->second;
      g.accum(ig, (G.cwiseProduct(xh)).colwise().sum());
      g.accum(ib, G.colwise().sum());
      Mat dxhat = G;
      dxhat.array().rowwise() *= g.val(ig).row(0).array();
      Mat dx(xh.rows(), xh.cols());
      for (Eigen::Index r = 0; r < xh.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = dxhat.row(r).cwiseProduct(xh.row(r)).mean();
        dx.row(r) = is(r) * (dxhat.row(r).array() - m1 - xh.row(r).array() * m2);
      }
      g.accum(ix, dx);
    };
  }
  return y;
}

Expr Graph::softmax_vec(Expr x, double temperature) {
  if (value(x).cols() != 1) throw ShapeMismatch("softmax_vec: expects column vector");
  if (!(temperature > 0.0)) throw ShapeMismatch("softmax_vec: temperature must be > 0");
  Eigen::VectorXd z = value(x).col(0) / temperature;
  const double mx = z.maxCoeff();
  Eigen::VectorXd e = (z.array() - mx).exp();
  Mat v = e / e.sum();
  Expr y = make(std::move(v), node(x).needs_grad);
  if (node(y).needs_grad) {
    const int ix = x.idx;
    node(y).backward = [ix, temperature](Graph& g, int self) {
      const Mat& a = g.val(self);
      const Mat& G = g.grd(self);
      const double dot = (G.col(0).cwiseProduct(a.col(0))).sum();
      const Mat dx = a.col(0).array() * (G.col(0).array() - dot) / temperature;
      g.accum(ix, dx);
    };
  }
  return y;
}

Expr Graph::gather_rows(Expr table, std::vector<int> ids) {
  const Mat& T = value(table);
  Mat v(static_cast<Eigen::Index>(ids.size()), T.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= T.rows()) throw ShapeMismatch("gather_rows: id out of range");
    v.row(static_cast<Eigen::Index>(i)) = T.row(ids[i]);
  }
  Expr y = make(std::move(v), node(table).needs_grad);
  if (node(y).needs_grad) {
    const int it = table.idx;
    node(y).backward = [it, ids](Graph& g, int self) {
      for (std::size_t i = 0; i < ids.size(); ++i)
        g.accum_row(it, ids[i], g.grd(self).row(static_cast<Eigen::Index>(i)));
    };
  }
  return y;
}

Expr Graph::gather_rows2(Expr t1, Expr t2, std::vector<int> ids) {
  const Mat& A = value(t1);
  const Mat& B = value(t2);
  if (A.cols() != B.cols()) throw ShapeMismatch("gather_rows2: table widths differ");
  const int split = static_cast<int>(A.rows());
  Mat v(static_cast<Eigen::Index>(ids.size()), A.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= split + B.rows()) throw ShapeMismatch("gather_rows2: id out of range");
    v.row(static_cast<Eigen::Index>(i)) = id < split ? A.row(id) : B.row(id - split);
  }
  Expr y = make(std::move(v), node(t1).needs_grad || node(t2).needs_grad);
  if (node(y).needs_grad) {
    const int i1 = t1.idx, i2 = t2.idx;
    node(y).backward = [i1, i2, ids, split](Graph& g, int self) {
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto row = g.grd(self).row(static_cast<Eigen::Index>(i));
        if (ids[i] < split)
          g.accum_row(i1, ids[i], row);
        else
          g.accum_row(i2, ids[i] - split, row);
      }
    };
  }
  return y;
}

Expr Graph::attention(Expr q, Expr k, Expr v, int n_heads, int blocks, const Mat* key_mask,
                      bool causal) {
  const Mat& Q = value(q);
  const Mat& K = value(k);
  const Mat& V = value(v);
  const Eigen::Index d = Q.cols();
  if (K.cols() != d || V.cols() != d) throw ShapeMismatch("attention: widths differ");
  if (d % n_heads != 0) throw ShapeMismatch("attention: d_model % n_heads != 0");
  if (Q.rows() % blocks != 0 || K.rows() % blocks != 0 || K.rows() != V.rows())
    throw ShapeMismatch("attention: block partition");
  const int Tq = static_cast<int>(Q.rows()) / blocks;
  const int Tk = static_cast<int>(K.rows()) / blocks;
  if (key_mask && (key_mask->rows() != blocks || key_mask->cols() != Tk))
    throw ShapeMismatch("attention: key mask shape");
  const int dh = static_cast<int>(d) / n_heads;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  struct Aux {
    std::vector<Mat> probs;  // per (block, head): Tq x Tk
    int blocks, heads, Tq, Tk, dh;
    double scale;
  };
  auto aux = std::make_shared<Aux>();
  aux->blocks = blocks;
  aux->heads = n_heads;
  aux->Tq = Tq;
  aux->Tk = Tk;
  aux->dh = dh;
  aux->scale = inv_sqrt_dh;
  aux->probs.reserve(static_cast<std::size_t>(blocks * n_heads));

  Mat out(Q.rows(), d);
  for (int b = 0; b < blocks; ++b) {
    for (int h = 0; h < n_heads; ++h) {
      const auto Qh = Q.block(b * Tq, h * dh, Tq, dh);
      const auto Kh = K.block(b * Tk, h * dh, Tk, dh);
      const auto Vh = V.block(b * Tk, h * dh, Tk, dh);
      Mat s = (Qh * Kh.transpose()) * inv_sqrt_dh;
      if (key_mask) {
        for (int j = 0; j < Tk; ++j)
          if ((*key_mask)(b, j) == 0.0) s.col(j).setConstant(kMaskedLogit);
      }
      if (causal) {
        for (int i = 0; i < Tq; ++i)
          for (int j = i + 1; j < Tk; ++j) s(i, j) = kMaskedLogit;
      }
      softmax_rows_inplace(s);
      out.block(b * Tq, h * dh, Tq, dh).noalias() = s * Vh;
      aux->probs.push_back(std::move(s));
    }
  }

  Expr y = make(std::move(out),
                node(q).needs_grad || node(k).needs_grad || node(v).needs_grad);
  if (node(y).needs_grad) {
    const int iq = q.idx, ik = k.idx, iv = v.idx;
    node(y).backward = [iq, ik, iv, aux](Graph& g, int self) {
      const Mat& G = g.grd(self);
      const Mat& Q = g.val(iq);
      const Mat& K = g.val(ik);
      const Mat& V = g.val(iv);
      Mat dQ = Mat::Zero(Q.rows(), Q.cols());
      Mat dK = Mat::Zero(K.rows(), K.cols());
      Mat dV = Mat::Zero(V.rows(), V.cols());
      const int Tq = aux->Tq, Tk = aux->Tk, dh = aux->dh;
      for (int b = 0; b < aux->blocks; ++b) {
        for (int h = 0; h < aux->heads; ++h) {
          const Mat& A = aux->probs[static_cast<std::size_t>(b * aux->heads + h)];
          const auto Gh = G.block(b * Tq, h * dh, Tq, dh);
          const auto Qh = Q.block(b * Tq, h * dh, Tq, dh);
          const auto Kh = K.block(b * Tk, h * dh, Tk, dh);
          const auto Vh = V.block(b * Tk, h * dh, Tk, dh);
          Mat dA = Gh * Vh.transpose();            // Tq x Tk
          Mat dS(Tq, Tk);
          for (int r = 0; r < Tq; ++r) {
            const double dot = dA.row(r).cwiseProduct(A.row(r)).sum();
            dS.row(r) = A.row(r).array() * (dA.row(r).array() - dot);
          }
          dS *= aux->scale;
          dQ.block(b * Tq, h * dh, Tq, dh).noalias() += dS * Kh;
          dK.block(b * Tk, h * dh, Tk, dh).noalias() += dS.transpose() * Qh;
          dV.block(b * Tk, h * dh, Tk, dh).noalias() += A.transpose() * Gh;
        }
      }
      g.accum(iq, dQ);
      g.accum(ik, dK);
      g.accum(iv, dV);
    };
  }
  return y;
}

Expr Graph::row_scale(Expr h, Expr alpha, int i) {
  if (value(alpha).cols() != 1) throw ShapeMismatch("row_scale: alpha must be m x 1");
  if (i < 0 || i >= value(alpha).rows()) throw ShapeMismatch("row_scale: index");
  const double a = value(alpha)(i, 0);
  Expr y = make(value(h) * a, node(h).needs_grad || node(alpha).needs_grad);
  if (node(y).needs_grad) {
    const int ih = h.idx, ia = alpha.idx;
    node(y).backward = [ih, ia, i, a](Graph& g, int self) {
      g.accum(ih, g.grd(self) * a);
      g.accum_scalar(ia, i, 0, g.grd(self).cwiseProduct(g.val(ih)).sum());
    };
  }
  return y;
}

Expr Graph::nll_from_logits(Expr logits, std::vector<int> targets, int ignore_id,
                            int* token_count) {
  const Mat& L = value(logits);
  if (static_cast<Eigen::Index>(targets.size()) != L.rows())
    throw ShapeMismatch("nll_from_logits: one target per logit row");
  int count = 0;
  double total = 0.0;
  for (Eigen::Index r = 0; r < L.rows(); ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t == ignore_id) continue;
    if (t < 0 || t >= L.cols()) throw ShapeMismatch("nll_from_logits: target out of range");
    const double mx = L.row(r).maxCoeff();
    const double lse = mx + std::log((L.row(r).array() - mx).exp().sum());
    total += lse - L(r, t);
    ++count;
  }
  if (count == 0) throw NoTargetTokens("all target positions are PAD");
  if (token_count) *token_count = count;
  Mat v(1, 1);
  v(0, 0) = total / count;
  Expr y = make(std::move(v), node(logits).needs_grad);
  if (node(y).needs_grad) {
    const int il = logits.idx;
    node(y).backward = [il, targets, ignore_id, count](Graph& g, int self) {
      const double gd = g.grd(self)(0, 0) / count;
      const Mat& L = g.val(il);
      Mat dL = Mat::Zero(L.rows(), L.cols());
      for (Eigen::Index r = 0; r < L.rows(); ++r) {
        const int t = targets[static_cast<std::size_t>(r)];
        if (t == ignore_id) continue;
        const double mx = L.row(r).maxCoeff();
        Eigen::RowVectorXd p = (L.row(r).array() - mx).exp();
        p /= p.sum();
        dL.row(r) = p * gd;
        dL(r, t) -= gd;
      }
      g.accum(il, dL);
    };
  }
  return y;
}

Expr Graph::bce_onehot(Expr alpha, int gold_index, double clamp_eps) {
  const Mat& A = value(alpha);
  if (A.cols() != 1) throw ShapeMismatch("bce_onehot: alpha must be m x 1");
  const int m = static_cast<int>(A.rows());
  if (gold_index < 0 || gold_index >= m) throw GoldMissing("gold index out of range");
  const double lo = clamp_eps, hi = 1.0 - clamp_eps;
  double total = 0.0;
  for (int i = 0; i < m; ++i) {
    const double a = std::clamp(A(i, 0), lo, hi);
    total += i == gold_index ? -std::log(a) : -std::log(1.0 - a);
  }
  Mat v(1, 1);
  v(0, 0) = total / m;
  Expr y = make(std::move(v), node(alpha).needs_grad);
  if (node(y).needs_grad) {
    const int ia = alpha.idx;
    node(y).backward = [ia, gold_index, m, lo, hi](Graph& g, int self) {
      const double gd = g.grd(self)(0, 0) / m;
      const Mat& A = g.val(ia);
      Mat dA = Mat::Zero(m, 1);
      for (int i = 0; i < m; ++i) {
        const double a = A(i, 0);
        if (a < lo || a > hi) continue;  // clamped: flat
        const double yi = i == gold_index ? 1.0 : 0.0;
        dA(i, 0) = gd * (a - yi) / (a * (1.0 - a));
      }
      g.accum(ia, dA);
    };
  }
  return y;
}

Expr Graph::neg_log_entry(Expr a, int row, double clamp_eps) {
  const Mat& A = value(a);
  if (A.cols() != 1) throw ShapeMismatch("neg_log_entry: input must be m x 1");
  if (row < 0 || row >= A.rows()) throw GoldMissing("gold index out of range");
  const double lo = clamp_eps, hi = 1.0 - clamp_eps;
  Mat v(1, 1);
  v(0, 0) = -std::log(std::clamp(A(row, 0), lo, hi));
  Expr y = make(std::move(v), node(a).needs_grad);
  if (node(y).needs_grad) {
    const int ia = a.idx;
    node(y).backward = [ia, row, lo, hi](Graph& g, int self) {
      const double av = g.val(ia)(row, 0);
      if (av < lo || av > hi) return;
      Mat dA = Mat::Zero(g.val(ia).rows(), 1);
      dA(row, 0) = -g.grd(self)(0, 0) / av;
      g.accum(ia, dA);
    };
  }
  return y;
}

void Graph::backward(Expr loss, double seed) {
  Node& l = node(loss);
  if (l.value->rows() != 1 || l.value->cols() != 1)
    throw ShapeMismatch("backward: loss must be 1x1");
  l.grad.resize(1, 1);
  l.grad(0, 0) = seed;
  l.touched = true;
  for (int i = loss.idx; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.touched || !n.backward) continue;
    n.backward(*this, i);
  }
  // Flush leaf gradients into bound parameters.
  for (int i = 0; i <= loss.idx; ++i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.bound && n.touched) n.bound->grad += n.grad;
  }
}

}  // namespace kmine::ad
