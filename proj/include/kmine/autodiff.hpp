#pragma once

#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace kmine::ad {

using Mat = Eigen::MatrixXd;

enum class Group { pretrained, raw };

// A named, trainable tensor. Gradients accumulate across backward passes
// until the optimizer consumes and clears them.
struct Parameter {
  std::string name;
  Group group = Group::pretrained;
  Mat value;
  Mat grad;

  Parameter(std::string n, Group g, Mat v)
      : name(std::move(n)), group(g), value(std::move(v)) {
    grad.setZero(value.rows(), value.cols());
  }
  void zero_grad() { grad.setZero(); }
  bool grad_is_zero() const { return (grad.array() == 0.0).all(); }
};

struct Expr {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Reverse-mode tape over dense double matrices. One Graph per forward pass;
// ops append nodes, backward() sweeps them in reverse creation order. Only
// nodes actually reached from the loss propagate, so paths that merely feed
// diagnostics (e.g. the relevance distribution under max aggregation)
// contribute exactly zero gradient.
class Graph {
 public:
  Graph() = default;

  // leaves
  Expr input(Mat v);             // constant
  Expr leaf(Mat v);              // differentiable input (grad readable)
  Expr param(Parameter& p);

  // arithmetic
  Expr add(Expr a, Expr b);
  Expr sub(Expr a, Expr b);
  Expr cmul(Expr a, Expr b);
  Expr scale(Expr a, double c);
  Expr add_rowvec(Expr a, Expr row);        // broadcast (1 x c) over rows
  Expr matmul(Expr a, Expr b);              // A B
  Expr matmul_nt(Expr a, Expr b);           // A B^T
  Expr sum(const std::vector<Expr>& xs);

  // shape
  Expr slice_rows(Expr a, int r0, int h);
  Expr slice_cols(Expr a, int c0, int w);
  Expr hstack(const std::vector<Expr>& xs);
  Expr vstack(const std::vector<Expr>& xs);
  Expr mean_rows(Expr a);                   // (n x c) -> (1 x c)
  Expr mean_rows_subset(Expr a, std::vector<int> rows);

  // nonlinearities / normalization
  Expr gelu(Expr x);
  Expr layer_norm(Expr x, Expr gain, Expr bias, double eps = 1e-5);
  Expr softmax_vec(Expr x, double temperature = 1.0);  // (m x 1)

  // embeddings
  Expr gather_rows(Expr table, std::vector<int> ids);
  // Two-part table: id < t1.rows() reads t1, else t2 at (id - t1.rows()).
  Expr gather_rows2(Expr t1, Expr t2, std::vector<int> ids);

  // Multi-head attention over `blocks` independent row blocks.
  // q: (blocks*Tq x d), k/v: (blocks*Tkv x d). key_mask: optional
  // (blocks x Tkv), 1 = attend, 0 = masked. causal masks j > i.
  Expr attention(Expr q, Expr k, Expr v, int n_heads, int blocks, const Mat* key_mask,
                 bool causal);

  // alpha_i * H  (alpha: (m x 1), picks row i)
  Expr row_scale(Expr h, Expr alpha, int i);

  // losses (both return 1x1)
  Expr nll_from_logits(Expr logits, std::vector<int> targets, int ignore_id,
                       int* token_count = nullptr);
  Expr bce_onehot(Expr alpha, int gold_index, double clamp_eps = 1e-7);
  // -log(clamp(a(row, 0))), for categorical CE over an (m x 1) distribution.
  Expr neg_log_entry(Expr a, int row, double clamp_eps = 1e-7);

  // convenience: x W + b  (x: n x in, W: in x out, b: 1 x out)
  Expr linear(Expr x, Parameter& W, Parameter& b) {
    return add_rowvec(matmul(x, param(W)), param(b));
  }

  const Mat& value(Expr e) const;
  const Mat& grad(Expr e);  // zero matrix if the node was never reached
  void backward(Expr loss, double seed = 1.0);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat storage;
    const Mat* value = nullptr;  // &storage or external parameter value
    Mat grad;
    bool needs_grad = false;
    bool touched = false;
    Parameter* bound = nullptr;  // for param leaves
    std::function<void(Graph&, int)> backward;
  };

  // deque: node addresses stay stable as the tape grows, so value pointers
  // into node storage remain valid.
  std::deque<Node> nodes_;

  Expr make(Mat v, bool needs_grad);
  Node& node(Expr e);
  const Node& node(Expr e) const;
  bool any_needs_grad(const std::vector<Expr>& xs) const;

 public:
  // Gradient accumulation used by backward closures (public for lambdas).
  template <typename D>
  void accum(int idx, const Eigen::MatrixBase<D>& delta) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.needs_grad) return;
    if (!n.touched) {
      n.grad = delta;
      n.touched = true;
    } else {
      n.grad += delta;
    }
  }
  template <typename D>
  void accum_rows(int idx, int r0, const Eigen::MatrixBase<D>& delta) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.needs_grad) return;
    if (!n.touched) {
      n.grad.setZero(n.value->rows(), n.value->cols());
      n.touched = true;
    }
    n.grad.middleRows(r0, delta.rows()) += delta;
  }
  template <typename D>
  void accum_row(int idx, int r, const Eigen::MatrixBase<D>& delta) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.needs_grad) return;
    if (!n.touched) {
      n.grad.setZero(n.value->rows(), n.value->cols());
      n.touched = true;
    }
    n.grad.row(r) += delta;
  }
  template <typename D>
  void accum_cols(int idx, int c0, const Eigen::MatrixBase<D>& delta) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.needs_grad) return;
    if (!n.touched) {
      n.grad.setZero(n.value->rows(), n.value->cols());
      n.touched = true;
    }
    n.grad.middleCols(c0, delta.cols()) += delta;
  }
  void accum_scalar(int idx, int r, int c, double delta) {
    Node& n = nodes_[static_cast<std::size_t>(idx)];
    if (!n.needs_grad) return;
    if (!n.touched) {
      n.grad.setZero(n.value->rows(), n.value->cols());
      n.touched = true;
    }
    n.grad(r, c) += delta;
  }
  const Mat& val(int idx) const { return *nodes_[static_cast<std::size_t>(idx)].value; }
  const Mat& grd(int idx) const { return nodes_[static_cast<std::size_t>(idx)].grad; }
};

}  // namespace kmine::ad
