#pragma once

#include <functional>
#include <vector>

#include "sigcast/tensor.hpp"

namespace sigcast {

class ContractError : public std::logic_error {
  using std::logic_error::logic_error;
};

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction; backward() walks the records in
// reverse and accumulates into parent gradients exactly once per pass.
// A Tape is single-threaded; run distinct Tapes on distinct threads.
class Tape {
 public:
  static constexpr double kBceEps = 1e-7;

  Var leaf(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Elementwise (same shape unless noted).
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_const(Var a, double c);
  Var neg(Var a) { return scale(a, -1.0); }
  Var sigmoid(Var a);
  Var tanh(Var a);
  Var gelu(Var a);  // exact erf form
  Var exp(Var a);
  Var log(Var a);
  // min(x^2, 1): maps an unbounded latent to a usable probability. Shared
  // by the intensity head and the standalone intensity model.
  Var square_clamp01(Var a);

  // Structure.
  Var matmul(Var a, Var b);      // (n x k) . (k x m)
  Var transpose(Var a);          // rank 2
  Var add_rowvec(Var m, Var v);  // (n x d) + (d), broadcast over rows
  Var mul_rowvec(Var m, Var v);  // (n x d) * (d)
  Var concat(Var a, Var b, int axis);          // rank 2, axis 0 or 1
  Var stack_rows(const std::vector<Var>& rs);  // n rank-1 vars -> (n x d)
  Var concat1d(const std::vector<Var>& xs);    // rank-1 vars -> one rank-1
  Var row(Var a, int r);                       // (n x d) -> (d)
  Var slice_rows(Var a, int start, int len);
  Var slice_cols(Var a, int start, int len);
  Var slice1d(Var a, int start, int len);
  Var element(Var a, int r, int c);  // (n x d) -> scalar
  Var reshape(Var a, std::vector<int> shape);

  // Row-wise normalization / attention support.
  Var softmax_rows(Var a);                       // softmax along last axis
  Var layernorm_rows(Var a, double eps = 1e-5);  // zero-mean unit-var rows, no affine
  Var cumsum0(Var a);                            // prefix sums along axis 0

  // Reductions and losses (all produce scalars, shape {1}).
  Var sum(Var a);
  Var mean(Var a);
  Var sse(Var a, Var b);  // sum of squared differences
  // Mean binary cross-entropy; probabilities clamped to [eps, 1-eps].
  Var bce(Var probs, Var targets);

  void backward(Var loss);

  const Tensor& val(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].value; }
  const Tensor& grad(Var v) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated during backward
    bool requires_grad = false;
    std::function<void(Tape&, int)> back;  // empty for leaves/constants
  };

  Var push(Tensor value, bool requires_grad, std::function<void(Tape&, int)> back);
  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.id)]; }
  const Node& node(Var v) const { return nodes_[static_cast<std::size_t>(v.id)]; }
  Tensor& grad_buf(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }
  static void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

  std::vector<Node> nodes_;
  bool grads_ready_ = false;
};

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued function of one tensor leaf.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                  double eps = 1e-5);

}  // namespace sigcast
