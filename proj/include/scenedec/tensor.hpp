#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "scenedec/common.hpp"

namespace scenedec::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& s);
std::string shape_str(const Shape& s);

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One value in the computation graph. The graph is rebuilt every step; nodes
// own their parents, so releasing the step's outputs releases the whole tape.
// Backward closures capture raw parent pointers only (ownership stays with
// `parents`), which keeps the graph cycle-free.
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // lazily allocated, same length as values
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor constant(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  std::size_t rank() const { return n_->shape.size(); }
  std::size_t dim(std::size_t i) const { return n_->shape[i]; }
  std::size_t size() const { return n_->values.size(); }

  const std::vector<double>& values() const { return n_->values; }
  std::vector<double>& mutable_values() { return n_->values; }
  double item() const;
  double at(std::size_t i) const { return n_->values[i]; }

  bool requires_grad() const { return n_->requires_grad; }
  // Leaf-only toggle; used to freeze parameters.
  void set_requires_grad(bool rg);
  bool has_grad() const { return n_ && n_->grad.size() == n_->values.size(); }
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  // Drops the buffer entirely, so has_grad() reports whether anything has
  // accumulated since the last zero_grad.
  void zero_grad();

  // Fresh leaf with the same values (no graph edge to this tensor).
  Tensor detached_copy(bool requires_grad = false) const;

  Node* node() const { return n_.get(); }
  NodePtr node_ptr() const { return n_; }
  static Tensor wrap(NodePtr n) {
    Tensor t;
    t.n_ = std::move(n);
    return t;
  }

 private:
  NodePtr n_;
};

// Runs reverse-mode accumulation from a scalar loss. Gradients accumulate
// additively into every reachable tensor that requires grad.
void backward(const Tensor& loss);

enum class Unary { Exp, Erf, Sigmoid, Relu, Square, Sqrt, Softplus, Log };

Tensor elementwise(Unary op, const Tensor& x);
Tensor exp(const Tensor& x);
Tensor erf(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor square(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor log(const Tensor& x);

Tensor scale(const Tensor& x, double c);
Tensor add_constant(const Tensor& x, double c);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);
// a/b where b != 0, exactly 0 where b == 0 (value and gradient).
Tensor safe_divide(const Tensor& a, const Tensor& b);

// x * s with s a scalar tensor (shape {1}), broadcast over x.
Tensor scale_by(const Tensor& x, const Tensor& s);

// x (C,H,W) times m (H,W), broadcast across channels.
Tensor scale_channels(const Tensor& x, const Tensor& m);

Tensor matmul(const Tensor& a, const Tensor& b);
// a (m,d) * b (n,d)^T -> (m,n).
Tensor matmul_nt(const Tensor& a, const Tensor& b);

// Cross-correlation with same-padding: x (C,H,W), k (F,C,kh,kw), output
// (F, ceil(H/stride), ceil(W/stride)).
Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride);
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// Row-wise softmax of beta*m with max subtraction; m has rank 2.
Tensor softmax_rows(const Tensor& m, double beta);

Tensor reduce_sum(const Tensor& x);
Tensor reduce_mean(const Tensor& x);
Tensor reduce_sum(const Tensor& x, const std::vector<std::size_t>& axes);
Tensor reduce_mean(const Tensor& x, const std::vector<std::size_t>& axes);

Tensor reshape(const Tensor& x, Shape shape);
Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len);
Tensor concat_flat(const std::vector<Tensor>& parts);
// Rows must share one flattened length d; output shape (rows, d).
Tensor stack_rows(const std::vector<Tensor>& rows);
// Nearest-neighbour 2x upsample of (C,H,W).
Tensor upsample2x(const Tensor& x);

}  // namespace scenedec::ad
