#include "scenedec/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace scenedec::ad {

std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

namespace {

NodePtr new_node(Shape shape, std::vector<double> values) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->values = std::move(values);
  return n;
}

void attach(const NodePtr& out, const std::vector<Tensor>& inputs,
            std::function<void(Node&)> fn) {
  bool rg = false;
  for (const auto& t : inputs) rg = rg || t.requires_grad();
  if (!rg) return;
  out->requires_grad = true;
  for (const auto& t : inputs) out->parents.push_back(t.node_ptr());
  out->backward_fn = std::move(fn);
}

// C[m,n] += A[m,k] * B[k,n]
void mm_nn_acc(const double* A, const double* B, double* C, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = C + i * n;
    const double* arow = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double a = arow[p];
      const double* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

// C[m,n] += A[m,k] * B[n,k]^T
void mm_nt_acc(const double* A, const double* B, double* C, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = A + i * k;
    double* crow = C + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = B + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// C[m,n] += A[k,m]^T * B[k,n]
void mm_tn_acc(const double* A, const double* B, double* C, std::size_t m,
               std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = A + p * m;
    const double* brow = B + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double a = arow[i];
      double* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += a * brow[j];
    }
  }
}

void acc_into(Node* p, const std::vector<double>& contrib) {
  if (!p->requires_grad) return;
  p->ensure_grad();
  for (std::size_t i = 0; i < contrib.size(); ++i) p->grad[i] += contrib[i];
}

// Calls fn(in_linear, out_linear) for every element, where out_linear is the
// linear index after dropping `reduced` axes.
template <typename Fn>
void for_each_reduced(const Shape& shape, const std::vector<bool>& reduced, Fn fn) {
  const std::size_t rank = shape.size();
  std::vector<std::size_t> out_stride(rank, 0);
  std::size_t acc = 1;
  for (std::size_t i = rank; i-- > 0;) {
    if (!reduced[i]) {
      out_stride[i] = acc;
      acc *= shape[i];
    }
  }
  std::vector<std::size_t> idx(rank, 0);
  const std::size_t total = numel(shape);
  std::size_t out_lin = 0;
  for (std::size_t lin = 0; lin < total; ++lin) {
    fn(lin, out_lin);
    for (std::size_t a = rank; a-- > 0;) {
      idx[a]++;
      out_lin += out_stride[a];
      if (idx[a] < shape[a]) break;
      idx[a] = 0;
      out_lin -= out_stride[a] * shape[a];
    }
  }
}

}  // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto n = new_node(shape, std::vector<double>(numel(shape), 0.0));
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::constant(Shape shape, double value) {
  auto n = new_node(shape, std::vector<double>(numel(shape), value));
  return wrap(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check(values.size() == numel(shape),
        "tensor value count " + std::to_string(values.size()) +
            " does not match shape " + shape_str(shape));
  auto n = new_node(std::move(shape), std::move(values));
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

double Tensor::item() const {
  check(size() == 1, "item() requires a scalar tensor, got " + shape_str(shape()));
  return n_->values[0];
}

void Tensor::set_requires_grad(bool rg) {
  check(n_->parents.empty(), "requires_grad can only be toggled on leaf tensors");
  n_->requires_grad = rg;
  if (!rg) n_->grad.clear();
}

const std::vector<double>& Tensor::grad() const {
  check(has_grad(), "tensor has no gradient");
  return n_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
  n_->ensure_grad();
  return n_->grad;
}

void Tensor::zero_grad() {
  if (n_) n_->grad.clear();
}

Tensor Tensor::detached_copy(bool requires_grad) const {
  auto n = new_node(n_->shape, n_->values);
  n->requires_grad = requires_grad;
  return wrap(std::move(n));
}

void backward(const Tensor& loss) {
  check(loss.defined() && loss.size() == 1, "backward requires a scalar loss");
  check(loss.requires_grad(), "backward requires a loss that requires grad");
  Node* root = loss.node();

  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  visited.insert(root);
  stack.emplace_back(root, 0);
  while (!stack.empty()) {
    auto& [n, i] = stack.back();
    if (i < n->parents.size()) {
      Node* p = n->parents[i].get();
      ++i;
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward_fn) continue;
    n->ensure_grad();
    n->backward_fn(*n);
  }
}

namespace {

struct UnaryFns {
  double (*fw)(double);
  double (*bw)(double x, double y);  // d out / d x given input x and output y
};

constexpr double kTwoOverSqrtPi = 1.1283791670955126;

double sigmoid_stable(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_stable(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

UnaryFns unary_fns(Unary op) {
  switch (op) {
    case Unary::Exp:
      return {[](double x) { return std::exp(x); },
              [](double, double y) { return y; }};
    case Unary::Erf:
      return {[](double x) { return std::erf(x); },
              [](double x, double) { return kTwoOverSqrtPi * std::exp(-x * x); }};
    case Unary::Sigmoid:
      return {sigmoid_stable, [](double, double y) { return y * (1.0 - y); }};
    case Unary::Relu:
      return {[](double x) { return x > 0 ? x : 0.0; },
              [](double x, double) { return x > 0 ? 1.0 : 0.0; }};
    case Unary::Square:
      return {[](double x) { return x * x; },
              [](double x, double) { return 2.0 * x; }};
    case Unary::Sqrt:
      return {[](double x) { return std::sqrt(x); },
              [](double, double y) { return 0.5 / y; }};
    case Unary::Softplus:
      return {softplus_stable, [](double x, double) { return sigmoid_stable(x); }};
    case Unary::Log:
      return {[](double x) { return std::log(x); },
              [](double x, double) { return 1.0 / x; }};
  }
  throw Error("unknown unary op");
}

}  // namespace

Tensor elementwise(Unary op, const Tensor& x) {
  const auto fns = unary_fns(op);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    if (!std::isfinite(xv[i]))
      throw Error("elementwise op input is not finite at index " + std::to_string(i));
    out[i] = fns.fw(xv[i]);
  }
  auto n = new_node(x.shape(), std::move(out));
  Node* xp = x.node();
  attach(n, {x}, [xp, fns](Node& self) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (std::size_t i = 0; i < self.values.size(); ++i)
      xp->grad[i] += self.grad[i] * fns.bw(xp->values[i], self.values[i]);
  });
  return Tensor::wrap(std::move(n));
}

Tensor exp(const Tensor& x) { return elementwise(Unary::Exp, x); }
Tensor erf(const Tensor& x) { return elementwise(Unary::Erf, x); }
Tensor sigmoid(const Tensor& x) { return elementwise(Unary::Sigmoid, x); }
Tensor relu(const Tensor& x) { return elementwise(Unary::Relu, x); }
Tensor square(const Tensor& x) { return elementwise(Unary::Square, x); }
Tensor sqrt(const Tensor& x) { return elementwise(Unary::Sqrt, x); }
Tensor softplus(const Tensor& x) { return elementwise(Unary::Softplus, x); }
Tensor log(const Tensor& x) { return elementwise(Unary::Log, x); }

Tensor scale(const Tensor& x, double c) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * c;
  auto n = new_node(x.shape(), std::move(out));
  Node* xp = x.node();
  attach(n, {x}, [xp, c](Node& self) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (std::size_t i = 0; i < self.values.size(); ++i)
      xp->grad[i] += self.grad[i] * c;
  });
  return Tensor::wrap(std::move(n));
}

Tensor add_constant(const Tensor& x, double c) {
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] + c;
  auto n = new_node(x.shape(), std::move(out));
  Node* xp = x.node();
  attach(n, {x}, [xp](Node& self) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (std::size_t i = 0; i < self.values.size(); ++i)
      xp->grad[i] += self.grad[i];
  });
  return Tensor::wrap(std::move(n));
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  auto n = new_node(a.shape(), std::move(out));
  Node* ap = a.node();
  Node* bp = b.node();
  attach(n, {a, b}, [ap, bp](Node& self) {
    for (Node* p : {ap, bp}) {
      if (!p->requires_grad) continue;
      p->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i) p->grad[i] += self.grad[i];
    }
  });
  return Tensor::wrap(std::move(n));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  auto n = new_node(a.shape(), std::move(out));
  Node* ap = a.node();
  Node* bp = b.node();
  attach(n, {a, b}, [ap, bp](Node& self) {
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i) ap->grad[i] += self.grad[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i) bp->grad[i] -= self.grad[i];
    }
  });
  return Tensor::wrap(std::move(n));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  auto n = new_node(a.shape(), std::move(out));
  Node* ap = a.node();
  Node* bp = b.node();
  attach(n, {a, b}, [ap, bp](Node& self) {
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i)
        ap->grad[i] += self.grad[i] * bp->values[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i)
        bp->grad[i] += self.grad[i] * ap->values[i];
    }
  });
  return Tensor::wrap(std::move(n));
}

Tensor divide(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "divide");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] / bv[i];
  auto n = new_node(a.shape(), std::move(out));
  Node* ap = a.node();
  Node* bp = b.node();
  attach(n, {a, b}, [ap, bp](Node& self) {
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i)
        ap->grad[i] += self.grad[i] / bp->values[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i)
        bp->grad[i] -= self.grad[i] * ap->values[i] / (bp->values[i] * bp->values[i]);
    }
  });
  return Tensor::wrap(std::move(n));
}

Tensor safe_divide(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "safe_divide");
  const auto& av = a.values();
  const auto& bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i)
    out[i] = bv[i] != 0.0 ? av[i] / bv[i] : 0.0;
  auto n = new_node(a.shape(), std::move(out));
  Node* ap = a.node();
  Node* bp = b.node();
  attach(n, {a, b}, [ap, bp](Node& self) {
    if (ap->requires_grad) {
      ap->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i)
        if (bp->values[i] != 0.0) ap->grad[i] += self.grad[i] / bp->values[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i)
        if (bp->values[i] != 0.0)
          bp->grad[i] -=
              self.grad[i] * ap->values[i] / (bp->values[i] * bp->values[i]);
    }
  });
  return Tensor::wrap(std::move(n));
}

Tensor scale_by(const Tensor& x, const Tensor& s) {
  check(s.size() == 1, "scale_by expects a scalar multiplier, got " + shape_str(s.shape()));
  const double sv = s.at(0);
  const auto& xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] * sv;
  auto n = new_node(x.shape(), std::move(out));
  Node* xp = x.node();
  Node* sp = s.node();
  attach(n, {x, s}, [xp, sp](Node& self) {
    const double sval = sp->values[0];
    if (xp->requires_grad) {
      xp->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i)
        xp->grad[i] += self.grad[i] * sval;
    }
    if (sp->requires_grad) {
      sp->ensure_grad();
      double acc = 0.0;
      for (std::size_t i = 0; i < self.values.size(); ++i)
        acc += self.grad[i] * xp->values[i];
      sp->grad[0] += acc;
    }
  });
  return Tensor::wrap(std::move(n));
}

Tensor scale_channels(const Tensor& x, const Tensor& m) {
  check(x.rank() == 3, "scale_channels expects (C,H,W), got " + shape_str(x.shape()));
  check(m.rank() == 2 && m.dim(0) == x.dim(1) && m.dim(1) == x.dim(2),
        "scale_channels map " + shape_str(m.shape()) + " does not match image " +
            shape_str(x.shape()));
  const std::size_t C = x.dim(0), hw = m.size();
  const auto& xv = x.values();
  const auto& mv = m.values();
  std::vector<double> out(xv.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < hw; ++i) out[c * hw + i] = xv[c * hw + i] * mv[i];
  auto n = new_node(x.shape(), std::move(out));
  Node* xp = x.node();
  Node* mp = m.node();
  attach(n, {x, m}, [xp, mp, C, hw](Node& self) {
    if (xp->requires_grad) {
      xp->ensure_grad();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < hw; ++i)
          xp->grad[c * hw + i] += self.grad[c * hw + i] * mp->values[i];
    }
    if (mp->requires_grad) {
      mp->ensure_grad();
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t i = 0; i < hw; ++i)
          mp->grad[i] += self.grad[c * hw + i] * xp->values[c * hw + i];
    }
  });
  return Tensor::wrap(std::move(n));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 tensors, got " +
                                            shape_str(a.shape()) + " and " +
                                            shape_str(b.shape()));
  check(a.dim(1) == b.dim(0), "matmul inner dimension mismatch: " +
                                  shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), nn = b.dim(1);
  std::vector<double> out(m * nn, 0.0);
  mm_nn_acc(a.values().data(), b.values().data(), out.data(), m, k, nn);
  auto n = new_node({m, nn}, std::move(out));
  Node* ap = a.node();
  Node* bp = b.node();
  attach(n, {a, b}, [ap, bp, m, k, nn](Node& self) {
    if (ap->requires_grad) {
      ap->ensure_grad();
      mm_nt_acc(self.grad.data(), bp->values.data(), ap->grad.data(), m, nn, k);
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      mm_tn_acc(ap->values.data(), self.grad.data(), bp->grad.data(), k, m, nn);
    }
  });
  return Tensor::wrap(std::move(n));
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2, "matmul_nt expects rank-2 tensors, got " +
                                            shape_str(a.shape()) + " and " +
                                            shape_str(b.shape()));
  check(a.dim(1) == b.dim(1), "matmul_nt shared dimension mismatch: " +
                                  shape_str(a.shape()) + " x " + shape_str(b.shape()) +
                                  "^T");
  const std::size_t m = a.dim(0), d = a.dim(1), nn = b.dim(0);
  std::vector<double> out(m * nn, 0.0);
  mm_nt_acc(a.values().data(), b.values().data(), out.data(), m, d, nn);
  auto n = new_node({m, nn}, std::move(out));
  Node* ap = a.node();
  Node* bp = b.node();
  attach(n, {a, b}, [ap, bp, m, d, nn](Node& self) {
    if (ap->requires_grad) {
      ap->ensure_grad();
      mm_nn_acc(self.grad.data(), bp->values.data(), ap->grad.data(), m, nn, d);
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      mm_tn_acc(self.grad.data(), ap->values.data(), bp->grad.data(), nn, m, d);
    }
  });
  return Tensor::wrap(std::move(n));
}

namespace {

struct ConvDims {
  std::size_t C, H, W, F, kh, kw, s, oh, ow, padt, padl, R, N;
};

ConvDims conv_dims(const Tensor& x, const Tensor& k, std::size_t stride) {
  check(x.rank() == 3, "conv2d input must be (C,H,W), got " + shape_str(x.shape()));
  check(k.rank() == 4, "conv2d kernel must be (F,C,kh,kw), got " + shape_str(k.shape()));
  check(k.dim(1) == x.dim(0), "conv2d channel mismatch: input " + shape_str(x.shape()) +
                                  " kernel " + shape_str(k.shape()));
  check(stride >= 1, "conv2d stride must be >= 1");
  ConvDims d;
  d.C = x.dim(0);
  d.H = x.dim(1);
  d.W = x.dim(2);
  d.F = k.dim(0);
  d.kh = k.dim(2);
  d.kw = k.dim(3);
  d.s = stride;
  d.oh = (d.H + stride - 1) / stride;
  d.ow = (d.W + stride - 1) / stride;
  const std::size_t need_h = (d.oh - 1) * stride + d.kh;
  const std::size_t need_w = (d.ow - 1) * stride + d.kw;
  d.padt = (need_h > d.H ? need_h - d.H : 0) / 2;
  d.padl = (need_w > d.W ? need_w - d.W : 0) / 2;
  d.R = d.C * d.kh * d.kw;
  d.N = d.oh * d.ow;
  return d;
}

void im2col(const double* x, const ConvDims& d, double* cols) {
  for (std::size_t c = 0; c < d.C; ++c) {
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        double* row = cols + ((c * d.kh + i) * d.kw + j) * d.N;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long y = static_cast<long>(oy * d.s + i) - static_cast<long>(d.padt);
          const bool yok = y >= 0 && y < static_cast<long>(d.H);
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long xx = static_cast<long>(ox * d.s + j) - static_cast<long>(d.padl);
            row[oy * d.ow + ox] =
                (yok && xx >= 0 && xx < static_cast<long>(d.W))
                    ? x[(c * d.H + static_cast<std::size_t>(y)) * d.W +
                        static_cast<std::size_t>(xx)]
                    : 0.0;
          }
        }
      }
    }
  }
}

void col2im_acc(const double* cols, const ConvDims& d, double* dx) {
  for (std::size_t c = 0; c < d.C; ++c) {
    for (std::size_t i = 0; i < d.kh; ++i) {
      for (std::size_t j = 0; j < d.kw; ++j) {
        const double* row = cols + ((c * d.kh + i) * d.kw + j) * d.N;
        for (std::size_t oy = 0; oy < d.oh; ++oy) {
          const long y = static_cast<long>(oy * d.s + i) - static_cast<long>(d.padt);
          if (y < 0 || y >= static_cast<long>(d.H)) continue;
          for (std::size_t ox = 0; ox < d.ow; ++ox) {
            const long xx = static_cast<long>(ox * d.s + j) - static_cast<long>(d.padl);
            if (xx < 0 || xx >= static_cast<long>(d.W)) continue;
            dx[(c * d.H + static_cast<std::size_t>(y)) * d.W +
               static_cast<std::size_t>(xx)] += row[oy * d.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride) {
  const ConvDims d = conv_dims(x, k, stride);
  auto cols = std::make_shared<std::vector<double>>(d.R * d.N);
  im2col(x.values().data(), d, cols->data());
  std::vector<double> out(d.F * d.N, 0.0);
  mm_nn_acc(k.values().data(), cols->data(), out.data(), d.F, d.R, d.N);
  auto n = new_node({d.F, d.oh, d.ow}, std::move(out));
  Node* xp = x.node();
  Node* kp = k.node();
  attach(n, {x, k}, [xp, kp, d, cols](Node& self) {
    if (kp->requires_grad) {
      kp->ensure_grad();
      mm_nt_acc(self.grad.data(), cols->data(), kp->grad.data(), d.F, d.N, d.R);
    }
    if (xp->requires_grad) {
      xp->ensure_grad();
      std::vector<double> colsg(d.R * d.N, 0.0);
      mm_tn_acc(kp->values.data(), self.grad.data(), colsg.data(), d.R, d.F, d.N);
      col2im_acc(colsg.data(), d, xp->grad.data());
    }
  });
  return Tensor::wrap(std::move(n));
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  check(x.rank() == 3, "add_channel_bias input must be (C,H,W)");
  check(bias.rank() == 1 && bias.dim(0) == x.dim(0),
        "add_channel_bias bias must be (C) matching input channels");
  const std::size_t C = x.dim(0), HW = x.dim(1) * x.dim(2);
  const auto& xv = x.values();
  const auto& bv = bias.values();
  std::vector<double> out(xv.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < HW; ++i) out[c * HW + i] = xv[c * HW + i] + bv[c];
  auto n = new_node(x.shape(), std::move(out));
  Node* xp = x.node();
  Node* bp = bias.node();
  attach(n, {x, bias}, [xp, bp, C, HW](Node& self) {
    if (xp->requires_grad) {
      xp->ensure_grad();
      for (std::size_t i = 0; i < self.values.size(); ++i)
        xp->grad[i] += self.grad[i];
    }
    if (bp->requires_grad) {
      bp->ensure_grad();
      for (std::size_t c = 0; c < C; ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < HW; ++i) acc += self.grad[c * HW + i];
        bp->grad[c] += acc;
      }
    }
  });
  return Tensor::wrap(std::move(n));
}

Tensor softmax_rows(const Tensor& m, double beta) {
  check(m.rank() == 2, "softmax_rows expects a rank-2 tensor, got " + shape_str(m.shape()));
  const std::size_t r = m.dim(0), c = m.dim(1);
  check(c >= 1, "softmax_rows requires at least one column");
  const auto& mv = m.values();
  std::vector<double> out(mv.size());
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = mv.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double e = std::exp(beta * (row[j] - mx));
      out[i * c + j] = e;
      sum += e;
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= sum;
  }
  auto n = new_node(m.shape(), std::move(out));
  Node* mp = m.node();
  attach(n, {m}, [mp, r, c, beta](Node& self) {
    if (!mp->requires_grad) return;
    mp->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      const double* a = self.values.data() + i * c;
      const double* g = self.grad.data() + i * c;
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[j] * a[j];
      for (std::size_t j = 0; j < c; ++j)
        mp->grad[i * c + j] += beta * a[j] * (g[j] - dot);
    }
  });
  return Tensor::wrap(std::move(n));
}

namespace {

Tensor reduce_impl(const Tensor& x, const std::vector<std::size_t>& axes, bool mean) {
  const std::size_t rank = x.rank();
  std::vector<bool> reduced(rank, false);
  for (auto a : axes) {
    check(a < rank, "reduce axis " + std::to_string(a) + " out of range for " +
                        shape_str(x.shape()));
    check(!reduced[a], "reduce axis " + std::to_string(a) + " repeated");
    reduced[a] = true;
  }
  Shape out_shape;
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    if (reduced[i])
      count *= x.dim(i);
    else
      out_shape.push_back(x.dim(i));
  }
  if (out_shape.empty()) out_shape = {1};
  if (mean) check(count > 0, "reduce_mean over an empty extent");
  const double w = mean ? 1.0 / static_cast<double>(count) : 1.0;

  std::vector<double> out(numel(out_shape), 0.0);
  const auto& xv = x.values();
  for_each_reduced(x.shape(), reduced,
                   [&](std::size_t in, std::size_t o) { out[o] += xv[in] * w; });
  auto n = new_node(out_shape, std::move(out));
  Node* xp = x.node();
  Shape xshape = x.shape();
  attach(n, {x}, [xp, xshape, reduced, w](Node& self) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for_each_reduced(xshape, reduced, [&](std::size_t in, std::size_t o) {
      xp->grad[in] += self.grad[o] * w;
    });
  });
  return Tensor::wrap(std::move(n));
}

std::vector<std::size_t> all_axes(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return axes;
}

}  // namespace

Tensor reduce_sum(const Tensor& x) { return reduce_impl(x, all_axes(x), false); }
Tensor reduce_mean(const Tensor& x) { return reduce_impl(x, all_axes(x), true); }
Tensor reduce_sum(const Tensor& x, const std::vector<std::size_t>& axes) {
  return reduce_impl(x, axes, false);
}
Tensor reduce_mean(const Tensor& x, const std::vector<std::size_t>& axes) {
  return reduce_impl(x, axes, true);
}

Tensor reshape(const Tensor& x, Shape shape) {
  check(numel(shape) == x.size(), "reshape to " + shape_str(shape) +
                                      " incompatible with " + shape_str(x.shape()));
  auto n = new_node(std::move(shape), x.values());
  Node* xp = x.node();
  attach(n, {x}, [xp](Node& self) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (std::size_t i = 0; i < self.values.size(); ++i) xp->grad[i] += self.grad[i];
  });
  return Tensor::wrap(std::move(n));
}

Tensor narrow(const Tensor& x, std::size_t axis, std::size_t start, std::size_t len) {
  check(axis < x.rank(), "narrow axis out of range");
  check(start + len <= x.dim(axis), "narrow range [" + std::to_string(start) + "," +
                                        std::to_string(start + len) +
                                        ") exceeds dim of " + shape_str(x.shape()));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t d = x.dim(axis);
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> out(outer * len * inner);
  const auto& xv = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t a = 0; a < len; ++a)
      std::memcpy(out.data() + (o * len + a) * inner,
                  xv.data() + (o * d + start + a) * inner, inner * sizeof(double));
  auto n = new_node(std::move(out_shape), std::move(out));
  Node* xp = x.node();
  attach(n, {x}, [xp, outer, inner, d, start, len](Node& self) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t a = 0; a < len; ++a) {
        const double* g = self.grad.data() + (o * len + a) * inner;
        double* dst = xp->grad.data() + (o * d + start + a) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += g[i];
      }
  });
  return Tensor::wrap(std::move(n));
}

Tensor concat_flat(const std::vector<Tensor>& parts) {
  check(!parts.empty(), "concat_flat requires at least one tensor");
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  std::vector<double> out;
  out.reserve(total);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  auto n = new_node({total}, std::move(out));
  bool rg = false;
  for (const auto& p : parts) rg = rg || p.requires_grad();
  if (rg) {
    n->requires_grad = true;
    std::vector<Node*> raw;
    std::vector<std::size_t> offs;
    std::size_t off = 0;
    for (const auto& p : parts) {
      n->parents.push_back(p.node_ptr());
      raw.push_back(p.node());
      offs.push_back(off);
      off += p.size();
    }
    n->backward_fn = [raw, offs](Node& self) {
      for (std::size_t t = 0; t < raw.size(); ++t) {
        Node* p = raw[t];
        if (!p->requires_grad) continue;
        p->ensure_grad();
        const double* g = self.grad.data() + offs[t];
        for (std::size_t i = 0; i < p->values.size(); ++i) p->grad[i] += g[i];
      }
    };
  }
  return Tensor::wrap(std::move(n));
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
  check(!rows.empty(), "stack_rows requires at least one row");
  const std::size_t d = rows[0].size();
  for (const auto& r : rows)
    check(r.size() == d, "stack_rows requires equally sized rows");
  Tensor flat = concat_flat(rows);
  return reshape(flat, {rows.size(), d});
}

Tensor upsample2x(const Tensor& x) {
  check(x.rank() == 3, "upsample2x input must be (C,H,W)");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  std::vector<double> out(C * 4 * H * W);
  const auto& xv = x.values();
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) {
        const double v = xv[(c * H + y) * W + xx];
        double* base = out.data() + (c * 2 * H + 2 * y) * 2 * W + 2 * xx;
        base[0] = v;
        base[1] = v;
        base[2 * W] = v;
        base[2 * W + 1] = v;
      }
  auto n = new_node({C, 2 * H, 2 * W}, std::move(out));
  Node* xp = x.node();
  attach(n, {x}, [xp, C, H, W](Node& self) {
    if (!xp->requires_grad) return;
    xp->ensure_grad();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) {
          const double* base = self.grad.data() + (c * 2 * H + 2 * y) * 2 * W + 2 * xx;
          xp->grad[(c * H + y) * W + xx] +=
              base[0] + base[1] + base[2 * W] + base[2 * W + 1];
        }
  });
  return Tensor::wrap(std::move(n));
}

}  // namespace scenedec::ad
