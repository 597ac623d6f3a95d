#include "mtml/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace mtml {

std::string shape_to_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

namespace {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

thread_local bool g_grad_enabled = true;

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

bool any_requires(const std::vector<NodePtr>& parents) {
  for (const auto& p : parents) {
    if (p->requires_grad) return true;
  }
  return false;
}

// Records a graph node when grad mode is on and some parent requires grad;
// otherwise the result is a plain constant leaf.
Tensor make_op(Shape shape, std::vector<double> data, const char* op,
               std::vector<NodePtr> parents,
               std::function<void(const std::vector<double>&, GradFlows&)> rule) {
  if (!g_grad_enabled || !any_requires(parents)) {
    return Tensor(make_leaf(std::move(shape), std::move(data), false));
  }
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = true;
  n->op = op;
  n->parents = std::move(parents);
  n->backward_rule = std::move(rule);
  return Tensor(std::move(n));
}

[[noreturn]] void binary_shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch: " +
                              shape_to_string(a) + " vs " + shape_to_string(b));
}

}  // namespace

namespace autograd {

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
bool grad_enabled() { return g_grad_enabled; }

}  // namespace autograd

std::vector<double>& GradFlows::at(const TensorNode* n) {
  auto it = flows_.find(n);
  if (it == flows_.end()) {
    it = flows_.emplace(n, std::vector<double>(n->size(), 0.0)).first;
  }
  return it->second;
}

const std::vector<double>* GradFlows::find(const TensorNode* n) const {
  auto it = flows_.find(n);
  return it == flows_.end() ? nullptr : &it->second;
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_to_string(shape) +
                                " does not match data length " +
                                std::to_string(data.size()));
  }
  node_ = make_leaf(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{1}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::row(std::initializer_list<double> values, bool requires_grad) {
  return Tensor(Shape{values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
  std::size_t r = rows.size();
  std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("Tensor::matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{r, c}, std::move(data), requires_grad);
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(data), requires_grad);
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::logic_error("rows(): tensor is not rank 2");
  return node_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::logic_error("cols(): tensor is not rank 2");
  return node_->shape[1];
}

double Tensor::value() const {
  if (!is_scalar()) {
    throw std::logic_error("value(): tensor is not scalar, shape " +
                           shape_to_string(node_->shape));
  }
  return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return node_->data.at(r * cols() + c);
}

Tensor& Tensor::set_requires_grad(bool v) {
  node_->requires_grad = v;
  return *this;
}

Tensor Tensor::detach() const {
  return Tensor(make_leaf(node_->shape, node_->data, false));
}

Tensor Tensor::clone() const {
  return Tensor(make_leaf(node_->shape, node_->data, node_->requires_grad));
}

void Tensor::backward() const { mtml::backward(*this); }

void Tensor::accumulate_grad(std::span<const double> g) {
  if (g.size() != size()) {
    throw std::invalid_argument("accumulate_grad: got " + std::to_string(g.size()) +
                                " values for tensor of size " + std::to_string(size()));
  }
  if (node_->grad.empty()) node_->grad.assign(size(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) node_->grad[i] += g[i];
}

// --- matmul -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw std::invalid_argument("matmul: operands must be rank 2, got " +
                                shape_to_string(a.shape()) + " and " +
                                shape_to_string(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw std::invalid_argument("matmul: inner dimensions disagree: " +
                                shape_to_string(a.shape()) + " vs " +
                                shape_to_string(b.shape()));
  }
  std::vector<double> y(m * n, 0.0);
  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t t = 0; t < k; ++t) {
      const double av = ad[i * k + t];
      const double* brow = &bd[t * n];
      double* yrow = &y[i * n];
      for (std::size_t j = 0; j < n; ++j) yrow[j] += av * brow[j];
    }
  }
  NodePtr an = a.node(), bn = b.node();
  return make_op(
      Shape{m, n}, std::move(y), "matmul", {an, bn},
      [an, bn, m, k, n](const std::vector<double>& flow, GradFlows& flows) {
        if (an->requires_grad) {
          auto& fa = flows.at(an.get());
          const auto& bd = bn->data;
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
              double acc = 0.0;
              for (std::size_t t = 0; t < n; ++t) acc += flow[i * n + t] * bd[j * n + t];
              fa[i * k + j] += acc;
            }
          }
        }
        if (bn->requires_grad) {
          auto& fb = flows.at(bn.get());
          const auto& ad = an->data;
          for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
              double acc = 0.0;
              for (std::size_t t = 0; t < m; ++t) acc += ad[t * k + i] * flow[t * n + j];
              fb[i * n + j] += acc;
            }
          }
        }
      });
}

// --- binary elementwise -----------------------------------------------

namespace {

enum class Bcast { None, LeftScalar, RightScalar };

Bcast binary_broadcast(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() == b.shape()) return Bcast::None;
  if (a.size() == 1) return Bcast::LeftScalar;
  if (b.size() == 1) return Bcast::RightScalar;
  binary_shape_error(op, a.shape(), b.shape());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Bcast bc = binary_broadcast("add", a, b);
  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  std::size_t n = std::max(ad.size(), bd.size());
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = ad[bc == Bcast::LeftScalar ? 0 : i] + bd[bc == Bcast::RightScalar ? 0 : i];
  }
  Shape shape = bc == Bcast::LeftScalar ? b.shape() : a.shape();
  NodePtr an = a.node(), bn = b.node();
  return make_op(std::move(shape), std::move(y), "add", {an, bn},
                 [an, bn, bc, n](const std::vector<double>& flow, GradFlows& flows) {
                   if (an->requires_grad) {
                     auto& fa = flows.at(an.get());
                     if (bc == Bcast::LeftScalar) {
                       for (std::size_t i = 0; i < n; ++i) fa[0] += flow[i];
                     } else {
                       for (std::size_t i = 0; i < n; ++i) fa[i] += flow[i];
                     }
                   }
                   if (bn->requires_grad) {
                     auto& fb = flows.at(bn.get());
                     if (bc == Bcast::RightScalar) {
                       for (std::size_t i = 0; i < n; ++i) fb[0] += flow[i];
                     } else {
                       for (std::size_t i = 0; i < n; ++i) fb[i] += flow[i];
                     }
                   }
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Bcast bc = binary_broadcast("sub", a, b);
  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  std::size_t n = std::max(ad.size(), bd.size());
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = ad[bc == Bcast::LeftScalar ? 0 : i] - bd[bc == Bcast::RightScalar ? 0 : i];
  }
  Shape shape = bc == Bcast::LeftScalar ? b.shape() : a.shape();
  NodePtr an = a.node(), bn = b.node();
  return make_op(std::move(shape), std::move(y), "sub", {an, bn},
                 [an, bn, bc, n](const std::vector<double>& flow, GradFlows& flows) {
                   if (an->requires_grad) {
                     auto& fa = flows.at(an.get());
                     if (bc == Bcast::LeftScalar) {
                       for (std::size_t i = 0; i < n; ++i) fa[0] += flow[i];
                     } else {
                       for (std::size_t i = 0; i < n; ++i) fa[i] += flow[i];
                     }
                   }
                   if (bn->requires_grad) {
                     auto& fb = flows.at(bn.get());
                     if (bc == Bcast::RightScalar) {
                       for (std::size_t i = 0; i < n; ++i) fb[0] -= flow[i];
                     } else {
                       for (std::size_t i = 0; i < n; ++i) fb[i] -= flow[i];
                     }
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Bcast bc = binary_broadcast("mul", a, b);
  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  std::size_t n = std::max(ad.size(), bd.size());
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = ad[bc == Bcast::LeftScalar ? 0 : i] * bd[bc == Bcast::RightScalar ? 0 : i];
  }
  Shape shape = bc == Bcast::LeftScalar ? b.shape() : a.shape();
  NodePtr an = a.node(), bn = b.node();
  return make_op(std::move(shape), std::move(y), "mul", {an, bn},
                 [an, bn, bc, n](const std::vector<double>& flow, GradFlows& flows) {
                   const auto& ad = an->data;
                   const auto& bd = bn->data;
                   if (an->requires_grad) {
                     auto& fa = flows.at(an.get());
                     if (bc == Bcast::LeftScalar) {
                       for (std::size_t i = 0; i < n; ++i) fa[0] += flow[i] * bd[i];
                     } else {
                       for (std::size_t i = 0; i < n; ++i)
                         fa[i] += flow[i] * bd[bc == Bcast::RightScalar ? 0 : i];
                     }
                   }
                   if (bn->requires_grad) {
                     auto& fb = flows.at(bn.get());
                     if (bc == Bcast::RightScalar) {
                       for (std::size_t i = 0; i < n; ++i) fb[0] += flow[i] * ad[i];
                     } else {
                       for (std::size_t i = 0; i < n; ++i)
                         fb[i] += flow[i] * ad[bc == Bcast::LeftScalar ? 0 : i];
                     }
                   }
                 });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Bcast bc = binary_broadcast("div", a, b);
  const auto& ad = a.node()->data;
  const auto& bd = b.node()->data;
  std::size_t n = std::max(ad.size(), bd.size());
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = ad[bc == Bcast::LeftScalar ? 0 : i] / bd[bc == Bcast::RightScalar ? 0 : i];
  }
  Shape shape = bc == Bcast::LeftScalar ? b.shape() : a.shape();
  NodePtr an = a.node(), bn = b.node();
  return make_op(std::move(shape), std::move(y), "div", {an, bn},
                 [an, bn, bc, n](const std::vector<double>& flow, GradFlows& flows) {
                   const auto& ad = an->data;
                   const auto& bd = bn->data;
                   auto aval = [&](std::size_t i) { return ad[bc == Bcast::LeftScalar ? 0 : i]; };
                   auto bval = [&](std::size_t i) { return bd[bc == Bcast::RightScalar ? 0 : i]; };
                   if (an->requires_grad) {
                     auto& fa = flows.at(an.get());
                     for (std::size_t i = 0; i < n; ++i) {
                       double g = flow[i] / bval(i);
                       fa[bc == Bcast::LeftScalar ? 0 : i] += g;
                     }
                   }
                   if (bn->requires_grad) {
                     auto& fb = flows.at(bn.get());
                     for (std::size_t i = 0; i < n; ++i) {
                       double bv = bval(i);
                       double g = -flow[i] * aval(i) / (bv * bv);
                       fb[bc == Bcast::RightScalar ? 0 : i] += g;
                     }
                   }
                 });
}

// --- scalar-constant and unary ops ------------------------------------

Tensor scale(const Tensor& t, double c) {
  std::vector<double> y(t.node()->data);
  for (double& v : y) v *= c;
  NodePtr tn = t.node();
  return make_op(t.shape(), std::move(y), "scale", {tn},
                 [tn, c](const std::vector<double>& flow, GradFlows& flows) {
                   if (!tn->requires_grad) return;
                   auto& ft = flows.at(tn.get());
                   for (std::size_t i = 0; i < flow.size(); ++i) ft[i] += c * flow[i];
                 });
}

Tensor shift(const Tensor& t, double c) {
  std::vector<double> y(t.node()->data);
  for (double& v : y) v += c;
  NodePtr tn = t.node();
  return make_op(t.shape(), std::move(y), "shift", {tn},
                 [tn](const std::vector<double>& flow, GradFlows& flows) {
                   if (!tn->requires_grad) return;
                   auto& ft = flows.at(tn.get());
                   for (std::size_t i = 0; i < flow.size(); ++i) ft[i] += flow[i];
                 });
}

Tensor neg(const Tensor& t) { return scale(t, -1.0); }

namespace {

// dfdx receives (input value, output value).
Tensor unary_op(const Tensor& t, const char* name, double (*f)(double),
                double (*dfdx)(double, double)) {
  const auto& x = t.node()->data;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  NodePtr tn = t.node();
  std::vector<double> saved_y = y;
  return make_op(t.shape(), std::move(y), name, {tn},
                 [tn, dfdx, saved_y = std::move(saved_y)](const std::vector<double>& flow,
                                                          GradFlows& flows) {
                   if (!tn->requires_grad) return;
                   auto& ft = flows.at(tn.get());
                   const auto& x = tn->data;
                   for (std::size_t i = 0; i < flow.size(); ++i) {
                     ft[i] += flow[i] * dfdx(x[i], saved_y[i]);
                   }
                 });
}

}  // namespace

Tensor tanh(const Tensor& t) {
  return unary_op(t, "tanh", [](double x) { return std::tanh(x); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor relu(const Tensor& t) {
  return unary_op(t, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                  [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor exp(const Tensor& t) {
  return unary_op(t, "exp", [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& t) {
  const auto& x = t.node()->data;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0)) {
      throw std::domain_error("log: non-positive input at index " + std::to_string(i) +
                              " (value=" + std::to_string(x[i]) + ")");
    }
  }
  return unary_op(t, "log", [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& t) {
  const auto& x = t.node()->data;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] < 0.0) {
      throw std::domain_error("sqrt: negative input at index " + std::to_string(i) +
                              " (value=" + std::to_string(x[i]) + ")");
    }
  }
  return unary_op(t, "sqrt", [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& t) {
  return unary_op(t, "abs", [](double x) { return std::fabs(x); },
                  [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

// --- reductions ---------------------------------------------------------

Tensor sum(const Tensor& t) {
  const auto& x = t.node()->data;
  double acc = 0.0;
  for (double v : x) acc += v;
  NodePtr tn = t.node();
  return make_op(Shape{1}, {acc}, "sum", {tn},
                 [tn](const std::vector<double>& flow, GradFlows& flows) {
                   if (!tn->requires_grad) return;
                   auto& ft = flows.at(tn.get());
                   for (double& v : ft) v += flow[0];
                 });
}

Tensor mean(const Tensor& t) {
  const auto& x = t.node()->data;
  double acc = 0.0;
  for (double v : x) acc += v;
  const double n = static_cast<double>(x.size());
  NodePtr tn = t.node();
  return make_op(Shape{1}, {acc / n}, "mean", {tn},
                 [tn, n](const std::vector<double>& flow, GradFlows& flows) {
                   if (!tn->requires_grad) return;
                   auto& ft = flows.at(tn.get());
                   for (double& v : ft) v += flow[0] / n;
                 });
}

namespace {

Tensor axis_reduce(const Tensor& t, std::size_t axis, bool take_mean, const char* name) {
  if (axis >= t.rank()) {
    throw std::invalid_argument(std::string(name) + ": axis " + std::to_string(axis) +
                                " out of range for shape " + shape_to_string(t.shape()));
  }
  if (t.rank() == 1) return take_mean ? mean(t) : sum(t);
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(name) + ": axis reduction supports rank <= 2");
  }
  const std::size_t r = t.shape()[0], c = t.shape()[1];
  const auto& x = t.node()->data;
  const bool over_rows = (axis == 0);  // collapse rows -> [c], else columns -> [r]
  const std::size_t out_n = over_rows ? c : r;
  const double denom = take_mean ? static_cast<double>(over_rows ? r : c) : 1.0;
  std::vector<double> y(out_n, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) y[over_rows ? j : i] += x[i * c + j];
  }
  if (take_mean) {
    for (double& v : y) v /= denom;
  }
  NodePtr tn = t.node();
  return make_op(Shape{out_n}, std::move(y), name, {tn},
                 [tn, r, c, over_rows, denom](const std::vector<double>& flow,
                                              GradFlows& flows) {
                   if (!tn->requires_grad) return;
                   auto& ft = flows.at(tn.get());
                   for (std::size_t i = 0; i < r; ++i) {
                     for (std::size_t j = 0; j < c; ++j) {
                       ft[i * c + j] += flow[over_rows ? j : i] / denom;
                     }
                   }
                 });
}

}  // namespace

Tensor sum(const Tensor& t, std::size_t axis) { return axis_reduce(t, axis, false, "sum"); }
Tensor mean(const Tensor& t, std::size_t axis) { return axis_reduce(t, axis, true, "mean"); }

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.size()) {
    throw std::invalid_argument("reshape: cannot view " + shape_to_string(t.shape()) +
                                " as " + shape_to_string(shape));
  }
  NodePtr tn = t.node();
  return make_op(std::move(shape), std::vector<double>(t.node()->data), "reshape", {tn},
                 [tn](const std::vector<double>& flow, GradFlows& flows) {
                   if (!tn->requires_grad) return;
                   auto& ft = flows.at(tn.get());
                   for (std::size_t i = 0; i < flow.size(); ++i) ft[i] += flow[i];
                 });
}

// --- backward -----------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                (loss.defined() ? shape_to_string(loss.shape())
                                                : std::string("<undefined>")));
  }
  TensorNode* root = loss.node().get();
  if (!root->requires_grad) return;  // nothing reachable requires grad

  // Iterative post-order DFS over the requires_grad subgraph. Reversing the
  // resulting list yields a topological order (consumers before producers).
  std::vector<TensorNode*> order;
  std::unordered_set<TensorNode*> visited;
  struct Frame {
    TensorNode* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({root, 0});
  visited.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      TensorNode* p = f.node->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  GradFlows flows;
  flows.at(root)[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorNode* n = *it;
    const std::vector<double>* flow = flows.find(n);
    if (!flow) continue;
    if (n->backward_rule) n->backward_rule(*flow, flows);
  }

  // Fold this pass's flows into the persistent grads. Flows never read
  // node->grad, so calling backward twice adds the same amount twice.
  for (TensorNode* n : order) {
    const std::vector<double>* flow = flows.find(n);
    if (!flow) continue;
    if (n->grad.empty()) n->grad.assign(n->size(), 0.0);
    for (std::size_t i = 0; i < flow->size(); ++i) n->grad[i] += (*flow)[i];
  }
}

}  // namespace mtml
