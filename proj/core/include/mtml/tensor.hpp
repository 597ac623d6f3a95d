#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mtml/rng.hpp"

namespace mtml {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& s);

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// Scratch gradient buffers for a single backward pass. Flows are kept apart
// from the persistent TensorNode::grad so that repeated backward() calls on
// the same graph accumulate exactly (each pass recomputes the same flow and
// adds it once).
class GradFlows {
 public:
  std::vector<double>& at(const TensorNode* n);
  const std::vector<double>* find(const TensorNode* n) const;

 private:
  std::unordered_map<const TensorNode*, std::vector<double>> flows_;
};

// One recorded graph node. Leaves have no parents and no backward rule.
// The backward rule reads its incoming flow and accumulates into the flows
// of the parents that require grad.
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty means "no grad accumulated yet"
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr> parents;
  std::function<void(const std::vector<double>& flow, GradFlows& flows)> backward_rule;

  std::size_t size() const { return data.size(); }
};

namespace autograd {

// While a NoGradGuard is alive on a thread, ops compute values only and
// record no graph. Used for evaluation passes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

}  // namespace autograd

// Dense row-major tensor of 64-bit reals participating in a define-by-run
// reverse-mode gradient graph. Copying a Tensor copies the handle; clone()
// copies storage.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor row(std::initializer_list<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  // Entries drawn from a seeded uniform stream over [lo, hi).
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  bool is_scalar() const { return defined() && size() == 1; }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const { return node_->data; }
  std::span<double> data_mut() { return node_->data; }
  double value() const;            // scalar only
  double at(std::size_t i) const { return node_->data.at(i); }
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad_mut() { return node_->grad; }
  void zero_grad() { node_->grad.clear(); }
  // Adds into the accumulated grad, allocating zeros first if absent.
  void accumulate_grad(std::span<const double> g);

  // Value copy detached from any graph.
  Tensor detach() const;
  // Deep copy as a fresh leaf; keeps requires_grad, drops accumulated grad.
  Tensor clone() const;

  void backward() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

// --- ops --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);

// Binary elementwise ops require equal shapes, except that either side may be
// a scalar (size 1), which broadcasts.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& t, double c);  // c * t
Tensor shift(const Tensor& t, double c);  // t + c
Tensor neg(const Tensor& t);

Tensor tanh(const Tensor& t);
Tensor relu(const Tensor& t);  // subgradient at 0 is 0
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);   // strictly positive inputs
Tensor sqrt(const Tensor& t);  // nonnegative inputs
Tensor abs(const Tensor& t);   // subgradient at 0 is 0

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
Tensor sum(const Tensor& t, std::size_t axis);
Tensor mean(const Tensor& t, std::size_t axis);

Tensor reshape(const Tensor& t, Shape shape);

// Seeds d(loss)/d(loss) = 1 and accumulates d(loss)/d(node) into the grad of
// every requires_grad tensor reachable from loss. Repeated calls without
// zero_grad add the same contribution again.
void backward(const Tensor& loss);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

}  // namespace mtml
