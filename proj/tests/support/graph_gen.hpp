#pragma once

#include <functional>
#include <span>
#include <vector>

#include "mtml/rng.hpp"
#include "mtml/tensor.hpp"

namespace mtml::testing {

// Builds a randomized two-layer graph over the full op set (matmul, binary
// elementwise with and without scalar broadcast, unaries, reductions) with
// <= 100 parameters, as a function of a flat parameter vector so the same
// construction can be driven by both backward() and finite differences.
struct RandomGraph {
  std::vector<double> init;  // flat initial parameters
  // Rebuilds the graph at the given flat parameters; returns (loss, leaves).
  std::function<Tensor(std::span<const double>, std::vector<Tensor>*)> build;
};

inline RandomGraph make_random_graph(std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t m = 2 + rng.below(2);   // batch rows
  const std::size_t d0 = 2 + rng.below(3);  // input width
  const std::size_t d1 = 2 + rng.below(4);  // hidden width
  const std::size_t d2 = 1 + rng.below(3);  // output width

  std::vector<double> xdata(m * d0);
  for (double& v : xdata) v = rng.uniform(-1.0, 1.0);

  const int u1 = rng.below(4);  // unary after layer 1
  const int u2 = rng.below(4);  // unary after layer 2
  const int extra = rng.below(4);
  const int loss_kind = rng.below(3);

  const std::size_t n_params = d0 * d1 + d1 * d2 + d1 + 1;
  std::vector<double> init(n_params);
  for (double& v : init) v = rng.uniform(-0.9, 0.9);

  RandomGraph g;
  g.init = init;
  g.build = [=](std::span<const double> p, std::vector<Tensor>* leaves_out) -> Tensor {
    std::size_t off = 0;
    auto take = [&](Shape shape) {
      std::size_t n = 1;
      for (auto d : shape) n *= d;
      std::vector<double> vals(p.begin() + off, p.begin() + off + n);
      off += n;
      return Tensor(std::move(shape), std::move(vals), true);
    };
    Tensor w1 = take({d0, d1});
    Tensor w2 = take({d1, d2});
    Tensor pvec = take({d1});
    Tensor s = take({1});
    if (leaves_out) *leaves_out = {w1, w2, pvec, s};

    Tensor x({m, d0}, xdata, false);
    Tensor h = matmul(x, w1);
    auto apply_unary = [](const Tensor& t, int kind) {
      switch (kind) {
        case 0: return tanh(t);
        case 1: return relu(shift(t, 0.31));  // keep kinks away from sampled points
        case 2: return mtml::exp(scale(t, 0.3));
        default: return scale(t, 0.7);
      }
    };
    h = apply_unary(h, u1);
    h = mul(h, add(h, Tensor::scalar(0.5)));  // scalar broadcast path
    Tensor h2 = matmul(h, w2);
    h2 = apply_unary(h2, u2);
    h2 = mul(h2, s);  // broadcast a trainable scalar

    Tensor extra_term;
    switch (extra) {
      case 0: extra_term = mean(mtml::log(shift(mul(pvec, pvec), 0.5)));
        break;
      case 1: extra_term = mean(mtml::sqrt(shift(mul(pvec, pvec), 0.3)));
        break;
      case 2: extra_term = mean(div(pvec, shift(mul(pvec, pvec), 0.7)));
        break;
      default: extra_term = mean(mtml::abs(shift(pvec, 0.29)));
        break;
    }

    Tensor loss;
    switch (loss_kind) {
      case 0: loss = mean(mul(h2, h2)); break;
      case 1: loss = mean(sum(mul(h2, h2), 1)); break;
      default: loss = scale(sum(h2), 0.1); break;
    }
    return add(loss, scale(extra_term, 0.25));
  };
  return g;
}

}  // namespace mtml::testing
