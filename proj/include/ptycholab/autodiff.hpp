#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "ptycholab/tensor.hpp"

namespace ptycholab::ad {

struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

class Tape;

struct Var {
  Tape *tape = nullptr;
  std::size_t id = 0;

  const RealTensor &value() const;
};

// Single-use recording tape. Backward visits nodes in exact reverse
// recording order, so gradients are deterministic.
class Tape {
 public:
  // backward is called with this node's accumulated upstream gradient and
  // adds each parent's vector-Jacobian product into that parent's grad.
  struct Node {
    RealTensor value;
    RealTensor grad;
    bool requires_grad = false;
    std::function<void(Tape &, const RealTensor &)> backward;
  };

  Var leaf(RealTensor value, bool requires_grad = false);
  Var record(RealTensor value, std::function<void(Tape &, const RealTensor &)> backward);

  Node &node(std::size_t id) { return nodes_.at(id); }
  const Node &node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }

  RealTensor &grad(std::size_t id) { return nodes_.at(id).grad; }

  // Gradient of a scalar loss w.r.t. every requires-grad leaf.
  std::unordered_map<std::size_t, RealTensor> backward(Var loss);

 private:
  std::vector<Node> nodes_;
};

// ---- primitives ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_bias(Var x, Var b);                  // x: (n, m), b: (m)
Var matmul(Var a, Var b);                    // (n, k) x (k, m)
Var transpose(Var a);                        // 2-D
Var concat_cols(const std::vector<Var> &xs);
Var slice_cols(Var x, std::size_t c0, std::size_t c1);
Var slice_rows(Var x, std::size_t r0, std::size_t r1);
Var reshape(Var x, std::vector<std::size_t> shape);
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var softmax_rows(Var x);
Var relu(Var x);
Var gelu(Var x);
Var mean(Var x);    // scalar
Var sum_sq(Var x);  // scalar

// complex values carried as shape {2, h, w} (re plane, im plane)
Var complex_abs_eps(Var z, double eps);          // -> {h, w}
Var complex_phase_unit_eps(Var z, double eps);   // -> {2, h, w}
Var fft2_linear(Var z);
Var ifft2_linear(Var z);
Var complex_mul_const(Var z, const ComplexGrid &c);
Var complex_scale_map(Var z, const RealTensor &m);  // real map on both planes
Var gather_patch(Var image, std::size_t r0, std::size_t c0, std::size_t side);
Var scatter_patch(Var patch, std::size_t r0, std::size_t c0, std::size_t h,
                  std::size_t w);

// conv2d stride 1, zero-pad same. x: {Cin, H, W}, w: {Cout, Cin, kh, kw},
// b: {Cout}.
Var conv2d(Var x, Var w, Var b);

// conversions between ComplexGrid and the {2, h, w} carrier
RealTensor planes_of(const ComplexGrid &g);
ComplexGrid grid_of(const RealTensor &planes);

// Max relative error between the backward gradient of f and central finite
// differences, denominator max(|a|, |b|, 1e-8).
double grad_check(const std::function<Var(Tape &, Var)> &f, const RealTensor &x,
                  double step);

}  // namespace ptycholab::ad
