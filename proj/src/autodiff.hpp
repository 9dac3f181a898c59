#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tensor.hpp"

namespace opdf::ad {

/// Handle into a Graph's node tape.
struct Var {
  std::uint32_t id = UINT32_MAX;
  bool valid() const { return id != UINT32_MAX; }
};

/// Eagerly-recorded reverse-mode tape over Tensor values. Creation order is
/// a topological order, so backward is a single reverse scan. Grads
/// accumulate additively across backward calls until zero_grads().
class Graph {
 public:
  Var input(Tensor value, bool requires_grad = true);
  Var constant(Tensor value) { return input(std::move(value), false); }

  // differentiable primitives
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var scalar_mul(Var a, double c);
  Var add_row(Var a, Var row);  // [m,n] + broadcast row [n]
  Var matmul(Var a, Var b);
  Var relu(Var a);
  Var tanh(Var a);
  Var log_softmax(Var a);  // rowwise over [m,c]
  Var gather_rows(Var a, const std::vector<std::size_t>& cols);  // [m,c] -> [m]
  Var reshape(Var a, Shape new_shape);
  Var permute(Var a, std::vector<std::size_t> axes);
  Var contract(Var a, Var b, std::vector<std::size_t> axes_a,
               std::vector<std::size_t> axes_b);
  Var square(Var a);
  Var mean_all(Var a);                       // -> scalar
  Var weighted_sum(Var a, Tensor weights);   // sum(w . a) -> scalar
  Var add_scalar(Var a, double c);           // scalar + constant

  /// Contracts an ordered chain of 4-order cores [d_{k-1}, i_k, j_k, d_k]
  /// over shared bonds and returns the [prod i, prod j] matrix. Performs the
  /// same operation sequence as mpo::reconstruct, so values agree bitwise.
  Var contract_chain(std::span<const Var> cores);

  // losses
  Var mse_loss(Var a, Var b);
  Var softmax_ce_loss(Var logits, const std::vector<std::size_t>& labels);
  Var kl_distill_loss(Var student_logits, const Tensor& teacher_logits,
                      double temperature);

  /// Reverse pass from a scalar loss. Fresh adjoints are propagated and then
  /// added into the persistent grads of every requires-grad ancestor.
  void backward(Var loss);
  void zero_grads();

  const Tensor& value(Var v) const { return node(v).value; }
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // valid when grad_alloc
    bool requires_grad = false;
    bool grad_alloc = false;
    // propagates this node's adjoint into its parents' adjoints
    std::function<void(Graph&, std::uint32_t)> backprop;
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  Var emit(Tensor value, bool requires_grad,
           std::function<void(Graph&, std::uint32_t)> backprop);
  void adj_accumulate(std::uint32_t id, Tensor g);
  const Tensor& adj(std::uint32_t id) const { return adjoint_[id]; }

  std::vector<Node> nodes_;
  // scratch state for the active backward pass
  std::vector<Tensor> adjoint_;
  std::vector<char> adjoint_live_;
};

/// Builds a scalar loss from parameter vars; must be deterministic in the
/// parameter values.
using GraphBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

/// Central-finite-difference check of the analytic gradient. Returns the
/// max over all parameter coordinates of
/// |analytic - fd| / max(1e-8, |analytic|, |fd|).
double grad_check(const GraphBuilder& f, const std::vector<Tensor>& params,
                  double h);

}  // namespace opdf::ad
