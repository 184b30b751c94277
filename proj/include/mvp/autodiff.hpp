#pragma once

// Tape-based reverse-mode differentiation over Tensor values.
//
// A Tape records every operation of one forward pass. Values recorded on a
// tape are never mutated; backward() walks the tape in reverse and fills a
// gradient buffer per node. Params enter the tape as leaves through
// Tape::param(); their gradients are read back with Tape::grad(const Param&)
// or accumulated into Param::grad with mvp::backward().

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mvp/tensor.hpp"

namespace mvp {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while its tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `p`. Repeated calls for the same Param return the same Var.
  Var param(const Param& p);

  /// Reverse pass from a scalar node. Resets node gradients first, so calling
  /// it twice on the same tape yields the same buffers.
  void backward(Var loss);

  /// Gradient buffer of a node after backward(); zeros when unreached.
  Tensor grad(Var v) const;
  /// Gradient of the leaf bound to `p`; zeros if `p` never entered the tape.
  Tensor grad(const Param& p) const;

  std::size_t size() const { return nodes_.size(); }

  // Op-author interface.
  Var record(Tensor value, Backprop backprop);
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& out_grad(std::size_t id) const { return nodes_[id].grad; }
  /// Gradient accumulator of node `id`, allocated on first use.
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    Backprop backprop;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Param*, std::size_t> leaves_;
};

/// Runs tape.backward(loss) and adds each param's gradient into Param::grad.
/// Repeated calls accumulate.
void backward(Var loss, std::span<Param* const> params);

void zero_grads(std::span<Param* const> params);

// ---------------------------------------------------------------------------
// Operations. Every op records onto the tape of its first operand.

/// (m x k)(k x p) -> (m x p).
Var matmul(Var a, Var b);
Var transpose(Var x);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// Hadamard product of equally shaped operands.
Var mul(Var a, Var b);
Var scale(Var x, Real factor);
/// x (m x c) plus row (1 x c) added to every row.
Var add_row(Var x, Var row);
/// x times the single element of s (1 x 1).
Var mul_scalar(Var x, Var s);
Var softmax_rows(Var x);
/// Per-row standardization followed by gain/bias (each of length c).
Var layer_norm(Var x, Var gain, Var bias, Real eps = 1e-5);
/// Tanh-approximated GELU.
Var gelu(Var x);
Var relu(Var x);
/// Mean over rows: (t x c) -> (1 x c).
Var mean_rows(Var x);
/// Stacks b below a.
Var concat_rows(Var a, Var b);
/// Places b to the right of a.
Var concat_cols(Var a, Var b);
Var concat_cols(std::span<const Var> parts);
/// Rows [begin, end).
Var slice_rows(Var x, std::size_t begin, std::size_t end);
/// Columns [begin, end).
Var slice_cols(Var x, std::size_t begin, std::size_t end);
/// Sum of all elements -> 1 x 1.
Var sum(Var x);
/// Element (r, c) -> 1 x 1.
Var element(Var x, std::size_t r, std::size_t c);
/// Non-overlapping pair combination: out[i] = w0 * x[2i] + w1 * x[2i+1],
/// with w a 1 x 2 weight row. Requires an even row count.
Var pair_pool(Var x, Var w);
/// Packs 1 x 1 nodes row-major into a rows x cols matrix.
Var assemble(std::span<const Var> scalars, std::size_t rows,
             std::size_t cols);
/// Mean over rows of -log(max(p[r][label[r]], 1e-12)).
Var cross_entropy(Var probabilities, std::span<const int> labels);

// ---------------------------------------------------------------------------
// Plain tensor versions of the activations, shared with non-tape callers.

Real gelu_value(Real x);
Real gelu_derivative(Real x);

#ifdef MVP_FAULT_INJECTION
/// Scales the backward contribution of the named op (e.g. "gelu") by a
/// constant so that gradient checks must fail. Empty string disables.
/// Not thread-safe; intended for single-threaded verification runs.
void set_backward_fault(std::string_view op);
#endif

/// Multiplier applied to the backward pass of `op` (1 unless a fault is set).
Real backward_fault_factor(std::string_view op);

}  // namespace mvp
