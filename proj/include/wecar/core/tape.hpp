#pragma once

#include <cstdint>
#include <functional>
#include <type_traits>
#include <vector>

#include "wecar/core/tensor.hpp"

namespace wecar::core {

class Tape;

/// Handle to a value recorded on a Tape. Default-constructed handles refer to
/// nothing and are rejected by every op.
struct Var {
  Tape* tape = nullptr;
  std::int32_t id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor2& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Define-by-run reverse-mode tape. A tape is built for one batch, then
/// `backward` is called once on a scalar loss. With gradients disabled the
/// tape only evaluates values (inference).
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var constant(Tensor2 value);
  /// Leaf bound to `p`. Gradients reach `p.grad` only if `p.trainable`.
  Var param(Param& p);

  /// Records a derived value. `backward_fn` receives the tape and the output
  /// id and must accumulate into the parents' grads via `accumulate`.
  Var record(Tensor2 value, std::vector<std::int32_t> parents,
             std::function<void(Tape&, std::int32_t)> backward_fn);

  void backward(Var loss);

  const Tensor2& value(std::int32_t id) const { return nodes_[id].value; }
  const Tensor2& grad(std::int32_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::int32_t id) const { return nodes_[id].requires_grad; }
  /// Adds `g` into the gradient buffer of `id` (no-op if it needs no grad).
  void accumulate(std::int32_t id, const Tensor2& g);
  /// Mutable grad buffer of `id`, allocated on first use.
  Tensor2& grad_buffer(std::int32_t id);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor2 value;
    Tensor2 grad;
    bool requires_grad = false;
    Param* param = nullptr;
    std::function<void(Tape&, std::int32_t)> backward_fn;
  };

  bool grad_enabled_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
};

/// Binds a Param as a tracked leaf, or as a constant when it is const.
template <class P>
Var leaf(Tape& tape, P& p) {
  if constexpr (std::is_const_v<P>) {
    return tape.constant(p.value);
  } else {
    return tape.param(p);
  }
}

}  // namespace wecar::core
