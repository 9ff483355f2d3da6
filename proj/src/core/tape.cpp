#include "wecar/core/tape.hpp"

#include "wecar/core/errors.hpp"

namespace wecar::core {

const Tensor2& Var::value() const {
  if (!valid()) throw StateError("Var: value of an unrecorded handle");
  return tape->value(id);
}

Var Tape::constant(Tensor2 value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::param(Param& p) {
  Node node;
  node.value = p.value;
  node.param = &p;
  node.requires_grad = grad_enabled_ && p.trainable;
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor2 value, std::vector<std::int32_t> parents,
                 std::function<void(Tape&, std::int32_t)> backward_fn) {
  Node node;
  node.value = std::move(value);
  if (grad_enabled_) {
    for (auto pid : parents) {
      if (nodes_[pid].requires_grad) {
        node.requires_grad = true;
        break;
      }
    }
  }
  if (node.requires_grad) node.backward_fn = std::move(backward_fn);
  nodes_.push_back(std::move(node));
  return {this, static_cast<std::int32_t>(nodes_.size() - 1)};
}

Tensor2& Tape::grad_buffer(std::int32_t id) {
  Node& n = nodes_[id];
  if (!n.grad.same_shape(n.value)) n.grad = Tensor2(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(std::int32_t id, const Tensor2& g) {
  if (!nodes_[id].requires_grad) return;
  Tensor2& buf = grad_buffer(id);
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

void Tape::backward(Var loss) {
  if (!loss.valid() || loss.tape != this || nodes_.empty()) {
    throw StateError("backward: no forward pass recorded for this loss");
  }
  if (!grad_enabled_) throw StateError("backward: tape was built with gradients disabled");
  if (backward_done_) throw StateError("backward: already run on this tape");
  const Tensor2& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw DimensionError("backward: loss must be 1x1, got " + lv.shape_str());
  }
  backward_done_ = true;

  if (nodes_[loss.id].requires_grad) grad_buffer(loss.id)[0] = 1.0;
  for (std::int32_t id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward_fn || !n.grad.same_shape(n.value)) continue;
    n.backward_fn(*this, id);
  }

  for (auto& n : nodes_) {
    if (n.param == nullptr || !n.param->trainable) continue;
    Param& p = *n.param;
    if (!p.has_grad) {
      p.grad = Tensor2(p.value.rows(), p.value.cols());
      p.has_grad = true;
    }
    if (!n.grad.same_shape(n.value)) continue;  // not on the loss path
    const Tensor2* mask = p.grad_mask ? &*p.grad_mask : nullptr;
    for (std::size_t i = 0; i < p.grad.size(); ++i) {
      const double g = mask ? n.grad[i] * (*mask)[i] : n.grad[i];
      p.grad[i] += g;
    }
  }
}

}  // namespace wecar::core
