#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wecar/core/ops.hpp"
#include "wecar/core/tensor.hpp"

namespace wecar::model {

/// Multi-head self-attention weights. Per head, W^Q, W^K, W^V map d to d/h;
/// W_O maps the concatenated heads back to d.
struct AttentionBase {
  std::size_t heads = 1;
  std::vector<core::Param> wq, wk, wv;
  core::Param wo;
  bool frozen = false;

  static AttentionBase create(std::size_t d, std::size_t heads, core::Rng& rng);

  std::size_t dim() const { return wo.value.rows(); }
  std::size_t head_dim() const { return dim() / heads; }
  /// Clears the trainable flag on all four weight families.
  void freeze();
  void set_trainable(bool trainable);
};

/// Key/value prefix rows for one task, p rows per head.
struct PrefixBlock {
  std::size_t task_id = 0;
  std::vector<core::Param> keys;    // per head, p x d/h
  std::vector<core::Param> values;  // per head, p x d/h
  bool frozen = false;

  std::size_t rows() const { return keys.empty() ? 0 : keys.front().value.rows(); }
  std::size_t heads() const { return keys.size(); }
  void set_trainable(bool trainable);
};

/// Builds a block from p x d key and value matrices, splitting the d columns
/// into `heads` contiguous groups.
PrefixBlock make_prefix_block(std::size_t task_id, const core::Tensor2& keys,
                              const core::Tensor2& values, std::size_t heads);

/// Task prefixes, stored oldest first. At most one block (the newest) is
/// trainable; all others are frozen. Attention consumes them newest first.
class PrefixStore {
 public:
  /// Appends a fresh trainable block. Every existing block must be frozen.
  void push(PrefixBlock block);
  /// Freezes the trainable block of `finished_task` and keeps it for all later
  /// tasks. Throws StateError if no such trainable block exists.
  void freeze_and_accumulate(std::size_t finished_task);

  std::size_t size() const { return blocks_.size(); }
  bool empty() const { return blocks_.empty(); }
  std::size_t total_rows() const;
  /// Oldest first.
  std::vector<PrefixBlock>& blocks() { return blocks_; }
  const std::vector<PrefixBlock>& blocks() const { return blocks_; }
  /// Per head, the rows of all blocks stacked newest first ((sum p) x d/h).
  core::Tensor2 stacked_keys(std::size_t head) const;
  core::Tensor2 stacked_values(std::size_t head) const;

 private:
  std::vector<PrefixBlock> blocks_;
};

/// Bottleneck map Tanh(X W_down) W_up used to initialise prefixes.
struct ParallelAdapter {
  core::Param down;  // d x r
  core::Param up;    // r x d

  static ParallelAdapter create(std::size_t d, std::size_t rank, core::Rng& rng);
  std::size_t rank() const { return down.value.cols(); }
  core::Tensor2 apply(const core::Tensor2& x) const;
};

/// Adapter output averaged over the batch, then pooled to p rows by means over
/// p equal-width row segments. Throws ConfigError when p > n or the batch is
/// empty.
core::Tensor2 adapter_prefix(const ParallelAdapter& adapter, std::span<const core::Tensor2> batch,
                             std::size_t p);

/// Prefix block whose keys and values come from two independent adapters.
PrefixBlock adapter_init_prefix(const ParallelAdapter& key_adapter,
                                const ParallelAdapter& value_adapter,
                                std::span<const core::Tensor2> batch, std::size_t p,
                                std::size_t heads, std::size_t task_id);

struct AttentionVars {
  std::vector<core::Var> wq, wk, wv;
  core::Var wo;
};

/// Per head, the stacked prefix keys/values newest first. Empty when the
/// model has no prefixes.
struct PrefixVars {
  std::vector<core::Var> keys;
  std::vector<core::Var> values;
  bool empty() const { return keys.empty(); }
};

struct AttentionOutput {
  core::Var out;                  // n x d
  std::vector<core::Var> attn;    // per head, n x (prefix rows + n)
  std::vector<core::Var> values;  // per head, X' W^V (n x d/h)
};

AttentionVars bind(core::Tape& tape, AttentionBase& base);
AttentionVars bind(core::Tape& tape, const AttentionBase& base);
/// Binds blocks of a store newest first, stacking them per head.
PrefixVars bind(core::Tape& tape, PrefixStore& store);
PrefixVars bind(core::Tape& tape, const PrefixStore& store);
/// Binds an explicit newest-first block list as constants.
PrefixVars bind_blocks(core::Tape& tape, std::span<const PrefixBlock* const> newest_first);

/// Attention with optional prefixes prepended on the sequence axis of the
/// keys and values of every head.
AttentionOutput attend(const AttentionVars& base, const PrefixVars& prefixes, core::Var x);

core::Tensor2 mhsa(const AttentionBase& base, const core::Tensor2& x);
core::Tensor2 mhsa_with_prefixes(const AttentionBase& base, const PrefixStore& prefixes,
                                 const core::Tensor2& x);
core::Tensor2 mhsa_with_prefixes(const AttentionBase& base,
                                 std::span<const PrefixBlock* const> newest_first,
                                 const core::Tensor2& x);

}  // namespace wecar::model
