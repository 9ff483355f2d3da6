#include "wecar/model/prefix_attention.hpp"

#include <cmath>
#include <string>

#include "wecar/core/errors.hpp"

namespace wecar::model {

AttentionBase AttentionBase::create(std::size_t d, std::size_t heads, core::Rng& rng) {
  if (heads == 0 || d == 0 || d % heads != 0) {
    throw ConfigError("AttentionBase: d=" + std::to_string(d) + " must be a positive multiple of h=" +
                      std::to_string(heads));
  }
  const std::size_t dh = d / heads;
  AttentionBase base;
  base.heads = heads;
  for (std::size_t i = 0; i < heads; ++i) {
    const auto tag = std::to_string(i);
    base.wq.emplace_back("attention.wq." + tag, core::glorot_uniform(d, dh, rng));
    base.wk.emplace_back("attention.wk." + tag, core::glorot_uniform(d, dh, rng));
    base.wv.emplace_back("attention.wv." + tag, core::glorot_uniform(d, dh, rng));
  }
  base.wo = core::Param("attention.wo", core::glorot_uniform(d, d, rng));
  return base;
}

void AttentionBase::set_trainable(bool trainable) {
  for (auto* family : {&wq, &wk, &wv})
    for (auto& p : *family) p.trainable = trainable;
  wo.trainable = trainable;
}

void AttentionBase::freeze() {
  set_trainable(false);
  frozen = true;
}

void PrefixBlock::set_trainable(bool trainable) {
  for (auto& p : keys) p.trainable = trainable;
  for (auto& p : values) p.trainable = trainable;
}

PrefixBlock make_prefix_block(std::size_t task_id, const core::Tensor2& keys,
                              const core::Tensor2& values, std::size_t heads) {
  if (!keys.same_shape(values)) {
    throw DimensionError("make_prefix_block: key " + keys.shape_str() + " vs value " +
                         values.shape_str());
  }
  if (heads == 0 || keys.cols() % heads != 0 || keys.rows() == 0) {
    throw DimensionError("make_prefix_block: " + keys.shape_str() + " cannot split into " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t dh = keys.cols() / heads;
  PrefixBlock block;
  block.task_id = task_id;
  for (std::size_t h = 0; h < heads; ++h) {
    core::Tensor2 k(keys.rows(), dh), v(keys.rows(), dh);
    for (std::size_t r = 0; r < keys.rows(); ++r)
      for (std::size_t c = 0; c < dh; ++c) {
        k(r, c) = keys(r, h * dh + c);
        v(r, c) = values(r, h * dh + c);
      }
    const auto tag = std::to_string(task_id) + "." + std::to_string(h);
    block.keys.emplace_back("prefix." + tag + ".key", std::move(k));
    block.values.emplace_back("prefix." + tag + ".value", std::move(v));
  }
  return block;
}

void PrefixStore::push(PrefixBlock block) {
  for (const auto& b : blocks_) {
    if (!b.frozen) {
      throw StateError("PrefixStore: block of task " + std::to_string(b.task_id) +
                       " must be frozen before adding task " + std::to_string(block.task_id));
    }
  }
  if (!blocks_.empty()) {
    const auto& ref = blocks_.front();
    if (block.heads() != ref.heads() ||
        block.keys.front().value.cols() != ref.keys.front().value.cols()) {
      throw DimensionError("PrefixStore: prefix head layout does not match existing blocks");
    }
  }
  block.frozen = false;
  block.set_trainable(true);
  blocks_.push_back(std::move(block));
}

void PrefixStore::freeze_and_accumulate(std::size_t finished_task) {
  if (blocks_.empty() || blocks_.back().task_id != finished_task) {
    throw StateError("freeze_and_accumulate: no block for task " + std::to_string(finished_task));
  }
  PrefixBlock& b = blocks_.back();
  if (b.frozen) {
    throw StateError("freeze_and_accumulate: block of task " + std::to_string(finished_task) +
                     " is already frozen");
  }
  b.frozen = true;
  b.set_trainable(false);
}

std::size_t PrefixStore::total_rows() const {
  std::size_t r = 0;
  for (const auto& b : blocks_) r += b.rows();
  return r;
}

namespace {

core::Tensor2 stack_newest_first(const std::vector<PrefixBlock>& blocks, std::size_t head,
                                 bool keys) {
  std::size_t rows = 0;
  for (const auto& b : blocks) rows += b.rows();
  const std::size_t cols = blocks.front().keys[head].value.cols();
  core::Tensor2 out(rows, cols);
  std::size_t off = 0;
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    const auto& src = keys ? it->keys[head].value : it->values[head].value;
    std::copy(src.data().begin(), src.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(off * cols));
    off += src.rows();
  }
  return out;
}

}  // namespace

core::Tensor2 PrefixStore::stacked_keys(std::size_t head) const {
  if (blocks_.empty()) return {};
  return stack_newest_first(blocks_, head, true);
}

core::Tensor2 PrefixStore::stacked_values(std::size_t head) const {
  if (blocks_.empty()) return {};
  return stack_newest_first(blocks_, head, false);
}

ParallelAdapter ParallelAdapter::create(std::size_t d, std::size_t rank, core::Rng& rng) {
  if (rank == 0) throw ConfigError("ParallelAdapter: rank must be >= 1");
  ParallelAdapter a;
  a.down = core::Param("adapter.down", core::glorot_uniform(d, rank, rng));
  a.up = core::Param("adapter.up", core::glorot_uniform(rank, d, rng));
  return a;
}

core::Tensor2 ParallelAdapter::apply(const core::Tensor2& x) const {
  core::Tensor2 hidden = core::matmul(x, down.value);
  for (auto& v : hidden.data()) v = std::tanh(v);
  return core::matmul(hidden, up.value);
}

core::Tensor2 adapter_prefix(const ParallelAdapter& adapter, std::span<const core::Tensor2> batch,
                             std::size_t p) {
  if (batch.empty()) throw ConfigError("adapter_init_prefix: empty batch");
  const std::size_t n = batch.front().rows();
  if (p == 0 || p > n) {
    throw ConfigError("adapter_init_prefix: prefix length " + std::to_string(p) +
                      " must be in [1, n=" + std::to_string(n) + "]");
  }
  core::Tensor2 mean(n, adapter.up.value.cols());
  for (const auto& x : batch) {
    if (x.rows() != n) throw DimensionError("adapter_init_prefix: ragged batch");
    const core::Tensor2 a = adapter.apply(x);
    for (std::size_t i = 0; i < a.size(); ++i) mean[i] += a[i];
  }
  for (auto& v : mean.data()) v /= static_cast<double>(batch.size());

  core::Tensor2 pooled(p, mean.cols());
  for (std::size_t k = 0; k < p; ++k) {
    const std::size_t lo = k * n / p;
    const std::size_t hi = (k + 1) * n / p;
    for (std::size_t r = lo; r < hi; ++r)
      for (std::size_t c = 0; c < mean.cols(); ++c) pooled(k, c) += mean(r, c);
    for (std::size_t c = 0; c < mean.cols(); ++c) pooled(k, c) /= static_cast<double>(hi - lo);
  }
  return pooled;
}

PrefixBlock adapter_init_prefix(const ParallelAdapter& key_adapter,
                                const ParallelAdapter& value_adapter,
                                std::span<const core::Tensor2> batch, std::size_t p,
                                std::size_t heads, std::size_t task_id) {
  return make_prefix_block(task_id, adapter_prefix(key_adapter, batch, p),
                           adapter_prefix(value_adapter, batch, p), heads);
}

namespace {

template <class Base>
AttentionVars bind_base(core::Tape& tape, Base& base) {
  AttentionVars v;
  for (std::size_t i = 0; i < base.heads; ++i) {
    v.wq.push_back(core::leaf(tape, base.wq[i]));
    v.wk.push_back(core::leaf(tape, base.wk[i]));
    v.wv.push_back(core::leaf(tape, base.wv[i]));
  }
  v.wo = core::leaf(tape, base.wo);
  return v;
}

template <class Block>
PrefixVars bind_newest_first(core::Tape& tape, std::span<Block* const> blocks) {
  PrefixVars out;
  if (blocks.empty()) return out;
  const std::size_t heads = blocks.front()->heads();
  for (std::size_t h = 0; h < heads; ++h) {
    std::vector<core::Var> ks, vs;
    for (Block* b : blocks) {
      if (b->heads() != heads) throw DimensionError("prefix head count mismatch across blocks");
      ks.push_back(core::leaf(tape, b->keys[h]));
      vs.push_back(core::leaf(tape, b->values[h]));
    }
    out.keys.push_back(ks.size() == 1 ? ks.front() : core::concat_rows(ks));
    out.values.push_back(vs.size() == 1 ? vs.front() : core::concat_rows(vs));
  }
  return out;
}

}  // namespace

AttentionVars bind(core::Tape& tape, AttentionBase& base) { return bind_base(tape, base); }
AttentionVars bind(core::Tape& tape, const AttentionBase& base) { return bind_base(tape, base); }

PrefixVars bind(core::Tape& tape, PrefixStore& store) {
  std::vector<PrefixBlock*> order;
  for (auto it = store.blocks().rbegin(); it != store.blocks().rend(); ++it) order.push_back(&*it);
  return bind_newest_first<PrefixBlock>(tape, order);
}

PrefixVars bind(core::Tape& tape, const PrefixStore& store) {
  std::vector<const PrefixBlock*> order;
  for (auto it = store.blocks().rbegin(); it != store.blocks().rend(); ++it) order.push_back(&*it);
  return bind_newest_first<const PrefixBlock>(tape, order);
}

PrefixVars bind_blocks(core::Tape& tape, std::span<const PrefixBlock* const> newest_first) {
  return bind_newest_first<const PrefixBlock>(tape, newest_first);
}

AttentionOutput attend(const AttentionVars& base, const PrefixVars& prefixes, core::Var x) {
  const std::size_t heads = base.wq.size();
  const std::size_t d = base.wo.rows();
  if (x.cols() != d) {
    throw DimensionError("mhsa: input " + x.value().shape_str() + " does not match model dim " +
                         std::to_string(d));
  }
  if (!prefixes.empty()) {
    if (prefixes.keys.size() != heads) {
      throw DimensionError("mhsa_with_prefixes: " + std::to_string(prefixes.keys.size()) +
                           " prefix heads for " + std::to_string(heads) + " attention heads");
    }
    if (prefixes.keys.front().cols() != d / heads) {
      throw DimensionError("mhsa_with_prefixes: prefix head dim " +
                           std::to_string(prefixes.keys.front().cols()) + " != " +
                           std::to_string(d / heads));
    }
  }
  const double inv_scale = 1.0 / std::sqrt(static_cast<double>(d / heads));

  AttentionOutput out;
  std::vector<core::Var> head_out;
  for (std::size_t h = 0; h < heads; ++h) {
    core::Var q = core::matmul(x, base.wq[h]);
    core::Var k = core::matmul(x, base.wk[h]);
    core::Var v = core::matmul(x, base.wv[h]);
    core::Var keys = k, vals = v;
    if (!prefixes.empty()) {
      const core::Var kp[] = {prefixes.keys[h], k};
      const core::Var vp[] = {prefixes.values[h], v};
      keys = core::concat_rows(kp);
      vals = core::concat_rows(vp);
    }
    core::Var scores = core::scale(core::matmul(q, core::transpose(keys)), inv_scale);
    core::Var attn = core::softmax_rows(scores);
    head_out.push_back(core::matmul(attn, vals));
    out.attn.push_back(attn);
    out.values.push_back(v);
  }
  core::Var cat = heads == 1 ? head_out.front() : core::concat_cols(head_out);
  out.out = core::matmul(cat, base.wo);
  return out;
}

core::Tensor2 mhsa(const AttentionBase& base, const core::Tensor2& x) {
  core::Tape tape(false);
  return attend(bind(tape, base), PrefixVars{}, tape.constant(x)).out.value();
}

core::Tensor2 mhsa_with_prefixes(const AttentionBase& base, const PrefixStore& prefixes,
                                 const core::Tensor2& x) {
  core::Tape tape(false);
  auto pv = bind(tape, prefixes);
  return attend(bind(tape, base), pv, tape.constant(x)).out.value();
}

core::Tensor2 mhsa_with_prefixes(const AttentionBase& base,
                                 std::span<const PrefixBlock* const> newest_first,
                                 const core::Tensor2& x) {
  core::Tape tape(false);
  auto pv = bind_blocks(tape, newest_first);
  return attend(bind(tape, base), pv, tape.constant(x)).out.value();
}

}  // namespace wecar::model
