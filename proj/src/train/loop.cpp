#include "wecar/train/loop.hpp"

#include <algorithm>
#include <numeric>

#include "wecar/core/adam.hpp"
#include "wecar/core/errors.hpp"
#include "wecar/core/ops.hpp"

namespace wecar::train {

std::vector<Example> to_examples(const data::Dataset& ds, std::span<const std::size_t> classes) {
  std::vector<Example> out;
  for (const auto& s : ds.samples) {
    if (!classes.empty() && std::find(classes.begin(), classes.end(), s.label) == classes.end()) {
      continue;
    }
    out.push_back({data::interpolate_missing(s.matrix).values(), s.label});
  }
  return out;
}

std::vector<core::Param*> trainable_parameters(model::Model& m) {
  std::vector<core::Param*> out;
  for (auto* p : m.parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

std::vector<double> fit(model::Model& m, std::size_t count, const ExampleLoss& loss,
                        const LoopOptions& opts, core::Rng& rng) {
  if (count == 0) throw ConfigError("fit: no training examples");
  if (opts.batch == 0) throw ConfigError("fit: batch size must be >= 1");
  auto params = trainable_parameters(m);
  for (auto* p : params) p->zero_grad();
  core::Adam adam(core::AdamOptions{.lr = opts.lr});

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> epoch_loss;
  const model::ForwardMode mode{.train = true, .dropout = opts.dropout, .rng = &rng};

  for (std::size_t e = 0; e < opts.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < count; start += opts.batch) {
      const std::size_t end = std::min(count, start + opts.batch);
      core::Tape tape;
      auto vars = m.bind(tape);
      core::Var sum;
      for (std::size_t k = start; k < end; ++k) {
        core::Var l = loss(tape, vars, order[k], mode);
        sum = sum.valid() ? core::add(sum, l) : l;
      }
      core::Var batch_loss = core::scale(sum, 1.0 / static_cast<double>(end - start));
      total += sum.value()[0];
      if (params.empty()) continue;
      tape.backward(batch_loss);
      adam.step(params);
    }
    epoch_loss.push_back(total / static_cast<double>(count));
  }
  return epoch_loss;
}

}  // namespace wecar::train
