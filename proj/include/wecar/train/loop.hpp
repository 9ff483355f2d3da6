#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "wecar/core/tape.hpp"
#include "wecar/data/dataset.hpp"
#include "wecar/model/model.hpp"

namespace wecar::train {

/// A preprocessed (interpolated) input with its class id.
struct Example {
  core::Tensor2 x;
  std::size_t class_id = 0;
};

/// Interpolates missing cells and keeps the samples whose label is in
/// `classes` (all samples when `classes` is empty).
std::vector<Example> to_examples(const data::Dataset& ds,
                                 std::span<const std::size_t> classes = {});

struct LoopOptions {
  std::size_t epochs = 50;
  std::size_t batch = 4;
  double lr = 1e-3;
  double dropout = 0.1;
};

/// Builds the loss of one example on a tape shared by the whole batch.
/// `index` is the example's position in the data span.
using ExampleLoss = std::function<core::Var(core::Tape& tape, const model::ModelVars& vars,
                                            std::size_t index, const model::ForwardMode& mode)>;

/// Mini-batch Adam over every trainable parameter of `m`. The batch loss is
/// the mean of the example losses. Returns the mean loss of each epoch.
std::vector<double> fit(model::Model& m, std::size_t count, const ExampleLoss& loss,
                        const LoopOptions& opts, core::Rng& rng);

/// Trainable parameters of `m`.
std::vector<core::Param*> trainable_parameters(model::Model& m);

}  // namespace wecar::train
