#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "wecar/core/tape.hpp"
#include "wecar/model/model.hpp"
#include "wecar/train/loop.hpp"

namespace wecar::distill {

/// Weights and schedule for teacher -> student distillation.
struct DistillConfig {
  double lambda_at = 1.0;   // attention relation
  double lambda_vr = 1.0;   // value relation
  double lambda_log = 1.0;  // logits
  double lambda_p = 1.0;    // prefix relation
  double lambda_ce = 1.0;   // ground-truth cross-entropy
  std::size_t epochs = 50;
  std::size_t batch = 4;
  double lr = 1e-3;
  double dropout = 0.1;
  /// Student MLP width ratio in (0, 1].
  double rho = 0.25;
  /// Restrict the cross-entropy term to the newest task's classes.
  bool task_local_ce = true;

  void validate() const;
};

// Losses on recorded values. Teacher operands are normally constants.

/// (1/h) sum_i MSE(A_i^tea, A_i^stu).
core::Var attention_relation_loss(std::span<const core::Var> teacher,
                                  std::span<const core::Var> student);
/// (1/h) sum_i MSE(V_i^tea, V_i^stu).
core::Var value_relation_loss(std::span<const core::Var> teacher,
                              std::span<const core::Var> student);
/// MSE over raw logits.
core::Var logits_loss(core::Var teacher, core::Var student);
/// MSE(teacher stacked keys, student keys) + MSE(teacher stacked values,
/// student values), each taken over all heads at once (the mean of the
/// per-head MSEs). Every head must be (t p) x (d/h) on both sides.
core::Var prefix_relation_loss(std::span<const core::Var> teacher_keys,
                               std::span<const core::Var> teacher_values,
                               std::span<const core::Var> student_keys,
                               std::span<const core::Var> student_values);

// Plain evaluations of the same losses.
double attention_relation_loss(std::span<const core::Tensor2> teacher,
                               std::span<const core::Tensor2> student);
double value_relation_loss(std::span<const core::Tensor2> teacher,
                           std::span<const core::Tensor2> student);
double logits_loss(const core::Tensor2& teacher, const core::Tensor2& student);
/// Teacher side is the teacher's prefix store stacked newest first; student
/// side is the student's single consolidated block.
double prefix_relation_loss(const model::PrefixStore& teacher, const model::PrefixBlock& student);

/// Light model sharing the teacher's encoding, attention weights and
/// accumulated prefixes (as one consolidated block), with MLP widths
/// ceil(rho * w). With rho == 1 the MLP and classifier are copied too.
model::Model make_student(const model::Model& teacher, double rho, core::Rng& rng);

/// Initial lightweight stage: trains a fresh student on task-1 data with
/// attention relation, value relation, logits and cross-entropy losses, then
/// freezes the student's encoding and attention.
model::Model distill_initial(const model::Model& teacher, const DistillConfig& cfg,
                             std::span<const train::Example> task_data, core::Rng& rng);

/// Incremental lightweight stage: the student keeps a single consolidated
/// prefix block sized like the teacher's accumulated prefixes and learns it
/// with prefix relation, logits and cross-entropy losses on task data.
model::Model distill_incremental(const model::Model& teacher, const model::Model& prev_student,
                                 const DistillConfig& cfg,
                                 std::span<const train::Example> task_data, core::Rng& rng);

}  // namespace wecar::distill
