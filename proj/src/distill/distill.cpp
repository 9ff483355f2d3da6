#include "wecar/distill/distill.hpp"

#include <cmath>
#include <string>

#include "wecar/core/errors.hpp"
#include "wecar/core/ops.hpp"

namespace wecar::distill {

using core::Tensor2;
using core::Var;

void DistillConfig::validate() const {
  for (double l : {lambda_at, lambda_vr, lambda_log, lambda_p, lambda_ce}) {
    if (!(l >= 0.0)) throw ConfigError("distill: loss weights must be non-negative");
  }
  if (lambda_at + lambda_vr + lambda_log + lambda_p + lambda_ce <= 0.0) {
    throw ConfigError("distill: at least one loss weight must be positive");
  }
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("distill: rho must be in (0, 1]");
  if (batch == 0) throw ConfigError("distill: batch must be >= 1");
}

namespace {

Var mean_of(std::vector<Var> terms) {
  Var sum = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) sum = core::add(sum, terms[i]);
  return core::scale(sum, 1.0 / static_cast<double>(terms.size()));
}

Var per_head_mse(const char* what, std::span<const Var> teacher, std::span<const Var> student) {
  if (teacher.size() != student.size() || teacher.empty()) {
    throw DimensionError(std::string(what) + ": teacher has " + std::to_string(teacher.size()) +
                         " heads, student " + std::to_string(student.size()));
  }
  std::vector<Var> terms;
  for (std::size_t i = 0; i < teacher.size(); ++i) terms.push_back(core::mse(teacher[i], student[i]));
  return mean_of(std::move(terms));
}

double plain_mse(const Tensor2& a, const Tensor2& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

double plain_per_head(const char* what, std::span<const Tensor2> teacher,
                      std::span<const Tensor2> student) {
  if (teacher.size() != student.size() || teacher.empty()) {
    throw DimensionError(std::string(what) + ": teacher has " + std::to_string(teacher.size()) +
                         " heads, student " + std::to_string(student.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    if (!teacher[i].same_shape(student[i])) {
      throw DimensionError(std::string(what) + ": head " + std::to_string(i) + " shapes " +
                           teacher[i].shape_str() + " vs " + student[i].shape_str());
    }
    s += plain_mse(teacher[i], student[i]);
  }
  return s / static_cast<double>(teacher.size());
}

void check_prefix_shapes(std::span<const Var> tk, std::span<const Var> tv,
                         std::span<const Var> sk, std::span<const Var> sv) {
  if (tk.empty() || tk.size() != sk.size() || tv.size() != sv.size() || tk.size() != tv.size()) {
    throw ConfigError("prefix_relation_loss: head count mismatch (teacher " +
                      std::to_string(tk.size()) + ", student " + std::to_string(sk.size()) + ")");
  }
  for (std::size_t h = 0; h < tk.size(); ++h) {
    const auto& ref = tk[h].value();
    for (const Var* v : {&tv[h], &sk[h], &sv[h]}) {
      if (!v->value().same_shape(ref)) {
        throw ConfigError("prefix_relation_loss: student prefix must be " + ref.shape_str() +
                          " ((t*p) x (d/h)) per head, got " + v->value().shape_str());
      }
    }
  }
}

}  // namespace

Var attention_relation_loss(std::span<const Var> teacher, std::span<const Var> student) {
  return per_head_mse("attention_relation_loss", teacher, student);
}

Var value_relation_loss(std::span<const Var> teacher, std::span<const Var> student) {
  return per_head_mse("value_relation_loss", teacher, student);
}

Var logits_loss(Var teacher, Var student) {
  if (!teacher.value().same_shape(student.value())) {
    throw DimensionError("logits_loss: teacher " + teacher.value().shape_str() + " vs student " +
                         student.value().shape_str());
  }
  return core::mse(teacher, student);
}

Var prefix_relation_loss(std::span<const Var> teacher_keys, std::span<const Var> teacher_values,
                         std::span<const Var> student_keys, std::span<const Var> student_values) {
  check_prefix_shapes(teacher_keys, teacher_values, student_keys, student_values);
  return core::add(per_head_mse("prefix_relation_loss", teacher_keys, student_keys),
                   per_head_mse("prefix_relation_loss", teacher_values, student_values));
}

double attention_relation_loss(std::span<const Tensor2> teacher, std::span<const Tensor2> student) {
  return plain_per_head("attention_relation_loss", teacher, student);
}

double value_relation_loss(std::span<const Tensor2> teacher, std::span<const Tensor2> student) {
  return plain_per_head("value_relation_loss", teacher, student);
}

double logits_loss(const Tensor2& teacher, const Tensor2& student) {
  if (!teacher.same_shape(student) || teacher.empty()) {
    throw DimensionError("logits_loss: teacher " + teacher.shape_str() + " vs student " +
                         student.shape_str());
  }
  return plain_mse(teacher, student);
}

double prefix_relation_loss(const model::PrefixStore& teacher, const model::PrefixBlock& student) {
  if (teacher.empty()) throw ConfigError("prefix_relation_loss: teacher has no prefixes");
  core::Tape tape(false);
  std::vector<Var> tk, tv, sk, sv;
  const std::size_t heads = teacher.blocks().front().heads();
  for (std::size_t h = 0; h < heads; ++h) {
    tk.push_back(tape.constant(teacher.stacked_keys(h)));
    tv.push_back(tape.constant(teacher.stacked_values(h)));
  }
  for (std::size_t h = 0; h < student.heads(); ++h) {
    sk.push_back(tape.constant(student.keys[h].value));
    sv.push_back(tape.constant(student.values[h].value));
  }
  return prefix_relation_loss(tk, tv, sk, sv).value()[0];
}

model::Model make_student(const model::Model& teacher, double rho, core::Rng& rng) {
  if (!(rho > 0.0 && rho <= 1.0)) throw ConfigError("make_student: rho must be in (0, 1]");
  model::ModelConfig cfg = teacher.config;
  for (auto& w : cfg.mlp_widths) {
    w = static_cast<std::size_t>(std::ceil(rho * static_cast<double>(w)));
  }
  model::Model student = model::Model::create(model::ModelKind::Light, cfg, rng);
  student.encoding = teacher.encoding;
  student.attention = teacher.attention;
  student.task_index = teacher.task_index;
  if (!teacher.prefixes.empty()) {
    const std::size_t heads = teacher.attention.heads;
    model::PrefixBlock block;
    block.task_id = teacher.task_index;
    for (std::size_t h = 0; h < heads; ++h) {
      const auto tag = std::to_string(block.task_id) + "." + std::to_string(h);
      block.keys.emplace_back("prefix." + tag + ".key", teacher.prefixes.stacked_keys(h));
      block.values.emplace_back("prefix." + tag + ".value", teacher.prefixes.stacked_values(h));
    }
    student.prefixes.push(std::move(block));
  }
  if (rho == 1.0) {
    student.mlp = teacher.mlp;
    for (auto& layer : student.mlp) {
      layer.weight.grad_mask.reset();
      layer.bias.grad_mask.reset();
      layer.stable_set.clear();
      layer.last_avg_activation.reset();
    }
    student.classifier = teacher.classifier;
  } else {
    student.classifier.grow(teacher.classifier.class_ids, rng);
  }
  for (auto* p : student.parameters()) {
    p->trainable = true;
    p->zero_grad();
  }
  student.attention.frozen = false;
  return student;
}

namespace {

struct TeacherTargets {
  std::vector<Tensor2> attn;
  std::vector<Tensor2> values;
  Tensor2 logits;
};

std::vector<TeacherTargets> teacher_targets(const model::Model& teacher,
                                            std::span<const train::Example> data) {
  std::vector<TeacherTargets> out;
  out.reserve(data.size());
  for (const auto& ex : data) {
    core::Tape tape(false);
    auto vars = teacher.bind(tape);
    auto tr = teacher.forward(vars, tape.constant(ex.x));
    TeacherTargets t;
    for (auto& a : tr.attention.attn) t.attn.push_back(a.value());
    for (auto& v : tr.attention.values) t.values.push_back(v.value());
    t.logits = tr.logits.value();
    out.push_back(std::move(t));
  }
  return out;
}

train::LoopOptions loop_options(const DistillConfig& cfg) {
  return {.epochs = cfg.epochs, .batch = cfg.batch, .lr = cfg.lr, .dropout = cfg.dropout};
}

std::vector<std::size_t> label_indices(const model::Model& m,
                                       std::span<const train::Example> data) {
  std::vector<std::size_t> out;
  for (const auto& ex : data) {
    auto idx = m.classifier.index_of(ex.class_id);
    if (!idx) throw ConfigError("distill: class " + std::to_string(ex.class_id) + " unknown to model");
    out.push_back(*idx);
  }
  return out;
}

std::size_t newest_task_offset(const model::Model& m, std::span<const train::Example> data) {
  std::size_t lo = m.classifier.size();
  for (const auto& ex : data) lo = std::min(lo, *m.classifier.index_of(ex.class_id));
  return lo;
}

void check_compatible(const model::Model& teacher, const model::Model& student) {
  if (teacher.config.d != student.config.d || teacher.config.heads != student.config.heads ||
      teacher.config.n != student.config.n) {
    throw DimensionError("distill: teacher and student disagree on n, d or heads");
  }
}

}  // namespace

model::Model distill_initial(const model::Model& teacher, const DistillConfig& cfg,
                             std::span<const train::Example> task_data, core::Rng& rng) {
  cfg.validate();
  if (task_data.empty()) throw ConfigError("distill_initial: no task data");
  model::Model student = make_student(teacher, cfg.rho, rng);
  const auto targets = teacher_targets(teacher, task_data);
  const auto labels = label_indices(student, task_data);
  const std::size_t ce_begin = cfg.task_local_ce ? newest_task_offset(student, task_data) : 0;

  auto loss = [&](core::Tape& tape, const model::ModelVars& vars, std::size_t i,
                  const model::ForwardMode& mode) {
    auto tr = student.forward(vars, tape.constant(task_data[i].x), mode);
    const auto& tgt = targets[i];
    std::vector<Var> terms;
    if (cfg.lambda_at > 0.0) {
      std::vector<Var> ta;
      for (const auto& a : tgt.attn) ta.push_back(tape.constant(a));
      terms.push_back(core::scale(attention_relation_loss(ta, tr.attention.attn), cfg.lambda_at));
    }
    if (cfg.lambda_vr > 0.0) {
      std::vector<Var> tv;
      for (const auto& v : tgt.values) tv.push_back(tape.constant(v));
      terms.push_back(core::scale(value_relation_loss(tv, tr.attention.values), cfg.lambda_vr));
    }
    if (cfg.lambda_log > 0.0) {
      terms.push_back(
          core::scale(logits_loss(tape.constant(tgt.logits), tr.logits), cfg.lambda_log));
    }
    if (cfg.lambda_ce > 0.0) {
      const std::size_t lab[] = {labels[i]};
      terms.push_back(
          core::scale(core::softmax_cross_entropy(tr.logits, lab, ce_begin), cfg.lambda_ce));
    }
    if (terms.empty()) return core::scale(tr.logits, 0.0);
    Var sum = terms.front();
    for (std::size_t k = 1; k < terms.size(); ++k) sum = core::add(sum, terms[k]);
    return sum;
  };
  if (cfg.epochs > 0) train::fit(student, task_data.size(), loss, loop_options(cfg), rng);

  student.encoding.set_trainable(false);
  student.attention.freeze();
  if (!student.prefixes.empty()) {
    student.prefixes.freeze_and_accumulate(student.prefixes.blocks().back().task_id);
  }
  return student;
}

model::Model distill_incremental(const model::Model& teacher, const model::Model& prev_student,
                                 const DistillConfig& cfg,
                                 std::span<const train::Example> task_data, core::Rng& rng) {
  cfg.validate();
  check_compatible(teacher, prev_student);
  if (task_data.empty()) throw ConfigError("distill_incremental: no task data");
  if (teacher.prefixes.empty()) throw StateError("distill_incremental: teacher has no prefixes");

  model::Model student = prev_student;
  student.task_index = teacher.task_index;

  // Replace the consolidated block with one sized like the teacher's stack.
  const std::size_t heads = teacher.attention.heads;
  model::PrefixBlock block;
  block.task_id = teacher.task_index;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto tag = std::to_string(block.task_id) + "." + std::to_string(h);
    block.keys.emplace_back("prefix." + tag + ".key", teacher.prefixes.stacked_keys(h));
    block.values.emplace_back("prefix." + tag + ".value", teacher.prefixes.stacked_values(h));
  }
  student.prefixes = model::PrefixStore{};
  student.prefixes.push(std::move(block));

  std::vector<std::size_t> fresh;
  for (auto c : teacher.classifier.class_ids) {
    if (!student.classifier.index_of(c)) fresh.push_back(c);
  }
  student.classifier.grow(fresh, rng);
  if (student.classifier.class_ids != teacher.classifier.class_ids) {
    throw StateError("distill_incremental: student classes diverge from teacher");
  }

  for (auto& layer : student.mlp) {
    layer.weight.trainable = layer.bias.trainable = true;
    layer.weight.grad_mask.reset();
    layer.bias.grad_mask.reset();
  }
  student.classifier.weight.trainable = student.classifier.bias.trainable = true;
  student.encoding.set_trainable(false);
  student.attention.set_trainable(false);

  const auto targets = teacher_targets(teacher, task_data);
  const auto labels = label_indices(student, task_data);
  const std::size_t ce_begin = cfg.task_local_ce ? newest_task_offset(student, task_data) : 0;
  std::vector<Tensor2> tk, tv;
  for (std::size_t h = 0; h < heads; ++h) {
    tk.push_back(teacher.prefixes.stacked_keys(h));
    tv.push_back(teacher.prefixes.stacked_values(h));
  }

  auto loss = [&](core::Tape& tape, const model::ModelVars& vars, std::size_t i,
                  const model::ForwardMode& mode) {
    auto tr = student.forward(vars, tape.constant(task_data[i].x), mode);
    std::vector<Var> terms;
    if (cfg.lambda_p > 0.0) {
      std::vector<Var> ck, cv;
      for (std::size_t h = 0; h < heads; ++h) {
        ck.push_back(tape.constant(tk[h]));
        cv.push_back(tape.constant(tv[h]));
      }
      terms.push_back(core::scale(
          prefix_relation_loss(ck, cv, vars.prefixes.keys, vars.prefixes.values), cfg.lambda_p));
    }
    if (cfg.lambda_log > 0.0) {
      terms.push_back(
          core::scale(logits_loss(tape.constant(targets[i].logits), tr.logits), cfg.lambda_log));
    }
    if (cfg.lambda_ce > 0.0) {
      const std::size_t lab[] = {labels[i]};
      terms.push_back(
          core::scale(core::softmax_cross_entropy(tr.logits, lab, ce_begin), cfg.lambda_ce));
    }
    if (terms.empty()) return core::scale(tr.logits, 0.0);
    Var sum = terms.front();
    for (std::size_t k = 1; k < terms.size(); ++k) sum = core::add(sum, terms[k]);
    return sum;
  };
  if (cfg.epochs > 0) train::fit(student, task_data.size(), loss, loop_options(cfg), rng);

  student.prefixes.freeze_and_accumulate(student.task_index);
  return student;
}

}  // namespace wecar::distill
