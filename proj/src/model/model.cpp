#include "wecar/model/model.hpp"

#include <algorithm>

#include "wecar/core/errors.hpp"

namespace wecar::model {

std::string to_string(ModelKind kind) { return kind == ModelKind::Full ? "full" : "light"; }

std::size_t ModelConfig::resolved_adapter_rank() const {
  return adapter_rank != 0 ? adapter_rank : std::max<std::size_t>(1, d / 4);
}

void ModelConfig::validate() const {
  if (n == 0 || d == 0) throw ConfigError("model: n and d must be >= 1");
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("model: d=" + std::to_string(d) + " must be divisible by heads=" +
                      std::to_string(heads));
  }
  if (ranges == 0) throw ConfigError("model: ranges must be >= 1");
  if (prefix_len == 0 || prefix_len > n) {
    throw ConfigError("model: prefix_len must be in [1, n]");
  }
  if (mlp_widths.empty()) throw ConfigError("model: at least one MLP layer is required");
  for (auto w : mlp_widths) {
    if (w == 0) throw ConfigError("model: MLP widths must be >= 1");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model: dropout must be in [0, 1)");
}

Classifier Classifier::create(std::size_t width) {
  Classifier c;
  c.weight = core::Param("classifier.weight", core::Tensor2(0, width));
  c.bias = core::Param("classifier.bias", core::Tensor2(1, 0));
  return c;
}

std::optional<std::size_t> Classifier::index_of(std::size_t class_id) const {
  auto it = std::find(class_ids.begin(), class_ids.end(), class_id);
  if (it == class_ids.end()) return std::nullopt;
  return static_cast<std::size_t>(it - class_ids.begin());
}

void Classifier::grow(std::span<const std::size_t> new_classes, core::Rng& rng) {
  for (std::size_t i = 0; i < new_classes.size(); ++i) {
    if (index_of(new_classes[i]) ||
        std::find(new_classes.begin(), new_classes.begin() + static_cast<std::ptrdiff_t>(i),
                  new_classes[i]) != new_classes.begin() + static_cast<std::ptrdiff_t>(i)) {
      throw ConfigError("grow_classifier: class " + std::to_string(new_classes[i]) +
                        " already present");
    }
  }
  if (new_classes.empty()) return;
  const std::size_t old_c = size(), w = width(), new_c = old_c + new_classes.size();
  core::Tensor2 fresh = core::random_normal(new_classes.size(), w, 0.01, rng);

  core::Tensor2 wv(new_c, w);
  std::copy(weight.value.data().begin(), weight.value.data().end(), wv.data().begin());
  std::copy(fresh.data().begin(), fresh.data().end(),
            wv.data().begin() + static_cast<std::ptrdiff_t>(old_c * w));
  core::Tensor2 bv(1, new_c);
  std::copy(bias.value.data().begin(), bias.value.data().end(), bv.data().begin());

  const bool trainable = weight.trainable;
  weight = core::Param(weight.name, std::move(wv), trainable);
  bias = core::Param(bias.name, std::move(bv), trainable);
  class_ids.insert(class_ids.end(), new_classes.begin(), new_classes.end());
}

Model Model::create(ModelKind kind, const ModelConfig& config, core::Rng& rng) {
  config.validate();
  Model m;
  m.kind = kind;
  m.config = config;
  m.encoding = GaussianRangeEncoding::create(config.n, config.d, config.ranges, config.sigma, rng);
  m.attention = AttentionBase::create(config.d, config.heads, rng);
  std::size_t in = config.d;
  for (std::size_t l = 0; l < config.mlp_widths.size(); ++l) {
    m.mlp.push_back(MlpLayer::create(in, config.mlp_widths[l], l, rng));
    in = config.mlp_widths[l];
  }
  m.classifier = Classifier::create(in);
  return m;
}

namespace {

template <class M>
ModelVars bind_model(core::Tape& tape, M& m) {
  ModelVars v;
  if constexpr (std::is_const_v<M>) {
    v.encoding = bind_constant(tape, m.encoding);
  } else {
    v.encoding = model::bind(tape, m.encoding);
  }
  v.range_bias = range_bias(v.encoding, m.config.n);
  v.attention = model::bind(tape, m.attention);
  v.prefixes = model::bind(tape, m.prefixes);
  for (auto& layer : m.mlp) {
    v.mlp_weight.push_back(core::leaf(tape, layer.weight));
    v.mlp_bias.push_back(core::leaf(tape, layer.bias));
  }
  v.classifier_weight_t = core::transpose(core::leaf(tape, m.classifier.weight));
  v.classifier_bias = core::leaf(tape, m.classifier.bias);
  return v;
}

}  // namespace

ModelVars Model::bind(core::Tape& tape) { return bind_model(tape, *this); }
ModelVars Model::bind(core::Tape& tape) const { return bind_model(tape, *this); }

ForwardTrace Model::forward(const ModelVars& vars, core::Var x, const ForwardMode& mode) const {
  if (x.rows() != config.n || x.cols() != config.d) {
    throw DimensionError("model: input " + x.value().shape_str() + " but model expects " +
                         std::to_string(config.n) + "x" + std::to_string(config.d));
  }
  ForwardTrace tr;
  core::Var xe = core::add(x, vars.range_bias);
  tr.attention = attend(vars.attention, vars.prefixes, xe);
  core::Var z = core::add(xe, tr.attention.out);
  for (std::size_t l = 0; l < vars.mlp_weight.size(); ++l) {
    core::Var h = core::relu(core::add_bias(core::matmul(z, vars.mlp_weight[l]), vars.mlp_bias[l]));
    tr.activations.push_back(h);
    if (mode.train && mode.dropout > 0.0) {
      if (mode.rng == nullptr) throw StateError("model: training dropout needs an rng");
      h = core::dropout(h, mode.dropout, *mode.rng);
    }
    z = h;
  }
  tr.pooled = core::mean_rows(z);
  tr.logits = core::add_bias(core::matmul(tr.pooled, vars.classifier_weight_t),
                             vars.classifier_bias);
  return tr;
}

core::Tensor2 Model::logits(const core::Tensor2& x) const {
  core::Tape tape(false);
  auto vars = bind(tape);
  return forward(vars, tape.constant(x)).logits.value();
}

std::size_t argmax(const core::Tensor2& row) {
  if (row.empty()) throw StateError("argmax: empty logits");
  return static_cast<std::size_t>(std::max_element(row.data().begin(), row.data().end()) -
                                  row.data().begin());
}

std::size_t Model::predict(const core::Tensor2& x) const {
  if (classifier.size() == 0) throw StateError("predict: classifier has no classes");
  return classifier.class_ids[argmax(logits(x))];
}

std::vector<core::Tensor2> Model::mlp_activations(const core::Tensor2& x) const {
  core::Tape tape(false);
  auto vars = bind(tape);
  auto tr = forward(vars, tape.constant(x));
  std::vector<core::Tensor2> out;
  for (auto& a : tr.activations) out.push_back(a.value());
  return out;
}

namespace {

template <class M, class P>
std::vector<P*> collect(M& m) {
  std::vector<P*> out{&m.encoding.mu, &m.encoding.sigma_raw, &m.encoding.table};
  for (auto* family : {&m.attention.wq, &m.attention.wk, &m.attention.wv})
    for (auto& p : *family) out.push_back(&p);
  out.push_back(&m.attention.wo);
  for (auto& b : m.prefixes.blocks()) {
    for (auto& p : b.keys) out.push_back(&p);
    for (auto& p : b.values) out.push_back(&p);
  }
  for (auto& layer : m.mlp) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
  }
  out.push_back(&m.classifier.weight);
  out.push_back(&m.classifier.bias);
  return out;
}

}  // namespace

std::vector<core::Param*> Model::parameters() { return collect<Model, core::Param>(*this); }

std::vector<const core::Param*> Model::parameters() const {
  return collect<const Model, const core::Param>(*this);
}

std::size_t Model::parameter_count() const {
  std::size_t c = 0;
  for (const auto* p : parameters()) c += p->count();
  return c;
}

}  // namespace wecar::model
