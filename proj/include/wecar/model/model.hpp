#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "wecar/core/tape.hpp"
#include "wecar/model/gauss_encoding.hpp"
#include "wecar/model/prefix_attention.hpp"
#include "wecar/model/stable_mlp.hpp"

namespace wecar::model {

enum class ModelKind : std::uint8_t { Full = 0, Light = 1 };

std::string to_string(ModelKind kind);

struct ModelConfig {
  std::size_t n = 16;
  std::size_t d = 12;
  std::size_t heads = 4;
  std::size_t ranges = 10;
  double sigma = 8.0;
  std::size_t prefix_len = 4;
  /// Adapter bottleneck; 0 selects max(1, d / 4).
  std::size_t adapter_rank = 0;
  std::vector<std::size_t> mlp_widths = {64, 64};
  double dropout = 0.1;

  std::size_t resolved_adapter_rank() const;
  void validate() const;
};

/// Linear map from the pooled MLP output to one logit per seen class. Rows of
/// `weight` follow `class_ids`.
struct Classifier {
  core::Param weight;  // C x w
  core::Param bias;    // 1 x C
  std::vector<std::size_t> class_ids;

  static Classifier create(std::size_t width);
  std::size_t size() const { return class_ids.size(); }
  std::size_t width() const { return weight.value.cols(); }
  std::optional<std::size_t> index_of(std::size_t class_id) const;
  /// Appends rows for new classes: small random weights, zero bias. Existing
  /// rows are copied bit for bit. Throws ConfigError on a duplicate id.
  void grow(std::span<const std::size_t> new_classes, core::Rng& rng);
};

struct ModelVars {
  EncodingVars encoding;
  core::Var range_bias;
  AttentionVars attention;
  PrefixVars prefixes;
  std::vector<core::Var> mlp_weight, mlp_bias;
  core::Var classifier_weight_t;  // w x C
  core::Var classifier_bias;
};

struct ForwardMode {
  bool train = false;
  double dropout = 0.0;
  core::Rng* rng = nullptr;
};

struct ForwardTrace {
  core::Var logits;                    // 1 x C
  AttentionOutput attention;
  std::vector<core::Var> activations;  // post-ReLU, pre-dropout, per MLP layer
  core::Var pooled;
};

/// Encoding, one prefix-expandable attention block with a residual path, a
/// ReLU MLP applied per time step, mean pooling over time and a growing
/// classifier. The full model keeps one prefix block per task; the light
/// model keeps a single consolidated block and a narrower MLP.
class Model {
 public:
  ModelKind kind = ModelKind::Full;
  ModelConfig config;
  GaussianRangeEncoding encoding;
  AttentionBase attention;
  PrefixStore prefixes;
  std::vector<MlpLayer> mlp;
  Classifier classifier;
  std::size_t task_index = 0;

  static Model create(ModelKind kind, const ModelConfig& config, core::Rng& rng);

  ModelVars bind(core::Tape& tape);
  ModelVars bind(core::Tape& tape) const;
  ForwardTrace forward(const ModelVars& vars, core::Var x, const ForwardMode& mode = {}) const;

  core::Tensor2 logits(const core::Tensor2& x) const;
  /// Class id of the largest logit.
  std::size_t predict(const core::Tensor2& x) const;
  /// Post-ReLU activations of every MLP layer, eval mode.
  std::vector<core::Tensor2> mlp_activations(const core::Tensor2& x) const;

  /// Every parameter in a fixed order: encoding, attention, prefixes (oldest
  /// block first), MLP layers, classifier.
  std::vector<core::Param*> parameters();
  std::vector<const core::Param*> parameters() const;
  std::size_t parameter_count() const;
};

std::size_t argmax(const core::Tensor2& row);

}  // namespace wecar::model
