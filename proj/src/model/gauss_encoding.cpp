#include "wecar/model/gauss_encoding.hpp"

#include "wecar/core/errors.hpp"

namespace wecar::model {

GaussianRangeEncoding GaussianRangeEncoding::create(std::size_t n, std::size_t d,
                                                    std::size_t ranges, double sigma,
                                                    core::Rng& rng) {
  if (n == 0 || d == 0 || ranges == 0) {
    throw ConfigError("GaussianRangeEncoding: n, d and ranges must be >= 1");
  }
  if (!(sigma > kSigmaFloor)) {
    throw ConfigError("GaussianRangeEncoding: sigma must exceed the floor");
  }
  core::Tensor2 mu(1, ranges);
  const double width = static_cast<double>(n) / static_cast<double>(ranges);
  for (std::size_t j = 0; j < ranges; ++j) mu[j] = (static_cast<double>(j) + 0.5) * width;
  core::Tensor2 raw(1, ranges, core::softplus_inverse(sigma - kSigmaFloor));

  GaussianRangeEncoding enc;
  enc.mu = core::Param("encoding.mu", std::move(mu));
  enc.sigma_raw = core::Param("encoding.sigma_raw", std::move(raw));
  enc.table = core::Param("encoding.table", core::random_normal(ranges, d, 0.1, rng));
  return enc;
}

std::vector<double> GaussianRangeEncoding::sigma() const {
  std::vector<double> out(ranges());
  for (std::size_t j = 0; j < out.size(); ++j) {
    out[j] = core::softplus(sigma_raw.value[j]) + kSigmaFloor;
  }
  return out;
}

void GaussianRangeEncoding::set_sigma(std::size_t j, double sigma) {
  if (!(sigma > kSigmaFloor)) throw ConfigError("set_sigma: sigma must exceed the floor");
  sigma_raw.value[j] = core::softplus_inverse(sigma - kSigmaFloor);
}

void GaussianRangeEncoding::set_trainable(bool trainable) {
  mu.trainable = sigma_raw.trainable = table.trainable = trainable;
}

core::Tensor2 GaussianRangeEncoding::compute_b(std::size_t n) const {
  core::Tape tape(false);
  auto vars = bind_constant(tape, *this);
  return core::gaussian_range_logits(vars.mu, vars.sigma_raw, n, kSigmaFloor).value();
}

core::Tensor2 GaussianRangeEncoding::compute_beta(std::size_t n) const {
  return core::softmax_rows(compute_b(n));
}

core::Tensor2 GaussianRangeEncoding::encode(const core::Tensor2& x) const {
  core::Tape tape(false);
  auto vars = bind_constant(tape, *this);
  return model::encode(vars, tape.constant(x)).value();
}

EncodingVars bind(core::Tape& tape, GaussianRangeEncoding& enc) {
  return {tape.param(enc.mu), tape.param(enc.sigma_raw), tape.param(enc.table)};
}

EncodingVars bind_constant(core::Tape& tape, const GaussianRangeEncoding& enc) {
  return {tape.constant(enc.mu.value), tape.constant(enc.sigma_raw.value),
          tape.constant(enc.table.value)};
}

core::Var range_bias(const EncodingVars& vars, std::size_t n) {
  auto b = core::gaussian_range_logits(vars.mu, vars.sigma_raw, n,
                                       GaussianRangeEncoding::kSigmaFloor);
  return core::matmul(core::softmax_rows(b), vars.table);
}

core::Var encode(const EncodingVars& vars, core::Var x) {
  if (x.cols() != vars.table.cols()) {
    throw DimensionError("encode: input has " + std::to_string(x.cols()) +
                         " columns, encoding table has " + std::to_string(vars.table.cols()));
  }
  return core::add(x, range_bias(vars, x.rows()));
}

}  // namespace wecar::model
