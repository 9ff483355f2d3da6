#include "wecar/data/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace wecar::data {

Dataset synthesize(const SynthOptions& opts) {
  if (opts.classes < 1 || opts.per_class < 1 || opts.n < 1 || opts.d < 1) {
    throw ConfigError("synthesize: classes, per_class, n and d must be >= 1");
  }
  if (opts.missing_rate < 0.0 || opts.missing_rate >= 1.0) {
    throw ConfigError("synthesize: missing_rate must be in [0, 1)");
  }
  if (std::isnan(opts.snr_db)) throw ConfigError("synthesize: snr_db is NaN");

  core::Rng rng(opts.seed);
  std::uniform_real_distribution<double> amp(0.5, 1.5);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> offset(-0.5, 0.5);
  std::uniform_real_distribution<double> freq(0.5, 3.0);

  const std::size_t n = opts.n, d = opts.d;
  std::vector<core::Tensor2> templates;
  for (std::size_t c = 0; c < opts.classes; ++c) {
    core::Tensor2 tpl(n, d);
    const double f = freq(rng);
    for (std::size_t i = 0; i < d; ++i) {
      const double a = amp(rng), ph = phase(rng), off = offset(rng);
      for (std::size_t t = 0; t < n; ++t) {
        tpl(t, i) = off + a * std::sin(2.0 * std::numbers::pi * f * static_cast<double>(t) /
                                           static_cast<double>(n) +
                                       ph);
      }
    }
    templates.push_back(std::move(tpl));
  }

  Dataset ds{{}, n, d, opts.classes};
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  for (std::size_t c = 0; c < opts.classes; ++c) {
    const core::Tensor2& tpl = templates[c];
    double power = 0.0;
    for (double v : tpl.data()) power += v * v;
    power /= static_cast<double>(tpl.size());
    const double noise_std =
        std::isinf(opts.snr_db) ? 0.0 : std::sqrt(power / std::pow(10.0, opts.snr_db / 10.0));
    std::normal_distribution<double> noise(0.0, noise_std > 0.0 ? noise_std : 1.0);

    for (std::size_t k = 0; k < opts.per_class; ++k) {
      CsiMatrix m(n, d);
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t i = 0; i < d; ++i) {
          double v = tpl(t, i);
          if (noise_std > 0.0) v += noise(rng);
          m.set(t, i, static_cast<double>(static_cast<float>(v)));
        }
      if (opts.missing_rate > 0.0) {
        for (std::size_t t = 0; t < n; ++t)
          for (std::size_t i = 0; i < d; ++i)
            if (coin(rng) < opts.missing_rate) m.set_missing(t, i);
        // keep every column recoverable
        for (std::size_t i = 0; i < d; ++i) {
          bool any = false;
          for (std::size_t t = 0; t < n && !any; ++t) any = !m.is_missing(t, i);
          if (!any) m.set(0, i, static_cast<double>(static_cast<float>(tpl(0, i))));
        }
      }
      ds.samples.push_back({std::move(m), c});
    }
  }
  return ds;
}

}  // namespace wecar::data
