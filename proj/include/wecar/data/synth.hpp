#pragma once

#include <cstddef>
#include <limits>

#include "wecar/data/dataset.hpp"

namespace wecar::data {

struct SynthOptions {
  std::size_t classes = 6;
  std::size_t per_class = 30;
  std::size_t n = 16;
  std::size_t d = 12;
  /// Signal-to-noise ratio in dB; infinity disables noise.
  double snr_db = 10.0;
  /// Fraction of cells flagged missing (empty frames).
  double missing_rate = 0.0;
  unsigned long long seed = 7;
};

/// Synthetic CSI amplitudes: each class has a per-channel sinusoidal template
/// (class frequency, per-channel amplitude/phase/offset); samples add white
/// Gaussian noise scaled to the requested SNR.
Dataset synthesize(const SynthOptions& opts);

}  // namespace wecar::data
