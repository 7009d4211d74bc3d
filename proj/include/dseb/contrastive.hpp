#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dseb/autodiff.hpp"
#include "dseb/frontend.hpp"
#include "dseb/rng.hpp"

namespace dseb {

struct AugmentationConfig {
  double noise_std = 0.01;
  double gain_low = 0.7;
  double gain_high = 1.3;
  double clip_seconds = 6.0;

  void validate() const {
    if (noise_std < 0.0)
      throw std::invalid_argument("augment: noise_std must be >= 0");
    if (!(gain_low > 0.0) || gain_low > gain_high)
      throw std::invalid_argument("augment: need 0 < gain_low <= gain_high");
  }
};

/// Two correlated views per source utterance; positives are (i, i) pairs
/// across the aligned lists.
struct ContrastiveBatch {
  std::vector<Tensor> view_a;
  std::vector<Tensor> view_b;
  std::vector<std::string> source_ids;
};

/// One stochastic view: independent crop/pad, then uniform gain, then
/// i.i.d. Gaussian noise. The op order is fixed for reproducibility.
inline Waveform augment_view(const Waveform& wav, const AugmentationConfig& cfg,
                             Rng& rng) {
  Waveform view = crop_or_pad(wav, cfg.clip_seconds, rng);
  const double gain = rng.uniform(cfg.gain_low, cfg.gain_high);
  for (double& s : view.samples) s *= gain;
  if (cfg.noise_std > 0.0) {
    for (double& s : view.samples) s += cfg.noise_std * rng.normal();
  }
  return view;
}

inline std::pair<Waveform, Waveform> augment_pair(const Waveform& wav,
                                                  const AugmentationConfig& cfg,
                                                  Rng& rng) {
  cfg.validate();
  Waveform a = augment_view(wav, cfg, rng);
  Waveform b = augment_view(wav, cfg, rng);
  return {std::move(a), std::move(b)};
}

/// Forward-only NT-Xent value for unit-norm rows laid out as interleaved
/// (2i, 2i+1) positive pairs. The differentiable version is Tape::nt_xent.
inline double nt_xent_value(const Tensor& projections, double temperature) {
  ad::Tape tape;
  ad::Var p = tape.input(projections);
  return tape.value(tape.nt_xent(p, temperature)).item();
}

}  // namespace dseb
