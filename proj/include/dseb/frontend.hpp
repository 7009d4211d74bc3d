#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "dseb/rng.hpp"
#include "dseb/tensor.hpp"

namespace dseb {

struct Waveform {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  double sample_rate = 16000.0;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

struct FrontendConfig {
  double target_rate = 16000.0;
  double window_ms = 25.0;
  double hop_ms = 10.0;
  std::size_t n_mels = 64;
  double clip_seconds = 6.0;
  double log_floor = 1e-10;
  bool mvn_per_band = false;

  std::size_t window_length() const {
    return static_cast<std::size_t>(std::llround(window_ms / 1000.0 * target_rate));
  }
  std::size_t hop_length() const {
    return static_cast<std::size_t>(std::llround(hop_ms / 1000.0 * target_rate));
  }

  void validate() const {
    if (!(hop_ms > 0.0) || window_ms < hop_ms)
      throw std::invalid_argument("frontend: need window_ms >= hop_ms > 0");
    if (n_mels < 1) throw std::invalid_argument("frontend: n_mels must be >= 1");
    if (!(clip_seconds > 0.0))
      throw std::invalid_argument("frontend: clip_seconds must be > 0");
    if (!(log_floor > 0.0))
      throw std::invalid_argument("frontend: log_floor must be > 0");
  }
};

struct LogMelSpectrogram {
  Tensor frames;  // num_frames x n_mels
  double frame_rate = 100.0;
};

/// Linear-interpolation resampler. Identity when rates already match.
inline Waveform resample(const Waveform& wav, double target_rate) {
  if (wav.samples.empty()) throw std::invalid_argument("empty waveform");
  if (wav.sample_rate == target_rate) return wav;
  const std::size_t in_len = wav.samples.size();
  const auto out_len = static_cast<std::size_t>(std::max<long long>(
      1, std::llround(static_cast<double>(in_len) * target_rate /
                      wav.sample_rate)));
  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(out_len);
  const double step = wav.sample_rate / target_rate;
  for (std::size_t i = 0; i < out_len; ++i) {
    const double pos = static_cast<double>(i) * step;
    const auto lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= in_len) {
      out.samples[i] = wav.samples[in_len - 1];
    } else {
      const double frac = pos - static_cast<double>(lo);
      out.samples[i] =
          wav.samples[lo] * (1.0 - frac) + wav.samples[lo + 1] * frac;
    }
  }
  return out;
}

/// Fixed-duration view: random contiguous crop when too long, zeros appended
/// at the end when too short. Output length is exactly
/// round(clip_seconds * sample_rate).
inline Waveform crop_or_pad(const Waveform& wav, double clip_seconds,
                            Rng& rng) {
  const auto target = static_cast<std::size_t>(
      std::llround(clip_seconds * wav.sample_rate));
  Waveform out;
  out.sample_rate = wav.sample_rate;
  const std::size_t n = wav.samples.size();
  if (n == target) {
    out.samples = wav.samples;
  } else if (n > target) {
    const std::size_t offset =
        static_cast<std::size_t>(rng.uniform_int(n - target + 1));
    out.samples.assign(wav.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                       wav.samples.begin() +
                           static_cast<std::ptrdiff_t>(offset + target));
  } else {
    out.samples = wav.samples;
    out.samples.resize(target, 0.0);
  }
  return out;
}

namespace detail {

/// In-place iterative radix-2 FFT. n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * 3.141592653589793238462643 /
                       static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline double hz_to_mel(double hz) {
  return 2595.0 * std::log10(1.0 + hz / 700.0);
}

inline double mel_to_hz(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}

}  // namespace detail

/// Triangular mel filterbank, HTK scale, area-unnormalized, spanning
/// 0 Hz .. Nyquist. Returns n_mels x (n_fft/2 + 1) weights.
inline Tensor mel_filterbank(std::size_t n_mels, std::size_t n_fft,
                             double sample_rate) {
  const std::size_t n_bins = n_fft / 2 + 1;
  const double nyquist = sample_rate / 2.0;
  const double mel_max = detail::hz_to_mel(nyquist);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = detail::mel_to_hz(mel_max * static_cast<double>(i) /
                                 static_cast<double>(n_mels + 1));
  Tensor fb = Tensor::zeros(n_mels, n_bins);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate /
                       static_cast<double>(n_fft);
      if (f > lo && f < center) {
        fb.at(m, k) = (f - lo) / (center - lo);
      } else if (f >= center && f < hi) {
        fb.at(m, k) = (hi - f) / (hi - center);
      }
    }
  }
  return fb;
}

/// Center frequencies of the filters produced by mel_filterbank.
inline std::vector<double> mel_filterbank_centers(std::size_t n_mels,
                                                  double sample_rate) {
  const double mel_max = detail::hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(n_mels);
  for (std::size_t m = 0; m < n_mels; ++m)
    centers[m] = detail::mel_to_hz(mel_max * static_cast<double>(m + 1) /
                                   static_cast<double>(n_mels + 1));
  return centers;
}

/// Hann-windowed short-time power spectrum projected onto the mel
/// filterbank, then natural log of max(power, log_floor).
inline LogMelSpectrogram log_mel(const Waveform& wav,
                                 const FrontendConfig& cfg) {
  cfg.validate();
  if (wav.sample_rate != cfg.target_rate)
    throw std::invalid_argument("log_mel: waveform not at target rate");
  const std::size_t win = cfg.window_length();
  const std::size_t hop = cfg.hop_length();
  const std::size_t n = wav.samples.size();
  if (n < win) throw std::invalid_argument("utterance too short");
  const std::size_t num_frames = 1 + (n - win) / hop;
  const std::size_t n_fft = detail::next_pow2(win);
  const std::size_t n_bins = n_fft / 2 + 1;

  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i)
    window[i] = 0.5 - 0.5 * std::cos(2.0 * 3.141592653589793238462643 *
                                     static_cast<double>(i) /
                                     static_cast<double>(win));

  const Tensor fb = mel_filterbank(cfg.n_mels, n_fft, cfg.target_rate);

  LogMelSpectrogram spec;
  spec.frames = Tensor::zeros(num_frames, cfg.n_mels);
  spec.frame_rate = cfg.target_rate / static_cast<double>(hop);
  std::vector<std::complex<double>> buf(n_fft);
  std::vector<double> power(n_bins);
  for (std::size_t f = 0; f < num_frames; ++f) {
    const std::size_t start = f * hop;
    for (std::size_t i = 0; i < n_fft; ++i) {
      buf[i] = (i < win) ? std::complex<double>(
                               wav.samples[start + i] * window[i], 0.0)
                         : std::complex<double>(0.0, 0.0);
    }
    detail::fft_radix2(buf);
    for (std::size_t k = 0; k < n_bins; ++k) power[k] = std::norm(buf[k]);
    for (std::size_t m = 0; m < cfg.n_mels; ++m) {
      double e = 0.0;
      for (std::size_t k = 0; k < n_bins; ++k) e += fb.at(m, k) * power[k];
      spec.frames.at(f, m) = std::log(std::max(e, cfg.log_floor));
    }
  }
  return spec;
}

/// Per-utterance mean-variance normalization over all entries (or per band
/// when per_band is set). Inputs with std below 1e-8 map to all zeros.
inline LogMelSpectrogram mvn_normalize(const LogMelSpectrogram& spec,
                                       bool per_band = false) {
  if (spec.frames.rows() < 2)
    throw std::invalid_argument("mvn_normalize: need >= 2 frames");
  LogMelSpectrogram out = spec;
  Tensor& m = out.frames;
  const std::size_t rows = m.rows(), cols = m.cols();
  if (per_band) {
    for (std::size_t c = 0; c < cols; ++c) {
      double mean = 0.0;
      for (std::size_t r = 0; r < rows; ++r) mean += m.at(r, c);
      mean /= static_cast<double>(rows);
      double var = 0.0;
      for (std::size_t r = 0; r < rows; ++r) {
        const double d = m.at(r, c) - mean;
        var += d * d;
      }
      const double stddev = std::sqrt(var / static_cast<double>(rows));
      for (std::size_t r = 0; r < rows; ++r)
        m.at(r, c) = stddev < 1e-8 ? 0.0 : (m.at(r, c) - mean) / stddev;
    }
    return out;
  }
  double mean = 0.0;
  for (double v : m.raw()) mean += v;
  mean /= static_cast<double>(m.size());
  double var = 0.0;
  for (double v : m.raw()) {
    const double d = v - mean;
    var += d * d;
  }
  const double stddev = std::sqrt(var / static_cast<double>(m.size()));
  for (double& v : m.raw()) v = stddev < 1e-8 ? 0.0 : (v - mean) / stddev;
  return out;
}

}  // namespace dseb
