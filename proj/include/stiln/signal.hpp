#pragma once

// EEG preprocessing: resampling, zero-phase band-pass filtering, windowing and
// per-electrode band power extraction.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stiln/error.hpp"

namespace stiln {

inline constexpr int kChannels = 32;
inline constexpr int kBandCount = 5;
inline constexpr double kTargetFs = 128.0;
inline constexpr double kBaselineSeconds = 3.0;
inline constexpr double kWindowSeconds = 6.0;
inline constexpr double kWindowStrideSeconds = 3.0;
inline constexpr int kSubSegments = 6;

struct BandSpec {
  std::string_view name;
  double lo;
  double hi;
};

// Contiguous partition of [1, 45] Hz; each band is half-open [lo, hi).
inline constexpr std::array<BandSpec, kBandCount> kBands{{
    {"delta", 1.0, 4.0},
    {"theta", 4.0, 8.0},
    {"alpha", 8.0, 12.0},
    {"beta", 12.0, 20.0},
    {"gamma", 20.0, 45.0},
}};

// One subject-trial: channel-major samples [32 x n_samples].
struct RawTrial {
  int subject_id = 0;
  int trial_id = 0;
  double fs = 0.0;
  std::int64_t n_samples = 0;
  std::vector<float> samples;
  double arousal = 0.0;
  double valence = 0.0;

  std::span<const float> channel(int c) const {
    return {samples.data() + static_cast<std::size_t>(c) * n_samples,
            static_cast<std::size_t>(n_samples)};
  }
  std::span<float> channel(int c) {
    return {samples.data() + static_cast<std::size_t>(c) * n_samples,
            static_cast<std::size_t>(n_samples)};
  }

  void validate() const {
    if (!(fs > 0.0)) throw InvalidArgument("trial: sampling rate must be positive");
    if (static_cast<std::int64_t>(samples.size()) != kChannels * n_samples) {
      throw InvalidShape("trial: expected 32 channels of " + std::to_string(n_samples) +
                         " samples");
    }
    for (float v : samples) {
      if (!std::isfinite(v)) throw InvalidArgument("trial: non-finite sample");
    }
  }
};

// A window of a trial (also used for its 1 s sub-segments).
struct Segment {
  double fs = 0.0;
  std::int64_t n_samples = 0;
  std::vector<float> samples;  // [32 x n_samples]

  std::span<const float> channel(int c) const {
    return {samples.data() + static_cast<std::size_t>(c) * n_samples,
            static_cast<std::size_t>(n_samples)};
  }
};

// Band power per electrode, electrode-major: values[e * 5 + band].
struct BandFeature {
  std::array<double, kChannels * kBandCount> values{};

  double at(int electrode, int band) const { return values[electrode * kBandCount + band]; }
  double& at(int electrode, int band) { return values[electrode * kBandCount + band]; }
};

namespace detail {

inline double sinc(double x) {
  if (std::abs(x) < 1e-12) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

inline double kaiser(double u, double beta) {
  if (std::abs(u) >= 1.0) return 0.0;
  return std::cyl_bessel_i(0.0, beta * std::sqrt(1.0 - u * u)) / std::cyl_bessel_i(0.0, beta);
}

struct Biquad {
  double b0, b1, b2, a1, a2;
};

// Transposed direct form II over x in place, starting from state (z1, z2).
inline void run_biquad(const Biquad& q, std::vector<double>& x, double z1, double z2) {
  for (double& v : x) {
    const double in = v;
    const double out = q.b0 * in + z1;
    z1 = q.b1 * in - q.a1 * out + z2;
    z2 = q.b2 * in - q.a2 * out;
    v = out;
  }
}

// Every section has b0 + b1 + b2 = 0 (zeros at DC), so the steady state for a
// constant input u is (-b0 u, b2 u) in the first section and zero afterwards.
inline void run_cascade(const std::vector<Biquad>& sos, std::vector<double>& x) {
  const double u = x.empty() ? 0.0 : x.front();
  for (std::size_t s = 0; s < sos.size(); ++s) {
    if (s == 0) {
      run_biquad(sos[s], x, -sos[s].b0 * u, sos[s].b2 * u);
    } else {
      run_biquad(sos[s], x, 0.0, 0.0);
    }
  }
}

}  // namespace detail

inline constexpr int kButterworthOrder = 4;
inline constexpr double kKaiserBeta = 8.0;
inline constexpr double kResampleHalfWidth = 16.0;  // in output sample periods

// Windowed-sinc resampling with a Kaiser window and cutoff at 0.9 x the target
// Nyquist frequency. Kernel weights are renormalized per output sample so
// constant signals are reproduced exactly, edges included.
inline RawTrial resample(const RawTrial& trial, double target_fs) {
  if (!(target_fs > 0.0)) throw InvalidArgument("resample: target rate must be positive");
  if (target_fs > trial.fs) throw InvalidArgument("resample: upsampling is not supported");
  if (target_fs == trial.fs) return trial;
  RawTrial out = trial;
  const std::int64_t n_out = std::llround(static_cast<double>(trial.n_samples) * target_fs / trial.fs);
  out.fs = target_fs;
  out.n_samples = n_out;
  out.samples.assign(static_cast<std::size_t>(kChannels * n_out), 0.0f);
  const double ratio = trial.fs / target_fs;
  const double cutoff = 0.9 * (target_fs / 2.0) / trial.fs;  // cycles per input sample
  const double half = kResampleHalfWidth * ratio;             // in input samples
  std::vector<double> w;
  for (std::int64_t j = 0; j < n_out; ++j) {
    const double center = static_cast<double>(j) * ratio;
    const auto lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(center - half)));
    const auto hi = std::min<std::int64_t>(trial.n_samples - 1,
                                           static_cast<std::int64_t>(std::floor(center + half)));
    w.assign(static_cast<std::size_t>(hi - lo + 1), 0.0);
    double total = 0.0;
    for (std::int64_t m = lo; m <= hi; ++m) {
      const double tau = static_cast<double>(m) - center;
      const double v = 2.0 * cutoff * detail::sinc(2.0 * cutoff * tau) * detail::kaiser(tau / half, kKaiserBeta);
      w[static_cast<std::size_t>(m - lo)] = v;
      total += v;
    }
    for (int c = 0; c < kChannels; ++c) {
      const auto x = trial.channel(c);
      double acc = 0.0;
      for (std::int64_t m = lo; m <= hi; ++m) acc += w[static_cast<std::size_t>(m - lo)] * x[m];
      out.channel(c)[j] = static_cast<float>(acc / total);
    }
  }
  return out;
}

// Second-order sections of a digital Butterworth band-pass (bilinear transform
// with pre-warping), normalized to unit gain at the geometric centre.
inline std::vector<detail::Biquad> butterworth_bandpass(double lo, double hi, double fs,
                                                        int order = kButterworthOrder) {
  using cd = std::complex<double>;
  const double wlo = 2.0 * fs * std::tan(std::numbers::pi * lo / fs);
  const double whi = 2.0 * fs * std::tan(std::numbers::pi * hi / fs);
  const double bw = whi - wlo;
  const double w0sq = wlo * whi;
  std::vector<cd> poles;
  for (int k = 0; k < order; ++k) {
    const cd p = std::polar(1.0, std::numbers::pi * (2.0 * k + 1.0 + order) / (2.0 * order));
    const cd disc = std::sqrt(p * p * bw * bw - 4.0 * w0sq);
    for (const cd s : {(p * bw + disc) / 2.0, (p * bw - disc) / 2.0}) {
      const cd z = (2.0 * fs + s) / (2.0 * fs - s);
      if (z.imag() > 0.0) poles.push_back(z);
    }
  }
  if (static_cast<int>(poles.size()) != order) throw NumericError("butterworth: pole pairing failed");
  const double wc = 2.0 * std::atan(std::sqrt(w0sq) / (2.0 * fs));
  const cd zc = std::polar(1.0, wc);
  cd response = 1.0;
  std::vector<detail::Biquad> sos;
  for (const cd& z : poles) {
    detail::Biquad q{1.0, 0.0, -1.0, -2.0 * z.real(), std::norm(z)};
    response *= (zc * zc - 1.0) / (zc * zc + q.a1 * zc + q.a2);
    sos.push_back(q);
  }
  const double gain = std::pow(1.0 / std::abs(response), 1.0 / static_cast<double>(order));
  for (auto& q : sos) {
    q.b0 *= gain;
    q.b2 *= gain;
  }
  return sos;
}

// Zero-phase (forward-backward) 4th-order Butterworth band-pass. The signal is
// extended by odd reflection (up to 1 s per side) to suppress edge transients.
inline RawTrial bandpass(const RawTrial& trial, double lo, double hi) {
  if (!(lo > 0.0) || !(hi > lo)) throw InvalidArgument("bandpass: need 0 < lo < hi");
  if (hi >= trial.fs / 2.0) throw InvalidArgument("bandpass: upper edge must be below Nyquist");
  const auto sos = butterworth_bandpass(lo, hi, trial.fs);
  RawTrial out = trial;
  const std::int64_t n = trial.n_samples;
  if (n < 2) return out;
  const std::int64_t pad = std::min<std::int64_t>(n - 1, std::llround(trial.fs));
  std::vector<double> x(static_cast<std::size_t>(n + 2 * pad));
  for (int c = 0; c < kChannels; ++c) {
    const auto src = trial.channel(c);
    for (std::int64_t i = 0; i < pad; ++i) x[i] = 2.0 * src[0] - src[pad - i];
    for (std::int64_t i = 0; i < n; ++i) x[pad + i] = src[i];
    for (std::int64_t i = 0; i < pad; ++i) x[pad + n + i] = 2.0 * src[n - 1] - src[n - 2 - i];
    detail::run_cascade(sos, x);
    std::reverse(x.begin(), x.end());
    detail::run_cascade(sos, x);
    std::reverse(x.begin(), x.end());
    auto dst = out.channel(c);
    for (std::int64_t i = 0; i < n; ++i) dst[i] = static_cast<float>(x[pad + i]);
  }
  return out;
}

// 6 s windows with 3 s stride over the stimulus part of the trial (the first
// 3 s are baseline and dropped). Too-short trials yield no windows.
inline std::vector<Segment> segment(const RawTrial& trial) {
  const std::int64_t baseline = std::llround(kBaselineSeconds * trial.fs);
  const std::int64_t window = std::llround(kWindowSeconds * trial.fs);
  const std::int64_t stride = std::llround(kWindowStrideSeconds * trial.fs);
  std::vector<Segment> out;
  const std::int64_t stimulus = trial.n_samples - baseline;
  if (stimulus < window) return out;
  const std::int64_t count = (stimulus - window) / stride + 1;
  for (std::int64_t s = 0; s < count; ++s) {
    Segment seg{trial.fs, window, std::vector<float>(static_cast<std::size_t>(kChannels * window))};
    const std::int64_t start = baseline + s * stride;
    for (int c = 0; c < kChannels; ++c) {
      const auto src = trial.channel(c);
      std::copy_n(src.begin() + start, window, seg.samples.begin() + c * window);
    }
    out.push_back(std::move(seg));
  }
  return out;
}

// Six contiguous, non-overlapping 1 s blocks in temporal order.
inline std::vector<Segment> subsegment(const Segment& seg) {
  const std::int64_t block = std::llround(seg.fs);
  if (seg.n_samples != kSubSegments * block ||
      static_cast<std::int64_t>(seg.samples.size()) != kChannels * seg.n_samples) {
    throw InvalidShape("subsegment: expected a 6 s segment of " +
                       std::to_string(kSubSegments * block) + " samples per channel");
  }
  std::vector<Segment> out;
  for (int i = 0; i < kSubSegments; ++i) {
    Segment sub{seg.fs, block, std::vector<float>(static_cast<std::size_t>(kChannels * block))};
    for (int c = 0; c < kChannels; ++c) {
      const auto src = seg.channel(c);
      std::copy_n(src.begin() + i * block, block, sub.samples.begin() + c * block);
    }
    out.push_back(std::move(sub));
  }
  return out;
}

struct PsdOptions {
  std::int64_t segment_length = 0;  // Welch segment; 0 = whole input
  double overlap = 0.5;
};

// One-sided Welch PSD (periodic Hann window, per-segment mean removal, density
// scaling). Returns values at frequencies k * fs / segment_length.
inline std::vector<double> welch_psd(std::span<const float> x, double fs, std::int64_t nper,
                                     double overlap) {
  const auto n = static_cast<std::int64_t>(x.size());
  if (nper <= 0 || nper > n) nper = n;
  const auto step = std::max<std::int64_t>(1, nper - static_cast<std::int64_t>(overlap * nper));
  std::vector<double> win(static_cast<std::size_t>(nper));
  double wsq = 0.0;
  for (std::int64_t i = 0; i < nper; ++i) {
    win[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / static_cast<double>(nper));
    wsq += win[i] * win[i];
  }
  const std::int64_t bins = nper / 2 + 1;
  std::vector<double> psd(static_cast<std::size_t>(bins), 0.0);
  std::vector<double> buf(static_cast<std::size_t>(nper));
  std::vector<double> cos_t(static_cast<std::size_t>(nper)), sin_t(static_cast<std::size_t>(nper));
  for (std::int64_t i = 0; i < nper; ++i) {
    const double ang = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(nper);
    cos_t[i] = std::cos(ang);
    sin_t[i] = std::sin(ang);
  }
  int averages = 0;
  for (std::int64_t start = 0; start + nper <= n; start += step) {
    double mu = 0.0;
    for (std::int64_t i = 0; i < nper; ++i) mu += x[start + i];
    mu /= static_cast<double>(nper);
    for (std::int64_t i = 0; i < nper; ++i) buf[i] = (x[start + i] - mu) * win[i];
    for (std::int64_t k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      for (std::int64_t i = 0; i < nper; ++i) {
        const std::int64_t j = (k * i) % nper;
        re += buf[i] * cos_t[j];
        im -= buf[i] * sin_t[j];
      }
      double p = (re * re + im * im) / (fs * wsq);
      if (k != 0 && !(nper % 2 == 0 && k == bins - 1)) p *= 2.0;
      psd[k] += p;
    }
    ++averages;
  }
  for (auto& p : psd) p /= averages;
  return psd;
}

// Trapezoidal integral of the piecewise-linear PSD over [lo, hi).
inline double integrate_band(std::span<const double> psd, double df, double lo, double hi) {
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < psd.size(); ++k) {
    const double f0 = static_cast<double>(k) * df, f1 = f0 + df;
    const double a = std::max(lo, f0), b = std::min(hi, f1);
    if (b <= a) continue;
    const double va = psd[k] + (psd[k + 1] - psd[k]) * (a - f0) / df;
    const double vb = psd[k] + (psd[k + 1] - psd[k]) * (b - f0) / df;
    acc += 0.5 * (va + vb) * (b - a);
  }
  return acc;
}

// Per-electrode power in each of the five bands for a 1 s sub-segment.
inline BandFeature band_psd(const Segment& sub, const PsdOptions& opt = {}) {
  if (static_cast<std::int64_t>(sub.samples.size()) != kChannels * sub.n_samples ||
      sub.n_samples < 2) {
    throw InvalidShape("band_psd: malformed sub-segment");
  }
  for (float v : sub.samples) {
    if (!std::isfinite(v)) throw InvalidArgument("band_psd: non-finite input");
  }
  const std::int64_t nper = opt.segment_length > 0 ? opt.segment_length : sub.n_samples;
  BandFeature out;
  for (int e = 0; e < kChannels; ++e) {
    const auto psd = welch_psd(sub.channel(e), sub.fs, nper, opt.overlap);
    const double df = sub.fs / static_cast<double>(std::min(nper, sub.n_samples));
    for (int b = 0; b < kBandCount; ++b) {
      out.at(e, b) = std::max(0.0, integrate_band(psd, df, kBands[b].lo, kBands[b].hi));
    }
  }
  return out;
}

// Resample to 128 Hz and band-pass 1-45 Hz.
inline RawTrial preprocess(const RawTrial& trial) {
  trial.validate();
  RawTrial t = trial.fs == kTargetFs ? trial : resample(trial, kTargetFs);
  return bandpass(t, kBands.front().lo, kBands.back().hi);
}

}  // namespace stiln
