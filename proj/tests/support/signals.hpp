#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "stiln/signal.hpp"

namespace stiln::testing {

// 32-channel trial with the same sinusoid (plus offset) on every channel.
inline RawTrial tone_trial(double freq, double fs, double seconds, double amp = 1.0, double offset = 0.0) {
  RawTrial t;
  t.subject_id = 1;
  t.trial_id = 1;
  t.fs = fs;
  t.n_samples = std::llround(seconds * fs);
  t.arousal = t.valence = 7.0;
  t.samples.resize(static_cast<std::size_t>(kChannels * t.n_samples));
  for (int c = 0; c < kChannels; ++c) {
    auto ch = t.channel(c);
    for (std::int64_t i = 0; i < t.n_samples; ++i)
      ch[i] = static_cast<float>(offset + amp * std::sin(2.0 * std::numbers::pi * freq * i / fs + 0.3 * c));
  }
  return t;
}

// One 1 s, 128 Hz sub-segment carrying a unit tone on every electrode.
inline Segment tone_subsegment(double freq, double amp = 1.0) {
  const RawTrial t = tone_trial(freq, kTargetFs, 1.0, amp);
  return Segment{t.fs, t.n_samples, t.samples};
}

inline std::vector<double> channel_as_double(const RawTrial& t, int c) {
  const auto ch = t.channel(c);
  return {ch.begin(), ch.end()};
}

// Band shares of the pipeline features on electrode e: band power over the sum
// of all five bands (which partition [1, 45)).
inline std::array<double, kBandCount> pipeline_shares(const BandFeature& f, int e) {
  std::array<double, kBandCount> s{};
  double total = 0.0;
  for (int b = 0; b < kBandCount; ++b) total += f.at(e, b);
  for (int b = 0; b < kBandCount; ++b) s[b] = total > 0.0 ? f.at(e, b) / total : 0.0;
  return s;
}

inline constexpr std::array<double, kBandCount> kProbeTones{2.0, 6.0, 10.0, 16.0, 30.0};

}  // namespace stiln::testing
