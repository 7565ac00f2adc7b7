#pragma once

// Labels, sample assembly, leave-one-subject-out splits, the synthetic EEG
// generator standing in for DEAP, and the on-disk dataset (manifest + frame
// cache + label index).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "stiln/error.hpp"
#include "stiln/io.hpp"
#include "stiln/signal.hpp"
#include "stiln/tensor.hpp"
#include "stiln/topomap.hpp"

namespace stiln {

enum class Task { arousal, valence };

inline std::string task_name(Task t) { return t == Task::arousal ? "arousal" : "valence"; }

inline Task parse_task(const std::string& s) {
  if (s == "arousal") return Task::arousal;
  if (s == "valence") return Task::valence;
  throw ConfigError("unknown task '" + s + "' (expected arousal or valence)");
}

enum class LabelClass { low = 0, high = 1, discard = 2 };

// Ratings are continuous on [1, 9]; only exactly 5 is ambiguous.
inline LabelClass map_label(double score) {
  if (!std::isfinite(score) || score < 1.0 || score > 9.0) {
    throw InvalidArgument("map_label: rating " + std::to_string(score) + " outside [1, 9]");
  }
  if (score < 5.0) return LabelClass::low;
  if (score > 5.0) return LabelClass::high;
  return LabelClass::discard;
}

inline double task_rating(const RawTrial& t, Task task) {
  return task == Task::arousal ? t.arousal : t.valence;
}

struct LabeledSample {
  std::vector<TopoFrame> frames;  // kSubSegments frames in temporal order
  int label = 0;                  // 0 low, 1 high
  int subject_id = 0;
  int trial_id = 0;
  int window = 0;
  Task task = Task::arousal;
};

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct Fold {
  int test_subject = 0;
  std::vector<int> train_subjects;
};

struct SplitPlan {
  std::vector<Fold> folds;

  // FNV-1a over the fold assignment; equal hashes mean identical splits.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&](std::int64_t v) {
      for (int i = 0; i < 8; ++i) {
        h ^= static_cast<std::uint64_t>(v >> (8 * i)) & 0xFFu;
        h *= 1099511628211ull;
      }
    };
    for (const auto& f : folds) {
      mix(f.test_subject);
      mix(static_cast<std::int64_t>(f.train_subjects.size()));
      for (int s : f.train_subjects) mix(s);
    }
    return h;
  }
};

// One fold per subject, in the given order; train = every other subject.
inline SplitPlan loocv_split(std::span<const int> subjects) {
  if (subjects.size() < 2) throw InvalidArgument("loocv_split: need at least 2 subjects");
  const std::set<int> unique(subjects.begin(), subjects.end());
  if (unique.size() != subjects.size()) throw InvalidArgument("loocv_split: duplicate subject ids");
  SplitPlan plan;
  for (int test : subjects) {
    Fold f{test, {}};
    for (int s : subjects)
      if (s != test) f.train_subjects.push_back(s);
    plan.folds.push_back(std::move(f));
  }
  return plan;
}

// Subjects in order of first appearance.
inline std::vector<int> subjects_of(std::span<const LabeledSample> samples) {
  std::vector<int> out;
  std::set<int> seen;
  for (const auto& s : samples)
    if (seen.insert(s.subject_id).second) out.push_back(s.subject_id);
  return out;
}

struct FoldIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Sample indices of a fold. Throws if any train sample belongs to the test
// subject, which would be subject leakage.
inline FoldIndices fold_indices(std::span<const LabeledSample> samples, const Fold& fold) {
  const std::set<int> train(fold.train_subjects.begin(), fold.train_subjects.end());
  if (train.count(fold.test_subject)) {
    throw ContractViolation("fold: test subject " + std::to_string(fold.test_subject) +
                            " is also a training subject");
  }
  FoldIndices out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].subject_id == fold.test_subject) {
      out.test.push_back(i);
    } else if (train.count(samples[i].subject_id)) {
      out.train.push_back(i);
    }
  }
  for (std::size_t i : out.train) {
    if (samples[i].subject_id == fold.test_subject) throw ContractViolation("fold: subject leakage");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator
// ---------------------------------------------------------------------------

enum class Region { frontal = 0, central = 1, posterior = 2 };
inline constexpr int kRegions = 3;

// Fp/AF/F/FC are frontal, P/PO/O posterior, C/T/CP central.
inline Region electrode_region(std::string_view name) {
  if (name.starts_with("Fp") || name.starts_with("AF") || name.starts_with("F")) return Region::frontal;
  if (name.starts_with("P") || name.starts_with("O")) return Region::posterior;
  return Region::central;
}

using BandProfile = std::array<std::array<double, kBandCount>, kRegions>;  // [region][band]

struct SynthSpec {
  int n_subjects = 4;
  int trials_per_subject = 10;
  double fs = kTargetFs;
  double duration_s = 63.0;
  double noise_level = 0.5;       // white-noise standard deviation
  double subject_gain_sd = 0.2;   // log-normal per-subject, per-band gain spread
  double high_fraction = 0.5;     // share of class-high trials per subject
  int components_per_band = 3;
  std::uint64_t seed = 1;
  // Oscillation amplitude per class (0 low, 1 high), region and band. High
  // trials carry elevated frontal beta/gamma, low trials elevated posterior alpha.
  std::array<BandProfile, 2> amplitude = default_profiles();

  static std::array<BandProfile, 2> default_profiles() {
    const std::array<double, kBandCount> base{2.0, 1.5, 1.5, 1.0, 0.6};
    std::array<BandProfile, 2> p{};
    for (auto& cls : p)
      for (auto& region : cls) region = base;
    p[0][static_cast<int>(Region::posterior)][2] *= 3.0;
    p[1][static_cast<int>(Region::frontal)][3] *= 3.0;
    p[1][static_cast<int>(Region::frontal)][4] *= 3.0;
    return p;
  }

  void validate() const {
    if (n_subjects < 1 || trials_per_subject < 1) throw ConfigError("synth: need >= 1 subject and trial");
    if (!(fs >= 2.0 * kBands.back().hi + 2.0)) throw ConfigError("synth: fs too low for the gamma band");
    if (!(duration_s > 0.0)) throw ConfigError("synth: duration must be positive");
    if (!(noise_level >= 0.0) || !(subject_gain_sd >= 0.0)) throw ConfigError("synth: negative spread");
    if (!(high_fraction >= 0.0 && high_fraction <= 1.0)) throw ConfigError("synth: high_fraction outside [0,1]");
    if (components_per_band < 1) throw ConfigError("synth: components_per_band must be >= 1");
    for (const auto& cls : amplitude)
      for (const auto& region : cls)
        for (double a : region)
          if (!(a >= 0.0)) throw ConfigError("synth: amplitudes must be non-negative");
  }
};

inline constexpr double kHighRating = 8.0;
inline constexpr double kLowRating = 2.0;

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace detail

// Deterministic stream seed for a (seed, a, b) coordinate.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  return detail::splitmix64(detail::splitmix64(detail::splitmix64(seed) ^ a) ^ b);
}

// Integer frequencies strictly inside [lo, hi) with a 1 Hz margin, so a 1 s
// Hann-windowed periodogram keeps each component's main lobe in its band.
inline std::vector<int> band_frequencies(const BandSpec& b) {
  std::vector<int> f;
  for (int v = static_cast<int>(std::ceil(b.lo)) + 1; v <= static_cast<int>(std::floor(b.hi)) - 1; ++v) f.push_back(v);
  if (f.empty()) f.push_back(static_cast<int>(std::lround((b.lo + b.hi) / 2.0)));
  return f;
}

inline RawTrial synth_trial(const SynthSpec& spec, int subject, int trial, bool high,
                            const std::array<double, kBandCount>& subject_gain) {
  std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(subject) + 1,
                                  static_cast<std::uint64_t>(trial) + 1));
  RawTrial t;
  t.subject_id = subject;
  t.trial_id = trial;
  t.fs = spec.fs;
  t.n_samples = std::llround(spec.duration_s * spec.fs);
  t.samples.assign(static_cast<std::size_t>(kChannels * t.n_samples), 0.0f);
  t.arousal = t.valence = high ? kHighRating : kLowRating;
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> x(static_cast<std::size_t>(t.n_samples));
  for (int c = 0; c < kChannels; ++c) {
    const int region = static_cast<int>(electrode_region(kDeapChannels[c]));
    std::fill(x.begin(), x.end(), 0.0);
    for (int b = 0; b < kBandCount; ++b) {
      const auto freqs = band_frequencies(kBands[b]);
      std::uniform_int_distribution<std::size_t> pick(0, freqs.size() - 1);
      const double amp = spec.amplitude[high ? 1 : 0][region][b] * subject_gain[b] /
                         std::sqrt(static_cast<double>(spec.components_per_band));
      for (int k = 0; k < spec.components_per_band; ++k) {
        const double w = 2.0 * std::numbers::pi * freqs[pick(rng)] / spec.fs;
        const double ph = phase(rng);
        if (amp == 0.0) continue;
        for (std::int64_t i = 0; i < t.n_samples; ++i) x[i] += amp * std::sin(w * static_cast<double>(i) + ph);
      }
    }
    auto dst = t.channel(c);
    for (std::int64_t i = 0; i < t.n_samples; ++i) {
      const double n = spec.noise_level > 0.0 ? spec.noise_level * noise(rng) : 0.0;
      dst[i] = static_cast<float>(x[i] + n);
    }
  }
  return t;
}

// Trials ordered by subject then trial id. Each subject gets its own band gains
// and a seeded class assignment with round(high_fraction * trials) high trials.
inline std::vector<RawTrial> synth_generate(const SynthSpec& spec) {
  spec.validate();
  std::vector<RawTrial> out;
  for (int s = 1; s <= spec.n_subjects; ++s) {
    std::mt19937_64 rng(derive_seed(spec.seed, static_cast<std::uint64_t>(s) + 1, 0));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::array<double, kBandCount> gain{};
    for (auto& g : gain) g = std::exp(spec.subject_gain_sd * gauss(rng));
    const auto n_high = static_cast<int>(std::lround(spec.high_fraction * spec.trials_per_subject));
    std::vector<bool> high(static_cast<std::size_t>(spec.trials_per_subject), false);
    for (int i = 0; i < n_high; ++i) high[static_cast<std::size_t>(i)] = true;
    std::shuffle(high.begin(), high.end(), rng);
    for (int t = 0; t < spec.trials_per_subject; ++t) {
      out.push_back(synth_trial(spec, s, t + 1, high[static_cast<std::size_t>(t)], gain));
    }
  }
  return out;
}

inline ordered_json to_json(const SynthSpec& s) {
  ordered_json j;
  j["n_subjects"] = s.n_subjects;
  j["trials_per_subject"] = s.trials_per_subject;
  j["fs"] = s.fs;
  j["duration_s"] = s.duration_s;
  j["noise_level"] = s.noise_level;
  j["subject_gain_sd"] = s.subject_gain_sd;
  j["high_fraction"] = s.high_fraction;
  j["components_per_band"] = s.components_per_band;
  j["seed"] = s.seed;
  j["amplitude"] = s.amplitude;
  return j;
}

inline SynthSpec synth_spec_from_json(const json& j) {
  SynthSpec s;
  try {
    s.n_subjects = j.value("n_subjects", s.n_subjects);
    s.trials_per_subject = j.value("trials_per_subject", s.trials_per_subject);
    s.fs = j.value("fs", s.fs);
    s.duration_s = j.value("duration_s", s.duration_s);
    s.noise_level = j.value("noise_level", s.noise_level);
    s.subject_gain_sd = j.value("subject_gain_sd", s.subject_gain_sd);
    s.high_fraction = j.value("high_fraction", s.high_fraction);
    s.components_per_band = j.value("components_per_band", s.components_per_band);
    s.seed = j.value("seed", s.seed);
    if (j.contains("amplitude")) s.amplitude = j.at("amplitude").get<std::array<BandProfile, 2>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Dataset assembly
// ---------------------------------------------------------------------------

// Frames of one 6 s window: band power of each 1 s block mapped to a topomap.
inline std::vector<TopoFrame> window_frames(const Segment& window, const TopoMapper& mapper) {
  std::vector<TopoFrame> frames;
  for (const auto& sub : subsegment(window)) frames.push_back(mapper.assemble(band_psd(sub)));
  return frames;
}

// Samples of preprocessed trials; trials rated exactly 5 contribute nothing.
inline std::vector<LabeledSample> build_dataset(std::span<const RawTrial> trials, Task task,
                                                const TopoMapper& mapper = TopoMapper()) {
  std::vector<LabeledSample> out;
  for (const auto& trial : trials) {
    const LabelClass cls = map_label(task_rating(trial, task));
    if (cls == LabelClass::discard) continue;
    const auto windows = segment(trial);
    for (std::size_t w = 0; w < windows.size(); ++w) {
      LabeledSample s;
      s.frames = window_frames(windows[w], mapper);
      s.label = static_cast<int>(cls);
      s.subject_id = trial.subject_id;
      s.trial_id = trial.trial_id;
      s.window = static_cast<int>(w);
      s.task = task;
      out.push_back(std::move(s));
    }
  }
  return out;
}

// Stacks samples into frames [B, 6, 32, 32, 5] and one-hot targets [B, 2].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(std::span<const LabeledSample> samples,
                                           std::span<const std::size_t> indices) {
  if (indices.empty()) throw InvalidArgument("make_batch: empty batch");
  const auto b = static_cast<std::int64_t>(indices.size());
  Tensor<T> x(Shape{b, kSubSegments, kFrameSize, kFrameSize, kBandCount});
  Tensor<T> y(Shape{b, 2});
  T* px = x.ptr();
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& s = samples[indices[static_cast<std::size_t>(i)]];
    if (static_cast<int>(s.frames.size()) != kSubSegments) {
      throw InvalidShape("make_batch: sample must hold exactly 6 frames");
    }
    for (const auto& f : s.frames) px = std::copy(f.pixels.begin(), f.pixels.end(), px);
    y[static_cast<std::size_t>(i * 2 + s.label)] = T(1);
  }
  return {x, y};
}

// ---------------------------------------------------------------------------
// Dataset on disk
// ---------------------------------------------------------------------------

inline ordered_json split_plan_json(const SplitPlan& plan) {
  ordered_json folds = ordered_json::array();
  for (const auto& f : plan.folds) folds.push_back({{"test", f.test_subject}, {"train", f.train_subjects}});
  return folds;
}

// Writes <dir>/frames.bin (frame cache), <dir>/labels.json (label index: sample
// i owns frames 6i..6i+5) and <dir>/manifest.json.
inline void write_dataset(const std::filesystem::path& dir, std::span<const LabeledSample> samples, Task task,
                          const std::vector<std::string>& trial_files) {
  std::vector<TopoFrame> frames;
  ordered_json labels = ordered_json::array();
  for (const auto& s : samples) {
    frames.insert(frames.end(), s.frames.begin(), s.frames.end());
    labels.push_back({{"subject_id", s.subject_id}, {"trial_id", s.trial_id}, {"window", s.window}, {"label", s.label}});
  }
  write_frames(dir / "frames.bin", frames);
  write_json(dir / "labels.json", labels);
  ordered_json m;
  m["task"] = task_name(task);
  m["label_map"] = {{"low", "rating < 5"}, {"high", "rating > 5"}, {"discard", "rating == 5"}};
  m["frames_per_sample"] = kSubSegments;
  m["n_samples"] = samples.size();
  m["frame_cache"] = "frames.bin";
  m["label_index"] = "labels.json";
  m["trials"] = trial_files;
  const auto subjects = subjects_of(samples);
  m["split_plan"] = subjects.size() >= 2 ? split_plan_json(loocv_split(subjects)) : ordered_json::array();
  write_json(dir / "manifest.json", m);
}

inline std::vector<LabeledSample> read_dataset(const std::filesystem::path& dir) {
  const json m = read_json(dir / "manifest.json");
  const std::string what = "manifest " + (dir / "manifest.json").string();
  const Task task = parse_task(detail::header_field<std::string>(m, "task", what));
  const auto frames = read_frames(dir / detail::header_field<std::string>(m, "frame_cache", what));
  const json labels = read_json(dir / detail::header_field<std::string>(m, "label_index", what));
  if (!labels.is_array() || frames.size() != labels.size() * kSubSegments) {
    throw IoError(what + ": frame cache and label index disagree");
  }
  std::vector<LabeledSample> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    LabeledSample s;
    s.subject_id = detail::header_field<int>(labels[i], "subject_id", what);
    s.trial_id = detail::header_field<int>(labels[i], "trial_id", what);
    s.window = detail::header_field<int>(labels[i], "window", what);
    s.label = detail::header_field<int>(labels[i], "label", what);
    if (s.label != 0 && s.label != 1) throw IoError(what + ": label must be 0 or 1");
    s.task = task;
    s.frames.assign(frames.begin() + static_cast<std::ptrdiff_t>(i * kSubSegments),
                    frames.begin() + static_cast<std::ptrdiff_t>((i + 1) * kSubSegments));
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace stiln
