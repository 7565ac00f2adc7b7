#pragma once

// On-disk formats. Every binary file is a single line of compact JSON header,
// a '\n', then little-endian 32-bit floats:
//   trial file   header {subject_id, trial_id, fs, n_channels, n_samples,
//                        arousal, valence, channel_names}, samples [32 x n]
//   frame cache  header {n_frames, height, width, bands}, frames in HWC order

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "stiln/error.hpp"
#include "stiln/signal.hpp"
#include "stiln/topomap.hpp"

namespace stiln {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace detail {

inline void put_f32le(std::vector<char>& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

inline float get_f32le(const char* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(bits);
}

inline std::vector<char> encode_f32le(std::span<const float> values) {
  std::vector<char> out;
  out.reserve(values.size() * 4);
  for (float v : values) put_f32le(out, v);
  return out;
}

inline std::vector<float> decode_f32le(const char* p, std::size_t count) {
  std::vector<float> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = get_f32le(p + 4 * i);
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

// Writes to a sibling temporary and renames, so readers never see a partial file.
inline void write_file(const std::filesystem::path& path, std::string_view head,
                       std::span<const char> body = {}) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
    if (!out) throw IoError("write failed: " + path.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, text);
}

// Splits "<json>\n<payload>" into the parsed header and the raw payload.
inline std::pair<json, std::string_view> split_header(const std::string& bytes,
                                                      const std::string& what) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw IoError(what + ": missing header line");
  json head;
  try {
    head = json::parse(bytes.substr(0, nl));
  } catch (const json::exception& e) {
    throw IoError(what + ": bad header: " + e.what());
  }
  return {head, std::string_view(bytes).substr(nl + 1)};
}

template <typename V>
V header_field(const json& head, const char* key, const std::string& what) {
  if (!head.contains(key)) throw IoError(what + ": header lacks '" + key + "'");
  try {
    return head.at(key).get<V>();
  } catch (const json::exception&) {
    throw IoError(what + ": header field '" + key + "' has the wrong type");
  }
}

}  // namespace detail

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(detail::read_file(path));
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const ordered_json& j) {
  detail::write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Trial files
// ---------------------------------------------------------------------------

inline void write_trial(const std::filesystem::path& path, const RawTrial& trial) {
  trial.validate();
  ordered_json head;
  head["subject_id"] = trial.subject_id;
  head["trial_id"] = trial.trial_id;
  head["fs"] = trial.fs;
  head["n_channels"] = kChannels;
  head["n_samples"] = trial.n_samples;
  head["arousal"] = trial.arousal;
  head["valence"] = trial.valence;
  head["channel_names"] = std::vector<std::string>(kDeapChannels.begin(), kDeapChannels.end());
  const auto body = detail::encode_f32le(trial.samples);
  detail::write_file(path, head.dump() + "\n", body);
}

inline RawTrial read_trial(const std::filesystem::path& path) {
  const std::string what = "trial " + path.string();
  const std::string bytes = detail::read_file(path);
  const auto [head, payload] = detail::split_header(bytes, what);
  RawTrial t;
  t.subject_id = detail::header_field<int>(head, "subject_id", what);
  t.trial_id = detail::header_field<int>(head, "trial_id", what);
  t.fs = detail::header_field<double>(head, "fs", what);
  t.n_samples = detail::header_field<std::int64_t>(head, "n_samples", what);
  t.arousal = detail::header_field<double>(head, "arousal", what);
  t.valence = detail::header_field<double>(head, "valence", what);
  if (detail::header_field<int>(head, "n_channels", what) != kChannels) {
    throw IoError(what + ": expected 32 channels");
  }
  const auto names = detail::header_field<std::vector<std::string>>(head, "channel_names", what);
  if (names.size() != kDeapChannels.size() ||
      !std::equal(names.begin(), names.end(), kDeapChannels.begin())) {
    throw IoError(what + ": channel order differs from the DEAP order");
  }
  if (t.n_samples < 0) throw IoError(what + ": negative sample count");
  const auto count = static_cast<std::size_t>(kChannels * t.n_samples);
  if (payload.size() != 4 * count) {
    throw IoError(what + ": payload holds " + std::to_string(payload.size()) + " bytes, expected " +
                  std::to_string(4 * count));
  }
  t.samples = detail::decode_f32le(payload.data(), count);
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Frame cache
// ---------------------------------------------------------------------------

inline void write_frames(const std::filesystem::path& path, std::span<const TopoFrame> frames) {
  ordered_json head;
  head["n_frames"] = frames.size();
  head["height"] = kFrameSize;
  head["width"] = kFrameSize;
  head["bands"] = kBandCount;
  std::vector<char> body;
  body.reserve(frames.size() * static_cast<std::size_t>(kFrameValues) * 4);
  for (const auto& f : frames)
    for (float v : f.pixels) detail::put_f32le(body, v);
  detail::write_file(path, head.dump() + "\n", body);
}

inline std::vector<TopoFrame> read_frames(const std::filesystem::path& path) {
  const std::string what = "frame cache " + path.string();
  const std::string bytes = detail::read_file(path);
  const auto [head, payload] = detail::split_header(bytes, what);
  const auto n = detail::header_field<std::size_t>(head, "n_frames", what);
  if (detail::header_field<int>(head, "height", what) != kFrameSize ||
      detail::header_field<int>(head, "width", what) != kFrameSize ||
      detail::header_field<int>(head, "bands", what) != kBandCount) {
    throw IoError(what + ": frames must be 32x32x5");
  }
  const auto per = static_cast<std::size_t>(kFrameValues);
  if (payload.size() != 4 * per * n) throw IoError(what + ": truncated payload");
  std::vector<TopoFrame> frames(n);
  for (std::size_t i = 0; i < n; ++i) frames[i].pixels = detail::decode_f32le(payload.data() + 4 * per * i, per);
  return frames;
}

}  // namespace stiln
