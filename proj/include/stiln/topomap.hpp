#pragma once

// Power topographic maps: electrode projection onto the head disk, biharmonic
// spline interpolation and zero-padded 32x32x5 frame assembly.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "stiln/error.hpp"
#include "stiln/signal.hpp"

namespace stiln {

inline constexpr int kFrameSize = 32;
inline constexpr int kGridSize = 28;
inline constexpr int kFramePad = (kFrameSize - kGridSize) / 2;
inline constexpr std::int64_t kFrameValues = kFrameSize * kFrameSize * kBandCount;
inline constexpr double kRidge = 1e-8;
inline constexpr double kPolarScaleDeg = 100.0;  // disk radius 1 <=> 100 degrees from Cz

// DEAP channel order.
inline constexpr std::array<std::string_view, kChannels> kDeapChannels{
    "Fp1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7", "CP5", "CP1", "P3",
    "P7",  "PO3", "O1", "Oz", "Pz",  "Fp2", "AF4", "Fz", "F4", "F8",  "FC6",
    "FC2", "Cz",  "C4", "T8", "CP6", "CP2", "P4", "P8", "PO4", "O2"};

// Spherical position in the BESA convention: theta is the signed polar angle
// from Cz (negative on the left hemisphere), phi the azimuth, both in degrees.
struct SphericalAngle {
  std::string_view name;
  double theta;
  double phi;
};

// Idealized 10-20 positions of the DEAP montage, in DEAP channel order.
inline constexpr std::array<SphericalAngle, kChannels> kDeapAngles{{
    {"Fp1", -92, -72}, {"AF3", -74, -65}, {"F3", -60, -51},  {"F7", -92, -36},
    {"FC5", -72, -21}, {"FC1", -32, -45}, {"C3", -46, 0},    {"T7", -92, 0},
    {"CP5", -72, 21},  {"CP1", -32, 45},  {"P3", -60, 51},   {"P7", -92, 36},
    {"PO3", -74, 65},  {"O1", -92, 72},   {"Oz", 92, -90},   {"Pz", 46, -90},
    {"Fp2", 92, 72},   {"AF4", 74, 65},   {"Fz", 46, 90},    {"F4", 60, 51},
    {"F8", 92, 36},    {"FC6", 72, 21},   {"FC2", 32, 45},   {"Cz", 0, 0},
    {"C4", 46, 0},     {"T8", 92, 0},     {"CP6", 72, -21},  {"CP2", 32, -45},
    {"P4", 60, -51},   {"P8", 92, -36},   {"PO4", 74, -65},  {"O2", 92, -72},
}};

struct Electrode {
  std::string name;
  double x;  // towards the right ear
  double y;  // towards the nose
};

struct ElectrodeLayout {
  std::vector<Electrode> entries;

  std::size_t size() const { return entries.size(); }
  std::vector<std::array<double, 2>> points() const {
    std::vector<std::array<double, 2>> p;
    for (const auto& e : entries) p.push_back({e.x, e.y});
    return p;
  }
  int index_of(std::string_view name) const {
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name == name) return static_cast<int>(i);
    return -1;
  }
};

// Azimuthal equidistant projection centred on Cz: disk radius is proportional
// to the polar angle and the azimuth is preserved.
inline ElectrodeLayout project_layout(std::span<const SphericalAngle> angles) {
  ElectrodeLayout layout;
  for (const auto& a : angles) {
    if (!std::isfinite(a.theta) || !std::isfinite(a.phi) || std::abs(a.theta) > 180.0) {
      throw LayoutError("project_layout: invalid angles for " + std::string(a.name));
    }
    const double r = a.theta / kPolarScaleDeg;
    const double phi = a.phi * std::numbers::pi / 180.0;
    layout.entries.push_back({std::string(a.name), r * std::cos(phi), r * std::sin(phi)});
  }
  for (std::size_t i = 0; i < layout.entries.size(); ++i) {
    for (std::size_t j = i + 1; j < layout.entries.size(); ++j) {
      const auto& a = layout.entries[i];
      const auto& b = layout.entries[j];
      if (a.name == b.name) throw LayoutError("project_layout: duplicate name " + a.name);
      if (std::hypot(a.x - b.x, a.y - b.y) < 1e-9) {
        throw LayoutError("project_layout: " + a.name + " and " + b.name + " coincide");
      }
    }
  }
  return layout;
}

inline const ElectrodeLayout& deap_layout() {
  static const ElectrodeLayout layout = project_layout(kDeapAngles);
  return layout;
}

// 2-D biharmonic Green's function r^2 (ln r - 1), continuous extension g(0) = 0.
inline double biharmonic_green(double r) {
  if (r <= 0.0) return 0.0;
  return r * r * (std::log(r) - 1.0);
}

struct BiharmonicModel {
  std::vector<std::array<double, 2>> centers;
  std::vector<double> weights;
  double rcond = 0.0;

  double operator()(double x, double y) const {
    double acc = 0.0;
    for (std::size_t j = 0; j < centers.size(); ++j) {
      acc += weights[j] * biharmonic_green(std::hypot(x - centers[j][0], y - centers[j][1]));
    }
    return acc;
  }
};

namespace detail {

inline Eigen::MatrixXd green_matrix(std::span<const std::array<double, 2>> points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      g(i, j) = biharmonic_green(std::hypot(points[i][0] - points[j][0], points[i][1] - points[j][1]));
  g.diagonal().array() += kRidge;
  return g;
}

inline void check_points(std::span<const std::array<double, 2>> points) {
  if (points.size() < 2) throw InvalidArgument("biharmonic_fit: need at least 2 points");
  for (std::size_t i = 0; i < points.size(); ++i)
    for (std::size_t j = i + 1; j < points.size(); ++j)
      if (points[i] == points[j]) throw InvalidArgument("biharmonic_fit: duplicate points");
}

inline constexpr double kMinRcond = 1e-15;

}  // namespace detail

// Solves G w = d with G_ij = g(|p_i - p_j|) plus a 1e-8 ridge, in double.
inline BiharmonicModel biharmonic_fit(std::span<const std::array<double, 2>> points,
                                      std::span<const double> values) {
  detail::check_points(points);
  if (values.size() != points.size()) throw InvalidShape("biharmonic_fit: values/points mismatch");
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(detail::green_matrix(points));
  BiharmonicModel model;
  model.rcond = lu.rcond();
  const Eigen::VectorXd w =
      lu.solve(Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size())));
  if (!(model.rcond > detail::kMinRcond) || !w.allFinite()) {
    throw NumericError("biharmonic_fit: singular system (rcond = " + std::to_string(model.rcond) + ")");
  }
  model.centers.assign(points.begin(), points.end());
  model.weights.assign(w.data(), w.data() + w.size());
  return model;
}

// Grid coordinate i of n evenly spaced points on [-1, 1], endpoints included.
inline double grid_coord(int i, int n = kGridSize) { return -1.0 + 2.0 * i / (n - 1); }

// Evaluates on the n x n grid over [-1,1]^2, row-major with row 0 at y = +1
// (front) and column 0 at x = -1 (left). Points outside the unit disk are 0.
inline std::vector<double> biharmonic_eval(const BiharmonicModel& model, int n = kGridSize) {
  std::vector<double> out(static_cast<std::size_t>(n * n), 0.0);
  for (int r = 0; r < n; ++r) {
    const double y = -grid_coord(r, n);
    for (int c = 0; c < n; ++c) {
      const double x = grid_coord(c, n);
      if (x * x + y * y > 1.0) continue;
      out[static_cast<std::size_t>(r * n + c)] = model(x, y);
    }
  }
  return out;
}

struct TopoOptions {
  bool log_power = false;  // apply log10(1 + x) to band powers first
};

// 32x32x5 frame, HWC order.
struct TopoFrame {
  std::vector<float> pixels = std::vector<float>(static_cast<std::size_t>(kFrameValues), 0.0f);

  float at(int row, int col, int band) const {
    return pixels[static_cast<std::size_t>((row * kFrameSize + col) * kBandCount + band)];
  }
};

// Caches the factorized Green's matrix of a layout and the grid evaluation
// matrix so frames can be assembled per sub-segment cheaply. Equivalent to a
// biharmonic_fit + biharmonic_eval per band.
class TopoMapper {
 public:
  explicit TopoMapper(const ElectrodeLayout& layout = deap_layout(), TopoOptions opt = {})
      : opt_(opt) {
    const auto pts = layout.points();
    detail::check_points(pts);
    lu_.compute(detail::green_matrix(pts));
    if (!(lu_.rcond() > detail::kMinRcond)) {
      throw NumericError("TopoMapper: singular layout (rcond = " + std::to_string(lu_.rcond()) + ")");
    }
    eval_.setZero(kGridSize * kGridSize, static_cast<Eigen::Index>(pts.size()));
    for (int r = 0; r < kGridSize; ++r) {
      const double y = -grid_coord(r);
      for (int c = 0; c < kGridSize; ++c) {
        const double x = grid_coord(c);
        if (x * x + y * y > 1.0) continue;
        for (std::size_t j = 0; j < pts.size(); ++j) {
          eval_(r * kGridSize + c, static_cast<Eigen::Index>(j)) =
              biharmonic_green(std::hypot(x - pts[j][0], y - pts[j][1]));
        }
      }
    }
  }

  TopoFrame assemble(const BandFeature& feature) const {
    TopoFrame frame;
    Eigen::VectorXd d(kChannels);
    for (int b = 0; b < kBandCount; ++b) {
      for (int e = 0; e < kChannels; ++e) {
        const double v = feature.at(e, b);
        if (!std::isfinite(v)) throw InvalidArgument("assemble_frame: non-finite band power");
        d(e) = opt_.log_power ? std::log10(1.0 + v) : v;
      }
      const Eigen::VectorXd grid = eval_ * lu_.solve(d);
      for (int r = 0; r < kGridSize; ++r)
        for (int c = 0; c < kGridSize; ++c)
          frame.pixels[static_cast<std::size_t>(((r + kFramePad) * kFrameSize + c + kFramePad) * kBandCount + b)] =
              static_cast<float>(grid(r * kGridSize + c));
    }
    return frame;
  }

 private:
  TopoOptions opt_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  Eigen::MatrixXd eval_;
};

inline TopoFrame assemble_frame(const BandFeature& feature, const ElectrodeLayout& layout,
                                TopoOptions opt = {}) {
  if (layout.size() != kChannels) throw LayoutError("assemble_frame: layout must have 32 electrodes");
  return TopoMapper(layout, opt).assemble(feature);
}

}  // namespace stiln
