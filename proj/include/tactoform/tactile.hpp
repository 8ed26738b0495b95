#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "tactoform/error.hpp"
#include "tactoform/frames.hpp"
#include "tactoform/poisson.hpp"

namespace tactoform {

/// Simulated GelSight geometry. Pixels are nominally square; the nominal
/// 19 x 14 mm pad at 4:3 resolution is off by under 2%, so the two pitches
/// are kept separately and checked against that tolerance.
struct SensorSpec {
  double contact_width = 19.0;   // mm, along u
  double contact_height = 14.0;  // mm, along v
  int res_u = 160;
  int res_v = 120;
  int footprint = 5;  // k, voxels per side of the touch region

  double pitch_u() const { return contact_width / res_u; }
  double pitch_v() const { return contact_height / res_v; }

  void validate() const {
    if (res_u < 3 || res_v < 3 || !(contact_width > 0.0) || !(contact_height > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "sensor needs positive size and >= 3 pixels per side");
    }
    if (footprint < 1) throw Error(ErrorCode::InvalidArgument, "sensor footprint k must be >= 1");
    if (std::fabs(pitch_u() / pitch_v() - 1.0) > 0.02) {
      throw Error(ErrorCode::InvalidArgument, "sensor pixels are not square");
    }
  }

  /// Sensor-plane coordinates (mm) of a pixel center, origin at the pad center.
  double u_of(int col) const { return (col - 0.5 * (res_u - 1)) * pitch_u(); }
  double v_of(int row) const { return (row - 0.5 * (res_v - 1)) * pitch_v(); }
};

struct Gradients {
  Field gx;
  Field gy;
};

using Intensity = std::array<Field, 3>;

/// Largest slope the pad resolves; steeper gradients are scaled down to it.
inline constexpr double kMaxSlope = 2.5;

inline void clamp_slope(double& gx, double& gy) {
  const double m = std::hypot(gx, gy);
  if (m > kMaxSlope) {
    gx *= kMaxSlope / m;
    gy *= kMaxSlope / m;
  }
}

/// Tri-color photometric forward model: three lights 120 degrees apart in
/// azimuth at 45 degrees elevation, channel = clamp(0.2 + 0.8 max(0, n.L)).
struct ReflectanceModel {
  static constexpr const char* kId = "tri-light-45deg-v1";

  static const std::array<Vec3, 3>& lights() {
    static const std::array<Vec3, 3> l = [] {
      std::array<Vec3, 3> out;
      const double el = std::numbers::pi / 4.0;
      for (int c = 0; c < 3; ++c) {
        const double az = 2.0 * std::numbers::pi * c / 3.0;
        out[c] = Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      }
      return out;
    }();
    return l;
  }

  static std::array<double, 3> shade(double gx, double gy) {
    clamp_slope(gx, gy);
    const Vec3 n = Vec3(-gx, -gy, 1.0).normalized();
    std::array<double, 3> out{};
    for (int c = 0; c < 3; ++c) {
      out[c] = std::clamp(0.2 + 0.8 * std::max(0.0, n.dot(lights()[c])), 0.0, 1.0);
    }
    return out;
  }
};

/// Forward model applied pixel-wise to a gradient field.
inline Intensity render_gradients(const Field& gx, const Field& gy) {
  Intensity img;
  for (auto& ch : img) ch.resize(gx.rows(), gx.cols());
  for (Eigen::Index i = 0; i < gx.rows(); ++i) {
    for (Eigen::Index j = 0; j < gx.cols(); ++j) {
      const auto rgb = ReflectanceModel::shade(gx(i, j), gy(i, j));
      for (int c = 0; c < 3; ++c) img[c](i, j) = rgb[c];
    }
  }
  return img;
}

/// Central differences in the interior, one-sided at the border.
inline Gradients finite_gradients(const Field& height, double pitch_x, double pitch_y) {
  const Eigen::Index rows = height.rows(), cols = height.cols();
  Gradients g{Field::Zero(rows, cols), Field::Zero(rows, cols)};
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (cols > 1) {
        const Eigen::Index a = std::max<Eigen::Index>(j - 1, 0), b = std::min(j + 1, cols - 1);
        g.gx(i, j) = (height(i, b) - height(i, a)) / ((b - a) * pitch_x);
      }
      if (rows > 1) {
        const Eigen::Index a = std::max<Eigen::Index>(i - 1, 0), b = std::min(i + 1, rows - 1);
        g.gy(i, j) = (height(b, j) - height(a, j)) / ((b - a) * pitch_y);
      }
    }
  }
  return g;
}

/// Tactile image of a height patch sampled at sensor resolution.
inline Intensity render_tactile(const Field& height, double pitch_x, double pitch_y) {
  const Gradients g = finite_gradients(height, pitch_x, pitch_y);
  return render_gradients(g.gx, g.gy);
}

inline Intensity render_tactile(const Field& height, const SensorSpec& spec) {
  return render_tactile(height, spec.pitch_u(), spec.pitch_v());
}

/// A ball of `radius` pressed `depth` into the pad at (cx, cy), all mm.
struct SphereIndent {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 4.0;
  double depth = 1.0;

  double contact_radius() const { return std::sqrt(std::max(0.0, 2.0 * radius * depth - depth * depth)); }

  double height(double x, double y) const {
    const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
    const double a = contact_radius();
    if (r2 >= a * a) return 0.0;
    return std::sqrt(radius * radius - r2) - (radius - depth);
  }

  /// Analytic slope; zero outside the contact disc.
  std::array<double, 2> gradient(double x, double y) const {
    const double r2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
    const double a = contact_radius();
    if (r2 >= a * a) return {0.0, 0.0};
    const double s = std::sqrt(radius * radius - r2);
    return {-(x - cx) / s, -(y - cy) / s};
  }

  bool in_contact(double x, double y) const {
    const double a = contact_radius();
    return (x - cx) * (x - cx) + (y - cy) * (y - cy) < a * a;
  }

  Field height_field(const SensorSpec& spec) const {
    Field f(spec.res_v, spec.res_u);
    for (int i = 0; i < spec.res_v; ++i)
      for (int j = 0; j < spec.res_u; ++j) f(i, j) = height(spec.u_of(j), spec.v_of(i));
    return f;
  }

  Gradients gradient_field(const SensorSpec& spec) const {
    Gradients g{Field(spec.res_v, spec.res_u), Field(spec.res_v, spec.res_u)};
    for (int i = 0; i < spec.res_v; ++i) {
      for (int j = 0; j < spec.res_u; ++j) {
        const auto d = gradient(spec.u_of(j), spec.v_of(i));
        g.gx(i, j) = d[0];
        g.gy(i, j) = d[1];
      }
    }
    return g;
  }
};

/// Inverse reflectance table: quantized intensity triple -> mean gradient.
class ReflectanceLUT {
 public:
  struct Bin {
    double sum_gx = 0.0;
    double sum_gy = 0.0;
    std::uint64_t count = 0;
  };

  explicit ReflectanceLUT(int bins_per_channel = 32)
      : bins_(bins_per_channel),
        table_(static_cast<std::size_t>(bins_per_channel) * bins_per_channel * bins_per_channel) {
    if (bins_per_channel < 2) throw Error(ErrorCode::InvalidArgument, "need at least 2 bins per channel");
  }

  int bins_per_channel() const { return bins_; }
  std::string forward_model_id() const { return ReflectanceModel::kId; }
  const std::vector<Bin>& table() const { return table_; }

  int quantize(double intensity) const {
    return std::clamp(static_cast<int>(std::floor(intensity * bins_)), 0, bins_ - 1);
  }

  std::size_t key(double r, double g, double b) const {
    return (static_cast<std::size_t>(quantize(r)) * bins_ + quantize(g)) * bins_ + quantize(b);
  }

  void add_sample(const std::array<double, 3>& rgb, double gx, double gy) {
    Bin& bin = table_[key(rgb[0], rgb[1], rgb[2])];
    bin.sum_gx += gx;
    bin.sum_gy += gy;
    ++bin.count;
    fallback_.clear();
  }

  std::size_t occupied() const {
    return static_cast<std::size_t>(std::count_if(table_.begin(), table_.end(), [](const Bin& b) { return b.count > 0; }));
  }

  /// Resolves every empty bin to its nearest occupied bin (L2 over the bin
  /// triple, lowest index on ties). Called once after the last sample.
  void finalize() {
    std::vector<std::size_t> filled;
    for (std::size_t i = 0; i < table_.size(); ++i) {
      if (table_[i].count > 0) filled.push_back(i);
    }
    if (filled.empty()) throw Error(ErrorCode::InsufficientCalibration, "reflectance table is empty");
    fallback_.assign(table_.size(), 0);
    const auto triple = [this](std::size_t k) {
      return std::array<int, 3>{static_cast<int>(k / (bins_ * bins_)), static_cast<int>((k / bins_) % bins_),
                                static_cast<int>(k % bins_)};
    };
    for (std::size_t i = 0; i < table_.size(); ++i) {
      if (table_[i].count > 0) {
        fallback_[i] = static_cast<std::uint32_t>(i);
        continue;
      }
      const auto t = triple(i);
      long best = std::numeric_limits<long>::max();
      for (std::size_t f : filled) {
        const auto o = triple(f);
        const long d = (long)(t[0] - o[0]) * (t[0] - o[0]) + (long)(t[1] - o[1]) * (t[1] - o[1]) +
                       (long)(t[2] - o[2]) * (t[2] - o[2]);
        if (d < best) {
          best = d;
          fallback_[i] = static_cast<std::uint32_t>(f);
        }
      }
    }
  }

  std::array<double, 2> lookup(double r, double g, double b) const {
    if (fallback_.empty()) throw Error(ErrorCode::InsufficientCalibration, "reflectance table not calibrated");
    const Bin& bin = table_[fallback_[key(r, g, b)]];
    return {bin.sum_gx / static_cast<double>(bin.count), bin.sum_gy / static_cast<double>(bin.count)};
  }

  bool operator==(const ReflectanceLUT& o) const {
    if (bins_ != o.bins_ || table_.size() != o.table_.size()) return false;
    for (std::size_t i = 0; i < table_.size(); ++i) {
      if (table_[i].count != o.table_[i].count || table_[i].sum_gx != o.table_[i].sum_gx ||
          table_[i].sum_gy != o.table_[i].sum_gy) {
        return false;
      }
    }
    return true;
  }

 private:
  int bins_;
  std::vector<Bin> table_;
  std::vector<std::uint32_t> fallback_;
};

/// Presses a ball of known radius into the simulated pad `n_presses` times
/// at random offsets and depths, renders each press, and bins every pixel's
/// intensity against its analytic gradient. Presses are shaded from the
/// ball's exact slopes: finite differences across the contact rim would pair
/// rim intensities with slopes the surface never has.
inline ReflectanceLUT calibrate_lut(const SensorSpec& spec, double sphere_radius, int n_presses,
                                    std::uint64_t seed, int bins_per_channel = 32) {
  spec.validate();
  if (n_presses < 1) throw Error(ErrorCode::InsufficientCalibration, "calibration needs at least one press");
  if (!(sphere_radius > std::max(spec.pitch_u(), spec.pitch_v()))) {
    throw Error(ErrorCode::InvalidArgument, "calibration ball must be larger than a pixel");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  ReflectanceLUT lut(bins_per_channel);
  const double half_w = 0.5 * spec.contact_width, half_h = 0.5 * spec.contact_height;

  for (int press = 0; press < n_presses; ++press) {
    SphereIndent ball;
    ball.radius = sphere_radius;
    // Rim slopes stay near 1 at the deepest press, where one light channel
    // starts to saturate.
    ball.depth = sphere_radius * (0.05 + 0.25 * unit(rng));
    const double a = ball.contact_radius();
    const double room_u = std::max(0.0, half_w - a - 2.0 * spec.pitch_u());
    const double room_v = std::max(0.0, half_h - a - 2.0 * spec.pitch_v());
    ball.cx = (2.0 * unit(rng) - 1.0) * room_u;
    ball.cy = (2.0 * unit(rng) - 1.0) * room_v;

    const Gradients exact = ball.gradient_field(spec);
    const Intensity img = render_gradients(exact.gx, exact.gy);
    for (int i = 0; i < spec.res_v; ++i) {
      for (int j = 0; j < spec.res_u; ++j) {
        std::array<double, 2> g{exact.gx(i, j), exact.gy(i, j)};
        clamp_slope(g[0], g[1]);
        lut.add_sample({img[0](i, j), img[1](i, j), img[2](i, j)}, g[0], g[1]);
      }
    }
  }
  lut.finalize();
  return lut;
}

/// Per-pixel table lookup; empty bins resolve to the nearest occupied one.
inline Gradients invert_intensity(const ReflectanceLUT& lut, const Intensity& img) {
  const Eigen::Index rows = img[0].rows(), cols = img[0].cols();
  Gradients g{Field(rows, cols), Field(rows, cols)};
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      const auto d = lut.lookup(img[0](i, j), img[1](i, j), img[2](i, j));
      g.gx(i, j) = d[0];
      g.gy(i, j) = d[1];
    }
  }
  return g;
}

/// Sensor pose in the world: pad center, in-plane axes and the outward pad
/// normal (pointing from the pad into the touched object).
struct SensorPose {
  Vec3 origin = Vec3::Zero();
  Vec3 axis_u = Vec3::UnitX();
  Vec3 axis_v = Vec3::UnitY();
  Vec3 normal = Vec3::UnitZ();
};

struct TactileFrame {
  Intensity intensity;
  Gradients gradients;
  Field height;  // mm, indentation into the pad
  SensorPose pose;
};

/// Full sensing chain for one contact: image -> gradients -> heights.
inline TactileFrame reconstruct_frame(const ReflectanceLUT& lut, const Intensity& img, const SensorSpec& spec,
                                      const SensorPose& pose = {}) {
  TactileFrame frame;
  frame.intensity = img;
  frame.gradients = invert_intensity(lut, img);
  frame.height = integrate_heights(frame.gradients.gx, frame.gradients.gy, spec.pitch_u(), spec.pitch_v());
  frame.pose = pose;
  return frame;
}

// ---------------------------------------------------------------------------
// Netpbm output. Heights go to 16-bit PGM with a "# height_scale_mm <s>
// offset_mm <o>" header comment, so mm = offset + s * sample.

inline void write_height_pgm(const Field& height, const std::string& path) {
  const double lo = height.minCoeff(), hi = height.maxCoeff();
  const double scale = hi > lo ? (hi - lo) / 65535.0 : 1.0;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path);
  out << "P5\n# height_scale_mm " << std::setprecision(17) << scale << " offset_mm " << lo << "\n"
      << height.cols() << " " << height.rows() << "\n65535\n";
  for (Eigen::Index i = 0; i < height.rows(); ++i) {
    for (Eigen::Index j = 0; j < height.cols(); ++j) {
      const auto s = static_cast<std::uint16_t>(std::lround((height(i, j) - lo) / scale));
      out.put(static_cast<char>(s >> 8));
      out.put(static_cast<char>(s & 0xFF));
    }
  }
}

inline Field read_height_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::string magic;
  std::getline(in, magic);
  if (magic != "P5") throw Error(ErrorCode::BadMagic, "not a binary PGM");
  double scale = 1.0, offset = 0.0;
  std::string line;
  while (in.peek() == '#') {
    std::getline(in, line);
    std::istringstream ls(line);
    std::string hash, key1, key2;
    ls >> hash >> key1 >> scale >> key2 >> offset;
  }
  int cols = 0, rows = 0, maxval = 0;
  in >> cols >> rows >> maxval;
  in.get();
  if (cols <= 0 || rows <= 0 || maxval != 65535) throw Error(ErrorCode::DimMismatch, "unsupported PGM header");
  Field f(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const int hi = in.get(), lo = in.get();
      if (!in) throw Error(ErrorCode::TruncatedFile, "PGM ends early");
      f(i, j) = offset + scale * ((hi << 8) | lo);
    }
  }
  return f;
}

inline void write_intensity_ppm(const Intensity& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path);
  out << "P6\n" << img[0].cols() << " " << img[0].rows() << "\n255\n";
  for (Eigen::Index i = 0; i < img[0].rows(); ++i) {
    for (Eigen::Index j = 0; j < img[0].cols(); ++j) {
      for (int c = 0; c < 3; ++c) {
        out.put(static_cast<char>(std::lround(std::clamp(img[c](i, j), 0.0, 1.0) * 255.0)));
      }
    }
  }
}

}  // namespace tactoform
