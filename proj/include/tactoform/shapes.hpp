#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "tactoform/error.hpp"
#include "tactoform/voxel.hpp"

namespace tactoform {

enum class Family { Box, Cylinder, Sphere, Bottle, Cone };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::Box: return "box";
    case Family::Cylinder: return "cylinder";
    case Family::Sphere: return "sphere";
    case Family::Bottle: return "bottle";
    case Family::Cone: return "cone";
  }
  return "?";
}

inline Family family_from_name(const std::string& name) {
  for (Family f : {Family::Box, Family::Cylinder, Family::Sphere, Family::Bottle, Family::Cone}) {
    if (name == family_name(f)) return f;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown shape family '" + name + "'");
}

/// Procedural solid standing on the grid floor. All lengths are in voxels;
/// (center_x, center_y) is the vertical axis and `base` the bottom plane.
struct ShapeParams {
  Family family = Family::Box;
  double center_x = 0.0;
  double center_y = 0.0;
  double base = 1.5;
  double height = 10.0;
  double radius = 5.0;           // cylinder, sphere, bottle body, cone bottom
  double radius_top = 2.0;       // cone top cap
  double half_x = 5.0;           // box
  double half_y = 5.0;           // box
  double yaw_deg = 0.0;          // box rotation about the vertical axis
  double neck_radius = 2.0;      // bottle
  double shoulder_height = 3.0;  // bottle taper between body and neck
  double neck_height = 3.0;      // bottle

  /// Bottle profile: body cylinder, linear shoulder, neck cylinder.
  double bottle_radius_at(double h) const {
    const double body = height - shoulder_height - neck_height;
    if (h <= body) return radius;
    if (h <= body + shoulder_height) {
      const double t = (h - body) / shoulder_height;
      return radius + t * (neck_radius - radius);
    }
    return neck_radius;
  }

  double top() const { return family == Family::Sphere ? base + 2.0 * radius : base + height; }

  /// Largest horizontal distance from the axis.
  double horizontal_extent() const {
    switch (family) {
      case Family::Box: return std::hypot(half_x, half_y);
      case Family::Cone: return std::max(radius, radius_top);
      case Family::Bottle: return std::max(radius, neck_radius);
      default: return radius;
    }
  }

  bool inside(const Vec3& p) const {
    const double dx = p.x() - center_x, dy = p.y() - center_y, h = p.z() - base;
    switch (family) {
      case Family::Sphere: {
        const double dz = h - radius;
        return dx * dx + dy * dy + dz * dz <= radius * radius;
      }
      case Family::Box: {
        if (h < 0.0 || h > height) return false;
        const double a = yaw_deg * std::numbers::pi / 180.0;
        const double lx = std::cos(a) * dx + std::sin(a) * dy;
        const double ly = -std::sin(a) * dx + std::cos(a) * dy;
        return std::fabs(lx) <= half_x && std::fabs(ly) <= half_y;
      }
      case Family::Cylinder:
        return h >= 0.0 && h <= height && dx * dx + dy * dy <= radius * radius;
      case Family::Cone: {
        if (h < 0.0 || h > height) return false;
        const double r = radius + (radius_top - radius) * (h / height);
        return dx * dx + dy * dy <= r * r;
      }
      case Family::Bottle: {
        if (h < 0.0 || h > height) return false;
        const double r = bottle_radius_at(h);
        return dx * dx + dy * dy <= r * r;
      }
    }
    return false;
  }

  /// Throws ShapeOutOfBounds unless the solid keeps `margin` empty cells on
  /// every side of an n^3 grid.
  void check_fits(int resolution, int margin = 2) const {
    const double lo = margin - 0.5, hi = resolution - margin - 0.5;
    const double e = horizontal_extent();
    if (center_x - e < lo || center_x + e > hi || center_y - e < lo || center_y + e > hi || base < lo ||
        top() > hi) {
      throw Error(ErrorCode::ShapeOutOfBounds, std::string(family_name(family)) + " does not fit the grid");
    }
    if (family == Family::Bottle && shoulder_height + neck_height >= height) {
      throw Error(ErrorCode::ShapeOutOfBounds, "bottle neck and shoulder exceed its height");
    }
  }
};

/// Binary occupancy sampled at cell centers.
inline VoxelGrid rasterize(const ShapeParams& shape, int resolution, const VoxelFrame& frame = {}) {
  VoxelGrid grid = VoxelGrid::cube(resolution, 0.0f, frame);
  for (int x = 0; x < resolution; ++x)
    for (int y = 0; y < resolution; ++y)
      for (int z = 0; z < resolution; ++z)
        if (shape.inside(Vec3(x, y, z))) grid[grid.index(x, y, z)] = 1.0f;
  return grid;
}

inline nlohmann::json shape_to_json(const ShapeParams& s) {
  nlohmann::json j{{"family", family_name(s.family)}, {"center_x", s.center_x}, {"center_y", s.center_y},
                   {"base", s.base}};
  switch (s.family) {
    case Family::Box:
      j["half_x"] = s.half_x;
      j["half_y"] = s.half_y;
      j["height"] = s.height;
      j["yaw_deg"] = s.yaw_deg;
      break;
    case Family::Cylinder:
      j["radius"] = s.radius;
      j["height"] = s.height;
      break;
    case Family::Sphere:
      j["radius"] = s.radius;
      break;
    case Family::Cone:
      j["radius"] = s.radius;
      j["radius_top"] = s.radius_top;
      j["height"] = s.height;
      break;
    case Family::Bottle:
      j["radius"] = s.radius;
      j["height"] = s.height;
      j["neck_radius"] = s.neck_radius;
      j["shoulder_height"] = s.shoulder_height;
      j["neck_height"] = s.neck_height;
      break;
  }
  return j;
}

/// Missing placement fields default to a shape centered on an n^3 grid,
/// standing on the 2-voxel floor margin.
inline ShapeParams shape_from_json(const nlohmann::json& j, int resolution) {
  ShapeParams s;
  s.family = family_from_name(j.at("family").get<std::string>());
  const double c = 0.5 * (resolution - 1);
  s.center_x = j.value("center_x", c);
  s.center_y = j.value("center_y", c);
  s.base = j.value("base", 1.5);
  s.height = j.value("height", s.height);
  s.radius = j.value("radius", s.radius);
  s.radius_top = j.value("radius_top", s.radius_top);
  s.half_x = j.value("half_x", s.half_x);
  s.half_y = j.value("half_y", s.half_y);
  s.yaw_deg = j.value("yaw_deg", s.yaw_deg);
  s.neck_radius = j.value("neck_radius", s.neck_radius);
  s.shoulder_height = j.value("shoulder_height", s.shoulder_height);
  s.neck_height = j.value("neck_height", s.neck_height);
  return s;
}

// ---------------------------------------------------------------------------
// Training corpus.

/// Parameter ranges are fractions of the usable extent (resolution minus the
/// two 2-voxel margins); yaw is in degrees.
struct FamilySpec {
  Family family = Family::Box;
  int count = 0;
  std::map<std::string, std::pair<double, double>> ranges;

  static std::map<std::string, std::pair<double, double>> default_ranges(Family f) {
    switch (f) {
      case Family::Box:
        return {{"half_x", {0.12, 0.32}}, {"half_y", {0.12, 0.32}}, {"height", {0.25, 0.9}}, {"yaw_deg", {0.0, 90.0}}};
      case Family::Cylinder:
        return {{"radius", {0.12, 0.42}}, {"height", {0.25, 0.95}}};
      case Family::Sphere:
        return {{"radius", {0.15, 0.48}}};
      case Family::Bottle:
        return {{"radius", {0.18, 0.4}},
                {"height", {0.55, 0.95}},
                {"neck_radius", {0.06, 0.14}},
                {"shoulder_height", {0.08, 0.18}},
                {"neck_height", {0.08, 0.2}}};
      case Family::Cone:
        return {{"radius", {0.15, 0.45}}, {"radius_top", {0.03, 0.3}}, {"height", {0.25, 0.9}}};
    }
    return {};
  }
};

struct ShapeCorpusSpec {
  int resolution = 64;
  std::uint64_t seed = 1;
  std::vector<FamilySpec> families;

  static ShapeCorpusSpec standard(int resolution, int per_family, std::uint64_t seed) {
    ShapeCorpusSpec spec;
    spec.resolution = resolution;
    spec.seed = seed;
    for (Family f : {Family::Box, Family::Cylinder, Family::Sphere, Family::Bottle, Family::Cone}) {
      spec.families.push_back({f, per_family, FamilySpec::default_ranges(f)});
    }
    return spec;
  }

  /// Keeps only the named families (per-category priors).
  ShapeCorpusSpec filtered(const std::vector<Family>& keep) const {
    ShapeCorpusSpec out = *this;
    std::erase_if(out.families, [&](const FamilySpec& fs) {
      return std::find(keep.begin(), keep.end(), fs.family) == keep.end();
    });
    return out;
  }
};

/// Either {"families": [...]} or the shorthand {"per_family": n}, which
/// expands to the five standard families with default ranges.
inline ShapeCorpusSpec corpus_spec_from_json(const nlohmann::json& j) {
  ShapeCorpusSpec spec;
  spec.resolution = j.value("resolution", 64);
  spec.seed = j.value("seed", std::uint64_t{1});
  if (!j.contains("families")) {
    return ShapeCorpusSpec::standard(spec.resolution, j.at("per_family").get<int>(), spec.seed);
  }
  for (const auto& fj : j.at("families")) {
    FamilySpec fs;
    fs.family = family_from_name(fj.at("family").get<std::string>());
    fs.count = fj.value("count", 0);
    fs.ranges = FamilySpec::default_ranges(fs.family);
    if (fj.contains("ranges")) {
      for (const auto& [key, range] : fj.at("ranges").items()) {
        fs.ranges[key] = {range.at(0).get<double>(), range.at(1).get<double>()};
      }
    }
    spec.families.push_back(std::move(fs));
  }
  return spec;
}

/// Draws one shape of the family from its ranges.
inline ShapeParams sample_shape(const FamilySpec& fs, int resolution, std::mt19937_64& rng) {
  const double usable = resolution - 4.0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto draw = [&](const std::string& key) {
    const auto it = fs.ranges.find(key);
    if (it == fs.ranges.end()) throw Error(ErrorCode::InvalidArgument, "missing range '" + key + "'");
    return it->second.first + unit(rng) * (it->second.second - it->second.first);
  };
  ShapeParams s;
  s.family = fs.family;
  s.center_x = s.center_y = 0.5 * (resolution - 1);
  s.base = 1.5;
  switch (fs.family) {
    case Family::Box:
      s.half_x = draw("half_x") * usable;
      s.half_y = draw("half_y") * usable;
      s.height = draw("height") * usable;
      s.yaw_deg = draw("yaw_deg");
      break;
    case Family::Cylinder:
      s.radius = draw("radius") * usable;
      s.height = draw("height") * usable;
      break;
    case Family::Sphere:
      s.radius = draw("radius") * usable;
      break;
    case Family::Bottle:
      s.radius = draw("radius") * usable;
      s.height = draw("height") * usable;
      s.neck_radius = draw("neck_radius") * usable;
      s.shoulder_height = draw("shoulder_height") * usable;
      s.neck_height = draw("neck_height") * usable;
      break;
    case Family::Cone:
      s.radius = draw("radius") * usable;
      s.radius_top = draw("radius_top") * usable;
      s.height = draw("height") * usable;
      break;
  }
  s.check_fits(resolution);
  return s;
}

struct CorpusEntry {
  ShapeParams shape;
  VoxelGrid grid;
};

/// Deterministic given the spec: families are drawn in order from one
/// seeded stream.
inline std::vector<CorpusEntry> generate_corpus(const ShapeCorpusSpec& spec) {
  if (spec.resolution < 8) throw Error(ErrorCode::InvalidArgument, "corpus resolution must be >= 8");
  std::mt19937_64 rng(spec.seed);
  std::vector<CorpusEntry> out;
  for (const FamilySpec& fs : spec.families) {
    for (int i = 0; i < fs.count; ++i) {
      ShapeParams s = sample_shape(fs, spec.resolution, rng);
      out.push_back({s, rasterize(s, spec.resolution)});
    }
  }
  return out;
}

}  // namespace tactoform
