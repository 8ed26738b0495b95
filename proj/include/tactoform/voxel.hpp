#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tactoform/error.hpp"
#include "tactoform/frames.hpp"

namespace tactoform {

using Dims = std::array<int, 3>;
using Cell = std::array<int, 3>;

/// Dense occupancy grid, z-fastest: index = (x * Y + y) * Z + z.
class VoxelGrid {
 public:
  VoxelGrid() = default;

  explicit VoxelGrid(Dims dims, float fill = 0.0f, VoxelFrame frame = {})
      : dims_(dims), frame_(std::move(frame)) {
    for (int d : dims_) {
      if (d <= 0) throw Error(ErrorCode::DimMismatch, "grid dims must be positive");
    }
    if (!(fill >= 0.0f && fill <= 1.0f)) {
      throw Error(ErrorCode::InvalidArgument, "fill value outside [0,1]");
    }
    values_.assign(static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2], fill);
  }

  VoxelGrid(Dims dims, std::vector<float> values, VoxelFrame frame = {})
      : dims_(dims), values_(std::move(values)), frame_(std::move(frame)) {
    for (int d : dims_) {
      if (d <= 0) throw Error(ErrorCode::DimMismatch, "grid dims must be positive");
    }
    if (values_.size() != static_cast<std::size_t>(dims_[0]) * dims_[1] * dims_[2]) {
      throw Error(ErrorCode::DimMismatch, "value count does not match dims");
    }
    for (float v : values_) {
      if (!(v >= 0.0f && v <= 1.0f)) {
        throw Error(ErrorCode::InvalidArgument, "occupancy value outside [0,1]");
      }
    }
  }

  static VoxelGrid cube(int resolution, float fill = 0.0f, VoxelFrame frame = {}) {
    return VoxelGrid({resolution, resolution, resolution}, fill, std::move(frame));
  }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return values_.size(); }
  const VoxelFrame& frame() const { return frame_; }
  void set_frame(const VoxelFrame& frame) { frame_ = frame; }

  std::size_t index(int x, int y, int z) const {
    return (static_cast<std::size_t>(x) * dims_[1] + y) * dims_[2] + z;
  }
  std::size_t index(const Cell& c) const { return index(c[0], c[1], c[2]); }

  Cell cell(std::size_t idx) const {
    const int z = static_cast<int>(idx % dims_[2]);
    const std::size_t xy = idx / dims_[2];
    return {static_cast<int>(xy / dims_[1]), static_cast<int>(xy % dims_[1]), z};
  }

  bool contains(const Cell& c) const {
    return c[0] >= 0 && c[1] >= 0 && c[2] >= 0 && c[0] < dims_[0] && c[1] < dims_[1] &&
           c[2] < dims_[2];
  }

  float at(const Cell& c) const { return values_[index(c)]; }
  float& at(const Cell& c) { return values_[index(c)]; }
  float operator[](std::size_t i) const { return values_[i]; }
  float& operator[](std::size_t i) { return values_[i]; }

  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }

  Vec3 cell_center_world(const Cell& c) const {
    return voxel_to_world(frame_, Vec3(c[0], c[1], c[2]));
  }

  bool operator==(const VoxelGrid& other) const {
    return dims_ == other.dims_ && values_ == other.values_;
  }

 private:
  Dims dims_{0, 0, 0};
  std::vector<float> values_;
  VoxelFrame frame_;
};

struct ConfidenceGrid {
  Dims dims{0, 0, 0};
  std::vector<float> values;
};

inline ConfidenceGrid confidence(const VoxelGrid& grid) {
  ConfidenceGrid c{grid.dims(), {}};
  c.values.reserve(grid.size());
  for (float v : grid.values()) c.values.push_back(std::fabs(v - 0.5f));
  return c;
}

inline constexpr std::array<Cell, 6> kSixNeighbors{{
    {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}}};

struct PointCloud {
  std::vector<Vec3> points;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Cells at or above `threshold` with at least one 6-neighbor below it.
/// Neighbors outside the grid count as below.
inline std::vector<Cell> surface_cells(const VoxelGrid& grid, double threshold = 0.5) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "threshold must lie in (0,1)");
  }
  const Dims& d = grid.dims();
  std::vector<Cell> out;
  bool any = false;
  for (int x = 0; x < d[0]; ++x) {
    for (int y = 0; y < d[1]; ++y) {
      for (int z = 0; z < d[2]; ++z) {
        if (grid[grid.index(x, y, z)] < threshold) continue;
        any = true;
        for (const Cell& o : kSixNeighbors) {
          const Cell n{x + o[0], y + o[1], z + o[2]};
          if (!grid.contains(n) || grid.at(n) < threshold) {
            out.push_back({x, y, z});
            break;
          }
        }
      }
    }
  }
  if (!any) throw Error(ErrorCode::EmptySurface, "no cell at or above threshold");
  return out;
}

inline PointCloud extract_surface(const VoxelGrid& grid, double threshold = 0.5) {
  PointCloud cloud;
  for (const Cell& c : surface_cells(grid, threshold)) {
    cloud.points.push_back(grid.cell_center_world(c));
  }
  return cloud;
}

namespace detail {

/// Uniform hash of points for exact nearest-neighbor queries. Buckets are
/// searched in growing Chebyshev shells until no unvisited shell can hold a
/// closer point.
class PointHash {
 public:
  PointHash(const PointCloud& cloud, double cell_size) : cloud_(cloud), h_(cell_size) {
    lo_ = hi_ = key_of(cloud.points.front());
    for (std::size_t i = 0; i < cloud.points.size(); ++i) {
      const auto k = key_of(cloud.points[i]);
      for (int a = 0; a < 3; ++a) {
        lo_[a] = std::min(lo_[a], k[a]);
        hi_[a] = std::max(hi_[a], k[a]);
      }
      buckets_[pack(k)].push_back(static_cast<std::uint32_t>(i));
    }
  }

  double nearest_distance(const Vec3& q) const {
    const auto c = key_of(q);
    long max_ring = 0;
    for (int a = 0; a < 3; ++a) {
      max_ring = std::max({max_ring, std::labs(c[a] - lo_[a]), std::labs(c[a] - hi_[a])});
    }
    double best = std::numeric_limits<double>::infinity();
    for (long r = 0; r <= max_ring; ++r) {
      for (long dx = -r; dx <= r; ++dx) {
        for (long dy = -r; dy <= r; ++dy) {
          const bool edge = std::labs(dx) == r || std::labs(dy) == r;
          for (long dz = -r; dz <= r; dz += (edge ? 1 : 2 * std::max(r, 1L))) {
            auto it = buckets_.find(pack({c[0] + dx, c[1] + dy, c[2] + dz}));
            if (it == buckets_.end()) continue;
            for (std::uint32_t i : it->second) best = std::min(best, (cloud_.points[i] - q).norm());
          }
        }
      }
      if (best <= static_cast<double>(r) * h_) break;
    }
    return best;
  }

 private:
  using Key = std::array<long, 3>;

  Key key_of(const Vec3& p) const {
    return {static_cast<long>(std::floor(p.x() / h_)), static_cast<long>(std::floor(p.y() / h_)),
            static_cast<long>(std::floor(p.z() / h_))};
  }
  static std::uint64_t pack(const Key& k) {
    const auto f = [](long v) { return static_cast<std::uint64_t>(v + (1L << 20)) & 0x1FFFFF; };
    return (f(k[0]) << 42) | (f(k[1]) << 21) | f(k[2]);
  }

  const PointCloud& cloud_;
  double h_;
  Key lo_{}, hi_{};
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> buckets_;
};

inline double bucket_size(const PointCloud& a, const PointCloud& b) {
  Vec3 lo = a.points.front(), hi = a.points.front();
  for (const auto* c : {&a, &b}) {
    for (const Vec3& p : c->points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
  }
  const double extent = (hi - lo).maxCoeff();
  const double n = static_cast<double>(std::max(a.size(), b.size()));
  const double h = extent / std::max(1.0, std::cbrt(n));
  return h > 0.0 ? h : 1.0;
}

// Sum over `from` of the distance to the nearest point of `to`.
inline double directed_sum(const PointCloud& from, const PointHash& to) {
  double s = 0.0;
  for (const Vec3& p : from.points) s += to.nearest_distance(p);
  return s;
}

}  // namespace detail

struct ChamferResult {
  double sum = 0.0;         // mm, unsquared distances
  double normalized = 0.0;  // each directed sum divided by its cloud size
};

/// Symmetric Chamfer distance. `bucket_mm` sets the hash pitch; pass the
/// voxel pitch for voxel-center clouds, or 0 to pick one from the data.
inline ChamferResult chamfer(const PointCloud& a, const PointCloud& b, double bucket_mm = 0.0) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::EmptyCloud, "chamfer distance needs two non-empty clouds");
  const double h = bucket_mm > 0.0 ? bucket_mm : detail::bucket_size(a, b);
  const detail::PointHash hash_a(a, h);
  const detail::PointHash hash_b(b, h);
  const double ab = detail::directed_sum(a, hash_b);
  const double ba = detail::directed_sum(b, hash_a);
  return {ab + ba, ab / static_cast<double>(a.size()) + ba / static_cast<double>(b.size())};
}

inline double chamfer_distance(const PointCloud& a, const PointCloud& b) { return chamfer(a, b).sum; }

inline double chamfer_distance_normalized(const PointCloud& a, const PointCloud& b) {
  return chamfer(a, b).normalized;
}

// ---------------------------------------------------------------------------
// VXG1 files: "VXG1", u32 X, u32 Y, u32 Z, then X*Y*Z f32, all little-endian.

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path);
}

}  // namespace detail

inline std::string encode_grid(const VoxelGrid& grid) {
  std::string out = "VXG1";
  out.reserve(16 + 4 * grid.size());
  for (int d : grid.dims()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (float v : grid.values()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline VoxelGrid decode_grid(std::string_view bytes, const VoxelFrame& frame = {}) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != "VXG1") {
    throw Error(ErrorCode::BadMagic, "not a VXG1 grid");
  }
  if (bytes.size() < 16) throw Error(ErrorCode::TruncatedFile, "header shorter than 16 bytes");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  Dims dims{};
  std::uint64_t count = 1;
  for (int a = 0; a < 3; ++a) {
    const std::uint32_t d = detail::get_u32(p + 4 + 4 * a);
    if (d == 0 || d > (1u << 16)) throw Error(ErrorCode::DimMismatch, "implausible grid dims");
    dims[a] = static_cast<int>(d);
    count *= d;
  }
  const std::uint64_t expected = 16 + 4 * count;
  if (bytes.size() < expected) throw Error(ErrorCode::TruncatedFile, "fewer values than header dims");
  if (bytes.size() > expected) throw Error(ErrorCode::DimMismatch, "trailing bytes after values");
  std::vector<float> values(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    values[i] = std::bit_cast<float>(detail::get_u32(p + 16 + 4 * i));
  }
  return VoxelGrid(dims, std::move(values), frame);
}

inline void write_grid(const VoxelGrid& grid, const std::string& path) {
  detail::write_file(path, encode_grid(grid));
}

inline VoxelGrid read_grid(const std::string& path, const VoxelFrame& frame = {}) {
  return decode_grid(detail::read_file(path), frame);
}

}  // namespace tactoform
