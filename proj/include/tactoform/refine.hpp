#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "tactoform/frames.hpp"
#include "tactoform/prior.hpp"
#include "tactoform/raycast.hpp"
#include "tactoform/tactile.hpp"
#include "tactoform/voxel.hpp"

namespace tactoform {

/// Reconstructed sensor heights for one press. `pose.origin` is the pad
/// center on the first-contact plane and `pose.normal` points into the
/// object; the pad was pushed `press_depth` mm past that plane.
struct HeightPatch {
  Field height;  // indentation, mm
  SensorSpec spec;
  SensorPose pose;
  double press_depth = 0.0;
};

/// One touch attempt, in voxel coordinates. `start` is where the approach
/// began and `normal` the unit approach direction.
struct TouchRecord {
  bool hit = false;
  std::optional<Cell> contact;
  Vec3 start = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  std::vector<Cell> ray_cells;
  std::optional<HeightPatch> height_patch;
};

/// Cells pierced by start + t * dir, in order, stopping before `stop` (if
/// given) or after `max_cells` cells.
inline std::vector<Cell> ray_cells_from(const Dims& dims, const Vec3& start, const Vec3& dir,
                                        std::optional<Cell> stop, std::size_t max_cells) {
  std::vector<Cell> out;
  traverse_cells(dims, start, dir, std::numeric_limits<double>::infinity(), [&](const Cell& c, double, double) {
    if (stop && c == *stop) return false;
    if (out.size() >= max_cells) return false;
    out.push_back(c);
    return true;
  });
  return out;
}

/// Height-patch samples that touched the object, as voxel cells. A sample
/// counts when its indentation exceeds a quarter of the press depth and its
/// surface point lies no more than half a voxel behind the contact plane;
/// the point is pushed half a voxel along the normal before binning.
inline std::vector<Cell> patch_cells(const HeightPatch& patch, const VoxelFrame& frame, const Dims& dims) {
  std::vector<Cell> out;
  const double voxel = frame.scale();
  const double min_indent = 0.25 * patch.press_depth;
  const SensorPose& pose = patch.pose;
  for (Eigen::Index r = 0; r < patch.height.rows(); ++r) {
    for (Eigen::Index c = 0; c < patch.height.cols(); ++c) {
      const double f = patch.height(r, c);
      if (!(f > min_indent)) continue;
      const double behind = patch.press_depth - f;
      if (behind > 0.5 * voxel) continue;
      const Vec3 world = pose.origin + patch.spec.u_of(static_cast<int>(c)) * pose.axis_u +
                         patch.spec.v_of(static_cast<int>(r)) * pose.axis_v + (behind + 0.5 * voxel) * pose.normal;
      const Vec3 v = world_to_voxel(frame, world);
      Cell cell;
      bool inside = true;
      for (int a = 0; a < 3; ++a) {
        cell[a] = static_cast<int>(std::floor(v[a] + 0.5));
        inside = inside && cell[a] >= 0 && cell[a] < dims[a];
      }
      if (inside && std::find(out.begin(), out.end(), cell) == out.end()) out.push_back(cell);
    }
  }
  return out;
}

struct Target {
  std::uint32_t index;
  float value;  // 0 or 1
};

struct ConstraintConflict {
  Cell cell;
  std::size_t touch;   // record index that overrode the earlier target
  float new_value;
};

/// Accumulated touches and their per-cell targets. Within a touch, free
/// cells are applied before contact cells; across touches the later touch
/// wins and the override is logged.
class ConstraintSet {
 public:
  ConstraintSet() = default;
  explicit ConstraintSet(Dims dims, VoxelFrame frame = {}) : dims_(dims), frame_(frame) {}

  const Dims& dims() const { return dims_; }
  const VoxelFrame& frame() const { return frame_; }
  const std::vector<TouchRecord>& records() const { return records_; }
  const std::vector<Target>& targets() const { return targets_; }
  const std::vector<ConstraintConflict>& conflicts() const { return conflicts_; }
  bool empty() const { return targets_.empty(); }

  std::size_t count(float value) const {
    std::size_t n = 0;
    for (const Target& t : targets_) n += t.value == value;
    return n;
  }

  void add(const TouchRecord& rec) {
    if (std::fabs(rec.normal.norm() - 1.0) > 1e-9) throw Error(ErrorCode::InvalidArgument, "touch normal is not unit");
    if (rec.hit && !rec.contact) throw Error(ErrorCode::InvalidArgument, "hit without a contact cell");
    for (const Cell& c : rec.ray_cells) {
      check(c);
      if (rec.contact && c == *rec.contact) throw Error(ErrorCode::InvalidArgument, "contact cell lies on its own ray");
    }
    std::vector<Cell> ones;
    if (rec.hit) {
      check(*rec.contact);
      ones.push_back(*rec.contact);
    }
    if (rec.height_patch) {
      for (const Cell& c : patch_cells(*rec.height_patch, frame_, dims_)) ones.push_back(c);
    }
    const std::size_t source = records_.size();
    records_.push_back(rec);
    for (const Cell& c : rec.ray_cells) set(c, 0.0f, source);
    for (const Cell& c : ones) set(c, 1.0f, source);
  }

  /// Direct target, e.g. from a camera view; `source` tags conflicts.
  void add_target(const Cell& c, float value, std::size_t source) {
    check(c);
    set(c, value, source);
  }

 private:
  void check(const Cell& c) const {
    for (int a = 0; a < 3; ++a) {
      if (c[a] < 0 || c[a] >= dims_[a]) throw Error(ErrorCode::OutOfBounds, "constraint cell outside the grid");
    }
  }

  void set(const Cell& c, float value, std::size_t source) {
    const auto idx = static_cast<std::uint32_t>((static_cast<std::size_t>(c[0]) * dims_[1] + c[1]) * dims_[2] + c[2]);
    const auto [it, fresh] = slot_.try_emplace(idx, targets_.size());
    if (fresh) {
      targets_.push_back({idx, value});
      first_source_.push_back(source);
      return;
    }
    Target& t = targets_[it->second];
    // A touch may claim a cell free and then full (patch behind its own
    // ray); that is not a disagreement between measurements.
    if (t.value != value && first_source_[it->second] != source) conflicts_.push_back({c, source, value});
    t.value = value;
    first_source_[it->second] = source;
  }

  Dims dims_{0, 0, 0};
  VoxelFrame frame_;
  std::vector<TouchRecord> records_;
  std::vector<Target> targets_;
  std::vector<std::size_t> first_source_;
  std::unordered_map<std::uint32_t, std::size_t> slot_;
  std::vector<ConstraintConflict> conflicts_;
};

namespace detail {
inline void check_dims(const VoxelGrid& grid, const ConstraintSet& cs) {
  if (!cs.empty() && grid.dims() != cs.dims()) throw Error(ErrorCode::OutOfBounds, "constraints do not fit the grid");
}
}  // namespace detail

/// Sum of squared target violations over constrained cells.
inline double touch_loss(const VoxelGrid& grid, const ConstraintSet& cs) {
  detail::check_dims(grid, cs);
  double loss = 0.0;
  for (const Target& t : cs.targets()) {
    const double r = static_cast<double>(grid[t.index]) - t.value;
    loss += r * r;
  }
  return loss;
}

/// Dense per-cell gradient of touch_loss; zero off the constrained cells.
inline std::vector<double> touch_loss_grad(const VoxelGrid& grid, const ConstraintSet& cs) {
  detail::check_dims(grid, cs);
  std::vector<double> g(grid.size(), 0.0);
  for (const Target& t : cs.targets()) g[t.index] = 2.0 * (static_cast<double>(grid[t.index]) - t.value);
  return g;
}

struct LatentLoss {
  double loss = 0.0;
  Eigen::VectorXd grad;
};

/// touch_loss(decode(z)) and its gradient in z, visiting constrained cells
/// only. Occupancies are kept in double here.
inline LatentLoss latent_loss(const ShapePrior& prior, const LatentCode& z, const ConstraintSet& cs) {
  prior.check_code(z);
  if (!cs.empty() && cs.dims() != prior.dims()) throw Error(ErrorCode::OutOfBounds, "constraints do not fit the prior");
  LatentLoss out{0.0, Eigen::VectorXd::Zero(z.size())};
  const RowMatrix& b = prior.basis_cells();
  for (const Target& t : cs.targets()) {
    const double v = sigmoid(prior.logit(t.index, z));
    const double r = v - t.value;
    out.loss += r * r;
    out.grad += (2.0 * r * v * (1.0 - v)) * b.row(t.index).transpose();
  }
  return out;
}

/// Adds weight * sum_d z_d^2 / var_d, the negative log density of the
/// prior's Gaussian code distribution up to scale. Dimensions with unknown
/// or zero variance are skipped.
inline void add_code_penalty(const ShapePrior& prior, const LatentCode& z, double weight, LatentLoss& out) {
  const Eigen::VectorXd& var = prior.code_variance();
  if (weight == 0.0 || var.size() == 0) return;
  for (Eigen::Index d = 0; d < z.size(); ++d) {
    if (var(d) <= 0.0) continue;
    out.loss += weight * z(d) * z(d) / var(d);
    out.grad(d) += 2.0 * weight * z(d) / var(d);
  }
}

struct RefineOptions {
  int steps = 10;
  double lr = 0.001;
  int max_halvings = 5;
  double min_improvement = 0.0;  // stop once a step gains less than this
  double prior_weight = 0.0;     // weight of the code penalty; 0 is the bare touch loss
};

inline LatentLoss refine_objective(const ShapePrior& prior, const LatentCode& z, const ConstraintSet& cs,
                                   double prior_weight) {
  LatentLoss out = latent_loss(prior, z, cs);
  add_code_penalty(prior, z, prior_weight, out);
  return out;
}

struct RefineStats {
  LatentCode z;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  int accepted_steps = 0;
};

/// Plain gradient descent on z over refine_objective. A step that raises the loss is retried at
/// half the rate up to `max_halvings` times; if none helps, descent stops.
inline RefineStats refine_latent_stats(const ShapePrior& prior, const LatentCode& z0, const ConstraintSet& cs,
                                       const RefineOptions& opt = {}) {
  RefineStats st{z0, 0.0, 0.0, 0};
  LatentLoss cur = refine_objective(prior, z0, cs, opt.prior_weight);
  st.initial_loss = st.final_loss = cur.loss;
  for (int step = 0; step < opt.steps; ++step) {
    if (cur.grad.squaredNorm() == 0.0) break;
    double lr = opt.lr;
    const double prev_loss = cur.loss;
    bool accepted = false;
    for (int h = 0; h <= opt.max_halvings; ++h, lr *= 0.5) {
      const LatentCode trial = st.z - lr * cur.grad;
      LatentLoss next = refine_objective(prior, trial, cs, opt.prior_weight);
      if (next.loss <= cur.loss) {
        st.z = trial;
        cur = std::move(next);
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
    ++st.accepted_steps;
    if (prev_loss - cur.loss < opt.min_improvement) break;
  }
  st.final_loss = cur.loss;
  return st;
}

inline LatentCode refine_latent(const ShapePrior& prior, const LatentCode& z, const ConstraintSet& cs,
                                const RefineOptions& opt = {}) {
  return refine_latent_stats(prior, z, cs, opt).z;
}

/// Overwrites constrained cells with their targets.
inline VoxelGrid direct_edit(const VoxelGrid& grid, const ConstraintSet& cs) {
  detail::check_dims(grid, cs);
  VoxelGrid out = grid;
  for (const Target& t : cs.targets()) out[t.index] = t.value;
  return out;
}

// ---------------------------------------------------------------------------
// Constraint log: one touch per line,
//   H|M  p0x p0y p0z  nx ny nz  ray_length  sx sy sz
// p0 is the contact cell on a hit and the deepest ray cell on a miss; s is
// the approach start in voxel coordinates, from which the ray is replayed.
// Height patches are not logged.

inline void write_constraint_log(std::ostream& out, const std::vector<TouchRecord>& records) {
  out.precision(17);
  for (const TouchRecord& r : records) {
    Cell p{0, 0, 0};
    if (r.hit) p = *r.contact;
    else if (!r.ray_cells.empty()) p = r.ray_cells.back();
    out << (r.hit ? 'H' : 'M') << ' ' << p[0] << ' ' << p[1] << ' ' << p[2] << ' ' << r.normal.x() << ' '
        << r.normal.y() << ' ' << r.normal.z() << ' ' << r.ray_cells.size() << ' ' << r.start.x() << ' '
        << r.start.y() << ' ' << r.start.z() << '\n';
  }
}

inline std::vector<TouchRecord> read_constraint_log(std::istream& in, const Dims& dims) {
  std::vector<TouchRecord> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    char flag = 0;
    Cell p;
    Vec3 n, s;
    std::size_t length = 0;
    ss >> flag >> p[0] >> p[1] >> p[2] >> n.x() >> n.y() >> n.z() >> length >> s.x() >> s.y() >> s.z();
    if (!ss || (flag != 'H' && flag != 'M')) {
      throw Error(ErrorCode::InvalidArgument, "bad constraint log line " + std::to_string(line_no));
    }
    TouchRecord r;
    r.hit = flag == 'H';
    r.normal = n.normalized();
    r.start = s;
    if (r.hit) r.contact = p;
    r.ray_cells = ray_cells_from(dims, s, r.normal, r.contact, length);
    if (r.ray_cells.size() != length || (!r.hit && length > 0 && r.ray_cells.back() != p)) {
      throw Error(ErrorCode::InvalidArgument, "constraint log line " + std::to_string(line_no) + " does not replay");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace tactoform
