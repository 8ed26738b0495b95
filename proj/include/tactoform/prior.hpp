#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "tactoform/error.hpp"
#include "tactoform/shapes.hpp"
#include "tactoform/voxel.hpp"

namespace tactoform {

using LatentCode = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Occupancy is clamped to [eps, 1 - eps] before taking logits.
inline constexpr double kLogitEps = 1e-3;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double clamped_logit(double v) {
  v = std::clamp(v, kLogitEps, 1.0 - kLogitEps);
  return std::log(v / (1.0 - v));
}

/// Linear eigenshape model in logit space: v = sigmoid(mean + B^T z), with
/// the D basis rows of B orthonormal. Stored cell-major (V x D) so a single
/// cell's logit is one contiguous dot product.
class ShapePrior {
 public:
  ShapePrior() = default;
  ShapePrior(Dims dims, std::vector<double> mean, RowMatrix basis_cells, int rank, std::uint64_t corpus_hash = 0,
             Eigen::VectorXd code_variance = {})
      : dims_(dims),
        mean_(std::move(mean)),
        basis_(std::move(basis_cells)),
        rank_(rank),
        corpus_hash_(corpus_hash),
        variance_(std::move(code_variance)) {
    if (static_cast<std::size_t>(basis_.rows()) != mean_.size()) {
      throw Error(ErrorCode::DimMismatch, "basis and mean sizes differ");
    }
    if (variance_.size() != 0 && variance_.size() != basis_.cols()) {
      throw Error(ErrorCode::DimMismatch, "code variance has wrong dimension");
    }
  }

  const Dims& dims() const { return dims_; }
  int latent_dim() const { return static_cast<int>(basis_.cols()); }
  std::size_t cells() const { return mean_.size(); }
  int rank() const { return rank_; }
  bool rank_deficient() const { return rank_ < latent_dim(); }
  std::uint64_t corpus_hash() const { return corpus_hash_; }
  const std::vector<double>& mean() const { return mean_; }
  const RowMatrix& basis_cells() const { return basis_; }

  /// Corpus variance of each latent coordinate; empty when unknown (e.g. a
  /// prior file written without it). Zero for unused dimensions.
  const Eigen::VectorXd& code_variance() const { return variance_; }

  /// Basis row d as a V-vector.
  Eigen::VectorXd basis_row(int d) const { return basis_.col(d); }

  void check_code(const LatentCode& z) const {
    if (z.size() != latent_dim()) throw Error(ErrorCode::DimMismatch, "latent code has wrong dimension");
  }

  double logit(std::size_t cell, const LatentCode& z) const { return mean_[cell] + basis_.row(cell).dot(z); }

  Eigen::VectorXd logits(const LatentCode& z) const {
    check_code(z);
    return Eigen::Map<const Eigen::VectorXd>(mean_.data(), static_cast<Eigen::Index>(mean_.size())) + basis_ * z;
  }

  /// Values are kept strictly inside (0, 1) even where float rounding of
  /// the sigmoid would hit an endpoint.
  VoxelGrid decode(const LatentCode& z, const VoxelFrame& frame = {}) const {
    const Eigen::VectorXd l = logits(z);
    const float lo = std::nextafter(0.0f, 1.0f), hi = std::nextafter(1.0f, 0.0f);
    std::vector<float> v(l.size());
    for (Eigen::Index i = 0; i < l.size(); ++i) v[i] = std::clamp(static_cast<float>(sigmoid(l(i))), lo, hi);
    return VoxelGrid(dims_, std::move(v), frame);
  }

  LatentCode encode(const VoxelGrid& grid) const {
    if (grid.dims() != dims_) throw Error(ErrorCode::DimMismatch, "grid resolution does not match prior");
    Eigen::VectorXd dev(static_cast<Eigen::Index>(cells()));
    for (std::size_t i = 0; i < cells(); ++i) dev(i) = clamped_logit(grid[i]) - mean_[i];
    return basis_.transpose() * dev;
  }

  LatentCode zero_code() const { return LatentCode::Zero(latent_dim()); }

 private:
  Dims dims_{0, 0, 0};
  std::vector<double> mean_;
  RowMatrix basis_;
  int rank_ = 0;
  std::uint64_t corpus_hash_ = 0;
  Eigen::VectorXd variance_;
};

inline std::uint64_t hash_corpus(std::span<const VoxelGrid> corpus) {
  std::uint64_t h = 1469598103934665603ull;
  for (const VoxelGrid& g : corpus) {
    for (unsigned char c : encode_grid(g)) {
      h ^= c;
      h *= 1099511628211ull;
    }
  }
  return h;
}

/// Truncated SVD of the corpus logit deviations. The N x N Gram matrix is
/// accumulated over cell blocks and eigendecomposed; basis rows are
/// X^T u / sigma, signed so each row's first nonzero entry is positive.
/// When the corpus has rank below `latent_dim` the trailing rows are zero
/// and rank() reports the deficiency.
inline ShapePrior fit_prior(std::span<const VoxelGrid> corpus, int latent_dim) {
  if (corpus.empty()) throw Error(ErrorCode::InvalidArgument, "empty corpus");
  if (latent_dim < 1) throw Error(ErrorCode::InvalidArgument, "latent dimension must be >= 1");
  const Dims dims = corpus.front().dims();
  for (const VoxelGrid& g : corpus) {
    if (g.dims() != dims) throw Error(ErrorCode::DimMismatch, "corpus grids differ in size");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(corpus.size());
  const std::size_t cells = corpus.front().size();

  std::vector<double> mean(cells, 0.0);
  for (const VoxelGrid& g : corpus) {
    for (std::size_t i = 0; i < cells; ++i) mean[i] += clamped_logit(g[i]);
  }
  for (double& m : mean) m /= static_cast<double>(n);

  constexpr std::size_t kBlock = 2048;
  const auto fill_block = [&](std::size_t c0, std::size_t width, Eigen::MatrixXd& block) {
    block.resize(n, static_cast<Eigen::Index>(width));
    for (Eigen::Index s = 0; s < n; ++s) {
      const VoxelGrid& g = corpus[s];
      for (std::size_t c = 0; c < width; ++c) block(s, c) = clamped_logit(g[c0 + c]) - mean[c0 + c];
    }
  };

  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd block;
  for (std::size_t c0 = 0; c0 < cells; c0 += kBlock) {
    fill_block(c0, std::min(kBlock, cells - c0), block);
    gram.selfadjointView<Eigen::Lower>().rankUpdate(block);
  }
  gram = gram.selfadjointView<Eigen::Lower>();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const Eigen::VectorXd& lambda = eig.eigenvalues();  // ascending
  const double top = std::max(lambda(n - 1), 0.0);
  int rank = 0;
  for (Eigen::Index k = n - 1; k >= 0 && rank < latent_dim; --k) {
    if (lambda(k) > top * 1e-12 * static_cast<double>(n) && lambda(k) > 0.0) ++rank;
    else break;
  }

  Eigen::MatrixXd proj = Eigen::MatrixXd::Zero(n, latent_dim);
  Eigen::VectorXd variance = Eigen::VectorXd::Zero(latent_dim);
  for (int d = 0; d < rank; ++d) {
    proj.col(d) = eig.eigenvectors().col(n - 1 - d) / std::sqrt(lambda(n - 1 - d));
    variance(d) = lambda(n - 1 - d) / static_cast<double>(n);  // training codes are u * sqrt(lambda)
  }

  RowMatrix basis = RowMatrix::Zero(static_cast<Eigen::Index>(cells), latent_dim);
  for (std::size_t c0 = 0; c0 < cells; c0 += kBlock) {
    const std::size_t width = std::min(kBlock, cells - c0);
    fill_block(c0, width, block);
    basis.middleRows(static_cast<Eigen::Index>(c0), static_cast<Eigen::Index>(width)) = block.transpose() * proj;
  }

  for (int d = 0; d < rank; ++d) {
    for (Eigen::Index i = 0; i < basis.rows(); ++i) {
      if (std::fabs(basis(i, d)) > 1e-12) {
        if (basis(i, d) < 0.0) basis.col(d) *= -1.0;
        break;
      }
    }
  }
  return ShapePrior(dims, std::move(mean), std::move(basis), rank, hash_corpus(corpus), std::move(variance));
}

inline ShapePrior fit_prior(std::span<const CorpusEntry> corpus, int latent_dim) {
  std::vector<VoxelGrid> grids;
  grids.reserve(corpus.size());
  for (const CorpusEntry& e : corpus) grids.push_back(e.grid);
  return fit_prior(std::span<const VoxelGrid>(grids), latent_dim);
}

// ---------------------------------------------------------------------------
// SPR1: "SPR1", u32 dims[3], u32 D, f64 mean[V], then D basis rows of V f64,
// all little-endian. An optional trailer "SVAR" + f64 variance[D] carries the
// latent code variances.

inline void write_prior(const ShapePrior& prior, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path + " for writing");
  std::string buf = "SPR1";
  for (int d : prior.dims()) detail::put_u32(buf, static_cast<std::uint32_t>(d));
  detail::put_u32(buf, static_cast<std::uint32_t>(prior.latent_dim()));
  const auto flush = [&] {
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    buf.clear();
  };
  for (double m : prior.mean()) detail::put_u64(buf, std::bit_cast<std::uint64_t>(m));
  flush();
  const RowMatrix& b = prior.basis_cells();
  for (Eigen::Index d = 0; d < b.cols(); ++d) {
    for (Eigen::Index i = 0; i < b.rows(); ++i) detail::put_u64(buf, std::bit_cast<std::uint64_t>(b(i, d)));
    flush();
  }
  if (prior.code_variance().size() != 0) {
    buf = "SVAR";
    for (double v : prior.code_variance()) detail::put_u64(buf, std::bit_cast<std::uint64_t>(v));
    flush();
  }
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path);
}

inline ShapePrior read_prior(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 4 || bytes.compare(0, 4, "SPR1") != 0) throw Error(ErrorCode::BadMagic, "not an SPR1 prior");
  if (bytes.size() < 20) throw Error(ErrorCode::TruncatedFile, "prior header too short");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  Dims dims{};
  std::uint64_t cells = 1;
  for (int a = 0; a < 3; ++a) {
    const std::uint32_t d = detail::get_u32(p + 4 + 4 * a);
    if (d == 0 || d > 4096) throw Error(ErrorCode::DimMismatch, "implausible prior dims");
    dims[a] = static_cast<int>(d);
    cells *= d;
  }
  const std::uint32_t latent = detail::get_u32(p + 16);
  if (latent == 0) throw Error(ErrorCode::DimMismatch, "prior latent dimension is zero");
  const std::uint64_t expected = 20 + 8 * cells * (1 + static_cast<std::uint64_t>(latent));
  if (bytes.size() < expected) throw Error(ErrorCode::TruncatedFile, "prior file ends early");
  const std::uint64_t trailer = 4 + 8 * static_cast<std::uint64_t>(latent);
  const bool has_variance = bytes.size() == expected + trailer && bytes.compare(expected, 4, "SVAR") == 0;
  if (bytes.size() > expected && !has_variance) throw Error(ErrorCode::DimMismatch, "trailing bytes in prior file");

  std::vector<double> mean(cells);
  const unsigned char* q = p + 20;
  for (std::uint64_t i = 0; i < cells; ++i, q += 8) mean[i] = std::bit_cast<double>(detail::get_u64(q));
  RowMatrix basis(static_cast<Eigen::Index>(cells), static_cast<Eigen::Index>(latent));
  int rank = 0;
  for (std::uint32_t d = 0; d < latent; ++d) {
    bool nonzero = false;
    for (std::uint64_t i = 0; i < cells; ++i, q += 8) {
      basis(static_cast<Eigen::Index>(i), d) = std::bit_cast<double>(detail::get_u64(q));
      nonzero = nonzero || basis(static_cast<Eigen::Index>(i), d) != 0.0;
    }
    rank += nonzero;
  }
  Eigen::VectorXd variance;
  if (has_variance) {
    variance.resize(latent);
    q += 4;
    for (std::uint32_t d = 0; d < latent; ++d, q += 8) variance(d) = std::bit_cast<double>(detail::get_u64(q));
  }
  return ShapePrior(dims, std::move(mean), std::move(basis), rank, 0, std::move(variance));
}

}  // namespace tactoform
