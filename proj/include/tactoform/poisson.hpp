#pragma once

#include <cmath>
#include <numbers>

#include <Eigen/Dense>

namespace tactoform {

/// Row-major image fields: rows follow the sensor v axis (y), columns the
/// u axis (x).
using Field = Eigen::ArrayXXd;

namespace detail {

// Type-I discrete sine transform matrix, S(p, m) = sin(pi (p+1)(m+1) / (n+1)).
// S * S = (n+1)/2 * I.
inline Eigen::MatrixXd dst1_matrix(int n) {
  Eigen::MatrixXd s(n, n);
  const double w = std::numbers::pi / (n + 1);
  for (int p = 0; p < n; ++p) {
    for (int m = 0; m < n; ++m) s(p, m) = std::sin(w * (p + 1) * (m + 1));
  }
  return s;
}

// Eigenvalues of the 1D second-difference operator with zero Dirichlet ends.
inline Eigen::VectorXd dirichlet_eigenvalues(int n, double h) {
  Eigen::VectorXd lam(n);
  const double w = std::numbers::pi / (n + 1);
  for (int p = 0; p < n; ++p) lam(p) = -(2.0 - 2.0 * std::cos(w * (p + 1))) / (h * h);
  return lam;
}

}  // namespace detail

/// Central-difference divergence of (gx, gy) on interior pixels; border
/// entries are left at zero.
inline Field divergence(const Field& gx, const Field& gy, double pitch_x, double pitch_y) {
  const Eigen::Index rows = gx.rows(), cols = gx.cols();
  Field div = Field::Zero(rows, cols);
  for (Eigen::Index i = 1; i + 1 < rows; ++i) {
    for (Eigen::Index j = 1; j + 1 < cols; ++j) {
      div(i, j) = (gx(i, j + 1) - gx(i, j - 1)) / (2.0 * pitch_x) +
                  (gy(i + 1, j) - gy(i - 1, j)) / (2.0 * pitch_y);
    }
  }
  return div;
}

/// Five-point Laplacian on interior pixels; border entries are zero.
inline Field laplacian(const Field& f, double pitch_x, double pitch_y) {
  const Eigen::Index rows = f.rows(), cols = f.cols();
  Field lap = Field::Zero(rows, cols);
  for (Eigen::Index i = 1; i + 1 < rows; ++i) {
    for (Eigen::Index j = 1; j + 1 < cols; ++j) {
      lap(i, j) = (f(i, j + 1) - 2.0 * f(i, j) + f(i, j - 1)) / (pitch_x * pitch_x) +
                  (f(i + 1, j) - 2.0 * f(i, j) + f(i - 1, j)) / (pitch_y * pitch_y);
    }
  }
  return lap;
}

/// Solves lap(f) = rhs on the interior with f = 0 on the border pixels.
/// The interior operator is diagonalized by the type-I sine transform along
/// each axis; transforms are applied as dense matrix products.
inline Field solve_poisson_dirichlet(const Field& rhs, double pitch_x, double pitch_y) {
  const int rows = static_cast<int>(rhs.rows());
  const int cols = static_cast<int>(rhs.cols());
  Field f = Field::Zero(rows, cols);
  const int nv = rows - 2, nu = cols - 2;
  if (nv <= 0 || nu <= 0) return f;

  const Eigen::MatrixXd sv = detail::dst1_matrix(nv);
  const Eigen::MatrixXd su = detail::dst1_matrix(nu);
  const Eigen::VectorXd lv = detail::dirichlet_eigenvalues(nv, pitch_y);
  const Eigen::VectorXd lu = detail::dirichlet_eigenvalues(nu, pitch_x);

  const Eigen::MatrixXd interior = rhs.block(1, 1, nv, nu).matrix();
  Eigen::MatrixXd spectrum = sv * interior * su;
  for (int p = 0; p < nv; ++p) {
    for (int q = 0; q < nu; ++q) spectrum(p, q) /= (lv(p) + lu(q));
  }
  const double norm = (2.0 / (nv + 1)) * (2.0 / (nu + 1));
  f.block(1, 1, nv, nu) = (norm * (sv * spectrum * su)).array();
  return f;
}

/// Height map from a gradient field: lap(f) = div(gx, gy), f = 0 on the
/// border. Gradients are dimensionless slopes, pitches in mm, heights in mm.
inline Field integrate_heights(const Field& gx, const Field& gy, double pitch_x, double pitch_y) {
  return solve_poisson_dirichlet(divergence(gx, gy, pitch_x, pitch_y), pitch_x, pitch_y);
}

}  // namespace tactoform
