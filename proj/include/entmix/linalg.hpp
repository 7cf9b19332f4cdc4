#pragma once

//! Matrix factorizations on tensors: SVD splits with truncation, Hermitian
//! eigendecomposition, polar projection. LAPACK does the heavy lifting
//! (zgesdd / zheevd); Eigen matrices carry the data (column-major, which is
//! what LAPACK expects).

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "entmix/tensor.hpp"

#define lapack_complex_float std::complex<float>
#define lapack_complex_double std::complex<double>
#include <lapacke.h>

namespace entmix {

/// Singular values this far below the largest are treated as exact zeros
/// everywhere (rank decisions, gauge fixing, pseudo-inverses).
inline constexpr double kSingularZeroTol = 1e-14;

struct MatSvd {
  Eigen::MatrixXcd u;   // m x r, orthonormal columns
  Eigen::VectorXd s;    // r, descending
  Eigen::MatrixXcd vh;  // r x n, orthonormal rows
};

/// Thin SVD with a deterministic phase convention: the largest-magnitude
/// entry of each left singular vector is made real positive.
inline MatSvd svd(const Eigen::MatrixXcd& m) {
  const auto rows = static_cast<lapack_int>(m.rows());
  const auto cols = static_cast<lapack_int>(m.cols());
  const lapack_int r = std::min(rows, cols);
  Eigen::MatrixXcd a = m;  // zgesdd destroys its input
  MatSvd out;
  out.u.resize(rows, r);
  out.s.resize(r);
  out.vh.resize(r, cols);
  lapack_int info = LAPACKE_zgesdd(LAPACK_COL_MAJOR, 'S', rows, cols, a.data(), rows,
                                   out.s.data(), out.u.data(), rows, out.vh.data(), r);
  if (info != 0)
    throw std::runtime_error(fmt::format("svd: zgesdd failed to converge (info={})", info));

  if (r > 0) {
    const double floor = kSingularZeroTol * out.s(0);
    for (lapack_int i = 0; i < r; ++i)
      if (out.s(i) < floor) out.s(i) = 0.0;
  }
  for (lapack_int j = 0; j < r; ++j) {
    lapack_int imax = 0;
    double best = -1.0;
    for (lapack_int i = 0; i < rows; ++i) {
      const double a2 = std::norm(out.u(i, j));
      if (a2 > best + 1e-30) {
        best = a2;
        imax = i;
      }
    }
    const cd z = out.u(imax, j);
    const double az = std::abs(z);
    if (az > 0.0) {
      const cd phase = z / az;
      out.u.col(j) *= std::conj(phase);
      out.vh.row(j) *= phase;
    }
  }
  return out;
}

/// Hermitian eigendecomposition, eigenvalues ascending. The input is
/// validated against its conjugate transpose and symmetrized before the
/// decomposition.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXcd> eigh(const Eigen::MatrixXcd& m,
                                                         double herm_tol = 1e-10) {
  if (m.rows() != m.cols()) throw std::invalid_argument("eigh: matrix must be square");
  const double scale = std::max(1.0, m.norm());
  if ((m - m.adjoint()).norm() > herm_tol * scale)
    throw std::invalid_argument("eigh: input is not Hermitian within tolerance");
  Eigen::MatrixXcd a = 0.5 * (m + m.adjoint());
  const auto n = static_cast<lapack_int>(a.rows());
  Eigen::VectorXd w(n);
  lapack_int info = LAPACKE_zheevd(LAPACK_COL_MAJOR, 'V', 'L', n, a.data(), n, w.data());
  if (info != 0)
    throw std::runtime_error(fmt::format("eigh: zheevd failed (info={})", info));
  return {std::move(w), std::move(a)};
}

/// Unitary polar factor: maximizes Re tr(U^dag m) over unitaries.
inline Eigen::MatrixXcd nearest_unitary(const Eigen::MatrixXcd& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("nearest_unitary: matrix must be square");
  MatSvd f = svd(m);
  const lapack_int r = static_cast<lapack_int>(f.s.size());
  if (r == 0 || f.s(r - 1) <= 0.0)
    throw std::runtime_error(
        "nearest_unitary: degenerate environment (numerically singular input)");
  return f.u * f.vh;
}

/// exp(-i theta h) for Hermitian h.
inline Eigen::MatrixXcd unitary_exp(const Eigen::MatrixXcd& h, double theta) {
  auto [w, v] = eigh(h);
  Eigen::VectorXcd phases(w.size());
  for (Eigen::Index i = 0; i < w.size(); ++i)
    phases(i) = std::exp(cd(0.0, -theta * w(i)));
  return v * phases.asDiagonal() * v.adjoint();
}

struct GeneralEig {
  Eigen::VectorXcd values;      // unordered as returned by LAPACK
  Eigen::MatrixXcd left;        // columns u with u^dag m = w u^dag
  Eigen::MatrixXcd right;       // columns v with m v = w v
};

/// Full nonsymmetric eigendecomposition (zgeev), with left and right
/// eigenvectors. Used for dense transfer-operator spectra.
inline GeneralEig eig_general(Eigen::MatrixXcd m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("eig_general: matrix must be square");
  const auto n = static_cast<lapack_int>(m.rows());
  GeneralEig out;
  out.values.resize(n);
  out.left.resize(n, n);
  out.right.resize(n, n);
  lapack_int info = LAPACKE_zgeev(LAPACK_COL_MAJOR, 'V', 'V', n, m.data(), n, out.values.data(),
                                  out.left.data(), n, out.right.data(), n);
  if (info != 0)
    throw std::runtime_error(fmt::format("eig_general: zgeev failed (info={})", info));
  return out;
}

/// Entrywise pseudo-inverse of a Schmidt vector: values below
/// rel_cutoff x max are inverted to zero.
inline Eigen::VectorXd pseudo_inverse(const Eigen::VectorXd& lambda,
                                      double rel_cutoff = 1e-12) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(lambda.size());
  if (lambda.size() == 0) return out;
  const double floor = rel_cutoff * lambda.maxCoeff();
  for (Eigen::Index i = 0; i < lambda.size(); ++i)
    if (lambda(i) > floor) out(i) = 1.0 / lambda(i);
  return out;
}

// ---------------------------------------------------------------------------
// Tensor <-> matrix bridges.

/// View the first n_row_legs legs as matrix rows and the rest as columns
/// (no permutation; row-major data maps directly).
inline Eigen::MatrixXcd to_matrix(const DenseTensor& t, int n_row_legs) {
  if (n_row_legs <= 0 || n_row_legs >= t.rank())
    throw std::invalid_argument("to_matrix: row legs must be a nonempty proper subset");
  long rows = 1, cols = 1;
  for (int i = 0; i < t.rank(); ++i)
    (i < n_row_legs ? rows : cols) *= t.dim(i);
  using RowMat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  return Eigen::Map<const RowMat>(t.data(), rows, cols);
}

inline DenseTensor to_tensor(const Eigen::MatrixXcd& m, std::vector<long> row_dims,
                             std::vector<long> col_dims, std::vector<std::string> legs = {}) {
  std::vector<long> shape = row_dims;
  shape.insert(shape.end(), col_dims.begin(), col_dims.end());
  DenseTensor t(shape, std::move(legs));
  using RowMat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<RowMat>(t.data(), m.rows(), m.cols()) = m;
  return t;
}

struct Matricized {
  Eigen::MatrixXcd m;
  std::vector<long> row_dims, col_dims;
  std::vector<std::string> row_legs, col_legs;
};

/// Permute the given legs to the front and flatten to a matrix.
inline Matricized matricize(const DenseTensor& t, const std::vector<int>& row_legs) {
  if (row_legs.empty() || static_cast<int>(row_legs.size()) >= t.rank())
    throw std::invalid_argument("matricize: row legs must be a nonempty proper subset of legs");
  std::vector<bool> is_row(static_cast<std::size_t>(t.rank()), false);
  for (int leg : row_legs) {
    if (leg < 0 || leg >= t.rank()) throw std::invalid_argument("matricize: leg out of range");
    if (is_row[static_cast<std::size_t>(leg)])
      throw std::invalid_argument("matricize: repeated row leg");
    is_row[static_cast<std::size_t>(leg)] = true;
  }
  std::vector<int> perm = row_legs;
  for (int i = 0; i < t.rank(); ++i)
    if (!is_row[static_cast<std::size_t>(i)]) perm.push_back(i);
  DenseTensor tp = t.permute(perm);

  Matricized out;
  const int nr = static_cast<int>(row_legs.size());
  for (int i = 0; i < tp.rank(); ++i) {
    if (i < nr) {
      out.row_dims.push_back(tp.dim(i));
      out.row_legs.push_back(tp.leg_name(i));
    } else {
      out.col_dims.push_back(tp.dim(i));
      out.col_legs.push_back(tp.leg_name(i));
    }
  }
  out.m = to_matrix(tp, nr);
  return out;
}

struct SvdResult {
  DenseTensor left_isometry;         // (row legs..., bond)
  std::vector<double> singular_values;  // descending
  DenseTensor right_isometry;        // (bond, col legs...)
  double truncation_error = 0.0;     // sqrt(sum of squared discarded values)
};

/// Split a tensor across row_legs | remaining legs with an SVD, truncating
/// to max_rank and to relative discarded weight rel_tol (cumulative squared
/// weight of the dropped tail relative to the total). max_rank <= 0 means
/// unbounded.
inline SvdResult svd_split(const DenseTensor& t, const std::vector<int>& row_legs,
                           long max_rank = 0, double rel_tol = 0.0) {
  Matricized mat = matricize(t, row_legs);
  MatSvd f = svd(mat.m);

  const long r_full = static_cast<long>(f.s.size());
  double total = 0.0;
  for (long i = 0; i < r_full; ++i) total += f.s(i) * f.s(i);

  long keep = r_full;
  if (rel_tol > 0.0 && total > 0.0) {
    double discarded = 0.0;
    while (keep > 1) {
      const double w = f.s(keep - 1) * f.s(keep - 1);
      if ((discarded + w) / total > rel_tol) break;
      discarded += w;
      --keep;
    }
  }
  if (max_rank > 0) keep = std::min(keep, max_rank);
  keep = std::max<long>(keep, 1);
  // Never keep numerically-zero directions if anything nonzero exists.
  while (keep > 1 && f.s(keep - 1) <= 0.0) --keep;

  double disc2 = 0.0;
  for (long i = keep; i < r_full; ++i) disc2 += f.s(i) * f.s(i);

  SvdResult out;
  out.singular_values.assign(f.s.data(), f.s.data() + keep);
  out.truncation_error = std::sqrt(disc2);

  std::vector<long> u_shape = mat.row_dims;
  u_shape.push_back(keep);
  std::vector<std::string> u_legs = mat.row_legs;
  u_legs.push_back("bond");
  out.left_isometry = to_tensor(f.u.leftCols(keep), mat.row_dims, {keep}, std::move(u_legs));

  std::vector<std::string> v_legs = {"bond"};
  v_legs.insert(v_legs.end(), mat.col_legs.begin(), mat.col_legs.end());
  out.right_isometry = to_tensor(f.vh.topRows(keep), {keep}, mat.col_dims, std::move(v_legs));
  return out;
}

/// nearest_unitary on a rank-2 tensor.
inline DenseTensor nearest_unitary(const DenseTensor& m) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1))
    throw std::invalid_argument("nearest_unitary: tensor must be a square matrix");
  Eigen::MatrixXcd u = nearest_unitary(Eigen::MatrixXcd(to_matrix(m, 1)));
  return to_tensor(u, {m.dim(0)}, {m.dim(1)}, m.legs());
}

/// eigh on a rank-2 tensor.
inline std::pair<Eigen::VectorXd, DenseTensor> eigh_tensor(const DenseTensor& m) {
  if (m.rank() != 2 || m.dim(0) != m.dim(1))
    throw std::invalid_argument("eigh: tensor must be a square matrix");
  auto [w, v] = eigh(Eigen::MatrixXcd(to_matrix(m, 1)));
  return {std::move(w), to_tensor(v, {m.dim(0)}, {m.dim(1)}, m.legs())};
}

}  // namespace entmix
