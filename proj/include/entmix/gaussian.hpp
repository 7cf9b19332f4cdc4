#pragma once

//! Exact free-fermion solution of the integrable transverse-field chain
//! (second-neighbor coupling absent), used as the validation oracle.
//!
//! Conventions (locked by the dense-diagonalization tests):
//!   * Jordan-Wigner with the field direction diagonal in fermion number:
//!     sigma^x_i = 1 - 2 a^dag_i a_i, so |X+> is the fermion vacuum.
//!     The coupling maps to sigma^z_i sigma^z_{i+1} =
//!     (a^dag_i - a_i)(a^dag_{i+1} + a_{i+1}).
//!   * Nambu vector alpha = (a_1..a_N, a^dag_1..a^dag_N)^T; the quadratic
//!     Hamiltonian is H = 1/2 alpha^dag M alpha + tr(A)/2 - g N with
//!     M = [[A, B], [-conj(B), -A^T]].
//!   * Correlation matrix Gamma_ij = <alpha_i alpha_j^dag>; evolution is
//!     Gamma(t) = exp(-iMt) Gamma exp(+iMt).
//!   * "periodic" means the even-fermion-parity sector (antiperiodic
//!     fermions), the sector that contains |X+> and its whole trajectory.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "entmix/linalg.hpp"

namespace entmix::gaussian {

enum class Boundary { Open, Periodic };

struct CorrelationMatrix {
  Eigen::MatrixXcd gamma;  // 2N x 2N
  int n_modes = 0;

  void validate(double tol = 1e-8) const {
    if (gamma.rows() != 2 * n_modes || gamma.cols() != 2 * n_modes)
      throw std::invalid_argument("CorrelationMatrix: size does not match n_modes");
    if ((gamma - gamma.adjoint()).norm() > 1e-10 * std::max(1.0, gamma.norm()))
      throw std::invalid_argument("CorrelationMatrix: not Hermitian");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(gamma);
    if (es.eigenvalues().minCoeff() < -tol || es.eigenvalues().maxCoeff() > 1.0 + tol)
      throw std::invalid_argument("CorrelationMatrix: eigenvalues outside [0, 1]");
  }
};

/// Particle-hole swap on the Nambu index space.
inline Eigen::MatrixXd ph_swap(int n) {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  x.topRightCorner(n, n).setIdentity();
  x.bottomLeftCorner(n, n).setIdentity();
  return x;
}

/// Nambu coefficient matrix M for H = -sum sigma^z sigma^z - g sum sigma^x
/// in the stated convention. For Boundary::Periodic the boundary bond
/// carries the even-parity (antiperiodic) sign.
inline Eigen::MatrixXcd quadratic_hamiltonian(int n, double g, Boundary boundary,
                                              double j2 = 0.0) {
  if (n < 2) throw std::invalid_argument("quadratic_hamiltonian: need at least 2 sites");
  if (j2 != 0.0)
    throw std::invalid_argument(
        "quadratic_hamiltonian: second-neighbor coupling breaks integrability; "
        "the free-fermion oracle covers only j2 = 0");
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(n, n);
  Eigen::MatrixXcd b = Eigen::MatrixXcd::Zero(n, n);
  for (int i = 0; i < n; ++i) a(i, i) = 2.0 * g;
  auto add_bond = [&](int i, int j, double sign) {
    // -sign * sigma^z_i sigma^z_j for j = i+1 (mod n):
    // hopping -sign*(a^dag_i a_j + h.c.), pairing -sign*a^dag_i a^dag_j + h.c.
    a(i, j) += -sign;
    a(j, i) += -sign;
    b(i, j) += -sign;
    b(j, i) += sign;
  };
  for (int i = 0; i + 1 < n; ++i) add_bond(i, i + 1, 1.0);
  if (boundary == Boundary::Periodic) add_bond(n - 1, 0, -1.0);  // antiperiodic sign

  Eigen::MatrixXcd m = Eigen::MatrixXcd::Zero(2 * n, 2 * n);
  m.topLeftCorner(n, n) = a;
  m.topRightCorner(n, n) = b;
  m.bottomLeftCorner(n, n) = -b.conjugate();
  m.bottomRightCorner(n, n) = -a.transpose();
  return m;
}

/// Gamma of |X+> (the fermion vacuum).
inline CorrelationMatrix initial_gamma(int n) {
  if (n < 2) throw std::invalid_argument("initial_gamma: need at least 2 sites");
  CorrelationMatrix c;
  c.n_modes = n;
  c.gamma = Eigen::MatrixXcd::Zero(2 * n, 2 * n);
  c.gamma.topLeftCorner(n, n).setIdentity();
  return c;
}

/// Gamma(t) by conjugation with the single-particle propagator exp(-iMt).
inline CorrelationMatrix evolve_gamma(const CorrelationMatrix& c, const Eigen::MatrixXcd& h,
                                      double t) {
  if (h.rows() != c.gamma.rows() || h.cols() != c.gamma.cols())
    throw std::invalid_argument("evolve_gamma: Nambu matrix size mismatch");
  const Eigen::MatrixXcd u = unitary_exp(h, t);
  CorrelationMatrix out;
  out.n_modes = c.n_modes;
  out.gamma = u * c.gamma * u.adjoint();
  out.gamma = 0.5 * (out.gamma + out.gamma.adjoint().eval());
  return out;
}

/// <sigma^x_i> = 2 Gamma_ii - 1 per site.
inline Eigen::VectorXd sigma_x_profile(const CorrelationMatrix& c) {
  Eigen::VectorXd out(c.n_modes);
  for (int i = 0; i < c.n_modes; ++i) out(i) = 2.0 * c.gamma(i, i).real() - 1.0;
  return out;
}

/// Gaussian entropy of a mode subset from restricted-Gamma eigenvalues:
/// S = -sum nu ln nu over all restricted eigenvalues (each mode contributes
/// its occupation and one-minus-occupation as an eigenvalue pair).
inline double subsystem_entropy(const Eigen::MatrixXcd& gamma_restricted) {
  auto [w, v] = eigh(gamma_restricted, 1e-8);
  double s = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double nu = std::clamp(w(i), 0.0, 1.0);
    if (nu > 1e-14) s -= nu * std::log(nu);
  }
  return s;
}

/// Restrict Gamma to a set of site indices (both Nambu blocks).
inline Eigen::MatrixXcd restrict_gamma(const CorrelationMatrix& c, const std::vector<int>& sites) {
  const int n = c.n_modes;
  const int m = static_cast<int>(sites.size());
  Eigen::MatrixXcd out(2 * m, 2 * m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      out(i, j) = c.gamma(sites[i], sites[j]);
      out(i, m + j) = c.gamma(sites[i], n + sites[j]);
      out(m + i, j) = c.gamma(n + sites[i], sites[j]);
      out(m + i, m + j) = c.gamma(n + sites[i], n + sites[j]);
    }
  }
  return out;
}

/// Entropy of a contiguous site interval [first, last].
inline double interval_entropy(const CorrelationMatrix& c, int first, int last) {
  std::vector<int> sites;
  for (int i = first; i <= last; ++i) sites.push_back(i);
  return subsystem_entropy(restrict_gamma(c, sites));
}

// ---------------------------------------------------------------------------
// Mode spectrum on the even-sector momentum grid.

struct ModeSpectrum {
  std::vector<double> k, dispersion, velocity, occupation, coherence;
};

/// Dispersion, group velocity, initial occupations and k/-k coherences of
/// the quench Hamiltonian eigenmodes, computed numerically by projecting the
/// Nambu matrix onto the (a_k, a^dag_{-k}) plane-wave pair basis.
inline ModeSpectrum mode_spectrum(double g, int n) {
  if (n < 4 || n % 2 != 0)
    throw std::invalid_argument("mode_spectrum: need an even chain of at least 4 sites");
  const Eigen::MatrixXcd m = quadratic_hamiltonian(n, g, Boundary::Periodic);

  auto plane_wave = [&](double k) {
    Eigen::VectorXcd u(n);
    for (int j = 0; j < n; ++j) u(j) = std::exp(cd(0.0, k * j)) / std::sqrt(double(n));
    return u;
  };

  // Solve the 2x2 Nambu block in the (a_k, a^dag_{-k}) pair basis for
  // positive antiperiodic momenta, then mirror: the k <-> -k data are equal
  // by construction, which keeps n(k) = n(-k) exact on the symmetric grid.
  const int half = n / 2;
  std::vector<double> eps(half), occ(half), coh(half);
  for (int j = 0; j < half; ++j) {
    const double k = M_PI * (2 * j + 1) / n;
    Eigen::MatrixXcd basis = Eigen::MatrixXcd::Zero(2 * n, 2);
    basis.col(0).head(n) = plane_wave(k);
    basis.col(1).tail(n) = plane_wave(-k).conjugate();
    const Eigen::MatrixXcd h2 = basis.adjoint() * m * basis;
    auto [w, v] = eigh(h2);
    // Positive-energy mode eta_k = v(0) a_k + v(1) a^dag_{-k}; in the vacuum
    // its occupation is |v(1)|^2 and the k/-k coherence |v(1)| |v(0)|.
    eps[j] = w(1);
    occ[j] = std::norm(v.col(1)(1));
    coh[j] = std::abs(v.col(1)(1)) * std::abs(v.col(1)(0));
  }

  ModeSpectrum out;
  for (int j = half - 1; j >= 0; --j) {
    out.k.push_back(-M_PI * (2 * j + 1) / n);
    out.dispersion.push_back(eps[j]);
    out.occupation.push_back(occ[j]);
    out.coherence.push_back(coh[j]);
  }
  for (int j = 0; j < half; ++j) {
    out.k.push_back(M_PI * (2 * j + 1) / n);
    out.dispersion.push_back(eps[j]);
    out.occupation.push_back(occ[j]);
    out.coherence.push_back(coh[j]);
  }
  // Group velocity by symmetric finite differences (one-sided at the ends).
  const int nk = static_cast<int>(out.k.size());
  out.velocity.resize(nk);
  for (int i = 0; i < nk; ++i) {
    const int lo = std::max(0, i - 1), hi = std::min(nk - 1, i + 1);
    out.velocity[i] = (out.dispersion[hi] - out.dispersion[lo]) / (out.k[hi] - out.k[lo]);
  }
  return out;
}

/// Largest |v(k)|; the finite-size comparison window is t < n / (2 max|v|).
inline double max_group_velocity(double g, int n = 200) {
  ModeSpectrum s = mode_spectrum(g, n);
  double vmax = 0.0;
  for (double v : s.velocity) vmax = std::max(vmax, std::abs(v));
  return vmax;
}

// ---------------------------------------------------------------------------
// Long-range pair identification.

struct LongRangePair {
  Eigen::VectorXcd l_coeffs, r_coeffs;  // full 2N Nambu coefficient vectors
  double overlap_with_s = 0.0;
};

namespace detail {

/// Minimize the real quadratic form J(u) = |G^T u|^2 + |G^T X conj(u)|^2
/// over unit-norm u in the complex span of the columns of basis.
/// Returns (u, J(u)).
inline std::pair<Eigen::VectorXcd, double> minimize_s_overlap(const Eigen::MatrixXcd& basis,
                                                              const Eigen::MatrixXcd& g_block,
                                                              const Eigen::MatrixXd& x_swap) {
  const int m = static_cast<int>(basis.cols());
  // Real coordinates c = (Re z, Im z), u = basis * z.
  auto eval_vec = [&](const Eigen::VectorXd& c) {
    Eigen::VectorXcd z(m);
    for (int i = 0; i < m; ++i) z(i) = cd(c(i), c(m + i));
    return Eigen::VectorXcd(basis * z);
  };
  // Bilinear form via its action on basis vectors of R^{2m}.
  Eigen::MatrixXd q(2 * m, 2 * m);
  std::vector<Eigen::VectorXcd> gu(2 * m), gxu(2 * m);
  for (int i = 0; i < 2 * m; ++i) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(2 * m);
    e(i) = 1.0;
    const Eigen::VectorXcd u = eval_vec(e);
    gu[i] = g_block.transpose() * u;
    gxu[i] = g_block.transpose() * (x_swap * u.conjugate());
  }
  for (int i = 0; i < 2 * m; ++i)
    for (int j = 0; j < 2 * m; ++j)
      q(i, j) = (gu[i].adjoint() * gu[j]).value().real() +
                (gxu[i].adjoint() * gxu[j]).value().real();
  q = 0.5 * (q + q.transpose().eval());

  // Norm Gram matrix of the real basis (basis columns are orthonormal, so
  // the Gram is the identity; keep the general solve for safety).
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(q);
  const Eigen::VectorXd c = es.eigenvectors().col(0);
  Eigen::VectorXcd u = eval_vec(c);
  u /= u.norm();
  const double j_min = std::max(0.0, es.eigenvalues()(0));
  return {u, j_min};
}

}  // namespace detail

/// Identify canonical modes l (supported on sites left of s_first) and r
/// (right of s_last) with minimal summed squared correlations with all
/// Nambu components of S, after discarding modes locally pure in L or R.
inline LongRangePair find_long_range_pair(const CorrelationMatrix& c, int s_first, int s_last,
                                          double purity_tol = 1e-8) {
  const int n = c.n_modes;
  if (s_first > s_last) throw std::invalid_argument("find_long_range_pair: empty S");
  if (s_first <= 0 || s_last >= n - 1)
    throw std::invalid_argument("find_long_range_pair: L and R must both be nonempty");

  std::vector<int> l_sites, s_sites, r_sites;
  for (int i = 0; i < s_first; ++i) l_sites.push_back(i);
  for (int i = s_first; i <= s_last; ++i) s_sites.push_back(i);
  for (int i = s_last + 1; i < n; ++i) r_sites.push_back(i);

  auto nambu_indices = [&](const std::vector<int>& sites) {
    std::vector<int> idx;
    for (int s : sites) idx.push_back(s);
    for (int s : sites) idx.push_back(n + s);
    return idx;
  };
  const std::vector<int> s_idx = nambu_indices(s_sites);

  auto solve_side = [&](const std::vector<int>& sites) {
    const std::vector<int> idx = nambu_indices(sites);
    const int dim = static_cast<int>(idx.size());
    Eigen::MatrixXcd gamma_side = restrict_gamma(c, sites);
    auto [w, v] = eigh(gamma_side, 1e-8);

    // One canonical representative per particle-hole pair, impure only.
    // The partner of an eigenvector at nu is its PH conjugate at 1 - nu,
    // so taking nu <= 1/2 picks one per pair.
    Eigen::MatrixXcd reps(dim, dim);
    int n_reps = 0;
    for (int i = 0; i < dim; ++i) {
      if (w(i) < purity_tol || w(i) > 1.0 - purity_tol) continue;  // locally pure
      if (w(i) > 0.5 + 1e-12) continue;                            // pair partner
      reps.col(n_reps++) = v.col(i);
    }
    Eigen::MatrixXcd g_block(dim, s_idx.size());
    for (int i = 0; i < dim; ++i)
      for (std::size_t j = 0; j < s_idx.size(); ++j) g_block(i, j) = c.gamma(idx[i], s_idx[j]);

    Eigen::VectorXcd u_local;
    double overlap = 0.0;
    if (n_reps == 0) {
      // Fully pure side (e.g. a product state): degenerate optimum, return
      // the first canonical basis mode deterministically.
      u_local = Eigen::VectorXcd::Zero(dim);
      u_local(0) = 1.0;
      overlap = (g_block.transpose() * u_local).squaredNorm() +
                (g_block.transpose() * (ph_swap(dim / 2) * u_local.conjugate())).squaredNorm();
    } else {
      auto [u, j_min] =
          detail::minimize_s_overlap(reps.leftCols(n_reps), g_block, ph_swap(dim / 2));
      u_local = u;
      overlap = j_min;
    }
    // Embed into the full 2N Nambu space.
    Eigen::VectorXcd full = Eigen::VectorXcd::Zero(2 * n);
    for (int i = 0; i < dim; ++i) full(idx[i]) = u_local(i);
    return std::make_pair(full, overlap);
  };

  auto [l_full, l_overlap] = solve_side(l_sites);
  auto [r_full, r_overlap] = solve_side(r_sites);
  LongRangePair out;
  out.l_coeffs = l_full;
  out.r_coeffs = r_full;
  out.overlap_with_s = l_overlap + r_overlap;
  return out;
}

namespace detail {

/// Fermionic Wick expectation of a product of mode operators given the
/// canonical-mode correlation data K_{ij} = <beta_i beta_j^dag> for the
/// extended list beta = (modes..., mode daggers...). Each operator in the
/// product is an index into beta.
inline cd wick_expectation(const Eigen::MatrixXcd& gamma_modes,
                           const Eigen::MatrixXd& x_swap, std::vector<int> ops) {
  if (ops.empty()) return cd(1.0, 0.0);
  if (ops.size() % 2 == 1) return cd(0.0, 0.0);  // parity symmetry
  // <beta_i beta_j> = Gamma_i,X(j): beta_j = beta^dag_{X(j)}.
  auto pair_value = [&](int i, int j) {
    int xj = 0;
    for (int k = 0; k < x_swap.rows(); ++k)
      if (x_swap(j, k) != 0.0) xj = k;
    return gamma_modes(i, xj);
  };
  if (ops.size() == 2) return pair_value(ops[0], ops[1]);
  cd total(0.0, 0.0);
  double sign = 1.0;
  for (std::size_t j = 1; j < ops.size(); ++j) {
    std::vector<int> rest;
    for (std::size_t k = 1; k < ops.size(); ++k)
      if (k != j) rest.push_back(ops[k]);
    total += sign * pair_value(ops[0], ops[j]) * wick_expectation(gamma_modes, x_swap, rest);
    sign = -sign;
  }
  return total;
}

}  // namespace detail

/// Dense two-mode density matrix in the (n_l, n_r) Fock basis
/// {|00>, |01>, |10>, |11>} reconstructed from Gamma by Wick's theorem.
inline Eigen::MatrixXcd two_mode_density(const CorrelationMatrix& c, const Eigen::VectorXcd& l,
                                         const Eigen::VectorXcd& r) {
  const int n = c.n_modes;
  const Eigen::MatrixXd x2n = ph_swap(n);
  // beta = (l, r, l^dag, r^dag); rows of T are their alpha-coefficients.
  Eigen::MatrixXcd t(4, 2 * n);
  t.row(0) = l.transpose();
  t.row(1) = r.transpose();
  t.row(2) = (x2n * l.conjugate()).transpose();
  t.row(3) = (x2n * r.conjugate()).transpose();
  const Eigen::MatrixXcd k = t * c.gamma * t.adjoint();
  const Eigen::MatrixXd x4 = ph_swap(2);

  // Operator aliases into beta: l=0, r=1, l^dag=2, r^dag=3.
  constexpr int L = 0, R = 1, LD = 2, RD = 3;
  auto expect = [&](std::vector<int> ops) { return detail::wick_expectation(k, x4, std::move(ops)); };

  // |mu><nu| = (creators of mu) P0 (annihilators of nu, reversed), with the
  // vacuum projector P0 = (1 - n_l)(1 - n_r) expanded into operator strings.
  auto element = [&](int mu, int nu) {
    const int mu_l = (mu >> 1) & 1, mu_r = mu & 1;
    const int nu_l = (nu >> 1) & 1, nu_r = nu & 1;
    cd total(0.0, 0.0);
    // P0 expansion: 1 - l^dag l - r^dag r + l^dag l r^dag r.
    const std::vector<std::pair<double, std::vector<int>>> p0 = {
        {1.0, {}}, {-1.0, {LD, L}}, {-1.0, {RD, R}}, {1.0, {LD, L, RD, R}}};
    for (const auto& [coeff, core] : p0) {
      std::vector<int> ops;
      if (mu_l) ops.push_back(LD);
      if (mu_r) ops.push_back(RD);
      ops.insert(ops.end(), core.begin(), core.end());
      if (nu_r) ops.push_back(R);
      if (nu_l) ops.push_back(L);
      total += coeff * expect(std::move(ops));
    }
    return total;
  };

  Eigen::MatrixXcd rho(4, 4);
  for (int mu = 0; mu < 4; ++mu)
    for (int nu = 0; nu < 4; ++nu) rho(mu, nu) = element(mu, nu);
  rho = 0.5 * (rho + rho.adjoint().eval());
  return rho;
}

/// (residual_entropy, pair_negativity) of an identified pair:
/// residual_entropy is the deviation of the joint {l,r} u S Gaussian entropy
/// from additivity, S({l,r}) + S(S) - S({l,r} u S) >= 0; the negativity is
/// log2 of the partial-transpose trace norm of the dense two-mode state.
inline std::pair<double, double> pair_entanglement(const CorrelationMatrix& c,
                                                   const LongRangePair& pair, int s_first,
                                                   int s_last) {
  const int n = c.n_modes;
  const Eigen::MatrixXd x2n = ph_swap(n);
  for (const Eigen::VectorXcd* u : {&pair.l_coeffs, &pair.r_coeffs}) {
    if (std::abs(u->norm() - 1.0) > 1e-8 ||
        std::abs((u->transpose() * x2n * (*u)).value()) > 1e-6)
      throw std::invalid_argument("pair_entanglement: mode is not canonical");
  }

  // Extended canonical set: (l, r, a_s..., daggers).
  const int ns = s_last - s_first + 1;
  const int m = 2 + ns;
  Eigen::MatrixXcd t(2 * m, 2 * n);
  t.setZero();
  t.row(0) = pair.l_coeffs.transpose();
  t.row(1) = pair.r_coeffs.transpose();
  for (int i = 0; i < ns; ++i) t.row(2 + i)(s_first + i) = 1.0;
  for (int i = 0; i < m; ++i)
    t.row(m + i) = (x2n * t.row(i).transpose().conjugate()).transpose();
  const Eigen::MatrixXcd k = t * c.gamma * t.adjoint();

  auto sub_entropy = [&](const std::vector<int>& mode_ids) {
    std::vector<int> idx;
    for (int id : mode_ids) idx.push_back(id);
    for (int id : mode_ids) idx.push_back(m + id);
    Eigen::MatrixXcd sub(idx.size(), idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < idx.size(); ++j) sub(i, j) = k(idx[i], idx[j]);
    return subsystem_entropy(sub);
  };
  std::vector<int> lr = {0, 1}, s_modes, all;
  for (int i = 0; i < ns; ++i) s_modes.push_back(2 + i);
  for (int i = 0; i < m; ++i) all.push_back(i);
  const double residual = sub_entropy(lr) + sub_entropy(s_modes) - sub_entropy(all);

  const Eigen::MatrixXcd rho = two_mode_density(c, pair.l_coeffs, pair.r_coeffs);
  // Ordinary partial transpose on the second mode.
  Eigen::MatrixXcd pt(4, 4);
  for (int i1 = 0; i1 < 2; ++i1)
    for (int i2 = 0; i2 < 2; ++i2)
      for (int j1 = 0; j1 < 2; ++j1)
        for (int j2 = 0; j2 < 2; ++j2) pt(2 * i1 + j2, 2 * j1 + i2) = rho(2 * i1 + i2, 2 * j1 + j2);
  auto [w, v] = eigh(pt);
  const double trace_norm = w.cwiseAbs().sum();
  const double negativity = std::log2(std::max(trace_norm, 1e-300));
  return {std::max(0.0, residual), std::max(0.0, negativity)};
}

/// Absolute contribution of the pair's cross coherences to the
/// <a^dag a> block, as an N x N grid.
inline Eigen::MatrixXd correlation_footprint(const CorrelationMatrix& c,
                                             const LongRangePair& pair) {
  const int n = c.n_modes;
  const Eigen::MatrixXd x2n = ph_swap(n);
  Eigen::MatrixXcd t(4, 2 * n);
  t.row(0) = pair.l_coeffs.transpose();
  t.row(1) = pair.r_coeffs.transpose();
  t.row(2) = (x2n * pair.l_coeffs.conjugate()).transpose();
  t.row(3) = (x2n * pair.r_coeffs.conjugate()).transpose();
  Eigen::MatrixXcd k = t * c.gamma * t.adjoint();
  // Keep only l <-> r cross correlations (the coherences of the pair).
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      if ((i % 2) == (j % 2)) k(i, j) = 0.0;
  const Eigen::MatrixXcd contrib = t.adjoint() * k * t;
  return contrib.bottomRightCorner(n, n).cwiseAbs();
}

/// Many-body ground energy from filled negative Nambu modes:
/// E = (1/2) sum_{w<0} w + (1/2) tr A - g N.
inline double ground_energy(const Eigen::MatrixXcd& m, double g) {
  const int n2 = static_cast<int>(m.rows());
  const int n = n2 / 2;
  auto [w, v] = eigh(m);
  double e = 0.0;
  for (int i = 0; i < n2; ++i)
    if (w(i) < 0.0) e += 0.5 * w(i);
  e += 0.5 * m.topLeftCorner(n, n).real().trace();
  e -= g * n;
  return e;
}

}  // namespace entmix::gaussian
