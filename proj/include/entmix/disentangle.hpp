#pragma once

//! Variational split of a blocked central tensor into a "fast" virtual pair
//! and a "slow" remainder.
//!
//! Given the three-leg central tensor C on (left, phys, right), find
//! unitaries U_L, V_R on the virtual legs and unit tensors psi (slow), phi
//! (fast) minimizing || (U_L^dag (x) 1 (x) V_R^dag) C  -  psi (x) phi ||^2.
//! Each rotated virtual leg factors as (fast, slow) with the fast factor
//! leading. The alternating scheme is exactly optimal in every sub-update:
//! (psi, phi) come from the leading singular pair across the slow|fast
//! split, and each unitary is the polar factor of its linear environment,
//! so the cost never increases.

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "entmix/linalg.hpp"
#include "entmix/tensor.hpp"
#include "entmix/umps.hpp"

namespace entmix {

struct Decomposition {
  Eigen::MatrixXcd u_l;     // D x D; column index = (fast, slow) composite
  Eigen::MatrixXcd v_r;     // D x D; same convention on the right leg
  DenseTensor psi_slow;     // (slow_left, phys, slow_right), unit norm
  Eigen::MatrixXcd phi_fast;  // fast_left x fast_right, unit norm
  long d_fast = 0;
  double residual_distance = 0.0;  // squared distance at the optimum
  double residual_entropy = 0.0;   // entropy of the fast-pair marginal
  int sweeps_used = 0;
  bool converged = false;
};

namespace detail {

inline Eigen::MatrixXcd haar_unitary(long n, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss;
  Eigen::MatrixXcd g(n, n);
  for (long j = 0; j < n; ++j)
    for (long i = 0; i < n; ++i) g(i, j) = cd(gauss(rng), gauss(rng));
  Eigen::HouseholderQR<Eigen::MatrixXcd> qr(g);
  Eigen::MatrixXcd q = qr.householderQ() * Eigen::MatrixXcd::Identity(n, n);
  const Eigen::MatrixXcd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (long j = 0; j < n; ++j) {
    const cd d = r(j, j);
    const double a = std::abs(d);
    if (a > 0.0) q.col(j) *= d / a;
  }
  return q;
}

/// Permutation seating consecutive virtual levels across the fast index:
/// column (f*d_slow + s) is basis vector (s*d_fast + f). The identity init
/// slices the leg into contiguous level blocks, whose leading slice can
/// factor out as a near-product "corner" whenever the Schmidt spectrum has
/// a weak tail; starting from this interleaved seating instead biases the
/// search towards genuinely entangled fast pairs.
inline Eigen::MatrixXcd interleave_unitary(long d, long d_fast) {
  const long d_slow = d / d_fast;
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Zero(d, d);
  for (long f = 0; f < d_fast; ++f)
    for (long s = 0; s < d_slow; ++s) u(s * d_fast + f, f * d_slow + s) = 1.0;
  return u;
}

/// C rotated by the current unitaries: T = (U_L^dag (x) 1 (x) V_R^dag) C,
/// returned on legs (left, phys, right).
inline DenseTensor rotated_central(const DenseTensor& c, const Eigen::MatrixXcd& u_l,
                                   const Eigen::MatrixXcd& v_r) {
  const long d_l = c.dim(0), d_r = c.dim(2);
  const DenseTensor ul_bar =
      to_tensor(u_l.conjugate(), {d_l}, {d_l}, {"row", "col"});
  const DenseTensor vr_bar =
      to_tensor(v_r.conjugate(), {d_r}, {d_r}, {"row", "col"});
  DenseTensor t = contract(c, ul_bar, {{0, 0}});   // (s, r, l')
  t = contract(t, vr_bar, {{1, 0}});               // (s, l', r')
  t = t.permute({1, 0, 2});
  t.set_legs({"left", "phys", "right"});
  return t;
}

/// The (slow x fast) matricization of a rotated central tensor: rows
/// (slow_l, phys, slow_r), columns (fast_l, fast_r).
inline Eigen::MatrixXcd slow_fast_matrix(const DenseTensor& t, long d_fast) {
  const long d_slow_l = t.dim(0) / d_fast;
  const long d_slow_r = t.dim(2) / d_fast;
  DenseTensor split = t.reshape({d_fast, d_slow_l, t.dim(1), d_fast, d_slow_r},
                                {"fl", "sl", "phys", "fr", "sr"});
  const DenseTensor grouped = split.permute({1, 2, 4, 0, 3});  // (sl, s, sr, fl, fr)
  return Eigen::MatrixXcd(
      to_matrix(grouped.reshape({d_slow_l * t.dim(1) * d_slow_r, d_fast * d_fast}), 1));
}

/// psi (x) phi assembled back into a (left, phys, right) tensor with the
/// fast factor leading on both virtual legs.
inline DenseTensor product_candidate(const DenseTensor& psi, const Eigen::MatrixXcd& phi) {
  const long d_sl = psi.dim(0), d_phys = psi.dim(1), d_sr = psi.dim(2);
  const long d_fast = phi.rows();
  DenseTensor out({d_fast * d_sl, d_phys, d_fast * d_sr}, {"left", "phys", "right"});
  for (long fl = 0; fl < d_fast; ++fl)
    for (long sl = 0; sl < d_sl; ++sl)
      for (long s = 0; s < d_phys; ++s)
        for (long fr = 0; fr < d_fast; ++fr)
          for (long sr = 0; sr < d_sr; ++sr)
            out.at({fl * d_sl + sl, s, fr * d_sr + sr}) =
                phi(fl, fr) * psi.at({sl, s, sr});
  return out;
}

struct AlternatingState {
  Eigen::MatrixXcd u_l, v_r;
  DenseTensor psi;
  Eigen::MatrixXcd phi;
  double overlap = 0.0;  // F = <C | (U_L (x) 1 (x) V_R) psi phi>, real >= 0
};

/// Exactly optimal (psi, phi) for the current unitaries; returns the new
/// overlap sigma_1.
inline double update_factors(const DenseTensor& c, AlternatingState& st, long d_fast) {
  const DenseTensor t = rotated_central(c, st.u_l, st.v_r);
  const Eigen::MatrixXcd m = slow_fast_matrix(t, d_fast);
  const MatSvd f = svd(m);
  const long d_slow_l = t.dim(0) / d_fast, d_slow_r = t.dim(2) / d_fast;
  st.psi = to_tensor(f.u.col(0), {d_slow_l, t.dim(1), d_slow_r}, {1},
                     {"left", "phys", "right", "one"})
               .reshape({d_slow_l, t.dim(1), d_slow_r}, {"left", "phys", "right"});
  st.phi.resize(d_fast, d_fast);
  for (long fl = 0; fl < d_fast; ++fl)
    for (long fr = 0; fr < d_fast; ++fr) st.phi(fl, fr) = f.vh(0, fl * d_fast + fr);
  return f.s(0);
}

/// SVD polar factor without the nonsingularity guard of nearest_unitary:
/// a rank-deficient environment is legitimate here (it happens whenever the
/// fast pair is exactly a product), the maximizer is then non-unique, and
/// the deterministic SVD convention picks one completion.
inline Eigen::MatrixXcd polar_unitary(const Eigen::MatrixXcd& a) {
  const MatSvd f = svd(a);
  return f.u * f.vh;
}

/// Exactly optimal unitary for one side given everything else: the polar
/// factor of the conjugated linear environment.
inline double update_unitaries(const DenseTensor& c, AlternatingState& st) {
  const DenseTensor cbar = c.conjugate();
  const DenseTensor q = product_candidate(st.psi, st.phi);
  const long d_l = c.dim(0), d_r = c.dim(2);

  // Left environment: F = sum_{l,l'} (U_L)_{l,l'} env(l,l').
  const DenseTensor vr_t = to_tensor(st.v_r, {d_r}, {d_r}, {"row", "col"});
  DenseTensor qv = contract(q, vr_t, {{2, 1}});             // (l', s, r)
  DenseTensor env_l = contract(cbar, qv, {{1, 1}, {2, 2}});  // (l, l')
  st.u_l = polar_unitary(Eigen::MatrixXcd(to_matrix(env_l, 1)).conjugate());

  // Right environment with the fresh U_L.
  const DenseTensor ul_t = to_tensor(st.u_l, {d_l}, {d_l}, {"row", "col"});
  DenseTensor uq = contract(ul_t, q, {{1, 0}});              // (l, s, r')
  DenseTensor env_r = contract(cbar, uq, {{0, 0}, {1, 1}});  // (r, r')
  const Eigen::MatrixXcd env_r_mat = Eigen::MatrixXcd(to_matrix(env_r, 1)).conjugate();
  st.v_r = polar_unitary(env_r_mat);
  // F after the exact V_R update is the nuclear norm of its environment.
  const MatSvd f = svd(env_r_mat);
  return f.s.sum();
}

}  // namespace detail

/// Reduced density matrix of the fast virtual pair of the *rotated* state:
/// rows/columns indexed (fast_left, fast_right). Pure iff the decomposition
/// is exact.
inline DensityBlock reduced_density(const BlockedCentral& blk, const Decomposition& dec) {
  DenseTensor t = detail::rotated_central(blk.c, dec.u_l, dec.v_r);
  const long d_fast = dec.d_fast;
  const long d_sl = t.dim(0) / d_fast, d_sr = t.dim(2) / d_fast;
  DenseTensor split =
      t.reshape({d_fast, d_sl, t.dim(1), d_fast, d_sr}, {"fl", "sl", "phys", "fr", "sr"});
  DenseTensor rho =
      contract(split, split.conjugate(), {{1, 1}, {2, 2}, {4, 4}});  // (fl, fr, flb, frb)
  DensityBlock out;
  out.matrix = to_matrix(rho.reshape({d_fast * d_fast, d_fast * d_fast}), 1);
  const cd tr = out.matrix.trace();
  out.matrix /= tr.real();  // strip truncation-level norm drift
  out.subsystem = "fast";
  return out;
}

/// Best-of-restarts alternating optimization. Restart 0 starts from the
/// identity unitaries, restart 1 from the interleave permutation, and the
/// remaining restarts from seeded Haar-random ones, so results are
/// deterministic.
///
/// Selection across restarts: an exact factorization (cost below 1e-10)
/// always wins — when the state truly splits, that split is the answer,
/// whether or not its fast pair is entangled. Otherwise the landscape is
/// plagued by "corner" optima whose fast pair is a near-product state:
/// they factor a weakly occupied slice of the virtual space and identify
/// no long-range pair (fast negativity numerically zero) while undercutting
/// the genuine pair on cost. Among inexact candidates, one that carries an
/// entangled fast pair (negativity above a small floor) at plausible cost
/// is therefore preferred over a cheaper near-product one; the overall
/// lowest cost is the fallback when no such candidate exists.
inline Decomposition optimize_decomposition(const BlockedCentral& blk, long d_fast,
                                            int max_sweeps = 500, double conv_tol = 1e-10,
                                            int n_restarts = 5) {
  const DenseTensor& c = blk.c;
  if (c.rank() != 3) throw std::invalid_argument("optimize_decomposition: need a rank-3 block");
  const long d_l = c.dim(0), d_r = c.dim(2);
  if (d_l != d_r)
    throw std::invalid_argument("optimize_decomposition: virtual legs must match");
  if (d_fast <= 1 || d_fast >= d_l)
    throw std::invalid_argument(
        fmt::format("optimize_decomposition: fast dimension {} is degenerate for D={}", d_fast,
                    d_l));
  if (d_l % d_fast != 0)
    throw std::invalid_argument(
        fmt::format("optimize_decomposition: fast dimension {} does not divide D={}", d_fast,
                    d_l));
  if (max_sweeps < 1 || n_restarts < 1)
    throw std::invalid_argument("optimize_decomposition: need at least one sweep and restart");

  const double c_norm2 = c.norm() * c.norm();
  std::mt19937_64 rng(0x5eedull + static_cast<unsigned long long>(d_fast));

  // Below kExactCost the factorization is exact to working precision and is
  // returned outright. Among inexact candidates, a fast pair below the
  // negativity floor is a product to working precision, and a cost above
  // the ceiling means the candidate never reached a decomposition worth
  // preferring on structural grounds.
  constexpr double kExactCost = 1e-10;
  constexpr double kProductNegativityFloor = 0.05;
  constexpr double kPlausibleCostCeiling = 0.5;

  struct Candidate {
    detail::AlternatingState st;
    double cost = 0.0;
    double negativity = 0.0;
    int sweeps = 0;
    bool converged = false;
  };
  std::vector<Candidate> found;
  found.reserve(static_cast<size_t>(n_restarts));

  for (int restart = 0; restart < n_restarts; ++restart) {
    detail::AlternatingState st;
    if (restart == 0) {
      st.u_l = Eigen::MatrixXcd::Identity(d_l, d_l);
      st.v_r = Eigen::MatrixXcd::Identity(d_r, d_r);
    } else if (restart == 1) {
      st.u_l = detail::interleave_unitary(d_l, d_fast);
      st.v_r = detail::interleave_unitary(d_r, d_fast);
    } else {
      st.u_l = detail::haar_unitary(d_l, rng);
      st.v_r = detail::haar_unitary(d_r, rng);
    }
    st.overlap = detail::update_factors(c, st, d_fast);

    double cost = c_norm2 + 1.0 - 2.0 * st.overlap;
    int sweeps = 0;
    bool converged = false;
    for (; sweeps < max_sweeps; ++sweeps) {
      const double f_unitary = detail::update_unitaries(c, st);
      if (f_unitary < st.overlap - 1e-12 * (1.0 + st.overlap))
        throw std::runtime_error("optimize_decomposition: overlap decreased (unitary update)");
      const double f_factors = detail::update_factors(c, st, d_fast);
      if (f_factors < f_unitary - 1e-12 * (1.0 + f_unitary))
        throw std::runtime_error("optimize_decomposition: overlap decreased (factor update)");
      st.overlap = f_factors;

      const double new_cost = c_norm2 + 1.0 - 2.0 * st.overlap;
      const double decrease = cost - new_cost;
      cost = new_cost;
      if (decrease < conv_tol * std::max(1.0, std::abs(cost))) {
        converged = true;
        ++sweeps;
        break;
      }
    }

    Candidate cand{std::move(st), cost, 0.0, sweeps, converged};
    Decomposition probe;
    probe.u_l = cand.st.u_l;
    probe.v_r = cand.st.v_r;
    probe.d_fast = d_fast;
    cand.negativity = log_negativity(reduced_density(blk, probe), d_fast, d_fast);
    found.push_back(std::move(cand));
  }

  const Candidate* best = nullptr;
  const Candidate* paired = nullptr;
  for (const Candidate& cand : found) {
    if (best == nullptr || cand.cost < best->cost) best = &cand;
    if (cand.negativity > kProductNegativityFloor && cand.cost < kPlausibleCostCeiling &&
        (paired == nullptr || cand.cost < paired->cost))
      paired = &cand;
  }
  const Candidate* pick = best->cost < kExactCost || paired == nullptr ? best : paired;

  Decomposition out;
  out.u_l = pick->st.u_l;
  out.v_r = pick->st.v_r;
  out.psi_slow = pick->st.psi;
  out.phi_fast = pick->st.phi;
  out.d_fast = d_fast;
  out.residual_distance = std::max(0.0, pick->cost);
  out.sweeps_used = pick->sweeps;
  out.converged = pick->converged;

  DensityBlock rho = reduced_density(blk, out);
  auto [w, v] = eigh(rho.matrix, 1e-8);
  double s = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w(i) > 1e-14) s -= w(i) * std::log(w(i));
  out.residual_entropy = s;
  return out;
}

struct ResidualPoint {
  long d_fast = 0;
  double residual_distance = 0.0;
  double residual_entropy = 0.0;
  double fast_negativity = 0.0;  // log-negativity of the fast pair
  bool ok = false;
  std::string error;
};

/// Per-time-point residual diagnostics over a trajectory of central blocks.
/// Optimizer failures are recorded in the point, not thrown.
inline std::vector<ResidualPoint> residual_entropy_series(
    const std::vector<BlockedCentral>& trajectory, long d_fast, int max_sweeps = 500,
    double conv_tol = 1e-10, int n_restarts = 5) {
  std::vector<ResidualPoint> out;
  out.reserve(trajectory.size());
  for (const BlockedCentral& blk : trajectory) {
    ResidualPoint p;
    p.d_fast = d_fast;
    try {
      const Decomposition dec =
          optimize_decomposition(blk, d_fast, max_sweeps, conv_tol, n_restarts);
      p.residual_distance = dec.residual_distance;
      p.residual_entropy = dec.residual_entropy;
      p.fast_negativity = log_negativity(reduced_density(blk, dec), d_fast, d_fast);
      p.ok = true;
    } catch (const std::exception& err) {
      p.error = err.what();
    }
    out.push_back(std::move(p));
  }
  return out;
}

/// One optimized decomposition per admissible candidate; candidates that
/// fail the divisibility/degeneracy preconditions are skipped.
inline std::map<long, Decomposition> scan_dfast(const BlockedCentral& blk,
                                                const std::vector<long>& candidates,
                                                int max_sweeps = 500, double conv_tol = 1e-10,
                                                int n_restarts = 5) {
  if (candidates.empty()) throw std::invalid_argument("scan_dfast: no candidates");
  std::map<long, Decomposition> out;
  for (long cand : candidates) {
    if (cand <= 1 || cand >= blk.c.dim(0) || blk.c.dim(0) % cand != 0) continue;
    out.emplace(cand, optimize_decomposition(blk, cand, max_sweeps, conv_tol, n_restarts));
  }
  return out;
}

}  // namespace entmix
