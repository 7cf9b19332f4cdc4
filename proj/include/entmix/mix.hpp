#pragma once
// Mixing step: convert the long-range entangled pair identified by a
// Decomposition into a mixture by substituting the pair state with the
// product of its marginals. The result is realized as a purified uniform
// MPS whose bond dimension across each block cut shrinks by d_fast and
// whose purification sites carry the marginal ancillas. Includes the
// gradient-based refinement that matches the pre-mix reduced density
// matrices, purification-leg compression, and the threshold controller.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <fmt/format.h>

#include "entmix/disentangle.hpp"
#include "entmix/linalg.hpp"
#include "entmix/tensor.hpp"
#include "entmix/umps.hpp"

namespace entmix {

/// Local replacement tensors for one block and its two adjacent cuts:
///   m_l ("purif","left","right"): d_p x D x D'   (enters from the old bond)
///   b_l ("phys","left","right"):  d^l x D' x D'  (slow block tensor)
///   n_r ("purif","left","right"): d_p x D' x D   (exits into the old bond)
/// with D' = D / d_p. The induced window densities
///   rho_LS = tr_{purif,right} (m_l b_l)(m_l b_l)^dag
///   rho_SR = tr_{purif,left}  (b_l n_r)(b_l n_r)^dag
/// live on the same index spaces as the pre-mix reduced density matrices
/// and are positive by construction.
struct PurificationAnsatz {
  DenseTensor m_l, b_l, n_r;

  long d_p() const { return m_l.dim(0); }
  long bond_in() const { return m_l.dim(1); }
  long bond_slow() const { return m_l.dim(2); }

  void validate(double tol = 1e-8) const;
};

struct MixReport {
  long pre_bond_dim = 0, post_bond_dim = 0;
  long pre_purification_dim = 1, post_purification_dim = 1;
  double marginal_error_ls = 0.0, marginal_error_sr = 0.0;
  double residual_entropy = 0.0;
  int optimizer_iterations = 0;
  bool stagnated = false;
  std::vector<double> cost_history;  // heuristic path only
};

enum class MixMode { Simple, Heuristic };

namespace detail {

/// Purification factor P of a Hermitian PSD matrix rho: P = W sqrt(w) in the
/// eigenbasis, so that P P^dag = rho. Tiny negative eigenvalues are clipped.
inline Eigen::MatrixXcd purify_marginal(const Eigen::MatrixXcd& rho) {
  auto [w, v] = eigh(rho);
  Eigen::VectorXd root = w.cwiseMax(0.0).cwiseSqrt();
  return v * root.asDiagonal();
}

/// W(b, l, s, sr) = sum_sl m_l(b, l, sl) b_l(s, sl, sr).
inline DenseTensor ls_window(const PurificationAnsatz& a) {
  return contract(a.m_l, a.b_l, {{2, 1}});
}

/// V(s, sl, a, m) = sum_sr b_l(s, sl, sr) n_r(a, sr, m).
inline DenseTensor sr_window(const PurificationAnsatz& a) {
  return contract(a.b_l, a.n_r, {{2, 1}});
}

/// Induced (left-virtual x block) density, rows indexed l*d_phys + s.
inline Eigen::MatrixXcd window_ls(const PurificationAnsatz& a) {
  DenseTensor w = ls_window(a).permute({1, 2, 0, 3});  // (l, s, b, sr)
  Eigen::MatrixXcd m = to_matrix(w, 2);
  return m * m.adjoint();
}

/// Induced (block x right-virtual) density, rows indexed s*D + m.
inline Eigen::MatrixXcd window_sr(const PurificationAnsatz& a) {
  DenseTensor w = sr_window(a).permute({0, 3, 2, 1});  // (s, m, a, sl)
  Eigen::MatrixXcd m = to_matrix(w, 2);
  return m * m.adjoint();
}

inline double refine_cost(const PurificationAnsatz& a, const Eigen::MatrixXcd& t_ls,
                          const Eigen::MatrixXcd& t_sr) {
  return (window_ls(a) - t_ls).squaredNorm() + (window_sr(a) - t_sr).squaredNorm();
}

struct RefineGradient {
  DenseTensor g_ml, g_b, g_nr;  // Wirtinger gradients d cost / d conj(tensor)
  double cost = 0.0;
};

inline DenseTensor lincomb(const DenseTensor& t, const DenseTensor& u, cd coef) {
  DenseTensor out = t;
  for (long i = 0; i < out.size(); ++i) out[i] += coef * u[i];
  return out;
}

inline double norm2(const DenseTensor& t) {
  double n = 0.0;
  for (long i = 0; i < t.size(); ++i) n += std::norm(t[i]);
  return n;
}

/// Analytic gradient of ||rho_LS - T_LS||^2 + ||rho_SR - T_SR||^2 with
/// respect to the conjugated ansatz tensors. Both densities are sesquilinear
/// in each tensor, so each gradient is one contraction of the Hermitian
/// deviation with the remaining network.
inline RefineGradient refine_gradient(const PurificationAnsatz& a,
                                      const Eigen::MatrixXcd& t_ls,
                                      const Eigen::MatrixXcd& t_sr) {
  const long dd = a.bond_in(), ds = a.b_l.dim(0);
  RefineGradient out;

  DenseTensor w = ls_window(a);  // (b, l, s, sr)
  DenseTensor v = sr_window(a);  // (s, sl, a, m)

  Eigen::MatrixXcd rho_ls;
  {
    DenseTensor wp = w.permute({1, 2, 0, 3});
    Eigen::MatrixXcd m = to_matrix(wp, 2);
    rho_ls = m * m.adjoint();
  }
  Eigen::MatrixXcd rho_sr;
  {
    DenseTensor vp = v.permute({0, 3, 2, 1});
    Eigen::MatrixXcd m = to_matrix(vp, 2);
    rho_sr = m * m.adjoint();
  }
  const Eigen::MatrixXcd d_ls = rho_ls - t_ls;
  const Eigen::MatrixXcd d_sr = rho_sr - t_sr;
  out.cost = d_ls.squaredNorm() + d_sr.squaredNorm();

  DenseTensor delta_ls = to_tensor(d_ls, {dd, ds}, {dd, ds}, {"l0", "s0", "l1", "s1"});
  DenseTensor delta_sr = to_tensor(d_sr, {ds, dd}, {ds, dd}, {"s0", "m0", "s1", "m1"});

  // X(l0, s0, b, sr) = sum_{l1 s1} Delta_LS(l0 s0, l1 s1) W(b, l1, s1, sr).
  DenseTensor x = contract(delta_ls, w, {{2, 1}, {3, 2}});
  // g_ml(b, l0, sl0) = 2 sum_{s0 sr} X(l0, s0, b, sr) conj(b_l)(s0, sl0, sr).
  out.g_ml = contract(x, a.b_l.conjugate(), {{1, 0}, {3, 2}}).permute({1, 0, 2});
  // LS part of g_b(s0, sl0, sr) = 2 sum_{l0 b} X(l0, s0, b, sr) conj(m_l)(b, l0, sl0).
  DenseTensor g_b_ls = contract(x, a.m_l.conjugate(), {{0, 1}, {2, 0}}).permute({0, 2, 1});

  // Z(s0, m0, sl, a) = sum_{s1 m1} Delta_SR(s0 m0, s1 m1) V(s1, sl, a, m1).
  DenseTensor z = contract(delta_sr, v, {{2, 0}, {3, 3}});
  // g_nr(a, sr0, m0) = 2 sum_{s0 sl} Z(s0, m0, sl, a) conj(b_l)(s0, sl, sr0).
  out.g_nr = contract(z, a.b_l.conjugate(), {{0, 0}, {2, 1}}).permute({1, 2, 0});
  // SR part of g_b(s0, sl, sr0) = 2 sum_{m0 a} Z(s0, m0, sl, a) conj(n_r)(a, sr0, m0).
  DenseTensor g_b_sr = contract(z, a.n_r.conjugate(), {{1, 2}, {3, 0}});

  out.g_b = lincomb(g_b_ls, g_b_sr, cd(1.0, 0.0));
  for (long i = 0; i < out.g_ml.size(); ++i) out.g_ml[i] *= 2.0;
  for (long i = 0; i < out.g_b.size(); ++i) out.g_b[i] *= 2.0;
  for (long i = 0; i < out.g_nr.size(); ++i) out.g_nr[i] *= 2.0;
  out.g_ml.set_legs({"purif", "left", "right"});
  out.g_b.set_legs({"phys", "left", "right"});
  out.g_nr.set_legs({"purif", "left", "right"});
  return out;
}

/// Cyclic relabeling of the unit cell: site j of the result is site (j+k)
/// mod n of the input. A uniform state is invariant under this shift, so
/// the gauge tag carries over; it only changes which block sits at index 0.
inline UniformMps shifted_state(const UniformMps& s, int k) {
  const int n = s.n_sites();
  k = ((k % n) + n) % n;
  if (k == 0) return s;
  UniformMps out;
  out.gauge = s.gauge;
  for (int j = 0; j < n; ++j) {
    out.cell.push_back(s.site(j + k));
    out.roles.push_back(s.role(j + k));
    out.schmidt.push_back(s.bond_schmidt(j + k));
  }
  return out;
}

inline std::vector<int> physical_positions(const UniformMps& s) {
  std::vector<int> out;
  for (int k = 0; k < s.n_sites(); ++k)
    if (s.role(k) == SiteRole::Physical) out.push_back(k);
  if (out.empty()) throw std::invalid_argument("mix: cell has no physical blocks");
  return out;
}

/// Build the post-mix purified cell: every physical block i is replaced by
/// pieces[i].b_l, and each cut collects n_r(i), the old purification sites
/// sitting on that cut, and m_l(i+1) into a single grouped purification
/// site. The raw cell is then canonicalized (which also renormalizes).
inline UniformMps assemble_mixed(const UniformMps& s,
                                 const std::vector<PurificationAnsatz>& pieces_in) {
  const std::vector<int> blocks = physical_positions(s);
  const int nb = static_cast<int>(blocks.size());
  std::vector<PurificationAnsatz> pieces = pieces_in;
  if (static_cast<int>(pieces.size()) == 1 && nb > 1)
    pieces.resize(static_cast<std::size_t>(nb), pieces[0]);
  if (static_cast<int>(pieces.size()) != nb)
    throw std::invalid_argument("mix: one replacement per physical block required");

  const int n = s.n_sites();
  UniformMps out;
  out.gauge = GaugeTag::Raw;
  for (int bi = 0; bi < nb; ++bi) {
    const int i = blocks[bi];
    const int ni = static_cast<int>((bi + 1) % pieces.size());
    const PurificationAnsatz& p = pieces[static_cast<std::size_t>(bi)];
    if (p.b_l.dim(0) != s.phys_dim(i))
      throw std::invalid_argument(
          fmt::format("mix: block dimension mismatch ({} vs {})", p.b_l.dim(0), s.phys_dim(i)));
    if (p.m_l.dim(1) != s.site(i).dim(1) || p.n_r.dim(2) != s.site(i).dim(2))
      throw std::invalid_argument("mix: replacement bond dimensions do not match the state");

    DenseTensor b = p.b_l;
    b.set_legs({"phys", "left", "right"});
    out.cell.push_back(b);
    out.roles.push_back(SiteRole::Physical);
    out.schmidt.emplace_back();

    // Grouped purifier on the cut right of block i: n_r, then any existing
    // purification sites, then m_l of the next block. Legs accumulate as
    // (a, sr, c_1, ..., c_k, bond) until the final bond is consumed.
    //
    // The replacement pieces factor the window tensor c = A lambda, so the
    // old bond between consecutive windows carries lambda twice; dividing
    // one Schmidt vector out restores the chain ...c 1/lambda c... The
    // guarded inverse ignores numerically dead Schmidt directions.
    DenseTensor t = p.n_r;
    {
      const Eigen::VectorXd& lam = s.bond_schmidt(i);
      const double floor_val = 1e-12 * lam(0);
      const long dm = t.dim(2);
      for (long e = 0; e < t.size(); ++e) {
        const long mi = e % dm;
        t[e] *= lam(mi) > floor_val ? 1.0 / lam(mi) : 0.0;
      }
    }
    int j = (i + 1) % n, extra = 0;
    while (s.role(j) == SiteRole::Purification) {
      t = contract(t, s.site(j), {{t.rank() - 1, 1}});
      ++extra;
      j = (j + 1) % n;
      if (extra > n) throw std::invalid_argument("mix: malformed cell");
    }
    if (j != blocks[static_cast<std::size_t>((bi + 1) % nb)])
      throw std::invalid_argument("mix: blocks must be separated by purification sites only");
    t = contract(t, pieces[static_cast<std::size_t>(ni)].m_l, {{t.rank() - 1, 1}});
    // Legs now (a, sr, c_1..c_k, b, sl); group ancillas in front.
    std::vector<int> perm = {0};
    for (int e = 0; e < extra; ++e) perm.push_back(2 + e);
    perm.push_back(2 + extra);
    perm.push_back(1);
    perm.push_back(3 + extra);
    t = t.permute(perm);
    long d_pur = 1;
    for (int e = 0; e < 2 + extra; ++e) d_pur *= t.dim(e);
    const long dl = t.dim(t.rank() - 2), dr = t.dim(t.rank() - 1);
    t = t.reshape({d_pur, dl, dr}, {"phys", "left", "right"});
    out.cell.push_back(std::move(t));
    out.roles.push_back(SiteRole::Purification);
    out.schmidt.emplace_back();
  }
  for (std::size_t k = 0; k < out.cell.size(); ++k) {
    const long dr = out.cell[k].dim(2);
    out.schmidt[k] = Eigen::VectorXd::Constant(dr, 1.0 / std::sqrt(static_cast<double>(dr)));
  }
  return canonicalize(out);
}

}  // namespace detail

inline void PurificationAnsatz::validate(double tol) const {
  if (m_l.rank() != 3 || b_l.rank() != 3 || n_r.rank() != 3)
    throw std::invalid_argument("PurificationAnsatz: tensors must be rank 3");
  if (m_l.dim(2) != b_l.dim(1) || b_l.dim(2) != n_r.dim(1))
    throw std::invalid_argument("PurificationAnsatz: slow bond dimensions inconsistent");
  if (m_l.dim(0) != n_r.dim(0))
    throw std::invalid_argument("PurificationAnsatz: purification dimensions inconsistent");
  const Eigen::MatrixXcd ls = detail::window_ls(*this);
  const Eigen::MatrixXcd sr = detail::window_sr(*this);
  if (std::abs(ls.trace().real() - 1.0) > tol || std::abs(sr.trace().real() - 1.0) > tol)
    throw std::invalid_argument("PurificationAnsatz: induced density is not trace-one");
}

/// Regroup the decomposition into the local replacement tensors:
///   m_l(b; m, sl) = sum_g U_L(m, (g, sl)) P_l(g, b)
///   b_l           = psi_slow on legs (phys, left, right)
///   n_r(a; sr, m) = sum_f V_R(m, (f, sr)) P_r(f, a)
/// where P_l purifies the fast pair's left marginal phi phi^dag and P_r its
/// right marginal phi^T conj(phi). Composite bond columns are fast-major.
inline PurificationAnsatz init_ansatz(const Decomposition& dec, long d_p = 2) {
  const long dd = dec.u_l.rows();
  if (d_p < 1 || dd % d_p != 0)
    throw std::invalid_argument(
        fmt::format("init_ansatz: d_p = {} does not divide the bond dimension {}", d_p, dd));
  if (d_p != dec.d_fast)
    throw std::invalid_argument(fmt::format(
        "init_ansatz: d_p = {} must match the decomposition's fast dimension {} (the "
        "purification legs carry the fast-pair marginals)",
        d_p, dec.d_fast));
  const long fast = dec.d_fast, slow = dd / fast;

  const Eigen::MatrixXcd rho_l = dec.phi_fast * dec.phi_fast.adjoint();
  const Eigen::MatrixXcd rho_r = dec.phi_fast.transpose() * dec.phi_fast.conjugate();
  const Eigen::MatrixXcd p_l = detail::purify_marginal(rho_l);
  const Eigen::MatrixXcd p_r = detail::purify_marginal(rho_r);

  PurificationAnsatz a;
  {
    DenseTensor u3 = to_tensor(dec.u_l, {dd}, {fast, slow}, {"m", "g", "sl"});
    DenseTensor pl = to_tensor(p_l, {fast}, {fast}, {"g", "b"});
    a.m_l = contract(u3, pl, {{1, 0}}).permute({2, 0, 1});  // (b, m, sl)
    a.m_l.set_legs({"purif", "left", "right"});
  }
  a.b_l = dec.psi_slow.permute({1, 0, 2});
  a.b_l.set_legs({"phys", "left", "right"});
  {
    DenseTensor v3 = to_tensor(dec.v_r, {dd}, {fast, slow}, {"m", "f", "sr"});
    DenseTensor pr = to_tensor(p_r, {fast}, {fast}, {"f", "a"});
    a.n_r = contract(v3, pr, {{1, 0}}).permute({2, 1, 0});  // (a, sr, m)
    a.n_r.set_legs({"purif", "left", "right"});
  }
  return a;
}

namespace detail {

inline long max_bond(const UniformMps& s) {
  long m = 0;
  for (int k = 0; k < s.n_sites(); ++k) m = std::max(m, s.site(k).dim(2));
  return m;
}

inline long max_purification(const UniformMps& s) {
  long m = 1;
  for (int k = 0; k < s.n_sites(); ++k)
    if (s.role(k) == SiteRole::Purification) m = std::max(m, s.phys_dim(k));
  return m;
}

}  // namespace detail

/// Substitute the fast pair by the product of its marginals at every block
/// cut simultaneously. The same decomposition is applied to each physical
/// block, which presumes a block-translation-invariant cell (use
/// mix_controller for evolved period-2 cells, which get per-parity
/// decompositions).
inline std::pair<UniformMps, MixReport> simple_mix(const UniformMps& state,
                                                   const Decomposition& dec) {
  if (dec.d_fast <= 1)
    throw std::invalid_argument("simple_mix: d_fast must exceed 1 (identity mix rejected)");
  if (state.gauge != GaugeTag::LeftCanonical)
    throw std::invalid_argument("simple_mix: state must be left-canonical");
  const long dd = dec.u_l.rows();
  const std::vector<int> blocks = detail::physical_positions(state);
  for (int i : blocks)
    if (state.site(i).dim(1) != dd || state.site(i).dim(2) != dd)
      throw std::invalid_argument(fmt::format(
          "simple_mix: decomposition bond dimension {} does not match the state", dd));

  const PurificationAnsatz pieces = init_ansatz(dec, dec.d_fast);

  MixReport rep;
  rep.pre_bond_dim = detail::max_bond(state);
  rep.pre_purification_dim = detail::max_purification(state);
  rep.residual_entropy = dec.residual_entropy;
  rep.optimizer_iterations = 0;
  {
    BlockedCentral blk = block_central(state, 1);
    rep.marginal_error_ls =
        (detail::window_ls(pieces) - reduced_density(blk, ReducedSide::LS).matrix).norm();
    rep.marginal_error_sr =
        (detail::window_sr(pieces) - reduced_density(blk, ReducedSide::SR).matrix).norm();
  }

  UniformMps out = detail::assemble_mixed(state, {pieces});
  rep.post_bond_dim = detail::max_bond(out);
  rep.post_purification_dim = detail::max_purification(out);
  return {std::move(out), std::move(rep)};
}

struct RefineOptions {
  int max_iterations = 2000;
  double grad_tol = 1e-9;
  double armijo_c = 1e-4;
  int max_backtracks = 40;
  double initial_step = 1.0;
};

/// Gradient descent with Armijo backtracking on
///   cost = ||rho_LS(ansatz) - T_LS||_F^2 + ||rho_SR(ansatz) - T_SR||_F^2.
/// Targets are Hermitized and trace-normalized. Stops when the Wirtinger
/// gradient norm falls below grad_tol or after max_iterations; if the line
/// search exhausts its backtracks the best ansatz so far is returned with
/// the stagnation flag set. The accepted cost sequence is non-increasing.
inline std::pair<PurificationAnsatz, MixReport> heuristic_refine(
    const PurificationAnsatz& ansatz, const DensityBlock& rho_ls, const DensityBlock& rho_sr,
    const RefineOptions& opts = {}) {
  const long dd = ansatz.bond_in(), ds = ansatz.b_l.dim(0);
  auto prepare = [](const Eigen::MatrixXcd& m, long dim, const char* which) -> Eigen::MatrixXcd {
    if (m.rows() != dim || m.cols() != dim)
      throw std::invalid_argument(
          fmt::format("heuristic_refine: {} target has dimension {}, expected {}", which,
                      m.rows(), dim));
    Eigen::MatrixXcd h = 0.5 * (m + m.adjoint());
    const double tr = h.trace().real();
    if (std::abs(tr) < 1e-14)
      throw std::invalid_argument("heuristic_refine: target has vanishing trace");
    return h / tr;
  };
  const Eigen::MatrixXcd t_ls = prepare(rho_ls.matrix, dd * ds, "LS");
  const Eigen::MatrixXcd t_sr = prepare(rho_sr.matrix, ds * dd, "SR");

  PurificationAnsatz a = ansatz;
  detail::RefineGradient g = detail::refine_gradient(a, t_ls, t_sr);

  MixReport rep;
  rep.pre_bond_dim = dd;
  rep.post_bond_dim = ansatz.bond_slow();
  rep.post_purification_dim = ansatz.d_p();
  rep.cost_history.push_back(g.cost);

  double step = opts.initial_step;
  int it = 0;
  for (; it < opts.max_iterations; ++it) {
    const double gn2 = detail::norm2(g.g_ml) + detail::norm2(g.g_b) + detail::norm2(g.g_nr);
    if (std::sqrt(gn2) < opts.grad_tol) break;

    // Backtracking line search: the directional derivative along the
    // steepest-descent step is -2 ||grad||^2.
    PurificationAnsatz trial;
    bool accepted = false;
    double eta = step;
    for (int bt = 0; bt <= opts.max_backtracks; ++bt, eta *= 0.5) {
      trial.m_l = detail::lincomb(a.m_l, g.g_ml, cd(-eta, 0.0));
      trial.b_l = detail::lincomb(a.b_l, g.g_b, cd(-eta, 0.0));
      trial.n_r = detail::lincomb(a.n_r, g.g_nr, cd(-eta, 0.0));
      const double trial_cost = detail::refine_cost(trial, t_ls, t_sr);
      if (trial_cost <= g.cost - opts.armijo_c * eta * 2.0 * gn2) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      rep.stagnated = true;
      break;
    }
    a = trial;
    g = detail::refine_gradient(a, t_ls, t_sr);
    rep.cost_history.push_back(g.cost);
    step = std::min(eta * 2.0, 1e6);
  }

  rep.optimizer_iterations = it;
  rep.marginal_error_ls = (detail::window_ls(a) - t_ls).norm();
  rep.marginal_error_sr = (detail::window_sr(a) - t_sr).norm();
  return {std::move(a), std::move(rep)};
}

/// Hard cutoff on the grouped purification legs: each purification site is
/// split purification-vs-virtual by SVD and at most d_max singular values
/// are kept. The dropped isometry acts on the traced purification leg only,
/// so a lossless cut (rank <= d_max) changes nothing physical and keeps the
/// gauge; a lossy cut removes discarded_weight of squared Frobenius weight
/// and the state is re-canonicalized. Virtual bonds are untouched.
inline std::pair<UniformMps, double> compress_purification(const UniformMps& state,
                                                           long d_max = 1000) {
  if (d_max < 1)
    throw std::invalid_argument("compress_purification: d_max must be at least 1");
  UniformMps s = state;
  double discarded = 0.0;
  bool changed = false;
  for (int k = 0; k < s.n_sites(); ++k) {
    if (s.role(k) != SiteRole::Purification) continue;
    const DenseTensor& p = s.site(k);
    if (p.dim(0) <= d_max) continue;
    Matricized mz = matricize(p, {0});
    MatSvd f = svd(mz.m);
    long nonzero = 0;
    for (Eigen::Index i = 0; i < f.s.size(); ++i)
      if (f.s(i) > 0.0) ++nonzero;
    const long keep = std::max<long>(1, std::min<long>(d_max, std::max<long>(nonzero, 1)));
    for (Eigen::Index i = keep; i < f.s.size(); ++i) discarded += f.s(i) * f.s(i);
    const Eigen::MatrixXcd m2 =
        f.s.head(keep).asDiagonal() * f.vh.topRows(keep);
    s.cell[static_cast<std::size_t>(k)] =
        to_tensor(m2, {keep}, {p.dim(1), p.dim(2)}, {"phys", "left", "right"});
    changed = true;
  }
  if (!changed) return {state, 0.0};
  if (discarded > 0.0) s = canonicalize(s);
  return {std::move(s), discarded};
}

struct MixOutcome {
  UniformMps state;
  bool mixed = false;
  long chosen_d_fast = 0;
  double residual_entropy = std::numeric_limits<double>::quiet_NaN();
  MixReport report;
  std::vector<ResidualPoint> alternatives;  // every candidate evaluated
  std::string note;
};

/// Threshold-gated mixing pass. Candidate fast dimensions are the divisors
/// of every block-adjacent bond dimension up to d_fast_cap; candidates are
/// tried largest-first and the first whose residual entropy (worst block)
/// falls strictly below eta_s is mixed. Evolved cells with several physical
/// blocks get an independent decomposition per block (the cell is cyclically
/// shifted so each block takes its turn as the orthogonality center).
inline MixOutcome mix_controller(const UniformMps& state, double eta_s, long d_fast_cap,
                                 MixMode mode, const RefineOptions& ropts = {}) {
  MixOutcome out;
  UniformMps s = state.gauge == GaugeTag::LeftCanonical ? state : canonicalize(state);
  const std::vector<int> blocks = detail::physical_positions(s);
  const int nb = static_cast<int>(blocks.size());

  long bond_gcd = 0;
  long min_bond = std::numeric_limits<long>::max();
  for (int i : blocks) {
    for (long d : {s.site(i).dim(1), s.site(i).dim(2)}) {
      bond_gcd = std::gcd(bond_gcd, d);
      min_bond = std::min(min_bond, d);
    }
  }
  std::vector<long> candidates;
  for (long c = std::min<long>(d_fast_cap, min_bond - 1); c >= 2; --c)
    if (bond_gcd % c == 0) candidates.push_back(c);

  if (candidates.empty()) {
    out.state = std::move(s);
    out.note = fmt::format("no admissible fast dimension (bonds gcd {}, cap {})", bond_gcd,
                           d_fast_cap);
    return out;
  }

  std::vector<Decomposition> chosen_decs;
  std::vector<BlockedCentral> chosen_blks;
  for (long c : candidates) {
    ResidualPoint pt;
    pt.d_fast = c;
    std::vector<Decomposition> decs;
    std::vector<BlockedCentral> blks;
    double ent = 0.0, dist = 0.0;
    try {
      for (int bi = 0; bi < nb; ++bi) {
        UniformMps view = detail::shifted_state(s, blocks[static_cast<std::size_t>(bi)]);
        BlockedCentral blk = block_central(view, 1);
        Decomposition dec = optimize_decomposition(blk, c);
        ent = std::max(ent, dec.residual_entropy);
        dist = std::max(dist, dec.residual_distance);
        decs.push_back(std::move(dec));
        blks.push_back(std::move(blk));
      }
      pt.ok = true;
      pt.residual_entropy = ent;
      pt.residual_distance = dist;
      pt.fast_negativity = log_negativity(reduced_density(blks[0], decs[0]), c, c);
    } catch (const std::exception& e) {
      pt.error = e.what();
    }
    const bool admit = pt.ok && ent < eta_s;
    if (std::isnan(out.residual_entropy) && pt.ok) out.residual_entropy = ent;
    out.alternatives.push_back(std::move(pt));
    if (admit) {
      out.chosen_d_fast = c;
      out.residual_entropy = ent;
      chosen_decs = std::move(decs);
      chosen_blks = std::move(blks);
      break;
    }
  }

  if (out.chosen_d_fast == 0) {
    out.state = std::move(s);
    out.note = "residual entropy above threshold at every candidate";
    return out;
  }

  MixReport rep;
  rep.pre_bond_dim = detail::max_bond(s);
  rep.pre_purification_dim = detail::max_purification(s);
  rep.residual_entropy = out.residual_entropy;
  std::vector<PurificationAnsatz> pieces;
  for (int bi = 0; bi < nb; ++bi) {
    PurificationAnsatz a =
        init_ansatz(chosen_decs[static_cast<std::size_t>(bi)], out.chosen_d_fast);
    const BlockedCentral& blk = chosen_blks[static_cast<std::size_t>(bi)];
    DensityBlock t_ls = reduced_density(blk, ReducedSide::LS);
    DensityBlock t_sr = reduced_density(blk, ReducedSide::SR);
    if (mode == MixMode::Heuristic) {
      auto [refined, rrep] = heuristic_refine(a, t_ls, t_sr, ropts);
      a = std::move(refined);
      rep.optimizer_iterations += rrep.optimizer_iterations;
      rep.stagnated = rep.stagnated || rrep.stagnated;
      if (rep.cost_history.empty()) rep.cost_history = rrep.cost_history;
      rep.marginal_error_ls = std::max(rep.marginal_error_ls, rrep.marginal_error_ls);
      rep.marginal_error_sr = std::max(rep.marginal_error_sr, rrep.marginal_error_sr);
    } else {
      rep.marginal_error_ls = std::max(
          rep.marginal_error_ls, (detail::window_ls(a) - t_ls.matrix).norm());
      rep.marginal_error_sr = std::max(
          rep.marginal_error_sr, (detail::window_sr(a) - t_sr.matrix).norm());
    }
    pieces.push_back(std::move(a));
  }

  out.state = detail::assemble_mixed(s, pieces);
  out.mixed = true;
  rep.post_bond_dim = detail::max_bond(out.state);
  rep.post_purification_dim = detail::max_purification(out.state);
  out.report = std::move(rep);
  return out;
}

}  // namespace entmix
