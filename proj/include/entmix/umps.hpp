#pragma once

//! Uniform (infinite, translation-invariant) matrix-product states.
//!
//! A state is a repeating unit cell of site tensors with legs
//! ("phys", "left", "right"). Purification sites carry their ancilla
//! dimension on the "phys" leg and are marked SiteRole::Purification;
//! gates and observables act on physical sites only and trace ancillas.
//! schmidt[k] is the Schmidt vector on the bond to the RIGHT of cell[k]
//! (bond n-1 wraps around to the left of cell[0]).
//!
//! Left-canonical gauge: every tensor is a left isometry
//! (sum_s A^s^dag A^s = 1), the right transfer fixed point on bond k is
//! diag(schmidt[k]^2), and observables close with identity / lambda^2
//! boundaries.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <fmt/format.h>

#include "entmix/linalg.hpp"
#include "entmix/serialize.hpp"
#include "entmix/tensor.hpp"

namespace entmix {

enum class GaugeTag { Raw, LeftCanonical, Mixed };
enum class SiteRole { Physical, Purification };

inline const char* to_string(GaugeTag g) {
  switch (g) {
    case GaugeTag::Raw: return "raw";
    case GaugeTag::LeftCanonical: return "left_canonical";
    case GaugeTag::Mixed: return "mixed";
  }
  return "raw";
}

struct UniformMps {
  std::vector<DenseTensor> cell;
  std::vector<SiteRole> roles;
  std::vector<Eigen::VectorXd> schmidt;
  GaugeTag gauge = GaugeTag::Raw;

  int n_sites() const { return static_cast<int>(cell.size()); }
  long phys_dim(int k) const { return cell[static_cast<std::size_t>(mod(k))].dim(0); }
  long bond_dim(int k) const { return cell[static_cast<std::size_t>(mod(k))].dim(2); }
  bool is_purified() const {
    for (SiteRole r : roles)
      if (r == SiteRole::Purification) return true;
    return false;
  }

  const DenseTensor& site(int k) const { return cell[static_cast<std::size_t>(mod(k))]; }
  SiteRole role(int k) const { return roles[static_cast<std::size_t>(mod(k))]; }
  const Eigen::VectorXd& bond_schmidt(int k) const {
    return schmidt[static_cast<std::size_t>(mod(k))];
  }
  int mod(int k) const {
    const int n = n_sites();
    return ((k % n) + n) % n;
  }

  void validate_shape() const {
    const int n = n_sites();
    if (n == 0) throw std::invalid_argument("UniformMps: empty cell");
    if (roles.size() != cell.size() || schmidt.size() != cell.size())
      throw std::invalid_argument("UniformMps: cell/roles/schmidt size mismatch");
    for (int k = 0; k < n; ++k) {
      const auto u = static_cast<std::size_t>(k);
      if (cell[u].rank() != 3)
        throw std::invalid_argument("UniformMps: site tensors must have rank 3");
      if (cell[u].dim(2) != cell[static_cast<std::size_t>((k + 1) % n)].dim(1))
        throw std::invalid_argument(
            fmt::format("UniformMps: bond {} dimension mismatch ({} vs {})", k, cell[u].dim(2),
                        cell[static_cast<std::size_t>((k + 1) % n)].dim(1)));
      if (schmidt[u].size() != cell[u].dim(2))
        throw std::invalid_argument("UniformMps: Schmidt vector length != bond dimension");
    }
  }
};

/// D=1 product state from a local state vector (one-site cell).
inline UniformMps product_state_umps(const std::vector<cd>& local) {
  DenseTensor a({static_cast<long>(local.size()), 1, 1}, {"phys", "left", "right"});
  double norm = 0.0;
  for (const cd& v : local) norm += std::norm(v);
  norm = std::sqrt(norm);
  if (norm <= 0.0) throw std::invalid_argument("product_state_umps: zero state");
  for (std::size_t i = 0; i < local.size(); ++i) a[static_cast<long>(i)] = local[i] / norm;
  UniformMps s;
  s.cell.push_back(std::move(a));
  s.roles.push_back(SiteRole::Physical);
  s.schmidt.push_back(Eigen::VectorXd::Ones(1));
  s.gauge = GaugeTag::LeftCanonical;
  return s;
}

/// Repeat the unit cell `factor` times (physically the same state).
inline UniformMps expand_cell(const UniformMps& s, int factor) {
  if (factor < 1) throw std::invalid_argument("expand_cell: factor must be >= 1");
  UniformMps out = s;
  for (int rep = 1; rep < factor; ++rep)
    for (int k = 0; k < s.n_sites(); ++k) {
      const auto u = static_cast<std::size_t>(k);
      out.cell.push_back(s.cell[u]);
      out.roles.push_back(s.roles[u]);
      out.schmidt.push_back(s.schmidt[u]);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Transfer operator machinery. Environments are (ket, bra)-indexed matrices.

/// One-site left action in the "walk" convention (the ket slot of x
/// contracts the ket tensor): x -> sum_s A^s^T x conj(A^s). For Hermitian x
/// this is the TRANSPOSE of the standard adjoint map sum_s A^s^dag x A^s,
/// so the standard left environment is the conjugate of this map's fixed
/// point. The walk convention is what closes expectation-value networks
/// directly; canonicalize conjugates where the standard form is needed.
inline Eigen::MatrixXcd transfer_left(const Eigen::MatrixXcd& x, const DenseTensor& a) {
  DenseTensor xt = to_tensor(x, {x.rows()}, {x.cols()}, {"k", "b"});
  DenseTensor t1 = contract(xt, a, {{0, 1}});                      // (b, s, r)
  DenseTensor t2 = contract(t1, a.conjugate(), {{0, 1}, {1, 0}});  // (r, rb)
  return to_matrix(t2, 1);
}

/// One-site right action: y -> sum_s A^s y A^s^dag.
inline Eigen::MatrixXcd transfer_right(const Eigen::MatrixXcd& y, const DenseTensor& a) {
  DenseTensor yt = to_tensor(y, {y.rows()}, {y.cols()}, {"k", "b"});
  DenseTensor t1 = contract(a, yt, {{2, 0}});                      // (s, l, rb)
  DenseTensor t2 = contract(t1, a.conjugate(), {{0, 0}, {2, 2}});  // (l, lb)
  return to_matrix(t2, 1);
}

/// Full-cell left action starting from the bond left of cell[0].
inline Eigen::MatrixXcd cell_transfer_left(const Eigen::MatrixXcd& x,
                                           const std::vector<DenseTensor>& cell) {
  Eigen::MatrixXcd out = x;
  for (const DenseTensor& a : cell) out = transfer_left(out, a);
  return out;
}

/// Full-cell right action ending at the bond left of cell[0].
inline Eigen::MatrixXcd cell_transfer_right(const Eigen::MatrixXcd& y,
                                            const std::vector<DenseTensor>& cell) {
  Eigen::MatrixXcd out = y;
  for (auto it = cell.rbegin(); it != cell.rend(); ++it) out = transfer_right(out, *it);
  return out;
}

struct FixedPoints {
  Eigen::MatrixXcd l, r;    // Hermitian PSD, (ket, bra), on bond n-1
  double eigenvalue = 0.0;  // leading transfer eigenvalue (norm^2 per cell)
  double gap = 0.0;         // relative gap to the subleading modulus
};

namespace detail {

inline Eigen::MatrixXcd hermitize(const Eigen::MatrixXcd& m) {
  return 0.5 * (m + m.adjoint());
}

/// Project a nearly-PSD Hermitian matrix onto the PSD cone.
inline Eigen::MatrixXcd psd_project(const Eigen::MatrixXcd& m) {
  auto [w, v] = eigh(hermitize(m), 1e-6);
  Eigen::VectorXd wp = w.cwiseMax(0.0);
  return v * wp.asDiagonal() * v.adjoint();
}

/// Dense full-cell transfer matrix of the right action, column-major vec:
/// T = T_0 T_1 ... T_{n-1} with T_k = sum_s conj(A_k^s) (x) A_k^s.
inline Eigen::MatrixXcd dense_transfer_matrix(const std::vector<DenseTensor>& cell) {
  const long d0 = cell[0].dim(1);
  Eigen::MatrixXcd t = Eigen::MatrixXcd::Identity(d0 * d0, d0 * d0);
  for (const DenseTensor& a : cell) {
    const long d = a.dim(0), dl = a.dim(1), dr = a.dim(2);
    Eigen::MatrixXcd tk = Eigen::MatrixXcd::Zero(dl * dl, dr * dr);
    for (long s = 0; s < d; ++s) {
      Eigen::MatrixXcd as(dl, dr);
      for (long i = 0; i < dl; ++i)
        for (long j = 0; j < dr; ++j) as(i, j) = a.at({s, i, j});
      tk += Eigen::kroneckerProduct(as.conjugate(), as);
    }
    t = t * tk;
  }
  return t;
}

/// Leading fixed points by dense eigendecomposition (exact gap).
inline FixedPoints fixed_points_dense(const std::vector<DenseTensor>& cell) {
  const Eigen::MatrixXcd t = dense_transfer_matrix(cell);
  const long d = cell[0].dim(1);
  GeneralEig eig = eig_general(t);
  std::vector<int> idx(static_cast<std::size_t>(eig.values.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::sort(idx.begin(), idx.end(),
            [&](int a, int b) { return std::abs(eig.values(a)) > std::abs(eig.values(b)); });
  FixedPoints fp;
  fp.eigenvalue = std::abs(eig.values(idx[0]));
  fp.gap = idx.size() > 1 ? 1.0 - std::abs(eig.values(idx[1])) / fp.eigenvalue : 1.0;

  auto unpack = [&](const Eigen::MatrixXcd& vecs, bool conjugate) {
    Eigen::MatrixXcd m = Eigen::Map<const Eigen::MatrixXcd>(vecs.col(idx[0]).data(), d, d);
    if (conjugate) m = m.conjugate().eval();
    // Physical fixed points are Hermitian PSD up to eigenvector phase:
    // rotate so the trace is real positive, then project.
    const cd tr = m.trace();
    if (std::abs(tr) > 0.0) m *= std::conj(tr) / std::abs(tr);
    m = psd_project(m);
    return Eigen::MatrixXcd(m / m.norm());
  };
  fp.r = unpack(eig.right, false);
  // The left action is vec-represented by T^T, so its fixed point is the
  // conjugate of the zgeev left eigenvector.
  fp.l = unpack(eig.left, true);
  return fp;
}

/// Leading fixed points by power iteration (tol 1e-12); gap estimated by a
/// deflated secondary iteration. Returns nullopt when stagnating.
inline std::optional<FixedPoints> fixed_points_power(const std::vector<DenseTensor>& cell,
                                                     int max_iters = 4000) {
  const long d_left = cell[0].dim(1);
  auto iterate = [&](bool left_side, Eigen::MatrixXcd y,
                     double& eigenvalue) -> std::optional<Eigen::MatrixXcd> {
    y /= y.norm();
    double plateau = std::numeric_limits<double>::max();
    for (int it = 0; it < max_iters; ++it) {
      Eigen::MatrixXcd next =
          left_side ? cell_transfer_left(y, cell) : cell_transfer_right(y, cell);
      next = hermitize(next);
      eigenvalue = next.norm();
      next /= eigenvalue;
      const double delta = std::min((next - y).norm(), (next + y).norm());
      y = next;
      if (delta < 1e-12) return y;
      if (it % 200 == 199) {  // bail out early when progress stalls
        if (delta > 0.5 * plateau) return std::nullopt;
        plateau = delta;
      }
    }
    return std::nullopt;
  };

  double eta_l = 0.0, eta_r = 0.0;
  auto l = iterate(true, Eigen::MatrixXcd::Identity(d_left, d_left), eta_l);
  auto r = iterate(false, Eigen::MatrixXcd::Identity(d_left, d_left), eta_r);
  if (!l || !r) return std::nullopt;
  FixedPoints fp;
  fp.l = psd_project(*l);
  fp.l /= fp.l.norm();
  fp.r = psd_project(*r);
  fp.r /= fp.r.norm();
  fp.eigenvalue = 0.5 * (eta_l + eta_r);

  // Deflated iteration for the subleading modulus: remove the leading
  // spectral projector |r><l| / <l|r> from the right action. The spectral
  // left vector of the right action is the standard-orientation fixed
  // point, i.e. the conjugate of the walk-convention one.
  const Eigen::MatrixXcd l_std = fp.l.conjugate();
  const cd lr = (l_std * fp.r).trace();
  std::mt19937_64 rng(12345);
  std::normal_distribution<double> gauss;
  Eigen::MatrixXcd v(d_left, d_left);
  for (long i = 0; i < d_left; ++i)
    for (long j = 0; j < d_left; ++j) v(i, j) = cd(gauss(rng), gauss(rng));
  v = hermitize(v);
  v /= v.norm();
  double sigma2 = 0.0;
  for (int it = 0; it < 200; ++it) {
    Eigen::MatrixXcd next = cell_transfer_right(v, cell);
    const cd overlap = (l_std * next).trace() / lr;
    next -= overlap * fp.r;
    sigma2 = next.norm();
    if (sigma2 < 1e-300) break;
    v = next / sigma2;
  }
  fp.gap = 1.0 - sigma2 / fp.eigenvalue;
  return fp;
}

}  // namespace detail

/// Leading transfer fixed points of the full cell. Power iteration first;
/// dense eigendecomposition as a fallback for small bonds when the power
/// method stagnates (e.g. tiny gap); an error beyond the dense cap.
inline FixedPoints cell_fixed_points(const std::vector<DenseTensor>& cell) {
  auto power = detail::fixed_points_power(cell);
  if (power) return *power;
  const long d = cell[0].dim(1);
  if (d * d <= 4096) return detail::fixed_points_dense(cell);
  throw std::runtime_error(
      "cell_fixed_points: power iteration stagnated and the bond dimension "
      "exceeds the dense fallback cap (transfer spectrum likely degenerate)");
}

/// Leading entries of the full-cell transfer spectrum (dense; diagnostic).
inline Eigen::VectorXcd transfer_spectrum(const UniformMps& s, int n_top = 6) {
  const long d = s.cell[0].dim(1);
  if (d * d > 4096)
    throw std::invalid_argument("transfer_spectrum: dense utility capped at bond dimension 64");
  GeneralEig eig = eig_general(detail::dense_transfer_matrix(s.cell));
  std::sort(eig.values.data(), eig.values.data() + eig.values.size(),
            [](cd a, cd b) { return std::abs(a) > std::abs(b); });
  return eig.values.head(std::min<Eigen::Index>(n_top, eig.values.size()));
}

// ---------------------------------------------------------------------------
// Canonicalization.

namespace detail {

/// Factor a PSD matrix as m = X^dag X with X of full numerical rank
/// (rows = rank, cols = dim); directions below 1e-14 x max are dropped.
inline Eigen::MatrixXcd psd_sqrt_rows(const Eigen::MatrixXcd& m) {
  auto [w, v] = eigh(hermitize(m), 1e-6);
  const double wmax = std::max(w.maxCoeff(), 0.0);
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < w.size(); ++i)
    if (w(i) > 1e-14 * wmax) keep.push_back(i);
  Eigen::MatrixXcd x(static_cast<Eigen::Index>(keep.size()), m.rows());
  for (std::size_t k = 0; k < keep.size(); ++k)
    x.row(static_cast<Eigen::Index>(k)) = std::sqrt(w(keep[k])) * v.col(keep[k]).adjoint();
  return x;
}

}  // namespace detail

/// Bring a state to left-canonical form. The physical state is unchanged;
/// bond bases rotate so every tensor is a left isometry and the bond-k right
/// fixed point is diag(schmidt[k]^2). No dense matrix is inverted: the bond
/// gauges are N = U^dag X and M = Y V lambda^+, with only the diagonal
/// Schmidt pseudo-inverse.
inline UniformMps canonicalize(const UniformMps& in) {
  in.validate_shape();
  const int n = in.n_sites();

  FixedPoints fp = cell_fixed_points(in.cell);
  if (fp.gap <= 1e-10)
    throw std::runtime_error(
        "canonicalize: degenerate transfer spectrum (non-injective state); "
        "relative gap <= 1e-10");

  // Normalize: scale tensors so the leading transfer eigenvalue is 1.
  std::vector<DenseTensor> cell = in.cell;
  const double scale = std::pow(fp.eigenvalue, -0.5 / n);
  for (DenseTensor& a : cell) a *= scale;

  // Per-bond fixed points around the cell (bond k sits right of site k).
  std::vector<Eigen::MatrixXcd> l(static_cast<std::size_t>(n)), r(static_cast<std::size_t>(n));
  l[static_cast<std::size_t>(n - 1)] = fp.l;
  r[static_cast<std::size_t>(n - 1)] = fp.r;
  for (int k = 0; k < n - 1; ++k)
    l[static_cast<std::size_t>(k)] = transfer_left(
        l[static_cast<std::size_t>(k == 0 ? n - 1 : k - 1)], cell[static_cast<std::size_t>(k)]);
  for (int k = n - 2; k >= 0; --k)
    r[static_cast<std::size_t>(k)] = transfer_right(r[static_cast<std::size_t>(k + 1)],
                                                    cell[static_cast<std::size_t>(k + 1)]);

  // Per-bond gauge: l = X^dag X, r = Y Y^dag (scaled so tr(l r) = 1),
  // SVD X Y = U s V^dag, then N = U^dag X and M = Y V s^+. The gauge needs
  // the standard-orientation left environment (sum A^dag l A = l), which is
  // the conjugate of the walk-convention fixed point propagated above.
  std::vector<Eigen::MatrixXcd> n_mats(static_cast<std::size_t>(n)),
      m_mats(static_cast<std::size_t>(n));
  std::vector<Eigen::VectorXd> lambdas(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const auto u = static_cast<std::size_t>(k);
    const Eigen::MatrixXcd l_std = l[u].conjugate();
    const cd tr = (l_std * r[u]).trace();
    if (tr.real() <= 0.0) throw std::runtime_error("canonicalize: fixed-point overlap vanished");
    r[u] /= tr.real();
    const Eigen::MatrixXcd x = detail::psd_sqrt_rows(l_std);
    const Eigen::MatrixXcd y = detail::psd_sqrt_rows(r[u]).adjoint();
    MatSvd f = svd(x * y);
    long rank = f.s.size();
    // Trim with the same relative cutoff the pseudo-inverse uses below, so
    // every retained Schmidt direction is actually invertible; otherwise a
    // kept-but-uninverted direction leaves a zero column in the gauge.
    const double s_floor = 1e-12 * f.s(0);
    while (rank > 1 && f.s(rank - 1) <= s_floor) --rank;
    lambdas[u] = f.s.head(rank);
    const Eigen::VectorXd s_inv = pseudo_inverse(lambdas[u]);
    n_mats[u] = f.u.leftCols(rank).adjoint() * x;
    m_mats[u] = y * f.vh.topRows(rank).adjoint() * s_inv.asDiagonal();
  }

  UniformMps out;
  out.roles = in.roles;
  out.gauge = GaugeTag::LeftCanonical;
  for (int k = 0; k < n; ++k) {
    const Eigen::MatrixXcd& nk = n_mats[static_cast<std::size_t>((k + n - 1) % n)];
    const Eigen::MatrixXcd& mk = m_mats[static_cast<std::size_t>(k)];
    DenseTensor nt = to_tensor(nk, {nk.rows()}, {nk.cols()}, {"nl", "left"});
    DenseTensor mt = to_tensor(mk, {mk.rows()}, {mk.cols()}, {"right", "nr"});
    DenseTensor t1 = contract(nt, cell[static_cast<std::size_t>(k)], {{1, 1}});  // (nl, s, r)
    DenseTensor t2 = contract(t1, mt, {{2, 0}});                                 // (nl, s, nr)
    t2 = t2.permute({1, 0, 2});
    t2.set_legs({"phys", "left", "right"});
    out.cell.push_back(std::move(t2));
    // tr(l r) = 1 makes the Schmidt vector unit up to roundoff; renormalize.
    out.schmidt.push_back(lambdas[static_cast<std::size_t>(k)] /
                          lambdas[static_cast<std::size_t>(k)].norm());
  }
  out.validate_shape();
  return out;
}

/// Largest deviation of sum_s A^s^dag A^s from the identity across the cell
/// (cheap health check; ~0 in left-canonical gauge).
inline double left_canonical_residual(const UniformMps& s) {
  double worst = 0.0;
  for (int k = 0; k < s.n_sites(); ++k) {
    const long dl = s.site(k).dim(1);
    Eigen::MatrixXcd g = transfer_left(Eigen::MatrixXcd::Identity(dl, dl), s.site(k));
    worst = std::max(worst, (g - Eigen::MatrixXcd::Identity(g.rows(), g.cols())).norm());
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Blocking and observables.

struct BlockedCentral {
  DenseTensor c;  // legs ("left", "phys", "right"): D x d^l x D'
  Eigen::VectorXd lambda_left, lambda_right;
  double left_residual = 0.0, right_residual = 0.0;
  int block_size = 0;
};

/// Orthogonality-center tensor for a subsystem of `l_blocks` physical
/// blocks starting at cell[0]: contract the left-canonical tensors and
/// absorb the Schmidt vector on the rightmost bond. For purified cells only
/// a single physical block is supported (ancillas may not be merged into
/// the subsystem leg).
inline BlockedCentral block_central(const UniformMps& s, int l_blocks) {
  if (l_blocks <= 0) throw std::invalid_argument("block_central: l must be positive");
  if (s.gauge != GaugeTag::LeftCanonical)
    throw std::invalid_argument("block_central: state must be left-canonical");
  if (s.roles[0] != SiteRole::Physical)
    throw std::invalid_argument("block_central: cell must start with a physical block");
  if (s.is_purified() && l_blocks != 1)
    throw std::invalid_argument(
        "block_central: purified states support only single-block subsystems");

  // Walk sites until l_blocks physical blocks are absorbed.
  int end = 0, seen = 0;
  while (seen < l_blocks) {
    if (s.role(end) == SiteRole::Physical) ++seen;
    ++end;
    if (end > 8 * s.n_sites() && seen == 0)
      throw std::invalid_argument("block_central: cell has no physical blocks");
  }

  DenseTensor c = s.site(0);  // (p0, l, r)
  for (int k = 1; k < end; ++k) c = contract(c, s.site(k), {{c.rank() - 1, 1}});
  // Legs now: (p0, left, p1, ..., p_{end-1}, right).
  std::vector<int> perm = {1, 0};
  for (int k = 1; k < end; ++k) perm.push_back(k + 1);
  perm.push_back(c.rank() - 1);
  c = c.permute(perm);  // (left, p0, ..., p_{end-1}, right)
  long d_total = 1;
  for (int k = 0; k < end; ++k) d_total *= s.phys_dim(k);
  const long dl = c.dim(0), dr = c.dim(c.rank() - 1);
  c = c.reshape({dl, d_total, dr}, {"left", "phys", "right"});

  // Absorb the Schmidt vector on the final bond.
  const Eigen::VectorXd& lam = s.bond_schmidt(end - 1);
  for (long a = 0; a < dl; ++a)
    for (long p = 0; p < d_total; ++p)
      for (long b = 0; b < dr; ++b) c.at({a, p, b}) *= lam(b);

  BlockedCentral blk;
  blk.block_size = l_blocks;
  blk.lambda_left = s.bond_schmidt(-1);
  blk.lambda_right = lam;
  blk.c = std::move(c);

  // Certificates: both virtual marginals against diag(lambda^2).
  {
    DenseTensor tl = contract(blk.c, blk.c.conjugate(), {{1, 1}, {2, 2}});  // (l, lb)
    Eigen::MatrixXcd left_marg = to_matrix(tl, 1);
    Eigen::VectorXd lam2 = blk.lambda_left.array().square();
    blk.left_residual = (left_marg - Eigen::MatrixXcd(lam2.asDiagonal())).norm();

    DenseTensor tr = contract(blk.c, blk.c.conjugate(), {{0, 0}, {1, 1}});  // (r, rb)
    Eigen::MatrixXcd right_marg = to_matrix(tr, 1);
    Eigen::VectorXd lam2r = blk.lambda_right.array().square();
    blk.right_residual = (right_marg - Eigen::MatrixXcd(lam2r.asDiagonal())).norm();
  }
  return blk;
}

/// S = -sum lambda^2 ln lambda^2 (natural log).
inline double entanglement_entropy(const Eigen::VectorXd& lambda) {
  if (std::abs(lambda.squaredNorm() - 1.0) > 1e-8)
    throw std::invalid_argument("entanglement_entropy: Schmidt vector not normalized");
  double s = 0.0;
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    const double p = lambda(i) * lambda(i);
    if (p > 1e-300) s -= p * std::log(p);
  }
  return s;
}

struct DensityBlock {
  Eigen::MatrixXcd matrix;
  std::string subsystem;

  void validate(double tol = 1e-10) const {
    if ((matrix - matrix.adjoint()).norm() > tol * std::max(1.0, matrix.norm()))
      throw std::invalid_argument("DensityBlock: not Hermitian");
    if (std::abs(matrix.trace().real() - 1.0) > tol)
      throw std::invalid_argument("DensityBlock: trace != 1");
    auto [w, v] = eigh(matrix, 1e-8);
    if (w.minCoeff() < -tol) throw std::invalid_argument("DensityBlock: negative eigenvalue");
  }
};

enum class ReducedSide { LS, SR };

/// Reduced density matrix of (left-virtual x subsystem) or
/// (subsystem x right-virtual), tracing the opposite virtual leg of the
/// central tensor.
inline DensityBlock reduced_density(const BlockedCentral& blk, ReducedSide side) {
  const DenseTensor& c = blk.c;
  DensityBlock out;
  if (side == ReducedSide::LS) {
    DenseTensor t = contract(c, c.conjugate(), {{2, 2}});  // (l, s, lb, sb)
    const long d = c.dim(0) * c.dim(1);
    out.matrix = to_matrix(t.reshape({d, d}), 1);
    out.subsystem = "LS";
  } else {
    DenseTensor t = contract(c, c.conjugate(), {{0, 0}});  // (s, r, sb, rb)
    const long d = c.dim(1) * c.dim(2);
    out.matrix = to_matrix(t.reshape({d, d}), 1);
    out.subsystem = "SR";
  }
  return out;
}

/// E_N = log2 of the trace norm of the partial transpose over the second
/// tensor factor (dim_a x dim_b split of the density matrix).
inline double log_negativity(const DensityBlock& rho, long dim_a, long dim_b) {
  if (dim_a * dim_b != rho.matrix.rows())
    throw std::invalid_argument("log_negativity: bipartition does not match density matrix");
  Eigen::MatrixXcd pt(rho.matrix.rows(), rho.matrix.cols());
  for (long i1 = 0; i1 < dim_a; ++i1)
    for (long i2 = 0; i2 < dim_b; ++i2)
      for (long j1 = 0; j1 < dim_a; ++j1)
        for (long j2 = 0; j2 < dim_b; ++j2)
          pt(i1 * dim_b + j2, j1 * dim_b + i2) = rho.matrix(i1 * dim_b + i2, j1 * dim_b + j2);
  auto [w, v] = eigh(pt, 1e-8);
  return std::log2(w.cwiseAbs().sum());
}

// ---------------------------------------------------------------------------
// Local expectation values.

/// <op> on contiguous physical blocks starting at cell[first_site] (which
/// must be physical). Purification sites inside the window are traced
/// through as spectators. op legs ("out", "in"), Hermitian, of the combined
/// physical dimension. At most two physical blocks are supported.
inline double local_expectation(const UniformMps& s, const DenseTensor& op, int first_site,
                                double* imag_out = nullptr) {
  if (op.rank() != 2 || op.dim(0) != op.dim(1))
    throw std::invalid_argument("local_expectation: op must be a square rank-2 tensor");
  if (s.role(first_site) != SiteRole::Physical)
    throw std::invalid_argument("local_expectation: support must start on a physical block");
  {
    const Eigen::MatrixXcd m = to_matrix(op, 1);
    if ((m - m.adjoint()).norm() > 1e-10 * std::max(1.0, m.norm()))
      throw std::invalid_argument("local_expectation: op must be Hermitian");
  }

  // Identify the window: consume physical dimensions until the operator
  // dimension is matched; purification sites in between are spectators.
  std::vector<int> window;       // site offsets from first_site
  std::vector<bool> is_support;  // acts on this site?
  long accum = 1;
  int offset = 0, phys_blocks = 0;
  while (accum < op.dim(0)) {
    const int site = first_site + offset;
    if (s.role(site) == SiteRole::Physical) {
      accum *= s.phys_dim(site);
      ++phys_blocks;
      window.push_back(offset);
      is_support.push_back(true);
    } else if (!window.empty()) {
      window.push_back(offset);
      is_support.push_back(false);
    }
    ++offset;
    if (offset > 4 * s.n_sites() + 4)
      throw std::invalid_argument("local_expectation: op dimension does not match any window");
  }
  if (accum != op.dim(0))
    throw std::invalid_argument(fmt::format(
        "local_expectation: op dimension {} does not factor into block dimensions", op.dim(0)));
  if (phys_blocks > 2)
    throw std::invalid_argument(
        "local_expectation: unsupported range (only marginals of up to two physical blocks "
        "are guaranteed)");

  // Boundary environments: identity / diag(lambda^2) in canonical gauge,
  // genuine transfer fixed points otherwise.
  const int last_site = first_site + window.back();
  Eigen::MatrixXcd left_env, right_env;
  if (s.gauge == GaugeTag::LeftCanonical) {
    const long dl = s.site(first_site).dim(1);
    left_env = Eigen::MatrixXcd::Identity(dl, dl);
    right_env = s.bond_schmidt(last_site).array().square().matrix().asDiagonal();
  } else {
    FixedPoints fp = cell_fixed_points(s.cell);
    Eigen::MatrixXcd l = fp.l, r = fp.r;
    for (int k = 0; k < s.mod(first_site); ++k) l = transfer_left(l, s.site(k));
    for (int k = s.n_sites() - 1; k > s.mod(last_site); --k) r = transfer_right(r, s.site(k));
    left_env = l;
    right_env = r;
  }

  // Two-block operators are split across the (possible) spectator gap:
  // O = sum_m L_m (x) R_m via an SVD of the reshuffled operator.
  DenseTensor left_piece, right_piece;
  if (phys_blocks == 2) {
    const long d1 = s.phys_dim(first_site);
    const long d2 = op.dim(0) / d1;
    DenseTensor o4 = op.reshape({d1, d2, d1, d2}).permute({0, 2, 1, 3});  // (o1, i1, o2, i2)
    o4.set_legs({"o1", "i1", "o2", "i2"});
    SvdResult split = svd_split(o4, {0, 1});
    left_piece = split.left_isometry;  // (o1, i1, m)
    for (long a = 0; a < left_piece.dim(0); ++a)
      for (long b = 0; b < left_piece.dim(1); ++b)
        for (long m = 0; m < left_piece.dim(2); ++m)
          left_piece.at({a, b, m}) *= split.singular_values[static_cast<std::size_t>(m)];
    right_piece = split.right_isometry;  // (m, o2, i2)
  }

  // Walk the window. env is rank 2 (ket, bra) outside a split operator and
  // rank 3 (m, ket, bra) between the two halves.
  DenseTensor env = to_tensor(left_env, {left_env.rows()}, {left_env.cols()}, {"k", "b"});
  int support_seen = 0;
  for (std::size_t w = 0; w < window.size(); ++w) {
    const DenseTensor& a = s.site(first_site + window[w]);
    if (!is_support[w]) {                                             // spectator: env (m, k, b)
      DenseTensor t1 = contract(env, a, {{1, 1}});                    // (m, b, s, r)
      env = contract(t1, a.conjugate(), {{1, 1}, {2, 0}});            // (m, r, rb)
    } else if (phys_blocks == 1) {                                    // env (k, b)
      DenseTensor t1 = contract(env, a, {{0, 1}});                    // (b, s, r)
      DenseTensor t2 = contract(t1, op, {{1, 1}});                    // (b, r, o)
      env = contract(t2, a.conjugate(), {{0, 1}, {2, 0}});            // (r, rb)
    } else if (++support_seen == 1) {                                 // env (k, b) -> (m, k, b)
      DenseTensor t1 = contract(env, a, {{0, 1}});                    // (b, s, r)
      DenseTensor t2 = contract(t1, left_piece, {{1, 1}});            // (b, r, o1, m)
      DenseTensor t3 = contract(t2, a.conjugate(), {{0, 1}, {2, 0}});  // (r, m, rb)
      env = t3.permute({1, 0, 2});                                    // (m, r, rb)
    } else {                                                          // env (m, k, b) -> (k, b)
      DenseTensor t1 = contract(env, a, {{1, 1}});                    // (m, b, s, r)
      DenseTensor t2 = contract(t1, right_piece, {{0, 0}, {2, 2}});   // (b, r, o2)
      env = contract(t2, a.conjugate(), {{0, 1}, {2, 0}});            // (r, rb)
    }
  }
  Eigen::MatrixXcd env_mat = to_matrix(env, env.rank() - 1);  // rank 2 by construction
  const cd num = (env_mat.array() * right_env.array()).sum();

  // Norm closure: same boundaries, no operator.
  Eigen::MatrixXcd nmat = left_env;
  for (std::size_t w = 0; w < window.size(); ++w)
    nmat = transfer_left(nmat, s.site(first_site + window[w]));
  const cd den = (nmat.array() * right_env.array()).sum();

  const cd val = num / den;
  if (imag_out) *imag_out = std::abs(val.imag());
  return val.real();
}

// ---------------------------------------------------------------------------
// Checkpoint I/O.

struct CheckpointMeta {
  GaugeTag gauge = GaugeTag::Raw;
  int block_size = 1;
  double time = 0.0;
  std::vector<int> purification_dims;  // history of per-event kept dimensions
};

inline void save_state(const UniformMps& s, const std::filesystem::path& dir,
                       const CheckpointMeta& meta) {
  std::filesystem::create_directories(dir);
  for (int k = 0; k < s.n_sites(); ++k) {
    const auto u = static_cast<std::size_t>(k);
    write_tensor(dir / fmt::format("cell_{}.tns", k), s.cell[u]);
    DenseTensor lam({s.schmidt[u].size()}, {"schmidt"});
    for (Eigen::Index i = 0; i < s.schmidt[u].size(); ++i) lam[i] = s.schmidt[u](i);
    write_tensor(dir / fmt::format("lambda_{}.tns", k), lam);
  }
  std::ofstream out(dir / "manifest.txt");
  out << "format 1\n";
  out << "gauge " << to_string(s.gauge) << "\n";
  out << "n_sites " << s.n_sites() << "\n";
  out << "roles ";
  for (int k = 0; k < s.n_sites(); ++k)
    out << (s.role(k) == SiteRole::Physical ? "physical" : "purification")
        << (k + 1 < s.n_sites() ? "," : "");
  out << "\n";
  out << "bond_dims ";
  for (int k = 0; k < s.n_sites(); ++k) out << s.bond_dim(k) << (k + 1 < s.n_sites() ? "," : "");
  out << "\n";
  out << fmt::format("block_size {}\n", meta.block_size);
  out << fmt::format("time {:.17g}\n", meta.time);
  out << "purification_dims ";
  for (std::size_t i = 0; i < meta.purification_dims.size(); ++i)
    out << meta.purification_dims[i] << (i + 1 < meta.purification_dims.size() ? "," : "");
  out << "\n";
  if (!out) throw std::runtime_error("save_state: failed to write manifest");
}

inline std::pair<UniformMps, CheckpointMeta> load_state(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw std::runtime_error("load_state: missing manifest.txt");
  UniformMps s;
  CheckpointMeta meta;
  int n_sites = 0;
  auto split_csv = [](const std::string& csv) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < csv.size()) {
      std::size_t next = csv.find(',', pos);
      if (next == std::string::npos) next = csv.size();
      out.push_back(csv.substr(pos, next - pos));
      pos = next + 1;
    }
    return out;
  };
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (key == "format") {
      if (std::stoi(rest) != 1)
        throw std::runtime_error("load_state: unsupported checkpoint format");
    } else if (key == "gauge") {
      s.gauge = rest == "left_canonical" ? GaugeTag::LeftCanonical
                : rest == "mixed"        ? GaugeTag::Mixed
                                         : GaugeTag::Raw;
      meta.gauge = s.gauge;
    } else if (key == "n_sites") {
      n_sites = std::stoi(rest);
    } else if (key == "roles") {
      for (const std::string& tok : split_csv(rest))
        s.roles.push_back(tok == "purification" ? SiteRole::Purification : SiteRole::Physical);
    } else if (key == "block_size") {
      meta.block_size = std::stoi(rest);
    } else if (key == "time") {
      meta.time = std::stod(rest);
    } else if (key == "purification_dims" && !rest.empty()) {
      for (const std::string& tok : split_csv(rest))
        meta.purification_dims.push_back(std::stoi(tok));
    }
  }
  if (n_sites <= 0) throw std::runtime_error("load_state: manifest missing n_sites");
  for (int k = 0; k < n_sites; ++k) {
    s.cell.push_back(read_tensor(dir / fmt::format("cell_{}.tns", k)));
    DenseTensor lam = read_tensor(dir / fmt::format("lambda_{}.tns", k));
    Eigen::VectorXd v(lam.size());
    for (long i = 0; i < lam.size(); ++i) v(i) = lam[i].real();
    s.schmidt.push_back(std::move(v));
  }
  if (s.roles.size() != static_cast<std::size_t>(n_sites))
    throw std::runtime_error("load_state: roles do not match n_sites");
  s.validate_shape();
  return {std::move(s), std::move(meta)};
}

}  // namespace entmix
