#include "entmix/umps.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/KroneckerProduct>
#include <gtest/gtest.h>

#include "entmix/linalg.hpp"
#include "entmix/tensor.hpp"

using entmix::BlockedCentral;
using entmix::cd;
using entmix::DenseTensor;
using entmix::DensityBlock;
using entmix::GaugeTag;
using entmix::ReducedSide;
using entmix::SiteRole;
using entmix::UniformMps;
using Mat = Eigen::MatrixXcd;

namespace {

Mat pauli_x() {
  Mat m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}
Mat pauli_z() {
  Mat m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

DenseTensor op_tensor(const Mat& m) {
  return entmix::to_tensor(m, {m.rows()}, {m.cols()}, {"out", "in"});
}

/// Slice A^s of a site tensor as a matrix.
Mat phys_slice(const DenseTensor& a, long s) {
  Mat m(a.dim(1), a.dim(2));
  for (long i = 0; i < a.dim(1); ++i)
    for (long j = 0; j < a.dim(2); ++j) m(i, j) = a.at({s, i, j});
  return m;
}

/// Dense transfer matrix of one site: sum_s conj(A^s) (x) A^s.
Mat site_transfer(const DenseTensor& a) {
  const long dl = a.dim(1), dr = a.dim(2);
  Mat t = Mat::Zero(dl * dl, dr * dr);
  for (long s = 0; s < a.dim(0); ++s) {
    const Mat as = phys_slice(a, s);
    t += Eigen::kroneckerProduct(as.conjugate(), as).eval();
  }
  return t;
}

Mat cell_transfer(const std::vector<DenseTensor>& cell) {
  Mat t = site_transfer(cell[0]);
  for (std::size_t k = 1; k < cell.size(); ++k) t = t * site_transfer(cell[k]);
  return t;
}

/// Dense window matrix with an operator inserted: the window's combined
/// physical index S runs over all listed sites (first site most
/// significant); T_O = sum_{S,S'} op(S', S) conj(W^{S'}) (x) W^S.
Mat window_with_op(const std::vector<DenseTensor>& sites, const Mat& op) {
  std::vector<Mat> w = {Mat::Identity(sites[0].dim(1), sites[0].dim(1))};
  for (const DenseTensor& a : sites) {
    std::vector<Mat> next;
    next.reserve(w.size() * static_cast<std::size_t>(a.dim(0)));
    for (const Mat& m : w)
      for (long s = 0; s < a.dim(0); ++s) next.push_back(m * phys_slice(a, s));
    w = std::move(next);
  }
  const long dim = static_cast<long>(w.size());
  EXPECT_EQ(op.rows(), dim);
  const long dl = w[0].rows(), dr = w[0].cols();
  Mat t = Mat::Zero(dl * dl, dr * dr);
  for (long sp = 0; sp < dim; ++sp)
    for (long s = 0; s < dim; ++s) {
      if (std::abs(op(sp, s)) < 1e-300) continue;
      t += op(sp, s) *
           Eigen::kroneckerProduct(w[static_cast<std::size_t>(sp)].conjugate(),
                                   w[static_cast<std::size_t>(s)])
               .eval();
    }
  return t;
}

/// Independent expectation value oracle: trace ratio of long transfer
/// products, tr(T^N W_O P T^N) / tr(T^N W_1 P T^N), with P padding the
/// window to a whole number of cells. Exact up to gap^N.
double window_oracle(const UniformMps& s, const Mat& op_full, int first_site, int n_window) {
  std::vector<DenseTensor> window_sites;
  for (int k = 0; k < n_window; ++k) window_sites.push_back(s.site(first_site + k));
  Mat w_op = window_with_op(window_sites, op_full);
  Mat w_id = window_with_op(
      window_sites, Mat::Identity(op_full.rows(), op_full.cols()));
  // Pad to the next cell boundary with plain site transfers.
  int k = first_site + n_window;
  while (s.mod(k) != s.mod(first_site)) {
    const Mat t = site_transfer(s.site(k));
    w_op = w_op * t;
    w_id = w_id * t;
    ++k;
  }
  const Mat t_cell = cell_transfer(s.cell);
  Mat power = Mat::Identity(t_cell.rows(), t_cell.cols());
  for (int i = 0; i < 300; ++i) {
    power = power * t_cell;
    power /= power.norm();  // keep unnormalized states from overflowing
  }
  const cd num = (power * w_op * power).trace();
  const cd den = (power * w_id * power).trace();
  return (num / den).real();
}

UniformMps random_raw(unsigned seed, long d, long bond) {
  std::mt19937_64 rng(seed);
  UniformMps s;
  s.cell.push_back(entmix::random_tensor({d, bond, bond}, rng, {"phys", "left", "right"}));
  s.roles = {SiteRole::Physical};
  s.schmidt = {Eigen::VectorXd::Ones(bond) / std::sqrt(static_cast<double>(bond))};
  s.gauge = GaugeTag::Raw;
  return s;
}

UniformMps random_canonical(unsigned seed, long d, long bond) {
  return canonicalize(random_raw(seed, d, bond));
}

/// Per-cell fidelity between two uniform states from the mixed transfer
/// matrix: |leading eig of sum_s conj(B^s) (x) A^s| / sqrt(eta_A eta_B).
double cell_fidelity(const UniformMps& a, const UniformMps& b) {
  auto mixed = [](const UniformMps& ket, const UniformMps& bra) {
    Mat t;
    bool first = true;
    for (int k = 0; k < ket.n_sites(); ++k) {
      const DenseTensor& ak = ket.site(k);
      const DenseTensor& bk = bra.site(k);
      Mat tk = Mat::Zero(bk.dim(1) * ak.dim(1), bk.dim(2) * ak.dim(2));
      for (long s = 0; s < ak.dim(0); ++s)
        tk += Eigen::kroneckerProduct(phys_slice(bk, s).conjugate(), phys_slice(ak, s)).eval();
      t = first ? tk : Mat(t * tk);
      first = false;
    }
    return t;
  };
  auto lead = [](const Mat& m) {
    Eigen::VectorXcd w = entmix::eig_general(m).values;
    double best = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) best = std::max(best, std::abs(w(i)));
    return best;
  };
  const double overlap = lead(mixed(a, b));
  const double na = lead(mixed(a, a));
  const double nb = lead(mixed(b, b));
  return overlap / std::sqrt(na * nb);
}

/// Purification of a maximally mixed qubit: physical tensor delta_{s,alpha},
/// ancilla tensor delta_{a,alpha} / sqrt(2); left-canonical by construction.
UniformMps mixed_qubit_purified() {
  UniformMps s;
  DenseTensor b({2, 1, 2}, {"phys", "left", "right"});
  b.at({0, 0, 0}) = 1.0;
  b.at({1, 0, 1}) = 1.0;
  DenseTensor p({2, 2, 1}, {"phys", "left", "right"});
  p.at({0, 0, 0}) = 1.0 / std::sqrt(2.0);
  p.at({1, 1, 0}) = 1.0 / std::sqrt(2.0);
  s.cell = {std::move(b), std::move(p)};
  s.roles = {SiteRole::Physical, SiteRole::Purification};
  Eigen::VectorXd lam0(2);
  lam0 << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  s.schmidt = {lam0, Eigen::VectorXd::Ones(1)};
  s.gauge = GaugeTag::LeftCanonical;
  return s;
}

}  // namespace

TEST(Canonicalize, ProductStateInvariant) {
  UniformMps plus = entmix::product_state_umps({1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)});
  UniformMps out = canonicalize(plus);
  ASSERT_EQ(out.n_sites(), 1);
  EXPECT_EQ(out.gauge, GaugeTag::LeftCanonical);
  ASSERT_EQ(out.schmidt[0].size(), 1);
  EXPECT_NEAR(out.schmidt[0](0), 1.0, 1e-12);
  // Tensor unchanged up to a phase.
  const cd ratio = out.cell[0][0] / plus.cell[0][0];
  EXPECT_NEAR(std::abs(ratio), 1.0, 1e-12);
  EXPECT_LT(std::abs(out.cell[0][1] - ratio * plus.cell[0][1]), 1e-12);
}

TEST(Canonicalize, RandomInjectiveSatisfiesGaugeContract) {
  UniformMps raw = random_raw(7, 2, 4);
  UniformMps out = canonicalize(raw);

  EXPECT_LT(entmix::left_canonical_residual(out), 1e-8);
  for (const auto& lam : out.schmidt) {
    EXPECT_NEAR(lam.squaredNorm(), 1.0, 1e-10);
    for (Eigen::Index i = 1; i < lam.size(); ++i) EXPECT_LE(lam(i), lam(i - 1) + 1e-14);
  }
  // Right fixed point on the cell bond is diag(lambda^2).
  Eigen::VectorXd lam2 = out.schmidt.back().array().square();
  Mat r = Mat(lam2.asDiagonal());
  Mat back = entmix::cell_transfer_right(r, out.cell);
  EXPECT_LT((back - r).norm(), 1e-8);
  // The physical state is unchanged (per-cell fidelity 1).
  EXPECT_NEAR(cell_fidelity(raw, out), 1.0, 1e-8);
}

TEST(Canonicalize, TwoSiteCellMixedBondDims) {
  std::mt19937_64 rng(21);
  UniformMps raw;
  raw.cell.push_back(entmix::random_tensor({2, 3, 5}, rng, {"phys", "left", "right"}));
  raw.cell.push_back(entmix::random_tensor({2, 5, 3}, rng, {"phys", "left", "right"}));
  raw.roles = {SiteRole::Physical, SiteRole::Physical};
  raw.schmidt = {Eigen::VectorXd::Ones(5) / std::sqrt(5.0),
                 Eigen::VectorXd::Ones(3) / std::sqrt(3.0)};
  raw.gauge = GaugeTag::Raw;

  UniformMps out = canonicalize(raw);
  EXPECT_LT(entmix::left_canonical_residual(out), 1e-8);
  // Bond-k fixed point relation: r_0 = E_1(r_1).
  Eigen::VectorXd lam2_0 = out.schmidt[0].array().square();
  Eigen::VectorXd lam2_1 = out.schmidt[1].array().square();
  Mat r1 = Mat(lam2_1.asDiagonal());
  Mat r0 = entmix::transfer_right(r1, out.cell[1]);
  EXPECT_LT((r0 - Mat(lam2_0.asDiagonal())).norm(), 1e-8);
  EXPECT_NEAR(cell_fidelity(raw, out), 1.0, 1e-8);
}

TEST(Canonicalize, IdempotentUpToPhase) {
  UniformMps once = random_canonical(11, 2, 3);
  UniformMps twice = canonicalize(once);
  ASSERT_EQ(once.schmidt[0].size(), twice.schmidt[0].size());
  EXPECT_LT((once.schmidt[0] - twice.schmidt[0]).norm(), 1e-9);
  // With non-degenerate Schmidt values the residual gauge freedom is a
  // diagonal phase on the bond basis: B = D^dag A D with D = diag(e^{i t}).
  const DenseTensor& a = once.cell[0];
  const DenseTensor& b = twice.cell[0];
  const long d = a.dim(0), bond = a.dim(1);
  Eigen::VectorXcd phase(bond);
  phase(0) = 1.0;
  for (long j = 1; j < bond; ++j) {
    long smax = 0;
    for (long s = 0; s < d; ++s)
      if (std::abs(a.at({s, 0, j})) > std::abs(a.at({smax, 0, j}))) smax = s;
    phase(j) = b.at({smax, 0, j}) / a.at({smax, 0, j});
    EXPECT_NEAR(std::abs(phase(j)), 1.0, 1e-8);
  }
  double worst = 0.0;
  for (long s = 0; s < d; ++s)
    for (long i = 0; i < bond; ++i)
      for (long j = 0; j < bond; ++j)
        worst = std::max(worst, std::abs(b.at({s, i, j}) -
                                         std::conj(phase(i)) * phase(j) * a.at({s, i, j})));
  EXPECT_LT(worst, 1e-8);
}

TEST(Canonicalize, RejectsNonInjectiveState) {
  // Two decoupled ferromagnetic branches (a cat state): the transfer
  // operator has a doubly degenerate leading eigenvalue.
  UniformMps cat;
  DenseTensor a({2, 2, 2}, {"phys", "left", "right"});
  a.at({0, 0, 0}) = 1.0;
  a.at({1, 1, 1}) = 1.0;
  cat.cell = {std::move(a)};
  cat.roles = {SiteRole::Physical};
  cat.schmidt = {Eigen::VectorXd::Ones(2) / std::sqrt(2.0)};
  cat.gauge = GaugeTag::Raw;
  try {
    canonicalize(cat);
    FAIL() << "expected a degenerate-transfer error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("non-injective"), std::string::npos);
  }
}

TEST(TransferSpectrum, LeadingValueAndCap) {
  UniformMps s = random_canonical(13, 2, 4);
  Eigen::VectorXcd spec = entmix::transfer_spectrum(s, 4);
  EXPECT_NEAR(std::abs(spec(0)), 1.0, 1e-9);
  EXPECT_LE(std::abs(spec(1)), std::abs(spec(0)) + 1e-12);

  std::mt19937_64 rng(5);
  UniformMps big;
  big.cell.push_back(entmix::random_tensor({2, 65, 65}, rng, {"phys", "left", "right"}));
  big.roles = {SiteRole::Physical};
  big.schmidt = {Eigen::VectorXd::Ones(65) / std::sqrt(65.0)};
  big.gauge = GaugeTag::Raw;
  EXPECT_THROW(entmix::transfer_spectrum(big), std::invalid_argument);
}

TEST(BlockCentral, SingleBlockIsTensorTimesSchmidt) {
  UniformMps s = random_canonical(17, 2, 3);
  BlockedCentral blk = block_central(s, 1);
  ASSERT_EQ(blk.c.rank(), 3);
  EXPECT_EQ(blk.c.dim(0), 3);
  EXPECT_EQ(blk.c.dim(1), 2);
  EXPECT_EQ(blk.c.dim(2), 3);
  double worst = 0.0;
  for (long a = 0; a < 3; ++a)
    for (long p = 0; p < 2; ++p)
      for (long b = 0; b < 3; ++b)
        worst = std::max(worst, std::abs(blk.c.at({a, p, b}) -
                                         s.cell[0].at({p, a, b}) * s.schmidt[0](b)));
  EXPECT_LT(worst, 1e-14);
  EXPECT_NEAR(blk.c.norm(), 1.0, 1e-10);
  EXPECT_LT(blk.left_residual, 1e-8);
  EXPECT_LT(blk.right_residual, 1e-8);
}

TEST(BlockCentral, BlockedExpectationMatchesUnblocked) {
  UniformMps s = random_canonical(19, 2, 4);
  const double direct = entmix::local_expectation(s, op_tensor(pauli_x()), 0);

  BlockedCentral blk = block_central(s, 2);  // two spins merged
  ASSERT_EQ(blk.c.dim(1), 4);
  // <sigma_x (x) 1> evaluated on the center tensor.
  Mat op = Eigen::kroneckerProduct(pauli_x(), Mat::Identity(2, 2));
  cd acc(0.0, 0.0);
  for (long a = 0; a < blk.c.dim(0); ++a)
    for (long b = 0; b < blk.c.dim(2); ++b)
      for (long sp = 0; sp < 4; ++sp)
        for (long sq = 0; sq < 4; ++sq)
          acc += std::conj(blk.c.at({a, sp, b})) * op(sp, sq) * blk.c.at({a, sq, b});
  EXPECT_NEAR(acc.real(), direct, 1e-10);
  EXPECT_LT(std::abs(acc.imag()), 1e-10);
  EXPECT_LT(blk.left_residual, 1e-8);
  EXPECT_LT(blk.right_residual, 1e-8);
}

TEST(BlockCentral, ProductStateTwoBlockIsRankOne) {
  UniformMps plus = entmix::product_state_umps({1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)});
  BlockedCentral blk = block_central(plus, 2);
  EXPECT_EQ(blk.c.dim(0), 1);
  EXPECT_EQ(blk.c.dim(1), 4);
  EXPECT_EQ(blk.c.dim(2), 1);
  EXPECT_NEAR(blk.c.norm(), 1.0, 1e-12);
  for (long p = 0; p < 4; ++p) EXPECT_NEAR(std::abs(blk.c.at({0, p, 0})), 0.5, 1e-12);
}

TEST(Entropy, KnownValuesAndBound) {
  Eigen::VectorXd trivial(1);
  trivial << 1.0;
  EXPECT_EQ(entmix::entanglement_entropy(trivial), 0.0);

  Eigen::VectorXd bell(2);
  bell << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(entmix::entanglement_entropy(bell), std::log(2.0), 1e-12);

  Eigen::VectorXd skew(2);
  skew << 0.8, 0.6;
  EXPECT_NEAR(entmix::entanglement_entropy(skew), 0.6534180, 1e-6);

  Eigen::VectorXd bad(2);
  bad << 0.8, 0.7;
  EXPECT_THROW(entmix::entanglement_entropy(bad), std::invalid_argument);

  UniformMps s = random_canonical(23, 2, 4);
  EXPECT_LE(entmix::entanglement_entropy(s.schmidt[0]), std::log(4.0) + 1e-12);
}

TEST(LogNegativity, BellAndWernerAgainstDensePartialTranspose) {
  // Bell pair.
  Eigen::VectorXcd bell(4);
  bell << 1.0 / std::sqrt(2.0), 0.0, 0.0, 1.0 / std::sqrt(2.0);
  DensityBlock rho_bell{bell * bell.adjoint(), "SR"};
  EXPECT_NEAR(entmix::log_negativity(rho_bell, 2, 2), 1.0, 1e-9);

  // Product state: zero negativity.
  Eigen::VectorXcd prod(4);
  prod << 1.0, 0.0, 0.0, 0.0;
  DensityBlock rho_prod{prod * prod.adjoint(), "SR"};
  EXPECT_NEAR(entmix::log_negativity(rho_prod, 2, 2), 0.0, 1e-9);

  // Werner state at p = 0.8 vs an independently computed partial transpose.
  const double p = 0.8;
  Mat rho = p * (bell * bell.adjoint()) + (1.0 - p) / 4.0 * Mat::Identity(4, 4);
  Mat pt(4, 4);
  for (long i1 = 0; i1 < 2; ++i1)
    for (long i2 = 0; i2 < 2; ++i2)
      for (long j1 = 0; j1 < 2; ++j1)
        for (long j2 = 0; j2 < 2; ++j2)
          pt(2 * i1 + j2, 2 * j1 + i2) = rho(2 * i1 + i2, 2 * j1 + j2);
  Eigen::SelfAdjointEigenSolver<Mat> es(pt);
  const double expected = std::log2(es.eigenvalues().cwiseAbs().sum());
  DensityBlock rho_w{rho, "SR"};
  EXPECT_NEAR(entmix::log_negativity(rho_w, 2, 2), expected, 1e-12);
  EXPECT_NEAR(expected, std::log2(1.7), 1e-12);  // analytic trace norm
}

TEST(ReducedDensity, MatchesOuterProductOracle) {
  UniformMps s = random_canonical(29, 2, 3);
  BlockedCentral blk = block_central(s, 1);
  const long dl = blk.c.dim(0), dp = blk.c.dim(1), dr = blk.c.dim(2);

  DensityBlock ls = reduced_density(blk, ReducedSide::LS);
  Mat ref = Mat::Zero(dl * dp, dl * dp);
  for (long a = 0; a < dl; ++a)
    for (long p = 0; p < dp; ++p)
      for (long a2 = 0; a2 < dl; ++a2)
        for (long p2 = 0; p2 < dp; ++p2)
          for (long b = 0; b < dr; ++b)
            ref(a * dp + p, a2 * dp + p2) +=
                blk.c.at({a, p, b}) * std::conj(blk.c.at({a2, p2, b}));
  EXPECT_LT((ls.matrix - ref).norm(), 1e-12);
  ls.validate();

  DensityBlock sr = reduced_density(blk, ReducedSide::SR);
  Mat ref2 = Mat::Zero(dp * dr, dp * dr);
  for (long p = 0; p < dp; ++p)
    for (long b = 0; b < dr; ++b)
      for (long p2 = 0; p2 < dp; ++p2)
        for (long b2 = 0; b2 < dr; ++b2)
          for (long a = 0; a < dl; ++a)
            ref2(p * dr + b, p2 * dr + b2) +=
                blk.c.at({a, p, b}) * std::conj(blk.c.at({a, p2, b2}));
  EXPECT_LT((sr.matrix - ref2).norm(), 1e-12);
  sr.validate();
}

TEST(LocalExpectation, ProductStatePaulis) {
  UniformMps plus = entmix::product_state_umps({1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0)});
  double imag = 1.0;
  EXPECT_NEAR(entmix::local_expectation(plus, op_tensor(pauli_x()), 0, &imag), 1.0, 1e-12);
  EXPECT_LT(imag, 1e-12);
  EXPECT_NEAR(entmix::local_expectation(plus, op_tensor(pauli_z()), 0), 0.0, 1e-12);
  Mat zz = Eigen::kroneckerProduct(pauli_z(), pauli_z());
  EXPECT_NEAR(entmix::local_expectation(plus, op_tensor(zz), 0), 0.0, 1e-12);
  Mat id4 = Mat::Identity(4, 4);
  EXPECT_NEAR(entmix::local_expectation(plus, op_tensor(id4), 0), 1.0, 1e-12);
}

TEST(LocalExpectation, MatchesDenseWindowOracle) {
  UniformMps s = random_canonical(31, 2, 3);

  const double z = entmix::local_expectation(s, op_tensor(pauli_z()), 0);
  EXPECT_NEAR(z, window_oracle(s, pauli_z(), 0, 1), 1e-8);

  // A random Hermitian two-site operator.
  std::mt19937_64 rng(37);
  std::normal_distribution<double> g;
  Mat h(4, 4);
  for (long i = 0; i < 4; ++i)
    for (long j = 0; j < 4; ++j) h(i, j) = cd(g(rng), g(rng));
  h = (h + h.adjoint()).eval();
  const double val = entmix::local_expectation(s, op_tensor(h), 0);
  EXPECT_NEAR(val, window_oracle(s, h, 0, 2), 1e-8);
}

TEST(LocalExpectation, GaugeInvariantRawVsCanonical) {
  UniformMps raw = random_raw(41, 2, 3);
  UniformMps can = canonicalize(raw);
  Mat xx = Eigen::kroneckerProduct(pauli_x(), pauli_x());
  for (const Mat& op : {pauli_x(), Mat(xx)}) {
    const int n_window = op.rows() == 2 ? 1 : 2;
    const double reference = window_oracle(raw, op, 0, n_window);
    EXPECT_NEAR(entmix::local_expectation(raw, op_tensor(op), 0), reference, 1e-8);
    EXPECT_NEAR(entmix::local_expectation(can, op_tensor(op), 0), reference, 1e-8);
  }
}

TEST(Purified, MaximallyMixedQubitObservables) {
  UniformMps s = mixed_qubit_purified();
  EXPECT_LT(entmix::left_canonical_residual(s), 1e-12);

  // Single physical block: all Pauli expectations vanish; identity is 1.
  EXPECT_NEAR(entmix::local_expectation(s, op_tensor(pauli_x()), 0), 0.0, 1e-12);
  EXPECT_NEAR(entmix::local_expectation(s, op_tensor(pauli_z()), 0), 0.0, 1e-12);
  EXPECT_NEAR(entmix::local_expectation(s, op_tensor(Mat(Mat::Identity(2, 2))), 0), 1.0, 1e-8);

  // Two physical blocks with the ancilla traced through as a spectator.
  Mat zz = Eigen::kroneckerProduct(pauli_z(), pauli_z());
  EXPECT_NEAR(entmix::local_expectation(s, op_tensor(zz), 0), 0.0, 1e-12);
  Mat id4 = Mat::Identity(4, 4);
  EXPECT_NEAR(entmix::local_expectation(s, op_tensor(id4), 0), 1.0, 1e-8);
  // Against the independent dense window oracle (3 sites incl. spectator).
  Mat zz_padded = Mat::Zero(8, 8);
  for (long s1 = 0; s1 < 2; ++s1)
    for (long a = 0; a < 2; ++a)
      for (long s2 = 0; s2 < 2; ++s2)
        for (long t1 = 0; t1 < 2; ++t1)
          for (long b = 0; b < 2; ++b)
            for (long t2 = 0; t2 < 2; ++t2)
              if (a == b)
                zz_padded(4 * s1 + 2 * a + s2, 4 * t1 + 2 * b + t2) =
                    zz(2 * s1 + s2, 2 * t1 + t2);
  EXPECT_NEAR(window_oracle(s, zz_padded, 0, 3), 0.0, 1e-10);

  // The subsystem is maximally mixed and maximally entangled with the rest.
  BlockedCentral blk = block_central(s, 1);
  DensityBlock ls = reduced_density(blk, ReducedSide::LS);
  ls.validate();
  EXPECT_LT((ls.matrix - 0.5 * Mat::Identity(2, 2)).norm(), 1e-12);
  DensityBlock sr = reduced_density(blk, ReducedSide::SR);
  sr.validate();
  EXPECT_NEAR(entmix::log_negativity(sr, 2, 2), 1.0, 1e-9);
}

TEST(Purified, UnsupportedRangeThrows) {
  UniformMps s = mixed_qubit_purified();
  Mat big = Mat::Identity(8, 8);  // would need three physical blocks
  try {
    entmix::local_expectation(s, op_tensor(big), 0);
    FAIL() << "expected an unsupported-range error";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("unsupported range"), std::string::npos);
  }
  // Support must start on a physical block.
  EXPECT_THROW(entmix::local_expectation(s, op_tensor(pauli_x()), 1), std::invalid_argument);
}

TEST(Checkpoint, RoundTripPreservesStateAndMeta) {
  UniformMps s = mixed_qubit_purified();
  entmix::CheckpointMeta meta;
  meta.gauge = s.gauge;
  meta.block_size = 2;
  meta.time = 12.625;
  meta.purification_dims = {2, 4, 4};

  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "entmix_test_checkpoint";
  std::filesystem::remove_all(dir);
  entmix::save_state(s, dir, meta);
  auto [loaded, meta2] = entmix::load_state(dir);

  EXPECT_EQ(loaded.gauge, GaugeTag::LeftCanonical);
  ASSERT_EQ(loaded.n_sites(), 2);
  EXPECT_EQ(loaded.roles[0], SiteRole::Physical);
  EXPECT_EQ(loaded.roles[1], SiteRole::Purification);
  for (int k = 0; k < 2; ++k) {
    const auto u = static_cast<std::size_t>(k);
    ASSERT_EQ(loaded.cell[u].shape(), s.cell[u].shape());
    for (long i = 0; i < s.cell[u].size(); ++i) EXPECT_EQ(loaded.cell[u][i], s.cell[u][i]);
    EXPECT_EQ(Eigen::VectorXd(loaded.schmidt[u]), Eigen::VectorXd(s.schmidt[u]));
  }
  EXPECT_EQ(meta2.block_size, 2);
  EXPECT_EQ(meta2.time, 12.625);
  EXPECT_EQ(meta2.purification_dims, (std::vector<int>{2, 4, 4}));
  std::filesystem::remove_all(dir);
}
