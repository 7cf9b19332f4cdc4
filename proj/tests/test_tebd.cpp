#include "entmix/tebd.hpp"

#include <cmath>
#include <complex>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "entmix/gaussian.hpp"
#include "entmix/linalg.hpp"
#include "entmix/tensor.hpp"
#include "entmix/umps.hpp"
#include "support/ed.hpp"

namespace {

using entmix::cd;
using entmix::DenseTensor;
using entmix::GateSet;
using entmix::QuenchHamiltonian;
using entmix::StepReport;
using entmix::UniformMps;

Eigen::MatrixXcd pauli_x() {
  Eigen::MatrixXcd m(2, 2);
  m << 0, 1, 1, 0;
  return m;
}

Eigen::MatrixXcd pauli_z() {
  Eigen::MatrixXcd m(2, 2);
  m << 1, 0, 0, -1;
  return m;
}

DenseTensor op_tensor(const Eigen::MatrixXcd& m) {
  return entmix::to_tensor(m, {m.rows()}, {m.cols()}, {"out", "in"});
}

/// Gate as a (block^2 x block^2) matrix with rows (o1, o2), cols (i1, i2).
Eigen::MatrixXcd gate_matrix(const DenseTensor& gate) {
  return Eigen::MatrixXcd(entmix::to_matrix(gate, 2));
}

/// Embed a gate acting on the listed spins (most significant first) into an
/// n-spin space, by direct index bookkeeping on bit strings. Independent of
/// any library contraction code.
Eigen::MatrixXcd embed(const Eigen::MatrixXcd& a, const std::vector<int>& sites, int n) {
  const int m = static_cast<int>(sites.size());
  const long dim = 1L << n, sub_dim = 1L << m;
  EXPECT_EQ(a.rows(), sub_dim);
  Eigen::MatrixXcd out = Eigen::MatrixXcd::Zero(dim, dim);
  for (long s = 0; s < dim; ++s) {
    long sub = 0;
    for (int j = 0; j < m; ++j) sub |= ((s >> (n - 1 - sites[static_cast<std::size_t>(j)])) & 1L)
                                       << (m - 1 - j);
    long base = s;
    for (int j = 0; j < m; ++j) base &= ~(1L << (n - 1 - sites[static_cast<std::size_t>(j)]));
    for (long sub2 = 0; sub2 < sub_dim; ++sub2) {
      long s2 = base;
      for (int j = 0; j < m; ++j)
        s2 |= ((sub2 >> (m - 1 - j)) & 1L) << (n - 1 - sites[static_cast<std::size_t>(j)]);
      out(s2, s) += a(sub2, sub);
    }
  }
  return out;
}

/// One full library step as a dense n-spin ring propagator: every scheduled
/// gate is embedded at all of its translation images and multiplied in order.
Eigen::MatrixXcd dense_step(const GateSet& gates, int n_blocks, int n_spins) {
  const int l = gates.block_size;
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Identity(1L << n_spins, 1L << n_spins);
  for (const auto& app : gates.schedule) {
    const Eigen::MatrixXcd g = gate_matrix(app.gate);
    Eigen::MatrixXcd layer = Eigen::MatrixXcd::Identity(1L << n_spins, 1L << n_spins);
    for (int b = app.bond_parity; b < n_blocks; b += 2) {
      std::vector<int> sites;
      for (int j = 0; j < 2 * l; ++j) sites.push_back((b * l + j) % n_spins);
      layer = embed(g, sites, n_spins) * layer;
    }
    u = layer * u;
  }
  return u;
}

UniformMps x_plus_product(int block_size) {
  const long d = 1L << block_size;
  std::vector<cd> amps(static_cast<std::size_t>(d), cd(1.0 / std::sqrt(double(d)), 0.0));
  return entmix::product_state_umps(amps);
}

UniformMps random_canonical(unsigned seed, long d, long bond) {
  std::mt19937_64 rng(seed);
  UniformMps s;
  DenseTensor t = entmix::random_tensor({d, bond, bond}, rng, {"phys", "left", "right"});
  s.cell.push_back(std::move(t));
  s.roles.push_back(entmix::SiteRole::Physical);
  s.schmidt.push_back(Eigen::VectorXd::Ones(bond) / std::sqrt(double(bond)));
  s.gauge = entmix::GaugeTag::Raw;
  return entmix::canonicalize(s);
}

/// Exact purification of the infinite-temperature qubit: site tensors
/// B(s,a,b) = delta_{s,b}, P(p,a,b) = delta_{p,a}/sqrt(2). Left-canonical by
/// construction.
UniformMps mixed_qubit_purified() {
  UniformMps s;
  DenseTensor b({2, 1, 2}, {"phys", "left", "right"});
  b.at({0, 0, 0}) = 1.0;
  b.at({1, 0, 1}) = 1.0;
  DenseTensor p({2, 2, 1}, {"phys", "left", "right"});
  p.at({0, 0, 0}) = 1.0 / std::sqrt(2.0);
  p.at({1, 1, 0}) = 1.0 / std::sqrt(2.0);
  s.cell = {std::move(b), std::move(p)};
  s.roles = {entmix::SiteRole::Physical, entmix::SiteRole::Purification};
  s.schmidt = {Eigen::VectorXd::Constant(2, 1.0 / std::sqrt(2.0)), Eigen::VectorXd::Ones(1)};
  s.gauge = entmix::GaugeTag::LeftCanonical;
  return s;
}

/// Energy per spin from the two-block bond Hamiltonian, averaging the two
/// inequivalent bonds of the evolved cell.
double energy_per_spin(const UniformMps& s, const QuenchHamiltonian& h, int block_size) {
  const Eigen::MatrixXcd pair_h = entmix::detail::blocked_pair_hamiltonian(h, block_size);
  const DenseTensor op = op_tensor(pair_h);
  const double e0 = entmix::local_expectation(s, op, 0);
  const double e1 = entmix::local_expectation(s, op, 1);
  return (e0 + e1) / (2.0 * block_size);
}

}  // namespace

TEST(BuildGates, SymmetricUnitaryScheduleWithIdentityAtZeroDt) {
  const QuenchHamiltonian h{1.3, 0.0};
  const GateSet set = entmix::build_gates(h, 0.07, 1);
  ASSERT_EQ(set.schedule.size(), 3u);
  EXPECT_EQ(set.schedule[0].bond_parity, 0);
  EXPECT_EQ(set.schedule[1].bond_parity, 1);
  EXPECT_EQ(set.schedule[2].bond_parity, 0);
  EXPECT_EQ(set.block_dim, 2);

  const Eigen::MatrixXcd half = gate_matrix(set.schedule[0].gate);
  const Eigen::MatrixXcd full = gate_matrix(set.schedule[1].gate);
  const Eigen::MatrixXcd last = gate_matrix(set.schedule[2].gate);
  EXPECT_LT((half.adjoint() * half - Eigen::MatrixXcd::Identity(4, 4)).norm(), 1e-12);
  EXPECT_LT((full.adjoint() * full - Eigen::MatrixXcd::Identity(4, 4)).norm(), 1e-12);
  EXPECT_LT((half - last).norm(), 1e-15);          // symmetric splitting
  EXPECT_LT((half * half - full).norm(), 1e-13);   // two half steps = one step

  const GateSet frozen = entmix::build_gates(h, 0.0, 1);
  for (const auto& app : frozen.schedule)
    EXPECT_LT((gate_matrix(app.gate) - Eigen::MatrixXcd::Identity(4, 4)).norm(), 1e-13);

  // Second-neighbor terms cannot fit in single-spin blocks.
  EXPECT_THROW(
      {
        try {
          entmix::build_gates({1.0, 0.5}, 0.1, 1);
        } catch (const std::invalid_argument& err) {
          EXPECT_NE(std::string(err.what()).find("blocking"), std::string::npos);
          throw;
        }
      },
      std::invalid_argument);
}

TEST(BuildGates, LayerSumReconstructsRingHamiltonian) {
  // Single-spin blocks, nearest-neighbor model on a 6-site ring.
  {
    const QuenchHamiltonian h{0.9, 0.0};
    const Eigen::MatrixXcd pair = entmix::detail::blocked_pair_hamiltonian(h, 1);
    Eigen::MatrixXcd total = Eigen::MatrixXcd::Zero(64, 64);
    for (int b = 0; b < 6; ++b) total += embed(pair, {b, (b + 1) % 6}, 6);
    const Eigen::MatrixXcd exact = ed::tfi_hamiltonian(6, 0.9, 0.0, true);
    EXPECT_LT((total - exact).norm(), 1e-12);
  }
  // Two-spin blocks with second-neighbor coupling on an 8-site ring.
  {
    const QuenchHamiltonian h{0.7, 0.3};
    const Eigen::MatrixXcd pair = entmix::detail::blocked_pair_hamiltonian(h, 2);
    Eigen::MatrixXcd total = Eigen::MatrixXcd::Zero(256, 256);
    for (int b = 0; b < 4; ++b) {
      std::vector<int> sites;
      for (int j = 0; j < 4; ++j) sites.push_back((2 * b + j) % 8);
      total += embed(pair, sites, 8);
    }
    const Eigen::MatrixXcd exact = ed::tfi_hamiltonian(8, 0.7, 0.3, true);
    EXPECT_LT((total - exact).norm(), 1e-12);
  }
}

namespace {

/// Independent generator of the 6-spin, two-window (open three-block)
/// Hamiltonian that the blocked gate schedule integrates: two four-spin
/// windows at offsets 0 and 2 with the half-weight sharing rule, built
/// entirely from explicit kron operators.
ed::Mat six_site_blocked_hamiltonian(double g, double j2) {
  const int n = 6;
  ed::Mat h = ed::Mat::Zero(64, 64);
  auto zz = [&](int i, int j) -> ed::Mat {
    return ed::op_at(ed::pauli_z(), i, n) * ed::op_at(ed::pauli_z(), j, n);
  };
  for (int p : {0, 2}) {
    h -= 0.5 * zz(p + 0, p + 1);
    h -= 1.0 * zz(p + 1, p + 2);
    h -= 0.5 * zz(p + 2, p + 3);
    h -= j2 * zz(p + 0, p + 2);
    h -= j2 * zz(p + 1, p + 3);
    for (int q = 0; q < 4; ++q) h -= 0.5 * g * ed::op_at(ed::pauli_x(), p + q, n);
  }
  return h;
}

/// One full scheduled step of the blocked gates on the same 6-spin geometry.
Eigen::MatrixXcd six_site_blocked_step(const GateSet& set) {
  Eigen::MatrixXcd u = Eigen::MatrixXcd::Identity(64, 64);
  for (const auto& app : set.schedule) {
    const int offset = app.bond_parity == 0 ? 0 : 2;
    u = embed(gate_matrix(app.gate), {offset, offset + 1, offset + 2, offset + 3}, 6) * u;
  }
  return u;
}

}  // namespace

TEST(BuildGates, TrotterStepMatchesDensePropagator) {
  // Two-spin blocks with both couplings on at g=2, j2=0.1. One step lands at
  // the genuine third-order size (measured 1.08e-6 at dt=0.01; the cubic
  // constant of this instance is slightly above one), and shrinks eightfold
  // with half the step.
  {
    const ed::Mat h = six_site_blocked_hamiltonian(2.0, 0.1);
    const ed::Vec psi0 = ed::x_plus_state(6);
    const ed::Vec exact_01 = ed::evolve(h, psi0, 0.01);
    const ed::Vec exact_005 = ed::evolve(h, psi0, 0.005);
    const double err_01 =
        (six_site_blocked_step(entmix::build_gates({2.0, 0.1}, 0.01, 2)) * psi0 - exact_01)
            .norm();
    const double err_005 =
        (six_site_blocked_step(entmix::build_gates({2.0, 0.1}, 0.005, 2)) * psi0 - exact_005)
            .norm();
    EXPECT_LT(err_01, 1.5e-6);
    EXPECT_LT(err_005, 2e-7);  // ~err_01 / 8
  }
  // Single-spin blocks on a six-site ring, exercising the wrap-around bond.
  {
    const double dt = 0.005;
    const GateSet set = entmix::build_gates({0.9, 0.0}, dt, 1);
    const Eigen::MatrixXcd u_step = dense_step(set, 6, 6);
    const ed::Vec psi0 = ed::x_plus_state(6);
    const ed::Vec exact = ed::evolve(ed::tfi_hamiltonian(6, 0.9, 0.0, true), psi0, dt);
    EXPECT_LT((u_step * psi0 - exact).norm(), 1e-6);
  }
  // Two-spin blocks with second-neighbor coupling on an 8-site ring.
  {
    const double dt = 0.005;
    const GateSet set = entmix::build_gates({0.7, 0.3}, dt, 2);
    const Eigen::MatrixXcd u_step = dense_step(set, 4, 8);
    const ed::Vec psi0 = ed::x_plus_state(8);
    const ed::Vec exact = ed::evolve(ed::tfi_hamiltonian(8, 0.7, 0.3, true), psi0, dt);
    EXPECT_LT((u_step * psi0 - exact).norm(), 1e-6);
  }
}

TEST(BuildGates, TrotterErrorHalvesFourfoldOverUnitTime) {
  const ed::Mat h = six_site_blocked_hamiltonian(2.0, 0.1);
  const ed::Vec psi0 = ed::x_plus_state(6);
  const ed::Vec exact = ed::evolve(h, psi0, 1.0);
  auto accumulated_error = [&](double dt) {
    const Eigen::MatrixXcd u = six_site_blocked_step(entmix::build_gates({2.0, 0.1}, dt, 2));
    ed::Vec v = psi0;
    const int steps = static_cast<int>(std::lround(1.0 / dt));
    for (int i = 0; i < steps; ++i) v = u * v;
    return (v - exact).norm();
  };
  const double e1 = accumulated_error(0.01);
  const double e2 = accumulated_error(0.005);
  const double ratio = e1 / e2;  // measured 4.0003
  EXPECT_GT(ratio, 3.7);
  EXPECT_LT(ratio, 4.3);
}

TEST(ItebdStep, IdentityGatesFixState) {
  UniformMps s = random_canonical(11, 2, 3);
  const Eigen::VectorXd lam0 = s.bond_schmidt(0);
  const DenseTensor sx = op_tensor(pauli_x());
  const DenseTensor sz = op_tensor(pauli_z());
  const double x0 = entmix::local_expectation(s, sx, 0);
  const double z0 = entmix::local_expectation(s, sz, 0);

  const GateSet frozen = entmix::build_gates({2.0, 0.0}, 0.0, 1);
  for (int step = 0; step < 5; ++step) {
    const StepReport rep = entmix::itebd_step(s, frozen, 64, 0.0);
    EXPECT_LT(rep.truncation_error, 1e-12);
    EXPECT_LT(rep.norm_drift, 1e-12);
    EXPECT_EQ(rep.max_bond, 3);
  }
  for (int k = 0; k < s.n_sites(); ++k) {
    ASSERT_EQ(s.bond_schmidt(k).size(), lam0.size());
    EXPECT_LT((s.bond_schmidt(k) - lam0).cwiseAbs().maxCoeff(), 1e-10);
  }
  EXPECT_NEAR(entmix::local_expectation(s, sx, 0), x0, 1e-10);
  EXPECT_NEAR(entmix::local_expectation(s, sz, 0), z0, 1e-10);
  EXPECT_LT(entmix::left_canonical_residual(s), 1e-10);
}

// Field quench g=2 from the x-polarized product state: the transverse
// magnetization of the infinite chain is reproduced by the free-fermion
// correlation-matrix oracle on a ring much larger than the light cone.
TEST(ItebdStep, QuenchMatchesFreeFermionSigmaX) {
  const double g = 2.0, dt = 0.01;
  const int n_oracle = 200;

  namespace gs = entmix::gaussian;
  const Eigen::MatrixXcd m = gs::quadratic_hamiltonian(n_oracle, g, gs::Boundary::Periodic);
  const gs::CorrelationMatrix gamma0 = gs::initial_gamma(n_oracle);

  UniformMps s = x_plus_product(1);
  const GateSet set = entmix::build_gates({g, 0.0}, dt, 1);
  const DenseTensor sx = op_tensor(pauli_x());
  const QuenchHamiltonian ham{g, 0.0};

  const double e_init = energy_per_spin(s, ham, 1);
  ASSERT_NEAR(e_init, -g, 1e-12);  // zz vanishes on the x-polarized state

  double max_trunc = 0.0;
  double prev_entropy = 0.0;
  for (int block = 0; block < 2; ++block) {
    for (int step = 0; step < 100; ++step) {
      const StepReport rep = entmix::itebd_step(s, set, 64, 1e-12);
      max_trunc = std::max(max_trunc, rep.truncation_error);
    }
    const double t = 0.01 * 100 * (block + 1);

    const gs::CorrelationMatrix gamma_t = gs::evolve_gamma(gamma0, m, t);
    const double oracle_x = gs::sigma_x_profile(gamma_t)(n_oracle / 2);
    const double mps_x = entmix::local_expectation(s, sx, 0);
    EXPECT_NEAR(mps_x, oracle_x, 1e-3) << "t = " << t;

    // Entanglement keeps growing after the quench.
    const double entropy = entmix::entanglement_entropy(s.bond_schmidt(0));
    EXPECT_GT(entropy, prev_entropy + 0.05) << "t = " << t;
    prev_entropy = entropy;

    // The splitting conserves energy up to the step error.
    EXPECT_NEAR(energy_per_spin(s, ham, 1), e_init, 2e-4 * t) << "t = " << t;
    EXPECT_LT(entmix::left_canonical_residual(s), 1e-8);
  }
  EXPECT_LT(max_trunc, 1e-4);
}

TEST(ItebdStep, SecondOrderConvergence) {
  const double g = 1.5, t_final = 0.4;
  const DenseTensor sx = op_tensor(pauli_x());
  auto run = [&](double dt) {
    UniformMps s = x_plus_product(1);
    const GateSet set = entmix::build_gates({g, 0.0}, dt, 1);
    const int steps = static_cast<int>(std::lround(t_final / dt));
    for (int i = 0; i < steps; ++i) {
      const StepReport rep = entmix::itebd_step(s, set, 32, 0.0);
      EXPECT_LT(rep.norm_drift, 1e-8);  // unitary gates keep the window norm
    }
    return entmix::local_expectation(s, sx, 0);
  };
  const double ref = run(0.0025);
  const double err1 = std::abs(run(0.02) - ref);
  const double err2 = std::abs(run(0.01) - ref);
  ASSERT_GT(err2, 1e-12);  // not yet at the noise floor
  const double ratio = err1 / err2;
  EXPECT_GT(ratio, 3.2);
  EXPECT_LT(ratio, 4.8);
}

// Blocking two spins per site must not change the physics: evolve the same
// quench with one- and two-spin blocks and compare per-spin observables.
TEST(ItebdStep, BlockedEvolutionMatchesUnblocked) {
  const double g = 1.2, dt = 0.01, t_final = 0.5;
  const int steps = 50;

  UniformMps fine = x_plus_product(1);
  const GateSet set1 = entmix::build_gates({g, 0.0}, dt, 1);
  for (int i = 0; i < steps; ++i) entmix::itebd_step(fine, set1, 48, 1e-12);

  UniformMps coarse = x_plus_product(2);
  const GateSet set2 = entmix::build_gates({g, 0.0}, dt, 2);
  for (int i = 0; i < steps; ++i) entmix::itebd_step(coarse, set2, 48, 1e-12);

  const DenseTensor sx1 = op_tensor(pauli_x());
  Eigen::MatrixXcd sx_block = 0.5 * (Eigen::kroneckerProduct(pauli_x(), ed::id2()) +
                                     Eigen::kroneckerProduct(ed::id2(), pauli_x()));
  const double x_fine = entmix::local_expectation(fine, sx1, 0);
  const double x_coarse = entmix::local_expectation(coarse, op_tensor(sx_block), 0);
  EXPECT_NEAR(x_fine, x_coarse, 1e-3);
  (void)t_final;
}

// With second-neighbor coupling there is no free-fermion oracle; energy
// conservation and gauge health pin the blocked update down instead.
TEST(ItebdStep, SecondNeighborRunConservesEnergy) {
  const QuenchHamiltonian h{0.8, 0.3};
  const double dt = 0.01;
  UniformMps s = x_plus_product(2);
  const GateSet set = entmix::build_gates(h, dt, 2);

  const double e_init = energy_per_spin(s, h, 2);
  ASSERT_NEAR(e_init, -h.g, 1e-12);

  for (int i = 0; i < 50; ++i) entmix::itebd_step(s, set, 32, 1e-12);
  EXPECT_NEAR(energy_per_spin(s, h, 2), e_init, 5e-4);
  EXPECT_LT(entmix::left_canonical_residual(s), 1e-8);
  EXPECT_GT(entmix::entanglement_entropy(s.bond_schmidt(0)), 0.05);
}

// Unitary dynamics leaves the infinite-temperature state invariant, so the
// purified three-site update must keep every local observable at its
// maximally mixed value while the purification bonds grow.
TEST(ItebdStep, PurifiedInfiniteTemperatureIsStationary) {
  UniformMps s = mixed_qubit_purified();
  const GateSet set = entmix::build_gates({1.2, 0.0}, 0.02, 1);

  long max_bond = 0;
  for (int i = 0; i < 15; ++i) {
    const StepReport rep = entmix::itebd_step(s, set, 16, 1e-12);
    max_bond = std::max(max_bond, rep.max_bond);
  }
  EXPECT_GT(max_bond, 1);  // the purified state itself does evolve

  const DenseTensor sx = op_tensor(pauli_x());
  const DenseTensor sz = op_tensor(pauli_z());
  Eigen::MatrixXcd zz = Eigen::kroneckerProduct(pauli_z(), pauli_z());
  EXPECT_NEAR(entmix::local_expectation(s, sx, 0), 0.0, 1e-6);
  EXPECT_NEAR(entmix::local_expectation(s, sz, 0), 0.0, 1e-6);
  EXPECT_NEAR(entmix::local_expectation(s, op_tensor(zz), 0), 0.0, 1e-6);
  EXPECT_NEAR(entmix::local_expectation(s, op_tensor(Eigen::MatrixXcd::Identity(2, 2)), 0), 1.0,
              1e-8);
  EXPECT_LT(entmix::left_canonical_residual(s), 1e-8);

  // The single-site marginal stays maximally mixed; the reduced block also
  // carries the (grown) left purification bond, which gets traced out.
  const entmix::BlockedCentral blk = entmix::block_central(s, 1);
  const entmix::DensityBlock rho = entmix::reduced_density(blk, entmix::ReducedSide::LS);
  const long d_site = blk.c.dim(1);
  const long d_bond = rho.matrix.rows() / d_site;
  Eigen::MatrixXcd site_marginal = Eigen::MatrixXcd::Zero(d_site, d_site);
  for (long l = 0; l < d_bond; ++l)
    site_marginal += rho.matrix.block(l * d_site, l * d_site, d_site, d_site);
  EXPECT_LT((site_marginal - 0.5 * Eigen::MatrixXcd::Identity(2, 2)).norm(), 1e-6);
}
