#include <gtest/gtest.h>

#include "qseig/blockvec.hpp"
#include "qseig/greens.hpp"
#include "test_util.hpp"

using namespace qseig;
using namespace qseig::testing;

namespace {

Discretization coarse_coulomb(double sigma) {
  return assemble(DomainSpec{3, {-20, -20, -20}, {20, 20, 20}}, GridSpec{{9, 9, 9}},
                  potential::SoftCoulomb{1.0, 2.0}, 0.5, sigma);
}

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::InvalidArgument;
}

}  // namespace

TEST(Green, SoftCoulombUnshiftedIsRejected) {
  const Discretization d = coarse_coulomb(0.0);
  EXPECT_EQ(kind_of([&] { InverseOperator g(d, solver::Direct{}); }), ErrorKind::NotPositiveDefinite);
  EXPECT_EQ(kind_of([&] { InverseOperator g(d, solver::ConjugateGradient{}); }),
            ErrorKind::NotPositiveDefinite);
}

TEST(Green, SoftCoulombShiftedSucceeds) {
  const Discretization d = coarse_coulomb(1.0);
  const InverseOperator g(d, solver::Direct{});
  const BlockState u = random_state(d.size(), 2, 4);
  const BlockState gu = g.apply(u);
  EXPECT_LT((d.A * gu.matrix() - d.M.asDiagonal() * u.matrix()).norm(), 1e-10 * u.matrix().norm());
}

TEST(Green, EigenvectorMapsToReciprocal) {
  const Discretization d = harmonic_2d(12);
  const DensePencil p = dense_pencil(d);
  const InverseOperator g(d, solver::Direct{});
  for (int k : {0, 1, 5}) {
    const BlockState v(p.vectors.col(k));
    const BlockState gv = g.apply(v);
    EXPECT_LT((gv.matrix() - v.matrix() / p.values(k)).norm(), 1e-10 * v.matrix().norm() / p.values(k));
  }
}

TEST(Green, StiffnessOfGreenIsMass) {
  const Discretization d = harmonic_2d(15, 0.3);
  for (const SolverMethod& m : {SolverMethod(solver::Direct{}), SolverMethod(solver::ConjugateGradient{1e-12})}) {
    const InverseOperator g(d, m);
    const BlockState u = random_state(d.size(), 3, 8);
    const BlockState lhs = apply_stiffness(d, g.apply(u));
    const BlockState rhs = apply_mass(d, u);
    EXPECT_LT((lhs.matrix() - rhs.matrix()).norm(), 1e-10 * rhs.matrix().norm());
  }
}

TEST(Green, ZeroInputGivesZero) {
  const Discretization d = harmonic_2d(10);
  for (const SolverMethod& m : {SolverMethod(solver::Direct{}), SolverMethod(solver::ConjugateGradient{})}) {
    const InverseOperator g(d, m);
    EXPECT_EQ(g.apply(BlockState::zeros(d.size(), 2)).matrix().norm(), 0.0);
  }
}

TEST(Green, SolveCountTracksColumns) {
  const Discretization d = harmonic_2d(10);
  const InverseOperator g(d, solver::Direct{});
  EXPECT_EQ(g.solve_count(), 0u);
  g.apply(random_state(d.size(), 3, 1));
  g.apply(random_state(d.size(), 5, 2));
  EXPECT_EQ(g.solve_count(), 8u);
}

TEST(Green, ConjugateGradientMatchesDirect) {
  const Discretization d = harmonic_2d(20);
  const InverseOperator direct(d, solver::Direct{});
  for (auto pc : {solver::Preconditioner::Jacobi, solver::Preconditioner::None}) {
    const InverseOperator cg(d, solver::ConjugateGradient{1e-12, 20000, pc});
    const BlockState u = random_state(d.size(), 3, 31);
    const Eigen::MatrixXd a = direct.apply(u).matrix();
    const Eigen::MatrixXd b = cg.apply(u).matrix();
    EXPECT_LT((a - b).norm(), 1e-9 * a.norm());
  }
}

TEST(Green, ConjugateGradientToleranceValidated) {
  const Discretization d = harmonic_2d(8);
  EXPECT_EQ(kind_of([&] { InverseOperator g(d, solver::ConjugateGradient{1e-3}); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { InverseOperator g(d, solver::ConjugateGradient{0.0}); }), ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { InverseOperator g(d, solver::ConjugateGradient{1e-12, 0}); }),
            ErrorKind::InvalidArgument);
  EXPECT_EQ(kind_of([&] { InverseOperator g(d, solver::ConjugateGradient{1e-14, 1}); }), ErrorKind::NoConvergence);
}

TEST(Green, SelfAdjointInL2Pairing) {
  const Discretization d = harmonic_2d(16, 0.2);
  const InverseOperator g(d, solver::Direct{});
  const BlockState u = random_state(d.size(), 3, 41);
  const BlockState v = random_state(d.size(), 2, 42);
  const Eigen::MatrixXd left = gram_l2(d, g.apply(u), v);
  const Eigen::MatrixXd right = gram_l2(d, u, g.apply(v));
  EXPECT_LT((left - right).norm(), 1e-11 * left.norm());
}

TEST(Green, DualityWithStiffnessPairing) {
  // <GU, V>_a = <U, V>
  const Discretization d = harmonic_2d(16);
  const InverseOperator g(d, solver::Direct{});
  const BlockState u = random_state(d.size(), 3, 51);
  const BlockState v = random_state(d.size(), 3, 52);
  const Eigen::MatrixXd left = gram_a(d, g.apply(u), v);
  const Eigen::MatrixXd right = gram_l2(d, u, v);
  EXPECT_LT((left - right).norm(), 1e-10 * right.norm());
}

TEST(Green, PositiveAndBoundedByInverseLambda1) {
  const Discretization d = harmonic_2d(14);
  const DensePencil p = dense_pencil(d);
  const InverseOperator g(d, solver::Direct{});
  for (unsigned s = 0; s < 5; ++s) {
    const BlockState u = random_state(d.size(), 1, 60 + s);
    const double uu = gram_l2(d, u, u)(0, 0);
    const double ugu = gram_l2(d, u, g.apply(u))(0, 0);
    EXPECT_GT(ugu, 0.0);
    EXPECT_LE(ugu, uu / p.values(0) * (1 + 1e-12));
  }
}

TEST(Green, ThreadCountDoesNotChangeResult) {
  const Discretization d = harmonic_2d(18);
  const InverseOperator serial(d, solver::ConjugateGradient{1e-11}, 1);
  const InverseOperator pooled(d, solver::ConjugateGradient{1e-11}, 3);
  const BlockState u = random_state(d.size(), 7, 71);
  EXPECT_EQ(serial.apply(u), pooled.apply(u));
  const InverseOperator direct1(d, solver::Direct{}, 1);
  const InverseOperator direct4(d, solver::Direct{}, 4);
  EXPECT_EQ(direct1.apply(u), direct4.apply(u));
}

TEST(Green, RowMismatchRejected) {
  const Discretization d = harmonic_2d(8);
  const InverseOperator g(d, solver::Direct{});
  EXPECT_EQ(kind_of([&] { g.apply(BlockState::zeros(d.size() + 1, 1)); }), ErrorKind::DimensionMismatch);
}

TEST(Green, DefaultMethodSwitchesOnSize) {
  EXPECT_TRUE(std::holds_alternative<solver::Direct>(default_method(6241)));
  EXPECT_TRUE(std::holds_alternative<solver::ConjugateGradient>(default_method(1000000)));
}
