#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>

#include "lpt/simulate.hpp"

using namespace lpt;

namespace {

SimConfig d1() { return SimConfig{}; }

}  // namespace

TEST(Generate, ShapesMissingnessAndStructure) {
  RngStream rng(1);
  auto [data, truth] = generate_dataset(d1(), rng);
  EXPECT_EQ(data.num_igs(), 800);
  EXPECT_EQ(data.num_samples(), 80);
  EXPECT_NO_THROW(data.validate());
  const double frac = static_cast<double>(data.missing.count()) / (800.0 * 80.0);
  EXPECT_LT(std::abs(frac - 0.2), 3.0 * std::sqrt(0.2 * 0.8 / (800.0 * 80.0)));
  const MatrixXd B = materialize_B(truth.b, truth.u, 32);
  for (Index i = 0; i < B.rows(); ++i) ASSERT_EQ((B.row(i).array() != 0.0).count(), 1);
  for (Index i = 0; i < 800; ++i) ASSERT_EQ(data.annotations.at(static_cast<int>(i)), truth.protein_labels[truth.u[i]]);
  for (Index n = 0; n < 80; ++n)
    for (Index i = 0; i < 800; ++i) ASSERT_EQ(std::isnan(data.values(i, n)), data.missing(i, n));
  EXPECT_GT(Eigen::SelfAdjointEigenSolver<MatrixXd>(truth.Sigma).eigenvalues().minCoeff(), 0.0);
  EXPECT_GE(truth.alpha, 0.8);
  EXPECT_LE(truth.alpha, 2.4);
  const MatrixXd expect = truth.A * truth.A.transpose() + B * truth.S * B.transpose() + MatrixXd(truth.psi.asDiagonal());
  EXPECT_LT((truth.Sigma - expect).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Generate, DeterministicPerSeed) {
  RngStream a(5), b(5), c(6);
  auto [d1a, t1a] = generate_dataset(d1(), a);
  auto [d1b, t1b] = generate_dataset(d1(), b);
  auto [d2, t2] = generate_dataset(d1(), c);
  EXPECT_TRUE((d1a.missing == d1b.missing).all());
  EXPECT_TRUE(t1a.complete == t1b.complete);
  EXPECT_FALSE((d1a.missing == d2.missing).all());
}

TEST(Generate, EmpiricalCovarianceConvergesToSigma) {
  // Sigma is the covariance of x given the parameters; regenerate many samples
  // from fixed parameters via the same observation routine.
  SimConfig c;
  c.p = 6;
  c.N = 100000;
  c.N_B = 1;
  c.N_F = 2;
  c.N_P = 3;
  c.missing_fraction = 0.0;
  RngStream rng(7);
  auto [data, truth] = generate_dataset(c, rng);
  // W here is one draw of the profiles; its sample covariance approximates S.
  const MatrixXd x = data.values;
  const MatrixXd centered = x.colwise() - x.rowwise().mean();
  const MatrixXd emp = centered * centered.transpose() / static_cast<double>(c.N - 1);
  const double scale = truth.Sigma.cwiseAbs().maxCoeff();
  EXPECT_LT((emp - truth.Sigma).cwiseAbs().maxCoeff(), 0.05 * scale);
}

TEST(Confounded, OverlapIsExact) {
  SimConfig c = d1();
  for (double tau : {0.5, 0.75, 1.0}) {
    RngStream rng(8);
    auto [data, truth] = generate_confounded_dataset(c, tau, 0.75, rng);
    int agree = 0;
    for (Index n = 0; n < c.N; ++n) agree += truth.effect[n] == truth.batch[n];
    EXPECT_EQ(agree, static_cast<int>(std::floor(tau * c.N)));
    EXPECT_TRUE(truth.S.isIdentity());
  }
}

TEST(Confounded, EffectSizeMoment) {
  SimConfig c = d1();
  c.p = 40;
  c.N_P = 4;
  double diff = 0.0;
  const int reps = 200;
  for (int r = 0; r < reps; ++r) {
    RngStream rng(100 + r);
    auto [data, truth] = generate_confounded_dataset(c, 0.5, 0.75, rng);
    double s1 = 0, s0 = 0;
    int n1 = 0, n0 = 0;
    for (Index n = 0; n < c.N; ++n) {
      if (truth.effect[n] == 1) {
        s1 += truth.W(0, n);
        ++n1;
      } else {
        s0 += truth.W(0, n);
        ++n0;
      }
    }
    diff += (s1 / n1 - s0 / n0) / reps;
  }
  // Each replicate difference has sd about sqrt(4 / N).
  EXPECT_LT(std::abs(diff - 1.5), 3.0 * std::sqrt(4.0 / c.N / reps));
}

TEST(Confounded, Preconditions) {
  RngStream rng(9);
  SimConfig c = d1();
  EXPECT_THROW(generate_confounded_dataset(c, 0.4, 0.75, rng), InputError);
  c.N_B = 3;
  EXPECT_THROW(generate_confounded_dataset(c, 0.5, 0.75, rng), InputError);
  c = d1();
  c.N_P = 2;
  EXPECT_THROW(generate_confounded_dataset(c, 0.5, 0.75, rng), InputError);
}

TEST(Config, Validation) {
  SimConfig c;
  c.N_P = 900;
  EXPECT_THROW(c.validate(), InputError);
  c = SimConfig{};
  c.N_B = 100;
  EXPECT_THROW(c.validate(), InputError);
}
