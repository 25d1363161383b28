#include <gtest/gtest.h>

#include <map>

#include "lpt/archive.hpp"
#include "lpt/coalescent.hpp"
#include "oracles.hpp"

using namespace lpt;

using oracle::dense_phi;
using oracle::random_spd;

TEST(CoalescentPrior, TwoLeavesExponentialTime) {
  RngStream rng(1);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const TreeState t = coalescent_sample_prior(2, rng);
    ASSERT_EQ(t.merges.size(), 1u);
    sum -= t.times[0];
  }
  EXPECT_LT(std::abs(sum / n - 1.0), 3.0 / std::sqrt(n));
}

TEST(CoalescentPrior, ThreeLeafTopologiesUniform) {
  RngStream rng(2);
  std::map<std::pair<int, int>, int> counts;
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[coalescent_sample_prior(3, rng).merges[0]];
  ASSERT_EQ(counts.size(), 3u);
  const double se = std::sqrt((1.0 / 3.0) * (2.0 / 3.0) / n);
  for (const auto& [pair, c] : counts) EXPECT_LT(std::abs(c / static_cast<double>(n) - 1.0 / 3.0), 3.0 * se);
}

TEST(CoalescentPrior, ValidTreesAndExpectedDepth) {
  RngStream rng(3);
  const int leaves = 6, n = 20000;
  double depth = 0.0;
  for (int i = 0; i < n; ++i) {
    const TreeState t = coalescent_sample_prior(leaves, rng);
    ASSERT_TRUE(t.is_valid());
    for (std::size_t j = 1; j < t.times.size(); ++j) ASSERT_LT(t.times[j], t.times[j - 1]);
    depth -= t.times.back();
  }
  // Sum of N_P - 1 unit-mean holding times; variance N_P - 1.
  EXPECT_LT(std::abs(depth / n - (leaves - 1)), 3.0 * std::sqrt((leaves - 1.0) / n));
}

TEST(MessageUp, Examples) {
  VectorXd m(2);
  m << 1.0, -2.0;
  const Message leaf{m, 0.0};
  const Message p = message_up({m, 0.3}, {m, 0.3}, 0.7, 0.7);
  EXPECT_LT((p.mean - m).norm(), 1e-15);
  EXPECT_NEAR(p.var, 0.5, 1e-15);
  const Message inf = message_up({m, 0.4}, {VectorXd::Zero(2), std::numeric_limits<double>::infinity()}, 0.1, 1.0);
  EXPECT_EQ(inf.mean, m);
  EXPECT_NEAR(inf.var, 0.5, 1e-15);
  EXPECT_THROW(message_up(leaf, leaf, 0.0, 0.0), InputError);
  EXPECT_THROW(message_up(leaf, leaf, -1.0, 1.0), InputError);
}

TEST(MessageUp, MatchesDenseGaussianOracle) {
  RngStream rng(4);
  for (int rep = 0; rep < 100; ++rep) {
    const int leaves = 2 + rng.uniform_int(5);
    const Index n = 1 + rng.uniform_int(3);
    TreeState tree = coalescent_sample_prior(leaves, rng);
    const MatrixXd phi_m = random_spd(n, rng);
    tree.phi = dense_phi(phi_m);
    const MatrixXd w = MatrixXd::NullaryExpr(leaves, n, [&]() { return rng.normal(); });
    const double log_lik = upward_pass(tree, w);
    const oracle::RootMarginal o = oracle::dense_root_marginal(tree, w, phi_m);
    const int root = tree.root();
    EXPECT_LT((tree.node_mean[root] - o.mean).norm(), 1e-8 * std::max(1.0, o.mean.norm())) << rep;
    EXPECT_LT(std::abs(tree.node_msgvar[root] - o.var), 1e-8 * o.var) << rep;
    EXPECT_LT(std::abs(log_lik - o.log_evidence), 1e-8 * std::max(1.0, std::abs(o.log_evidence))) << rep;
  }
}

TEST(TreeMarginal, TwoLeafClosedForm) {
  TreeState t;
  t.num_leaves = 2;
  t.merges = {{0, 1}};
  t.times = {-0.8};
  MatrixXd w(2, 2);
  w << 0.5, 1.0, -0.2, 0.4;
  MatrixXd phi_m(2, 2);
  phi_m << 1.0, 0.3, 0.3, 2.0;
  const PhiModel phi = dense_phi(phi_m);
  const VectorXd d = (w.row(0) - w.row(1)).transpose();
  const MatrixXd K = 1.6 * phi_m;
  const double expect = -std::log(2.0 * std::numbers::pi) - 0.5 * std::log(K.determinant()) -
                        0.5 * d.dot(K.inverse() * d);
  EXPECT_NEAR(tree_log_marginal(w, t, phi, TreeScore::LikelihoodOnly), expect, 1e-12);
  EXPECT_NEAR(tree_log_marginal(w, t, phi, TreeScore::Joint), expect - 0.8, 1e-12);
  // Inflating Phi lowers the likelihood of distinct leaves.
  EXPECT_LT(tree_log_marginal(w, t, dense_phi(phi_m * 1e6), TreeScore::LikelihoodOnly), expect);
  // Swapping children changes nothing.
  TreeState s = t;
  s.merges = {{1, 0}};
  EXPECT_NEAR(tree_log_marginal(w, s, phi, TreeScore::LikelihoodOnly), expect, 1e-12);
}

TEST(Smc, TwoLeavesSingleTopology) {
  // One topology, so weights vary only through the sampled merge time; the
  // evidence is a one-dimensional integral over that time.
  MatrixXd w(2, 1);
  w << 0.3, -0.5;
  const PhiModel phi = PhiModel::diag_gamma(1, 1.1, 1.0);
  const SmcResult r = smc_resample_tree(w, phi, 4096, RngStream(5));
  ASSERT_EQ(r.tree.merges.size(), 1u);
  EXPECT_EQ(r.tree.merges[0], std::make_pair(0, 1));
  EXPECT_EQ(r.resamples, 0);
  auto log_f = [&](double d) {
    TreeState t;
    t.num_leaves = 2;
    t.merges = {{0, 1}};
    t.times = {-d};
    return -d + oracle::dense_root_marginal(t, w, phi.matrix).log_evidence;
  };
  const double oracle_log =
      oracle::log_integral(log_f, 0.0, std::numeric_limits<double>::infinity(), log_f(0.5));
  EXPECT_LT(std::abs(std::exp(r.log_evidence - oracle_log) - 1.0), 0.05);
}

TEST(Smc, EvidenceMatchesEnumerationAndQuadrature) {
  MatrixXd w(3, 1);
  w << 0.4, -0.9, 1.3;
  const PhiModel phi = PhiModel::diag_gamma(1, 1.1, 1.0);
  const double oracle_log = oracle::three_leaf_log_evidence(w, MatrixXd::Identity(1, 1));
  const SmcResult r = smc_resample_tree(w, phi, 4096, RngStream(6));
  EXPECT_LT(std::abs(std::exp(r.log_evidence - oracle_log) - 1.0), 0.05);
}

TEST(Smc, EvidenceEstimatorUnbiased) {
  MatrixXd w(3, 2);
  w << 0.4, 0.1, -0.9, 0.5, 1.3, -0.2;
  const PhiModel phi = PhiModel::diag_gamma(2, 1.1, 1.0);
  const double oracle_log = oracle::three_leaf_log_evidence(w, MatrixXd::Identity(2, 2));
  const int runs = 200;
  std::vector<double> ratio(runs);
  const RngStream root(7);
  for (int i = 0; i < runs; ++i)
    ratio[i] = std::exp(smc_resample_tree(w, phi, 16, root.derive({static_cast<std::uint64_t>(i)})).log_evidence -
                        oracle_log);
  double mean = 0.0, var = 0.0;
  for (double x : ratio) mean += x / runs;
  for (double x : ratio) var += (x - mean) * (x - mean) / (runs - 1);
  EXPECT_LT(std::abs(mean - 1.0), 3.0 * std::sqrt(var / runs));
}

TEST(Smc, DeterministicAndValid) {
  RngStream rng(8);
  const MatrixXd w = MatrixXd::NullaryExpr(6, 3, [&]() { return rng.normal(); });
  const PhiModel phi = PhiModel::diag_gamma(3, 1.1, 1.0);
  const SmcResult a = smc_resample_tree(w, phi, 32, RngStream(9));
  const SmcResult b = smc_resample_tree(w, phi, 32, RngStream(9), 4);
  EXPECT_TRUE(a.tree.is_valid());
  EXPECT_EQ(a.tree.merges, b.tree.merges);
  EXPECT_EQ(a.tree.times, b.tree.times);
  EXPECT_EQ(a.log_evidence, b.log_evidence);
  // Returned messages agree with a fresh upward pass.
  TreeState t = a.tree;
  upward_pass(t, w);
  for (int id = 0; id < t.num_nodes(); ++id)
    EXPECT_LT((t.node_mean[id] - a.tree.node_mean[id]).norm(), 1e-9);
}

TEST(DownwardPass, RootPosteriorOfTwoLeaves) {
  TreeState t;
  t.num_leaves = 2;
  t.merges = {{0, 1}};
  t.times = {-0.5};
  t.phi = PhiModel::diag_gamma(1, 1.1, 1.0);
  MatrixXd w(2, 1);
  w << 1.0, 3.0;
  upward_pass(t, w);
  RngStream rng(10);
  double sum = 0.0, sq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    sample_internal_nodes(t, rng);
    const double v = t.node_value[2][0];
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n, var = sq / n - mean * mean;
  EXPECT_LT(std::abs(mean - 2.0), 3.0 * std::sqrt(0.25 / n));
  EXPECT_NEAR(var, 0.25, 0.01);
}

TEST(Phi, DiagZeroIncrementsIsPrior) {
  PhiModel phi = PhiModel::diag_gamma(3, 2.0, 0.5);
  const auto params = phi_precision_conditional({}, phi);
  for (const auto& g : params) {
    EXPECT_EQ(g.shape, 2.0);
    EXPECT_EQ(g.rate, 0.5);
  }
}

TEST(Phi, KernelEntries) {
  const std::vector<double> t = {0.0, 1.0, 0.0};
  const std::vector<int> s = {0, 0, 1};
  const MatrixXd k = PhiModel::kernel_matrix(t, s, 2.0, 0.1);
  EXPECT_NEAR(k(0, 1), std::exp(-0.5), 1e-15);
  EXPECT_EQ(k(0, 2), 0.0);
  EXPECT_NEAR(k(1, 1), 1.1, 1e-15);
}

TEST(Phi, UpdatesStaySpd) {
  RngStream rng(11);
  for (PhiVariant v : {PhiVariant::DiagGamma, PhiVariant::InvWishart, PhiVariant::GpKernel}) {
    const Index n = 4;
    PhiModel phi = v == PhiVariant::DiagGamma ? PhiModel::diag_gamma(n, 1.1, 0.1)
                   : v == PhiVariant::InvWishart
                       ? PhiModel::inverse_wishart(PhiModel::replicate_block_scale({0, 0, 1, 1}, n, 0.9, 0.1), 40.0)
                       : PhiModel::gp_kernel({0, 1, 2, 0}, {0, 0, 0, 1}, 1.0, 0.1);
    const MatrixXd w = MatrixXd::NullaryExpr(5, n, [&]() { return rng.normal(); });
    TreeState tree = smc_resample_tree(w, phi, 8, RngStream(12)).tree;
    for (int it = 0; it < 20; ++it) {
      sample_internal_nodes(tree, rng);
      tree.phi = update_phi(tree, tree.phi, rng);
      ASSERT_EQ(Eigen::LLT<MatrixXd>(tree.phi.matrix).info(), Eigen::Success);
      upward_pass(tree, w);
    }
  }
}

TEST(MapTree, ArgmaxWithEarliestTie) {
  PosteriorArchive a;
  EXPECT_THROW(select_map_tree(a), InputError);
  for (double v : {1.0, 3.0, 2.0, 3.0}) {
    Draw d;
    d.tree.num_leaves = static_cast<int>(a.draws.size()) + 1;
    d.tree_log_marginal = v;
    a.draws.push_back(d);
  }
  EXPECT_EQ(select_map_tree(a).num_leaves, 2);
}

TEST(Newick, TwoLeaves) {
  TreeState t;
  t.num_leaves = 2;
  t.merges = {{1, 0}};
  t.times = {-1.0};
  EXPECT_EQ(export_newick(t, {"A", "B"}), "(A:1,B:1);");
  EXPECT_THROW(export_newick(t, {"A"}), InputError);
}

TEST(Newick, RoundTripDistances) {
  RngStream rng(13);
  const std::vector<std::string> labels = {"P3", "P1", "P5", "P2", "P4"};
  for (int rep = 0; rep < 20; ++rep) {
    const TreeState t = coalescent_sample_prior(5, rng);
    const std::string text = export_newick(t, labels);
    EXPECT_EQ(text, export_newick(t, labels));
    const auto dist = oracle::newick_distances(text);
    const auto parent = t.parents();
    for (int a = 0; a < 5; ++a)
      for (int b = 0; b < 5; ++b) {
        if (a == b) continue;
        std::vector<int> up;
        for (int x = a; x >= 0; x = parent[x]) up.push_back(x);
        int lca = t.root();
        for (int x = b; x >= 0; x = parent[x])
          if (std::find(up.begin(), up.end(), x) != up.end()) {
            lca = x;
            break;
          }
        const double expect = -2.0 * t.node_time(lca);
        EXPECT_NEAR(dist.at({labels[a], labels[b]}), expect, 1e-12);
      }
  }
}
