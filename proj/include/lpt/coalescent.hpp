#pragma once

// Kingman-coalescent prior over the latent proteins, Gaussian message passing
// on the tree, SMC tree resampling and the sample-covariance (Phi) models.
//
// Conventions: leaves are nodes 0..L-1 at time 0; merge j creates node L + j at
// time times[j] < 0. A child c with parent q has branch length
// t_c - t_q > 0 and v_c | v_q ~ N(v_q, (t_c - t_q) Phi). The root carries a
// flat prior, so marginal likelihoods are products of per-merge terms.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "lpt/core.hpp"
#include "lpt/error.hpp"
#include "lpt/stochastics.hpp"

namespace lpt {

/// Covariance across samples shared by every branch of the tree.
struct PhiModel {
  PhiVariant variant = PhiVariant::DiagGamma;

  // DiagGamma: Phi = diag(1 / precision), precision_n ~ Gamma(gamma_shape, gamma_rate).
  VectorXd precision;
  double gamma_shape = 1.1, gamma_rate = 0.001;

  // InvWishart: Phi ~ IW(iw_scale, iw_dof).
  MatrixXd iw_scale;
  double iw_dof = 0.0;

  // GpKernel: phi(i, j) = c_ij exp(-d_ij^2 / length_scale) + noise_var delta_ij.
  double length_scale = 1.0, noise_var = 0.1;
  std::vector<double> times;
  std::vector<int> subjects;
  double length_bounds[2] = {1e-3, 1e3};
  double noise_bounds[2] = {1e-6, 1e3};

  // Realized matrix and its lower Cholesky factor (dense variants only).
  MatrixXd matrix;
  MatrixXd chol;
  double log_det = 0.0;

  static PhiModel diag_gamma(Index n, double shape, double rate) {
    PhiModel phi;
    phi.variant = PhiVariant::DiagGamma;
    phi.precision = VectorXd::Ones(n);
    phi.gamma_shape = shape;
    phi.gamma_rate = rate;
    phi.refresh();
    return phi;
  }

  static PhiModel inverse_wishart(const MatrixXd& scale, double dof) {
    require(scale.rows() == scale.cols() && scale.rows() >= 1, "phi: inverse Wishart scale must be square");
    require(dof > static_cast<double>(scale.rows()) - 1.0, "phi: inverse Wishart dof must exceed N - 1");
    PhiModel phi;
    phi.variant = PhiVariant::InvWishart;
    phi.iw_scale = scale;
    phi.iw_dof = dof;
    const double q = static_cast<double>(scale.rows());
    phi.matrix = dof > q + 1.0 ? MatrixXd(scale / (dof - q - 1.0)) : scale;
    phi.refresh();
    return phi;
  }

  static PhiModel gp_kernel(std::vector<double> sample_times, std::vector<int> subject_ids, double length,
                            double noise) {
    require(sample_times.size() == subject_ids.size() && !sample_times.empty(),
            "phi: GP kernel needs one time and one subject per sample");
    PhiModel phi;
    phi.variant = PhiVariant::GpKernel;
    phi.times = std::move(sample_times);
    phi.subjects = std::move(subject_ids);
    phi.length_scale = length;
    phi.noise_var = noise;
    phi.refresh();
    return phi;
  }

  /// Block scale with `block` between members of one replicate group and `ridge` on the diagonal.
  static MatrixXd replicate_block_scale(const std::vector<int>& groups, Index n, double block, double ridge) {
    MatrixXd scale = MatrixXd::Zero(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const bool same = i == j || (!groups.empty() && groups[i] == groups[j]);
        if (same) scale(i, j) = block;
      }
    scale.diagonal().array() += ridge;
    return scale;
  }

  static MatrixXd kernel_matrix(const std::vector<double>& t, const std::vector<int>& subj, double length,
                                double noise) {
    const Index n = static_cast<Index>(t.size());
    MatrixXd k = MatrixXd::Zero(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        if (subj[i] == subj[j]) {
          const double d = t[i] - t[j];
          k(i, j) = std::exp(-d * d / length);
        }
        if (i == j) k(i, j) += noise;
      }
    return k;
  }

  Index dim() const { return variant == PhiVariant::DiagGamma ? precision.size() : matrix.rows(); }
  bool diagonal() const { return variant == PhiVariant::DiagGamma; }

  /// Recompute the realized matrix, factor and log determinant from parameters.
  void refresh() {
    if (variant == PhiVariant::DiagGamma) {
      matrix = precision.cwiseInverse().asDiagonal();
      chol.resize(0, 0);
      log_det = -precision.array().log().sum();
      return;
    }
    if (variant == PhiVariant::GpKernel) matrix = kernel_matrix(times, subjects, length_scale, noise_var);
    Eigen::LLT<MatrixXd> llt(matrix);
    if (llt.info() != Eigen::Success) throw NumericalError("phi: realized matrix is not SPD");
    chol = llt.matrixL();
    log_det = 2.0 * chol.diagonal().array().log().sum();
  }

  /// L^-1 v with Phi = L L^T.
  VectorXd whiten(const VectorXd& v) const {
    if (diagonal()) return v.cwiseProduct(precision.cwiseSqrt());
    return chol.triangularView<Eigen::Lower>().solve(v);
  }
  VectorXd unwhiten(const VectorXd& v) const {
    if (diagonal()) return v.cwiseQuotient(precision.cwiseSqrt());
    return chol.triangularView<Eigen::Lower>() * v;
  }
  /// v^T Phi^-1 v.
  double mahalanobis(const VectorXd& v) const { return whiten(v).squaredNorm(); }
};

/// Gaussian message (mean vector, scalar variance multiplier of Phi).
struct Message {
  VectorXd mean;
  double var = 0.0;
};

struct TreeState {
  int num_leaves = 0;
  std::vector<std::pair<int, int>> merges;
  std::vector<double> times;
  std::vector<VectorXd> node_mean;    // upward messages
  std::vector<double> node_msgvar;
  std::vector<VectorXd> node_value;   // downward draws; leaves hold W rows
  PhiModel phi;

  int num_nodes() const { return std::max(0, 2 * num_leaves - 1); }
  int root() const { return num_nodes() - 1; }
  double node_time(int id) const { return id < num_leaves ? 0.0 : times[id - num_leaves]; }

  std::vector<int> parents() const {
    std::vector<int> parent(num_nodes(), -1);
    for (std::size_t j = 0; j < merges.size(); ++j) {
      parent[merges[j].first] = num_leaves + static_cast<int>(j);
      parent[merges[j].second] = num_leaves + static_cast<int>(j);
    }
    return parent;
  }

  double branch_length(int id) const {
    const auto parent = parents();
    require(parent[id] >= 0, "tree: the root has no branch");
    return node_time(id) - node_time(parent[id]);
  }

  /// Merges reduce the forest to one tree and every child is later than its parent.
  bool is_valid() const {
    if (num_leaves < 1) return false;
    if (static_cast<int>(merges.size()) != num_leaves - 1 || times.size() != merges.size()) return false;
    std::vector<bool> alive(num_nodes(), false);
    for (int k = 0; k < num_leaves; ++k) alive[k] = true;
    for (std::size_t j = 0; j < merges.size(); ++j) {
      const auto [l, r] = merges[j];
      const int self = num_leaves + static_cast<int>(j);
      if (l == r || l < 0 || r < 0 || l >= self || r >= self || !alive[l] || !alive[r]) return false;
      if (!(node_time(l) > times[j]) || !(node_time(r) > times[j])) return false;
      alive[l] = alive[r] = false;
      alive[self] = true;
    }
    return true;
  }
};

/// Topology and times from the coalescent prior: a uniformly chosen pair of
/// surviving blocks merges after an Exponential(1) holding time.
inline TreeState coalescent_sample_prior(int num_leaves, RngStream& rng) {
  require(num_leaves >= 2, "coalescent prior needs at least two leaves");
  TreeState tree;
  tree.num_leaves = num_leaves;
  std::vector<int> active(num_leaves);
  for (int k = 0; k < num_leaves; ++k) active[k] = k;
  double t = 0.0;
  for (int j = 0; j < num_leaves - 1; ++j) {
    t -= rng.exponential(1.0);
    const int k = static_cast<int>(active.size());
    const int a = rng.uniform_int(k);
    int b = rng.uniform_int(k - 1);
    if (b >= a) ++b;
    const int left = active[std::min(a, b)], right = active[std::max(a, b)];
    tree.merges.emplace_back(left, right);
    tree.times.push_back(t);
    active.erase(active.begin() + std::max(a, b));
    active.erase(active.begin() + std::min(a, b));
    active.push_back(num_leaves + j);
  }
  return tree;
}

/// Parent message from two children whose branches have lengths left_branch and right_branch.
inline Message message_up(const Message& left, const Message& right, double left_branch, double right_branch) {
  require(left_branch >= 0.0 && right_branch >= 0.0, "message_up: negative branch length");
  require(left.var >= 0.0 && right.var >= 0.0, "message_up: negative message variance");
  const double sl = left.var + left_branch, sr = right.var + right_branch;
  if (sl == 0.0 && sr == 0.0) throw InputError("message_up: both children are deterministic at the merge");
  Message out;
  if (std::isinf(sr)) return Message{left.mean, sl};
  if (std::isinf(sl)) return Message{right.mean, sr};
  if (sl == 0.0) return Message{left.mean, 0.0};
  if (sr == 0.0) return Message{right.mean, 0.0};
  out.var = 1.0 / (1.0 / sl + 1.0 / sr);
  out.mean = out.var * (left.mean / sl + right.mean / sr);
  return out;
}

/// log N(difference; 0, var * Phi) given the Mahalanobis norm of the difference.
inline double merge_log_density(double mahalanobis, double var, Index dim, double log_det_phi) {
  const double n = static_cast<double>(dim);
  return -0.5 * n * std::log(2.0 * std::numbers::pi * var) - 0.5 * log_det_phi - 0.5 * mahalanobis / var;
}

/// Coalescent prior log density of (times, topology) under rate-1 holding times.
inline double coalescent_log_prior(const TreeState& tree) {
  double out = 0.0, previous = 0.0;
  for (std::size_t j = 0; j < tree.times.size(); ++j) {
    const double k = static_cast<double>(tree.num_leaves - static_cast<int>(j));
    out += -std::log(0.5 * k * (k - 1.0)) - (previous - tree.times[j]);
    previous = tree.times[j];
  }
  return out;
}

/// Upward pass: fills node messages from the leaf rows of `leaves` (N_P x N)
/// and returns log p(leaves | tree, Phi).
inline double upward_pass(TreeState& tree, const MatrixXd& leaves) {
  require(leaves.rows() == tree.num_leaves, "upward pass: leaf count mismatch");
  require(tree.is_valid(), "upward pass: invalid tree");
  require(leaves.cols() == tree.phi.dim(), "upward pass: Phi dimension mismatch");
  const int nodes = tree.num_nodes();
  tree.node_mean.assign(nodes, VectorXd());
  tree.node_msgvar.assign(nodes, 0.0);
  tree.node_value.resize(nodes);
  for (int k = 0; k < tree.num_leaves; ++k) {
    tree.node_mean[k] = leaves.row(k).transpose();
    tree.node_value[k] = tree.node_mean[k];
  }
  double log_lik = 0.0;
  for (std::size_t j = 0; j < tree.merges.size(); ++j) {
    const auto [l, r] = tree.merges[j];
    const int self = tree.num_leaves + static_cast<int>(j);
    const double dl = tree.node_time(l) - tree.times[j];
    const double dr = tree.node_time(r) - tree.times[j];
    const double v = tree.node_msgvar[l] + dl + tree.node_msgvar[r] + dr;
    log_lik += merge_log_density(tree.phi.mahalanobis(tree.node_mean[l] - tree.node_mean[r]), v, leaves.cols(),
                                 tree.phi.log_det);
    const Message m = message_up({tree.node_mean[l], tree.node_msgvar[l]}, {tree.node_mean[r], tree.node_msgvar[r]},
                                 dl, dr);
    tree.node_mean[self] = m.mean;
    tree.node_msgvar[self] = m.var;
  }
  return log_lik;
}

/// log p(leaves | tree, phi), plus the coalescent prior term when `score` is Joint.
inline double tree_log_marginal(const MatrixXd& leaves, const TreeState& tree, const PhiModel& phi,
                                TreeScore score = TreeScore::Joint) {
  TreeState copy = tree;
  copy.phi = phi;
  double out = upward_pass(copy, leaves);
  if (score == TreeScore::Joint) out += coalescent_log_prior(copy);
  return out;
}

/// Downward pass: draw every internal node value given the leaves, the upward
/// messages and the tree (root from its flat-prior posterior, then each child
/// conditioned on its parent draw).
inline void sample_internal_nodes(TreeState& tree, RngStream& rng) {
  const int nodes = tree.num_nodes();
  require(static_cast<int>(tree.node_mean.size()) == nodes, "downward pass: run the upward pass first");
  const auto parent = tree.parents();
  const Index n = tree.phi.dim();
  std::vector<VectorXd> white(nodes);
  tree.node_value.resize(nodes);
  for (int id = nodes - 1; id >= tree.num_leaves; --id) {
    const VectorXd mean = tree.phi.whiten(tree.node_mean[id]);
    double var = tree.node_msgvar[id];
    VectorXd centre = mean;
    if (parent[id] >= 0) {
      const double branch = tree.node_time(id) - tree.node_time(parent[id]);
      const double post = 1.0 / (1.0 / var + 1.0 / branch);
      centre = post * (mean / var + white[parent[id]] / branch);
      var = post;
    }
    white[id].resize(n);
    const double sd = std::sqrt(var);
    for (Index s = 0; s < n; ++s) white[id][s] = centre[s] + sd * rng.normal();
    tree.node_value[id] = tree.phi.unwhiten(white[id]);
  }
  for (int k = 0; k < tree.num_leaves; ++k) tree.node_value[k] = tree.node_mean[k];
}

/// Prior of leaf k given the sampled tree: N(value of its parent, branch * Phi).
inline Message leaf_prior(const TreeState& tree, int k) {
  const auto parent = tree.parents();
  require(k >= 0 && k < tree.num_leaves && parent[k] >= 0, "leaf_prior: leaf has no parent");
  require(static_cast<int>(tree.node_value.size()) == tree.num_nodes() && tree.node_value[parent[k]].size() > 0,
          "leaf_prior: internal nodes have not been sampled");
  return {tree.node_value[parent[k]], tree.node_time(k) - tree.node_time(parent[k])};
}

struct SmcResult {
  TreeState tree;
  VectorXd log_weights;  // final normalized log weights, one per particle
  double log_evidence = 0.0;  // log of the unbiased estimate of p(leaves | Phi)
  int chosen = 0;
  int resamples = 0;
};

namespace detail {

struct Particle {
  std::vector<int> active;
  std::vector<VectorXd> mean;  // whitened
  std::vector<double> var, time;
  MatrixXd dist;               // squared whitened distances between node ids
  std::vector<std::pair<int, int>> merges;
  std::vector<double> merge_times;
  double log_weight = 0.0;
};

inline double log_sum_exp(const std::vector<double>& v) {
  const double top = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double x : v) s += std::exp(x - top);
  return top + std::log(s);
}

// One leaves-to-root step: holding time from the prior, merge pair proportional
// to its marginal-likelihood contribution, weight times the normalized pair sum.
inline void smc_step(Particle& part, int step, int num_leaves, Index dim, double log_det, RngStream rng) {
  const int k = static_cast<int>(part.active.size());
  const double previous = part.merge_times.empty() ? 0.0 : part.merge_times.back();
  const double t_new = previous - rng.exponential(1.0);
  const int pairs = k * (k - 1) / 2;
  std::vector<double> score(pairs);
  std::vector<std::pair<int, int>> index(pairs);
  int c = 0;
  for (int a = 0; a < k; ++a) {
    const int ia = part.active[a];
    const double va = part.var[ia] + part.time[ia] - t_new;
    for (int b = a + 1; b < k; ++b, ++c) {
      const int ib = part.active[b];
      const double v = va + part.var[ib] + part.time[ib] - t_new;
      score[c] = merge_log_density(part.dist(ia, ib), v, dim, log_det);
      index[c] = {a, b};
    }
  }
  const double total = log_sum_exp(score);
  part.log_weight += total - std::log(static_cast<double>(pairs));

  double target = rng.uniform();
  int pick = pairs - 1;
  double acc = 0.0;
  for (int i = 0; i < pairs; ++i) {
    acc += std::exp(score[i] - total);
    if (target < acc) {
      pick = i;
      break;
    }
  }
  const auto [a, b] = index[pick];
  const int ia = part.active[a], ib = part.active[b];
  const int self = num_leaves + step;
  const double sl = part.var[ia] + part.time[ia] - t_new;
  const double sr = part.var[ib] + part.time[ib] - t_new;
  part.var[self] = 1.0 / (1.0 / sl + 1.0 / sr);
  part.mean[self] = part.var[self] * (part.mean[ia] / sl + part.mean[ib] / sr);
  part.time[self] = t_new;
  part.merges.emplace_back(std::min(ia, ib), std::max(ia, ib));
  part.merge_times.push_back(t_new);
  part.active.erase(part.active.begin() + b);
  part.active.erase(part.active.begin() + a);
  for (int other : part.active) {
    const double d = (part.mean[self] - part.mean[other]).squaredNorm();
    part.dist(self, other) = part.dist(other, self) = d;
  }
  part.active.push_back(self);
}

}  // namespace detail

/// Leaves-to-root SMC over tree structures for fixed leaves W (N_P x N) and Phi.
/// Multinomial resampling when the effective sample size drops below M / 2;
/// the returned tree is one particle drawn by final weight, with upward messages.
inline SmcResult smc_resample_tree(const MatrixXd& leaves, const PhiModel& phi, int particles, const RngStream& rng,
                                   int threads = 1) {
  require(particles >= 1, "smc: need at least one particle");
  const int num_leaves = static_cast<int>(leaves.rows());
  require(num_leaves >= 2, "smc: need at least two leaves");
  require(leaves.cols() == phi.dim(), "smc: Phi dimension mismatch");
  const int nodes = 2 * num_leaves - 1;
  const Index dim = leaves.cols();

  detail::Particle seed_particle;
  seed_particle.mean.resize(nodes);
  seed_particle.var.assign(nodes, 0.0);
  seed_particle.time.assign(nodes, 0.0);
  seed_particle.dist = MatrixXd::Zero(nodes, nodes);
  for (int k = 0; k < num_leaves; ++k) {
    seed_particle.mean[k] = phi.whiten(leaves.row(k).transpose());
    seed_particle.active.push_back(k);
  }
  for (int a = 0; a < num_leaves; ++a)
    for (int b = a + 1; b < num_leaves; ++b)
      seed_particle.dist(a, b) = seed_particle.dist(b, a) =
          (seed_particle.mean[a] - seed_particle.mean[b]).squaredNorm();

  std::vector<detail::Particle> pool(particles, seed_particle);
  SmcResult result;
  double log_evidence = 0.0;

  for (int step = 0; step < num_leaves - 1; ++step) {
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1)
    for (int l = 0; l < particles; ++l)
      detail::smc_step(pool[l], step, num_leaves, dim, phi.log_det,
                       rng.derive({static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(l)}));

    std::vector<double> lw(particles);
    for (int l = 0; l < particles; ++l) lw[l] = pool[l].log_weight;
    const double lse = detail::log_sum_exp(lw);
    if (!std::isfinite(lse)) throw NumericalError("smc: all particle weights vanished");
    double sum_sq = 0.0;
    for (double x : lw) sum_sq += std::exp(2.0 * (x - lse));
    const double ess = 1.0 / sum_sq;
    const bool last = step == num_leaves - 2;
    if (!last && ess < 0.5 * particles) {
      log_evidence += lse - std::log(static_cast<double>(particles));
      RngStream pick = rng.derive({static_cast<std::uint64_t>(step), 0xfffffffULL});
      std::vector<double> cdf(particles);
      double acc = 0.0;
      for (int l = 0; l < particles; ++l) cdf[l] = acc += std::exp(lw[l] - lse);
      std::vector<detail::Particle> next;
      next.reserve(particles);
      for (int l = 0; l < particles; ++l) {
        const double u = pick.uniform() * acc;
        const int src = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        next.push_back(pool[std::min(src, particles - 1)]);
        next.back().log_weight = 0.0;
      }
      pool = std::move(next);
      ++result.resamples;
    }
  }

  std::vector<double> lw(particles);
  for (int l = 0; l < particles; ++l) lw[l] = pool[l].log_weight;
  const double lse = detail::log_sum_exp(lw);
  log_evidence += lse - std::log(static_cast<double>(particles));
  result.log_weights.resize(particles);
  for (int l = 0; l < particles; ++l) result.log_weights[l] = lw[l] - lse;

  RngStream pick = rng.derive({0xffffffffULL});
  const double u = pick.uniform();
  double acc = 0.0;
  int chosen = particles - 1;
  for (int l = 0; l < particles; ++l) {
    acc += std::exp(result.log_weights[l]);
    if (u < acc) {
      chosen = l;
      break;
    }
  }
  result.chosen = chosen;
  result.log_evidence = log_evidence;

  const detail::Particle& best = pool[chosen];
  TreeState& tree = result.tree;
  tree.num_leaves = num_leaves;
  tree.merges = best.merges;
  tree.times = best.merge_times;
  tree.phi = phi;
  tree.node_mean.resize(nodes);
  tree.node_msgvar = best.var;
  tree.node_value.assign(nodes, VectorXd());
  for (int id = 0; id < nodes; ++id) tree.node_mean[id] = phi.unwhiten(best.mean[id]);
  for (int k = 0; k < num_leaves; ++k) {
    tree.node_mean[k] = leaves.row(k).transpose();
    tree.node_value[k] = tree.node_mean[k];
  }
  return result;
}

/// Branch increments (child value - parent value, branch length) of every
/// edge with positive length.
inline std::vector<std::pair<VectorXd, double>> tree_increments(const TreeState& tree) {
  const auto parent = tree.parents();
  std::vector<std::pair<VectorXd, double>> out;
  for (int id = 0; id < tree.num_nodes(); ++id) {
    if (parent[id] < 0) continue;
    const double length = tree.node_time(id) - tree.node_time(parent[id]);
    if (!(length > 0.0)) continue;
    require(tree.node_value[id].size() > 0 && tree.node_value[parent[id]].size() > 0,
            "tree increments: node values have not been sampled");
    out.emplace_back(tree.node_value[id] - tree.node_value[parent[id]], length);
  }
  return out;
}

/// Gaussian log density of all branch increments under Phi = K.
inline double increments_log_density(const std::vector<std::pair<VectorXd, double>>& inc, const MatrixXd& K) {
  Eigen::LLT<MatrixXd> llt(K);
  if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
  const double log_det = 2.0 * MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  double out = 0.0;
  for (const auto& [delta, length] : inc) {
    const VectorXd white = llt.matrixL().solve(delta);
    out += merge_log_density(white.squaredNorm(), length, delta.size(), log_det);
  }
  return out;
}

/// Per-sample precision conditionals of a diagonal Phi given branch increments.
inline std::vector<GammaParams> phi_precision_conditional(const std::vector<std::pair<VectorXd, double>>& inc,
                                                          const PhiModel& phi) {
  VectorXd rate = VectorXd::Constant(phi.dim(), phi.gamma_rate);
  for (const auto& [delta, length] : inc) rate += 0.5 * delta.cwiseAbs2() / length;
  const double shape = phi.gamma_shape + 0.5 * static_cast<double>(inc.size());
  std::vector<GammaParams> out(phi.dim());
  for (Index n = 0; n < phi.dim(); ++n) out[n] = {shape, rate[n]};
  return out;
}

/// Inverse Wishart conditional (scale, dof) of a dense Phi given branch increments.
inline std::pair<MatrixXd, double> phi_iw_conditional(const std::vector<std::pair<VectorXd, double>>& inc,
                                                      const PhiModel& phi) {
  MatrixXd scale = phi.iw_scale;
  for (const auto& [delta, length] : inc) scale += delta * delta.transpose() / length;
  return {scale, phi.iw_dof + static_cast<double>(inc.size())};
}

/// Conditional update of Phi given the sampled node values of the tree.
inline PhiModel update_phi(const TreeState& tree, const PhiModel& current, RngStream& rng) {
  PhiModel phi = current;
  const auto inc = tree_increments(tree);
  switch (phi.variant) {
    case PhiVariant::DiagGamma: {
      const auto params = phi_precision_conditional(inc, phi);
      for (Index n = 0; n < phi.dim(); ++n) phi.precision[n] = rng.gamma(params[n].shape, params[n].rate);
      break;
    }
    case PhiVariant::InvWishart: {
      const auto [scale, dof] = phi_iw_conditional(inc, phi);
      phi.matrix = sample_inverse_wishart(scale, dof, rng);
      break;
    }
    case PhiVariant::GpKernel: {
      auto log_target = [&](double log_length, double log_noise) {
        return increments_log_density(
            inc, PhiModel::kernel_matrix(phi.times, phi.subjects, std::exp(log_length), std::exp(log_noise)));
      };
      double log_length = std::log(phi.length_scale), log_noise = std::log(phi.noise_var);
      log_length = slice_sample_scalar([&](double x) { return log_target(x, log_noise); }, log_length, 1.0,
                                       std::log(phi.length_bounds[0]), std::log(phi.length_bounds[1]), rng);
      log_noise = slice_sample_scalar([&](double x) { return log_target(log_length, x); }, log_noise, 1.0,
                                      std::log(phi.noise_bounds[0]), std::log(phi.noise_bounds[1]), rng);
      phi.length_scale = std::exp(log_length);
      phi.noise_var = std::exp(log_noise);
      break;
    }
  }
  phi.refresh();
  return phi;
}

namespace detail {

inline std::string format_length(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

}  // namespace detail

/// Newick text with pseudo-time branch lengths; children ordered by the
/// lexicographically smallest leaf label in their subtree.
inline std::string export_newick(const TreeState& tree, const std::vector<std::string>& labels) {
  require(static_cast<int>(labels.size()) == tree.num_leaves, "export_newick: label count mismatch");
  require(tree.is_valid(), "export_newick: invalid tree");
  const int nodes = tree.num_nodes();
  std::vector<std::string> text(nodes), smallest(nodes);
  for (int k = 0; k < tree.num_leaves; ++k) {
    text[k] = labels[k];
    smallest[k] = labels[k];
  }
  for (std::size_t j = 0; j < tree.merges.size(); ++j) {
    const int self = tree.num_leaves + static_cast<int>(j);
    auto [l, r] = tree.merges[j];
    if (smallest[r] < smallest[l]) std::swap(l, r);
    const double t = tree.times[j];
    text[self] = "(" + text[l] + ":" + detail::format_length(tree.node_time(l) - t) + "," + text[r] + ":" +
                 detail::format_length(tree.node_time(r) - t) + ")";
    smallest[self] = smallest[l];
    text[l].clear();
    text[r].clear();
  }
  return text[tree.root()] + ";";
}

}  // namespace lpt
