#pragma once

// Conditional posterior updates and the Gibbs/SMC sweep driver.
//
// Each update exists in two layers: a `*_conditional` function returning the
// exact conditional distribution for one coordinate (tested against
// quadrature oracles), and an `update_*` function that draws every
// coordinate of its block. Residuals are recomputed from the state at the
// start of each block so no cache can go stale between blocks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "lpt/archive.hpp"
#include "lpt/coalescent.hpp"
#include "lpt/core.hpp"
#include "lpt/error.hpp"
#include "lpt/stochastics.hpp"
#include "lpt/summary.hpp"

namespace lpt {

/// log of the standard normal CDF, accurate far into the lower tail.
inline double log_normal_cdf(double x) {
  if (x > -30.0) return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
  const double x2 = x * x;
  return -0.5 * x2 - std::log(-x) - 0.5 * std::log(2.0 * std::numbers::pi) +
         std::log1p(-1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2));
}

/// Protein label set for a fit: sorted distinct annotation labels, padded with
/// unannotated proteins when more are requested.
struct ProteinIndex {
  std::vector<std::string> labels;
  std::vector<int> ig_label;  // per IG, -1 when unannotated
};

inline ProteinIndex resolve_proteins(const Dataset& data, const Hyperparameters& hyper) {
  std::set<std::string> distinct;
  for (const auto& [row, label] : data.annotations) distinct.insert(label);
  ProteinIndex index;
  index.labels.assign(distinct.begin(), distinct.end());
  const int wanted = hyper.num_proteins > 0 ? hyper.num_proteins : static_cast<int>(index.labels.size());
  require(wanted >= 1, "no latent proteins: supply annotations or set num_proteins");
  require(wanted >= static_cast<int>(index.labels.size()),
          "num_proteins (" + std::to_string(wanted) + ") is smaller than the number of annotation labels (" +
              std::to_string(index.labels.size()) + ")");
  for (int extra = 1; static_cast<int>(index.labels.size()) < wanted; ++extra) {
    const std::string name = "LP" + std::to_string(extra);
    if (!distinct.count(name)) index.labels.push_back(name);
  }
  index.ig_label.assign(data.num_igs(), -1);
  for (const auto& [row, label] : data.annotations)
    index.ig_label[row] = static_cast<int>(std::lower_bound(index.labels.begin(), index.labels.begin() +
                                                                static_cast<long>(distinct.size()), label) -
                                           index.labels.begin());
  return index;
}

// ---------------------------------------------------------------------------
// Noise variances

inline GammaParams noise_conditional(const Eigen::Ref<const VectorXd>& residual_row, const Hyperparameters& h) {
  return {h.t_s + 0.5 * static_cast<double>(residual_row.size()), h.t_r + 0.5 * residual_row.squaredNorm()};
}

inline void update_noise_variances(ModelState& s, const Dataset& data, const Hyperparameters& h,
                                   const RngStream& rng, int threads = 1) {
  const MatrixXd resid = filled_values(data, s) - model_mean_matrix(s, data.batch);
  const Index p = resid.rows();
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1)
  for (Index i = 0; i < p; ++i) {
    RngStream r = rng.derive({static_cast<std::uint64_t>(i)});
    const GammaParams g = noise_conditional(resid.row(i).transpose(), h);
    s.psi[i] = 1.0 / r.gamma(g.shape, g.rate);
  }
}

// ---------------------------------------------------------------------------
// Batch means

/// mu_i^m given the summed partial residuals x - Az - Bw over the n_m samples of batch m.
inline NormalParams batch_mean_conditional(double residual_sum, Index batch_size, double psi,
                                           const Hyperparameters& h) {
  const double precision = h.t_p + static_cast<double>(batch_size) / psi;
  return {(h.t_m * h.t_p + residual_sum / psi) / precision, 1.0 / precision};
}

inline void update_batch_means(ModelState& s, const Dataset& data, const Hyperparameters& h, const RngStream& rng,
                               int threads = 1) {
  const int nb = static_cast<int>(s.mu.rows());
  for (int m = 0; m < nb; ++m) require(data.count_in_batch(m) > 0, "batch means: empty batch");
  MatrixXd partial = filled_values(data, s) - model_mean_matrix(s, data.batch);
  for (Index n = 0; n < partial.cols(); ++n) partial.col(n) += s.mu.row(data.batch[n]).transpose();
  MatrixXd sums = MatrixXd::Zero(nb, partial.rows());
  for (Index n = 0; n < partial.cols(); ++n) sums.row(data.batch[n]) += partial.col(n).transpose();
  const Index p = partial.rows();
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1)
  for (Index i = 0; i < p; ++i) {
    RngStream r = rng.derive({static_cast<std::uint64_t>(i)});
    for (int m = 0; m < nb; ++m) {
      const NormalParams c = batch_mean_conditional(sums(m, i), data.count_in_batch(m), s.psi[i], h);
      s.mu(m, i) = r.normal(c.mean, c.var);
    }
  }
}

// ---------------------------------------------------------------------------
// Systematic scores, mixing variances and loadings

/// z_jn given the leave-one-out residual of sample n (z_jn set to zero).
inline NormalParams score_conditional(const Eigen::Ref<const VectorXd>& loading_col,
                                      const Eigen::Ref<const VectorXd>& loo_residual, const VectorXd& psi,
                                      double tau) {
  const double precision = loading_col.cwiseAbs2().cwiseQuotient(psi).sum() + 1.0 / tau;
  const double h = loading_col.cwiseProduct(loo_residual).cwiseQuotient(psi).sum();
  return {h / precision, 1.0 / precision};
}

/// Redraws Z column by column. When `residual_check` is given it receives, for
/// each sample, the incrementally maintained residual after the column update.
inline void update_systematic_scores(ModelState& s, const Dataset& data, const RngStream& rng, int threads = 1,
                                     MatrixXd* residual_check = nullptr) {
  const MatrixXd x = filled_values(data, s);
  const Index nf = s.Z.rows(), n_samples = s.Z.cols(), p = s.A.rows();
  if (residual_check) residual_check->resize(p, n_samples);
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1)
  for (Index n = 0; n < n_samples; ++n) {
    RngStream r = rng.derive({static_cast<std::uint64_t>(n)});
    VectorXd resid = x.col(n) - model_mean(s, n, data.batch[n]);
    for (Index j = 0; j < nf; ++j) {
      const double old = s.Z(j, n);
      resid += s.A.col(j) * old;
      const NormalParams c = score_conditional(s.A.col(j), resid, s.psi, s.tau(j, n));
      const double fresh = r.normal(c.mean, c.var);
      s.Z(j, n) = fresh;
      resid -= s.A.col(j) * fresh;
    }
    if (residual_check) residual_check->col(n) = resid;
  }
}

inline InverseGaussianParams inverse_tau_conditional(double z, double lambda2, UpdateForms forms) {
  const double az = std::max(std::abs(z), 1e-10);
  const double mean = forms == UpdateForms::Corrected ? std::sqrt(lambda2 / (az * az)) : std::sqrt(lambda2 / az);
  return {mean, lambda2};
}

inline GammaParams lambda2_conditional(const MatrixXd& tau, const Hyperparameters& h) {
  const double count = static_cast<double>(tau.size());
  const double shape = h.update_forms == UpdateForms::Corrected ? h.l_s + count : h.l_s + 0.5;
  return {shape, h.l_r + 0.5 * tau.sum()};
}

/// tau_jn^-1 ~ IG(sqrt(lambda2 / z_jn^2), lambda2), then lambda2 ~ Gamma. With
/// tau ~ Exponential(rate lambda2 / 2) the scores are marginally Laplace with
/// rate sqrt(lambda2).
inline void update_mixing_variances(ModelState& s, const Hyperparameters& h, const RngStream& rng) {
  if (h.systematic_prior == SystematicPrior::Gaussian) {
    s.tau.setOnes();
    return;
  }
  for (Index n = 0; n < s.tau.cols(); ++n) {
    RngStream r = rng.derive({static_cast<std::uint64_t>(n)});
    for (Index j = 0; j < s.tau.rows(); ++j) {
      const InverseGaussianParams c = inverse_tau_conditional(s.Z(j, n), s.lambda2, h.update_forms);
      s.tau(j, n) = 1.0 / sample_inverse_gaussian(c.mean, c.shape, r);
    }
  }
  RngStream r = rng.derive({0xffffffffULL});
  const GammaParams g = lambda2_conditional(s.tau, h);
  s.lambda2 = r.gamma(g.shape, g.rate);
}

/// a_ij given the leave-one-out residual row (a_ij set to zero).
inline NormalParams loading_conditional(const Eigen::Ref<const VectorXd>& score_row,
                                        const Eigen::Ref<const VectorXd>& loo_residual, double psi, double rho) {
  const double c = 1.0 / (score_row.squaredNorm() + psi * rho);
  return {c * loo_residual.dot(score_row), c * psi};
}

inline GammaParams ard_conditional(const Eigen::Ref<const VectorXd>& loading_col, const Hyperparameters& h) {
  const double half = h.update_forms == UpdateForms::Corrected ? 0.5 : 1.0;
  return {h.r_shape + 0.5 * static_cast<double>(loading_col.size()), h.r_rate + half * loading_col.squaredNorm()};
}

inline void update_systematic_loadings(ModelState& s, const Dataset& data, const Hyperparameters& h,
                                       const RngStream& rng, int threads = 1) {
  const MatrixXd resid_all = filled_values(data, s) - model_mean_matrix(s, data.batch);
  const Index p = s.A.rows(), nf = s.A.cols();
  const MatrixXd zt = s.Z.transpose();
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1)
  for (Index i = 0; i < p; ++i) {
    RngStream r = rng.derive({static_cast<std::uint64_t>(i)});
    VectorXd resid = resid_all.row(i).transpose();
    for (Index j = 0; j < nf; ++j) {
      const double old = s.A(i, j);
      resid += zt.col(j) * old;
      const NormalParams c = loading_conditional(zt.col(j), resid, s.psi[i], s.rho[j]);
      const double fresh = r.normal(c.mean, c.var);
      s.A(i, j) = fresh;
      resid -= zt.col(j) * fresh;
    }
  }
  RngStream r = rng.derive({0xffffffffULL});
  for (Index j = 0; j < nf; ++j) {
    const GammaParams g = ard_conditional(s.A.col(j), h);
    s.rho[j] = r.gamma(g.shape, g.rate);
  }
}

// ---------------------------------------------------------------------------
// Protein loadings and assignments

/// Rows of x - mu - A Z (the data with batch and systematic effects removed).
inline MatrixXd protein_residuals(const Dataset& data, const ModelState& s) {
  MatrixXd out = filled_values(data, s) - s.A * s.Z;
  for (Index n = 0; n < out.cols(); ++n) out.col(n) -= s.mu.row(data.batch[n]).transpose();
  return out;
}

/// b_i | u_i = k: N(c eps w^T, c psi) truncated to b > 0, c = (w w^T + psi)^-1.
inline NormalParams protein_loading_conditional(const Eigen::Ref<const VectorXd>& residual_row,
                                                const Eigen::Ref<const VectorXd>& profile, double psi) {
  const double c = 1.0 / (profile.squaredNorm() + psi);
  return {c * residual_row.dot(profile), c * psi};
}

inline void update_protein_loadings(ModelState& s, const Dataset& data, const RngStream& rng, int threads = 1) {
  const MatrixXd resid = protein_residuals(data, s);
  const Index p = resid.rows();
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1)
  for (Index i = 0; i < p; ++i) {
    RngStream r = rng.derive({static_cast<std::uint64_t>(i)});
    const NormalParams c = protein_loading_conditional(resid.row(i).transpose(), s.W.row(s.u[i]).transpose(), s.psi[i]);
    s.b[i] = sample_truncated_normal_positive(c.mean, c.var, r);
  }
}

/// Unnormalized log probabilities of u_i = k for every protein k, with b_i
/// integrated over (0, inf) under its N+(0, 1) prior and psi_i held fixed.
/// `counts` excludes IG i.
inline VectorXd assignment_log_weights(const Eigen::Ref<const VectorXd>& residual_row, const MatrixXd& W,
                                       double psi, const std::vector<int>& counts, double alpha,
                                       const Hyperparameters& h) {
  const Index np = W.rows();
  VectorXd out(np);
  if (h.update_forms == UpdateForms::Corrected) {
    for (Index k = 0; k < np; ++k) {
      const double precision = W.row(k).squaredNorm() / psi + 1.0;
      const double lin = W.row(k).dot(residual_row) / psi;
      out[k] = std::log(alpha + counts[k]) - 0.5 * std::log(precision) + 0.5 * lin * lin / precision +
               log_normal_cdf(lin / std::sqrt(precision));
    }
  } else {
    const double n = static_cast<double>(residual_row.size());
    const double ee = residual_row.squaredNorm();
    for (Index k = 0; k < np; ++k) {
      const double c = std::max(W.row(k).squaredNorm(), 1e-300);
      const double ew = W.row(k).dot(residual_row);
      const double base = std::max(h.t_r + 0.5 * ee - 0.5 * ew * ew / c, 1e-300);
      out[k] = std::log(alpha + counts[k]) - 0.5 * std::log(c) - (h.t_s + 0.5 * n) * std::log(base);
    }
  }
  return out;
}

/// log p(alpha | u) under the shared-Dirichlet (collapsed) assignment prior and Gamma(a_s, a_r).
inline double alpha_log_conditional(double alpha, const std::vector<int>& counts, Index num_igs,
                                    const Hyperparameters& h) {
  if (!(alpha > 0.0)) return -std::numeric_limits<double>::infinity();
  const double k = static_cast<double>(counts.size());
  double out = (h.a_s - 1.0) * std::log(alpha) - h.a_r * alpha + std::lgamma(k * alpha) -
               std::lgamma(k * alpha + static_cast<double>(num_igs));
  for (int c : counts) out += std::lgamma(alpha + c) - std::lgamma(alpha);
  return out;
}

inline std::vector<int> protein_counts(const std::vector<int>& u, Index num_proteins) {
  std::vector<int> counts(num_proteins, 0);
  for (int k : u) ++counts[k];
  return counts;
}

/// Sequential scan over IGs: u_i from its collapsed conditional, then b_i for
/// the new label; finally one slice-sampling step for alpha.
inline void update_assignments(ModelState& s, const Dataset& data, const Hyperparameters& h,
                               const RngStream& rng) {
  MatrixXd resid = protein_residuals(data, s);
  if (h.update_forms == UpdateForms::Printed) {
    resid = filled_values(data, s);
    for (Index n = 0; n < resid.cols(); ++n) resid.col(n) -= s.mu.row(data.batch[n]).transpose();
  }
  const MatrixXd loading_resid = protein_residuals(data, s);
  const Index p = resid.rows(), np = s.W.rows();
  std::vector<int> counts = protein_counts(s.u, np);
  VectorXd prob(np);
  for (Index i = 0; i < p; ++i) {
    RngStream r = rng.derive({static_cast<std::uint64_t>(i)});
    --counts[s.u[i]];
    const VectorXd lw = assignment_log_weights(resid.row(i).transpose(), s.W, s.psi[i], counts, s.alpha, h);
    const double top = lw.maxCoeff();
    if (!std::isfinite(top)) throw NumericalError("assignments: all label weights vanished for IG " + std::to_string(i));
    prob = (lw.array() - top).exp().matrix();
    const double target = r.uniform() * prob.sum();
    double acc = 0.0;
    int pick = static_cast<int>(np) - 1;
    for (Index k = 0; k < np; ++k) {
      acc += prob[k];
      if (target < acc) {
        pick = static_cast<int>(k);
        break;
      }
    }
    s.u[i] = pick;
    ++counts[pick];
    const NormalParams c =
        protein_loading_conditional(loading_resid.row(i).transpose(), s.W.row(pick).transpose(), s.psi[i]);
    s.b[i] = sample_truncated_normal_positive(c.mean, c.var, r);
  }
  RngStream r = rng.derive({0xffffffffULL});
  s.alpha = slice_sample_scalar([&](double a) { return alpha_log_conditional(a, counts, p, h); }, s.alpha, 1.0, 1e-6,
                                1e6, r);
}

// ---------------------------------------------------------------------------
// Latent protein profiles

/// Posterior of W_k given member IGs and the prior N(prior_mean, prior_var * Phi).
/// Returns the mean and the lower Cholesky factor of the posterior covariance.
struct ProfileConditional {
  VectorXd mean;
  MatrixXd cov_factor;  // lower triangular, cov = F F^T
};

inline ProfileConditional profile_conditional(const MatrixXd& residuals, const ModelState& s, Index k,
                                              const VectorXd& prior_mean, double prior_var, const PhiModel* phi) {
  const Index n = s.W.cols();
  double data_precision = 0.0;
  VectorXd h = VectorXd::Zero(n);
  for (Index i = 0; i < residuals.rows(); ++i) {
    if (s.u[i] != k) continue;
    data_precision += s.b[i] * s.b[i] / s.psi[i];
    h += (s.b[i] / s.psi[i]) * residuals.row(i).transpose();
  }
  ProfileConditional out;
  if (phi == nullptr || phi->diagonal()) {
    VectorXd prior_precision = phi == nullptr ? VectorXd::Ones(n) : VectorXd(phi->precision / prior_var);
    const VectorXd precision = prior_precision.array() + data_precision;
    out.mean = (h + prior_precision.cwiseProduct(prior_mean)).cwiseQuotient(precision);
    out.cov_factor = precision.cwiseInverse().cwiseSqrt().asDiagonal();
    return out;
  }
  const MatrixXd chol_inv = phi->chol.triangularView<Eigen::Lower>().solve(MatrixXd::Identity(n, n));
  MatrixXd precision = chol_inv.transpose() * chol_inv / prior_var;
  const VectorXd rhs = h + precision * prior_mean;
  precision.diagonal().array() += data_precision;
  Eigen::LLT<MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) throw NumericalError("profiles: posterior precision is not SPD");
  out.mean = llt.solve(rhs);
  // cov = P^-1 = L^-T L^-1; a lower factor of it is the reversal of L^-T.
  const MatrixXd upper = MatrixXd(llt.matrixL()).triangularView<Eigen::Lower>().solve(MatrixXd::Identity(n, n))
                             .transpose();
  out.cov_factor = upper;
  return out;
}

inline void update_protein_profiles(ModelState& s, const Dataset& data, const TreeState* tree,
                                    const RngStream& rng, int threads = 1) {
  const MatrixXd resid = protein_residuals(data, s);
  const Index np = s.W.rows(), n = s.W.cols();
  std::vector<int> parent;
  if (tree) {
    require(tree->num_leaves == np, "profiles: tree leaf count differs from N_P");
    parent = tree->parents();
  }
#pragma omp parallel for num_threads(threads) schedule(static) if (threads > 1)
  for (Index k = 0; k < np; ++k) {
    RngStream r = rng.derive({static_cast<std::uint64_t>(k)});
    VectorXd prior_mean = VectorXd::Zero(n);
    double prior_var = 1.0;
    const PhiModel* phi = nullptr;
    if (tree) {
      const int q = parent[k];
      prior_mean = tree->node_value[q];
      prior_var = tree->node_time(static_cast<int>(k)) - tree->node_time(q);
      phi = &tree->phi;
    }
    const ProfileConditional c = profile_conditional(resid, s, k, prior_mean, prior_var, phi);
    VectorXd xi(n);
    for (Index t = 0; t < n; ++t) xi[t] = r.normal();
    s.W.row(k) = (c.mean + c.cov_factor * xi).transpose();
  }
}

// ---------------------------------------------------------------------------
// Missing values

/// Each missing x_in from the posterior predictive N(mu_i^m + A_i z_n + B_i w_n, psi_i).
inline void impute_missing(ModelState& s, const Dataset& data, const RngStream& rng) {
  const auto cells = data.missing_cells();
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto [i, n] = cells[c];
    RngStream r = rng.derive({static_cast<std::uint64_t>(c)});
    const double mean = s.mu(data.batch[n], i) + s.A.row(i).dot(s.Z.col(n)) + s.b[i] * s.W(s.u[i], n);
    s.imputed[c] = r.normal(mean, s.psi[i]);
  }
}

// ---------------------------------------------------------------------------
// Tree block

inline PhiModel initial_phi(const Dataset& data, const Hyperparameters& h) {
  const Index n = data.num_samples();
  switch (h.phi_model) {
    case PhiVariant::DiagGamma:
      return PhiModel::diag_gamma(n, h.phi_shape, h.phi_rate);
    case PhiVariant::InvWishart:
      return PhiModel::inverse_wishart(
          PhiModel::replicate_block_scale(data.replicate_group, n, h.iw_block, h.iw_ridge),
          h.iw_dof_factor * static_cast<double>(n));
    case PhiVariant::GpKernel: {
      require(!data.time.empty() && !data.subject.empty(), "GP kernel Phi needs sample times and subjects");
      std::vector<int> subject_ids(n);
      std::vector<std::string> seen;
      for (Index i = 0; i < n; ++i) {
        auto it = std::find(seen.begin(), seen.end(), data.subject[i]);
        if (it == seen.end()) {
          seen.push_back(data.subject[i]);
          subject_ids[i] = static_cast<int>(seen.size()) - 1;
        } else {
          subject_ids[i] = static_cast<int>(it - seen.begin());
        }
      }
      return PhiModel::gp_kernel(data.time, subject_ids, h.gp_length, h.gp_noise);
    }
  }
  throw InputError("unknown Phi model");
}

/// SMC tree draw given W, downward completion of node values, then Phi.
inline double update_tree(const ModelState& s, TreeState& tree, const Hyperparameters& h, const RngStream& rng,
                          int threads = 1) {
  SmcResult smc = smc_resample_tree(s.W, tree.phi, h.smc_particles, rng.derive({0}), threads);
  tree = std::move(smc.tree);
  RngStream down = rng.derive({1});
  sample_internal_nodes(tree, down);
  RngStream phi_rng = rng.derive({2});
  tree.phi = update_phi(tree, tree.phi, phi_rng);
  return tree_log_marginal(s.W, tree, tree.phi, h.tree_score);
}

// ---------------------------------------------------------------------------
// Initialization

inline ModelState init_state(const Dataset& data, const Hyperparameters& h, const ProteinIndex& proteins,
                             const RngStream& rng) {
  data.validate();
  const Index p = data.num_igs(), n = data.num_samples();
  const int nb = data.num_batches();
  const int nf = h.resolved_num_factors(p);
  const Index np = static_cast<Index>(proteins.labels.size());
  ModelState s;

  s.mu = MatrixXd::Constant(nb, p, h.t_m);
  for (Index i = 0; i < p; ++i) {
    double total = 0.0;
    Index count = 0;
    std::vector<double> sum(nb, 0.0);
    std::vector<Index> cnt(nb, 0);
    for (Index c = 0; c < n; ++c) {
      if (data.missing(i, c)) continue;
      sum[data.batch[c]] += data.values(i, c);
      ++cnt[data.batch[c]];
      total += data.values(i, c);
      ++count;
    }
    const double global = count > 0 ? total / static_cast<double>(count) : h.t_m;
    for (int m = 0; m < nb; ++m) s.mu(m, i) = cnt[m] > 0 ? sum[m] / static_cast<double>(cnt[m]) : global;
  }

  const auto cells = data.missing_cells();
  s.imputed.resize(static_cast<Index>(cells.size()));
  for (std::size_t c = 0; c < cells.size(); ++c) s.imputed[c] = s.mu(data.batch[cells[c].second], cells[c].first);

  RngStream r = rng.derive({0});
  s.Z.resize(nf, n);
  for (Index j = 0; j < nf; ++j)
    for (Index c = 0; c < n; ++c) s.Z(j, c) = r.normal();
  s.W.resize(np, n);
  for (Index k = 0; k < np; ++k)
    for (Index c = 0; c < n; ++c) s.W(k, c) = r.normal();

  MatrixXd centered = filled_values(data, s);
  for (Index c = 0; c < n; ++c) centered.col(c) -= s.mu.row(data.batch[c]).transpose();

  s.u.assign(p, 0);
  for (Index i = 0; i < p; ++i)
    s.u[i] = proteins.ig_label[i] >= 0 ? proteins.ig_label[i] : r.uniform_int(static_cast<int>(np));

  // Annotated proteins start from the scaled average of their member rows; the rest keep a Gaussian draw.
  std::vector<int> members(np, 0);
  MatrixXd sums = MatrixXd::Zero(np, n);
  for (Index i = 0; i < p; ++i) {
    if (proteins.ig_label[i] < 0) continue;
    sums.row(s.u[i]) += centered.row(i);
    ++members[s.u[i]];
  }
  for (Index k = 0; k < np; ++k)
    if (members[k] > 0) {
      const VectorXd mean = sums.row(k).transpose() / static_cast<double>(members[k]);
      const double sd = std::sqrt(mean.squaredNorm() / static_cast<double>(n));
      if (sd > 0.0) s.W.row(k) = mean.transpose() / sd;
    }
  s.b.resize(p);
  for (Index i = 0; i < p; ++i) {
    const auto w = s.W.row(s.u[i]);
    s.b[i] = std::max(1e-3, centered.row(i).dot(w) / w.squaredNorm());
  }

  // A by least squares on what the protein term leaves unexplained.
  MatrixXd after_proteins = centered;
  for (Index i = 0; i < p; ++i) after_proteins.row(i) -= s.b[i] * s.W.row(s.u[i]);
  MatrixXd gram = s.Z * s.Z.transpose();
  gram.diagonal().array() += 1e-8;
  s.A = gram.ldlt().solve(s.Z * after_proteins.transpose()).transpose();

  const MatrixXd resid = after_proteins - s.A * s.Z;
  s.psi.resize(p);
  for (Index i = 0; i < p; ++i) s.psi[i] = std::max(resid.row(i).squaredNorm() / static_cast<double>(n), 1e-4);

  s.rho.resize(nf);
  for (Index j = 0; j < nf; ++j) s.rho[j] = static_cast<double>(p) / std::max(s.A.col(j).squaredNorm(), 1e-12);
  s.tau = MatrixXd::Ones(nf, n);
  s.lambda2 = h.l_s / h.l_r;
  s.alpha = h.a_s / h.a_r;
  return s;
}

// ---------------------------------------------------------------------------
// Sweep orchestration

enum class SweepBlock {
  Noise,
  BatchMeans,
  SystematicScores,
  MixingVariances,
  SystematicLoadings,
  Assignments,
  ProteinProfiles,
  Tree,
  Missing
};

struct SweepStep {
  SweepBlock block;
  bool parallel;
};

/// Fixed scan order; every ModelState field belongs to exactly one block.
inline std::vector<SweepStep> sweep_plan(const Hyperparameters& h) {
  std::vector<SweepStep> plan = {{SweepBlock::Noise, true},
                                 {SweepBlock::BatchMeans, true},
                                 {SweepBlock::SystematicScores, true},
                                 {SweepBlock::MixingVariances, false},
                                 {SweepBlock::SystematicLoadings, true},
                                 {SweepBlock::Assignments, false},
                                 {SweepBlock::ProteinProfiles, true}};
  if (h.tree_mode == TreeMode::Coalescent) plan.push_back({SweepBlock::Tree, true});
  plan.push_back({SweepBlock::Missing, false});
  return plan;
}

class GibbsSampler {
 public:
  GibbsSampler(Dataset data, Hyperparameters hyper, std::uint64_t seed, int threads = 1)
      : data_(std::move(data)), hyper_(hyper), root_(seed), threads_(threads) {
    hyper_.validate();
    data_.validate();
    proteins_ = resolve_proteins(data_, hyper_);
    state_ = init_state(data_, hyper_, proteins_, root_.derive({0xa11c0ULL}));
    if (uses_tree()) {
      tree_.phi = initial_phi(data_, hyper_);
      tree_log_marginal_ = update_tree(state_, tree_, hyper_, root_.derive({0x7eeULL}), threads_);
    }
  }

  /// Resume from an explicit state (e.g. a prior draw).
  GibbsSampler(Dataset data, Hyperparameters hyper, ModelState state, TreeState tree, std::uint64_t seed,
               int threads = 1)
      : data_(std::move(data)), hyper_(hyper), state_(std::move(state)), tree_(std::move(tree)), root_(seed),
        threads_(threads) {
    hyper_.validate();
    data_.validate();
    proteins_ = resolve_proteins(data_, hyper_);
  }

  void sweep() {
    for (const auto& step : sweep_plan(hyper_)) run_block(step.block);
    ++sweeps_;
  }

  void run_block(SweepBlock block) {
    const RngStream r = root_.derive({static_cast<std::uint64_t>(sweeps_), static_cast<std::uint64_t>(block)});
    switch (block) {
      case SweepBlock::Noise:
        update_noise_variances(state_, data_, hyper_, r, threads_);
        break;
      case SweepBlock::BatchMeans:
        update_batch_means(state_, data_, hyper_, r, threads_);
        break;
      case SweepBlock::SystematicScores:
        update_systematic_scores(state_, data_, r, threads_);
        break;
      case SweepBlock::MixingVariances:
        update_mixing_variances(state_, hyper_, r);
        break;
      case SweepBlock::SystematicLoadings:
        update_systematic_loadings(state_, data_, hyper_, r, threads_);
        break;
      case SweepBlock::Assignments:
        update_assignments(state_, data_, hyper_, r);
        break;
      case SweepBlock::ProteinProfiles:
        update_protein_profiles(state_, data_, uses_tree() ? &tree_ : nullptr, r, threads_);
        break;
      case SweepBlock::Tree:
        if (uses_tree()) tree_log_marginal_ = update_tree(state_, tree_, hyper_, r, threads_);
        break;
      case SweepBlock::Missing:
        impute_missing(state_, data_, r);
        break;
    }
  }

  bool uses_tree() const { return hyper_.tree_mode == TreeMode::Coalescent && state_.num_proteins() >= 2; }

  const ModelState& state() const { return state_; }
  ModelState& state() { return state_; }
  const TreeState& tree() const { return tree_; }
  const Dataset& data() const { return data_; }
  void replace_values(const MatrixXd& values) { data_.values = values; }
  const Hyperparameters& hyper() const { return hyper_; }
  const ProteinIndex& proteins() const { return proteins_; }
  double tree_log_marginal() const { return tree_log_marginal_; }
  int sweeps() const { return sweeps_; }

 private:
  Dataset data_;
  Hyperparameters hyper_;
  ProteinIndex proteins_;
  ModelState state_;
  TreeState tree_;
  RngStream root_;
  int threads_ = 1;
  int sweeps_ = 0;
  double tree_log_marginal_ = 0.0;
};

struct ChainOptions {
  int threads = 1;
  std::function<void(int sweep, const GibbsSampler&)> on_sweep;
};

/// Initialization, then `iterations` sweeps; every thin-th post-burn-in state is archived.
inline PosteriorArchive run_chain(const Dataset& data, const Hyperparameters& hyper, std::uint64_t seed,
                                  const ChainOptions& options = {}) {
  GibbsSampler sampler(data, hyper, seed, options.threads);
  PosteriorArchive archive;
  archive.seed = seed;
  archive.hyper = hyper;
  archive.protein_labels = sampler.proteins().labels;
  for (int it = 0; it < hyper.iterations; ++it) {
    sampler.sweep();
    if (options.on_sweep) options.on_sweep(it, sampler);
    const int kept = it - hyper.burn_in;
    if (kept >= 0 && (kept + 1) % hyper.thin == 0)
      archive.draws.push_back({sampler.state(), sampler.tree(), sampler.tree_log_marginal()});
  }
  return archive;
}

struct FactorCount {
  std::vector<int> per_draw;
  Summary summary;
};

/// Number of columns with rho_j below the threshold in each draw.
inline FactorCount effective_num_factors(const std::vector<VectorXd>& rho_draws, double threshold) {
  require(threshold > 0.0, "effective_num_factors: threshold must be positive");
  FactorCount out;
  std::vector<double> values;
  for (const auto& rho : rho_draws) {
    const int count = static_cast<int>((rho.array() < threshold).count());
    out.per_draw.push_back(count);
    values.push_back(count);
  }
  if (!values.empty()) out.summary = summarize(values);
  return out;
}

inline std::vector<VectorXd> rho_draws(const PosteriorArchive& archive) {
  std::vector<VectorXd> out;
  for (const auto& d : archive.draws) out.push_back(d.state.rho);
  return out;
}

}  // namespace lpt
