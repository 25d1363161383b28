#pragma once

// Domain types shared by every part of the model:
//   x_n = mu^m + A z_n + B w_n + e_n,  e_n ~ N(0, Psi),
// with B holding one nonnegative loading per isotope-group row.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "lpt/error.hpp"

namespace lpt {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

enum class PhiVariant { DiagGamma, InvWishart, GpKernel };
enum class SystematicPrior { Laplace, Gaussian };
enum class TreeMode { Coalescent, Independent };
enum class TreeScore { Joint, LikelihoodOnly };

/// Which form of the conditional updates to run. `Printed` reproduces the
/// formulas exactly as typeset (tau mean sqrt(lambda2/|z|), lambda2 shape
/// l_s + 1/2, rho rate without 1/2, assignment weights without the systematic
/// term and with psi and an untruncated b integrated out). `Corrected` is the
/// conjugate form and the default.
enum class UpdateForms { Corrected, Printed };

/// One observed matrix of log-intensities, isotope groups (IGs) by samples.
struct Dataset {
  MatrixXd values;              // p x N
  BoolMatrix missing;           // p x N, true where the value is absent
  std::vector<int> batch;       // per sample, 0-based
  std::vector<std::string> ig_ids;
  std::vector<std::string> sample_ids;
  std::vector<std::string> batch_names;   // batch index -> original token
  std::vector<std::string> subject;       // optional
  std::vector<double> time;               // optional
  std::vector<int> replicate_group;       // optional
  std::map<int, std::string> annotations; // IG row -> protein label

  Index num_igs() const { return values.rows(); }
  Index num_samples() const { return values.cols(); }
  int num_batches() const {
    return batch.empty() ? 0 : *std::max_element(batch.begin(), batch.end()) + 1;
  }

  /// Missing cells in column-major order; imputed values are stored in this order.
  std::vector<std::pair<Index, Index>> missing_cells() const {
    std::vector<std::pair<Index, Index>> cells;
    for (Index n = 0; n < missing.cols(); ++n)
      for (Index i = 0; i < missing.rows(); ++i)
        if (missing(i, n)) cells.emplace_back(i, n);
    return cells;
  }

  Index count_in_batch(int m) const { return std::count(batch.begin(), batch.end(), m); }

  void validate() const {
    const Index p = num_igs(), n = num_samples();
    require(p >= 1 && n >= 1, "dataset: need at least one IG and one sample");
    require(missing.rows() == p && missing.cols() == n, "dataset: missing mask shape mismatch");
    require(static_cast<Index>(batch.size()) == n, "dataset: one batch label per sample required");
    const int nb = num_batches();
    for (int b : batch) require(b >= 0, "dataset: negative batch index");
    for (int m = 0; m < nb; ++m) require(count_in_batch(m) > 0, "dataset: batch " + std::to_string(m + 1) + " is empty");
    for (const auto& [row, label] : annotations)
      require(row >= 0 && row < p, "dataset: annotation for unknown IG row " + std::to_string(row));
    if (!time.empty()) require(static_cast<Index>(time.size()) == n, "dataset: time vector size mismatch");
    if (!subject.empty()) require(static_cast<Index>(subject.size()) == n, "dataset: subject vector size mismatch");
    if (!replicate_group.empty())
      require(static_cast<Index>(replicate_group.size()) == n, "dataset: replicate vector size mismatch");
  }
};

struct Hyperparameters {
  // Noise: psi_i^-1 ~ Gamma(t_s, t_r).
  double t_s = 1.1, t_r = 0.001;
  // Batch means: mu_i^m ~ N(t_m, 1 / t_p).
  double t_m = 8.0, t_p = 0.01;
  // Laplace rate: lambda2 ~ Gamma(l_s, l_r).
  double l_s = 4.0, l_r = 2.0;
  // ARD column precisions: rho_j ~ Gamma(r_shape, r_rate).
  double r_shape = 1.1, r_rate = 0.001;
  // Dirichlet concentration: alpha ~ Gamma(a_s, a_r).
  double a_s = 1.0, a_r = 1.0;
  // Diagonal Phi: per-sample precision ~ Gamma(phi_shape, phi_rate).
  double phi_shape = 1.1, phi_rate = 0.001;
  // Inverse Wishart Phi: dof = iw_dof_factor * N, scale = iw_block * replicate blocks + iw_ridge * I.
  double iw_dof_factor = 10.0, iw_block = 0.9, iw_ridge = 0.1;
  // Squared-exponential Phi starting values.
  double gp_length = 1.0, gp_noise = 0.1;

  int num_factors = 0;   // N_F; 0 selects floor(2 log p)
  int num_proteins = 0;  // N_P; 0 selects the number of distinct annotation labels
  double ard_threshold = 1e3;
  int smc_particles = 32;
  int iterations = 4000, burn_in = 3000, thin = 10;

  PhiVariant phi_model = PhiVariant::DiagGamma;
  SystematicPrior systematic_prior = SystematicPrior::Laplace;
  TreeMode tree_mode = TreeMode::Coalescent;
  TreeScore tree_score = TreeScore::Joint;
  UpdateForms update_forms = UpdateForms::Corrected;

  int resolved_num_factors(Index p) const {
    if (num_factors > 0) return num_factors;
    return std::max(1, static_cast<int>(std::floor(2.0 * std::log(static_cast<double>(p)))));
  }

  void validate() const {
    for (double v : {t_s, t_r, t_p, l_s, l_r, r_shape, r_rate, a_s, a_r, phi_shape, phi_rate, iw_dof_factor,
                     gp_length, gp_noise, ard_threshold})
      require(v > 0.0 && std::isfinite(v), "hyperparameters: shapes, rates and thresholds must be positive");
    require(iw_block >= 0.0 && iw_ridge > 0.0, "hyperparameters: inverse Wishart scale must be SPD");
    require(num_factors >= 0, "hyperparameters: num_factors must be nonnegative");
    require(num_proteins >= 0, "hyperparameters: num_proteins must be nonnegative");
    require(smc_particles >= 1, "hyperparameters: smc_particles must be positive");
    require(iterations >= 1 && burn_in >= 0 && thin >= 1, "hyperparameters: iterations and thin must be positive");
    require(burn_in <= iterations, "hyperparameters: burn_in must not exceed iterations");
  }
};

/// Every latent quantity of the observation model.
struct ModelState {
  MatrixXd mu;       // N_B x p batch means
  MatrixXd A;        // p x N_F systematic loadings
  VectorXd rho;      // N_F ARD precisions
  MatrixXd Z;        // N_F x N systematic scores
  MatrixXd tau;      // N_F x N mixing variances
  double lambda2 = 1.0;
  VectorXd b;        // p protein loadings (value of the single nonzero of row i of B)
  std::vector<int> u;  // p protein assignments, 0-based
  double alpha = 1.0;
  MatrixXd W;        // N_P x N latent protein profiles
  VectorXd psi;      // p noise variances
  VectorXd imputed;  // one value per missing cell, Dataset::missing_cells() order

  Index num_igs() const { return A.rows(); }
  Index num_factors() const { return A.cols(); }
  Index num_proteins() const { return W.rows(); }
  Index num_samples() const { return W.cols(); }

  bool satisfies_invariants() const {
    if ((psi.array() <= 0).any() || (rho.array() <= 0).any() || (tau.array() <= 0).any()) return false;
    if (!(lambda2 > 0) || !(alpha > 0)) return false;
    if ((b.array() < 0).any()) return false;
    for (int k : u)
      if (k < 0 || k >= num_proteins()) return false;
    return psi.allFinite() && A.allFinite() && Z.allFinite() && W.allFinite() && mu.allFinite() && b.allFinite();
  }
};

/// Dense p x N_P loading matrix with b_i at column u_i of row i.
inline MatrixXd materialize_B(const VectorXd& b, const std::vector<int>& u, Index num_proteins) {
  require(static_cast<Index>(u.size()) == b.size(), "materialize_B: b and u sizes differ");
  MatrixXd B = MatrixXd::Zero(b.size(), num_proteins);
  for (Index i = 0; i < b.size(); ++i) {
    require(u[i] >= 0 && u[i] < num_proteins, "materialize_B: label out of range at row " + std::to_string(i));
    require(b[i] >= 0.0, "materialize_B: negative loading at row " + std::to_string(i));
    B(i, u[i]) = b[i];
  }
  return B;
}

/// Inverse of materialize_B for matrices with at most one nonzero per row; an
/// all-zero row maps to (0, 0).
inline std::pair<VectorXd, std::vector<int>> extract_loadings(const MatrixXd& B) {
  VectorXd b = VectorXd::Zero(B.rows());
  std::vector<int> u(B.rows(), 0);
  for (Index i = 0; i < B.rows(); ++i) {
    int found = -1;
    for (Index k = 0; k < B.cols(); ++k) {
      if (B(i, k) != 0.0) {
        require(found < 0, "extract_loadings: row " + std::to_string(i) + " has more than one nonzero");
        found = static_cast<int>(k);
      }
    }
    if (found >= 0) {
      u[i] = found;
      b[i] = B(i, found);
    }
  }
  return {b, u};
}

/// mu^m + A z_n + B w_n for sample n of batch m.
inline VectorXd model_mean(const ModelState& state, Index n, int m) {
  require(n >= 0 && n < state.Z.cols(), "model_mean: sample index out of range");
  require(m >= 0 && m < state.mu.rows(), "model_mean: batch index out of range");
  VectorXd out = state.mu.row(m).transpose() + state.A * state.Z.col(n);
  for (Index i = 0; i < out.size(); ++i) out[i] += state.b[i] * state.W(state.u[i], n);
  return out;
}

/// Model mean for every cell, p x N.
inline MatrixXd model_mean_matrix(const ModelState& state, const std::vector<int>& batch) {
  MatrixXd out = state.A * state.Z;
  for (Index n = 0; n < out.cols(); ++n) {
    out.col(n) += state.mu.row(batch[n]).transpose();
    for (Index i = 0; i < out.rows(); ++i) out(i, n) += state.b[i] * state.W(state.u[i], n);
  }
  return out;
}

/// Covariance of the rows of W across samples (divisor N - 1).
inline MatrixXd empirical_profile_covariance(const MatrixXd& W) {
  require(W.cols() >= 2, "empirical covariance needs at least two samples");
  const MatrixXd centered = W.colwise() - W.rowwise().mean();
  return centered * centered.transpose() / static_cast<double>(W.cols() - 1);
}

/// A A^T + B S B^T + Psi with S the empirical covariance of the W rows.
inline MatrixXd implied_covariance(const ModelState& state) {
  const MatrixXd S = empirical_profile_covariance(state.W);
  const Index p = state.num_igs();
  MatrixXd out = state.A * state.A.transpose();
  for (Index j = 0; j < p; ++j) {
    const double bj = state.b[j];
    const int uj = state.u[j];
    for (Index i = 0; i < p; ++i) out(i, j) += state.b[i] * bj * S(state.u[i], uj);
  }
  out.diagonal() += state.psi;
  return out;
}

/// Observed values with missing cells replaced by the current imputation.
inline MatrixXd filled_values(const Dataset& data, const ModelState& state) {
  MatrixXd x = data.values;
  Index c = 0;
  for (Index n = 0; n < x.cols(); ++n)
    for (Index i = 0; i < x.rows(); ++i)
      if (data.missing(i, n)) x(i, n) = state.imputed[c++];
  return x;
}

}  // namespace lpt
