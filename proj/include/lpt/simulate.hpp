#pragma once

// Synthetic data from the generative hierarchy, and a variant with two
// biological effects partially confounded with batch.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "lpt/core.hpp"
#include "lpt/error.hpp"
#include "lpt/stochastics.hpp"

namespace lpt {

struct SimConfig {
  int p = 800, N = 80, N_B = 2, N_F = 4, N_P = 32;
  double missing_fraction = 0.2;
  double alpha_lo = 0.8, alpha_hi = 2.4;
  std::uint64_t seed = 1;

  void validate() const {
    require(p >= 1 && N >= 1 && N_B >= 1 && N_F >= 1 && N_P >= 1, "sim config: sizes must be positive");
    require(N_P <= p, "sim config: N_P must not exceed p");
    require(N_B <= N, "sim config: N_B must not exceed N");
    require(missing_fraction >= 0.0 && missing_fraction <= 1.0, "sim config: missing_fraction must be in [0, 1]");
    require(alpha_lo > 0.0 && alpha_hi >= alpha_lo, "sim config: invalid alpha range");
  }
};

struct GroundTruth {
  MatrixXd mu;          // N_B x p
  MatrixXd A;           // p x N_F
  MatrixXd Z;           // N_F x N
  VectorXd b;
  std::vector<int> u;
  MatrixXd S;           // N_P x N_P
  MatrixXd W;           // N_P x N
  VectorXd psi;
  MatrixXd Sigma;       // A A^T + B S B^T + Psi
  MatrixXd complete;    // p x N values before masking
  BoolMatrix missing;
  std::vector<int> batch;
  std::vector<int> effect;  // confounded variant only: 1 positive, 0 negative
  std::vector<std::string> protein_labels;
  double alpha = 1.0;
  VectorXd v;

  /// Complete values at Dataset::missing_cells() positions.
  VectorXd missing_truth() const {
    std::vector<double> out;
    for (Index n = 0; n < missing.cols(); ++n)
      for (Index i = 0; i < missing.rows(); ++i)
        if (missing(i, n)) out.push_back(complete(i, n));
    return Eigen::Map<VectorXd>(out.data(), static_cast<Index>(out.size()));
  }
};

namespace detail {

inline std::string padded(const std::string& prefix, int value, int width) {
  std::string digits = std::to_string(value);
  if (static_cast<int>(digits.size()) < width) digits.insert(0, width - digits.size(), '0');
  return prefix + digits;
}

inline int digits_of(int n) { return static_cast<int>(std::to_string(n).size()); }

inline std::vector<int> uniform_batches(int n, int nb, RngStream& rng) {
  std::vector<int> batch(n);
  for (;;) {
    for (int& m : batch) m = rng.uniform_int(nb);
    std::vector<int> counts(nb, 0);
    for (int m : batch) ++counts[m];
    if (std::all_of(counts.begin(), counts.end(), [](int c) { return c > 0; })) return batch;
  }
}

/// Draws everything except W and the observations.
inline GroundTruth draw_parameters(const SimConfig& c, RngStream& rng) {
  GroundTruth t;
  t.mu.resize(c.N_B, c.p);
  for (Index m = 0; m < c.N_B; ++m)
    for (Index i = 0; i < c.p; ++i) t.mu(m, i) = rng.normal(8.0, 2.0);
  t.A.resize(c.p, c.N_F);
  for (Index i = 0; i < c.p; ++i)
    for (Index j = 0; j < c.N_F; ++j) t.A(i, j) = rng.normal(0.0, 0.1);
  t.alpha = c.alpha_lo + (c.alpha_hi - c.alpha_lo) * rng.uniform();
  t.v = sample_dirichlet(VectorXd::Constant(c.N_P, t.alpha), rng);
  t.u.resize(c.p);
  t.b.resize(c.p);
  for (Index i = 0; i < c.p; ++i) {
    const double target = rng.uniform();
    double acc = 0.0;
    int k = c.N_P - 1;
    for (int q = 0; q < c.N_P; ++q) {
      acc += t.v[q];
      if (target < acc) {
        k = q;
        break;
      }
    }
    t.u[i] = k;
    t.b[i] = sample_truncated_normal_positive(0.0, 1.0, rng);
  }
  t.psi.resize(c.p);
  for (Index i = 0; i < c.p; ++i) t.psi[i] = 1.0 / rng.gamma(1.1, 0.02);
  t.batch = uniform_batches(c.N, c.N_B, rng);
  const int width = std::max(2, digits_of(c.N_P));
  for (int k = 0; k < c.N_P; ++k) t.protein_labels.push_back(padded("P", k + 1, width));
  return t;
}

/// Observations from the drawn parameters and W, then the missing mask.
inline Dataset observe(const SimConfig& c, GroundTruth& t, RngStream& rng) {
  t.Z.resize(c.N_F, c.N);
  for (Index j = 0; j < c.N_F; ++j)
    for (Index n = 0; n < c.N; ++n) t.Z(j, n) = rng.normal();
  const MatrixXd B = materialize_B(t.b, t.u, c.N_P);
  t.complete = t.A * t.Z + B * t.W;
  for (Index n = 0; n < c.N; ++n) {
    t.complete.col(n) += t.mu.row(t.batch[n]).transpose();
    for (Index i = 0; i < c.p; ++i) t.complete(i, n) += rng.normal(0.0, t.psi[i]);
  }
  t.Sigma = t.A * t.A.transpose() + B * t.S * B.transpose();
  t.Sigma.diagonal() += t.psi;

  t.missing = BoolMatrix::Constant(c.p, c.N, false);
  for (Index n = 0; n < c.N; ++n)
    for (Index i = 0; i < c.p; ++i) t.missing(i, n) = rng.uniform() < c.missing_fraction;

  Dataset d;
  d.values = t.complete;
  d.missing = t.missing;
  for (Index n = 0; n < c.N; ++n)
    for (Index i = 0; i < c.p; ++i)
      if (t.missing(i, n)) d.values(i, n) = std::numeric_limits<double>::quiet_NaN();
  d.batch = t.batch;
  const int ig_width = std::max(4, digits_of(c.p));
  const int s_width = std::max(2, digits_of(c.N));
  for (int i = 0; i < c.p; ++i) d.ig_ids.push_back(padded("IG", i + 1, ig_width));
  for (int n = 0; n < c.N; ++n) d.sample_ids.push_back(padded("S", n + 1, s_width));
  for (int m = 0; m < c.N_B; ++m) d.batch_names.push_back("B" + std::to_string(m + 1));
  for (int i = 0; i < c.p; ++i) d.annotations[i] = t.protein_labels[t.u[i]];
  return d;
}

}  // namespace detail

/// One replicate of the artificial-data hierarchy. Observations are generated
/// as mu + A z + B w + e with z ~ N(0, I), w ~ N(0, S), which has the stated
/// marginal N(mu, Sigma) and exposes the latent profiles.
inline std::pair<Dataset, GroundTruth> generate_dataset(const SimConfig& config, RngStream& rng) {
  config.validate();
  GroundTruth t = detail::draw_parameters(config, rng);
  t.S = sample_inverse_wishart(MatrixXd::Identity(config.N_P, config.N_P), config.N_P, rng);
  const MatrixXd L = Eigen::LLT<MatrixXd>(t.S).matrixL();
  MatrixXd xi(config.N_P, config.N);
  for (Index k = 0; k < config.N_P; ++k)
    for (Index n = 0; n < config.N; ++n) xi(k, n) = rng.normal();
  t.W = L * xi;
  Dataset d = detail::observe(config, t, rng);
  return {std::move(d), std::move(t)};
}

/// Two biological effects on proteins 1 and 2 (mean +mu_e or -mu_e by effect
/// label, same sign for both), other profiles N(0, 1). Exactly floor(overlap N)
/// samples have effect label equal to batch label.
inline std::pair<Dataset, GroundTruth> generate_confounded_dataset(const SimConfig& config, double overlap,
                                                                   double effect_mean, RngStream& rng) {
  config.validate();
  require(config.N_B == 2, "confounded generator: N_B must be 2");
  require(config.N_P >= 3, "confounded generator: N_P must be at least 3");
  require(overlap >= 0.5 && overlap <= 1.0, "confounded generator: overlap must be in [0.5, 1]");
  GroundTruth t = detail::draw_parameters(config, rng);
  t.S = MatrixXd::Identity(config.N_P, config.N_P);

  const int agree = static_cast<int>(std::floor(overlap * config.N + 1e-9));
  std::vector<int> order(config.N);
  std::iota(order.begin(), order.end(), 0);
  for (int n = config.N - 1; n > 0; --n) std::swap(order[n], order[rng.uniform_int(n + 1)]);
  t.effect.assign(config.N, 0);
  for (int r = 0; r < config.N; ++r) {
    const int n = order[r];
    t.effect[n] = r < agree ? t.batch[n] : 1 - t.batch[n];
  }

  t.W.resize(config.N_P, config.N);
  for (Index n = 0; n < config.N; ++n) {
    const double shift = t.effect[n] == 1 ? effect_mean : -effect_mean;
    for (Index k = 0; k < config.N_P; ++k) t.W(k, n) = rng.normal() + (k < 2 ? shift : 0.0);
  }
  Dataset d = detail::observe(config, t, rng);
  return {std::move(d), std::move(t)};
}

}  // namespace lpt
