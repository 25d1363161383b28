#pragma once

// Sampler-level checks: KS tests of the scalar samplers and the Laplace
// Gibbs pair, and the forward/backward (Geweke) test of the whole sweep.

#include <cmath>
#include <string>
#include <vector>

#include "lpt/gibbs.hpp"
#include "lpt/stochastics.hpp"
#include "oracles.hpp"

namespace oracle {

inline double truncated_normal_cdf(double x, double mean, double var) {
  if (x <= 0.0) return 0.0;
  const double sd = std::sqrt(var);
  // Work with upper tails so the far-negative-mean case keeps precision.
  const double log_tail = lpt::log_normal_cdf(-(x - mean) / sd) - lpt::log_normal_cdf(mean / sd);
  return -std::expm1(log_tail);
}

inline double inverse_gaussian_cdf(double x, double mu, double lambda) {
  if (x <= 0.0) return 0.0;
  const double r = std::sqrt(lambda / x);
  return normal_cdf(r * (x / mu - 1.0)) + std::exp(2.0 * lambda / mu + lpt::log_normal_cdf(-r * (x / mu + 1.0)));
}

inline double laplace_cdf(double z, double rate) {
  return z < 0.0 ? 0.5 * std::exp(rate * z) : 1.0 - 0.5 * std::exp(-rate * z);
}

inline double ks_truncated_normal(double mean, double var, std::size_t n, std::uint64_t seed) {
  lpt::RngStream rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = lpt::sample_truncated_normal_positive(mean, var, rng);
  return ks_p_value(ks_statistic(x, [&](double t) { return truncated_normal_cdf(t, mean, var); }), n);
}

inline double ks_inverse_gaussian(double mu, double lambda, std::size_t n, std::uint64_t seed) {
  lpt::RngStream rng(seed);
  std::vector<double> x(n);
  for (auto& v : x) v = lpt::sample_inverse_gaussian(mu, lambda, rng);
  return ks_p_value(ks_statistic(x, [&](double t) { return inverse_gaussian_cdf(t, mu, lambda); }), n);
}

/// z | tau ~ N(0, tau), 1 / tau | z from the mixing-variance conditional; the
/// z-marginal is Laplace with rate sqrt(lambda2). Every `thin`-th z is kept.
inline double ks_laplace_pair(double lambda2, std::size_t n, int thin, std::uint64_t seed) {
  lpt::RngStream rng(seed);
  double z = 0.0, tau = 1.0;
  std::vector<double> kept;
  kept.reserve(n);
  for (int burn = 0; burn < 1000; ++burn) {
    z = rng.normal(0.0, tau);
    const auto c = lpt::inverse_tau_conditional(z, lambda2, lpt::UpdateForms::Corrected);
    tau = 1.0 / lpt::sample_inverse_gaussian(c.mean, c.shape, rng);
  }
  while (kept.size() < n) {
    for (int t = 0; t < thin; ++t) {
      z = rng.normal(0.0, tau);
      const auto c = lpt::inverse_tau_conditional(z, lambda2, lpt::UpdateForms::Corrected);
      tau = 1.0 / lpt::sample_inverse_gaussian(c.mean, c.shape, rng);
    }
    kept.push_back(z);
  }
  const double rate = std::sqrt(lambda2);
  return ks_p_value(ks_statistic(kept, [&](double t) { return laplace_cdf(t, rate); }), n);
}

struct GewekeStat {
  std::string name;
  double forward_mean = 0.0, chain_mean = 0.0, z = 0.0;
};

/// Forward/backward test on the tiny model (p = 6, N = 8, N_P = 2, N_F = 1,
/// independent profiles). Marginal-conditional draws come from the prior;
/// successive-conditional draws alternate a full sweep with fresh data given
/// the parameters. The chain standard error uses batch means.
inline std::vector<GewekeStat> geweke_test(int forward_draws, int chain_sweeps, std::uint64_t seed,
                                           lpt::UpdateForms forms = lpt::UpdateForms::Corrected) {
  lpt::Hyperparameters h = tiny_hyper();
  h.update_forms = forms;
  const Index p = 6, n = 8;
  lpt::Dataset data = tiny_dataset(p, n);
  const std::vector<std::string> names = {"psi_1", "mu_11", "a_11^2", "z_11^2", "lambda2",
                                          "rho_1", "alpha", "w_11^2", "b_1", "same_label_12"};
  auto stats = [](const lpt::ModelState& s) {
    return std::vector<double>{s.psi[0],        s.mu(0, 0), s.A(0, 0) * s.A(0, 0), s.Z(0, 0) * s.Z(0, 0),
                               s.lambda2,       s.rho[0],   s.alpha,              s.W(0, 0) * s.W(0, 0),
                               s.b[0],          s.u[0] == s.u[1] ? 1.0 : 0.0};
  };
  const std::size_t m = names.size();

  lpt::RngStream root(seed);
  std::vector<double> f_sum(m, 0.0), f_sq(m, 0.0);
  lpt::RngStream fwd = root.derive({1});
  for (int d = 0; d < forward_draws; ++d) {
    const auto g = stats(draw_prior(h, p, n, 2, fwd));
    for (std::size_t k = 0; k < m; ++k) {
      f_sum[k] += g[k];
      f_sq[k] += g[k] * g[k];
    }
  }

  lpt::RngStream init = root.derive({2});
  lpt::ModelState start = draw_prior(h, p, n, 2, init);
  start.imputed.resize(0);
  data.values = draw_data(start, data.batch, init);
  lpt::GibbsSampler sampler(data, h, start, lpt::TreeState{}, root.derive({3})());
  lpt::RngStream data_rng = root.derive({4});
  const int batches = 100;
  const int per_batch = chain_sweeps / batches;
  std::vector<std::vector<double>> batch_means(m, std::vector<double>(batches, 0.0));
  for (int b = 0; b < batches; ++b)
    for (int t = 0; t < per_batch; ++t) {
      sampler.sweep();
      sampler.replace_values(draw_data(sampler.state(), data.batch, data_rng));
      const auto g = stats(sampler.state());
      for (std::size_t k = 0; k < m; ++k) batch_means[k][b] += g[k] / per_batch;
    }

  std::vector<GewekeStat> out;
  for (std::size_t k = 0; k < m; ++k) {
    const double fm = f_sum[k] / forward_draws;
    const double fv = f_sq[k] / forward_draws - fm * fm;
    double cm = 0.0;
    for (double v : batch_means[k]) cm += v / batches;
    double cv = 0.0;
    for (double v : batch_means[k]) cv += (v - cm) * (v - cm) / (batches - 1);
    const double se = std::sqrt(fv / forward_draws + cv / batches);
    out.push_back({names[k], fm, cm, (fm - cm) / se});
  }
  return out;
}

}  // namespace oracle
