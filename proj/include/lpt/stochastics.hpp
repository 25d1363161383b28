#pragma once

// Seeded random streams and the samplers the model needs beyond <random>.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <string>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "lpt/error.hpp"

namespace lpt {

namespace detail {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// A counter-based random stream. The stream is fully determined by its seed
/// and key path, so a block of work keyed by (sweep, block, unit) draws the
/// same numbers no matter which thread executes it.
class RngStream {
 public:
  using result_type = std::uint64_t;

  RngStream() : RngStream(0) {}
  explicit RngStream(std::uint64_t seed) : seed_(seed), key_(detail::splitmix64(seed ^ 0x5eedULL)) {
    counter_ = key_;
  }
  RngStream(std::uint64_t seed, std::initializer_list<std::uint64_t> key) : RngStream(seed) {
    for (auto part : key) absorb(part);
    counter_ = key_;
  }

  /// Child stream whose key is this stream's key extended by `key`. Independent
  /// of how many draws were already taken from this stream.
  RngStream derive(std::initializer_list<std::uint64_t> key) const {
    RngStream child(*this);
    for (auto part : key) child.absorb(part);
    child.counter_ = child.key_;
    child.normal_.reset();
    return child;
  }

  std::uint64_t seed() const { return seed_; }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    counter_ += detail::kGolden;
    return detail::splitmix64(counter_);
  }

  /// Uniform on the open interval (0, 1).
  double uniform() { return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53; }

  double normal() { return normal_(*this); }
  double normal(double mean, double variance) { return mean + std::sqrt(variance) * normal(); }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  /// Gamma with shape/rate parameterization.
  double gamma(double shape, double rate) {
    return std::gamma_distribution<double>(shape, 1.0 / rate)(*this);
  }

  int uniform_int(int n) { return static_cast<int>(uniform() * n) % n; }

 private:
  void absorb(std::uint64_t part) {
    key_ = detail::splitmix64(key_ ^ detail::splitmix64(part + detail::kGolden * ++depth_));
  }

  std::uint64_t seed_ = 0;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  std::uint64_t depth_ = 0;
  std::normal_distribution<double> normal_;
};

struct GammaParams {
  double shape = 1.0, rate = 1.0;
  double log_density(double x) const {
    return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
  }
};

struct NormalParams {
  double mean = 0.0, var = 1.0;
  double log_density(double x) const {
    return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (x - mean) * (x - mean) / var;
  }
};

struct InverseGaussianParams {
  double mean = 1.0, shape = 1.0;
  double log_density(double x) const {
    return 0.5 * std::log(shape / (2.0 * std::numbers::pi * x * x * x)) -
           shape * (x - mean) * (x - mean) / (2.0 * mean * mean * x);
  }
};

/// Draw from N(mean, variance) restricted to (0, inf). Uses naive rejection when
/// the mode is inside the support and Robert's exponential tail proposal
/// otherwise, so the expected cost is bounded for any mean.
inline double sample_truncated_normal_positive(double mean, double variance, RngStream& rng) {
  if (!(variance > 0.0) || !std::isfinite(variance) || !std::isfinite(mean))
    throw InputError("truncated normal: variance must be positive and finite");
  const double sd = std::sqrt(variance);
  const double lower = -mean / sd;
  double out;
  if (lower <= 0.0) {
    double x;
    do {
      x = rng.normal();
    } while (x <= lower);
    out = mean + sd * x;
  } else {
    const double rate = 0.5 * (lower + std::sqrt(lower * lower + 4.0));
    double excess;
    for (;;) {
      excess = rng.exponential(rate);
      const double d = lower + excess - rate;
      if (rng.uniform() <= std::exp(-0.5 * d * d)) break;
    }
    out = sd * excess;
  }
  return std::max(out, std::numeric_limits<double>::denorm_min());
}

/// Inverse Gaussian IG(mu, lambda) with mean mu and shape lambda
/// (Michael, Schucany and Haas transformation with a Bernoulli correction).
inline double sample_inverse_gaussian(double mu, double lambda, RngStream& rng) {
  if (!(mu > 0.0) || !(lambda > 0.0)) throw InputError("inverse gaussian: parameters must be positive");
  const double nu = rng.normal();
  const double y = nu * nu;
  const double muy = mu * y;
  const double root = std::sqrt(muy * muy + 4.0 * mu * lambda * y);
  // mu + mu^2 y / (2 lambda) - mu / (2 lambda) * root, rearranged to avoid cancellation.
  double x = mu * (root - muy) / (root + muy);
  if (!(x > 0.0)) x = std::numeric_limits<double>::min();
  if (!std::isfinite(x)) x = mu;
  if (rng.uniform() <= mu / (mu + x)) return x;
  return mu * mu / x;
}

inline Eigen::VectorXd sample_dirichlet(const Eigen::VectorXd& concentration, RngStream& rng) {
  const auto k = concentration.size();
  if (k == 0) throw InputError("dirichlet: empty concentration");
  for (Eigen::Index i = 0; i < k; ++i)
    if (!(concentration[i] > 0.0)) throw InputError("dirichlet: concentration entries must be positive");
  if (k == 1) return Eigen::VectorXd::Ones(1);
  // log Gamma(a) draws as log Gamma(a + 1) + log(U) / a, stable for tiny a.
  Eigen::VectorXd logs(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const double a = concentration[i];
    logs[i] = std::log(rng.gamma(a + 1.0, 1.0)) + std::log(rng.uniform()) / a;
  }
  const double top = logs.maxCoeff();
  Eigen::VectorXd out = (logs.array() - top).exp().matrix();
  out /= out.sum();
  return out;
}

namespace detail {

inline Eigen::MatrixXd bartlett_factor(Eigen::Index q, double dof, RngStream& rng) {
  Eigen::MatrixXd factor = Eigen::MatrixXd::Zero(q, q);
  for (Eigen::Index i = 0; i < q; ++i) {
    factor(i, i) = std::sqrt(2.0 * rng.gamma(0.5 * (dof - static_cast<double>(i)), 1.0));
    for (Eigen::Index j = 0; j < i; ++j) factor(i, j) = rng.normal();
  }
  return factor;
}

inline void check_wishart_args(const Eigen::MatrixXd& scale, double dof, const char* who) {
  const auto q = scale.rows();
  if (q == 0 || scale.cols() != q) throw InputError(std::string(who) + ": scale must be square");
  if (!(dof > static_cast<double>(q) - 1.0)) throw InputError(std::string(who) + ": dof must exceed q - 1");
}

}  // namespace detail

/// Wishart(scale, dof) draw via the Bartlett decomposition.
inline Eigen::MatrixXd sample_wishart(const Eigen::MatrixXd& scale, double dof, RngStream& rng) {
  detail::check_wishart_args(scale, dof, "wishart");
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) throw InputError("wishart: scale is not SPD");
  const Eigen::MatrixXd t = llt.matrixL() * detail::bartlett_factor(scale.rows(), dof, rng);
  Eigen::MatrixXd out = t * t.transpose();
  return 0.5 * (out + out.transpose());
}

/// Inverse Wishart IW(scale, dof): the inverse of a Wishart(scale^-1, dof) draw.
/// Mean is scale / (dof - q - 1).
inline Eigen::MatrixXd sample_inverse_wishart(const Eigen::MatrixXd& scale, double dof, RngStream& rng) {
  detail::check_wishart_args(scale, dof, "inverse wishart");
  Eigen::LLT<Eigen::MatrixXd> llt(scale);
  if (llt.info() != Eigen::Success) throw InputError("inverse wishart: scale is not SPD");
  const auto q = scale.rows();
  // scale^-1 = L^-T L^-1; a Wishart(scale^-1) draw is L^-T F F^T L^-1, whose
  // inverse is L F^-T F^-1 L^T.
  const Eigen::MatrixXd factor = detail::bartlett_factor(q, dof, rng);
  Eigen::MatrixXd g = factor.triangularView<Eigen::Lower>().solve(
      Eigen::MatrixXd(llt.matrixL().transpose()));
  Eigen::MatrixXd out = g.transpose() * g;
  out = 0.5 * (out + out.transpose());
  return out;
}

/// One stepping-out / shrinkage slice sampling transition (Neal, 2003) on the
/// open interval (lower, upper).
template <typename LogDensity>
double slice_sample_scalar(LogDensity&& log_density, double current, double width, double lower,
                           double upper, RngStream& rng, int max_steps = 64) {
  if (!(width > 0.0)) throw InputError("slice sampler: width must be positive");
  if (!(current > lower && current < upper)) throw InputError("slice sampler: current point outside bounds");
  const double current_log = log_density(current);
  if (!std::isfinite(current_log) && current_log < 0)
    throw NumericalError("slice sampler: log density is -inf at the current point");
  if (std::isnan(current_log)) throw NumericalError("slice sampler: log density is NaN at the current point");

  const double level = current_log - rng.exponential(1.0);
  auto inside = [&](double x) { return x > lower && x < upper && log_density(x) > level; };

  double left = current - width * rng.uniform();
  double right = left + width;
  int j = static_cast<int>(std::floor(max_steps * rng.uniform()));
  int k = max_steps - 1 - j;
  while (j-- > 0 && left > lower && inside(left)) left -= width;
  while (k-- > 0 && right < upper && inside(right)) right += width;
  left = std::max(left, lower);
  right = std::min(right, upper);

  for (;;) {
    double proposal = left + (right - left) * rng.uniform();
    if (proposal <= lower || proposal >= upper) proposal = current;
    if (proposal == current) return current;
    if (log_density(proposal) > level) return proposal;
    if (proposal < current)
      left = proposal;
    else
      right = proposal;
  }
}

}  // namespace lpt
