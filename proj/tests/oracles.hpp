#pragma once

// Independent reference computations used by the unit and acceptance tests:
// quadrature normalizers, dense Gaussian tree marginals, KS p-values, a
// Newick reader and forward draws from the full prior.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/sinh_sinh.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include <Eigen/Dense>

#include "lpt/coalescent.hpp"
#include "lpt/core.hpp"
#include "lpt/gibbs.hpp"
#include "lpt/stochastics.hpp"

namespace oracle {

using lpt::Index;
using lpt::MatrixXd;
using lpt::VectorXd;

// ---------------------------------------------------------------------------
// Quadrature

/// log of the integral of exp(log_f) over (lo, hi); either end may be infinite.
/// `shift` should be near the maximum of log_f so the integrand is O(1).
inline double log_integral(const std::function<double(double)>& log_f, double lo, double hi, double shift) {
  auto f = [&](double x) {
    const double v = log_f(x) - shift;
    return std::isfinite(v) ? std::exp(v) : 0.0;
  };
  const double tol = 1e-13;
  double value = 0.0;
  if (std::isinf(lo) && std::isinf(hi)) {
    boost::math::quadrature::sinh_sinh<double> q;
    value = q.integrate(f, tol);
  } else if (std::isinf(hi)) {
    boost::math::quadrature::exp_sinh<double> q;
    value = q.integrate(f, lo, hi, tol);
  } else {
    boost::math::quadrature::tanh_sinh<double> q;
    value = q.integrate(f, lo, hi, tol);
  }
  return std::log(value) + shift;
}

/// Normalized log density at x of the unnormalized log_f on (lo, hi).
inline double normalized_log_density(const std::function<double(double)>& log_f, double x, double lo, double hi,
                                     double shift) {
  return log_f(x) - log_integral(log_f, lo, hi, shift);
}

inline double log_normal_pdf(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * std::numbers::pi * var) - 0.5 * (x - mean) * (x - mean) / var;
}

inline double log_gamma_pdf(double x, double shape, double rate) {
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

// ---------------------------------------------------------------------------
// Dense Gaussian tree oracle

/// Depth of every node below the root (node time minus root time).
inline std::vector<double> depths(const lpt::TreeState& tree) {
  std::vector<double> d(tree.num_nodes());
  const double root_time = tree.node_time(tree.root());
  for (int id = 0; id < tree.num_nodes(); ++id) d[id] = tree.node_time(id) - root_time;
  return d;
}

/// Leaf covariance C (N_P x N_P) given the root: shared depth of the two leaves' common ancestor.
inline MatrixXd leaf_covariance(const lpt::TreeState& tree) {
  const auto parent = tree.parents();
  const auto d = depths(tree);
  const int np = tree.num_leaves;
  auto ancestors = [&](int id) {
    std::vector<int> out;
    for (; id >= 0; id = parent[id]) out.push_back(id);
    return out;
  };
  MatrixXd C(np, np);
  for (int a = 0; a < np; ++a) {
    const auto up = ancestors(a);
    for (int b = 0; b < np; ++b) {
      if (a == b) {
        C(a, b) = d[a];
        continue;
      }
      int lca = tree.root();
      for (int x = b; x >= 0; x = parent[x])
        if (std::find(up.begin(), up.end(), x) != up.end()) {
          lca = x;
          break;
        }
      C(a, b) = d[lca];
    }
  }
  return C;
}

inline MatrixXd random_spd(Index n, lpt::RngStream& rng) {
  const MatrixXd g = MatrixXd::NullaryExpr(n, n, [&]() { return rng.normal(); });
  MatrixXd out = g * g.transpose();
  out.diagonal().array() += 0.5;
  return out;
}

/// A PhiModel holding an arbitrary fixed matrix.
inline lpt::PhiModel dense_phi(const MatrixXd& m) {
  lpt::PhiModel phi = lpt::PhiModel::inverse_wishart(m, static_cast<double>(m.rows()) + 5.0);
  phi.matrix = m;
  phi.refresh();
  return phi;
}

struct RootMarginal {
  VectorXd mean;
  double var = 0.0;       // multiplier of Phi
  double log_evidence = 0.0;  // log of the leaf density with the root integrated under a flat prior
};

/// Generalized least squares for the root under Y ~ N(1 r^T, C (x) Phi).
inline RootMarginal dense_root_marginal(const lpt::TreeState& tree, const MatrixXd& leaves, const MatrixXd& phi) {
  const MatrixXd C = leaf_covariance(tree);
  const Index np = leaves.rows(), n = leaves.cols();
  const Eigen::LDLT<MatrixXd> c_fact(C);
  const VectorXd ones = VectorXd::Ones(np);
  const VectorXd ci1 = c_fact.solve(ones);
  const double precision = ones.dot(ci1);
  RootMarginal out;
  out.var = 1.0 / precision;
  out.mean = out.var * (leaves.transpose() * ci1);
  const MatrixXd R = leaves - ones * out.mean.transpose();
  const Eigen::LLT<MatrixXd> phi_fact(phi);
  const double log_det_c = c_fact.vectorD().array().log().sum();
  const double log_det_phi = 2.0 * MatrixXd(phi_fact.matrixL()).diagonal().array().log().sum();
  const MatrixXd quad = (R.transpose() * c_fact.solve(R));
  const double trace = phi_fact.solve(quad).trace();
  const double npd = static_cast<double>(np), nd = static_cast<double>(n);
  const double log_dens = -0.5 * npd * nd * std::log(2.0 * std::numbers::pi) - 0.5 * nd * log_det_c -
                          0.5 * npd * log_det_phi - 0.5 * trace;
  out.log_evidence = log_dens + 0.5 * nd * std::log(2.0 * std::numbers::pi * out.var) + 0.5 * log_det_phi;
  return out;
}

/// Three-leaf tree merging `a` and `b` at -d1, then the pair with the third leaf at -d1 - d2.
inline lpt::TreeState three_leaf_tree(int a, int b, double d1, double d2) {
  lpt::TreeState t;
  t.num_leaves = 3;
  const int c = 3 - a - b;
  t.merges = {{std::min(a, b), std::max(a, b)}, {c, 3}};
  t.times = {-d1, -d1 - d2};
  return t;
}

/// p(leaves | Phi) for three leaves under the rate-1 coalescent: enumeration
/// over the three first pairs and 2-D quadrature over the two holding times.
inline double three_leaf_log_evidence(const MatrixXd& leaves, const MatrixXd& phi) {
  const int pairs[3][2] = {{0, 1}, {0, 2}, {1, 2}};
  std::vector<double> terms;
  for (const auto& pr : pairs) {
    auto log_f2 = [&](double d1, double d2) {
      return -d1 - d2 + dense_root_marginal(three_leaf_tree(pr[0], pr[1], d1, d2), leaves, phi).log_evidence;
    };
    // Rough maximum for scaling.
    double shift = -std::numeric_limits<double>::infinity();
    for (double d1 = 0.05; d1 < 20.0; d1 *= 1.3)
      for (double d2 = 0.05; d2 < 20.0; d2 *= 1.3) shift = std::max(shift, log_f2(d1, d2));
    auto inner = [&](double d1) {
      return log_integral([&](double d2) { return log_f2(d1, d2); }, 0.0, std::numeric_limits<double>::infinity(),
                          shift);
    };
    terms.push_back(log_integral(inner, 0.0, std::numeric_limits<double>::infinity(), shift) - std::log(3.0));
  }
  const double top = *std::max_element(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += std::exp(t - top);
  return top + std::log(s);
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov

/// Two-sided one-sample KS statistic of `x` against `cdf`.
inline double ks_statistic(std::vector<double> x, const std::function<double(double)>& cdf) {
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = cdf(x[i]);
    d = std::max({d, f - static_cast<double>(i) / n, static_cast<double>(i + 1) / n - f});
  }
  return d;
}

/// Asymptotic p-value with the Stephens small-sample correction.
inline double ks_p_value(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  if (lambda < 0.2) return 1.0;
  double p = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    p += (j % 2 == 1 ? 2.0 : -2.0) * term;
    if (term < 1e-16) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// ---------------------------------------------------------------------------
// Newick

/// Leaf-to-leaf path lengths from Newick text with branch lengths.
inline std::map<std::pair<std::string, std::string>, double> newick_distances(const std::string& text) {
  struct Node {
    std::string label;
    double length = 0.0;
    std::vector<int> children;
  };
  std::vector<Node> nodes;
  std::size_t pos = 0;
  std::function<int()> parse = [&]() -> int {
    const int id = static_cast<int>(nodes.size());
    nodes.emplace_back();
    if (text[pos] == '(') {
      ++pos;
      for (;;) {
        const int child = parse();
        nodes[id].children.push_back(child);
        if (text[pos] == ',') {
          ++pos;
          continue;
        }
        ++pos;  // ')'
        break;
      }
    }
    std::size_t end = pos;
    while (end < text.size() && text[end] != ':' && text[end] != ',' && text[end] != ')' && text[end] != ';') ++end;
    nodes[id].label = text.substr(pos, end - pos);
    pos = end;
    if (text[pos] == ':') {
      ++pos;
      std::size_t used = 0;
      nodes[id].length = std::stod(text.substr(pos), &used);
      pos += used;
    }
    return id;
  };
  parse();
  // Depth from the root and ancestor chains.
  std::vector<double> depth(nodes.size(), 0.0);
  std::vector<int> parent(nodes.size(), -1);
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (int c : nodes[i].children) parent[c] = static_cast<int>(i);
  for (std::size_t i = 0; i < nodes.size(); ++i)
    for (int x = static_cast<int>(i); x >= 0; x = parent[x]) depth[i] += nodes[x].length;
  std::map<std::pair<std::string, std::string>, double> out;
  for (std::size_t a = 0; a < nodes.size(); ++a) {
    if (!nodes[a].children.empty()) continue;
    for (std::size_t b = 0; b < nodes.size(); ++b) {
      if (!nodes[b].children.empty() || a == b) continue;
      std::vector<int> up;
      for (int x = static_cast<int>(a); x >= 0; x = parent[x]) up.push_back(x);
      int lca = 0;
      for (int x = static_cast<int>(b); x >= 0; x = parent[x])
        if (std::find(up.begin(), up.end(), x) != up.end()) {
          lca = x;
          break;
        }
      out[{nodes[a].label, nodes[b].label}] = depth[a] + depth[b] - 2.0 * depth[lca];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward draws from the full prior (independent-profile mode)

/// Hyperparameters for the tiny model used by the forward/backward check:
/// proper, light-tailed priors so every tracked moment has finite variance.
inline lpt::Hyperparameters tiny_hyper() {
  lpt::Hyperparameters h;
  h.t_s = 6.0;
  h.t_r = 5.0;
  h.t_m = 0.0;
  h.t_p = 1.0;
  h.l_s = 3.0;
  h.l_r = 2.0;
  h.r_shape = 3.0;
  h.r_rate = 2.0;
  h.a_s = 2.0;
  h.a_r = 2.0;
  h.num_factors = 1;
  h.num_proteins = 2;
  h.tree_mode = lpt::TreeMode::Independent;
  h.systematic_prior = lpt::SystematicPrior::Laplace;
  return h;
}

/// Complete data set shell (no missing cells, two batches, no annotations).
inline lpt::Dataset tiny_dataset(Index p, Index n) {
  lpt::Dataset d;
  d.values = MatrixXd::Zero(p, n);
  d.missing = lpt::BoolMatrix::Constant(p, n, false);
  for (Index c = 0; c < n; ++c) d.batch.push_back(static_cast<int>(c % 2));
  for (Index i = 0; i < p; ++i) d.ig_ids.push_back("IG" + std::to_string(i + 1));
  for (Index c = 0; c < n; ++c) d.sample_ids.push_back("S" + std::to_string(c + 1));
  d.batch_names = {"B1", "B2"};
  return d;
}

/// Data given every parameter.
inline MatrixXd draw_data(const lpt::ModelState& s, const std::vector<int>& batch, lpt::RngStream& rng) {
  MatrixXd x = lpt::model_mean_matrix(s, batch);
  for (Index c = 0; c < x.cols(); ++c)
    for (Index i = 0; i < x.rows(); ++i) x(i, c) += rng.normal(0.0, s.psi[i]);
  return x;
}

inline lpt::ModelState draw_prior(const lpt::Hyperparameters& h, Index p, Index n, int num_batches,
                                  lpt::RngStream& rng) {
  lpt::ModelState s;
  const int nf = h.num_factors, np = h.num_proteins;
  s.psi.resize(p);
  for (Index i = 0; i < p; ++i) s.psi[i] = 1.0 / rng.gamma(h.t_s, h.t_r);
  s.mu.resize(num_batches, p);
  for (Index m = 0; m < num_batches; ++m)
    for (Index i = 0; i < p; ++i) s.mu(m, i) = rng.normal(h.t_m, 1.0 / h.t_p);
  s.lambda2 = rng.gamma(h.l_s, h.l_r);
  s.tau.resize(nf, n);
  s.Z.resize(nf, n);
  for (Index j = 0; j < nf; ++j)
    for (Index c = 0; c < n; ++c) {
      s.tau(j, c) = h.systematic_prior == lpt::SystematicPrior::Laplace ? rng.exponential(0.5 * s.lambda2) : 1.0;
      s.Z(j, c) = rng.normal(0.0, s.tau(j, c));
    }
  s.rho.resize(nf);
  s.A.resize(p, nf);
  for (Index j = 0; j < nf; ++j) {
    s.rho[j] = rng.gamma(h.r_shape, h.r_rate);
    for (Index i = 0; i < p; ++i) s.A(i, j) = rng.normal(0.0, 1.0 / s.rho[j]);
  }
  s.alpha = rng.gamma(h.a_s, h.a_r);
  // Polya urn: the collapsed symmetric Dirichlet-multinomial.
  std::vector<int> counts(np, 0);
  s.u.resize(p);
  s.b.resize(p);
  for (Index i = 0; i < p; ++i) {
    const double total = np * s.alpha + static_cast<double>(i);
    double target = rng.uniform() * total;
    int k = np - 1;
    for (int q = 0; q < np; ++q) {
      target -= s.alpha + counts[q];
      if (target < 0.0) {
        k = q;
        break;
      }
    }
    s.u[i] = k;
    ++counts[k];
    s.b[i] = lpt::sample_truncated_normal_positive(0.0, 1.0, rng);
  }
  s.W.resize(np, n);
  for (Index k = 0; k < np; ++k)
    for (Index c = 0; c < n; ++c) s.W(k, c) = rng.normal();
  return s;
}

}  // namespace oracle
