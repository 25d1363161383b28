#pragma once

// Structural and error metrics for fitted models.

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "lpt/core.hpp"
#include "lpt/error.hpp"
#include "lpt/summary.hpp"

namespace lpt {

/// Majority truth label among the IGs assigned to each latent protein
/// (smallest label on ties, -1 for proteins with no labelled members).
/// Truth entries of -1 are ignored.
inline std::vector<int> consensus_labels(const std::vector<int>& u, const std::vector<int>& truth,
                                         int num_proteins) {
  require(u.size() == truth.size(), "consensus: u and truth sizes differ");
  std::vector<std::map<int, int>> counts(num_proteins);
  for (std::size_t i = 0; i < u.size(); ++i) {
    require(u[i] >= 0 && u[i] < num_proteins, "consensus: label out of range");
    if (truth[i] >= 0) ++counts[u[i]][truth[i]];
  }
  std::vector<int> out(num_proteins, -1);
  for (int k = 0; k < num_proteins; ++k) {
    int best_count = 0;
    for (const auto& [label, count] : counts[k])
      if (count > best_count) {
        best_count = count;
        out[k] = label;
      }
  }
  return out;
}

/// Fraction of non-empty latent proteins whose consensus equals their own
/// label (`protein_truth[k]`, -1 when protein k carries no truth label).
inline double identity(const std::vector<int>& consensus, const std::vector<int>& protein_truth) {
  require(consensus.size() == protein_truth.size(), "identity: size mismatch");
  int total = 0, hits = 0;
  for (std::size_t k = 0; k < consensus.size(); ++k) {
    if (consensus[k] < 0) continue;
    ++total;
    if (consensus[k] == protein_truth[k]) ++hits;
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / total;
}

/// Fraction of labelled IGs whose truth differs from the consensus of their assigned protein.
inline double confusion(const std::vector<int>& u, const std::vector<int>& truth, const std::vector<int>& consensus) {
  require(u.size() == truth.size(), "confusion: u and truth sizes differ");
  int total = 0, wrong = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (truth[i] < 0) continue;
    ++total;
    if (consensus.at(u[i]) != truth[i]) ++wrong;
  }
  return total == 0 ? 0.0 : static_cast<double>(wrong) / total;
}

/// Fraction of IGs whose most frequent label holds in at least `threshold` of the draws.
inline double stability(const std::vector<std::vector<int>>& trace, double threshold = 0.6) {
  require(!trace.empty(), "stability: empty trace");
  const std::size_t p = trace.front().size();
  if (p == 0) return 0.0;
  int stable = 0;
  for (std::size_t i = 0; i < p; ++i) {
    std::map<int, int> counts;
    for (const auto& draw : trace) ++counts[draw.at(i)];
    int top = 0;
    for (const auto& [label, count] : counts) top = std::max(top, count);
    if (static_cast<double>(top) >= threshold * static_cast<double>(trace.size())) ++stable;
  }
  return static_cast<double>(stable) / static_cast<double>(p);
}

/// Distinct consensus labels over the number of latent proteins.
inline double unique_fraction(const std::vector<int>& consensus) {
  require(!consensus.empty(), "unique_fraction: no proteins");
  std::set<int> distinct;
  for (int c : consensus)
    if (c >= 0) distinct.insert(c);
  return static_cast<double>(distinct.size()) / static_cast<double>(consensus.size());
}

struct ErrorTriple {
  double mse = 0.0, mae = 0.0, mab = 0.0;
};

/// Errors over entries of two equally sized vectors; mab is the largest absolute deviation.
inline ErrorTriple vector_errors(const VectorXd& estimate, const VectorXd& truth) {
  require(estimate.size() == truth.size(), "errors: size mismatch");
  ErrorTriple out;
  if (estimate.size() == 0) return out;
  const VectorXd diff = estimate - truth;
  out.mse = diff.squaredNorm() / static_cast<double>(diff.size());
  out.mae = diff.cwiseAbs().mean();
  out.mab = diff.cwiseAbs().maxCoeff();
  return out;
}

/// Upper triangle (diagonal included) as a vector.
inline VectorXd upper_triangle(const MatrixXd& m) {
  require(m.rows() == m.cols(), "upper_triangle: matrix must be square");
  VectorXd out(m.rows() * (m.rows() + 1) / 2);
  Index c = 0;
  for (Index j = 0; j < m.cols(); ++j)
    for (Index i = 0; i <= j; ++i) out[c++] = m(i, j);
  return out;
}

inline ErrorTriple covariance_errors(const MatrixXd& estimate, const MatrixXd& truth) {
  require(estimate.rows() == truth.rows() && estimate.cols() == truth.cols(), "covariance errors: shape mismatch");
  return vector_errors(upper_triangle(estimate), upper_triangle(truth));
}

inline ErrorTriple missing_errors(const VectorXd& imputed, const VectorXd& truth) {
  return vector_errors(imputed, truth);
}

/// Largest absolute per-entry bias averaged over replicates (entries aligned across replicates).
inline double replicate_mab(const std::vector<VectorXd>& estimates, const std::vector<VectorXd>& truths) {
  require(!estimates.empty() && estimates.size() == truths.size(), "replicate mab: need matching replicate sets");
  VectorXd bias = VectorXd::Zero(estimates.front().size());
  for (std::size_t r = 0; r < estimates.size(); ++r) {
    require(estimates[r].size() == bias.size() && truths[r].size() == bias.size(),
            "replicate mab: replicates must share a shape");
    bias += estimates[r] - truths[r];
  }
  bias /= static_cast<double>(estimates.size());
  return bias.size() == 0 ? 0.0 : bias.cwiseAbs().maxCoeff();
}

/// Area under the ROC curve of scores for class 1 against class 0 (Mann-Whitney, ties count 1/2).
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require(scores.size() == labels.size(), "auc: size mismatch");
  double wins = 0.0;
  long pos = 0, neg = 0;
  for (std::size_t a = 0; a < scores.size(); ++a) {
    if (labels[a] != 1) continue;
    ++pos;
    for (std::size_t b = 0; b < scores.size(); ++b) {
      if (labels[b] != 0) continue;
      if (scores[a] > scores[b]) wins += 1.0;
      else if (scores[a] == scores[b]) wins += 0.5;
    }
  }
  for (int l : labels) neg += l == 0;
  require(pos > 0 && neg > 0, "auc: both classes must be present");
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

/// Leave-one-out scores of a univariate two-class linear discriminant: each
/// held-out value is scored by the log posterior odds of class 1 under class
/// means and a pooled variance fitted without it.
inline std::vector<double> lda_loo_scores(const VectorXd& x, const std::vector<int>& labels) {
  require(static_cast<std::size_t>(x.size()) == labels.size(), "lda: size mismatch");
  const Index n = x.size();
  double sum[2] = {0, 0}, sq[2] = {0, 0};
  int count[2] = {0, 0};
  for (Index i = 0; i < n; ++i) {
    require(labels[i] == 0 || labels[i] == 1, "lda: labels must be 0 or 1");
    sum[labels[i]] += x[i];
    sq[labels[i]] += x[i] * x[i];
    ++count[labels[i]];
  }
  require(count[0] >= 2 && count[1] >= 2, "lda: each class needs at least two samples");
  std::vector<double> scores(n);
  for (Index i = 0; i < n; ++i) {
    double s[2] = {sum[0], sum[1]}, q[2] = {sq[0], sq[1]};
    int c[2] = {count[0], count[1]};
    s[labels[i]] -= x[i];
    q[labels[i]] -= x[i] * x[i];
    --c[labels[i]];
    const double m0 = s[0] / c[0], m1 = s[1] / c[1];
    const double ss = (q[0] - c[0] * m0 * m0) + (q[1] - c[1] * m1 * m1);
    const double var = std::max(ss / std::max(c[0] + c[1] - 2, 1), 1e-300);
    scores[i] = (x[i] - 0.5 * (m0 + m1)) * (m1 - m0) / var + std::log(static_cast<double>(c[1]) / c[0]);
  }
  return scores;
}

/// Per-draw leave-one-out LDA AUC of protein k, summarized across draws.
inline Summary lda_auc(const std::vector<MatrixXd>& W_draws, const std::vector<int>& labels, Index k) {
  require(!W_draws.empty(), "lda_auc: no draws");
  std::vector<double> values;
  values.reserve(W_draws.size());
  for (const auto& W : W_draws) {
    require(k >= 0 && k < W.rows(), "lda_auc: protein index out of range");
    values.push_back(auc(lda_loo_scores(W.row(k).transpose(), labels), labels));
  }
  return summarize(values);
}

/// Two-sided Welch t-test p-value for the difference of two sample means.
inline double welch_p_value(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() >= 2 && b.size() >= 2, "welch: each group needs at least two values");
  auto moments = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, s / static_cast<double>(v.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double se2 = va / na + vb / nb;
  if (!(se2 > 0.0)) return ma == mb ? 1.0 : 0.0;
  const double t = (ma - mb) / std::sqrt(se2);
  const double dof = se2 * se2 / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
  const boost::math::students_t dist(dof);
  return 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(t)));
}

/// Proteins (rows of `profiles`) whose group means differ at level / N_P (Bonferroni).
inline std::vector<int> detect_effects(const MatrixXd& profiles, const std::vector<int>& groups, double level = 0.01) {
  require(static_cast<std::size_t>(profiles.cols()) == groups.size(), "detect_effects: one group per sample");
  const double threshold = level / static_cast<double>(profiles.rows());
  std::vector<int> hits;
  for (Index k = 0; k < profiles.rows(); ++k) {
    std::vector<double> a, b;
    for (Index n = 0; n < profiles.cols(); ++n) (groups[n] == 1 ? a : b).push_back(profiles(k, n));
    if (welch_p_value(a, b) < threshold) hits.push_back(static_cast<int>(k));
  }
  return hits;
}

struct MetricsReport {
  double identity = 0.0, confusion = 0.0, stability = 0.0, unique = 0.0;
  Summary nf_summary;
  ErrorTriple cov_errors, missing_errors;
  std::map<std::string, Summary> auc_per_protein;
  std::vector<int> detected_effects;
};

}  // namespace lpt
