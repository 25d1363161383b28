#pragma once

// Thinned posterior draws and the summaries computed from them.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lpt/coalescent.hpp"
#include "lpt/core.hpp"
#include "lpt/summary.hpp"

namespace lpt {

struct Draw {
  ModelState state;
  TreeState tree;
  double tree_log_marginal = 0.0;
};

struct PosteriorArchive {
  std::vector<Draw> draws;
  std::uint64_t seed = 0;
  Hyperparameters hyper;
  std::vector<std::string> protein_labels;

  bool empty() const { return draws.empty(); }
  std::size_t size() const { return draws.size(); }
};

/// The archived tree with the largest tree log marginal (earliest on ties).
inline const TreeState& select_map_tree(const PosteriorArchive& archive) {
  require(!archive.empty(), "select_map_tree: empty archive");
  std::size_t best = 0;
  for (std::size_t d = 1; d < archive.size(); ++d)
    if (archive.draws[d].tree_log_marginal > archive.draws[best].tree_log_marginal) best = d;
  return archive.draws[best].tree;
}

/// Draw-by-IG matrix of assignments.
inline std::vector<std::vector<int>> assignment_trace(const PosteriorArchive& archive) {
  std::vector<std::vector<int>> trace;
  trace.reserve(archive.size());
  for (const auto& d : archive.draws) trace.push_back(d.state.u);
  return trace;
}

/// Most frequent label per IG across draws (smallest label on ties).
inline std::vector<int> modal_assignments(const std::vector<std::vector<int>>& trace) {
  require(!trace.empty(), "modal assignments: empty trace");
  const std::size_t p = trace.front().size();
  std::vector<int> out(p, 0);
  for (std::size_t i = 0; i < p; ++i) {
    std::map<int, int> counts;
    for (const auto& draw : trace) ++counts[draw[i]];
    int best = -1, best_count = -1;
    for (const auto& [label, count] : counts)
      if (count > best_count) {
        best = label;
        best_count = count;
      }
    out[i] = best;
  }
  return out;
}

inline VectorXd posterior_mean_imputed(const PosteriorArchive& archive) {
  require(!archive.empty(), "posterior mean: empty archive");
  VectorXd out = VectorXd::Zero(archive.draws.front().state.imputed.size());
  for (const auto& d : archive.draws) out += d.state.imputed;
  return out / static_cast<double>(archive.size());
}

inline MatrixXd posterior_mean_profiles(const PosteriorArchive& archive) {
  require(!archive.empty(), "posterior mean: empty archive");
  MatrixXd out = MatrixXd::Zero(archive.draws.front().state.W.rows(), archive.draws.front().state.W.cols());
  for (const auto& d : archive.draws) out += d.state.W;
  return out / static_cast<double>(archive.size());
}

/// Draw-averaged implied covariance A A^T + B S B^T + Psi.
inline MatrixXd posterior_mean_covariance(const PosteriorArchive& archive) {
  require(!archive.empty(), "posterior mean: empty archive");
  MatrixXd out = implied_covariance(archive.draws.front().state);
  for (std::size_t d = 1; d < archive.size(); ++d) out += implied_covariance(archive.draws[d].state);
  return out / static_cast<double>(archive.size());
}

}  // namespace lpt
