#pragma once

// Command implementations behind the `lpt` executable. Each command is a
// plain function so it can be driven in-process by tests.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lpt/archive.hpp"
#include "lpt/core.hpp"
#include "lpt/error.hpp"
#include "lpt/gibbs.hpp"
#include "lpt/io.hpp"
#include "lpt/metrics.hpp"
#include "lpt/simulate.hpp"
#include "lpt/summary.hpp"

#ifndef LPT_VERSION
#define LPT_VERSION "unknown"
#endif

namespace lpt::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct RunConfig {
  Hyperparameters hyper;
  SimConfig sim;
  std::uint64_t seed = 1;
  int threads = 1;
  // Simulation: overlap in [0.5, 1] switches to the confounded generator.
  double overlap = -1.0;
  double effect_mean = 0.75;
  // Confounding sweep.
  std::vector<double> taus = {0.5, 0.75, 1.0};
  int replicates = 20;
};

inline PhiVariant parse_phi(const std::string& v) {
  if (v == "diag") return PhiVariant::DiagGamma;
  if (v == "iw") return PhiVariant::InvWishart;
  if (v == "gp") return PhiVariant::GpKernel;
  throw InputError("phi must be one of diag, iw, gp (got '" + v + "')");
}

inline std::string phi_name(PhiVariant v) {
  switch (v) {
    case PhiVariant::DiagGamma: return "diag";
    case PhiVariant::InvWishart: return "iw";
    case PhiVariant::GpKernel: return "gp";
  }
  return "diag";
}

/// Applies "key = value" settings; unknown keys are rejected.
inline void apply_settings(RunConfig& cfg, const std::map<std::string, std::string>& kv) {
  Hyperparameters& h = cfg.hyper;
  SimConfig& s = cfg.sim;
  auto num = [](const std::string& key, const std::string& v) { return io::parse_double(v, "config key " + key); };
  auto integer = [&](const std::string& key, const std::string& v) {
    const double x = num(key, v);
    require(x == std::floor(x) && std::abs(x) < 2e9, "config key " + key + ": expected an integer");
    return static_cast<int>(x);
  };
  auto choice = [](const std::string& key, const std::string& v, std::vector<std::string> options) {
    for (std::size_t i = 0; i < options.size(); ++i)
      if (options[i] == v) return static_cast<int>(i);
    throw InputError("config key " + key + ": unknown value '" + v + "'");
  };
  const std::map<std::string, double*> reals = {
      {"t_s", &h.t_s}, {"t_r", &h.t_r}, {"t_m", &h.t_m}, {"t_p", &h.t_p}, {"l_s", &h.l_s}, {"l_r", &h.l_r},
      {"r_shape", &h.r_shape}, {"r_rate", &h.r_rate}, {"a_s", &h.a_s}, {"a_r", &h.a_r},
      {"phi_shape", &h.phi_shape}, {"phi_rate", &h.phi_rate}, {"iw_dof_factor", &h.iw_dof_factor},
      {"iw_block", &h.iw_block}, {"iw_ridge", &h.iw_ridge}, {"gp_length", &h.gp_length}, {"gp_noise", &h.gp_noise},
      {"ard_threshold", &h.ard_threshold}, {"missing_fraction", &s.missing_fraction}, {"alpha_lo", &s.alpha_lo},
      {"alpha_hi", &s.alpha_hi}, {"overlap", &cfg.overlap}, {"effect_mean", &cfg.effect_mean}};
  const std::map<std::string, int*> ints = {
      {"num_factors", &h.num_factors}, {"num_proteins", &h.num_proteins}, {"particles", &h.smc_particles},
      {"iterations", &h.iterations}, {"burn_in", &h.burn_in}, {"thin", &h.thin}, {"threads", &cfg.threads},
      {"p", &s.p}, {"N", &s.N}, {"N_B", &s.N_B}, {"N_F", &s.N_F}, {"N_P", &s.N_P}, {"replicates", &cfg.replicates}};
  for (const auto& [key, value] : kv) {
    if (auto r = reals.find(key); r != reals.end()) {
      *r->second = num(key, value);
    } else if (auto i = ints.find(key); i != ints.end()) {
      *i->second = integer(key, value);
    } else if (key == "seed") {
      const double x = num(key, value);
      require(x >= 0 && x == std::floor(x), "config key seed: expected a nonnegative integer");
      cfg.seed = static_cast<std::uint64_t>(x);
    } else if (key == "phi") {
      h.phi_model = parse_phi(value);
    } else if (key == "systematic_prior") {
      h.systematic_prior = static_cast<SystematicPrior>(choice(key, value, {"laplace", "gaussian"}));
    } else if (key == "tree_mode") {
      h.tree_mode = static_cast<TreeMode>(choice(key, value, {"coalescent", "independent"}));
    } else if (key == "tree_score") {
      h.tree_score = static_cast<TreeScore>(choice(key, value, {"joint", "likelihood"}));
    } else if (key == "update_forms") {
      h.update_forms = static_cast<UpdateForms>(choice(key, value, {"corrected", "printed"}));
    } else if (key == "taus") {
      cfg.taus.clear();
      for (const auto& t : io::split(value, ',')) cfg.taus.push_back(num(key, t));
    } else {
      throw InputError("unknown config key '" + key + "'");
    }
  }
  s.seed = cfg.seed;
}

inline RunConfig load_config(const fs::path& path) {
  RunConfig cfg;
  if (!path.empty()) apply_settings(cfg, io::read_config(path));
  return cfg;
}

/// Run manifest, written atomically once the command has finished.
inline void write_manifest(const fs::path& out_dir, const std::string& command, const fs::path& config_path,
                           const RunConfig& cfg, const std::vector<std::string>& inputs,
                           const std::vector<std::string>& outputs, double seconds) {
  for (const auto& f : outputs) require(fs::exists(out_dir / f), "manifest: missing output " + f);
  json m;
  m["command"] = command;
  m["config"] = config_path.string();
  m["seed"] = cfg.seed;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["version"] = LPT_VERSION;
  m["wall_clock_seconds"] = seconds;
  m["status"] = "complete";
  io::write_json_atomic(out_dir / "manifest.json", m);
}

// ---------------------------------------------------------------------------
// simulate

inline std::vector<std::string> cmd_simulate(const RunConfig& cfg, const fs::path& out_dir,
                                             const fs::path& config_path = {}) {
  const auto start = std::chrono::steady_clock::now();
  RngStream rng(cfg.seed);
  const bool confounded = cfg.overlap >= 0.0;
  auto [data, truth] = confounded ? generate_confounded_dataset(cfg.sim, cfg.overlap, cfg.effect_mean, rng)
                                  : generate_dataset(cfg.sim, rng);
  fs::create_directories(out_dir);
  io::save_dataset(out_dir, data);
  io::save_truth(out_dir / "truth", truth, data);
  std::vector<std::string> outputs = {"data.tsv",          "batches.tsv",       "annotations.tsv",
                                      "truth/sigma.csv",   "truth/labels.tsv",  "truth/mask.tsv",
                                      "truth/complete.tsv", "truth/proteins.tsv", "truth/S.csv",
                                      "truth/W.csv",       "truth/mu.csv",      "truth/A.csv"};
  if (confounded) outputs.push_back("truth/effects.tsv");
  write_manifest(out_dir, "simulate", config_path, cfg, {}, outputs,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return outputs;
}

// ---------------------------------------------------------------------------
// fit

struct FitInputs {
  fs::path data, batches, annotations, metadata;
};

/// Samples where more than 30% of the annotated rows are missing.
inline std::vector<std::string> sparse_samples(const Dataset& d) {
  std::vector<std::string> out;
  if (d.annotations.empty()) return out;
  for (Index n = 0; n < d.num_samples(); ++n) {
    int missing = 0;
    for (const auto& [row, label] : d.annotations) missing += d.missing(row, n);
    if (missing > 0.3 * static_cast<double>(d.annotations.size())) out.push_back(d.sample_ids[n]);
  }
  return out;
}

inline std::string summary_csv(const PosteriorArchive& archive, const Dataset& d, double ard_threshold) {
  std::string text = "parameter,index,median,lo90,hi90\n";
  if (archive.empty()) return text;
  auto row = [&](const std::string& name, const std::string& index, const std::vector<double>& values) {
    const Summary s = summarize(values);
    text += name + "," + index + "," + io::fmt(s.median) + "," + io::fmt(s.lo90) + "," + io::fmt(s.hi90) + "\n";
  };
  const std::size_t D = archive.size();
  std::vector<double> v(D);
  auto collect = [&](auto get) {
    for (std::size_t k = 0; k < D; ++k) v[k] = get(archive.draws[k]);
    return v;
  };
  const ModelState& first = archive.draws.front().state;
  row("lambda2", "", collect([](const Draw& x) { return x.state.lambda2; }));
  row("alpha", "", collect([](const Draw& x) { return x.state.alpha; }));
  row("tree_log_marginal", "", collect([](const Draw& x) { return x.tree_log_marginal; }));
  row("num_factors", "", collect([&](const Draw& x) { return static_cast<double>((x.state.rho.array() < ard_threshold).count()); }));
  for (Index j = 0; j < first.rho.size(); ++j) row("rho", std::to_string(j + 1), collect([&](const Draw& x) { return x.state.rho[j]; }));
  for (Index i = 0; i < first.psi.size(); ++i) row("psi", d.ig_ids[i], collect([&](const Draw& x) { return x.state.psi[i]; }));
  for (Index i = 0; i < first.b.size(); ++i) row("b", d.ig_ids[i], collect([&](const Draw& x) { return x.state.b[i]; }));
  for (Index m = 0; m < first.mu.rows(); ++m)
    for (Index i = 0; i < first.mu.cols(); ++i)
      row("mu", d.batch_names[m] + ":" + d.ig_ids[i], collect([&](const Draw& x) { return x.state.mu(m, i); }));
  for (Index k = 0; k < first.W.rows(); ++k)
    for (Index n = 0; n < first.W.cols(); ++n)
      row("W", archive.protein_labels[k] + ":" + d.sample_ids[n], collect([&](const Draw& x) { return x.state.W(k, n); }));
  return text;
}

inline std::vector<std::string> cmd_fit(const FitInputs& in, const RunConfig& cfg, const fs::path& out_dir,
                                        const fs::path& config_path = {}) {
  const auto start = std::chrono::steady_clock::now();
  const Dataset data = io::load_dataset(in.data, in.batches, in.annotations, in.metadata);
  for (const auto& s : sparse_samples(data))
    std::cerr << "warning: sample " << s << " is missing more than 30% of its annotated rows\n";
  ChainOptions options;
  options.threads = cfg.threads;
  const PosteriorArchive archive = run_chain(data, cfg.hyper, cfg.seed, options);

  fs::create_directories(out_dir);
  std::vector<std::string> outputs = {"summary.csv", "u_trace.csv", "imputed.tsv"};
  io::write_text(out_dir / "summary.csv", summary_csv(archive, data, cfg.hyper.ard_threshold));

  std::string trace = "draw";
  for (const auto& id : data.ig_ids) trace += "," + id;
  trace += "\n";
  for (std::size_t k = 0; k < archive.size(); ++k) {
    trace += std::to_string(k + 1);
    for (int label : archive.draws[k].state.u) trace += "," + archive.protein_labels[label];
    trace += "\n";
  }
  io::write_text(out_dir / "u_trace.csv", trace);

  MatrixXd filled = data.values;
  if (!archive.empty()) {
    const VectorXd mean = posterior_mean_imputed(archive);
    const auto cells = data.missing_cells();
    for (std::size_t c = 0; c < cells.size(); ++c) filled(cells[c].first, cells[c].second) = mean[c];
  }
  io::write_matrix_tsv(out_dir / "imputed.tsv", filled,
                       archive.empty() ? data.missing : BoolMatrix::Constant(filled.rows(), filled.cols(), false),
                       data.ig_ids, data.sample_ids);

  const bool trees = !archive.empty() && archive.draws.front().tree.num_leaves >= 2;
  if (trees) {
    std::string nwk;
    for (const auto& d : archive.draws) nwk += export_newick(d.tree, archive.protein_labels) + "\n";
    io::write_text(out_dir / "trees.nwk", nwk);
    io::write_text(out_dir / "tree.nwk", export_newick(select_map_tree(archive), archive.protein_labels) + "\n");
    outputs.push_back("trees.nwk");
    outputs.push_back("tree.nwk");
  }
  io::save_archive(out_dir / "archive", archive, data.ig_ids);
  outputs.push_back("archive/index.json");

  std::vector<std::string> inputs = {in.data.string(), in.batches.string()};
  if (!in.annotations.empty()) inputs.push_back(in.annotations.string());
  if (!in.metadata.empty()) inputs.push_back(in.metadata.string());
  write_manifest(out_dir, "fit", config_path, cfg, inputs, outputs,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return outputs;
}

// ---------------------------------------------------------------------------
// evaluate

/// Ground truth aligned with a fit: per-IG truth label indices, the truth
/// covariance, complete values at the missing cells (Dataset::missing_cells
/// order) and optional effect labels.
struct EvalTruth {
  std::vector<std::string> protein_labels;
  std::vector<int> ig_truth;
  MatrixXd sigma;
  VectorXd missing_values;
  std::vector<int> effect;
};

inline EvalTruth eval_truth(const GroundTruth& t) {
  return {t.protein_labels, t.u, t.Sigma, t.missing_truth(), t.effect};
}

inline EvalTruth eval_truth(const io::TruthTables& t, const BoolMatrix& mask) {
  EvalTruth e;
  e.protein_labels = t.protein_labels;
  for (const auto& label : t.ig_protein) {
    auto it = std::find(t.protein_labels.begin(), t.protein_labels.end(), label);
    e.ig_truth.push_back(it == t.protein_labels.end() ? -1 : static_cast<int>(it - t.protein_labels.begin()));
  }
  e.sigma = t.sigma;
  std::vector<double> values;
  for (Index n = 0; n < mask.cols(); ++n)
    for (Index i = 0; i < mask.rows(); ++i)
      if (mask(i, n)) values.push_back(t.complete(i, n));
  e.missing_values = Eigen::Map<VectorXd>(values.data(), static_cast<Index>(values.size()));
  e.effect = t.effect;
  return e;
}

struct Evaluation {
  MetricsReport report;
  std::vector<int> consensus;
  int true_positives = 0, false_positives = 0;
  VectorXd cov_upper, cov_truth_upper, missing_estimate;
};

/// Structural and error metrics of one fit. Structural metrics use the
/// per-IG modal assignment across draws. When effect labels are present the
/// first two truth proteins are the true effects.
inline Evaluation evaluate(const PosteriorArchive& archive, const EvalTruth& truth, double ard_threshold) {
  require(!archive.empty(), "evaluate: the archive has no draws");
  Evaluation ev;
  MetricsReport& r = ev.report;
  const auto trace = assignment_trace(archive);
  const std::vector<int> modal = modal_assignments(trace);
  const int np = static_cast<int>(archive.protein_labels.size());
  require(modal.size() == truth.ig_truth.size(), "evaluate: IG count differs between fit and truth");
  ev.consensus = consensus_labels(modal, truth.ig_truth, np);
  std::vector<int> protein_truth(np, -1);
  for (int k = 0; k < np; ++k) {
    auto it = std::find(truth.protein_labels.begin(), truth.protein_labels.end(), archive.protein_labels[k]);
    if (it != truth.protein_labels.end()) protein_truth[k] = static_cast<int>(it - truth.protein_labels.begin());
  }
  r.identity = identity(ev.consensus, protein_truth);
  r.confusion = confusion(modal, truth.ig_truth, ev.consensus);
  r.stability = stability(trace, 0.6);
  r.unique = unique_fraction(ev.consensus);
  r.nf_summary = effective_num_factors(rho_draws(archive), ard_threshold).summary;

  const MatrixXd cov = posterior_mean_covariance(archive);
  r.cov_errors = covariance_errors(cov, truth.sigma);
  ev.cov_upper = upper_triangle(cov);
  ev.cov_truth_upper = upper_triangle(truth.sigma);
  ev.missing_estimate = posterior_mean_imputed(archive);
  r.missing_errors = missing_errors(ev.missing_estimate, truth.missing_values);

  if (!truth.effect.empty()) {
    const MatrixXd mean_w = posterior_mean_profiles(archive);
    r.detected_effects = detect_effects(mean_w, truth.effect, 0.01);
    for (int k : r.detected_effects) {
      if (protein_truth[k] == 0 || protein_truth[k] == 1) ++ev.true_positives;
      else ++ev.false_positives;
    }
    std::vector<MatrixXd> w_draws;
    for (const auto& d : archive.draws) w_draws.push_back(d.state.W);
    for (int k = 0; k < np; ++k) r.auc_per_protein[archive.protein_labels[k]] = lda_auc(w_draws, truth.effect, k);
  }
  return ev;
}

inline std::map<std::string, double> metric_values(const Evaluation& ev) {
  const MetricsReport& r = ev.report;
  std::map<std::string, double> m = {{"identity", r.identity},
                                     {"confusion", r.confusion},
                                     {"stability", r.stability},
                                     {"unique", r.unique},
                                     {"nf_median", r.nf_summary.median},
                                     {"nf_lo90", r.nf_summary.lo90},
                                     {"nf_hi90", r.nf_summary.hi90},
                                     {"cov_mse", r.cov_errors.mse},
                                     {"cov_mae", r.cov_errors.mae},
                                     {"cov_mab", r.cov_errors.mab},
                                     {"missing_mse", r.missing_errors.mse},
                                     {"missing_mae", r.missing_errors.mae},
                                     {"missing_mab", r.missing_errors.mab}};
  if (!r.auc_per_protein.empty()) {
    m["effects_true_positives"] = ev.true_positives;
    m["effects_false_positives"] = ev.false_positives;
    for (const auto& [label, s] : r.auc_per_protein) m["auc_median:" + label] = s.median;
  }
  return m;
}

/// metrics.csv (median and 90% interval across replicates) and
/// metrics_by_replicate.csv for one or more fit/truth directory pairs.
inline std::vector<std::string> cmd_evaluate(const std::vector<fs::path>& fit_dirs, const std::vector<fs::path>& truth_dirs,
                                             const RunConfig& cfg, const fs::path& out_dir,
                                             const fs::path& config_path = {}) {
  const auto start = std::chrono::steady_clock::now();
  require(!fit_dirs.empty() && fit_dirs.size() == truth_dirs.size(), "evaluate: give one truth directory per fit");
  std::vector<std::map<std::string, double>> rows;
  std::vector<VectorXd> cov_est, cov_true, miss_est;
  std::string detected = "replicate,protein\n";
  for (std::size_t r = 0; r < fit_dirs.size(); ++r) {
    const PosteriorArchive archive = io::load_archive(fit_dirs[r] / "archive");
    const io::TruthTables tables = io::load_truth(truth_dirs[r]);
    const io::MatrixTable mask_table = io::read_matrix_tsv(truth_dirs[r] / "mask.tsv");
    const BoolMatrix mask = mask_table.values.array() != 0.0;
    const Evaluation ev = evaluate(archive, eval_truth(tables, mask), cfg.hyper.ard_threshold);
    rows.push_back(metric_values(ev));
    cov_est.push_back(ev.cov_upper);
    cov_true.push_back(ev.cov_truth_upper);
    miss_est.push_back(ev.missing_estimate);
    for (int k : ev.report.detected_effects) detected += std::to_string(r + 1) + "," + archive.protein_labels[k] + "\n";
  }
  std::string by_rep = "replicate,metric,value\n";
  std::map<std::string, std::vector<double>> columns;
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (const auto& [name, value] : rows[r]) {
      by_rep += std::to_string(r + 1) + "," + name + "," + io::fmt(value) + "\n";
      columns[name].push_back(value);
    }
  std::string text = "metric,median,lo90,hi90\n";
  for (const auto& [name, values] : columns) {
    const Summary s = summarize(values);
    text += name + "," + io::fmt(s.median) + "," + io::fmt(s.lo90) + "," + io::fmt(s.hi90) + "\n";
  }
  bool same_shape = true;
  for (std::size_t r = 1; r < rows.size(); ++r)
    same_shape = same_shape && cov_est[r].size() == cov_est[0].size() && miss_est[r].size() == miss_est[0].size();
  if (rows.size() > 1 && same_shape) {
    const double cmab = replicate_mab(cov_est, cov_true);
    text += "cov_mab_replicates," + io::fmt(cmab) + "," + io::fmt(cmab) + "," + io::fmt(cmab) + "\n";
  }
  fs::create_directories(out_dir);
  io::write_text(out_dir / "metrics.csv", text);
  io::write_text(out_dir / "metrics_by_replicate.csv", by_rep);
  io::write_text(out_dir / "detected_effects.csv", detected);
  const std::vector<std::string> outputs = {"metrics.csv", "metrics_by_replicate.csv", "detected_effects.csv"};
  std::vector<std::string> inputs;
  for (std::size_t r = 0; r < fit_dirs.size(); ++r) {
    inputs.push_back(fit_dirs[r].string());
    inputs.push_back(truth_dirs[r].string());
  }
  write_manifest(out_dir, "evaluate", config_path, cfg, inputs, outputs,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return outputs;
}

// ---------------------------------------------------------------------------
// confound

struct ConfoundOutcome {
  double tau = 0.0;
  int replicate = 0;
  int true_positives = 0, false_positives = 0;
};

struct ConfoundRates {
  double tau = 0.0;
  int replicates = 0;
  double tp0 = 0.0, tp1 = 0.0, tp2 = 0.0;
  double fp_any = 0.0;   // fraction of replicates with at least one false positive
  double fp_mean = 0.0;  // false positives per replicate
};

/// One confounded replicate: generate, fit, then test posterior-mean profiles
/// across effect groups.
inline ConfoundOutcome confound_replicate(const RunConfig& cfg, double tau, int replicate) {
  const std::uint64_t key = static_cast<std::uint64_t>(std::llround(tau * 1e6));
  RngStream rng = RngStream(cfg.seed).derive({0xc0ffULL, key, static_cast<std::uint64_t>(replicate)});
  auto [data, truth] = generate_confounded_dataset(cfg.sim, tau, cfg.effect_mean, rng);
  ChainOptions options;
  options.threads = cfg.threads;
  const std::uint64_t chain_seed = rng.derive({1})();
  const PosteriorArchive archive = run_chain(data, cfg.hyper, chain_seed, options);
  require(!archive.empty(), "confound: burn_in leaves no draws");
  ConfoundOutcome out{tau, replicate, 0, 0};
  const MatrixXd mean_w = posterior_mean_profiles(archive);
  for (int k : detect_effects(mean_w, truth.effect, 0.01)) {
    const std::string& label = archive.protein_labels[k];
    if (label == truth.protein_labels[0] || label == truth.protein_labels[1]) ++out.true_positives;
    else ++out.false_positives;
  }
  return out;
}

inline std::vector<ConfoundRates> confound_rates(const std::vector<ConfoundOutcome>& outcomes) {
  std::map<double, ConfoundRates> by_tau;
  for (const auto& o : outcomes) {
    ConfoundRates& r = by_tau[o.tau];
    r.tau = o.tau;
    ++r.replicates;
    r.tp0 += o.true_positives == 0;
    r.tp1 += o.true_positives == 1;
    r.tp2 += o.true_positives == 2;
    r.fp_any += o.false_positives > 0;
    r.fp_mean += o.false_positives;
  }
  std::vector<ConfoundRates> out;
  for (auto& [tau, r] : by_tau) {
    const double n = r.replicates;
    r.tp0 /= n;
    r.tp1 /= n;
    r.tp2 /= n;
    r.fp_any /= n;
    r.fp_mean /= n;
    out.push_back(r);
  }
  return out;
}

inline std::vector<std::string> cmd_confound(const RunConfig& cfg, const fs::path& out_dir,
                                             const fs::path& config_path = {}) {
  const auto start = std::chrono::steady_clock::now();
  require(!cfg.taus.empty() && cfg.replicates >= 1, "confound: need at least one tau and one replicate");
  std::vector<ConfoundOutcome> outcomes;
  std::string long_csv = "tau,replicate,true_positives,false_positives\n";
  for (double tau : cfg.taus)
    for (int r = 0; r < cfg.replicates; ++r) {
      const ConfoundOutcome o = confound_replicate(cfg, tau, r);
      outcomes.push_back(o);
      long_csv += io::fmt(tau) + "," + std::to_string(r + 1) + "," + std::to_string(o.true_positives) + "," +
                  std::to_string(o.false_positives) + "\n";
    }
  std::string rates = "tau,replicates,tp0,tp1,tp2,fp_any,fp_mean\n";
  for (const auto& r : confound_rates(outcomes))
    rates += io::fmt(r.tau) + "," + std::to_string(r.replicates) + "," + io::fmt(r.tp0) + "," + io::fmt(r.tp1) + "," +
             io::fmt(r.tp2) + "," + io::fmt(r.fp_any) + "," + io::fmt(r.fp_mean) + "\n";
  fs::create_directories(out_dir);
  io::write_text(out_dir / "rates.csv", rates);
  io::write_text(out_dir / "confound_long.csv", long_csv);
  std::vector<std::string> outputs = {"rates.csv", "confound_long.csv"};
  write_manifest(out_dir, "confound", config_path, cfg, {}, outputs,
                 std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return outputs;
}

}  // namespace lpt::cli
