// lpt: simulate data, fit the latent protein tree model, evaluate fits and
// run the batch-confounding experiment.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "lpt/cli.hpp"
#include "lpt/error.hpp"

namespace {

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations, burn_in, thin, particles, threads;
  std::string phi;
  std::string out;
};

void add_common(CLI::App* app, CommonFlags& f, bool sampler_flags) {
  app->add_option("--config", f.config, "Configuration file (key = value lines)")->check(CLI::ExistingFile);
  app->add_option("--seed", f.seed, "Random seed");
  app->add_option("--out", f.out, "Output directory")->required();
  app->add_option("--threads", f.threads, "Worker threads")->check(CLI::PositiveNumber);
  if (!sampler_flags) return;
  app->add_option("--iterations", f.iterations, "Gibbs sweeps");
  app->add_option("--burn-in", f.burn_in, "Sweeps discarded before archiving");
  app->add_option("--thin", f.thin, "Archive every n-th post burn-in sweep");
  app->add_option("--particles", f.particles, "SMC particles per tree update");
  app->add_option("--phi", f.phi, "Sample covariance model")->check(CLI::IsMember({"diag", "iw", "gp"}));
}

lpt::cli::RunConfig resolve(const CommonFlags& f) {
  lpt::cli::RunConfig cfg = lpt::cli::load_config(f.config);
  if (f.seed) cfg.seed = cfg.sim.seed = *f.seed;
  if (f.iterations) cfg.hyper.iterations = *f.iterations;
  if (f.burn_in) cfg.hyper.burn_in = *f.burn_in;
  if (f.thin) cfg.hyper.thin = *f.thin;
  if (f.particles) cfg.hyper.smc_particles = *f.particles;
  if (f.threads) cfg.threads = *f.threads;
  if (!f.phi.empty()) cfg.hyper.phi_model = lpt::cli::parse_phi(f.phi);
  cfg.hyper.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent protein tree model: simulation, posterior sampling and evaluation"};
  app.require_subcommand(1);

  CommonFlags sim_flags, fit_flags, eval_flags, conf_flags;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic data set with ground truth");
  add_common(sim, sim_flags, false);

  auto* fit = app.add_subcommand("fit", "Sample the posterior for a data set");
  add_common(fit, fit_flags, true);
  lpt::cli::FitInputs inputs;
  std::string data, batches, annotations, metadata;
  fit->add_option("--data", data, "IG x sample matrix (TSV, NA for missing)")->required()->check(CLI::ExistingFile);
  fit->add_option("--batches", batches, "sample_id, batch (TSV)")->required()->check(CLI::ExistingFile);
  fit->add_option("--annotations", annotations, "ig_id, protein (TSV)")->check(CLI::ExistingFile);
  fit->add_option("--metadata", metadata, "sample_id, subject, time, replicate (TSV)")->check(CLI::ExistingFile);

  auto* eval = app.add_subcommand("evaluate", "Score fits against ground truth");
  add_common(eval, eval_flags, false);
  std::vector<std::string> fit_dirs, truth_dirs;
  eval->add_option("--fit", fit_dirs, "Fit output directory (repeatable)")->required();
  eval->add_option("--truth", truth_dirs, "Truth directory, one per --fit")->required();

  auto* conf = app.add_subcommand("confound", "Detection rates under batch/effect confounding");
  add_common(conf, conf_flags, true);
  std::vector<double> taus;
  std::optional<int> replicates;
  conf->add_option("--taus", taus, "Overlap grid")->delimiter(',');
  conf->add_option("--replicates", replicates, "Replicates per overlap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*sim) {
      lpt::cli::cmd_simulate(resolve(sim_flags), sim_flags.out, sim_flags.config);
    } else if (*fit) {
      inputs = {data, batches, annotations, metadata};
      lpt::cli::cmd_fit(inputs, resolve(fit_flags), fit_flags.out, fit_flags.config);
    } else if (*eval) {
      std::vector<std::filesystem::path> f(fit_dirs.begin(), fit_dirs.end()), t(truth_dirs.begin(), truth_dirs.end());
      lpt::cli::cmd_evaluate(f, t, resolve(eval_flags), eval_flags.out, eval_flags.config);
    } else if (*conf) {
      lpt::cli::RunConfig cfg = resolve(conf_flags);
      if (!taus.empty()) cfg.taus = taus;
      if (replicates) cfg.replicates = *replicates;
      lpt::cli::cmd_confound(cfg, conf_flags.out, conf_flags.config);
    }
  } catch (const lpt::InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const lpt::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
