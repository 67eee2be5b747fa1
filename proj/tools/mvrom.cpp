// mvrom: dataset generation, training, evaluation and sweeps.
//
// Exit codes: 0 success, 1 a cell or command failed, 2 configuration error.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mvrom/burgers.hpp"
#include "mvrom/dataset.hpp"
#include "mvrom/experiment.hpp"
#include "mvrom/mechanics.hpp"
#include "mvrom/vae.hpp"

namespace fs = std::filesystem;
using namespace mvrom;
using experiment::ConfigError;
using experiment::ExperimentConfig;
using experiment::ExperimentKind;

namespace {

struct ConfigArgs {
  std::optional<fs::path> file;
  std::vector<std::string> overrides;
  std::optional<fs::path> output;

  void attach(CLI::App* app) {
    app->add_option("-c,--config", file, "INI config file")->check(CLI::ExistingFile);
    app->add_option("-s,--set", overrides, "override, section.key=value (repeatable)");
    app->add_option("-o,--output", output, "output directory");
  }

  ExperimentConfig load(std::optional<ExperimentKind> force = std::nullopt) const {
    auto extra = overrides;
    if (force) extra.insert(extra.begin(), std::string("experiment.kind=") + experiment::experiment_kind_name(*force));
    auto c = experiment::load_config(file, extra);
    if (output) c.output = *output;
    return c;
  }
};

int report(const experiment::RunResult& r) {
  std::cout << r.table.to_csv();
  if (r.failed) std::cerr << r.failed << " cell(s) failed\n";
  return r.failed ? 1 : 0;
}

void print_row(const std::vector<std::string>& cols, const std::vector<double>& values) {
  for (std::size_t i = 0; i < cols.size(); ++i) std::printf("%s%s", i ? "," : "", cols[i].c_str());
  std::printf("\n");
  for (std::size_t i = 0; i < values.size(); ++i) std::printf("%s%.10e", i ? "," : "", values[i]);
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational reduced-order models with manifold latent spaces"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a dataset");
  std::string kind = "burgers";
  std::size_t count = 512;
  std::uint64_t seed = 0;
  double sigma = 0.0;
  fs::path data_out;
  bool csv = false;
  burgers::BurgersConfig bc;
  gen->add_option("--kind", kind, "burgers | torus | klein")->check(CLI::IsMember({"burgers", "torus", "klein"}));
  gen->add_option("--count", count, "number of samples");
  gen->add_option("--seed", seed);
  gen->add_option("--sigma", sigma, "observation noise (mechanics)");
  gen->add_option("--viscosity", bc.viscosity);
  gen->add_option("--tau", bc.tau);
  gen->add_option("--nx", bc.nx);
  gen->add_option("--out", data_out, "output file")->required();
  gen->add_flag("--csv", csv, "also write a .csv next to the binary");

  // train / sweep / baselines share config handling
  ConfigArgs train_args, sweep_args, base_args;
  auto* train = app.add_subcommand("train", "train one model (first value of every sweep list)");
  train_args.attach(train);
  auto* sweep = app.add_subcommand("sweep", "run every cell of the configured sweep");
  sweep_args.attach(sweep);
  auto* base = app.add_subcommand("baselines", "DMD, POD and truncated Cole-Hopf rows");
  base_args.attach(base);

  // eval
  ConfigArgs eval_args;
  fs::path checkpoint;
  auto* eval = app.add_subcommand("eval", "recompute a table cell from a checkpoint");
  eval_args.attach(eval);
  eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  eval->add_option("--sigma", sigma, "noise level for mechanics evaluation");

  // export-trace
  fs::path trace_out;
  std::size_t alphas = 21;
  double t0 = 0.0;
  int steps = 5;
  auto* trace = app.add_subcommand("export-trace", "latent codes over alpha with rollout steps");
  trace->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingFile);
  trace->add_option("--out", trace_out)->required();
  trace->add_option("--alphas", alphas, "uniform alpha grid size");
  trace->add_option("--time", t0, "snapshot time");
  trace->add_option("--steps", steps, "rollout steps per sample");
  trace->add_option("--viscosity", bc.viscosity);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      Dataset d;
      if (kind == "burgers") {
        bc.validate();
        d = burgers::generate_dataset(bc, {.count = count, .seed = seed});
      } else {
        auto m = kind == "torus" ? mechanics::generate_arm_torus({}, count, seed) : mechanics::generate_klein({}, count, seed);
        d = mechanics::to_dataset(mechanics::add_noise(m, sigma, Rng::derive(seed, 1)));
      }
      if (data_out.has_parent_path()) fs::create_directories(data_out.parent_path());
      write_dataset(d, data_out);
      if (csv) write_dataset_csv(d, fs::path(data_out).replace_extension(".csv"));
      std::cerr << "wrote " << d.size() << " pairs to " << data_out << '\n';
      return 0;
    }
    if (*train) {
      auto c = train_args.load();
      c.betas.resize(1);
      c.gammas.resize(1);
      c.sigmas.resize(1);
      c.latents.resize(1);
      c.architectures.resize(1);
      c.ranks.resize(1);
      c.seeds.resize(1);
      return report(experiment::run_experiment(c));
    }
    if (*sweep) return report(experiment::run_experiment(sweep_args.load()));
    if (*base) return report(experiment::run_experiment(base_args.load(ExperimentKind::BurgersBaselines)));
    if (*eval) {
      const auto c = eval_args.load();
      const auto model = vae::VaeModel::load(checkpoint);
      if (c.kind == ExperimentKind::MechRecon) {
        print_row({"error"}, {experiment::evaluate_mech(model, c, sigma)});
      } else {
        std::vector<std::string> cols;
        for (int k = 0; k <= c.horizons; ++k) cols.push_back(std::to_string(k * c.burgers.tau));
        print_row(cols, experiment::evaluate_burgers(model, c));
      }
      return 0;
    }
    if (*trace) {
      const auto model = vae::VaeModel::load(checkpoint);
      Dataset d;
      d.dim = model.config().input_dim;
      for (double a : burgers::uniform_alphas(alphas)) {
        auto u = burgers::sample_u1(d.dim, a, t0, bc.viscosity);
        d.pairs.push_back({u.values, u.values, a, t0});
      }
      experiment::export_latent_trace(model, d, steps, trace_out);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
