#pragma once

// Experiment plumbing: error metrics, result tables, configuration files and
// the sweep runner behind the command-line tool.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvrom/burgers.hpp"
#include "mvrom/dataset.hpp"
#include "mvrom/linear.hpp"
#include "mvrom/mechanics.hpp"
#include "mvrom/tensor.hpp"
#include "mvrom/vae.hpp"

namespace mvrom::experiment {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ||pred - truth||_p / ||truth||_p. Throws on length mismatch or zero truth.
double l1_relative_error(std::span<const double> pred, std::span<const double> truth);
double l2_relative_error(std::span<const double> pred, std::span<const double> truth);

enum class Norm { L1, L2 };
// Row-wise relative error averaged over rows.
double mean_relative_error(const Tensor& pred, const Tensor& truth, Norm norm);

struct ErrorRow {
  std::string method;
  std::string variant;
  std::string sweep;
  std::vector<double> values;  // NaN where not computed
  std::string status = "ok";   // "ok" or "failed: <reason>"

  bool ok() const { return status == "ok"; }
};

struct ErrorTable {
  std::vector<std::string> columns;
  std::vector<ErrorRow> rows;

  const ErrorRow* find(const std::string& method, const std::string& variant, const std::string& sweep = "") const;
  std::size_t failed() const;
  // method,variant,sweep,<columns...>,status with %.10e entries.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

enum class ExperimentKind { BurgersVae, BurgersBaselines, MechRecon };

const char* experiment_kind_name(ExperimentKind k);
ExperimentKind parse_experiment_kind(const std::string& s);

struct ExperimentConfig {
  ExperimentKind kind = ExperimentKind::BurgersVae;
  std::filesystem::path output;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  // Burgers data and evaluation ensemble (initial conditions at t = 0).
  burgers::BurgersConfig burgers;
  std::size_t train_count = 512;
  std::size_t eval_alphas = 21;
  int horizons = 4;
  std::vector<double> plot_alphas{0.0, 0.5, 1.0};

  // Mechanics reconstruction.
  std::string mech_dataset = "torus";  // torus | klein
  std::size_t mech_samples = 5000;
  double train_fraction = 0.8;
  std::vector<std::size_t> checkpoints{1000, 2000, 3000};
  std::size_t eval_every = 100;
  manifold::KleinConfig klein;

  vae::ModelConfig model;
  vae::TrainConfig train;
  linear::PodEvolution pod_evolution = linear::PodEvolution::Galerkin;

  // Sweep lists; every combination is one cell.
  std::vector<double> betas{1.0};
  std::vector<double> gammas{0.5};
  std::vector<double> sigmas{0.0};
  std::vector<std::string> latents{"euclidean:2"};
  std::vector<std::string> architectures{"nonlinear"};
  std::vector<int> ranks{3};
  std::vector<int> truncations{2, 4, 6};
  std::vector<std::uint64_t> seeds{0};

  void validate() const;
};

// Defaults for a kind (mechanics uses the wider three-layer nets).
ExperimentConfig default_config(ExperimentKind kind);

// INI-style file (sections [experiment] [burgers] [mech] [model] [train]
// [baselines] [sweep]); `overrides` are "section.key=value" strings applied
// last. Lists are comma-separated. Unknown keys are errors.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& file, const std::vector<std::string>& overrides = {});
ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides = {});
std::string resolved_config(const ExperimentConfig& config);

// Output root: MVROM_OUT if set, else ./mvrom-out.
std::filesystem::path default_output_root();

struct LatentSpec {
  vae::LatentKind kind = vae::LatentKind::Euclidean;
  std::size_t dim = 2;
  std::filesystem::path file;
  std::string label;
};
// "euclidean:d", "torus", "klein", "pointcloud:<file>", or "manifold" (the
// dataset's own constraint manifold for mechanics runs).
LatentSpec parse_latent(const std::string& s, const std::string& mech_dataset = "torus");

struct RunResult {
  ErrorTable table;
  std::size_t failed = 0;
};

// Runs every cell, writes per-cell artifacts under output/cells/<id>/ and
// output/errors.csv, output/config.resolved.ini. Cell failures are recorded
// in the table, not thrown.
RunResult run_experiment(const ExperimentConfig& config);

// Per-horizon mean L1-relative errors of a Burgers model on the evaluation
// ensemble (k = 0..horizons).
std::vector<double> evaluate_burgers(const vae::VaeModel& model, const ExperimentConfig& config);
// Mean L2-relative reconstruction error on the mechanics test split at noise sigma.
double evaluate_mech(const vae::VaeModel& model, const ExperimentConfig& config, double sigma);

struct MechSplit {
  mechanics::MechData train, test;
};
MechSplit mech_data(const ExperimentConfig& config, double sigma);

// Columns alpha,t,step,z_0..z_{d-1}: each sample's mean code advanced by the
// latent flow for step = 0..steps-1. Throws when the code dimension exceeds 3.
void export_latent_trace(const vae::VaeModel& model, const Dataset& data, int steps, const std::filesystem::path& path);

}  // namespace mvrom::experiment
