#include "mvrom/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace mvrom::experiment {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;

namespace {

using linear::Vec;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_lengths(std::span<const double> pred, std::span<const double> truth) {
  if (pred.size() != truth.size()) {
    throw std::invalid_argument("relative error: length mismatch (" + std::to_string(pred.size()) + " vs " +
                                std::to_string(truth.size()) + ")");
  }
}

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10e", v);
  return buf;
}

// Shortest text that parses back to the same double.
std::string num(double v) {
  char buf[32];
  for (int p = 1; p <= 17; ++p) {
    std::snprintf(buf, sizeof buf, "%.*g", p, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

// ---- config parsing -------------------------------------------------------

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  boost::split(out, s, boost::is_any_of(","));
  for (auto& x : out) boost::trim(x);
  out.erase(std::remove(out.begin(), out.end(), std::string{}), out.end());
  return out;
}

template <class T>
T parse_scalar(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out;
    if constexpr (std::is_same_v<T, double>) {
      out = std::stod(v, &used);
    } else if constexpr (std::is_same_v<T, int>) {
      out = std::stoi(v, &used);
    } else {
      if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
      out = static_cast<T>(std::stoull(v, &used));
    }
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("bad value for " + key + ": '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad value for " + key + ": '" + v + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  for (const auto& item : split_list(v)) {
    if constexpr (std::is_same_v<T, std::string>) {
      out.push_back(item);
    } else {
      out.push_back(parse_scalar<T>(key, item));
    }
  }
  return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      s += v[i];
    } else if constexpr (std::is_same_v<T, double>) {
      s += num(v[i]);
    } else {
      s += std::to_string(v[i]);
    }
  }
  return s;
}

manifold::FlagPolicy parse_policy(const std::string& key, const std::string& v) {
  if (v == "fail") return manifold::FlagPolicy::Fail;
  if (v == "skip") return manifold::FlagPolicy::Skip;
  throw ConfigError("bad value for " + key + ": '" + v + "' (fail | skip)");
}

linear::PodEvolution parse_evolution(const std::string& key, const std::string& v) {
  if (v == "galerkin") return linear::PodEvolution::Galerkin;
  if (v == "linear-map") return linear::PodEvolution::LinearMap;
  throw ConfigError("bad value for " + key + ": '" + v + "' (galerkin | linear-map)");
}

// One setter per key; resolved_config writes the same keys back.
void apply(ExperimentConfig& c, const std::string& key, const std::string& v) {
  using S = std::size_t;
  static const std::map<std::string, std::function<void(ExperimentConfig&, const std::string&, const std::string&)>> setters = {
      {"experiment.kind", [](auto& c, auto& k, auto& v) {
         try {
           c.kind = parse_experiment_kind(v);
         } catch (const std::invalid_argument&) {
           throw ConfigError("bad value for " + k + ": '" + v + "'");
         }
       }},
      {"experiment.output", [](auto& c, auto&, auto& v) { c.output = v; }},
      {"experiment.seed", [](auto& c, auto& k, auto& v) { c.seed = parse_scalar<std::uint64_t>(k, v); }},
      {"experiment.workers", [](auto& c, auto& k, auto& v) { c.workers = parse_scalar<S>(k, v); }},
      {"burgers.viscosity", [](auto& c, auto& k, auto& v) { c.burgers.viscosity = parse_scalar<double>(k, v); }},
      {"burgers.tau", [](auto& c, auto& k, auto& v) { c.burgers.tau = parse_scalar<double>(k, v); }},
      {"burgers.nx", [](auto& c, auto& k, auto& v) { c.burgers.nx = parse_scalar<S>(k, v); }},
      {"burgers.train_count", [](auto& c, auto& k, auto& v) { c.train_count = parse_scalar<S>(k, v); }},
      {"burgers.eval_alphas", [](auto& c, auto& k, auto& v) { c.eval_alphas = parse_scalar<S>(k, v); }},
      {"burgers.horizons", [](auto& c, auto& k, auto& v) { c.horizons = parse_scalar<int>(k, v); }},
      {"burgers.plot_alphas", [](auto& c, auto& k, auto& v) { c.plot_alphas = parse_list<double>(k, v); }},
      {"mech.dataset", [](auto& c, auto&, auto& v) { c.mech_dataset = v; }},
      {"mech.samples", [](auto& c, auto& k, auto& v) { c.mech_samples = parse_scalar<S>(k, v); }},
      {"mech.train_fraction", [](auto& c, auto& k, auto& v) { c.train_fraction = parse_scalar<double>(k, v); }},
      {"mech.checkpoints", [](auto& c, auto& k, auto& v) { c.checkpoints = parse_list<S>(k, v); }},
      {"mech.eval_every", [](auto& c, auto& k, auto& v) { c.eval_every = parse_scalar<S>(k, v); }},
      {"mech.klein_a", [](auto& c, auto& k, auto& v) { c.klein.a = parse_scalar<double>(k, v); }},
      {"mech.klein_b", [](auto& c, auto& k, auto& v) { c.klein.b = parse_scalar<double>(k, v); }},
      {"mech.klein_resolution", [](auto& c, auto& k, auto& v) { c.klein.resolution = parse_scalar<int>(k, v); }},
      {"model.encoder_hidden", [](auto& c, auto& k, auto& v) { c.model.encoder_hidden = parse_list<S>(k, v); }},
      {"model.decoder_hidden", [](auto& c, auto& k, auto& v) { c.model.decoder_hidden = parse_list<S>(k, v); }},
      {"model.sigma_e", [](auto& c, auto& k, auto& v) { c.model.sigma_e = parse_scalar<double>(k, v); }},
      {"model.sigma_d", [](auto& c, auto& k, auto& v) { c.model.sigma_d = parse_scalar<double>(k, v); }},
      {"model.sigma_0", [](auto& c, auto& k, auto& v) { c.model.sigma_0 = parse_scalar<double>(k, v); }},
      {"model.lambda0", [](auto& c, auto& k, auto& v) { c.model.lambda0 = parse_scalar<double>(k, v); }},
      {"model.learn_variance", [](auto& c, auto& k, auto& v) { c.model.learn_variance = parse_bool(k, v); }},
      {"model.leaky_slope", [](auto& c, auto& k, auto& v) { c.model.leaky_slope = parse_scalar<double>(k, v); }},
      {"train.lr", [](auto& c, auto& k, auto& v) { c.train.lr = parse_scalar<double>(k, v); }},
      {"train.lr_final_factor", [](auto& c, auto& k, auto& v) { c.train.lr_final_factor = parse_scalar<double>(k, v); }},
      {"train.batch_size", [](auto& c, auto& k, auto& v) { c.train.batch_size = parse_scalar<S>(k, v); }},
      {"train.epochs", [](auto& c, auto& k, auto& v) { c.train.epochs = parse_scalar<S>(k, v); }},
      {"train.latent_steps", [](auto& c, auto& k, auto& v) { c.train.latent_steps = parse_scalar<int>(k, v); }},
      {"train.divergence_factor", [](auto& c, auto& k, auto& v) { c.train.divergence_factor = parse_scalar<double>(k, v); }},
      {"train.flag_policy", [](auto& c, auto& k, auto& v) { c.train.flag_policy = parse_policy(k, v); }},
      {"baselines.pod_evolution", [](auto& c, auto& k, auto& v) { c.pod_evolution = parse_evolution(k, v); }},
      {"sweep.beta", [](auto& c, auto& k, auto& v) { c.betas = parse_list<double>(k, v); }},
      {"sweep.gamma", [](auto& c, auto& k, auto& v) { c.gammas = parse_list<double>(k, v); }},
      {"sweep.sigma", [](auto& c, auto& k, auto& v) { c.sigmas = parse_list<double>(k, v); }},
      {"sweep.latent", [](auto& c, auto& k, auto& v) { c.latents = parse_list<std::string>(k, v); }},
      {"sweep.architecture", [](auto& c, auto& k, auto& v) { c.architectures = parse_list<std::string>(k, v); }},
      {"sweep.rank", [](auto& c, auto& k, auto& v) { c.ranks = parse_list<int>(k, v); }},
      {"sweep.truncation", [](auto& c, auto& k, auto& v) { c.truncations = parse_list<int>(k, v); }},
      {"sweep.seed", [](auto& c, auto& k, auto& v) { c.seeds = parse_list<std::uint64_t>(k, v); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(c, key, v);
}

std::vector<std::pair<std::string, std::string>> flatten(const pt::ptree& tree) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("key '" + section + "' outside a section");
    for (const auto& [key, value] : body) out.emplace_back(section + "." + key, value.data());
  }
  return out;
}

ExperimentConfig resolve(const pt::ptree& tree, const std::vector<std::string>& overrides) {
  auto entries = flatten(tree);
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || o.find('.') > eq) throw ConfigError("override must look like section.key=value: '" + o + "'");
    entries.emplace_back(boost::trim_copy(o.substr(0, eq)), boost::trim_copy(o.substr(eq + 1)));
  }
  // The kind picks the defaults, so it is read first (last occurrence wins).
  ExperimentKind kind = ExperimentKind::BurgersVae;
  for (const auto& [k, v] : entries) {
    if (k == "experiment.kind") {
      try {
        kind = parse_experiment_kind(v);
      } catch (const std::invalid_argument&) {
        throw ConfigError("bad value for experiment.kind: '" + v + "'");
      }
    }
  }
  ExperimentConfig c = default_config(kind);
  for (const auto& [k, v] : entries) apply(c, k, v);
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

// ---- cells ------------------------------------------------------------------

struct Cell {
  std::string id;
  ErrorRow row;
  std::function<std::vector<double>(const fs::path& dir)> run;
};

std::string sanitize(std::string s) {
  for (char& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '-' && ch != '=') ch = '_';
  }
  return s;
}

Tensor rows_tensor(const std::vector<std::vector<double>>& rows) {
  const std::size_t n = rows.empty() ? 0 : rows[0].size();
  Tensor t(Shape{rows.size(), n});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy(rows[i].begin(), rows[i].end(), t.data().begin() + i * n);
  return t;
}

struct BurgersEval {
  std::vector<double> alphas;
  std::vector<std::vector<burgers::FieldSample>> truth;  // [alpha][k]
  Tensor initial;                                        // (alphas, nx)
};

BurgersEval burgers_eval(const ExperimentConfig& c) {
  BurgersEval e;
  e.alphas = burgers::uniform_alphas(c.eval_alphas);
  e.truth = burgers::trajectories(c.burgers, e.alphas, static_cast<std::size_t>(c.horizons));
  std::vector<std::vector<double>> x0;
  for (const auto& traj : e.truth) x0.push_back(traj[0].values);
  e.initial = rows_tensor(x0);
  return e;
}

// Mean L1-relative error per horizon from a predictor u0 -> u_k.
std::vector<double> horizon_errors(const BurgersEval& e, int horizons, const std::function<std::vector<std::vector<double>>(std::size_t)>& predict) {
  std::vector<double> out(static_cast<std::size_t>(horizons) + 1, 0.0);
  for (std::size_t a = 0; a < e.alphas.size(); ++a) {
    const auto preds = predict(a);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += l1_relative_error(preds[k], e.truth[a][k].values);
  }
  for (double& v : out) v /= static_cast<double>(e.alphas.size());
  return out;
}

void write_predictions(const fs::path& path, const ExperimentConfig& c, const BurgersEval& e,
                       const std::function<std::vector<std::vector<double>>(std::size_t)>& predict) {
  std::ostringstream os;
  os << "alpha,step,t,x,u_pred,u_true\n";
  for (double alpha : c.plot_alphas) {
    // Nearest ensemble member.
    std::size_t a = 0;
    for (std::size_t i = 1; i < e.alphas.size(); ++i) {
      if (std::abs(e.alphas[i] - alpha) < std::abs(e.alphas[a] - alpha)) a = i;
    }
    const auto preds = predict(a);
    for (std::size_t k = 0; k < preds.size(); ++k) {
      for (std::size_t j = 0; j < preds[k].size(); ++j) {
        os << num(e.alphas[a]) << ',' << k << ',' << num(double(k) * c.burgers.tau) << ',' << num(double(j) / double(preds[k].size())) << ','
           << fmt(preds[k][j]) << ',' << fmt(e.truth[a][k].values[j]) << '\n';
      }
    }
  }
  write_text(path, os.str());
}

void write_history(const fs::path& path, const std::vector<vae::EpochRecord>& history) {
  std::ostringstream os;
  os << "epoch,total,re,kl,rr,lr,flagged\n";
  for (const auto& r : history) {
    os << r.epoch << ',' << fmt(r.mean.total) << ',' << fmt(r.mean.re) << ',' << fmt(r.mean.kl) << ',' << fmt(r.mean.rr) << ','
       << fmt(r.lr) << ',' << r.flagged << '\n';
  }
  write_text(path, os.str());
}

vae::ModelConfig model_for(const ExperimentConfig& c, const LatentSpec& latent, const std::string& arch, std::size_t in, std::size_t out,
                           std::uint64_t seed) {
  vae::ModelConfig m = c.model;
  m.input_dim = in;
  m.output_dim = out;
  m.tau = c.burgers.tau;
  m.latent = latent.kind;
  m.latent_dim = latent.dim;
  m.klein = c.klein;
  m.pointcloud_file = latent.file;
  m.init_seed = seed;
  if (arch == "linear") {
    m.encoder_hidden.clear();
    m.decoder_hidden.clear();
  } else if (arch != "nonlinear") {
    throw ConfigError("unknown architecture '" + arch + "' (nonlinear | linear)");
  }
  return m;
}

std::vector<std::vector<double>> vae_predictions(const std::vector<Tensor>& per_k, std::size_t row) {
  std::vector<std::vector<double>> out;
  for (const auto& t : per_k) out.emplace_back(t.data().begin() + row * t.cols(), t.data().begin() + (row + 1) * t.cols());
  return out;
}

std::vector<Cell> burgers_vae_cells(const ExperimentConfig& c, const Dataset& train_set, const BurgersEval& eval,
                                    std::map<std::string, std::shared_ptr<const manifold::LatentManifold>>& manifolds) {
  std::vector<Cell> cells;
  const auto data = std::make_shared<vae::TrainingData>(vae::TrainingData::from_dataset(train_set));
  for (const auto& arch : c.architectures) {
    for (const auto& lat : c.latents) {
      const LatentSpec latent = parse_latent(lat);
      for (double gamma : c.gammas) {
        for (double beta : c.betas) {
          for (auto seed : c.seeds) {
            Cell cell;
            cell.row.method = "vae-" + arch;
            cell.row.variant = latent.label;
            cell.row.sweep = "gamma=" + num(gamma) + ";beta=" + num(beta) + ";seed=" + std::to_string(seed);
            cell.id = sanitize(cell.row.method + "_" + cell.row.variant + "_" + cell.row.sweep);
            const auto mc = model_for(c, latent, arch, c.burgers.nx, c.burgers.nx, c.seed + seed);
            auto shared = manifolds.at(latent.label);
            vae::TrainConfig tc = c.train;
            tc.gamma = gamma;
            tc.beta = beta;
            tc.seed = c.seed + seed;
            cell.run = [&c, &eval, data, mc, shared, tc](const fs::path& dir) {
              vae::VaeModel model(mc, shared);
              const auto history = vae::train(model, *data, tc);
              write_history(dir / "history.csv", history);
              model.save(dir / "model.bin");
              const auto preds = vae::predict_multistep(model, eval.initial, c.horizons);
              auto predict = [&](std::size_t a) { return vae_predictions(preds, a); };
              write_predictions(dir / "predictions.csv", c, eval, predict);
              return horizon_errors(eval, c.horizons, predict);
            };
            cells.push_back(std::move(cell));
          }
        }
      }
    }
  }
  return cells;
}

std::vector<Cell> baseline_cells(const ExperimentConfig& c, const Dataset& train_set, const BurgersEval& eval) {
  std::vector<Cell> cells;
  const auto snaps = std::make_shared<linear::SnapshotPairs>(linear::SnapshotPairs::from_dataset(train_set));
  auto linear_cell = [&](const std::string& method, int rank, std::function<std::function<Vec(const Vec&, int)>()> fit) {
    Cell cell;
    cell.row.method = method;
    cell.row.variant = "r=" + std::to_string(rank);
    cell.id = sanitize(method + "_" + cell.row.variant);
    cell.run = [&c, &eval, fit](const fs::path& dir) {
      const auto step = fit();
      auto predict = [&](std::size_t a) {
        const Vec u0 = Eigen::Map<const Vec>(eval.truth[a][0].values.data(), Eigen::Index(eval.truth[a][0].size()));
        std::vector<std::vector<double>> out;
        for (int k = 0; k <= c.horizons; ++k) {
          const Vec u = step(u0, k);
          out.emplace_back(u.data(), u.data() + u.size());
        }
        return out;
      };
      write_predictions(dir / "predictions.csv", c, eval, predict);
      return horizon_errors(eval, c.horizons, predict);
    };
    cells.push_back(std::move(cell));
  };
  for (int r : c.ranks) {
    linear_cell("dmd", r, [snaps, r] {
      auto m = std::make_shared<linear::DmdModel>(linear::fit_dmd(*snaps, r));
      return std::function<Vec(const Vec&, int)>([m](const Vec& u, int k) { return linear::dmd_predict(*m, u, k); });
    });
  }
  for (int r : c.ranks) {
    linear::PodOptions opts;
    opts.viscosity = c.burgers.viscosity;
    opts.tau = c.burgers.tau;
    opts.evolution = c.pod_evolution;
    linear_cell("pod", r, [snaps, r, opts] {
      auto m = std::make_shared<linear::PodModel>(linear::fit_pod(*snaps, r, opts));
      return std::function<Vec(const Vec&, int)>([m](const Vec& u, int k) { return linear::pod_predict(*m, u, k); });
    });
  }
  for (int nf : c.truncations) {
    Cell cell;
    cell.row.method = "cole-hopf";
    cell.row.variant = "nf=" + std::to_string(nf);
    cell.id = sanitize(cell.row.method + "_" + cell.row.variant);
    cell.run = [&c, &eval, nf](const fs::path& dir) {
      auto predict = [&](std::size_t a) {
        std::vector<std::vector<double>> out;
        for (int k = 0; k <= c.horizons; ++k) {
          burgers::EvolveOptions opts{.truncation = nf, .sign = burgers::PhiSign::Magnitude};
          out.push_back(burgers::evolve_exact(eval.truth[a][0], c.burgers.viscosity, k * c.burgers.tau, opts).values);
        }
        return out;
      };
      write_predictions(dir / "predictions.csv", c, eval, predict);
      return horizon_errors(eval, c.horizons, predict);
    };
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::vector<Cell> mech_cells(const ExperimentConfig& c, std::map<std::string, std::shared_ptr<const manifold::LatentManifold>>& manifolds) {
  std::vector<Cell> cells;
  for (double sigma : c.sigmas) {
    const auto split = std::make_shared<MechSplit>(mech_data(c, sigma));
    for (const auto& lat : c.latents) {
      const LatentSpec latent = parse_latent(lat, c.mech_dataset);
      for (const auto& arch : c.architectures) {
        for (auto seed : c.seeds) {
          Cell cell;
          cell.row.method = "vae-" + arch;
          cell.row.variant = latent.label;
          cell.row.sweep = "sigma=" + num(sigma) + ";seed=" + std::to_string(seed);
          cell.id = sanitize(c.mech_dataset + "_" + cell.row.method + "_" + cell.row.variant + "_" + cell.row.sweep);
          const auto mc = model_for(c, latent, arch, 4, 4, c.seed + seed);
          auto shared = manifolds.at(latent.label);
          vae::TrainConfig tc = c.train;
          tc.seed = c.seed + seed;
          tc.gamma = c.gammas.front();
          tc.beta = c.betas.front();
          cell.run = [&c, split, mc, shared, tc](const fs::path& dir) {
            vae::VaeModel model(mc, shared);
            const vae::TrainingData data{split->train.noisy, split->train.clean};
            auto error = [&] {
              return mean_relative_error(vae::predict_multistep(model, split->test.noisy, 0)[0], split->test.clean, Norm::L2);
            };
            std::vector<double> at_checkpoint(c.checkpoints.size(), kNaN);
            double best = std::numeric_limits<double>::infinity();
            std::ostringstream curve;
            curve << "epoch,error\n";
            const auto history = vae::train(model, data, tc, [&](const vae::EpochRecord& r) {
              const auto cp = std::find(c.checkpoints.begin(), c.checkpoints.end(), r.epoch);
              if (r.epoch % c.eval_every != 0 && cp == c.checkpoints.end() && r.epoch != tc.epochs) return;
              const double e = error();
              curve << r.epoch << ',' << fmt(e) << '\n';
              if (cp != c.checkpoints.end()) {
                at_checkpoint[std::size_t(cp - c.checkpoints.begin())] = e;
                model.save(dir / ("model_e" + std::to_string(r.epoch) + ".bin"));
              }
              // Strictly lower only, so ties keep the earlier model.
              if (e < best) {
                best = e;
                model.save(dir / "model_best.bin");
              }
            });
            write_history(dir / "history.csv", history);
            write_text(dir / "test_error.csv", curve.str());
            model.save(dir / "model.bin");
            at_checkpoint.push_back(best);
            return at_checkpoint;
          };
          cells.push_back(std::move(cell));
        }
      }
    }
  }
  return cells;
}

}  // namespace

// ---- metrics ----------------------------------------------------------------

double l1_relative_error(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred, truth);
  double num_ = 0, den = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    num_ += std::abs(pred[i] - truth[i]);
    den += std::abs(truth[i]);
  }
  if (!(den > 0)) throw std::domain_error("relative error: truth has zero norm");
  return num_ / den;
}

double l2_relative_error(std::span<const double> pred, std::span<const double> truth) {
  check_lengths(pred, truth);
  double num_ = 0, den = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    num_ += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    den += truth[i] * truth[i];
  }
  if (!(den > 0)) throw std::domain_error("relative error: truth has zero norm");
  return std::sqrt(num_ / den);
}

double mean_relative_error(const Tensor& pred, const Tensor& truth, Norm norm) {
  if (pred.shape() != truth.shape() || pred.rank() != 2) throw std::invalid_argument("mean_relative_error: shape mismatch");
  if (pred.rows() == 0) throw std::invalid_argument("mean_relative_error: empty set");
  const std::size_t n = pred.cols();
  double total = 0;
  for (std::size_t i = 0; i < pred.rows(); ++i) {
    const auto p = pred.data().subspan(i * n, n);
    const auto t = truth.data().subspan(i * n, n);
    total += norm == Norm::L1 ? l1_relative_error(p, t) : l2_relative_error(p, t);
  }
  return total / static_cast<double>(pred.rows());
}

// ---- tables -----------------------------------------------------------------

const ErrorRow* ErrorTable::find(const std::string& method, const std::string& variant, const std::string& sweep) const {
  for (const auto& r : rows) {
    if (r.method == method && r.variant == variant && r.sweep == sweep) return &r;
  }
  return nullptr;
}

std::size_t ErrorTable::failed() const {
  return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const ErrorRow& r) { return !r.ok(); }));
}

std::string ErrorTable::to_csv() const {
  std::ostringstream os;
  os << "method,variant,sweep";
  for (const auto& c : columns) os << ',' << c;
  os << ",status\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.variant << ',' << r.sweep;
    for (std::size_t i = 0; i < columns.size(); ++i) os << ',' << (i < r.values.size() ? fmt(r.values[i]) : "");
    std::string status = r.status;
    std::replace(status.begin(), status.end(), ',', ';');
    std::replace(status.begin(), status.end(), '\n', ' ');
    os << ',' << status << '\n';
  }
  return os.str();
}

void ErrorTable::write_csv(const fs::path& path) const { write_text(path, to_csv()); }

// ---- config -----------------------------------------------------------------

const char* experiment_kind_name(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::BurgersVae: return "burgers-vae";
    case ExperimentKind::BurgersBaselines: return "burgers-baselines";
    case ExperimentKind::MechRecon: return "mech-recon";
  }
  return "?";
}

ExperimentKind parse_experiment_kind(const std::string& s) {
  for (auto k : {ExperimentKind::BurgersVae, ExperimentKind::BurgersBaselines, ExperimentKind::MechRecon}) {
    if (s == experiment_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown experiment kind '" + s + "'");
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.kind = kind;
  c.train.lr_final_factor = 0.05;
  c.train.epochs = 1600;
  if (kind == ExperimentKind::MechRecon) {
    c.model.encoder_hidden = {100, 500, 100};
    c.model.decoder_hidden = {100, 500, 100};
    c.model.leaky_slope = 1e-6;
    c.train.epochs = 3000;
    c.train.latent_steps = 0;
    c.gammas = {0.0};
    c.latents = {"manifold", "euclidean:2", "euclidean:4", "euclidean:10"};
  }
  return c;
}

void ExperimentConfig::validate() const {
  burgers.validate();
  model.validate();
  train.validate();
  klein.validate();
  if (workers == 0) throw std::invalid_argument("experiment.workers must be >= 1");
  if (horizons < 0) throw std::invalid_argument("burgers.horizons must be >= 0");
  if (eval_alphas < 1) throw std::invalid_argument("burgers.eval_alphas must be >= 1");
  if (train_count < 1) throw std::invalid_argument("burgers.train_count must be >= 1");
  if (mech_dataset != "torus" && mech_dataset != "klein") throw std::invalid_argument("mech.dataset must be torus or klein");
  if (eval_every == 0) throw std::invalid_argument("mech.eval_every must be >= 1");
  auto nonempty = [](bool empty, const char* what) {
    if (empty) throw std::invalid_argument(std::string("sweep list ") + what + " is empty");
  };
  nonempty(betas.empty(), "beta");
  nonempty(gammas.empty(), "gamma");
  nonempty(sigmas.empty(), "sigma");
  nonempty(latents.empty(), "latent");
  nonempty(architectures.empty(), "architecture");
  nonempty(seeds.empty(), "seed");
  if (kind == ExperimentKind::BurgersBaselines) nonempty(ranks.empty() && truncations.empty(), "rank/truncation");
  for (double s : sigmas)
    if (!(s >= 0)) throw std::invalid_argument("sweep.sigma entries must be >= 0");
  for (const auto& l : latents) {
    const auto spec = parse_latent(l, mech_dataset);
    if (spec.kind == vae::LatentKind::PointCloud && !fs::exists(spec.file)) {
      throw std::invalid_argument("point cloud file not found: " + spec.file.string());
    }
  }
  if (kind == ExperimentKind::MechRecon) {
    for (auto cp : checkpoints) {
      if (cp == 0 || cp > train.epochs) throw std::invalid_argument("mech.checkpoints must lie in [1, train.epochs]");
    }
  }
}

ExperimentConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return resolve(tree, overrides);
}

ExperimentConfig load_config(const std::optional<fs::path>& file, const std::vector<std::string>& overrides) {
  if (!file) return resolve(pt::ptree{}, overrides);
  std::ifstream is(*file);
  if (!is) throw ConfigError("config file not found: " + file->string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), overrides);
}

std::string resolved_config(const ExperimentConfig& c) {
  pt::ptree t;
  const auto& m = c.model;
  const auto& tr = c.train;
  t.put("experiment.kind", experiment_kind_name(c.kind));
  t.put("experiment.output", c.output.string());
  t.put("experiment.seed", std::to_string(c.seed));
  t.put("experiment.workers", std::to_string(c.workers));
  t.put("burgers.viscosity", num(c.burgers.viscosity));
  t.put("burgers.tau", num(c.burgers.tau));
  t.put("burgers.nx", std::to_string(c.burgers.nx));
  t.put("burgers.train_count", std::to_string(c.train_count));
  t.put("burgers.eval_alphas", std::to_string(c.eval_alphas));
  t.put("burgers.horizons", std::to_string(c.horizons));
  t.put("burgers.plot_alphas", join(c.plot_alphas));
  t.put("mech.dataset", c.mech_dataset);
  t.put("mech.samples", std::to_string(c.mech_samples));
  t.put("mech.train_fraction", num(c.train_fraction));
  t.put("mech.checkpoints", join(c.checkpoints));
  t.put("mech.eval_every", std::to_string(c.eval_every));
  t.put("mech.klein_a", num(c.klein.a));
  t.put("mech.klein_b", num(c.klein.b));
  t.put("mech.klein_resolution", std::to_string(c.klein.resolution));
  t.put("model.encoder_hidden", join(m.encoder_hidden));
  t.put("model.decoder_hidden", join(m.decoder_hidden));
  t.put("model.sigma_e", num(m.sigma_e));
  t.put("model.sigma_d", num(m.sigma_d));
  t.put("model.sigma_0", num(m.sigma_0));
  t.put("model.lambda0", num(m.lambda0));
  t.put("model.learn_variance", m.learn_variance ? "true" : "false");
  t.put("model.leaky_slope", num(m.leaky_slope));
  t.put("train.lr", num(tr.lr));
  t.put("train.lr_final_factor", num(tr.lr_final_factor));
  t.put("train.batch_size", std::to_string(tr.batch_size));
  t.put("train.epochs", std::to_string(tr.epochs));
  t.put("train.latent_steps", std::to_string(tr.latent_steps));
  t.put("train.divergence_factor", num(tr.divergence_factor));
  t.put("train.flag_policy", tr.flag_policy == manifold::FlagPolicy::Fail ? "fail" : "skip");
  t.put("baselines.pod_evolution", c.pod_evolution == linear::PodEvolution::Galerkin ? "galerkin" : "linear-map");
  t.put("sweep.beta", join(c.betas));
  t.put("sweep.gamma", join(c.gammas));
  t.put("sweep.sigma", join(c.sigmas));
  t.put("sweep.latent", join(c.latents));
  t.put("sweep.architecture", join(c.architectures));
  t.put("sweep.rank", join(c.ranks));
  t.put("sweep.truncation", join(c.truncations));
  t.put("sweep.seed", join(c.seeds));
  std::ostringstream os;
  pt::write_ini(os, t);
  return os.str();
}

fs::path default_output_root() {
  if (const char* env = std::getenv("MVROM_OUT"); env && *env) return env;
  return "mvrom-out";
}

LatentSpec parse_latent(const std::string& s, const std::string& mech_dataset) {
  LatentSpec spec;
  if (s == "manifold") return parse_latent(mech_dataset == "klein" ? "klein" : "torus", mech_dataset);
  if (s == "torus") {
    spec.kind = vae::LatentKind::Torus;
    spec.label = "torus";
  } else if (s == "klein") {
    spec.kind = vae::LatentKind::Klein;
    spec.label = "klein";
  } else if (s.rfind("euclidean:", 0) == 0) {
    spec.kind = vae::LatentKind::Euclidean;
    try {
      std::size_t used = 0;
      const auto d = std::stoul(s.substr(10), &used);
      if (used != s.size() - 10 || d == 0) throw std::invalid_argument("");
      spec.dim = d;
    } catch (const std::exception&) {
      throw std::invalid_argument("bad latent '" + s + "'");
    }
    spec.label = "R" + std::to_string(spec.dim);
  } else if (s.rfind("pointcloud:", 0) == 0 && s.size() > 11) {
    spec.kind = vae::LatentKind::PointCloud;
    spec.file = s.substr(11);
    spec.label = "pointcloud-" + spec.file.stem().string();
  } else {
    throw std::invalid_argument("bad latent '" + s + "' (euclidean:<d> | torus | klein | pointcloud:<file> | manifold)");
  }
  return spec;
}

// ---- running ----------------------------------------------------------------

MechSplit mech_data(const ExperimentConfig& c, double sigma) {
  auto data = c.mech_dataset == "klein" ? mechanics::generate_klein(c.klein, c.mech_samples, c.seed)
                                        : mechanics::generate_arm_torus(mechanics::ArmConfig{}, c.mech_samples, c.seed);
  data = mechanics::add_noise(data, sigma, Rng::derive(c.seed, 1));
  auto [train, test] = mechanics::split(data, c.train_fraction);
  return {std::move(train), std::move(test)};
}

std::vector<double> evaluate_burgers(const vae::VaeModel& model, const ExperimentConfig& config) {
  const auto eval = burgers_eval(config);
  const auto preds = vae::predict_multistep(model, eval.initial, config.horizons);
  return horizon_errors(eval, config.horizons, [&](std::size_t a) { return vae_predictions(preds, a); });
}

double evaluate_mech(const vae::VaeModel& model, const ExperimentConfig& config, double sigma) {
  const auto split = mech_data(config, sigma);
  return mean_relative_error(vae::predict_multistep(model, split.test.noisy, 0)[0], split.test.clean, Norm::L2);
}

RunResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const fs::path out = config.output.empty() ? default_output_root() / experiment_kind_name(config.kind) : config.output;
  fs::create_directories(out / "cells");
  write_text(out / "config.resolved.ini", resolved_config(config));

  // Read-only manifolds shared by all cells using them.
  std::map<std::string, std::shared_ptr<const manifold::LatentManifold>> manifolds;
  for (const auto& l : config.latents) {
    const auto spec = parse_latent(l, config.mech_dataset);
    vae::ModelConfig mc;
    mc.latent = spec.kind;
    mc.klein = config.klein;
    mc.pointcloud_file = spec.file;
    if (!manifolds.count(spec.label)) manifolds[spec.label] = vae::make_latent_manifold(mc);
  }

  ErrorTable table;
  std::vector<Cell> cells;
  std::optional<BurgersEval> eval;
  Dataset train_set;
  std::string meta;
  if (config.kind == ExperimentKind::MechRecon) {
    for (auto cp : config.checkpoints) table.columns.push_back("epoch " + std::to_string(cp));
    table.columns.push_back("final");
    cells = mech_cells(config, manifolds);
    meta = "metric = L2-relative reconstruction error on the test split\ndataset = " + config.mech_dataset +
           "\nsamples = " + std::to_string(config.mech_samples) + "\ntrain_fraction = " + num(config.train_fraction) +
           "\nfinal = lowest error over evaluations every " + std::to_string(config.eval_every) + " epochs\n";
  } else {
    eval = burgers_eval(config);
    for (int k = 0; k <= config.horizons; ++k) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.2fs", k * config.burgers.tau);
      table.columns.push_back(buf);
    }
    burgers::DatasetOptions opts;
    opts.count = config.train_count;
    opts.seed = config.seed;
    train_set = burgers::generate_dataset(config.burgers, opts);
    cells = config.kind == ExperimentKind::BurgersVae ? burgers_vae_cells(config, train_set, *eval, manifolds)
                                                      : baseline_cells(config, train_set, *eval);
    meta = "metric = mean L1-relative error over the evaluation ensemble\nensemble = u1 initial conditions at t = 0, " +
           std::to_string(config.eval_alphas) + " uniformly spaced alpha in [0, 1]\ntraining pairs = " +
           std::to_string(config.train_count) + " (alpha in [0, 1], t in [0, 0.75])\n";
  }
  write_text(out / "metadata.txt", meta);

  std::vector<ErrorRow> rows(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < cells.size();) {
      auto& cell = cells[i];
      ErrorRow row = cell.row;
      const fs::path dir = out / "cells" / cell.id;
      try {
        fs::create_directories(dir);
        row.values = cell.run(dir);
        ErrorTable single{table.columns, {row}};
        single.write_csv(dir / "errors.csv");
      } catch (const std::exception& e) {
        row.values.assign(table.columns.size(), kNaN);
        row.status = std::string("failed: ") + e.what();
        write_text(dir / "error.txt", row.status + "\n");
      }
      rows[i] = std::move(row);
    }
  };
  const std::size_t width = std::min(config.workers, std::max<std::size_t>(1, cells.size()));
  if (width == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < width; ++w) pool.emplace_back(worker);
  }
  table.rows = std::move(rows);
  table.write_csv(out / "errors.csv");
  return {table, table.failed()};
}

void export_latent_trace(const vae::VaeModel& model, const Dataset& data, int steps, const fs::path& path) {
  const std::size_t d = model.embed_dim();
  if (d > 3) throw std::invalid_argument("export_latent_trace: latent dimension " + std::to_string(d) + " exceeds 3");
  if (steps < 1) throw std::invalid_argument("export_latent_trace: steps must be >= 1");
  std::ostringstream os;
  os << "alpha,t,step";
  for (std::size_t j = 0; j < d; ++j) os << ",z_" << j;
  os << '\n';
  if (data.size() > 0) {
    data.validate();
    std::vector<std::vector<double>> inputs;
    for (const auto& p : data.pairs) inputs.push_back(p.input);
    const Tensor z = vae::encode_mean(model, rows_tensor(inputs));
    const double decay = std::exp(-model.lambda0() * model.config().tau);
    for (std::size_t i = 0; i < data.size(); ++i) {
      double f = 1.0;
      for (int k = 0; k < steps; ++k) {
        os << num(data.pairs[i].param) << ',' << num(data.pairs[i].time + k * model.config().tau) << ',' << k;
        for (std::size_t j = 0; j < d; ++j) os << ',' << fmt(f * z.at(i, j));
        os << '\n';
        f *= decay;
      }
    }
  }
  write_text(path, os.str());
}

}  // namespace mvrom::experiment
