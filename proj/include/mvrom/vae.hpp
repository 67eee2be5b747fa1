#pragma once

// Gaussian encoder/decoder with a linear latent flow.
//
//   w  = a(X) + sigma_e * eps           (eps ~ N(0, I))
//   z  = w, or Lambda(w) for manifold latents
//   z' = exp(-lambda0 tau)^k z
//   x  ~ N(b(z'), sigma_d^2 I)
//
// Training maximises
//   L = E log p(x | z')  -  beta KL(N(a, sigma_e^2) || N(0, sigma_0^2))
//       + gamma E log p(x | encode(x))

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvrom/adam.hpp"
#include "mvrom/autodiff.hpp"
#include "mvrom/dataset.hpp"
#include "mvrom/manifold.hpp"
#include "mvrom/rng.hpp"
#include "mvrom/tensor.hpp"

namespace mvrom::vae {

enum class LatentKind { Euclidean, Torus, Klein, PointCloud };

const char* latent_kind_name(LatentKind k);
LatentKind parse_latent_kind(const std::string& s);

struct ModelConfig {
  std::size_t input_dim = 100;
  std::size_t output_dim = 100;
  std::vector<std::size_t> encoder_hidden{400, 400};
  std::vector<std::size_t> decoder_hidden{400, 400};
  LatentKind latent = LatentKind::Euclidean;
  std::size_t latent_dim = 2;  // euclidean only; manifolds fix their own
  manifold::KleinConfig klein;
  std::filesystem::path pointcloud_file;
  double sigma_e = 4e-3;
  double sigma_d = 4e-3;
  double sigma_0 = 1.0;
  double lambda0 = 0.5;
  double tau = 0.25;
  bool learn_variance = false;
  // Hidden activation: ReLU at 0, LeakyReLU(s) otherwise.
  double leaky_slope = 0.0;
  std::uint64_t init_seed = 0;

  void validate() const;
};

// Fully connected network, (leaky) ReLU between layers; the last layer is affine.
struct Mlp {
  std::vector<std::size_t> sizes;
  std::size_t first_param = 0;  // index of the first weight in the model's parameter list

  std::size_t layers() const { return sizes.size() - 1; }
};

class VaeModel {
 public:
  explicit VaeModel(ModelConfig config);
  // Manifold supplied by the caller (shared, read-only).
  VaeModel(ModelConfig config, std::shared_ptr<const manifold::LatentManifold> latent);

  const ModelConfig& config() const { return config_; }
  std::size_t embed_dim() const;
  const manifold::LatentManifold* latent_manifold() const { return manifold_.get(); }
  std::shared_ptr<const manifold::LatentManifold> shared_manifold() const { return manifold_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  double lambda0() const { return params_[lambda_index_].value.item(); }
  double sigma_e() const;
  double sigma_d() const;

  // Tape views. Every parameter is registered as leaf `index`.
  struct Leaves {
    std::vector<ad::Var> params;
    ad::Var lambda0;
    ad::Var log_sigma_e;
    ad::Var log_sigma_d;
  };
  Leaves register_leaves(ad::Tape& tape) const;

  ad::Var encoder_mean(const Leaves& p, ad::Var x) const;
  ad::Var decoder_mean(const Leaves& p, ad::Var z) const;

  const Mlp& encoder() const { return encoder_; }
  const Mlp& decoder() const { return decoder_; }

  void save(const std::filesystem::path& path) const;
  static VaeModel load(const std::filesystem::path& path);

 private:
  void build(std::shared_ptr<const manifold::LatentManifold> latent);
  ad::Var run_mlp(const Mlp& net, const Leaves& p, ad::Var x) const;

  ModelConfig config_;
  Mlp encoder_, decoder_;
  std::vector<Parameter> params_;
  std::size_t lambda_index_ = 0;
  std::size_t log_sigma_e_index_ = 0;
  std::size_t log_sigma_d_index_ = 0;
  std::shared_ptr<const manifold::LatentManifold> manifold_;
};

// Built-in manifold for a latent kind, or nullptr for euclidean latents.
std::shared_ptr<const manifold::LatentManifold> make_latent_manifold(const ModelConfig& config);

struct EncodeResult {
  ad::Var mean;  // a(X)
  ad::Var pre;   // w = a + sigma_e eps
  ad::Var z;     // w or Lambda(w)
  std::size_t flagged = 0;
};

// `rng` == nullptr encodes the mean (no sampling).
EncodeResult encode(const VaeModel& model, const VaeModel::Leaves& p, ad::Var x, Rng* rng,
                    manifold::FlagPolicy policy = manifold::FlagPolicy::Skip);

// exp(-lambda0 tau) applied n_steps times.
ad::Var latent_step(const VaeModel& model, const VaeModel::Leaves& p, ad::Var z, int n_steps);

ad::Var decode(const VaeModel& model, const VaeModel::Leaves& p, ad::Var z);

// Closed-form KL(N(a, s_e^2 I) || N(0, s_0^2 I)) summed over latent coordinates.
double gaussian_kl(const std::vector<double>& a, double sigma_e, double sigma_0);

struct LossBreakdown {
  double total = 0.0;  // L^B = re + kl + rr
  double re = 0.0;
  double kl = 0.0;     // already carries the -beta factor
  double rr = 0.0;     // already carries the gamma factor
};

struct TrainConfig {
  double beta = 1.0;
  double gamma = 0.5;
  double lr = 1e-3;
  // Learning rate decays exponentially to lr * lr_final_factor over the run.
  double lr_final_factor = 1.0;
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  int latent_steps = 1;
  // Abort when an epoch loss exceeds divergence_factor * max(1, |first batch loss|).
  double divergence_factor = 1e6;
  manifold::FlagPolicy flag_policy = manifold::FlagPolicy::Skip;

  void validate() const;
};

struct Batch {
  Tensor inputs;   // (B, input_dim)
  Tensor targets;  // (B, output_dim)
};

struct LossEval {
  ad::Var objective;  // -L^B, the quantity minimised
  LossBreakdown parts;
  std::size_t flagged = 0;
};

LossEval loss(const VaeModel& model, ad::Tape& tape, const VaeModel::Leaves& p, const Batch& batch,
              const TrainConfig& config, Rng& rng);

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown mean;
  double lr = 0.0;
  std::size_t flagged = 0;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::vector<EpochRecord> history)
      : std::runtime_error(what), history_(std::move(history)) {}
  const std::vector<EpochRecord>& history() const { return history_; }

 private:
  std::vector<EpochRecord> history_;
};

struct TrainingData {
  Tensor inputs;
  Tensor targets;

  std::size_t size() const { return inputs.rows(); }
  static TrainingData from_dataset(const Dataset& d);
};

using EpochCallback = std::function<void(const EpochRecord&)>;

std::vector<EpochRecord> train(VaeModel& model, const TrainingData& data, const TrainConfig& config,
                               const EpochCallback& on_epoch = {});

// Predictions at t + k tau for k = 0..n_steps from mean encodings, one
// (B, output_dim) tensor per k.
std::vector<Tensor> predict_multistep(const VaeModel& model, const Tensor& inputs, int n_steps);

// Latent codes z (mean encoding, projected for manifold latents).
Tensor encode_mean(const VaeModel& model, const Tensor& inputs);

}  // namespace mvrom::vae
