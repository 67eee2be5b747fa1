#include "mvrom/vae.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

namespace mvrom::vae {

namespace {

constexpr std::array<char, 8> kMagic = {'M', 'V', 'V', 'A', 'E', '\0', '\0', '\1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<std::uint64_t>(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return s;
}

void put_sizes(std::ostream& os, const std::vector<std::size_t>& v) {
  put<std::uint64_t>(os, v.size());
  for (auto x : v) put<std::uint64_t>(os, x);
}

std::vector<std::size_t> get_sizes(std::istream& is) {
  const auto n = get<std::uint64_t>(is);
  if (n > 64) throw std::runtime_error("checkpoint: implausible layer count");
  std::vector<std::size_t> v(n);
  for (auto& x : v) x = get<std::uint64_t>(is);
  return v;
}

Tensor rows_of(const Tensor& src, const std::vector<std::size_t>& order, std::size_t begin, std::size_t end) {
  const std::size_t cols = src.cols();
  Tensor out(Shape{end - begin, cols});
  for (std::size_t r = begin; r < end; ++r) {
    const std::size_t i = order[r];
    std::copy_n(src.data().begin() + static_cast<std::ptrdiff_t>(i * cols), cols,
                out.data().begin() + static_cast<std::ptrdiff_t>((r - begin) * cols));
  }
  return out;
}

// Mean Gaussian log-density of rows of `x` under N(mean, sigma_d^2 I).
ad::Var gaussian_loglik(ad::Tape& tape, ad::Var x, ad::Var mean, ad::Var log_sigma_d) {
  const double rows = static_cast<double>(x.value().rows());
  const double dim = static_cast<double>(x.value().cols());
  auto sq = ad::sum(ad::square(ad::sub(x, mean)));
  auto inv_var = ad::exp(ad::scale(log_sigma_d, -2.0));
  auto quad = ad::scale(ad::scale_by(sq, inv_var), -0.5 / rows);
  auto norm = ad::add(ad::scale(log_sigma_d, -dim), tape.constant(Tensor::scalar(-0.5 * dim * std::log(2.0 * std::numbers::pi))));
  return ad::add(quad, norm);
}

void check_component(double v, const char* name) {
  if (!std::isfinite(v)) throw std::domain_error(std::string("non-finite loss component: ") + name);
}

}  // namespace

const char* latent_kind_name(LatentKind k) {
  switch (k) {
    case LatentKind::Euclidean: return "euclidean";
    case LatentKind::Torus: return "torus";
    case LatentKind::Klein: return "klein";
    case LatentKind::PointCloud: return "pointcloud";
  }
  return "?";
}

LatentKind parse_latent_kind(const std::string& s) {
  for (auto k : {LatentKind::Euclidean, LatentKind::Torus, LatentKind::Klein, LatentKind::PointCloud}) {
    if (s == latent_kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown latent kind '" + s + "'");
}

void ModelConfig::validate() const {
  if (input_dim == 0 || output_dim == 0) throw std::invalid_argument("model: dimensions must be positive");
  if (latent == LatentKind::Euclidean && latent_dim == 0) throw std::invalid_argument("model: latent_dim must be positive");
  if (!(sigma_e > 0 && sigma_d > 0 && sigma_0 > 0)) throw std::invalid_argument("model: sigma_e, sigma_d, sigma_0 must be positive");
  if (!std::isfinite(lambda0)) throw std::invalid_argument("model: lambda0 must be finite");
  if (!(tau > 0)) throw std::invalid_argument("model: tau must be positive");
  if (!(leaky_slope >= 0 && leaky_slope < 1)) throw std::invalid_argument("model: leaky_slope must be in [0, 1)");
  for (auto h : encoder_hidden)
    if (h == 0) throw std::invalid_argument("model: zero-width encoder layer");
  for (auto h : decoder_hidden)
    if (h == 0) throw std::invalid_argument("model: zero-width decoder layer");
  if (latent == LatentKind::Klein) klein.validate();
  if (latent == LatentKind::PointCloud && pointcloud_file.empty()) throw std::invalid_argument("model: pointcloud latent needs a file");
}

void TrainConfig::validate() const {
  if (!(beta >= 0 && gamma >= 0)) throw std::invalid_argument("train: beta and gamma must be >= 0");
  if (!(lr > 0) || !(lr_final_factor > 0)) throw std::invalid_argument("train: learning rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("train: batch_size must be positive");
  if (latent_steps < 0) throw std::invalid_argument("train: latent_steps must be >= 0");
}

std::shared_ptr<const manifold::LatentManifold> make_latent_manifold(const ModelConfig& config) {
  switch (config.latent) {
    case LatentKind::Euclidean: return nullptr;
    case LatentKind::Torus: return std::make_shared<manifold::AnalyticTorus>();
    case LatentKind::Klein: return std::make_shared<manifold::PointCloudManifold>(manifold::build_klein_pointcloud(config.klein));
    case LatentKind::PointCloud:
      return std::make_shared<manifold::PointCloudManifold>(manifold::PointCloudManifold::load(config.pointcloud_file));
  }
  return nullptr;
}

VaeModel::VaeModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  build(make_latent_manifold(config_));
}

VaeModel::VaeModel(ModelConfig config, std::shared_ptr<const manifold::LatentManifold> latent) : config_(std::move(config)) {
  config_.validate();
  if ((config_.latent == LatentKind::Euclidean) != (latent == nullptr)) {
    throw std::invalid_argument("model: manifold must be given exactly for manifold latents");
  }
  build(std::move(latent));
}

std::size_t VaeModel::embed_dim() const {
  return manifold_ ? static_cast<std::size_t>(manifold_->embed_dim()) : config_.latent_dim;
}

void VaeModel::build(std::shared_ptr<const manifold::LatentManifold> latent) {
  manifold_ = std::move(latent);
  const std::size_t n = embed_dim();
  Rng rng(config_.init_seed);

  auto add_net = [&](Mlp& net, std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out, const char* tag) {
    net.sizes = {in};
    net.sizes.insert(net.sizes.end(), hidden.begin(), hidden.end());
    net.sizes.push_back(out);
    net.first_param = params_.size();
    for (std::size_t l = 0; l < net.layers(); ++l) {
      const std::size_t fan_in = net.sizes[l], fan_out = net.sizes[l + 1];
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      Tensor w(Shape{fan_in, fan_out});
      for (double& v : w.storage()) v = rng.uniform(-bound, bound);
      Tensor b(Shape{fan_out});
      for (double& v : b.storage()) v = rng.uniform(-bound, bound);
      params_.push_back({std::string(tag) + ".W" + std::to_string(l), std::move(w)});
      params_.push_back({std::string(tag) + ".b" + std::to_string(l), std::move(b)});
    }
  };
  add_net(encoder_, config_.input_dim, config_.encoder_hidden, n, "encoder");
  add_net(decoder_, n, config_.decoder_hidden, config_.output_dim, "decoder");
  lambda_index_ = params_.size();
  params_.push_back({"lambda0", Tensor::scalar(config_.lambda0)});
  if (config_.learn_variance) {
    log_sigma_e_index_ = params_.size();
    params_.push_back({"log_sigma_e", Tensor::scalar(std::log(config_.sigma_e))});
    log_sigma_d_index_ = params_.size();
    params_.push_back({"log_sigma_d", Tensor::scalar(std::log(config_.sigma_d))});
  }
}

double VaeModel::sigma_e() const {
  return config_.learn_variance ? std::exp(params_[log_sigma_e_index_].value.item()) : config_.sigma_e;
}

double VaeModel::sigma_d() const {
  return config_.learn_variance ? std::exp(params_[log_sigma_d_index_].value.item()) : config_.sigma_d;
}

VaeModel::Leaves VaeModel::register_leaves(ad::Tape& tape) const {
  Leaves p;
  p.params.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) p.params.push_back(tape.leaf(i, params_[i].value));
  p.lambda0 = p.params[lambda_index_];
  if (config_.learn_variance) {
    p.log_sigma_e = p.params[log_sigma_e_index_];
    p.log_sigma_d = p.params[log_sigma_d_index_];
  } else {
    p.log_sigma_e = tape.constant(Tensor::scalar(std::log(config_.sigma_e)));
    p.log_sigma_d = tape.constant(Tensor::scalar(std::log(config_.sigma_d)));
  }
  return p;
}

ad::Var VaeModel::run_mlp(const Mlp& net, const Leaves& p, ad::Var x) const {
  for (std::size_t l = 0; l < net.layers(); ++l) {
    const std::size_t k = net.first_param + 2 * l;
    x = ad::add_bias(ad::matmul(x, p.params[k]), p.params[k + 1]);
    if (l + 1 < net.layers()) x = config_.leaky_slope > 0 ? ad::leaky_relu(x, config_.leaky_slope) : ad::relu(x);
  }
  return x;
}

ad::Var VaeModel::encoder_mean(const Leaves& p, ad::Var x) const { return run_mlp(encoder_, p, x); }
ad::Var VaeModel::decoder_mean(const Leaves& p, ad::Var z) const { return run_mlp(decoder_, p, z); }

EncodeResult encode(const VaeModel& model, const VaeModel::Leaves& p, ad::Var x, Rng* rng, manifold::FlagPolicy policy) {
  if (x.value().rank() != 2 || x.value().cols() != model.config().input_dim) {
    throw ad::ShapeError("encode", {x.value().shape(), Shape{0, model.config().input_dim}});
  }
  EncodeResult r;
  r.mean = model.encoder_mean(p, x);
  r.pre = r.mean;
  if (rng) {
    Tensor eps(r.mean.value().shape());
    for (double& v : eps.storage()) v = rng->normal();
    r.pre = ad::add(r.mean, ad::scale_by(x.tape->constant(std::move(eps)), ad::exp(p.log_sigma_e)));
  }
  r.z = r.pre;
  if (const auto* m = model.latent_manifold()) {
    manifold::EncodeLayerStats stats;
    r.z = manifold::manifold_encode_layer(r.pre, *m, policy, &stats);
    r.flagged = stats.flagged;
  }
  return r;
}

ad::Var latent_step(const VaeModel& model, const VaeModel::Leaves& p, ad::Var z, int n_steps) {
  if (n_steps < 0) throw std::invalid_argument("latent_step: n_steps must be >= 0");
  if (n_steps == 0) return z;
  auto factor = ad::exp(ad::scale(p.lambda0, -model.config().tau));
  for (int k = 0; k < n_steps; ++k) z = ad::scale_by(z, factor);
  return z;
}

ad::Var decode(const VaeModel& model, const VaeModel::Leaves& p, ad::Var z) {
  if (z.value().rank() != 2 || z.value().cols() != model.embed_dim()) {
    throw ad::ShapeError("decode", {z.value().shape(), Shape{0, model.embed_dim()}});
  }
  return model.decoder_mean(p, z);
}

double gaussian_kl(const std::vector<double>& a, double sigma_e, double sigma_0) {
  double kl = 0.0;
  const double ratio = sigma_e * sigma_e / (sigma_0 * sigma_0);
  for (double m : a) kl += 0.5 * (ratio + m * m / (sigma_0 * sigma_0) - 1.0 - std::log(ratio));
  return kl;
}

LossEval loss(const VaeModel& model, ad::Tape& tape, const VaeModel::Leaves& p, const Batch& batch, const TrainConfig& config,
              Rng& rng) {
  const auto& mc = model.config();
  if (batch.inputs.rank() != 2 || batch.inputs.rows() == 0) throw std::invalid_argument("loss: empty batch");
  if (batch.targets.rank() != 2 || batch.targets.rows() != batch.inputs.rows() || batch.targets.cols() != mc.output_dim) {
    throw ad::ShapeError("loss", {batch.inputs.shape(), batch.targets.shape()});
  }
  const double rows = static_cast<double>(batch.inputs.rows());
  LossEval out;

  auto enc = encode(model, p, tape.constant(batch.inputs), &rng, config.flag_policy);
  out.flagged += enc.flagged;
  auto pred = decode(model, p, latent_step(model, p, enc.z, config.latent_steps));
  auto target = tape.constant(batch.targets);
  auto re = gaussian_loglik(tape, target, pred, p.log_sigma_d);

  // Closed-form KL against N(0, sigma_0^2 I), averaged over the batch, on
  // the pre-projection variable.
  const double n = static_cast<double>(model.embed_dim());
  const double s0 = mc.sigma_0;
  auto kl = ad::scale(ad::sum(ad::square(enc.mean)), 0.5 / (s0 * s0 * rows));
  kl = ad::add(kl, ad::scale(ad::exp(ad::scale(p.log_sigma_e, 2.0)), 0.5 * n / (s0 * s0)));
  kl = ad::sub(kl, ad::scale(p.log_sigma_e, n));
  kl = ad::add(kl, tape.constant(Tensor::scalar(n * (std::log(s0) - 0.5))));
  auto kl_term = ad::scale(kl, -config.beta);

  auto total = ad::add(re, kl_term);
  out.parts.re = re.value().item();
  out.parts.kl = kl_term.value().item();
  if (config.gamma > 0.0) {
    if (mc.input_dim != mc.output_dim) throw std::invalid_argument("loss: gamma > 0 needs input_dim == output_dim");
    auto enc2 = encode(model, p, target, &rng, config.flag_policy);
    out.flagged += enc2.flagged;
    auto rr = ad::scale(gaussian_loglik(tape, target, decode(model, p, enc2.z), p.log_sigma_d), config.gamma);
    out.parts.rr = rr.value().item();
    total = ad::add(total, rr);
  }
  check_component(out.parts.re, "RE");
  check_component(out.parts.kl, "KL");
  check_component(out.parts.rr, "RR");
  out.parts.total = out.parts.re + out.parts.kl + out.parts.rr;
  out.objective = ad::neg(total);
  return out;
}

TrainingData TrainingData::from_dataset(const Dataset& d) {
  d.validate();
  TrainingData t{Tensor(Shape{d.size(), d.dim}), Tensor(Shape{d.size(), d.dim})};
  for (std::size_t i = 0; i < d.size(); ++i) {
    std::copy(d.pairs[i].input.begin(), d.pairs[i].input.end(), t.inputs.data().begin() + static_cast<std::ptrdiff_t>(i * d.dim));
    std::copy(d.pairs[i].target.begin(), d.pairs[i].target.end(), t.targets.data().begin() + static_cast<std::ptrdiff_t>(i * d.dim));
  }
  return t;
}

std::vector<EpochRecord> train(VaeModel& model, const TrainingData& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  const auto& mc = model.config();
  if (data.inputs.rank() != 2 || data.inputs.cols() != mc.input_dim || data.targets.rank() != 2 ||
      data.targets.cols() != mc.output_dim || data.targets.rows() != data.inputs.rows()) {
    throw std::invalid_argument("train: data dimensions do not match the model");
  }
  const std::size_t count = data.size();
  if (count == 0) throw std::invalid_argument("train: empty dataset");

  Rng rng(config.seed);
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  AdamState state;
  std::vector<EpochRecord> history;
  double reference = 0.0;
  bool have_reference = false;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    AdamConfig adam;
    adam.lr = config.lr * std::pow(config.lr_final_factor, static_cast<double>(epoch) / static_cast<double>(config.epochs));
    for (std::size_t i = count - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.lr = adam.lr;
    for (std::size_t begin = 0; begin < count; begin += config.batch_size) {
      const std::size_t end = std::min(count, begin + config.batch_size);
      Batch batch{rows_of(data.inputs, order, begin, end), rows_of(data.targets, order, begin, end)};
      ad::Tape tape;
      auto leaves = model.register_leaves(tape);
      LossEval ev;
      try {
        ev = loss(model, tape, leaves, batch, config, rng);
      } catch (const std::domain_error& e) {
        throw TrainingDiverged(std::string("training diverged at epoch ") + std::to_string(epoch + 1) + ": " + e.what(), history);
      }
      const double objective = -ev.parts.total;
      if (!have_reference) {
        reference = std::abs(objective);
        have_reference = true;
      }
      if (objective > config.divergence_factor * std::max(1.0, reference)) {
        throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch + 1) + ": loss exceeded threshold", history);
      }
      auto grads_map = tape.backward(ev.objective);
      std::vector<Tensor> grads;
      grads.reserve(model.parameters().size());
      for (std::size_t i = 0; i < model.parameters().size(); ++i) grads.push_back(std::move(grads_map.at(i)));
      try {
        adam_step(model.parameters(), grads, state, adam);
      } catch (const std::domain_error& e) {
        throw TrainingDiverged(std::string("training diverged at epoch ") + std::to_string(epoch + 1) + ": " + e.what(), history);
      }
      const double w = static_cast<double>(end - begin) / static_cast<double>(count);
      rec.mean.total += w * ev.parts.total;
      rec.mean.re += w * ev.parts.re;
      rec.mean.kl += w * ev.parts.kl;
      rec.mean.rr += w * ev.parts.rr;
      rec.flagged += ev.flagged;
    }
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

std::vector<Tensor> predict_multistep(const VaeModel& model, const Tensor& inputs, int n_steps) {
  if (n_steps < 0) throw std::invalid_argument("predict_multistep: n_steps must be >= 0");
  ad::Tape tape;
  auto p = model.register_leaves(tape);
  auto z = encode(model, p, tape.constant(inputs), nullptr).z;
  std::vector<Tensor> out;
  out.reserve(static_cast<std::size_t>(n_steps) + 1);
  for (int k = 0; k <= n_steps; ++k) {
    if (k > 0) z = latent_step(model, p, z, 1);
    out.push_back(decode(model, p, z).value());
  }
  return out;
}

Tensor encode_mean(const VaeModel& model, const Tensor& inputs) {
  ad::Tape tape;
  auto p = model.register_leaves(tape);
  return encode(model, p, tape.constant(inputs), nullptr).z.value();
}

void VaeModel::save(const std::filesystem::path& path) const {
  {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path.string());
    os.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(os, kVersion);
    const auto& c = config_;
    put<std::uint64_t>(os, c.input_dim);
    put<std::uint64_t>(os, c.output_dim);
    put_sizes(os, c.encoder_hidden);
    put_sizes(os, c.decoder_hidden);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(c.latent));
    put<std::uint64_t>(os, c.latent_dim);
    put<double>(os, c.klein.a);
    put<double>(os, c.klein.b);
    put<std::int64_t>(os, c.klein.resolution);
    put_string(os, c.pointcloud_file.string());
    for (double v : {c.sigma_e, c.sigma_d, c.sigma_0, c.lambda0, c.tau}) put<double>(os, v);
    put<std::uint8_t>(os, c.learn_variance ? 1 : 0);
    put<double>(os, c.leaky_slope);
    put<std::uint64_t>(os, c.init_seed);
    put<std::uint64_t>(os, params_.size());
    for (const auto& prm : params_) {
      put_string(os, prm.name);
      put_sizes(os, prm.value.shape());
      os.write(reinterpret_cast<const char*>(prm.value.data().data()), static_cast<std::streamsize>(prm.value.size() * sizeof(double)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
  }
  std::ofstream meta(path.string() + ".txt");
  if (!meta) throw std::runtime_error("checkpoint: cannot write metadata for " + path.string());
  auto join = [](const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  };
  meta << std::setprecision(17) << "format = mvrom-vae\nversion = " << kVersion << "\nencoder = " << join(encoder_.sizes)
       << "\ndecoder = " << join(decoder_.sizes) << "\nlatent = " << latent_kind_name(config_.latent) << "\nembed_dim = " << embed_dim()
       << "\nlambda0 = " << lambda0() << "\nsigma_e = " << sigma_e() << "\nsigma_d = " << sigma_d() << "\nsigma_0 = " << config_.sigma_0
       << "\ntau = " << config_.tau << "\nleaky_slope = " << config_.leaky_slope << "\nparameters = " << params_.size() << '\n';
}

VaeModel VaeModel::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kMagic) throw std::runtime_error("checkpoint: bad magic in " + path.string());
  if (const auto v = get<std::uint32_t>(is); v != kVersion) throw std::runtime_error("checkpoint: unsupported version " + std::to_string(v));
  ModelConfig c;
  c.input_dim = get<std::uint64_t>(is);
  c.output_dim = get<std::uint64_t>(is);
  c.encoder_hidden = get_sizes(is);
  c.decoder_hidden = get_sizes(is);
  const auto kind = get<std::uint8_t>(is);
  if (kind > static_cast<std::uint8_t>(LatentKind::PointCloud)) throw std::runtime_error("checkpoint: bad latent kind");
  c.latent = static_cast<LatentKind>(kind);
  c.latent_dim = get<std::uint64_t>(is);
  c.klein.a = get<double>(is);
  c.klein.b = get<double>(is);
  c.klein.resolution = static_cast<int>(get<std::int64_t>(is));
  c.pointcloud_file = get_string(is);
  c.sigma_e = get<double>(is);
  c.sigma_d = get<double>(is);
  c.sigma_0 = get<double>(is);
  c.lambda0 = get<double>(is);
  c.tau = get<double>(is);
  c.learn_variance = get<std::uint8_t>(is) != 0;
  c.leaky_slope = get<double>(is);
  c.init_seed = get<std::uint64_t>(is);

  VaeModel model(c);
  const auto count = get<std::uint64_t>(is);
  if (count != model.params_.size()) throw std::runtime_error("checkpoint: parameter count mismatch");
  for (auto& prm : model.params_) {
    const std::string name = get_string(is);
    const Shape shape = get_sizes(is);
    if (name != prm.name || shape != prm.value.shape()) throw std::runtime_error("checkpoint: unexpected parameter block '" + name + "'");
    is.read(reinterpret_cast<char*>(prm.value.data().data()), static_cast<std::streamsize>(prm.value.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
  }
  return model;
}

}  // namespace mvrom::vae
