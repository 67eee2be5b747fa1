#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include "fd_check.hpp"
#include "mvrom/vae.hpp"

using namespace mvrom;
using namespace mvrom::vae;

namespace {

ModelConfig small_config(std::size_t in, std::size_t latent = 2) {
  ModelConfig c;
  c.input_dim = in;
  c.output_dim = in;
  c.encoder_hidden = {8};
  c.decoder_hidden = {8};
  c.latent_dim = latent;
  c.sigma_e = 0.1;
  c.sigma_d = 0.5;
  c.init_seed = 7;
  return c;
}

TrainingData toy_data(std::size_t count, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  TrainingData d{Tensor(Shape{count, dim}), Tensor(Shape{count, dim})};
  for (double& v : d.inputs.storage()) v = rng.uniform(-1, 1);
  for (std::size_t i = 0; i < d.inputs.size(); ++i) d.targets[i] = 0.8 * d.inputs[i];
  return d;
}

double log_normal_pdf(double x, double mean, double sd) {
  const double r = (x - mean) / sd;
  return -0.5 * r * r - std::log(sd) - 0.5 * std::log(2 * std::numbers::pi);
}

}  // namespace

TEST_CASE("latent flow is an exact semigroup") {
  VaeModel m(small_config(3));
  ad::Tape tape;
  auto p = m.register_leaves(tape);
  auto z = tape.constant(Tensor::matrix({{0.3, -1.2}, {2.0, 0.7}}));
  CHECK(latent_step(m, p, z, 0).value().storage() == z.value().storage());
  auto twice = latent_step(m, p, latent_step(m, p, z, 1), 1);
  CHECK(twice.value().storage() == latent_step(m, p, z, 2).value().storage());
  const double f = std::exp(-0.5 * 0.25);
  CHECK(latent_step(m, p, z, 1).value()[0] == doctest::Approx(0.3 * f).epsilon(1e-15));
  CHECK_THROWS_AS(latent_step(m, p, z, -1), std::invalid_argument);

  auto c = small_config(3);
  c.lambda0 = 0.0;
  VaeModel still(c);
  ad::Tape t2;
  auto p2 = still.register_leaves(t2);
  auto z2 = t2.constant(Tensor::matrix({{0.3, -1.2}}));
  const auto moved = latent_step(still, p2, z2, 5).value();
  CAPTURE(moved[0]);
  CAPTURE(moved[1]);
  CAPTURE(still.lambda0());
  CHECK(moved.storage() == z2.value().storage());
}

TEST_CASE("encode: noiseless limit, seeding, manifold latents") {
  auto c = small_config(4);
  c.sigma_e = 1e-300;
  VaeModel m(c);
  Tensor x = toy_data(5, 4, 1).inputs;
  ad::Tape tape;
  auto p = m.register_leaves(tape);
  Rng rng(3);
  auto e = encode(m, p, tape.constant(x), &rng);
  for (std::size_t i = 0; i < e.z.value().size(); ++i) CHECK(e.z.value()[i] == e.mean.value()[i]);

  VaeModel noisy(small_config(4));
  ad::Tape t2;
  auto p2 = noisy.register_leaves(t2);
  Rng r1(5), r2(5);
  auto a = encode(noisy, p2, t2.constant(x), &r1).z.value();
  auto b = encode(noisy, p2, t2.constant(x), &r2).z.value();
  CHECK(a.storage() == b.storage());

  auto tc = small_config(4);
  tc.latent = LatentKind::Torus;
  VaeModel torus(tc);
  CHECK(torus.embed_dim() == 4);
  ad::Tape t3;
  auto p3 = torus.register_leaves(t3);
  Rng r3(9);
  auto z = encode(torus, p3, t3.constant(toy_data(64, 4, 2).inputs), &r3).z.value();
  for (std::size_t i = 0; i < z.rows(); ++i) {
    CHECK(std::abs(std::hypot(z.at(i, 0), z.at(i, 1)) - 1) < 1e-12);
    CHECK(std::abs(std::hypot(z.at(i, 2), z.at(i, 3)) - 1) < 1e-12);
  }
  CHECK_THROWS_AS(encode(torus, p3, t3.constant(Tensor(Shape{2, 3})), nullptr), ad::ShapeError);
}

TEST_CASE("closed-form KL") {
  CHECK(gaussian_kl(std::vector<double>{0.0, 0.0}, 1.0, 1.0) == 0.0);
  // Monte-Carlo estimate of E_q[log q - log p].
  const std::vector<double> a{0.3, -0.5};
  const double se = 0.7, s0 = 1.3;
  Rng rng(11);
  double acc = 0;
  const int n = 100000;
  for (int s = 0; s < n; ++s) {
    for (double m : a) {
      const double z = m + se * rng.normal();
      acc += log_normal_pdf(z, m, se) - log_normal_pdf(z, 0, s0);
    }
  }
  const double closed = gaussian_kl(a, se, s0);
  CHECK(std::abs(acc / n - closed) < 0.01 * closed);
}

TEST_CASE("loss additivity, KL term, gamma = 0") {
  auto c = small_config(4);
  VaeModel m(c);
  auto data = toy_data(16, 4, 4);
  Batch batch{data.inputs, data.targets};
  TrainConfig tc;
  ad::Tape tape;
  auto p = m.register_leaves(tape);
  Rng rng(1);
  auto ev = loss(m, tape, p, batch, tc, rng);
  CHECK(ev.parts.total == ev.parts.re + ev.parts.kl + ev.parts.rr);
  CHECK(std::abs(-ev.objective.value().item() - ev.parts.total) < 1e-12 * std::abs(ev.parts.total));
  CHECK(ev.parts.rr != 0.0);

  // KL term against the mean encodings.
  auto means = m.encoder_mean(p, tape.constant(data.inputs)).value();
  double kl = 0;
  for (std::size_t i = 0; i < means.rows(); ++i) {
    kl += gaussian_kl(std::vector<double>{means.at(i, 0), means.at(i, 1)}, c.sigma_e, c.sigma_0);
  }
  CHECK(ev.parts.kl == doctest::Approx(-kl / 16).epsilon(1e-12));

  tc.gamma = 0.0;
  ad::Tape t2;
  auto p2 = m.register_leaves(t2);
  Rng rng2(1);
  auto ev0 = loss(m, t2, p2, batch, tc, rng2);
  CHECK(ev0.parts.rr == 0.0);
  // Targets only enter the RE term: the gradient does not depend on how
  // they would encode.
  CHECK(ev0.parts.re == doctest::Approx(ev.parts.re).epsilon(1e-12));
}

TEST_CASE("non-finite loss names the component") {
  VaeModel m(small_config(3));
  m.parameters().back().value[0] = NAN;  // lambda0
  auto data = toy_data(4, 3, 1);
  ad::Tape tape;
  auto p = m.register_leaves(tape);
  Rng rng(1);
  try {
    loss(m, tape, p, Batch{data.inputs, data.targets}, TrainConfig{}, rng);
    FAIL("expected throw");
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()) == "non-finite loss component: RE");
  }
}

TEST_CASE("reparameterised gradient of E|z|^2") {
  // Encoder with zero weights: the mean is the output bias.
  ModelConfig c = small_config(1);
  c.encoder_hidden = {};
  c.sigma_e = 0.3;
  VaeModel m(c);
  auto& w = m.parameters()[0].value;
  for (double& v : w.storage()) v = 0;
  auto& bias = m.parameters()[1].value;
  bias[0] = 0.4;
  bias[1] = -1.1;
  const std::size_t n = 10000;
  ad::Tape tape;
  auto p = m.register_leaves(tape);
  Rng rng(13);
  auto e = encode(m, p, tape.constant(Tensor(Shape{n, 1})), &rng);
  auto objective = ad::scale(ad::sum(ad::square(e.z)), 1.0 / n);
  auto g = tape.backward(objective).at(1);
  const double band = 3 * 2 * c.sigma_e / std::sqrt(double(n));
  CHECK(std::abs(g[0] - 0.8) < band);
  CHECK(std::abs(g[1] + 2.2) < band);
}

TEST_CASE("ELBO lower-bounds the log-likelihood") {
  ModelConfig c = small_config(1, 1);
  c.encoder_hidden = {};
  c.decoder_hidden = {};
  c.sigma_e = 0.6;
  c.sigma_d = 0.5;
  VaeModel m(c);
  const double x = 0.9;
  const std::size_t n = 20000;
  Tensor xs(Shape{n, 1}, x);
  TrainConfig tc;
  tc.gamma = 0;
  tc.latent_steps = 0;
  ad::Tape tape;
  auto p = m.register_leaves(tape);
  Rng rng(17);
  auto ev = loss(m, tape, p, Batch{xs, xs}, tc, rng);
  const double elbo = ev.parts.re + ev.parts.kl;

  // Importance-sampled log p(x) with the encoder as proposal.
  const double ew = m.parameters()[0].value[0], eb = m.parameters()[1].value[0];
  const double dw = m.parameters()[2].value[0], db = m.parameters()[3].value[0];
  const double a = ew * x + eb;
  Rng is_rng(19);
  std::vector<double> logw(n);
  double mx = -1e300;
  for (auto& lw : logw) {
    const double z = a + c.sigma_e * is_rng.normal();
    lw = log_normal_pdf(x, dw * z + db, c.sigma_d) + log_normal_pdf(z, 0, c.sigma_0) - log_normal_pdf(z, a, c.sigma_e);
    mx = std::max(mx, lw);
  }
  double s = 0, s2 = 0;
  for (double lw : logw) {
    s += std::exp(lw - mx);
    s2 += std::exp(2 * (lw - mx));
  }
  const double mean = s / n;
  const double ll = mx + std::log(mean);
  const double se = std::sqrt(std::max(0.0, s2 / n - mean * mean) / n) / mean;
  // RE is itself a Monte-Carlo estimate; allow three standard errors of each.
  double re_var = 0;
  {
    ad::Tape t2;
    auto p2 = m.register_leaves(t2);
    Rng r2(17);
    auto e2 = encode(m, p2, t2.constant(xs), &r2);
    auto pred = decode(m, p2, e2.z).value();
    double mu = 0, mu2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double l = log_normal_pdf(x, pred[i], c.sigma_d);
      mu += l;
      mu2 += l * l;
    }
    mu /= n;
    re_var = (mu2 / n - mu * mu) / n;
  }
  CHECK(elbo <= ll + 3 * (se + std::sqrt(re_var)));
}

TEST_CASE("manifold latent: end-to-end gradient on a frozen batch") {
  auto c = small_config(4);
  c.latent = LatentKind::Torus;
  c.sigma_d = 0.7;
  VaeModel m(c);
  auto data = toy_data(8, 4, 21);
  Batch batch{data.inputs, data.targets};
  TrainConfig tc;
  auto objective = [&](VaeModel& model, Tensor* grad, std::size_t which) {
    ad::Tape tape;
    auto p = model.register_leaves(tape);
    Rng rng(23);
    auto ev = loss(model, tape, p, batch, tc, rng);
    if (grad) *grad = tape.backward(ev.objective).at(which);
    return ev.objective.value().item();
  };
  for (std::size_t which : {0u, 1u, 2u}) {
    CAPTURE(which);
    Tensor g;
    objective(m, &g, which);
    const Tensor x0 = m.parameters()[which].value;
    auto f = [&](const Tensor& v) {
      m.parameters()[which].value = v;
      const double r = objective(m, nullptr, which);
      m.parameters()[which].value = x0;
      return r;
    };
    CHECK(testing::relative_error(g, testing::central_difference(f, x0, 1e-6)) < 1e-4);
  }
}

TEST_CASE("training: determinism, overfit, divergence guard") {
  auto data = toy_data(40, 3, 31);
  TrainConfig tc;
  tc.epochs = 15;
  tc.batch_size = 8;
  tc.seed = 4;
  tc.lr = 1e-2;
  VaeModel a(small_config(3)), b(small_config(3));
  auto ha = train(a, data, tc);
  auto hb = train(b, data, tc);
  REQUIRE(ha.size() == 15);
  for (std::size_t i = 0; i < ha.size(); ++i) {
    CHECK(ha[i].mean.total == hb[i].mean.total);
    CHECK(ha[i].mean.re == hb[i].mean.re);
  }
  CHECK(ha.back().mean.total > ha.front().mean.total);

  // Single pair: reconstruction error shrinks toward 0.
  TrainingData one{Tensor::matrix({{0.5, -0.2, 0.9}}), Tensor::matrix({{0.4, -0.1, 0.7}})};
  auto c = small_config(3);
  c.sigma_e = 1e-3;
  c.sigma_d = 1e-2;
  VaeModel m(c);
  auto before = predict_multistep(m, one.inputs, 1)[1];
  TrainConfig t1;
  t1.epochs = 600;
  t1.batch_size = 1;
  t1.lr = 3e-3;
  train(m, one, t1);
  auto after = predict_multistep(m, one.inputs, 1)[1];
  double e0 = 0, e1 = 0;
  for (std::size_t j = 0; j < 3; ++j) {
    e0 += std::abs(before[j] - one.targets[j]);
    e1 += std::abs(after[j] - one.targets[j]);
  }
  CHECK(e1 < 0.02 * e0);

  VaeModel bad(small_config(3));
  bad.parameters()[0].value[0] = INFINITY;
  CHECK_THROWS_AS(train(bad, data, tc), TrainingDiverged);
  TrainingData mismatch{Tensor(Shape{4, 2}), Tensor(Shape{4, 3})};
  CHECK_THROWS_AS(train(bad, mismatch, tc), std::invalid_argument);
}

TEST_CASE("multistep prediction and checkpoints") {
  VaeModel m(small_config(3));
  auto x = toy_data(5, 3, 41).inputs;
  auto preds = predict_multistep(m, x, 3);
  REQUIRE(preds.size() == 4);
  for (const auto& p : preds) {
    CHECK(p.rows() == 5);
    CHECK(p.cols() == 3);
    CHECK(p.all_finite());
  }
  // k = 0 is the reconstruction through the untouched latent.
  ad::Tape tape;
  auto pv = m.register_leaves(tape);
  auto recon = decode(m, pv, encode(m, pv, tape.constant(x), nullptr).z).value();
  CHECK(recon.storage() == preds[0].storage());

  const auto dir = std::filesystem::temp_directory_path() / "mvrom_test_vae";
  std::filesystem::create_directories(dir);
  m.save(dir / "m.bin");
  CHECK(std::filesystem::exists(dir / "m.bin.txt"));
  auto back = VaeModel::load(dir / "m.bin");
  auto again = predict_multistep(back, x, 3);
  for (std::size_t k = 0; k < 4; ++k) CHECK(again[k].storage() == preds[k].storage());
  {
    std::ofstream bad(dir / "bad.bin", std::ios::binary);
    bad << "garbage!";
  }
  CHECK_THROWS(VaeModel::load(dir / "bad.bin"));
  CHECK(parse_latent_kind("klein") == LatentKind::Klein);
  CHECK_THROWS_AS(parse_latent_kind("sphere"), std::invalid_argument);
}
