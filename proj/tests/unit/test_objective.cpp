#include <doctest.h>

#include "fixtures.hpp"

#include <cmath>

using namespace nexus;
using nexus::testing::gradient_check;
using nexus::testing::random_flows;
using nexus::testing::tiny_config;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Independent diagonal Gaussian log-density, one dimension at a time.
double logpdf_oracle(const Vector& x, const GaussianParams& p) {
  double s = 0.0;
  for (Eigen::Index d = 0; d < x.size(); ++d) {
    const double var = std::exp(p.log_var(d));
    s += -0.5 * kLog2Pi - 0.5 * p.log_var(d) - (x(d) - p.mean(d)) * (x(d) - p.mean(d)) / (2.0 * var);
  }
  return s;
}

struct Setup {
  std::vector<DialogueFlow> flows;
  std::vector<ContextSplit> batch;
  Matrix noise;
};

Setup make_setup(int code_dim, std::uint64_t seed) {
  Setup s;
  s.flows = random_flows(20, 3, 2, 4, 4, seed);
  s.batch = make_instances(s.flows);
  std::mt19937_64 rng(seed + 1);
  s.noise = standard_normal(code_dim, static_cast<Eigen::Index>(s.batch.size()), rng);
  return s;
}

}  // namespace

TEST_CASE("loss breakdown is additive and finite") {
  NexusModel model(tiny_config(), 7);
  auto s = make_setup(4, 11);
  const LossBreakdown b = evaluate_loss(model, s.batch, {}, s.noise);
  CHECK(std::isfinite(b.total));
  CHECK(b.total == doctest::Approx(b.loss_code + b.loss_decoder + b.loss_prior_recon + b.loss_prior_kl).epsilon(1e-12));
  CHECK(b.loss_decoder > 0.0);
  CHECK(b.loss_prior_kl >= 0.0);
  CHECK(b.instances == s.batch.size());
}

TEST_CASE("empty batch is rejected") {
  NexusModel model(tiny_config(), 7);
  std::vector<ContextSplit> none;
  CHECK_THROWS_AS(evaluate_loss(model, none, {}, Matrix(4, 0)), std::invalid_argument);
}

TEST_CASE("batch of identical instances has the per-instance loss") {
  NexusModel model(tiny_config(), 3);
  auto s = make_setup(4, 5);
  std::vector<ContextSplit> one{s.batch[0]};
  std::vector<ContextSplit> many(4, s.batch[0]);
  Matrix n1 = s.noise.col(0);
  Matrix n4 = n1.replicate(1, 4);
  const LossBreakdown a = evaluate_loss(model, one, {}, n1);
  const LossBreakdown b = evaluate_loss(model, many, {}, n4);
  CHECK(b.total == doctest::Approx(a.total).epsilon(1e-12));
  CHECK(b.loss_code == doctest::Approx(a.loss_code).epsilon(1e-12));
}

TEST_CASE("batched losses match independently evaluated vector-level terms") {
  NexusModel model(tiny_config(), 21);
  auto s = make_setup(4, 8);
  ObjectiveConfig cfg;
  const LossBreakdown b = evaluate_loss(model, s.batch, cfg, s.noise);

  double code = 0, dec = 0, recon = 0, kl = 0;
  const CodeSpace& cs = model.code_space();
  for (std::size_t k = 0; k < s.batch.size(); ++k) {
    const EncodedContext enc = model.encoders().encode_context(s.batch[k]);
    const GaussianParams post = cs.posterior(enc.h_tilde, enc.f_tilde_inclusive);
    const CodeSample c = reparam_with_noise(post, s.noise.col(static_cast<Eigen::Index>(k)));
    auto [hh, hf] = cs.reconstruction_heads(c.c);
    double lc = -0.5 * logpdf_oracle(enc.h_tilde, hh);
    if (enc.strict_future_present) lc -= 1.0 * logpdf_oracle(enc.f_tilde_strict, hf);
    CHECK(loss_code(model, enc, c, cfg) == doctest::Approx(lc).epsilon(1e-10));
    code += lc;
    dec += loss_decoder(model, s.batch[k], enc.h_tilde, c);
    const PriorLoss p = loss_prior(model, enc, post, c);
    recon += p.recon;
    kl += p.kl;
  }
  const double n = static_cast<double>(s.batch.size());
  CHECK(b.loss_code == doctest::Approx(code / n).epsilon(1e-9));
  CHECK(b.loss_decoder == doctest::Approx(dec / n).epsilon(1e-9));
  CHECK(b.loss_prior_recon == doctest::Approx(recon / n).epsilon(1e-9));
  CHECK(b.loss_prior_kl == doctest::Approx(kl / n).epsilon(1e-9));
}

TEST_CASE("loss_code vanishes with both lambdas zero and drops the future term at i = T") {
  NexusModel model(tiny_config(), 4);
  auto s = make_setup(4, 9);
  ObjectiveConfig zero{0.0, 0.0};
  const LossBreakdown b = evaluate_loss(model, s.batch, zero, s.noise);
  CHECK(b.loss_code == 0.0);

  for (const auto& split : s.batch) {
    if (split.has_strict_future()) continue;
    const EncodedContext enc = model.encoders().encode_context(split);
    std::mt19937_64 rng(1);
    const CodeSample c = sample_reparam(model.code_space().posterior(enc.h_tilde, enc.f_tilde_inclusive), rng);
    ObjectiveConfig hist_only{0.5, 0.0};
    CHECK(loss_code(model, enc, c, ObjectiveConfig{0.5, 1.0}) ==
          doctest::Approx(loss_code(model, enc, c, hist_only)).epsilon(1e-14));
  }
}

TEST_CASE("kl against itself is zero and the prior recon estimate matches Monte-Carlo") {
  NexusModel model(tiny_config(), 12);
  auto s = make_setup(4, 13);
  const EncodedContext enc = model.encoders().encode_context(s.batch[0]);
  const GaussianParams post = model.code_space().posterior(enc.h_tilde, enc.f_tilde_inclusive);
  CHECK(gaussian_kl(post, post) == 0.0);

  std::mt19937_64 rng(99);
  const int n = 10000;
  std::vector<double> draws;
  double mean = 0.0;
  for (int k = 0; k < n; ++k) {
    const CodeSample c = sample_reparam(post, rng);
    draws.push_back(loss_prior(model, enc, post, c).recon);
    mean += draws.back();
  }
  mean /= n;
  double var = 0.0;
  for (double d : draws) var += (d - mean) * (d - mean);
  const double se = std::sqrt(var / (n - 1) / n);
  std::mt19937_64 single(5);
  const double one = loss_prior(model, enc, post, sample_reparam(post, single)).recon;
  const double spread = std::sqrt(var / (n - 1));
  // A single draw sits within a few population deviations; the MC mean is tight.
  CHECK(std::abs(one - mean) <= 4.0 * spread);
  CHECK(se < 0.05 * std::max(1.0, std::abs(mean)));
}

TEST_CASE("routed gradients match central differences") {
  NexusModel model(tiny_config(), 17);
  auto s = make_setup(4, 23);
  const auto r = gradient_check(model, s.batch, ObjectiveConfig{}, s.noise);
  INFO("worst " << r.worst_param << " rel " << r.max_rel_err);
  CHECK(r.checked == model.params().scalar_count());
  CHECK(r.max_rel_err <= 1e-4);
}

TEST_CASE("unrouted gradients match central differences of the total") {
  NexusModel model(tiny_config(), 19);
  auto s = make_setup(4, 29);
  ObjectiveConfig cfg;
  cfg.route_gradients = false;
  const auto r = gradient_check(model, s.batch, cfg, s.noise);
  INFO("worst " << r.worst_param << " rel " << r.max_rel_err);
  CHECK(r.max_rel_err <= 1e-4);
}

TEST_CASE("seq2seq configuration gradients match central differences") {
  NexusModel model(tiny_config(false), 31);
  auto s = make_setup(4, 37);
  const auto r = gradient_check(model, s.batch, ObjectiveConfig{}, Matrix());
  INFO("worst " << r.worst_param << " rel " << r.max_rel_err);
  CHECK(r.max_rel_err <= 1e-4);
}

TEST_CASE("encoders receive gradient only from the decoder loss") {
  NexusModel model(tiny_config(), 41);
  auto s = make_setup(4, 43);
  const RoutingReport rep = assert_gradient_routing(model, s.batch, {}, s.noise);
  CHECK(rep.ok());
  CHECK(rep.group_max_abs.at("encoder.forward") == 0.0);
  CHECK(rep.group_max_abs.at("encoder.backward") == 0.0);
  CHECK(rep.group_max_abs.at("embedding") == 0.0);
  CHECK(rep.group_max_abs.at("posterior") > 0.0);

  const RoutingReport dec = gradient_by_group(model, s.batch, {}, s.noise, {LossTerm::decoder});
  CHECK(dec.group_max_abs.at("encoder.forward") > 0.0);
  CHECK(dec.group_max_abs.at("encoder.backward") > 0.0);
  CHECK(dec.group_max_abs.at("embedding") > 0.0);

  const RoutingReport prior = gradient_by_group(model, s.batch, {}, s.noise,
                                                {LossTerm::prior_recon, LossTerm::prior_kl});
  CHECK(prior.group_max_abs.at("prior") > 0.0);
  CHECK(prior.group_max_abs.at("future_predictor") > 0.0);
  CHECK(prior.group_max_abs.at("encoder.forward") == 0.0);
  CHECK(prior.group_max_abs.at("encoder.backward") == 0.0);
}

TEST_CASE("unrouted objective is reported as a routing violation naming the groups") {
  NexusModel model(tiny_config(), 41);
  auto s = make_setup(4, 43);
  ObjectiveConfig cfg;
  cfg.route_gradients = false;
  try {
    assert_gradient_routing(model, s.batch, cfg, s.noise);
    FAIL("expected a violation");
  } catch (const RoutingViolation& e) {
    const auto& g = e.groups();
    CHECK(std::find(g.begin(), g.end(), "encoder.forward") != g.end());
  }
}

TEST_CASE("a zero lambda silences the matching reconstruction head") {
  NexusModel model(tiny_config(), 47);
  auto s = make_setup(4, 53);
  const auto no_future = gradient_by_group(model, s.batch, ObjectiveConfig{0.5, 0.0}, s.noise, {LossTerm::code});
  CHECK(no_future.group_max_abs.at("head.future") == 0.0);
  CHECK(no_future.group_max_abs.at("head.history") > 0.0);
  const auto no_history = gradient_by_group(model, s.batch, ObjectiveConfig{0.0, 1.0}, s.noise, {LossTerm::code});
  CHECK(no_history.group_max_abs.at("head.history") == 0.0);
  CHECK(no_history.group_max_abs.at("head.future") > 0.0);
}
