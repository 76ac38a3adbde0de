#include "nexus/kv_config.hpp"
#include "nexus/trainer.hpp"

#include <doctest.h>
#include <json.hpp>

#include "fixtures.hpp"

#include <sstream>

using namespace nexus;
using nexus::testing::random_flows;
using nexus::testing::tiny_config;

namespace {

TrainConfig small_config() {
  TrainConfig c;
  c.model = tiny_config();
  c.batch_size = 6;
  c.max_steps = 15;
  c.eval_every = 5;
  c.patience = 0;
  c.seed = 4;
  return c;
}

}  // namespace

TEST_CASE("config defaults and parsing") {
  const TrainConfig d;
  CHECK(d.learning_rate == 1e-3);
  CHECK(d.batch_size == 128);
  CHECK(d.gradient_clip_norm == 5.0);

  const auto kv = parse_kv("# toy\nlearning_rate = 0.01\nbatch_size=4\nmodel_kind = seq2seq\nvocab_size = 20\n");
  const TrainConfig c = TrainConfig::from_map(kv);
  CHECK(c.learning_rate == 0.01);
  CHECK(c.batch_size == 4);
  CHECK_FALSE(c.model.code_enabled);

  CHECK_THROWS_AS(TrainConfig::from_map({{"no_such_key", "1"}}), std::invalid_argument);
  TrainConfig negative = small_config();
  negative.batch_size = -3;
  CHECK_THROWS_AS(negative.validate(), std::invalid_argument);
  CHECK_THROWS_AS(TrainConfig::from_map({{"learning_rate", "abc"}}), std::invalid_argument);
  CHECK_THROWS(parse_kv("a = 1\na = 2\n"));

  TrainConfig round = small_config();
  round.objective.lambda1 = 0.25;
  const TrainConfig back = TrainConfig::from_map(round.to_map());
  CHECK(back.to_map() == round.to_map());
}

TEST_CASE("gradient clipping bounds the global norm") {
  NexusModel m(tiny_config(), 2);
  const auto flows = random_flows(20, 4, 2, 4, 4, 3);
  const auto inst = make_instances(flows);
  Rng rng(1);
  m.params().zero_grad();
  total_loss(m, inst, {}, standard_normal(4, static_cast<Eigen::Index>(inst.size()), rng));
  for (auto* p : m.params().all()) p->grad *= 100.0;
  const double before = gradient_norm(m.params());
  CHECK(clip_gradients(m.params(), 5.0) == doctest::Approx(before));
  CHECK(gradient_norm(m.params()) <= 5.0 + 1e-6);
  const double small = gradient_norm(m.params());
  clip_gradients(m.params(), 1e9);
  CHECK(gradient_norm(m.params()) == doctest::Approx(small));
}

TEST_CASE("same seed gives identical loss curves") {
  const auto flows = random_flows(20, 20, 2, 4, 4, 5);
  const auto inst = make_instances(flows);
  const std::span<const ContextSplit> train(inst.data(), 30), valid(inst.data() + 30, inst.size() - 30);
  const TrainConfig cfg = small_config();
  NexusModel a(cfg.model, cfg.seed), b(cfg.model, cfg.seed);
  const TrainResult ra = train_model(a, cfg, train, valid);
  const TrainResult rb = train_model(b, cfg, train, valid);
  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t k = 0; k < ra.history.size(); ++k) {
    CHECK(ra.history[k].train.total == rb.history[k].train.total);
    CHECK(ra.history[k].valid.has_value() == rb.history[k].valid.has_value());
  }
  const auto pa = a.params().all(), pb = b.params().all();
  for (std::size_t k = 0; k < pa.size(); ++k) CHECK(pa[k]->value == pb[k]->value);
}

TEST_CASE("validation with fixed noise is deterministic") {
  NexusModel m(tiny_config(), 6);
  const auto flows = random_flows(20, 8, 2, 4, 4, 6);
  const auto inst = make_instances(flows);
  const Matrix noise = validation_noise(m, inst.size(), 3);
  const auto a = evaluate_dataset(m, inst, {}, noise, 5);
  const auto b = evaluate_dataset(m, inst, {}, noise, 5);
  CHECK(a.total == b.total);
  // Chunking does not change the instance-weighted mean.
  CHECK(evaluate_dataset(m, inst, {}, noise, 1000).total == doctest::Approx(a.total).epsilon(1e-12));
}

TEST_CASE("log records carry every loss term") {
  const auto flows = random_flows(20, 10, 2, 4, 4, 9);
  const auto inst = make_instances(flows);
  TrainConfig cfg = small_config();
  cfg.max_steps = 6;
  NexusModel m(cfg.model, cfg.seed);
  std::ostringstream log;
  TrainHooks hooks;
  hooks.log = &log;
  train_model(m, cfg, inst, inst, hooks);
  std::istringstream lines(log.str());
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "loss_code", "loss_decoder", "loss_prior_recon", "loss_prior_kl", "total"}) {
      CHECK(j.contains(key));
    }
    CHECK(j["total"].get<double>() ==
          doctest::Approx(j["loss_code"].get<double>() + j["loss_decoder"].get<double>() +
                          j["loss_prior_recon"].get<double>() + j["loss_prior_kl"].get<double>()));
    ++count;
  }
  CHECK(count == 6);
}

TEST_CASE("best validation parameters are restored and reported") {
  const auto flows = random_flows(20, 16, 2, 4, 4, 10);
  const auto inst = make_instances(flows);
  TrainConfig cfg = small_config();
  cfg.max_steps = 20;
  NexusModel m(cfg.model, cfg.seed);
  long best_seen = -1;
  TrainHooks hooks;
  hooks.on_best = [&](long step, const LossBreakdown&) { best_seen = step; };
  const TrainResult r = train_model(m, cfg, inst, inst, hooks);
  REQUIRE(r.best_valid.has_value());
  CHECK(r.best_step == best_seen);
  const Matrix noise = validation_noise(m, inst.size(), cfg.seed);
  CHECK(evaluate_dataset(m, inst, cfg.objective, noise, cfg.batch_size).total ==
        doctest::Approx(r.best_valid->total).epsilon(1e-9));
}

TEST_CASE("lambda sweep structure, additivity and rerun equality") {
  const auto flows = random_flows(20, 14, 2, 4, 4, 11);
  const auto inst = make_instances(flows);
  const std::span<const ContextSplit> all(inst);
  TrainConfig cfg = small_config();
  cfg.max_steps = 8;
  cfg.eval_every = 0;
  const std::vector<double> ratios{0.25, 0.5, 1.0};
  const auto rows = sweep_lambda(cfg, ratios, all, all, all);
  REQUIRE(rows.size() == 3);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    CHECK(rows[k].ratio == ratios[k]);
    CHECK(rows[k].lambda1 == doctest::Approx(ratios[k] * cfg.objective.lambda2));
    CHECK(std::abs(rows[k].ce + rows[k].kl - rows[k].ce_plus_kl) <= 1e-6);
    CHECK(rows[k].ce > 0.0);
    CHECK(rows[k].kl >= 0.0);
  }
  const auto again = sweep_lambda(cfg, {0.5}, all, all, all);
  CHECK(again[0].ce == rows[1].ce);
  CHECK(again[0].kl == rows[1].kl);

  const std::string table = sweep_table(rows);
  CHECK(table.rfind("ratio", 0) == 0);
  CHECK(std::count(table.begin(), table.end(), '\n') == 4);
  const auto series = nlohmann::json::parse(sweep_json(rows));
  CHECK(series.is_object());
}
