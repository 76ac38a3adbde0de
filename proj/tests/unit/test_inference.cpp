#include "nexus/inference.hpp"
#include "nexus/trainer.hpp"

#include <doctest.h>

#include "fixtures.hpp"

#include <memory>
#include <thread>

using namespace nexus;
using nexus::testing::random_flows;
using nexus::testing::tiny_config;

namespace {

Vocabulary word_vocab() {
  return Vocabulary::from_tokens({"lol", "zebra", "apple", "river", "stone", "green", "cloud", "piano",
                                  "tiger", "lamp", "ocean", "paper", "clock", "bread", "snow"},
                                 15);
}

// Briefly trained so that replies terminate with EOS.
const NexusModel& trained_model() {
  static const auto model = [] {
    TrainConfig cfg;
    cfg.model = tiny_config();
    cfg.batch_size = 16;
    cfg.max_steps = 150;
    cfg.eval_every = 0;
    cfg.learning_rate = 0.01;
    auto m = std::make_unique<NexusModel>(cfg.model, 5);
    const auto flows = random_flows(20, 40, 2, 4, 3, 12);
    const auto inst = make_instances(flows);
    train_model(*m, cfg, inst, {});
    return m;
  }();
  return *model;
}

// Untrained model whose greedy output is the single token `word` repeated.
std::unique_ptr<NexusModel> forced_model(const Vocabulary& v, const std::string& word) {
  auto m = std::make_unique<NexusModel>(tiny_config(), 2);
  Parameter* b = m->params().find("decoder.output.b");
  REQUIRE(b != nullptr);
  b->value(v.lookup(word), 0) += 1e3;
  return m;
}

std::vector<Utterance> context_of(const Vocabulary& v, std::initializer_list<const char*> texts) {
  std::vector<Utterance> out;
  for (const char* t : texts) out.push_back(encode_user_text(v, t));
  return out;
}

}  // namespace

TEST_CASE("settings validation and decode mode names") {
  DecodeSettings s;
  CHECK_NOTHROW(s.validate());
  for (auto mode : {DecodeMode::greedy, DecodeMode::beam, DecodeMode::sample}) {
    CHECK(parse_decode_mode(to_string(mode)) == mode);
  }
  CHECK_THROWS_AS(parse_decode_mode("nucleus"), std::invalid_argument);
  auto bad = [](auto edit) {
    DecodeSettings d;
    edit(d);
    return d;
  };
  CHECK_THROWS_AS(bad([](DecodeSettings& d) { d.beam_size = 0; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(bad([](DecodeSettings& d) { d.beam_size = 11; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(bad([](DecodeSettings& d) { d.temperature = 0.05; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(bad([](DecodeSettings& d) { d.temperature = 2.5; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(bad([](DecodeSettings& d) { d.n_prior_samples = 0; }).validate(), std::invalid_argument);
  CHECK_THROWS_AS(bad([](DecodeSettings& d) { d.max_len = 101; }).validate(), std::invalid_argument);
}

TEST_CASE("replies are deterministic and never contain masked tokens") {
  const Vocabulary v = word_vocab();
  const NexusModel& m = trained_model();
  const auto ctx = context_of(v, {"apple river", "stone green cloud"});
  for (auto mode : {DecodeMode::greedy, DecodeMode::beam, DecodeMode::sample}) {
    DecodeSettings s;
    s.mode = mode;
    s.n_prior_samples = 3;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const Reply a = generate_reply(m, v, ctx, s, seed);
      const Reply b = generate_reply(m, v, ctx, s, seed);
      CHECK(a.best.tokens == b.best.tokens);
      CHECK(a.log_prob() == b.log_prob());
      CHECK(a.candidates.size() == 3);
      for (TokenId t : a.best.body()) CHECK(generable(t));
      CHECK(a.text.find("<unk>") == std::string::npos);
    }
  }
}

TEST_CASE("best candidate has the highest independently rescored value") {
  const Vocabulary v = word_vocab();
  const NexusModel& m = trained_model();
  const auto ctx = context_of(v, {"tiger lamp", "ocean"});
  DecodeSettings s;
  s.n_prior_samples = 3;
  int checked = 0;
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const Reply r = generate_reply(m, v, ctx, s, seed);
    // Redraw the same three codes and score each decoded candidate by teacher forcing.
    const Vector h = encode_free_history(m, ctx);
    const GaussianParams prior = m.code_space().prior(h);
    Rng rng(seed);
    double best = -1e300;
    bool all_terminated = true;
    for (int k = 0; k < 3; ++k) {
      const Vector cond = m.condition(h, sample_reparam(prior, rng).c);
      const GenerationResult g = m.decoder().decode_greedy(cond, s.max_len);
      CHECK(g.tokens == r.candidates[static_cast<std::size_t>(k)].tokens);
      if (!g.terminated() || g.body().empty()) {
        all_terminated = false;
        break;
      }
      const double lp = -m.decoder().teacher_forced_nll(cond, g.body());
      best = std::max(best, lp / static_cast<double>(g.tokens.size()));
    }
    if (!all_terminated) continue;
    CHECK(r.score() == doctest::Approx(best).epsilon(1e-9));
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("self-simulation stopping rules") {
  const Vocabulary v = word_vocab();
  const auto ctx = context_of(v, {"apple"});
  DecodeSettings s;
  s.max_len = 1;

  SUBCASE("first generated turn dull") {
    const auto m = forced_model(v, "lol");
    const SimulationResult r = self_simulate(*m, v, ctx, 5, s, 3);
    CHECK(r.turn_count == 0);
    CHECK(r.stop_reason == "dull");
    REQUIRE(r.transcript.size() == 1);
    CHECK(r.transcript[0].text == "lol");
    CHECK(r.transcript[0].is_dull);
  }
  SUBCASE("never dull runs to max_turns") {
    const auto m = forced_model(v, "zebra");
    const SimulationResult r = self_simulate(*m, v, ctx, 4, s, 3);
    CHECK(r.turn_count == 4);
    CHECK(r.stop_reason == "max_turns");
    CHECK(r.transcript.size() == 4);
  }
  SUBCASE("turn count bounded on a trained model") {
    const NexusModel& m = trained_model();
    DecodeSettings sample;
    sample.mode = DecodeMode::sample;
    for (int max_turns = 1; max_turns <= 6; ++max_turns) {
      for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const SimulationResult r = self_simulate(m, v, ctx, max_turns, sample, seed);
        CHECK(r.turn_count <= max_turns);
        CHECK(r.transcript.size() == r.generated.size());
        CHECK(r.turn_count <= static_cast<int>(r.transcript.size()));
      }
    }
  }
  CHECK_THROWS_AS(self_simulate(trained_model(), v, ctx, 0, s, 1), std::invalid_argument);
}

TEST_CASE("simulated transcript replays from its recorded seeds") {
  const Vocabulary v = word_vocab();
  const NexusModel& m = trained_model();
  std::vector<Utterance> history = context_of(v, {"paper clock", "bread snow"});
  DecodeSettings s;
  s.mode = DecodeMode::sample;
  s.n_prior_samples = 2;
  const SimulationResult r = self_simulate(m, v, history, 8, s, 77);
  for (std::size_t k = 0; k < r.transcript.size(); ++k) {
    const Turn& t = r.transcript[k];
    REQUIRE(t.seed.has_value());
    const Reply again = generate_reply(m, v, history, s, *t.seed);
    CHECK(again.text == t.text);
    CHECK(again.log_prob() == *t.log_prob);
    history.push_back(r.generated[k]);
  }
}

TEST_CASE("chat service sessions, replay and errors") {
  const Vocabulary v = word_vocab();
  const NexusModel& m = trained_model();
  ChatService svc(m, v, 9);
  const std::string id = svc.create_session();
  CHECK(id.size() == 16);
  CHECK(svc.session_count() == 1);

  const Turn t1 = svc.respond(id, "Apple river!");
  const Turn t2 = svc.respond(id, "green cloud");
  const auto tr = svc.transcript(id);
  REQUIRE(tr.size() == 4);
  CHECK(tr[0].speaker == "user");
  CHECK(tr[1].speaker == "model");
  CHECK(tr[1].text == t1.text);
  CHECK(tr[3].text == t2.text);

  // Each model turn is reproducible from the history before it and its seed.
  std::vector<Utterance> history{encode_user_text(v, "Apple river!")};
  const Reply r1 = generate_reply(m, v, history, svc.settings(id), *t1.seed);
  CHECK(r1.text == t1.text);
  history.push_back(r1.best.body().empty() ? Utterance{special::kEos} : r1.best.body());
  history.push_back(encode_user_text(v, "green cloud"));
  CHECK(generate_reply(m, v, history, svc.settings(id), *t2.seed).text == t2.text);

  // History is append-only.
  svc.simulate(id, 3);
  const auto after = svc.transcript(id);
  REQUIRE(after.size() >= 5);
  for (std::size_t k = 0; k < tr.size(); ++k) CHECK(after[k].text == tr[k].text);

  CHECK_THROWS_AS(svc.respond("ffffffffffffffff", "hi"), NotFoundError);
  CHECK_THROWS_AS(svc.transcript("nope"), NotFoundError);
  CHECK_THROWS_AS(svc.respond(id, "   "), std::invalid_argument);
  DecodeSettings bad;
  bad.beam_size = 50;
  CHECK_THROWS_AS(svc.respond(id, "apple", bad), std::invalid_argument);
  CHECK_THROWS_AS(svc.create_session(bad), std::invalid_argument);
  CHECK(svc.transcript(id).size() == after.size());

  DecodeSettings beam;
  beam.mode = DecodeMode::beam;
  beam.beam_size = 3;
  svc.respond(id, "tiger", beam);
  CHECK(svc.settings(id).mode == DecodeMode::beam);
  CHECK(svc.settings(id).beam_size == 3);

  const std::string other = svc.create_session();
  CHECK(other != id);
  CHECK(svc.transcript(other).empty());
  CHECK_THROWS_AS(svc.simulate(other, 2), std::invalid_argument);
}

TEST_CASE("interleaved and concurrent sessions match serial execution") {
  const Vocabulary v = word_vocab();
  const NexusModel& m = trained_model();
  const std::vector<std::string> a_msgs{"apple", "river stone", "green", "cloud piano"};
  const std::vector<std::string> b_msgs{"tiger lamp", "ocean", "paper clock", "snow"};
  DecodeSettings sample;
  sample.mode = DecodeMode::sample;

  auto texts = [](const std::vector<Turn>& turns) {
    std::vector<std::string> out;
    for (const auto& t : turns) out.push_back(t.text + "|" + std::to_string(t.seed.value_or(0)));
    return out;
  };

  ChatService serial(m, v, 4);
  const std::string sa = serial.create_session(sample), sb = serial.create_session(sample);
  for (const auto& msg : a_msgs) serial.respond(sa, msg);
  for (const auto& msg : b_msgs) serial.respond(sb, msg);

  ChatService inter(m, v, 4);
  const std::string ia = inter.create_session(sample), ib = inter.create_session(sample);
  for (std::size_t k = 0; k < a_msgs.size(); ++k) {
    inter.respond(ib, b_msgs[k]);
    inter.respond(ia, a_msgs[k]);
  }
  CHECK(texts(inter.transcript(ia)) == texts(serial.transcript(sa)));
  CHECK(texts(inter.transcript(ib)) == texts(serial.transcript(sb)));

  ChatService threaded(m, v, 4);
  const std::string ta = threaded.create_session(sample), tb = threaded.create_session(sample);
  std::thread ja([&] {
    for (const auto& msg : a_msgs) threaded.respond(ta, msg);
  });
  std::thread jb([&] {
    for (const auto& msg : b_msgs) threaded.respond(tb, msg);
  });
  ja.join();
  jb.join();
  CHECK(texts(threaded.transcript(ta)) == texts(serial.transcript(sa)));
  CHECK(texts(threaded.transcript(tb)) == texts(serial.transcript(sb)));
}
