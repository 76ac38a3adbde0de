#include "nexus/evaluation.hpp"

#include <doctest.h>
#include <json.hpp>

#include "fixtures.hpp"

#include <filesystem>
#include <sstream>

using namespace nexus;
using nexus::testing::random_flows;
using nexus::testing::tiny_config;
namespace fs = std::filesystem;

namespace {

Vocabulary word_vocab() {
  return Vocabulary::from_tokens({"hello", "there", "apple", "river", "stone", "green", "cloud", "piano",
                                  "tiger", "lamp", "ocean", "paper", "clock", "bread", "snow"},
                                 15);
}

BackwardModel untrained_backward(std::uint64_t seed) {
  return BackwardModel(std::make_unique<NexusModel>(tiny_config(false), seed), 12);
}

struct Topics {
  Vocabulary vocab;
  std::vector<DialogueFlow> train_flows, test_flows;
  std::vector<ContextSplit> train, test;
};

const Topics& topics() {
  static const auto t = [] {
    auto out = std::make_unique<Topics>();
    const auto parsed = parse_corpus_file(std::string(NEXUS_DATA_DIR) + "/topics.txt");
    const auto split = split_corpus(parsed.dialogues, 1);
    out->vocab = build_vocab(split.train, 1000);
    out->train_flows = encode_dialogues(split.train, out->vocab);
    out->test_flows = encode_dialogues(split.test, out->vocab);
    out->train = make_instances(out->train_flows);
    out->test = make_instances(out->test_flows);
    return out;
  }();
  return *t;
}

}  // namespace

TEST_CASE("flattened context and backward flows") {
  const std::vector<Utterance> h{{5, 6}, {7}, {8, 9, 10}};
  CHECK(flatten_context(h, 100) == Utterance{5, 6, special::kEou, 7, special::kEou, 8, 9, 10});
  CHECK(flatten_context(h, 4) == Utterance{special::kEou, 8, 9, 10});
  CHECK_THROWS_AS(flatten_context(h, 0), std::invalid_argument);

  DialogueFlow f;
  f.utterances = {{5}, {6, 7}, {8}};
  const auto inst = make_instances(f);
  REQUIRE(inst.size() == 2);
  CHECK(history_of(inst[1]) == std::vector<Utterance>{{5}, {6, 7}});
  const auto back = backward_flows(inst, 10);
  REQUIRE(back.size() == 2);
  CHECK(back[1].utterances[0] == Utterance{8});
  CHECK(back[1].utterances[1] == Utterance{5, special::kEou, 6, 7});
}

TEST_CASE("neg-pmi equals the batched teacher-forced nll of the backward model") {
  const BackwardModel b = untrained_backward(3);
  const auto flows = random_flows(20, 30, 2, 5, 5, 4);
  const auto inst = make_instances(flows);
  const auto back = backward_flows(inst, b.max_context_tokens());
  const auto back_inst = make_instances(back);
  REQUIRE(back_inst.size() == inst.size());

  // Score every pair in one graph through the training-time path.
  std::vector<const Utterance*> gold;
  Matrix cond(b.model().decoder().condition_dim(), static_cast<Eigen::Index>(back_inst.size()));
  for (std::size_t k = 0; k < back_inst.size(); ++k) {
    gold.push_back(&back_inst[k].target());
    cond.col(static_cast<Eigen::Index>(k)) =
        b.model().condition(b.model().encoders().encode_history(back_inst[k]), Vector());
  }
  Graph g;
  const Expr nll = b.model().decoder().teacher_forced_nll(g, g.constant(cond), gold);
  for (std::size_t k = 0; k < inst.size(); ++k) {
    const double v = b.neg_pmi(history_of(inst[k]), inst[k].target());
    CHECK(std::abs(v - nll.value()(0, static_cast<Eigen::Index>(k))) <= 1e-6);
    CHECK(v >= 0.0);
    const double len = static_cast<double>(back_inst[k].target().size() + 1);
    CHECK(b.normalized_log_prob(history_of(inst[k]), inst[k].target()) == doctest::Approx(-v / len));
  }
  CHECK_THROWS_AS(b.neg_pmi({{5}}, {}), std::invalid_argument);
  CHECK_THROWS_AS(BackwardModel(std::make_unique<NexusModel>(tiny_config(true), 1)), std::invalid_argument);
}

TEST_CASE("backward model checkpoint round trip") {
  const fs::path dir = fs::temp_directory_path() / "nexus_backward_rt";
  fs::remove_all(dir);
  const BackwardModel b = untrained_backward(8);
  const Vocabulary v = word_vocab();
  b.save(dir.string(), v);
  const BackwardModel back = BackwardModel::load(dir.string(), v);
  CHECK(back.max_context_tokens() == 12);
  const std::vector<Utterance> h{{5, 6}, {7, 8}};
  CHECK(back.neg_pmi(h, {9, 10}) == b.neg_pmi(h, {9, 10}));
  const Vocabulary other = Vocabulary::from_tokens({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l",
                                                    "m", "n", "o"},
                                                   15);
  CHECK_THROWS_AS(BackwardModel::load(dir.string(), other), CheckpointError);
  fs::remove_all(dir);
}

TEST_CASE("mmi candidates are reranked by the mixed score") {
  const Vocabulary v = word_vocab();
  NexusModel fwd(tiny_config(), 2);
  const BackwardModel b = untrained_backward(5);
  const std::vector<Utterance> h{v.encode(std::string_view("apple river")), v.encode(std::string_view("green"))};
  const auto ranked = mmi_candidates(fwd, b, v, h, 20, 0.5, 7, 6);
  REQUIRE(!ranked.empty());
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    CHECK(ranked[k].score == doctest::Approx(0.5 * ranked[k].forward + 0.5 * ranked[k].backward));
    if (k) CHECK(ranked[k - 1].score >= ranked[k].score);
    const Utterance body = v.encode(ranked[k].tokens);
    CHECK(ranked[k].backward == doctest::Approx(b.normalized_log_prob(h, body)));
  }
  // The candidate set depends only on the seed; lambda 0 orders it by forward score.
  const auto forward_only = mmi_candidates(fwd, b, v, h, 20, 0.0, 7, 6);
  CHECK(forward_only.size() == ranked.size());
  for (std::size_t k = 1; k < forward_only.size(); ++k) CHECK(forward_only[k - 1].forward >= forward_only[k].forward);
  CHECK_THROWS_AS(mmi_candidates(fwd, b, v, h, 0, 0.5, 7), std::invalid_argument);
}

TEST_CASE("skip-gram vectors are deterministic and cover the corpus") {
  const std::vector<RawDialogue> d{{{"a", "b", "c"}, {"b", "c", "d"}}, {{"a", "c"}, {"d", "d", "e"}}};
  SkipGramConfig c;
  c.dim = 6;
  c.epochs = 3;
  const WordVectors a = train_skipgram(d, c), b = train_skipgram(d, c);
  CHECK(a.dim() == 6);
  CHECK(a.size() == 5);
  for (const char* w : {"a", "b", "c", "d", "e"}) {
    REQUIRE(a.find(w) != nullptr);
    CHECK(*a.find(w) == *b.find(w));
    CHECK(a.find(w)->allFinite());
  }
  CHECK(a.find("zzz") == nullptr);
}

TEST_CASE("metric list parsing") {
  CHECK(parse_metric_list("all").size() == all_metric_names().size());
  CHECK(parse_metric_list("bleu-1,distinct-2") == std::set<std::string>{"bleu-1", "distinct-2"});
  CHECK(parse_metric_list("").empty());
  CHECK_THROWS_AS(parse_metric_list("bleu-4"), std::invalid_argument);
}

TEST_CASE("system evaluation report") {
  const Vocabulary v = word_vocab();
  NexusModel m(tiny_config(), 6);
  const auto flows = random_flows(20, 12, 2, 4, 4, 13);
  const auto inst = make_instances(flows);
  const BackwardModel b = untrained_backward(2);

  SUBCASE("no metrics gives an empty but valid report") {
    const MetricReport r = evaluate_system(m, v, inst, EvalConfig{});
    CHECK(r.metrics.empty());
    CHECK(r.config.at("test_instances") == std::to_string(inst.size()));
    CHECK(nlohmann::json::parse(r.to_json())["metrics"].empty());
  }
  SUBCASE("one entry per enabled metric and exact reruns") {
    EvalConfig c;
    c.metrics = {"distinct-1", "distinct-2", "bleu-1", "bleu-2", "bleu-3", "neg-pmi", "turns", "dull-rate"};
    c.bootstrap_resamples = 50;
    c.simulate_max_turns = 3;
    c.simulate_contexts = 5;
    EvalInputs in;
    in.backward = &b;
    const MetricReport r = evaluate_system(m, v, inst, c, in);
    CHECK(r.metrics.size() == c.metrics.size());
    for (const auto& [name, e] : r.metrics) {
      CHECK(c.metrics.count(name) == 1);
      CHECK(std::isfinite(e.value));
      if (e.interval) {
        CHECK(e.interval->lower <= e.value + 1e-12);
        CHECK(e.value <= e.interval->upper + 1e-12);
      }
    }
    CHECK(r.metrics.at("turns").value <= 3.0);
    const MetricReport again = evaluate_system(m, v, inst, c, in);
    CHECK(again.to_json() == r.to_json());

    const auto j = nlohmann::json::parse(r.to_json());
    CHECK(j["metrics"].size() == c.metrics.size());
    const std::string text = r.to_text();
    CHECK(text.rfind("metric\tvalue\tlower\tupper\tn\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == static_cast<long>(c.metrics.size() + 1));
  }
  SUBCASE("missing backward model or vectors is a warning") {
    EvalConfig c;
    c.metrics = {"neg-pmi", "embedding-average"};
    const MetricReport r = evaluate_system(m, v, inst, c);
    CHECK(r.metrics.empty());
    CHECK(r.warnings.size() == 2);
  }
}

TEST_CASE("adversuc on the topics corpus") {
  const Topics& t = topics();
  const DiscriminatorConfig dc;
  CoherenceDiscriminator disc(static_cast<int>(t.vocab.size()), dc);
  disc.fit(t.train);
  const double acc = disc.heldout_accuracy(t.test, 3);
  MESSAGE("held-out accuracy " << acc);
  REQUIRE(acc >= 0.7);

  std::vector<Utterance> gold, dull;
  for (const auto& s : t.test) {
    gold.push_back(s.target());
    dull.push_back(t.vocab.encode(std::string_view("i know")));
  }
  const AdverSucResult real = adversuc(disc, acc, t.test, gold);
  const AdverSucResult constant = adversuc(disc, acc, t.test, dull);
  MESSAGE("real-pair rate " << real.fool_rate << ", constant dull rate " << constant.fool_rate);
  CHECK(real.pairs == t.test.size());
  for (double r : {real.fool_rate, constant.fool_rate}) {
    CHECK(r >= 0.0);
    CHECK(r <= 1.0);
  }
  CHECK(constant.fool_rate < real.fool_rate);

  CHECK_THROWS_AS(adversuc(disc, 0.6, t.test, gold), UnreliableMetric);
  DiscriminatorConfig mismatched;
  mismatched.response_hidden = mismatched.context_hidden + 1;
  CHECK_THROWS_AS(CoherenceDiscriminator(static_cast<int>(t.vocab.size()), mismatched), std::invalid_argument);
  CHECK_THROWS_AS(adversuc(disc, acc, t.test, {}), std::invalid_argument);
}
