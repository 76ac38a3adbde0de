#include "nexus/evaluation.hpp"

#include "nexus/checkpoint.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace nexus {

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t k) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (k + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Tokens to_tokens(const Vocabulary& vocab, const Utterance& u) {
  Tokens t;
  for (TokenId id : u) {
    if (id == special::kEos) break;
    t.push_back(vocab.token(id));
  }
  return t;
}

}  // namespace

std::vector<Utterance> history_of(const ContextSplit& split) {
  std::vector<Utterance> h;
  for (int k = 1; k < split.index; ++k) h.push_back(split.utterance(k));
  return h;
}

Utterance flatten_context(const std::vector<Utterance>& history, int max_tokens) {
  if (max_tokens < 1) throw std::invalid_argument("max_tokens must be positive");
  Utterance flat;
  for (std::size_t k = 0; k < history.size(); ++k) {
    if (k) flat.push_back(special::kEou);
    flat.insert(flat.end(), history[k].begin(), history[k].end());
  }
  if (static_cast<int>(flat.size()) > max_tokens) {
    flat.erase(flat.begin(), flat.end() - max_tokens);
  }
  return flat;
}

// ---- backward model ----------------------------------------------------------

std::vector<DialogueFlow> backward_flows(std::span<const ContextSplit> instances, int max_context_tokens) {
  std::vector<DialogueFlow> flows;
  flows.reserve(instances.size());
  for (const auto& s : instances) {
    DialogueFlow f;
    f.utterances = {s.target(), flatten_context(history_of(s), max_context_tokens)};
    flows.push_back(std::move(f));
  }
  return flows;
}

BackwardModel::BackwardModel(std::unique_ptr<NexusModel> model, int max_context_tokens)
    : model_(std::move(model)), max_context_tokens_(max_context_tokens) {
  if (!model_) throw std::invalid_argument("backward model is null");
  if (model_->code_enabled()) throw std::invalid_argument("backward model must have the code path disabled");
  if (max_context_tokens_ < 1) throw std::invalid_argument("max_context_tokens must be positive");
}

double BackwardModel::neg_pmi(const std::vector<Utterance>& history, const Utterance& response) const {
  if (response.empty()) throw std::invalid_argument("neg_pmi of an empty response");
  DialogueFlow flow;
  flow.utterances = {response, flatten_context(history, max_context_tokens_)};
  const Vector h = model_->encoders().encode_history(ContextSplit{&flow, 2});
  return model_->decoder().teacher_forced_nll(model_->condition(h, Vector()), flow.utterances[1]);
}

double BackwardModel::normalized_log_prob(const std::vector<Utterance>& history,
                                          const Utterance& response) const {
  const auto len = flatten_context(history, max_context_tokens_).size() + 1;
  return -neg_pmi(history, response) / static_cast<double>(len);
}

void BackwardModel::save(const std::string& dir, const Vocabulary& vocab) const {
  save_checkpoint(dir, *model_, vocab, 0, {{"max_context_tokens", max_context_tokens_}});
}

BackwardModel BackwardModel::load(const std::string& dir, const Vocabulary& vocab) {
  LoadedCheckpoint ck = load_checkpoint(dir);
  if (!(ck.vocab == vocab)) throw CheckpointError("backward model vocabulary differs: " + dir);
  int max_ctx = kBackwardContextTokens;
  if (auto it = ck.manifest.metrics.find("max_context_tokens"); it != ck.manifest.metrics.end()) {
    max_ctx = static_cast<int>(it->second);
  }
  return BackwardModel(std::move(ck.model), max_ctx);
}

BackwardModel train_backward_model(const TrainConfig& config_in, std::span<const ContextSplit> train,
                                   std::span<const ContextSplit> valid, int max_context_tokens) {
  TrainConfig config = config_in;
  config.model.code_enabled = false;
  const auto train_flows = backward_flows(train, max_context_tokens);
  const auto valid_flows = backward_flows(valid, max_context_tokens);
  const auto train_inst = make_instances(train_flows);
  const auto valid_inst = make_instances(valid_flows);
  auto model = std::make_unique<NexusModel>(config.model, config.seed);
  if (valid_inst.empty()) config.eval_every = 0;
  train_model(*model, config, train_inst, valid_inst);
  return BackwardModel(std::move(model), max_context_tokens);
}

// ---- word vectors ----------------------------------------------------------------

WordVectors train_skipgram(const std::vector<RawDialogue>& dialogues, const SkipGramConfig& config) {
  if (config.dim < 1 || config.window < 1 || config.negatives < 0 || config.epochs < 1) {
    throw std::invalid_argument("bad skip-gram configuration");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& d : dialogues) {
    for (const auto& u : d) {
      for (const auto& w : u) ++counts[w];
    }
  }
  std::map<std::string, int> index;
  std::vector<std::string> words;
  std::vector<double> weights;
  for (const auto& [w, c] : counts) {
    if (c < config.min_count) continue;
    index[w] = static_cast<int>(words.size());
    words.push_back(w);
    weights.push_back(std::pow(static_cast<double>(c), 0.75));
  }
  WordVectors out(config.dim);
  if (words.empty()) return out;

  std::vector<std::vector<int>> sentences;
  for (const auto& d : dialogues) {
    for (const auto& u : d) {
      std::vector<int> s;
      for (const auto& w : u) {
        if (auto it = index.find(w); it != index.end()) s.push_back(it->second);
      }
      if (s.size() > 1) sentences.push_back(std::move(s));
    }
  }

  Rng rng(config.seed);
  const auto V = static_cast<Eigen::Index>(words.size());
  std::uniform_real_distribution<double> init(-0.5 / config.dim, 0.5 / config.dim);
  Matrix in(config.dim, V);
  for (Eigen::Index j = 0; j < V; ++j) {
    for (Eigen::Index i = 0; i < in.rows(); ++i) in(i, j) = init(rng);
  }
  Matrix out_w = Matrix::Zero(config.dim, V);
  std::discrete_distribution<int> noise(weights.begin(), weights.end());

  std::size_t total_pairs = 0;
  for (const auto& s : sentences) total_pairs += s.size();
  const double total_work = static_cast<double>(total_pairs) * config.epochs;
  double done = 0.0;
  const auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  Vector grad_in(config.dim);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (const auto& s : sentences) {
      for (std::size_t pos = 0; pos < s.size(); ++pos) {
        const double lr = std::max(config.learning_rate * (1.0 - done / total_work), config.learning_rate * 1e-4);
        done += 1.0;
        const int center = s[pos];
        const std::size_t lo = pos >= static_cast<std::size_t>(config.window) ? pos - config.window : 0;
        const std::size_t hi = std::min(s.size() - 1, pos + static_cast<std::size_t>(config.window));
        for (std::size_t q = lo; q <= hi; ++q) {
          if (q == pos) continue;
          grad_in.setZero();
          for (int k = 0; k <= config.negatives; ++k) {
            const int target = k == 0 ? s[q] : noise(rng);
            if (k > 0 && target == s[q]) continue;
            const double label = k == 0 ? 1.0 : 0.0;
            const double g = (label - sigmoid(in.col(center).dot(out_w.col(target)))) * lr;
            grad_in += g * out_w.col(target);
            out_w.col(target) += g * in.col(center);
          }
          in.col(center) += grad_in;
        }
      }
    }
  }
  for (Eigen::Index j = 0; j < V; ++j) out.set(words[static_cast<std::size_t>(j)], in.col(j));
  return out;
}

// ---- MMI ---------------------------------------------------------------------------

std::vector<RerankCandidate> mmi_candidates(const NexusModel& forward, const BackwardModel& backward,
                                            const Vocabulary& vocab,
                                            const std::vector<Utterance>& history, int n,
                                            double lambda, std::uint64_t seed, int max_len) {
  if (n < 1) throw std::invalid_argument("candidate count must be positive");
  const Vector h = encode_free_history(forward, history);
  Rng rng(seed);
  std::optional<GaussianParams> prior;
  if (forward.code_enabled()) prior = forward.code_space().prior(h);
  std::vector<RerankCandidate> cands;
  for (int k = 0; k < n; ++k) {
    const Vector code = prior ? sample_reparam(*prior, rng).c : Vector();
    const GenerationResult r = forward.decoder().sample_decode(forward.condition(h, code), 1.0, rng, max_len);
    const Utterance body = r.body();
    if (body.empty()) continue;
    RerankCandidate c;
    c.tokens = to_tokens(vocab, body);
    c.forward = r.normalized_score();
    c.backward = backward.normalized_log_prob(history, body);
    cands.push_back(std::move(c));
  }
  return mmi_rerank(std::move(cands), lambda);
}

// ---- AdverSuc ------------------------------------------------------------------------

CoherenceDiscriminator::CoherenceDiscriminator(int vocab_size, const DiscriminatorConfig& config)
    : config_(config) {
  Rng rng(config.seed);
  EncoderConfig ec{vocab_size, config.embed_dim, config.utterance_hidden, config.context_hidden, 1};
  ec.validate();
  embedding_ = &params_.add("embedding", "embedding", fan_in_uniform(config.embed_dim, vocab_size, rng));
  embedding_->value.col(special::kPad).setZero();
  context_ = std::make_unique<EncoderStack>(params_, *embedding_, ec, rng, false);
  response_ = GruCell(params_, "discriminator.response", "discriminator", config.embed_dim,
                      config.response_hidden, rng);
  if (config.response_hidden != config.context_hidden) {
    throw std::invalid_argument("discriminator response_hidden must equal context_hidden");
  }
  head_ = Mlp3(params_, "discriminator.head", "discriminator", 3 * config.context_hidden, config.head_hidden, 2, rng);
}

Expr CoherenceDiscriminator::logits(Graph& g, std::span<const ContextSplit> contexts,
                                    const std::vector<const Utterance*>& responses) const {
  if (contexts.size() != responses.size()) throw std::invalid_argument("context/response count mismatch");
  const Expr h = context_->encode_histories(g, contexts);
  const Expr emb = g.parameter(*embedding_);
  std::vector<std::vector<int>> seqs;
  std::size_t steps = 0;
  for (const auto* r : responses) {
    std::vector<int> s(r->begin(), r->end());
    s.push_back(special::kEos);
    steps = std::max(steps, s.size());
    seqs.push_back(std::move(s));
  }
  Expr state = response_.initial_state(g, static_cast<Eigen::Index>(responses.size()));
  std::vector<Expr> states;
  std::vector<int> idx(seqs.size());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < seqs.size(); ++b) idx[b] = t < seqs[b].size() ? seqs[b][t] : -1;
    state = response_.step(g, gather_cols(emb, idx), state);
    states.push_back(state);
  }
  std::vector<int> last(seqs.size());
  for (std::size_t b = 0; b < seqs.size(); ++b) last[b] = static_cast<int>(seqs[b].size());
  const Expr r = pick_steps(states, last);
  return head_(g, concat_rows({h, r, cmul(h, r)}));
}

std::vector<double> CoherenceDiscriminator::predict(std::span<const ContextSplit> contexts,
                                                    const std::vector<const Utterance*>& responses) const {
  std::vector<double> out;
  constexpr std::size_t kChunk = 256;
  for (std::size_t start = 0; start < contexts.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, contexts.size() - start);
    Graph g(false);
    const std::vector<const Utterance*> rs(responses.begin() + static_cast<std::ptrdiff_t>(start),
                                           responses.begin() + static_cast<std::ptrdiff_t>(start + n));
    const Matrix& l = logits(g, contexts.subspan(start, n), rs).value();
    for (Eigen::Index j = 0; j < l.cols(); ++j) out.push_back(1.0 / (1.0 + std::exp(l(0, j) - l(1, j))));
  }
  return out;
}

namespace {

// Index of a response from an instance whose target differs from instance k's.
std::size_t random_partner(std::span<const ContextSplit> data, std::size_t k, Rng& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
  for (int tries = 0; tries < 20; ++tries) {
    const std::size_t j = pick(rng);
    if (j != k && data[j].target() != data[k].target()) return j;
  }
  return (k + 1) % data.size();
}

}  // namespace

void CoherenceDiscriminator::fit(std::span<const ContextSplit> train) {
  if (train.size() < 2) throw std::invalid_argument("discriminator needs at least 2 training instances");
  Rng rng(config_.seed ^ 0xd15c);
  Adam adam(params_, config_.learning_rate, 0.9, 0.999, 1e-8);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t half = std::max<std::size_t>(1, static_cast<std::size_t>(config_.batch_size) / 2);
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += half) {
      const std::size_t n = std::min(half, order.size() - start);
      std::vector<ContextSplit> ctx;
      std::vector<const Utterance*> resp;
      std::vector<int> labels;
      for (std::size_t k = 0; k < n; ++k) {
        const std::size_t i = order[start + k];
        ctx.push_back(train[i]);
        resp.push_back(&train[i].target());
        labels.push_back(1);
        ctx.push_back(train[i]);
        resp.push_back(&train[random_partner(train, i, rng)].target());
        labels.push_back(0);
      }
      params_.zero_grad();
      Graph g;
      const Expr l = logits(g, ctx, resp);
      const RowVector w = RowVector::Constant(static_cast<Eigen::Index>(labels.size()), 1.0 / labels.size());
      g.backward(sum_all(softmax_xent(l, labels, w)));
      clip_gradients(params_, 5.0);
      adam.step(params_);
    }
  }
}

double CoherenceDiscriminator::heldout_accuracy(std::span<const ContextSplit> heldout, std::uint64_t seed) const {
  if (heldout.size() < 2) throw std::invalid_argument("held-out accuracy needs at least 2 instances");
  Rng rng(seed);
  std::vector<ContextSplit> ctx;
  std::vector<const Utterance*> resp;
  std::vector<int> labels;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    ctx.push_back(heldout[i]);
    resp.push_back(&heldout[i].target());
    labels.push_back(1);
    ctx.push_back(heldout[i]);
    resp.push_back(&heldout[random_partner(heldout, i, rng)].target());
    labels.push_back(0);
  }
  const auto p = predict(ctx, resp);
  std::size_t correct = 0;
  for (std::size_t k = 0; k < p.size(); ++k) correct += (p[k] > 0.5) == (labels[k] == 1);
  return static_cast<double>(correct) / static_cast<double>(p.size());
}

AdverSucResult adversuc(const CoherenceDiscriminator& discriminator, double heldout_accuracy,
                        std::span<const ContextSplit> contexts, const std::vector<Utterance>& generated,
                        double min_accuracy) {
  if (heldout_accuracy < min_accuracy) {
    std::ostringstream msg;
    msg << "discriminator held-out accuracy " << heldout_accuracy << " is below " << min_accuracy;
    throw UnreliableMetric(msg.str());
  }
  if (contexts.size() != generated.size()) throw std::invalid_argument("context/response count mismatch");
  AdverSucResult r;
  r.discriminator_accuracy = heldout_accuracy;
  r.pairs = generated.size();
  if (generated.empty()) return r;
  std::vector<const Utterance*> resp;
  for (const auto& u : generated) resp.push_back(&u);
  const auto p = discriminator.predict(contexts, resp);
  const auto fooled = std::count_if(p.begin(), p.end(), [](double v) { return v > 0.5; });
  r.fool_rate = static_cast<double>(fooled) / static_cast<double>(p.size());
  return r;
}

// ---- system evaluation --------------------------------------------------------------

const std::vector<std::string>& all_metric_names() {
  static const std::vector<std::string> names{
      "distinct-1",        "distinct-2",       "bleu-1",  "bleu-2",  "bleu-3",
      "embedding-average", "embedding-greedy", "embedding-extrema",  "neg-pmi",
      "adversuc",          "turns",            "dull-rate"};
  return names;
}

std::set<std::string> parse_metric_list(const std::string& text) {
  const auto& known = all_metric_names();
  if (text == "all") return {known.begin(), known.end()};
  std::set<std::string> out;
  std::istringstream in(text);
  std::string name;
  while (std::getline(in, name, ',')) {
    if (name.empty()) continue;
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      throw std::invalid_argument("unknown metric: " + name);
    }
    out.insert(name);
  }
  return out;
}

std::string MetricReport::to_json() const {
  nlohmann::ordered_json j;
  j["metrics"] = nlohmann::ordered_json::object();
  for (const auto& [name, m] : metrics) {
    nlohmann::ordered_json e{{"value", m.value}, {"n", m.n}};
    if (m.interval) e["interval"] = {m.interval->lower, m.interval->upper};
    j["metrics"][name] = e;
  }
  j["warnings"] = warnings;
  j["config"] = config;
  return j.dump(2);
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  out.precision(6);
  out << "metric\tvalue\tlower\tupper\tn\n";
  for (const auto& [name, m] : metrics) {
    out << name << '\t' << m.value << '\t';
    if (m.interval) {
      out << m.interval->lower << '\t' << m.interval->upper;
    } else {
      out << "-\t-";
    }
    out << '\t' << m.n << '\n';
  }
  for (const auto& w : warnings) out << "# warning: " << w << '\n';
  return out.str();
}

GeneratedSet generate_responses(const NexusModel& model, const Vocabulary& vocab,
                                std::span<const ContextSplit> test, const DecodeSettings& settings,
                                std::uint64_t seed) {
  GeneratedSet out;
  for (std::size_t k = 0; k < test.size(); ++k) {
    const Reply r = generate_reply(model, vocab, history_of(test[k]), settings, mix_seed(seed, k));
    out.responses.push_back(r.best.body());
    out.tokens.push_back(to_tokens(vocab, out.responses.back()));
  }
  return out;
}

MetricReport evaluate_system(const NexusModel& model, const Vocabulary& vocab,
                             std::span<const ContextSplit> test, const EvalConfig& config,
                             const EvalInputs& inputs) {
  MetricReport report;
  auto& cfg = report.config;
  cfg["decode_mode"] = to_string(config.decode.mode);
  cfg["beam_size"] = std::to_string(config.decode.beam_size);
  cfg["temperature"] = std::to_string(config.decode.temperature);
  cfg["n_prior_samples"] = std::to_string(config.decode.n_prior_samples);
  cfg["max_len"] = std::to_string(config.decode.max_len);
  cfg["seed"] = std::to_string(config.seed);
  cfg["bootstrap_resamples"] = std::to_string(config.bootstrap_resamples);
  cfg["reference_threshold"] = std::to_string(config.reference_threshold);
  cfg["code_enabled"] = model.code_enabled() ? "true" : "false";
  cfg["test_instances"] = std::to_string(test.size());
  cfg["word_vectors"] = inputs.vectors ? inputs.vector_source : "none";
  if (config.metrics.empty() || test.empty()) return report;

  const auto wants = [&](const std::string& m) { return config.metrics.count(m) > 0; };
  const GeneratedSet gen = generate_responses(model, vocab, test, config.decode, config.seed);
  const std::size_t n = test.size();

  for (int k : {1, 2}) {
    const std::string name = "distinct-" + std::to_string(k);
    if (wants(name)) report.metrics[name] = {distinct_n(gen.tokens, k), std::nullopt, n};
  }

  std::vector<std::vector<Tokens>> refs(n);
  for (std::size_t k = 0; k < n; ++k) {
    refs[k].push_back(to_tokens(vocab, test[k].target()));
    if (inputs.references) {
      if (inputs.references->size() != n) throw std::invalid_argument("reference list size mismatch");
      for (const auto& r : (*inputs.references)[k]) refs[k].push_back(r);
    }
  }
  for (int order = 1; order <= 3; ++order) {
    const std::string name = "bleu-" + std::to_string(order);
    if (!wants(name)) continue;
    const auto stat = [&](const std::vector<std::size_t>& idx) {
      std::vector<Tokens> h;
      std::vector<std::vector<Tokens>> r;
      for (auto i : idx) {
        h.push_back(gen.tokens[i]);
        r.push_back(refs[i]);
      }
      return corpus_bleu(h, r, order);
    };
    if (n >= 2) {
      const auto b = bootstrap_ci(n, stat, config.bootstrap_resamples, 0.95, config.seed);
      report.metrics[name] = {b.point, b.interval, n};
    } else {
      report.metrics[name] = {corpus_bleu(gen.tokens, refs, order), std::nullopt, n};
    }
  }

  if (wants("embedding-average") || wants("embedding-greedy") || wants("embedding-extrema")) {
    if (!inputs.vectors) {
      report.warnings.push_back("embedding metrics disabled: no word vectors");
    } else {
      std::vector<Tokens> gold;
      for (std::size_t k = 0; k < n; ++k) gold.push_back(refs[k].front());
      const EmbeddingMetrics e = embedding_metrics(gen.tokens, gold, *inputs.vectors);
      const auto put = [&](const std::string& name, const MeanWithInterval& m) {
        if (wants(name)) report.metrics[name] = {m.mean, m.interval, e.pairs};
      };
      put("embedding-average", e.average);
      put("embedding-greedy", e.greedy);
      put("embedding-extrema", e.extrema);
      if (e.skipped) report.warnings.push_back(std::to_string(e.skipped) + " pairs skipped: no in-vocabulary words");
    }
  }

  if (wants("neg-pmi")) {
    if (!inputs.backward) {
      report.warnings.push_back("neg-pmi disabled: no backward model");
    } else {
      std::vector<double> v;
      for (std::size_t k = 0; k < n; ++k) {
        if (gen.responses[k].empty()) continue;
        v.push_back(inputs.backward->neg_pmi(history_of(test[k]), gen.responses[k]));
      }
      const MeanWithInterval m = mean_interval(v);
      report.metrics["neg-pmi"] = {m.mean, m.interval, v.size()};
    }
  }

  if (wants("adversuc")) {
    if (inputs.discriminator_train.size() < 2 || inputs.discriminator_heldout.size() < 2) {
      report.warnings.push_back("adversuc disabled: no discriminator training data");
    } else {
      CoherenceDiscriminator disc(static_cast<int>(vocab.size()), config.discriminator);
      disc.fit(inputs.discriminator_train);
      const double acc = disc.heldout_accuracy(inputs.discriminator_heldout, config.seed);
      cfg["discriminator_accuracy"] = std::to_string(acc);
      try {
        const AdverSucResult r = adversuc(disc, acc, test, gen.responses, config.discriminator.min_accuracy);
        report.metrics["adversuc"] = {r.fool_rate, std::nullopt, r.pairs};
      } catch (const UnreliableMetric& e) {
        report.warnings.push_back(std::string("adversuc refused: ") + e.what());
      }
    }
  }

  if (wants("turns")) {
    std::vector<double> turns;
    const std::size_t m = std::min(n, config.simulate_contexts);
    for (std::size_t k = 0; k < m; ++k) {
      const SimulationResult r = self_simulate(model, vocab, history_of(test[k]), config.simulate_max_turns,
                                               config.decode, mix_seed(config.seed ^ 0x7u, k));
      turns.push_back(r.turn_count);
    }
    const MeanWithInterval mt = mean_interval(turns);
    report.metrics["turns"] = {mt.mean, mt.interval, turns.size()};
    cfg["simulate_max_turns"] = std::to_string(config.simulate_max_turns);
  }

  if (wants("dull-rate")) {
    const auto dull = std::count_if(gen.tokens.begin(), gen.tokens.end(), [](const Tokens& t) { return is_dull(t); });
    report.metrics["dull-rate"] = {static_cast<double>(dull) / static_cast<double>(n), std::nullopt, n};
  }
  return report;
}

}  // namespace nexus
