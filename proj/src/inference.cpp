#include "nexus/inference.hpp"

#include "nexus/evaluation.hpp"
#include "nexus/metrics.hpp"

#include <cstdio>
#include <stdexcept>

namespace nexus {

std::string to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::greedy: return "greedy";
    case DecodeMode::beam: return "beam";
    case DecodeMode::sample: return "sample";
  }
  return "greedy";
}

DecodeMode parse_decode_mode(const std::string& text) {
  if (text == "greedy") return DecodeMode::greedy;
  if (text == "beam") return DecodeMode::beam;
  if (text == "sample") return DecodeMode::sample;
  throw std::invalid_argument("decode mode must be greedy, beam or sample: " + text);
}

void DecodeSettings::validate() const {
  if (beam_size < 1 || beam_size > 10) throw std::invalid_argument("beam_size must lie in [1, 10]");
  if (!(temperature >= 0.1 && temperature <= 2.0)) {
    throw std::invalid_argument("temperature must lie in [0.1, 2.0]");
  }
  if (n_prior_samples < 1 || n_prior_samples > 10) {
    throw std::invalid_argument("n_prior_samples must lie in [1, 10]");
  }
  if (max_len < 1 || max_len > 100) throw std::invalid_argument("max_len must lie in [1, 100]");
}

Vector encode_free_history(const NexusModel& model, const std::vector<Utterance>& history) {
  if (history.empty()) throw std::invalid_argument("cannot reply to an empty history");
  const std::size_t start = history.size() > kHistoryWindow ? history.size() - kHistoryWindow : 0;
  DialogueFlow flow;
  flow.utterances.assign(history.begin() + static_cast<std::ptrdiff_t>(start), history.end());
  for (const auto& u : flow.utterances) {
    if (u.empty()) throw std::invalid_argument("history contains an empty utterance");
  }
  // Placeholder target; only u_1..u_{i-1} are read.
  flow.utterances.push_back({special::kEos});
  return model.encoders().encode_history(ContextSplit{&flow, static_cast<int>(flow.size())});
}

Reply generate_reply(const NexusModel& model, const Vocabulary& vocab,
                     const std::vector<Utterance>& history, const DecodeSettings& settings,
                     std::uint64_t seed, const BackwardModel* backward) {
  settings.validate();
  const Vector h = encode_free_history(model, history);
  Rng rng(seed);
  Reply reply;
  reply.seed = seed;
  std::optional<GaussianParams> prior;
  if (model.code_enabled()) prior = model.code_space().prior(h);
  for (int k = 0; k < settings.n_prior_samples; ++k) {
    const Vector code = prior ? sample_reparam(*prior, rng).c : Vector();
    const Vector cond = model.condition(h, code);
    const Decoder& dec = model.decoder();
    switch (settings.mode) {
      case DecodeMode::greedy:
        reply.candidates.push_back(dec.decode_greedy(cond, settings.max_len));
        break;
      case DecodeMode::beam:
        reply.candidates.push_back(dec.decode_beam(cond, settings.beam_size, settings.max_len).front());
        break;
      case DecodeMode::sample:
        reply.candidates.push_back(dec.sample_decode(cond, settings.temperature, rng, settings.max_len));
        break;
    }
  }
  std::size_t best = 0;
  for (std::size_t k = 1; k < reply.candidates.size(); ++k) {
    if (reply.candidates[k].normalized_score() > reply.candidates[best].normalized_score()) best = k;
  }
  reply.best = reply.candidates[best];
  reply.text = vocab.decode(reply.best.body());
  reply.is_dull = is_dull(std::string_view(reply.text));
  if (backward && !reply.best.body().empty()) reply.neg_pmi = backward->neg_pmi(history, reply.best.body());
  return reply;
}

Utterance encode_user_text(const Vocabulary& vocab, const std::string& text) {
  Tokens tokens = normalize_for_matching(text);
  if (tokens.empty()) throw std::invalid_argument("utterance is empty");
  if (tokens.size() > kMaxInputTokens) tokens.resize(kMaxInputTokens);
  return vocab.encode(tokens);
}

namespace {

// Seeds stay below 2^53 so they survive a round trip through JSON numbers.
std::uint64_t draw_seed(Rng& rng) { return rng() >> 11; }

Turn model_turn(const Reply& r, bool simulated) {
  Turn t;
  t.speaker = "model";
  t.text = r.text;
  t.is_dull = r.is_dull;
  t.neg_pmi = r.neg_pmi;
  t.log_prob = r.log_prob();
  t.seed = r.seed;
  t.simulated = simulated;
  return t;
}

}  // namespace

SimulationResult self_simulate(const NexusModel& model, const Vocabulary& vocab,
                               const std::vector<Utterance>& seed_context, int max_turns,
                               const DecodeSettings& settings, std::uint64_t seed,
                               const BackwardModel* backward) {
  if (max_turns < 1) throw std::invalid_argument("max_turns must be >= 1");
  SimulationResult out;
  std::vector<Utterance> history = seed_context;
  Rng rng(seed);
  out.stop_reason = "max_turns";
  for (int k = 0; k < max_turns; ++k) {
    const Reply r = generate_reply(model, vocab, history, settings, draw_seed(rng), backward);
    out.transcript.push_back(model_turn(r, true));
    out.generated.push_back(r.best.body());
    if (r.best.body().empty()) {
      out.stop_reason = "empty";
      break;
    }
    if (r.is_dull) {
      out.stop_reason = "dull";
      break;
    }
    ++out.turn_count;
    history.push_back(r.best.body());
  }
  return out;
}

ChatService::ChatService(const NexusModel& model, const Vocabulary& vocab, std::uint64_t seed,
                         const BackwardModel* backward)
    : model_(model), vocab_(vocab), backward_(backward), id_rng_(seed ^ 0x9e3779b97f4a7c15ULL), seed_(seed) {}

std::string ChatService::create_session(std::optional<DecodeSettings> settings) {
  DecodeSettings s = settings.value_or(DecodeSettings{});
  s.validate();
  std::lock_guard lock(mu_);
  std::string id;
  do {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(id_rng_()));
    id = buf;
  } while (sessions_.count(id));
  auto session = std::make_unique<Session>();
  session->settings = s;
  session->rng.seed(seed_ + 0x632be59bd9b4e019ULL * ++created_);
  sessions_.emplace(id, std::move(session));
  return id;
}

ChatService::Session& ChatService::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session: " + id);
  return *it->second;
}

Turn ChatService::respond(const std::string& id, const std::string& text,
                          std::optional<DecodeSettings> settings) {
  Session& s = find(id);
  const Utterance user = encode_user_text(vocab_, text);
  if (settings) settings->validate();
  std::lock_guard lock(s.mu);
  if (settings) s.settings = *settings;
  s.history.push_back(user);
  Turn u;
  u.speaker = "user";
  u.text = text;
  u.is_dull = is_dull(std::string_view(text));
  s.turns.push_back(u);

  const Reply r = generate_reply(model_, vocab_, s.history, s.settings, draw_seed(s.rng), backward_);
  Turn t = model_turn(r, false);
  s.turns.push_back(t);
  // An empty reply still occupies its turn; the encoder sees it as a bare EOS.
  s.history.push_back(r.best.body().empty() ? Utterance{special::kEos} : r.best.body());
  return t;
}

SimulationResult ChatService::simulate(const std::string& id, int max_turns) {
  Session& s = find(id);
  if (max_turns < 1) throw std::invalid_argument("max_turns must be >= 1");
  std::lock_guard lock(s.mu);
  if (s.history.empty()) throw std::invalid_argument("simulation needs at least one utterance");
  SimulationResult r = self_simulate(model_, vocab_, s.history, max_turns, s.settings, draw_seed(s.rng), backward_);
  for (const auto& t : r.transcript) s.turns.push_back(t);
  for (const auto& u : r.generated) s.history.push_back(u.empty() ? Utterance{special::kEos} : u);
  return r;
}

std::vector<Turn> ChatService::transcript(const std::string& id) const {
  Session& s = find(id);
  std::lock_guard lock(s.mu);
  return s.turns;
}

DecodeSettings ChatService::settings(const std::string& id) const {
  Session& s = find(id);
  std::lock_guard lock(s.mu);
  return s.settings;
}

std::size_t ChatService::session_count() const {
  std::lock_guard lock(mu_);
  return sessions_.size();
}

}  // namespace nexus
