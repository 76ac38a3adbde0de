#include "nexus/encoder_stack.hpp"

#include <map>
#include <stdexcept>

namespace nexus {

void EncoderConfig::validate() const {
  if (vocab_size <= special::kCount) throw std::invalid_argument("vocab_size too small");
  if (embed_dim <= 0 || utterance_hidden <= 0 || context_hidden <= 0 || code_dim <= 0) {
    throw std::invalid_argument("encoder dimensions must be positive");
  }
  if (code_dim >= context_hidden) {
    throw std::invalid_argument("code_dim must be smaller than context_hidden");
  }
}

EncoderStack::EncoderStack(ParameterSet& params, Parameter& embedding,
                           const EncoderConfig& config, Rng& rng, bool with_backward)
    : embedding_(&embedding), config_(config), with_backward_(with_backward) {
  config_.validate();
  if (embedding.value.rows() != config.embed_dim || embedding.value.cols() != config.vocab_size) {
    throw std::invalid_argument("embedding shape does not match encoder config");
  }
  fwd_utterance_ = GruCell(params, "encoder.forward.utterance", "encoder.forward",
                           config.embed_dim, config.utterance_hidden, rng);
  fwd_context_ = GruCell(params, "encoder.forward.context", "encoder.forward",
                         config.utterance_hidden, config.context_hidden, rng);
  if (with_backward_) {
    bwd_utterance_ = GruCell(params, "encoder.backward.utterance", "encoder.backward",
                             config.embed_dim, config.utterance_hidden, rng);
    bwd_context_ = GruCell(params, "encoder.backward.context", "encoder.backward",
                           config.utterance_hidden, config.context_hidden, rng);
  }
}

std::vector<Expr> EncoderStack::run(Graph& g, const GruCell& cell, const Expr& source,
                                    const std::vector<std::vector<int>>& sequences) const {
  std::size_t steps = 0;
  for (const auto& s : sequences) steps = std::max(steps, s.size());
  const auto batch = static_cast<Eigen::Index>(sequences.size());
  std::vector<Expr> states;
  states.reserve(steps);
  Expr h = cell.initial_state(g, batch);
  std::vector<int> idx(sequences.size());
  for (std::size_t t = 0; t < steps; ++t) {
    for (std::size_t b = 0; b < sequences.size(); ++b) {
      idx[b] = t < sequences[b].size() ? sequences[b][t] : -1;
    }
    h = cell.step(g, gather_cols(source, idx), h);
    states.push_back(h);
  }
  return states;
}

Expr EncoderStack::encode_utterances(Graph& g, const std::vector<const Utterance*>& utterances,
                                     Direction direction) const {
  if (direction == Direction::backward && !with_backward_) {
    throw std::logic_error("encoder stack built without the backward encoder");
  }
  std::vector<std::vector<int>> seqs;
  std::vector<int> lengths;
  seqs.reserve(utterances.size());
  for (const Utterance* u : utterances) {
    if (u->empty()) throw std::invalid_argument("cannot encode an empty utterance");
    std::vector<int> s(u->begin(), u->end());
    s.push_back(special::kEos);
    lengths.push_back(static_cast<int>(s.size()));
    seqs.push_back(std::move(s));
  }
  const GruCell& cell = direction == Direction::forward ? fwd_utterance_ : bwd_utterance_;
  auto states = run(g, cell, g.parameter(*embedding_), seqs);
  return pick_steps(states, lengths);
}

Expr EncoderStack::encode_histories(Graph& g, std::span<const ContextSplit> batch) const {
  std::map<std::pair<const DialogueFlow*, int>, int> column;
  std::vector<const Utterance*> utts;
  std::vector<std::vector<int>> seqs(batch.size());
  std::vector<int> lengths(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ContextSplit& s = batch[b];
    if (s.index < 2) throw std::invalid_argument("history needs target index >= 2");
    for (int k = 1; k < s.index; ++k) {
      auto [it, inserted] = column.try_emplace({s.flow, k}, static_cast<int>(utts.size()));
      if (inserted) utts.push_back(&s.utterance(k));
      seqs[b].push_back(it->second);
    }
    lengths[b] = s.history_length();
  }
  Expr vecs = encode_utterances(g, utts, Direction::forward);
  return pick_steps(run(g, fwd_context_, vecs, seqs), lengths);
}

EncodedBatch EncoderStack::encode(Graph& g, std::span<const ContextSplit> batch) const {
  if (!with_backward_) throw std::logic_error("encoder stack built without the backward encoder");
  EncodedBatch out;
  out.h_tilde = encode_histories(g, batch);

  std::map<std::pair<const DialogueFlow*, int>, int> column;
  std::vector<const Utterance*> utts;
  std::vector<std::vector<int>> seqs(batch.size());
  std::vector<int> inclusive(batch.size()), strict(batch.size());
  out.strict_present = RowVector::Zero(static_cast<Eigen::Index>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const ContextSplit& s = batch[b];
    for (int k = s.turns(); k >= s.index; --k) {
      auto [it, inserted] = column.try_emplace({s.flow, k}, static_cast<int>(utts.size()));
      if (inserted) utts.push_back(&s.utterance(k));
      seqs[b].push_back(it->second);
    }
    inclusive[b] = s.inclusive_future_length();
    strict[b] = s.strict_future_length();
    out.strict_present(static_cast<Eigen::Index>(b)) = s.has_strict_future() ? 1.0 : 0.0;
  }
  Expr vecs = encode_utterances(g, utts, Direction::backward);
  auto states = run(g, bwd_context_, vecs, seqs);
  out.f_inclusive = pick_steps(states, inclusive);
  out.f_strict = pick_steps(states, strict);
  return out;
}

Expr EncoderStack::encode_history_utterances(Graph& g, const std::vector<Utterance>& history) const {
  if (history.empty()) throw std::invalid_argument("history must contain at least one utterance");
  std::vector<const Utterance*> utts;
  std::vector<std::vector<int>> seqs(1);
  for (std::size_t k = 0; k < history.size(); ++k) {
    utts.push_back(&history[k]);
    seqs[0].push_back(static_cast<int>(k));
  }
  Expr vecs = encode_utterances(g, utts, Direction::forward);
  return pick_steps(run(g, fwd_context_, vecs, seqs), {static_cast<int>(history.size())});
}

Vector EncoderStack::encode_utterance(const Utterance& tokens, Direction direction) const {
  Graph g(false);
  return encode_utterances(g, {&tokens}, direction).value().col(0);
}

Vector EncoderStack::encode_history(const ContextSplit& split) const {
  Graph g(false);
  return encode_histories(g, std::span<const ContextSplit>(&split, 1)).value().col(0);
}

std::pair<Vector, bool> EncoderStack::encode_future(const ContextSplit& split, bool inclusive) const {
  const EncodedContext ctx = encode_context(split);
  if (inclusive) return {ctx.f_tilde_inclusive, true};
  return {ctx.f_tilde_strict, ctx.strict_future_present};
}

EncodedContext EncoderStack::encode_context(const ContextSplit& split) const {
  Graph g(false);
  EncodedBatch e = encode(g, std::span<const ContextSplit>(&split, 1));
  return {e.h_tilde.value().col(0), e.f_inclusive.value().col(0), e.f_strict.value().col(0),
          split.has_strict_future()};
}

Vector EncoderStack::context_step(Direction direction, const Vector& state,
                                  const Vector& utterance) const {
  Graph g(false);
  const GruCell& cell = direction == Direction::forward ? fwd_context_ : bwd_context_;
  Expr h = cell.step(g, g.constant(utterance), g.constant(state));
  return h.value().col(0);
}

}  // namespace nexus
