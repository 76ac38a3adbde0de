#pragma once

#include "nexus/corpus.hpp"
#include "nexus/layers.hpp"

#include <span>
#include <utility>
#include <vector>

namespace nexus {

struct EncoderConfig {
  int vocab_size = 0;
  int embed_dim = 300;
  int utterance_hidden = 300;
  int context_hidden = 600;
  int code_dim = 100;

  // code_dim < context_hidden keeps the code from copying whole contexts.
  void validate() const;
};

enum class Direction { forward, backward };

// Graph-level encodings for a batch; column b belongs to instance b.
struct EncodedBatch {
  Expr h_tilde;
  Expr f_inclusive;
  Expr f_strict;  // zero column where the strict future is empty
  RowVector strict_present;
};

struct EncodedContext {
  Vector h_tilde;
  Vector f_tilde_inclusive;
  Vector f_tilde_strict;
  bool strict_future_present = false;
};

// Hierarchical encoders: E_f reads the history forwards, E_b reads the future
// backwards. Each owns an utterance-level and a dialogue-level recurrence;
// both share the model's embedding matrix (embed_dim x vocab).
class EncoderStack {
 public:
  EncoderStack(ParameterSet& params, Parameter& embedding, const EncoderConfig& config, Rng& rng,
               bool with_backward = true);

  const EncoderConfig& config() const { return config_; }
  bool has_backward() const { return with_backward_; }

  // Utterance vectors (utterance_hidden x N); EOS is appended to every input.
  Expr encode_utterances(Graph& g, const std::vector<const Utterance*>& utterances,
                         Direction direction) const;
  // H~ for each instance (context_hidden x B).
  Expr encode_histories(Graph& g, std::span<const ContextSplit> batch) const;
  EncodedBatch encode(Graph& g, std::span<const ContextSplit> batch) const;
  // H~ for a free-standing history (context_hidden x 1).
  Expr encode_history_utterances(Graph& g, const std::vector<Utterance>& history) const;

  Vector encode_utterance(const Utterance& tokens, Direction direction) const;
  Vector encode_history(const ContextSplit& split) const;
  // Second member is false (and the vector zero) for an empty strict future.
  std::pair<Vector, bool> encode_future(const ContextSplit& split, bool inclusive) const;
  EncodedContext encode_context(const ContextSplit& split) const;
  // One dialogue-level recurrence step.
  Vector context_step(Direction direction, const Vector& state, const Vector& utterance) const;

 private:
  // Runs cell over per-column index sequences into the columns of source;
  // returns the state after every step (shorter columns are padded).
  std::vector<Expr> run(Graph& g, const GruCell& cell, const Expr& source,
                        const std::vector<std::vector<int>>& sequences) const;

  Parameter* embedding_;
  EncoderConfig config_;
  bool with_backward_;
  GruCell fwd_utterance_, fwd_context_;
  GruCell bwd_utterance_, bwd_context_;
};

}  // namespace nexus
