#pragma once

#include "nexus/corpus.hpp"
#include "nexus/layers.hpp"

#include <vector>

namespace nexus {

struct GenerationResult {
  Utterance tokens;  // EOS-terminated unless truncated at max_len
  double log_prob = 0.0;
  std::vector<double> per_token_log_probs;

  bool terminated() const { return !tokens.empty() && tokens.back() == special::kEos; }
  // Mean per-token log-probability; the ranking score for beams and candidates.
  double normalized_score() const;
  // Tokens without the trailing EOS.
  Utterance body() const;
};

// Tokens the decoder may emit. UNK, PAD, SOS and the utterance delimiter are
// never generated; reported log-probabilities still come from the full softmax.
bool generable(TokenId id);

// Concatenation [H~; c] fed to the decoder at every step.
Vector decoder_condition(const Vector& h_tilde, const Vector& code);

// Recurrent decoder p(u | H, c). Input at each step is [embedding(prev); condition]
// with a zero initial state.
class Decoder {
 public:
  Decoder(ParameterSet& params, Parameter& embedding, int condition_dim, int hidden_dim, Rng& rng);

  int condition_dim() const { return condition_dim_; }
  int vocab_size() const { return static_cast<int>(embedding_->value.cols()); }
  const Linear& output_layer() const { return output_; }

  // Per-column summed NLL of gold tokens followed by EOS (1 x B).
  Expr teacher_forced_nll(Graph& g, const Expr& condition,
                          const std::vector<const Utterance*>& gold) const;
  double teacher_forced_nll(const Vector& condition, const Utterance& gold) const;

  GenerationResult decode_greedy(const Vector& condition, int max_len) const;
  // Length-normalized beam search; results sorted by normalized score.
  std::vector<GenerationResult> decode_beam(const Vector& condition, int beam_size, int max_len) const;
  GenerationResult sample_decode(const Vector& condition, double temperature, Rng& rng,
                                 int max_len) const;

  // Full-vocabulary log-softmax after feeding prev tokens (V x K), advancing state.
  Matrix step_log_probs(Matrix& state, const std::vector<TokenId>& prev, const Vector& condition) const;

 private:
  Parameter* embedding_;
  int condition_dim_;
  GruCell cell_;
  Linear output_;
};

}  // namespace nexus
