#pragma once

#include "nexus/model.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace nexus {

class BackwardModel;

// Only the most recent utterances are encoded when replying.
inline constexpr std::size_t kHistoryWindow = 10;
inline constexpr std::size_t kMaxInputTokens = 100;

enum class DecodeMode { greedy, beam, sample };

std::string to_string(DecodeMode mode);
DecodeMode parse_decode_mode(const std::string& text);

struct DecodeSettings {
  DecodeMode mode = DecodeMode::greedy;
  int beam_size = 5;
  double temperature = 1.0;
  int n_prior_samples = 1;
  int max_len = 30;

  // beam 1-10, temperature 0.1-2.0, samples 1-10, max_len 1-100.
  void validate() const;
};

struct Reply {
  GenerationResult best;
  std::vector<GenerationResult> candidates;  // one per prior sample
  std::string text;
  bool is_dull = false;
  std::optional<double> neg_pmi;
  std::uint64_t seed = 0;

  double log_prob() const { return best.log_prob; }
  double score() const { return best.normalized_score(); }
};

// H~ of the last kHistoryWindow utterances.
Vector encode_free_history(const NexusModel& model, const std::vector<Utterance>& history);

// Draws n_prior_samples codes from the prior (none for the seq2seq variant),
// decodes each and keeps the candidate with the highest length-normalized score.
// Fully determined by the arguments.
Reply generate_reply(const NexusModel& model, const Vocabulary& vocab,
                     const std::vector<Utterance>& history, const DecodeSettings& settings,
                     std::uint64_t seed, const BackwardModel* backward = nullptr);

// Free text to ids with the same normalization the dull-phrase matcher uses.
Utterance encode_user_text(const Vocabulary& vocab, const std::string& text);

struct Turn {
  std::string speaker;  // "user" or "model"
  std::string text;
  bool is_dull = false;
  std::optional<double> neg_pmi;
  std::optional<double> log_prob;
  std::optional<std::uint64_t> seed;
  bool simulated = false;
};

struct SimulationResult {
  std::vector<Turn> transcript;
  int turn_count = 0;       // generated turns before the first dull one
  std::string stop_reason;  // "dull", "empty" or "max_turns"
  std::vector<Utterance> generated;  // token ids of each transcript turn
};

// The model talks to itself starting from seed_context; the seed of turn k
// comes from the k-th draw of Rng(seed) and is recorded in the transcript.
SimulationResult self_simulate(const NexusModel& model, const Vocabulary& vocab,
                               const std::vector<Utterance>& seed_context, int max_turns,
                               const DecodeSettings& settings, std::uint64_t seed,
                               const BackwardModel* backward = nullptr);

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Session store over an immutable model. Sessions are independent; calls on
// one session are serialized.
class ChatService {
 public:
  ChatService(const NexusModel& model, const Vocabulary& vocab, std::uint64_t seed = 1,
              const BackwardModel* backward = nullptr);

  std::string create_session(std::optional<DecodeSettings> settings = std::nullopt);
  // Throws NotFoundError for an unknown id and std::invalid_argument for empty
  // text or invalid settings. Settings passed here persist for the session.
  Turn respond(const std::string& id, const std::string& text,
               std::optional<DecodeSettings> settings = std::nullopt);
  SimulationResult simulate(const std::string& id, int max_turns);
  std::vector<Turn> transcript(const std::string& id) const;
  DecodeSettings settings(const std::string& id) const;
  std::size_t session_count() const;

  const NexusModel& model() const { return model_; }
  const Vocabulary& vocab() const { return vocab_; }

 private:
  struct Session {
    std::vector<Turn> turns;
    std::vector<Utterance> history;
    DecodeSettings settings;
    Rng rng;
    mutable std::mutex mu;
  };

  Session& find(const std::string& id) const;

  const NexusModel& model_;
  const Vocabulary& vocab_;
  const BackwardModel* backward_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Session>> sessions_;
  Rng id_rng_;
  std::uint64_t seed_;
  std::uint64_t created_ = 0;
};

}  // namespace nexus
