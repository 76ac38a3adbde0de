#pragma once

#include "nexus/inference.hpp"
#include "nexus/metrics.hpp"
#include "nexus/trainer.hpp"

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nexus {

std::vector<Utterance> history_of(const ContextSplit& split);

// History utterances joined with the utterance delimiter, keeping the last
// max_tokens ids.
Utterance flatten_context(const std::vector<Utterance>& history, int max_tokens);

// ---- backward model ----------------------------------------------------------

inline constexpr int kBackwardContextTokens = 60;

// Two-turn flows [response, flattened context] for training p(context | response).
std::vector<DialogueFlow> backward_flows(std::span<const ContextSplit> instances,
                                         int max_context_tokens = kBackwardContextTokens);

// A seq2seq model (code path disabled) scoring contexts given responses.
class BackwardModel {
 public:
  explicit BackwardModel(std::unique_ptr<NexusModel> model,
                         int max_context_tokens = kBackwardContextTokens);

  const NexusModel& model() const { return *model_; }
  NexusModel& model() { return *model_; }
  int max_context_tokens() const { return max_context_tokens_; }

  // -log p(context | response); the constant p(context) is dropped.
  double neg_pmi(const std::vector<Utterance>& history, const Utterance& response) const;
  // Per-token log p(context | response), EOS included in the count.
  double normalized_log_prob(const std::vector<Utterance>& history, const Utterance& response) const;

  void save(const std::string& dir, const Vocabulary& vocab) const;
  // Throws CheckpointError if the stored vocabulary differs from vocab.
  static BackwardModel load(const std::string& dir, const Vocabulary& vocab);

 private:
  std::unique_ptr<NexusModel> model_;
  int max_context_tokens_;
};

// Trains on the backward flows of train/valid with config.model.code_enabled forced off.
BackwardModel train_backward_model(const TrainConfig& config, std::span<const ContextSplit> train,
                                   std::span<const ContextSplit> valid,
                                   int max_context_tokens = kBackwardContextTokens);

// ---- word vectors ----------------------------------------------------------------

struct SkipGramConfig {
  int dim = 50;
  int window = 3;
  int negatives = 5;
  int epochs = 5;
  double learning_rate = 0.025;
  std::size_t min_count = 1;
  std::uint64_t seed = 1;
};

// Skip-gram with negative sampling over the utterances of the dialogues.
WordVectors train_skipgram(const std::vector<RawDialogue>& dialogues, const SkipGramConfig& config);

// ---- MMI ---------------------------------------------------------------------------

// Samples n candidates from the forward model (one prior code each) and reranks
// them with the backward model.
std::vector<RerankCandidate> mmi_candidates(const NexusModel& forward, const BackwardModel& backward,
                                            const Vocabulary& vocab,
                                            const std::vector<Utterance>& history, int n,
                                            double lambda, std::uint64_t seed, int max_len = 30);

// ---- AdverSuc ------------------------------------------------------------------------

struct DiscriminatorConfig {
  int embed_dim = 32;
  int utterance_hidden = 48;
  int context_hidden = 48;
  int response_hidden = 48;  // must equal context_hidden
  int head_hidden = 64;
  int epochs = 80;
  int batch_size = 64;
  double learning_rate = 3e-3;
  double min_accuracy = 0.7;
  std::uint64_t seed = 1;
};

// Hierarchical context encoder and a separate response encoder. [h; r; h*r]
// feeds an MLP with a two-way softmax: coherent vs random pair.
class CoherenceDiscriminator {
 public:
  CoherenceDiscriminator(int vocab_size, const DiscriminatorConfig& config);

  // p(coherent) per pair; contexts[k] supplies u_1..u_{i-1}.
  std::vector<double> predict(std::span<const ContextSplit> contexts,
                              const std::vector<const Utterance*>& responses) const;
  // Trains on gold pairs against pairs with a response drawn from another instance.
  void fit(std::span<const ContextSplit> train);
  // Accuracy on gold pairs plus an equal number of random pairs.
  double heldout_accuracy(std::span<const ContextSplit> heldout, std::uint64_t seed) const;

 private:
  Expr logits(Graph& g, std::span<const ContextSplit> contexts,
              const std::vector<const Utterance*>& responses) const;

  DiscriminatorConfig config_;
  ParameterSet params_;
  Parameter* embedding_ = nullptr;
  std::unique_ptr<EncoderStack> context_;
  GruCell response_;
  Mlp3 head_;
};

class UnreliableMetric : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdverSucResult {
  double fool_rate = 0.0;
  double discriminator_accuracy = 0.0;
  std::size_t pairs = 0;
};

// Fraction of generated pairs the discriminator scores above 0.5. Throws
// UnreliableMetric when held-out accuracy is below config.min_accuracy.
AdverSucResult adversuc(const CoherenceDiscriminator& discriminator, double heldout_accuracy,
                        std::span<const ContextSplit> contexts, const std::vector<Utterance>& generated,
                        double min_accuracy = 0.7);

// ---- system evaluation --------------------------------------------------------------

struct MetricEntry {
  double value = 0.0;
  std::optional<Interval> interval;
  std::size_t n = 0;
};

struct MetricReport {
  std::map<std::string, MetricEntry> metrics;
  std::vector<std::string> warnings;
  std::map<std::string, std::string> config;

  std::string to_json() const;
  std::string to_text() const;  // metric <tab> value <tab> lower <tab> upper <tab> n
};

// distinct-1, distinct-2, bleu-1, bleu-2, bleu-3, embedding-average,
// embedding-greedy, embedding-extrema, neg-pmi, adversuc, turns, dull-rate.
const std::vector<std::string>& all_metric_names();
std::set<std::string> parse_metric_list(const std::string& text);  // "all" or comma list

struct EvalConfig {
  std::set<std::string> metrics;
  DecodeSettings decode;
  std::uint64_t seed = 1;
  int bootstrap_resamples = 1000;
  int simulate_max_turns = 10;
  std::size_t simulate_contexts = 50;
  double reference_threshold = 0.4;  // recorded; applied when references are built
  DiscriminatorConfig discriminator;
};

struct EvalInputs {
  const BackwardModel* backward = nullptr;
  const WordVectors* vectors = nullptr;
  std::string vector_source;
  // Extra references per test instance (gold is always included).
  const std::vector<std::vector<Tokens>>* references = nullptr;
  // Discriminator training and held-out instances for AdverSuc.
  std::span<const ContextSplit> discriminator_train;
  std::span<const ContextSplit> discriminator_heldout;
};

struct GeneratedSet {
  std::vector<Utterance> responses;  // bodies, one per test instance
  std::vector<Tokens> tokens;
};

GeneratedSet generate_responses(const NexusModel& model, const Vocabulary& vocab,
                                std::span<const ContextSplit> test, const DecodeSettings& settings,
                                std::uint64_t seed);

MetricReport evaluate_system(const NexusModel& model, const Vocabulary& vocab,
                             std::span<const ContextSplit> test, const EvalConfig& config,
                             const EvalInputs& inputs = {});

}  // namespace nexus
