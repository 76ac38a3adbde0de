#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nexus {

using TokenId = int;
using Utterance = std::vector<TokenId>;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kSos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kEou = 4;
inline constexpr int kCount = 5;
}  // namespace special

inline constexpr std::string_view kEouToken = "__eou__";

class Vocabulary {
 public:
  Vocabulary();

  TokenId lookup(const std::string& token) const;
  const std::string& token(TokenId id) const;
  std::size_t size() const { return id_to_token_.size(); }
  std::size_t max_size() const { return max_size_; }
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

  Utterance encode(const std::vector<std::string>& tokens) const;
  Utterance encode(std::string_view text) const;
  std::string decode(const Utterance& ids) const;

  // One token per line in id order, specials first.
  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in);
  std::string serialize() const;

  static Vocabulary from_tokens(const std::vector<std::string>& ordered_non_special,
                                std::size_t max_size);

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  std::unordered_map<std::string, TokenId> token_to_id_;
  std::vector<std::string> id_to_token_;
  std::size_t max_size_ = 0;
};

using RawUtterance = std::vector<std::string>;
using RawDialogue = std::vector<RawUtterance>;

struct ParseStats {
  std::size_t lines = 0;
  std::size_t skipped_empty = 0;
  std::size_t dropped_short = 0;
  std::size_t truncated_utterances = 0;
};

struct ParseOptions {
  std::size_t max_utterance_tokens = 30;
};

struct ParsedCorpus {
  std::vector<RawDialogue> dialogues;
  ParseStats stats;
};

// Lower-cases and whitespace-splits; never emits the delimiter as a token.
std::vector<std::string> tokenize(std::string_view text);

ParsedCorpus parse_corpus(std::istream& in, const ParseOptions& options = {});
ParsedCorpus parse_corpus_file(const std::string& path, const ParseOptions& options = {});
std::string serialize_dialogue(const RawDialogue& dialogue);

Vocabulary build_vocab(const std::vector<RawDialogue>& dialogues, std::size_t max_size);

struct DialogueFlow {
  std::vector<Utterance> utterances;
  std::size_t size() const { return utterances.size(); }
};

DialogueFlow encode_dialogue(const RawDialogue& dialogue, const Vocabulary& vocab);
std::vector<DialogueFlow> encode_dialogues(const std::vector<RawDialogue>& dialogues,
                                           const Vocabulary& vocab);
// Throws if the flow violates T >= 2, non-empty utterances or id range.
void validate_flow(const DialogueFlow& flow, const Vocabulary& vocab);

template <typename T>
struct CorpusSplit {
  std::vector<T> train;
  std::vector<T> valid;
  std::vector<T> test;
};

// 10:1:1 random partition; remainders go to train.
template <typename T>
CorpusSplit<T> split_corpus(const std::vector<T>& items, std::uint64_t seed);
std::vector<std::size_t> split_permutation(std::size_t n, std::uint64_t seed);

// Target position i (1-based) within a flow, 2 <= i <= T.
struct ContextSplit {
  const DialogueFlow* flow = nullptr;
  int index = 0;

  int turns() const { return static_cast<int>(flow->size()); }
  const Utterance& target() const { return flow->utterances[static_cast<std::size_t>(index - 1)]; }
  int history_length() const { return index - 1; }
  // u_{i+1}..u_T
  int strict_future_length() const { return turns() - index; }
  // u_i..u_T
  int inclusive_future_length() const { return turns() - index + 1; }
  bool has_strict_future() const { return index < turns(); }
  const Utterance& utterance(int one_based) const {
    return flow->utterances[static_cast<std::size_t>(one_based - 1)];
  }
};

std::vector<ContextSplit> make_instances(const DialogueFlow& flow);
std::vector<ContextSplit> make_instances(const std::vector<DialogueFlow>& flows);

}  // namespace nexus

#include "nexus/detail/corpus_split.hpp"
