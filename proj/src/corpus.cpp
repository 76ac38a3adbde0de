#include "nexus/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace nexus {

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> kTokens = {"<pad>", "<unk>", "<s>", "</s>",
                                                   std::string(kEouToken)};
  return kTokens;
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const auto& t : special_tokens()) {
    token_to_id_.emplace(t, static_cast<TokenId>(id_to_token_.size()));
    id_to_token_.push_back(t);
  }
}

Vocabulary Vocabulary::from_tokens(const std::vector<std::string>& ordered_non_special,
                                   std::size_t max_size) {
  Vocabulary v;
  v.max_size_ = max_size;
  for (const auto& t : ordered_non_special) {
    if (v.id_to_token_.size() >= max_size + special::kCount) break;
    if (v.token_to_id_.count(t)) throw std::invalid_argument("duplicate vocabulary token: " + t);
    v.token_to_id_.emplace(t, static_cast<TokenId>(v.id_to_token_.size()));
    v.id_to_token_.push_back(t);
  }
  return v;
}

TokenId Vocabulary::lookup(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? special::kUnk : it->second;
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw std::out_of_range("token id out of range: " + std::to_string(id));
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

Utterance Vocabulary::encode(const std::vector<std::string>& tokens) const {
  Utterance out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(lookup(t));
  return out;
}

Utterance Vocabulary::encode(std::string_view text) const { return encode(tokenize(text)); }

std::string Vocabulary::decode(const Utterance& ids) const {
  std::string out;
  for (TokenId id : ids) {
    if (id == special::kEos) break;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

void Vocabulary::save(std::ostream& out) const {
  for (const auto& t : id_to_token_) out << t << '\n';
}

std::string Vocabulary::serialize() const {
  std::ostringstream os;
  save(os);
  return os.str();
}

Vocabulary Vocabulary::load(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  const auto& specials = special_tokens();
  if (lines.size() < specials.size() ||
      !std::equal(specials.begin(), specials.end(), lines.begin())) {
    throw std::runtime_error("vocabulary file does not start with the special tokens");
  }
  std::vector<std::string> rest(lines.begin() + static_cast<std::ptrdiff_t>(specials.size()),
                                lines.end());
  return from_tokens(rest, rest.size());
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream is{std::string(text)};
  std::string tok;
  while (is >> tok) {
    tok = lower_ascii(tok);
    if (tok == kEouToken) continue;
    out.push_back(std::move(tok));
  }
  return out;
}

ParsedCorpus parse_corpus(std::istream& in, const ParseOptions& options) {
  if (!in) throw std::runtime_error("corpus stream is not readable");
  ParsedCorpus corpus;
  std::string line;
  while (std::getline(in, line)) {
    ++corpus.stats.lines;
    std::istringstream is(line);
    RawDialogue dialogue;
    RawUtterance current;
    std::string tok;
    bool any = false;
    auto flush = [&] {
      if (current.empty()) return;
      if (options.max_utterance_tokens > 0 && current.size() > options.max_utterance_tokens) {
        current.resize(options.max_utterance_tokens);
        ++corpus.stats.truncated_utterances;
      }
      dialogue.push_back(std::move(current));
      current.clear();
    };
    while (is >> tok) {
      any = true;
      tok = lower_ascii(tok);
      if (tok == kEouToken) {
        flush();
      } else {
        current.push_back(std::move(tok));
      }
    }
    flush();
    if (!any) {
      ++corpus.stats.skipped_empty;
      continue;
    }
    if (dialogue.size() < 2) {
      ++corpus.stats.dropped_short;
      continue;
    }
    corpus.dialogues.push_back(std::move(dialogue));
  }
  if (in.bad()) throw std::runtime_error("error while reading corpus stream");
  return corpus;
}

ParsedCorpus parse_corpus_file(const std::string& path, const ParseOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path);
  return parse_corpus(in, options);
}

std::string serialize_dialogue(const RawDialogue& dialogue) {
  std::string out;
  for (const auto& utt : dialogue) {
    for (const auto& t : utt) {
      out += t;
      out += ' ';
    }
    out += kEouToken;
    out += ' ';
  }
  if (!out.empty()) out.pop_back();
  return out;
}

Vocabulary build_vocab(const std::vector<RawDialogue>& dialogues, std::size_t max_size) {
  if (max_size < 1) throw std::invalid_argument("build_vocab: max_size must be >= 1");
  std::map<std::string, std::size_t> counts;
  const auto& specials = special_tokens();
  for (const auto& d : dialogues) {
    for (const auto& u : d) {
      for (const auto& t : u) {
        if (std::find(specials.begin(), specials.end(), t) != specials.end()) continue;
        ++counts[t];
      }
    }
  }
  if (counts.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  // std::map iteration is lexicographic, so a stable sort keeps that tie order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> kept;
  for (std::size_t k = 0; k < ranked.size() && k < max_size; ++k) kept.push_back(ranked[k].first);
  return Vocabulary::from_tokens(kept, max_size);
}

DialogueFlow encode_dialogue(const RawDialogue& dialogue, const Vocabulary& vocab) {
  DialogueFlow flow;
  for (const auto& u : dialogue) flow.utterances.push_back(vocab.encode(u));
  return flow;
}

std::vector<DialogueFlow> encode_dialogues(const std::vector<RawDialogue>& dialogues,
                                           const Vocabulary& vocab) {
  std::vector<DialogueFlow> out;
  out.reserve(dialogues.size());
  for (const auto& d : dialogues) out.push_back(encode_dialogue(d, vocab));
  return out;
}

void validate_flow(const DialogueFlow& flow, const Vocabulary& vocab) {
  if (flow.size() < 2) throw std::invalid_argument("dialogue flow needs at least 2 utterances");
  for (const auto& u : flow.utterances) {
    if (u.empty()) throw std::invalid_argument("dialogue flow contains an empty utterance");
    for (TokenId id : u) {
      if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) {
        throw std::invalid_argument("token id out of vocabulary range");
      }
    }
  }
}

std::vector<std::size_t> split_permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<ContextSplit> make_instances(const DialogueFlow& flow) {
  std::vector<ContextSplit> out;
  for (int i = 2; i <= static_cast<int>(flow.size()); ++i) out.push_back({&flow, i});
  return out;
}

std::vector<ContextSplit> make_instances(const std::vector<DialogueFlow>& flows) {
  std::vector<ContextSplit> out;
  for (const auto& f : flows) {
    auto part = make_instances(f);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

}  // namespace nexus
