#pragma once

#include "nexus/corpus.hpp"
#include "nexus/metrics.hpp"

#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace nexus {

struct RetrievalDocument {
  Tokens context;
  Tokens response;
};

// One document per (history, response) position of every dialogue; the
// history utterances are joined with the delimiter token.
std::vector<RetrievalDocument> documents_from_dialogues(const std::vector<RawDialogue>& dialogues);

// The delimiter and punctuation-only tokens carry no retrieval signal.
bool is_stop_token(const std::string& token);
Tokens content_tokens(const Tokens& tokens);

using SparseVector = std::map<std::string, double>;

// tf-idf over contexts with idf = ln((1 + N) / (1 + df)) + 1 and raw counts as tf.
// Each context also carries a dense sum of its word vectors; without word
// vectors that sum is over one-hot vectors of the index vocabulary.
class RetrievalIndex {
 public:
  explicit RetrievalIndex(std::vector<RetrievalDocument> docs, const WordVectors* vectors = nullptr);

  std::size_t size() const { return docs_.size(); }
  const RetrievalDocument& document(std::size_t i) const { return docs_.at(i); }
  double idf(const std::string& term) const;
  SparseVector tfidf(const Tokens& tokens) const;
  double score(const SparseVector& query, std::size_t doc) const;  // tf-idf cosine
  Vector vector_sum(const Tokens& tokens) const;
  const Vector& document_vector(std::size_t doc) const { return sums_.at(doc); }
  const std::map<std::string, std::string>& metadata() const { return metadata_; }

  // Copy without one document; idf statistics stay those of this index.
  RetrievalIndex without(std::size_t doc) const;

 private:
  RetrievalIndex() = default;
  void build_vectors();

  std::vector<RetrievalDocument> docs_;
  std::unordered_map<std::string, double> idf_;
  double default_idf_ = 1.0;
  std::vector<SparseVector> doc_tfidf_;
  std::vector<double> doc_norm_;
  std::vector<Vector> sums_;
  const WordVectors* vectors_ = nullptr;
  std::unordered_map<std::string, Eigen::Index> bow_index_;
  std::map<std::string, std::string> metadata_;
};

struct ScoredContext {
  std::size_t doc = 0;
  double score = 0.0;
};

struct CandidatePool {
  std::vector<ScoredContext> ranked;
  std::optional<std::string> warning;
};

// Top-k contexts by tf-idf cosine; ties keep index order; k capped at the index size.
CandidatePool candidate_pool(const Tokens& query, const RetrievalIndex& index, std::size_t k = 1000);

struct RerankedContext {
  std::size_t doc = 0;
  double score = 0.0;
  double cosine = 0.0;     // on vector sums
  double jaccard = 0.0;    // 1 - Jaccard distance on content-token sets
  double euclidean = 0.0;  // 1 / (1 + distance) on vector sums
};

// Mean of the three similarities, each min-max normalized over the pool (a
// constant component normalizes to 1). Stable descending sort.
std::vector<RerankedContext> rerank_candidates(const Tokens& query, const std::vector<ScoredContext>& pool,
                                               const RetrievalIndex& index);

struct ReferenceOptions {
  std::size_t n = 10;
  std::size_t pool_size = 1000;
  double cosine_threshold = 0.4;  // minimum tf-idf cosine of a retrieved context
  std::optional<std::size_t> self_doc;
};

// Responses of the top reranked contexts, excluding the query's own document and
// gold response, without duplicates, at most n.
std::vector<Tokens> collect_references(const Tokens& query, const RetrievalIndex& index,
                                       const ReferenceOptions& options = {},
                                       const Tokens* own_response = nullptr);

}  // namespace nexus
