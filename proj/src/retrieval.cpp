#include "nexus/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <stdexcept>

namespace nexus {

std::vector<RetrievalDocument> documents_from_dialogues(const std::vector<RawDialogue>& dialogues) {
  std::vector<RetrievalDocument> docs;
  for (const auto& d : dialogues) {
    Tokens context;
    for (std::size_t i = 1; i < d.size(); ++i) {
      if (!context.empty()) context.emplace_back(kEouToken);
      context.insert(context.end(), d[i - 1].begin(), d[i - 1].end());
      docs.push_back({context, d[i]});
    }
  }
  return docs;
}

bool is_stop_token(const std::string& token) {
  if (token == kEouToken) return true;
  return std::none_of(token.begin(), token.end(), [](unsigned char ch) { return std::isalnum(ch); });
}

Tokens content_tokens(const Tokens& tokens) {
  Tokens out;
  for (const auto& t : tokens) {
    if (!is_stop_token(t)) out.push_back(t);
  }
  return out;
}

RetrievalIndex::RetrievalIndex(std::vector<RetrievalDocument> docs, const WordVectors* vectors)
    : docs_(std::move(docs)), vectors_(vectors) {
  std::unordered_map<std::string, std::size_t> df;
  for (const auto& d : docs_) {
    const Tokens c = content_tokens(d.context);
    for (const auto& t : std::set<std::string>(c.begin(), c.end())) ++df[t];
  }
  const double n = static_cast<double>(docs_.size());
  for (const auto& [t, f] : df) idf_[t] = std::log((1.0 + n) / (1.0 + static_cast<double>(f))) + 1.0;
  default_idf_ = std::log(1.0 + n) + 1.0;
  build_vectors();
  metadata_ = {
      {"idf", "ln((1+N)/(1+df))+1 over contexts"},
      {"tf", "raw count"},
      {"stop_tokens", "utterance delimiter and punctuation-only tokens"},
      {"rerank", "mean of min-max normalized cosine, 1-jaccard distance on token sets, 1/(1+euclidean)"},
      {"vectors", vectors ? "word vector sums" : "bag-of-words counts"},
      {"documents", std::to_string(docs_.size())},
  };
}

void RetrievalIndex::build_vectors() {
  doc_tfidf_.clear();
  doc_norm_.clear();
  for (const auto& d : docs_) {
    doc_tfidf_.push_back(tfidf(d.context));
    double ss = 0.0;
    for (const auto& [t, w] : doc_tfidf_.back()) ss += w * w;
    doc_norm_.push_back(std::sqrt(ss));
  }
  if (!vectors_) {
    bow_index_.clear();
    for (const auto& d : docs_) {
      for (const auto& t : content_tokens(d.context)) {
        bow_index_.emplace(t, static_cast<Eigen::Index>(bow_index_.size()));
      }
    }
  }
  sums_.clear();
  for (const auto& d : docs_) sums_.push_back(vector_sum(d.context));
}

double RetrievalIndex::idf(const std::string& term) const {
  auto it = idf_.find(term);
  return it == idf_.end() ? default_idf_ : it->second;
}

SparseVector RetrievalIndex::tfidf(const Tokens& tokens) const {
  SparseVector v;
  for (const auto& t : content_tokens(tokens)) v[t] += 1.0;
  for (auto& [t, w] : v) w *= idf(t);
  return v;
}

double RetrievalIndex::score(const SparseVector& query, std::size_t doc) const {
  const SparseVector& d = doc_tfidf_.at(doc);
  double dot = 0.0, qq = 0.0;
  for (const auto& [t, w] : query) {
    qq += w * w;
    if (auto it = d.find(t); it != d.end()) dot += w * it->second;
  }
  const double denom = std::sqrt(qq) * doc_norm_[doc];
  return denom > 0.0 ? dot / denom : 0.0;
}

Vector RetrievalIndex::vector_sum(const Tokens& tokens) const {
  if (vectors_) {
    Vector s = Vector::Zero(vectors_->dim());
    for (const auto& t : content_tokens(tokens)) {
      if (const Vector* v = vectors_->find(t)) s += *v;
    }
    return s;
  }
  Vector s = Vector::Zero(static_cast<Eigen::Index>(bow_index_.size()));
  for (const auto& t : content_tokens(tokens)) {
    if (auto it = bow_index_.find(t); it != bow_index_.end()) s(it->second) += 1.0;
  }
  return s;
}

RetrievalIndex RetrievalIndex::without(std::size_t doc) const {
  if (doc >= docs_.size()) throw std::out_of_range("no such document");
  RetrievalIndex copy;
  copy.docs_ = docs_;
  copy.docs_.erase(copy.docs_.begin() + static_cast<std::ptrdiff_t>(doc));
  copy.idf_ = idf_;
  copy.default_idf_ = default_idf_;
  copy.vectors_ = vectors_;
  copy.metadata_ = metadata_;
  copy.metadata_["documents"] = std::to_string(copy.docs_.size());
  copy.metadata_["idf_frozen"] = "true";
  copy.build_vectors();
  return copy;
}

CandidatePool candidate_pool(const Tokens& query, const RetrievalIndex& index, std::size_t k) {
  CandidatePool pool;
  const SparseVector q = index.tfidf(query);
  if (q.empty()) {
    pool.warning = "query has no content tokens";
    return pool;
  }
  for (std::size_t i = 0; i < index.size(); ++i) pool.ranked.push_back({i, index.score(q, i)});
  std::stable_sort(pool.ranked.begin(), pool.ranked.end(),
                   [](const ScoredContext& a, const ScoredContext& b) { return a.score > b.score; });
  if (pool.ranked.size() > k) pool.ranked.resize(k);
  return pool;
}

namespace {

void min_max(std::vector<double>& v) {
  if (v.empty()) return;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, b = *hi;
  for (auto& x : v) x = b > a ? (x - a) / (b - a) : 1.0;
}

}  // namespace

std::vector<RerankedContext> rerank_candidates(const Tokens& query, const std::vector<ScoredContext>& pool,
                                               const RetrievalIndex& index) {
  const Vector qv = index.vector_sum(query);
  const Tokens qc = content_tokens(query);
  const std::set<std::string> qset(qc.begin(), qc.end());
  std::vector<RerankedContext> out;
  std::vector<double> cos, jac, euc;
  for (const auto& p : pool) {
    const Vector& dv = index.document_vector(p.doc);
    const Tokens dc = content_tokens(index.document(p.doc).context);
    const std::set<std::string> dset(dc.begin(), dc.end());
    std::size_t inter = 0;
    for (const auto& t : qset) inter += dset.count(t);
    const std::size_t uni = qset.size() + dset.size() - inter;
    RerankedContext r;
    r.doc = p.doc;
    r.cosine = cosine(qv, dv);
    r.jaccard = uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
    r.euclidean = 1.0 / (1.0 + (qv - dv).norm());
    cos.push_back(r.cosine);
    jac.push_back(r.jaccard);
    euc.push_back(r.euclidean);
    out.push_back(r);
  }
  min_max(cos);
  min_max(jac);
  min_max(euc);
  for (std::size_t k = 0; k < out.size(); ++k) out[k].score = (cos[k] + jac[k] + euc[k]) / 3.0;
  std::stable_sort(out.begin(), out.end(),
                   [](const RerankedContext& a, const RerankedContext& b) { return a.score > b.score; });
  return out;
}

std::vector<Tokens> collect_references(const Tokens& query, const RetrievalIndex& index,
                                       const ReferenceOptions& options, const Tokens* own_response) {
  const CandidatePool pool = candidate_pool(query, index, options.pool_size);
  std::vector<ScoredContext> kept;
  for (const auto& p : pool.ranked) {
    if (options.self_doc && p.doc == *options.self_doc) continue;
    if (p.score < options.cosine_threshold) continue;
    kept.push_back(p);
  }
  std::vector<Tokens> refs;
  std::set<Tokens> seen;
  if (own_response) seen.insert(*own_response);
  for (const auto& r : rerank_candidates(query, kept, index)) {
    if (refs.size() >= options.n) break;
    const Tokens& resp = index.document(r.doc).response;
    if (!seen.insert(resp).second) continue;
    refs.push_back(resp);
  }
  return refs;
}

}  // namespace nexus
