#pragma once

#include "nexus/corpus.hpp"
#include "nexus/tensor_graph.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace nexus {

using Tokens = std::vector<std::string>;

// Distinct n-grams over total n-grams across all responses; 0 when there are none.
double distinct_n(const std::vector<Tokens>& responses, int n);

// Lower-cased tokens with punctuation split off and contractions such as
// "don ' t" or "don't" rejoined into one token.
Tokens normalize_for_matching(std::string_view text);
bool is_dull(std::string_view response);
bool is_dull(const Tokens& response);

// ---- BLEU -------------------------------------------------------------------

struct BleuStats {
  std::vector<double> matches;  // clipped n-gram matches, index n-1
  std::vector<double> totals;   // hypothesis n-grams, index n-1
  double hyp_len = 0.0;
  double ref_len = 0.0;  // closest reference length, ties to the shorter
};

BleuStats bleu_stats(const Tokens& hyp, const std::vector<Tokens>& refs, int max_n);
// Unigram precision as is; add-one smoothing for n > 1; geometric mean times
// the brevity penalty. Zero when the hypothesis is empty.
double bleu_from_stats(const BleuStats& stats, int max_n);
double bleu_smooth(const Tokens& hyp, const std::vector<Tokens>& refs, int max_n);
// Statistics summed over the corpus before combining.
double corpus_bleu(const std::vector<Tokens>& hyps, const std::vector<std::vector<Tokens>>& refs,
                   int max_n);
double clipped_precision(const Tokens& hyp, const std::vector<Tokens>& refs, int n);

// ---- bootstrap ----------------------------------------------------------------

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  bool contains(double v) const { return lower <= v && v <= upper; }
};

struct BootstrapResult {
  double point = 0.0;
  Interval interval;
  std::size_t resamples = 0;
};

// A statistic evaluated on a resampled list of item indices.
using ResampleStatistic = std::function<double(const std::vector<std::size_t>&)>;

inline constexpr int kExhaustive = 0;

// Percentile interval (nearest rank) of the statistic over bootstrap resamples.
// resamples == kExhaustive enumerates all n^n ordered resamples. The reported
// interval is widened to contain the point estimate.
BootstrapResult bootstrap_ci(std::size_t items, const ResampleStatistic& statistic,
                             int resamples = 1000, double level = 0.95, std::uint64_t seed = 1);
// Fraction of shared resamples on which system a scores strictly higher than b.
double paired_bootstrap_win_rate(std::size_t items, const ResampleStatistic& a,
                                 const ResampleStatistic& b, int resamples = 1000,
                                 std::uint64_t seed = 1);
// Nearest-rank percentile of sorted values, p in (0, 1].
double nearest_rank(const std::vector<double>& sorted, double p);

// ---- embedding metrics --------------------------------------------------------

class WordVectors {
 public:
  WordVectors() = default;
  explicit WordVectors(int dim) : dim_(dim) {}

  int dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }
  void set(const std::string& word, Vector v);
  const Vector* find(const std::string& word) const;

  // word2vec text format: "count dim" header, then "word v1 ... vd".
  void save(const std::string& path) const;
  static WordVectors load(const std::string& path);

 private:
  int dim_ = 0;
  std::unordered_map<std::string, Vector> vectors_;
};

double cosine(const Vector& a, const Vector& b);  // 0 if either is zero

struct PairEmbeddingScores {
  double average = 0.0;
  double greedy = 0.0;
  double extrema = 0.0;
};

// Empty result when either side has no in-vocabulary word.
std::optional<PairEmbeddingScores> embedding_scores(const Tokens& hyp, const Tokens& ref,
                                                    const WordVectors& vectors);

struct MeanWithInterval {
  double mean = 0.0;
  Interval interval;  // mean +- 1.96 standard errors
};

struct EmbeddingMetrics {
  MeanWithInterval average, greedy, extrema;
  std::size_t pairs = 0;
  std::size_t skipped = 0;
};

EmbeddingMetrics embedding_metrics(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs,
                                   const WordVectors& vectors);
MeanWithInterval mean_interval(const std::vector<double>& values);

// ---- MMI rerank ----------------------------------------------------------------

struct RerankCandidate {
  Tokens tokens;
  double forward = 0.0;   // length-normalized log p(r | c)
  double backward = 0.0;  // length-normalized log p(c | r)
  double score = 0.0;
};

// score = (1 - lambda) forward + lambda backward, stable descending sort.
std::vector<RerankCandidate> mmi_rerank(std::vector<RerankCandidate> candidates, double lambda = 0.5);

// ---- probing ---------------------------------------------------------------------

// L2-regularized logistic regression on standardized features (columns are
// examples). Trains on the first train_fraction of the columns and returns
// accuracy on the rest.
double linear_probe_accuracy(const Matrix& features, const std::vector<int>& labels,
                             double train_fraction = 0.5);

}  // namespace nexus
