#include "nexus/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

namespace nexus {

namespace {

std::string join_ngram(const Tokens& t, std::size_t start, int n) {
  std::string key;
  for (int k = 0; k < n; ++k) {
    if (k) key.push_back('\x1f');
    key += t[start + static_cast<std::size_t>(k)];
  }
  return key;
}

std::map<std::string, int> ngram_counts(const Tokens& t, int n) {
  std::map<std::string, int> counts;
  if (static_cast<int>(t.size()) < n) return counts;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= t.size(); ++i) ++counts[join_ngram(t, i, n)];
  return counts;
}

bool is_punctuation(const std::string& tok) {
  return std::none_of(tok.begin(), tok.end(), [](unsigned char ch) { return std::isalnum(ch); });
}

bool is_contraction_suffix(const std::string& s) {
  static const std::set<std::string> suffixes{"t", "s", "re", "ll", "ve", "d", "m"};
  return suffixes.count(s) > 0;
}

bool contains_sequence(const Tokens& t, const Tokens& pattern) {
  if (pattern.size() > t.size()) return false;
  return std::search(t.begin(), t.end(), pattern.begin(), pattern.end()) != t.end();
}

}  // namespace

double distinct_n(const std::vector<Tokens>& responses, int n) {
  if (n < 1) throw std::invalid_argument("distinct_n needs n >= 1");
  std::set<std::string> distinct;
  std::size_t total = 0;
  for (const auto& r : responses) {
    if (static_cast<int>(r.size()) < n) continue;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= r.size(); ++i) {
      distinct.insert(join_ngram(r, i, n));
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(distinct.size()) / static_cast<double>(total);
}

Tokens normalize_for_matching(std::string_view text) {
  Tokens pieces;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) {
    if (word == kEouToken) continue;
    std::string cur;
    for (char raw : word) {
      const auto ch = static_cast<unsigned char>(raw);
      if (std::isalnum(ch) || raw == '\'') {
        cur.push_back(static_cast<char>(std::tolower(ch)));
      } else {
        if (!cur.empty()) pieces.push_back(std::move(cur));
        cur.clear();
        pieces.emplace_back(1, raw);
      }
    }
    if (!cur.empty()) pieces.push_back(std::move(cur));
  }
  // Rejoin "don ' t", "don 't" and "do n't" into "don't".
  Tokens out;
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    const std::string& p = pieces[i];
    if (p == "'" && !out.empty() && i + 1 < pieces.size() && is_contraction_suffix(pieces[i + 1])) {
      out.back() += "'" + pieces[i + 1];
      ++i;
    } else if (p.size() > 1 && p.front() == '\'' && !out.empty() && is_contraction_suffix(p.substr(1))) {
      out.back() += p;
    } else if (p == "n't" && !out.empty()) {
      out.back() += p;
    } else {
      out.push_back(p);
    }
  }
  return out;
}

bool is_dull(std::string_view response) {
  const Tokens t = normalize_for_matching(response);
  Tokens words;
  for (const auto& tok : t) {
    if (!is_punctuation(tok)) words.push_back(tok);
  }
  if (words.size() == 1 && (words[0] == "no" || words[0] == "yes")) return true;
  if (!words.empty() && words.back() == "thanks") return true;
  static const std::vector<Tokens> patterns{
      {"i", "know"}, {"no", "problem"}, {"lol"},        {"don't", "know"},
      {"don't", "think"}, {"what", "?"}, {"of", "course"}, {"wtf"},
  };
  return std::any_of(patterns.begin(), patterns.end(),
                     [&](const Tokens& p) { return contains_sequence(t, p); });
}

bool is_dull(const Tokens& response) {
  std::string joined;
  for (const auto& tok : response) {
    if (!joined.empty()) joined.push_back(' ');
    joined += tok;
  }
  return is_dull(std::string_view(joined));
}

// ---- BLEU -------------------------------------------------------------------

BleuStats bleu_stats(const Tokens& hyp, const std::vector<Tokens>& refs, int max_n) {
  if (max_n < 1) throw std::invalid_argument("max_n must be >= 1");
  if (refs.empty()) throw std::invalid_argument("BLEU needs at least one reference");
  BleuStats s;
  s.matches.assign(static_cast<std::size_t>(max_n), 0.0);
  s.totals.assign(static_cast<std::size_t>(max_n), 0.0);
  s.hyp_len = static_cast<double>(hyp.size());
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) {
      return std::abs(static_cast<long>(len) - static_cast<long>(hyp.size()));
    };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  s.ref_len = static_cast<double>(best);
  for (int n = 1; n <= max_n; ++n) {
    const auto h = ngram_counts(hyp, n);
    std::map<std::string, int> max_ref;
    for (const auto& r : refs) {
      for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    }
    double matched = 0.0, total = 0.0;
    for (const auto& [g, c] : h) {
      total += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) matched += std::min(c, it->second);
    }
    s.matches[static_cast<std::size_t>(n - 1)] = matched;
    s.totals[static_cast<std::size_t>(n - 1)] = total;
  }
  return s;
}

double bleu_from_stats(const BleuStats& s, int max_n) {
  if (s.hyp_len <= 0.0) return 0.0;
  if (s.matches.empty() || s.matches[0] <= 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 1; n <= max_n; ++n) {
    const auto k = static_cast<std::size_t>(n - 1);
    const double p = n == 1 ? s.matches[k] / s.totals[k] : (s.matches[k] + 1.0) / (s.totals[k] + 1.0);
    log_sum += std::log(p);
  }
  const double bp = s.hyp_len >= s.ref_len ? 1.0 : std::exp(1.0 - s.ref_len / s.hyp_len);
  return bp * std::exp(log_sum / max_n);
}

double bleu_smooth(const Tokens& hyp, const std::vector<Tokens>& refs, int max_n) {
  return bleu_from_stats(bleu_stats(hyp, refs, max_n), max_n);
}

double corpus_bleu(const std::vector<Tokens>& hyps, const std::vector<std::vector<Tokens>>& refs,
                   int max_n) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("hypothesis/reference count mismatch");
  BleuStats sum;
  sum.matches.assign(static_cast<std::size_t>(max_n), 0.0);
  sum.totals.assign(static_cast<std::size_t>(max_n), 0.0);
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const BleuStats s = bleu_stats(hyps[i], refs[i], max_n);
    for (std::size_t k = 0; k < s.matches.size(); ++k) {
      sum.matches[k] += s.matches[k];
      sum.totals[k] += s.totals[k];
    }
    sum.hyp_len += s.hyp_len;
    sum.ref_len += s.ref_len;
  }
  return bleu_from_stats(sum, max_n);
}

double clipped_precision(const Tokens& hyp, const std::vector<Tokens>& refs, int n) {
  const BleuStats s = bleu_stats(hyp, refs, n);
  const auto k = static_cast<std::size_t>(n - 1);
  return s.totals[k] > 0.0 ? s.matches[k] / s.totals[k] : 0.0;
}

// ---- bootstrap ----------------------------------------------------------------

double nearest_rank(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw std::invalid_argument("nearest_rank of an empty sample");
  const double r = std::ceil(p * static_cast<double>(sorted.size()) - 1e-9);
  const auto rank = static_cast<std::size_t>(std::clamp(r, 1.0, static_cast<double>(sorted.size())));
  return sorted[rank - 1];
}

namespace {

// Calls visit(indices) for every resample.
template <typename Visit>
std::size_t for_each_resample(std::size_t items, int resamples, std::uint64_t seed, Visit&& visit) {
  std::vector<std::size_t> idx(items, 0);
  if (resamples == kExhaustive) {
    if (items > 7) throw std::invalid_argument("exhaustive bootstrap is limited to 7 items");
    std::size_t count = 0;
    while (true) {
      visit(idx);
      ++count;
      std::size_t pos = 0;
      while (pos < items && ++idx[pos] == items) idx[pos++] = 0;
      if (pos == items) break;
    }
    return count;
  }
  if (resamples < 1) throw std::invalid_argument("resamples must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, items - 1);
  for (int r = 0; r < resamples; ++r) {
    for (auto& i : idx) i = pick(rng);
    visit(idx);
  }
  return static_cast<std::size_t>(resamples);
}

}  // namespace

BootstrapResult bootstrap_ci(std::size_t items, const ResampleStatistic& statistic, int resamples,
                             double level, std::uint64_t seed) {
  if (items < 2) throw std::invalid_argument("bootstrap needs at least 2 items");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("level must lie in (0, 1)");
  std::vector<std::size_t> all(items);
  for (std::size_t i = 0; i < items; ++i) all[i] = i;
  BootstrapResult out;
  out.point = statistic(all);
  std::vector<double> values;
  out.resamples = for_each_resample(items, resamples, seed,
                                    [&](const std::vector<std::size_t>& idx) { values.push_back(statistic(idx)); });
  std::sort(values.begin(), values.end());
  const double tail = (1.0 - level) / 2.0;
  out.interval.lower = std::min(nearest_rank(values, tail), out.point);
  out.interval.upper = std::max(nearest_rank(values, 1.0 - tail), out.point);
  return out;
}

double paired_bootstrap_win_rate(std::size_t items, const ResampleStatistic& a, const ResampleStatistic& b,
                                 int resamples, std::uint64_t seed) {
  if (items < 2) throw std::invalid_argument("bootstrap needs at least 2 items");
  std::size_t wins = 0;
  const std::size_t n = for_each_resample(items, resamples, seed, [&](const std::vector<std::size_t>& idx) {
    if (a(idx) > b(idx)) ++wins;
  });
  return static_cast<double>(wins) / static_cast<double>(n);
}

// ---- embedding metrics --------------------------------------------------------

void WordVectors::set(const std::string& word, Vector v) {
  if (dim_ == 0) dim_ = static_cast<int>(v.size());
  if (v.size() != dim_) throw std::invalid_argument("word vector dimension mismatch for " + word);
  vectors_[word] = std::move(v);
}

const Vector* WordVectors::find(const std::string& word) const {
  auto it = vectors_.find(word);
  return it == vectors_.end() ? nullptr : &it->second;
}

void WordVectors::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.precision(17);
  std::vector<const std::string*> words;
  for (const auto& [w, v] : vectors_) words.push_back(&w);
  std::sort(words.begin(), words.end(), [](auto* a, auto* b) { return *a < *b; });
  out << words.size() << ' ' << dim_ << '\n';
  for (const auto* w : words) {
    out << *w;
    const Vector& v = vectors_.at(*w);
    for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << v(i);
    out << '\n';
  }
}

WordVectors WordVectors::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::size_t count = 0;
  int dim = 0;
  if (!(in >> count >> dim) || dim <= 0) throw std::runtime_error("bad word vector header in " + path);
  WordVectors wv(dim);
  for (std::size_t k = 0; k < count; ++k) {
    std::string word;
    Vector v(dim);
    if (!(in >> word)) throw std::runtime_error("truncated word vector file " + path);
    for (int i = 0; i < dim; ++i) {
      if (!(in >> v(i))) throw std::runtime_error("truncated word vector file " + path);
    }
    wv.set(word, std::move(v));
  }
  return wv;
}

double cosine(const Vector& a, const Vector& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

namespace {

std::vector<const Vector*> lookup_all(const Tokens& t, const WordVectors& wv) {
  std::vector<const Vector*> out;
  for (const auto& w : t) {
    if (const Vector* v = wv.find(w)) out.push_back(v);
  }
  return out;
}

Vector mean_vector(const std::vector<const Vector*>& vs) {
  Vector m = Vector::Zero(vs.front()->size());
  for (const auto* v : vs) m += *v;
  return m / static_cast<double>(vs.size());
}

Vector extrema_vector(const std::vector<const Vector*>& vs) {
  Vector e = *vs.front();
  for (const auto* v : vs) {
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      if (std::abs((*v)(i)) > std::abs(e(i))) e(i) = (*v)(i);
    }
  }
  return e;
}

double greedy_direction(const std::vector<const Vector*>& from, const std::vector<const Vector*>& to) {
  double sum = 0.0;
  for (const auto* a : from) {
    double best = -1.0;
    for (const auto* b : to) best = std::max(best, cosine(*a, *b));
    sum += best;
  }
  return sum / static_cast<double>(from.size());
}

}  // namespace

std::optional<PairEmbeddingScores> embedding_scores(const Tokens& hyp, const Tokens& ref,
                                                    const WordVectors& vectors) {
  const auto h = lookup_all(hyp, vectors);
  const auto r = lookup_all(ref, vectors);
  if (h.empty() || r.empty()) return std::nullopt;
  PairEmbeddingScores s;
  s.average = cosine(mean_vector(h), mean_vector(r));
  s.greedy = 0.5 * (greedy_direction(h, r) + greedy_direction(r, h));
  s.extrema = cosine(extrema_vector(h), extrema_vector(r));
  return s;
}

MeanWithInterval mean_interval(const std::vector<double>& values) {
  MeanWithInterval m;
  if (values.empty()) return m;
  const double n = static_cast<double>(values.size());
  for (double v : values) m.mean += v;
  m.mean /= n;
  double half = 0.0;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - m.mean) * (v - m.mean);
    half = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  m.interval = {m.mean - half, m.mean + half};
  return m;
}

EmbeddingMetrics embedding_metrics(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs,
                                   const WordVectors& vectors) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("hypothesis/reference count mismatch");
  std::vector<double> avg, greedy, extrema;
  EmbeddingMetrics out;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    auto s = embedding_scores(hyps[i], refs[i], vectors);
    if (!s) {
      ++out.skipped;
      continue;
    }
    avg.push_back(s->average);
    greedy.push_back(s->greedy);
    extrema.push_back(s->extrema);
  }
  out.pairs = avg.size();
  out.average = mean_interval(avg);
  out.greedy = mean_interval(greedy);
  out.extrema = mean_interval(extrema);
  return out;
}

// ---- MMI rerank ----------------------------------------------------------------

std::vector<RerankCandidate> mmi_rerank(std::vector<RerankCandidate> candidates, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("lambda must lie in [0, 1]");
  for (auto& c : candidates) c.score = (1.0 - lambda) * c.forward + lambda * c.backward;
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const RerankCandidate& a, const RerankCandidate& b) { return a.score > b.score; });
  return candidates;
}

// ---- probing ---------------------------------------------------------------------

double linear_probe_accuracy(const Matrix& features, const std::vector<int>& labels, double train_fraction) {
  const Eigen::Index n = features.cols(), d = features.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw std::invalid_argument("label count mismatch");
  const auto train = static_cast<Eigen::Index>(std::floor(train_fraction * static_cast<double>(n)));
  if (train < 1 || train >= n) throw std::invalid_argument("probe needs examples on both sides of the split");

  const Vector mu = features.leftCols(train).rowwise().mean();
  Matrix z = features.colwise() - mu;
  const Vector sd = z.leftCols(train).array().square().rowwise().mean().sqrt().matrix();
  for (Eigen::Index i = 0; i < d; ++i) z.row(i) /= std::max(sd(i), 1e-8);

  Vector w = Vector::Zero(d);
  double b = 0.0;
  constexpr double kRate = 0.1, kL2 = 1e-3;
  for (int it = 0; it < 2000; ++it) {
    Vector gw = Vector::Zero(d);
    double gb = 0.0;
    for (Eigen::Index j = 0; j < train; ++j) {
      const double p = 1.0 / (1.0 + std::exp(-(w.dot(z.col(j)) + b)));
      const double err = p - labels[static_cast<std::size_t>(j)];
      gw += err * z.col(j);
      gb += err;
    }
    w -= kRate * (gw / static_cast<double>(train) + kL2 * w);
    b -= kRate * gb / static_cast<double>(train);
  }
  int correct = 0;
  for (Eigen::Index j = train; j < n; ++j) {
    const bool positive = w.dot(z.col(j)) + b > 0.0;
    correct += positive == (labels[static_cast<std::size_t>(j)] == 1);
  }
  return static_cast<double>(correct) / static_cast<double>(n - train);
}

}  // namespace nexus
