#include "nexus/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace nexus {

namespace {

Matrix log_softmax_cols(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const double m = logits.col(j).maxCoeff();
    const double lse = std::log((logits.col(j).array() - m).exp().sum()) + m;
    out.col(j) = logits.col(j).array() - lse;
  }
  return out;
}

struct Hypothesis {
  Utterance tokens;
  std::vector<double> log_probs;
  double sum = 0.0;
  Eigen::Index state_col = 0;
};

GenerationResult to_result(const Hypothesis& h) {
  return {h.tokens, h.sum, h.log_probs};
}

}  // namespace

double GenerationResult::normalized_score() const {
  if (tokens.empty()) return -std::numeric_limits<double>::infinity();
  return log_prob / static_cast<double>(tokens.size());
}

Utterance GenerationResult::body() const {
  Utterance out = tokens;
  if (!out.empty() && out.back() == special::kEos) out.pop_back();
  return out;
}

bool generable(TokenId id) {
  return id != special::kPad && id != special::kUnk && id != special::kSos && id != special::kEou;
}

Vector decoder_condition(const Vector& h_tilde, const Vector& code) {
  Vector out(h_tilde.size() + code.size());
  out << h_tilde, code;
  return out;
}

Decoder::Decoder(ParameterSet& params, Parameter& embedding, int condition_dim, int hidden_dim,
                 Rng& rng)
    : embedding_(&embedding), condition_dim_(condition_dim) {
  const int embed_dim = static_cast<int>(embedding.value.rows());
  const int vocab = static_cast<int>(embedding.value.cols());
  if (vocab <= special::kCount) throw std::invalid_argument("decoder vocabulary too small");
  cell_ = GruCell(params, "decoder.cell", "decoder", embed_dim + condition_dim, hidden_dim, rng);
  output_ = Linear(params, "decoder.output", "decoder", hidden_dim, vocab, rng);
}

Expr Decoder::teacher_forced_nll(Graph& g, const Expr& condition,
                                 const std::vector<const Utterance*>& gold) const {
  const auto batch = static_cast<Eigen::Index>(gold.size());
  if (condition.rows() != condition_dim_ || condition.cols() != batch) {
    throw std::invalid_argument("teacher_forced_nll: condition shape mismatch");
  }
  std::size_t longest = 0;
  for (const Utterance* u : gold) {
    if (u->empty()) throw std::invalid_argument("teacher_forced_nll: empty gold utterance");
    longest = std::max(longest, u->size());
  }
  Expr emb = g.parameter(*embedding_);
  Expr h = cell_.initial_state(g, batch);
  Expr total;
  std::vector<int> prev(gold.size()), target(gold.size());
  RowVector weight(batch);
  for (std::size_t t = 0; t <= longest; ++t) {
    for (std::size_t b = 0; b < gold.size(); ++b) {
      const Utterance& u = *gold[b];
      prev[b] = t == 0 ? special::kSos : (t <= u.size() ? u[t - 1] : -1);
      target[b] = t < u.size() ? u[t] : special::kEos;
      weight(static_cast<Eigen::Index>(b)) = t <= u.size() ? 1.0 : 0.0;
    }
    h = cell_.step(g, concat_rows({gather_cols(emb, prev), condition}), h);
    Expr nll = softmax_xent(output_(g, h), target, weight);
    total = total.valid() ? add(total, nll) : nll;
  }
  return total;
}

double Decoder::teacher_forced_nll(const Vector& condition, const Utterance& gold) const {
  Graph g(false);
  return teacher_forced_nll(g, g.constant(condition), {&gold}).scalar();
}

Matrix Decoder::step_log_probs(Matrix& state, const std::vector<TokenId>& prev,
                               const Vector& condition) const {
  const auto k = static_cast<Eigen::Index>(prev.size());
  const Matrix& emb = embedding_->value;
  Matrix input(emb.rows() + condition.size(), k);
  for (Eigen::Index j = 0; j < k; ++j) {
    input.col(j).head(emb.rows()) = emb.col(prev[static_cast<std::size_t>(j)]);
    input.col(j).tail(condition.size()) = condition;
  }
  state = cell_.forward(input, state);
  return log_softmax_cols(output_.forward(state));
}

GenerationResult Decoder::decode_greedy(const Vector& condition, int max_len) const {
  if (max_len < 1) throw std::invalid_argument("decode_greedy: max_len must be >= 1");
  if (condition.size() != condition_dim_) throw std::invalid_argument("decode_greedy: condition size");
  GenerationResult out;
  Matrix state = Matrix::Zero(cell_.hidden_dim(), 1);
  TokenId prev = special::kSos;
  for (int t = 0; t < max_len; ++t) {
    const Matrix lp = step_log_probs(state, {prev}, condition);
    TokenId best = -1;
    for (Eigen::Index v = 0; v < lp.rows(); ++v) {
      if (!generable(static_cast<TokenId>(v))) continue;
      if (best < 0 || lp(v, 0) > lp(best, 0)) best = static_cast<TokenId>(v);
    }
    out.tokens.push_back(best);
    out.per_token_log_probs.push_back(lp(best, 0));
    out.log_prob += lp(best, 0);
    if (best == special::kEos) break;
    prev = best;
  }
  return out;
}

std::vector<GenerationResult> Decoder::decode_beam(const Vector& condition, int beam_size,
                                                   int max_len) const {
  if (beam_size < 1) throw std::invalid_argument("decode_beam: beam_size must be >= 1");
  if (max_len < 1) throw std::invalid_argument("decode_beam: max_len must be >= 1");
  if (condition.size() != condition_dim_) throw std::invalid_argument("decode_beam: condition size");

  struct Expansion {
    double score;
    std::size_t hyp;
    TokenId token;
    double log_prob;
  };

  std::vector<Hypothesis> live(1);
  std::vector<Hypothesis> finished;
  Matrix states = Matrix::Zero(cell_.hidden_dim(), 1);
  for (int t = 0; t < max_len && !live.empty(); ++t) {
    std::vector<TokenId> prev;
    for (const auto& h : live) prev.push_back(h.tokens.empty() ? special::kSos : h.tokens.back());
    const Matrix lp = step_log_probs(states, prev, condition);

    std::vector<Expansion> cand;
    for (std::size_t k = 0; k < live.size(); ++k) {
      const double len = static_cast<double>(live[k].tokens.size() + 1);
      for (Eigen::Index v = 0; v < lp.rows(); ++v) {
        if (!generable(static_cast<TokenId>(v))) continue;
        const double l = lp(v, static_cast<Eigen::Index>(k));
        cand.push_back({(live[k].sum + l) / len, k, static_cast<TokenId>(v), l});
      }
    }
    std::stable_sort(cand.begin(), cand.end(),
                     [](const Expansion& a, const Expansion& b) { return a.score > b.score; });
    if (cand.size() > static_cast<std::size_t>(beam_size)) cand.resize(static_cast<std::size_t>(beam_size));

    std::vector<Hypothesis> next;
    std::vector<Eigen::Index> cols;
    for (const auto& e : cand) {
      Hypothesis h = live[e.hyp];
      h.tokens.push_back(e.token);
      h.log_probs.push_back(e.log_prob);
      h.sum += e.log_prob;
      if (e.token == special::kEos || t + 1 == max_len) {
        finished.push_back(std::move(h));
      } else {
        cols.push_back(static_cast<Eigen::Index>(e.hyp));
        next.push_back(std::move(h));
      }
    }
    Matrix next_states(states.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) next_states.col(static_cast<Eigen::Index>(j)) = states.col(cols[j]);
    states = std::move(next_states);
    live = std::move(next);
  }

  std::vector<GenerationResult> out;
  for (const auto& h : finished) out.push_back(to_result(h));
  std::stable_sort(out.begin(), out.end(), [](const GenerationResult& a, const GenerationResult& b) {
    return a.normalized_score() > b.normalized_score();
  });
  if (out.size() > static_cast<std::size_t>(beam_size)) out.resize(static_cast<std::size_t>(beam_size));
  return out;
}

GenerationResult Decoder::sample_decode(const Vector& condition, double temperature, Rng& rng,
                                        int max_len) const {
  if (!(temperature > 0.0)) throw std::invalid_argument("sample_decode: temperature must be > 0");
  if (max_len < 1) throw std::invalid_argument("sample_decode: max_len must be >= 1");
  GenerationResult out;
  Matrix state = Matrix::Zero(cell_.hidden_dim(), 1);
  TokenId prev = special::kSos;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int t = 0; t < max_len; ++t) {
    const Matrix lp = step_log_probs(state, {prev}, condition);
    double peak = -std::numeric_limits<double>::infinity();
    for (Eigen::Index v = 0; v < lp.rows(); ++v) {
      if (generable(static_cast<TokenId>(v))) peak = std::max(peak, lp(v, 0) / temperature);
    }
    Vector weights = Vector::Zero(lp.rows());
    for (Eigen::Index v = 0; v < lp.rows(); ++v) {
      if (generable(static_cast<TokenId>(v))) weights(v) = std::exp(lp(v, 0) / temperature - peak);
    }
    const double u = unif(rng) * weights.sum();
    double acc = 0.0;
    TokenId pick = -1;
    for (Eigen::Index v = 0; v < weights.size(); ++v) {
      if (weights(v) <= 0.0) continue;
      acc += weights(v);
      pick = static_cast<TokenId>(v);
      if (u < acc) break;
    }
    out.tokens.push_back(pick);
    out.per_token_log_probs.push_back(lp(pick, 0));
    out.log_prob += lp(pick, 0);
    if (pick == special::kEos) break;
    prev = pick;
  }
  return out;
}

}  // namespace nexus
