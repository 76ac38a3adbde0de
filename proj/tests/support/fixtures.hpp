#pragma once

#include "nexus/corpus.hpp"
#include "nexus/model.hpp"
#include "nexus/objective.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace nexus::testing {

// vocab 20, embed 8, hidden 8/12, code 4
inline ModelConfig tiny_config(bool code_enabled = true) {
  ModelConfig c;
  c.encoder.vocab_size = 20;
  c.encoder.embed_dim = 8;
  c.encoder.utterance_hidden = 8;
  c.encoder.context_hidden = 12;
  c.encoder.code_dim = 4;
  c.decoder_hidden = 12;
  c.mlp_hidden = 8;
  c.code_enabled = code_enabled;
  return c;
}

inline std::vector<DialogueFlow> random_flows(int vocab, int count, int min_turns, int max_turns,
                                              int max_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> tok(special::kCount, vocab - 1);
  std::uniform_int_distribution<int> turns(min_turns, max_turns);
  std::uniform_int_distribution<int> len(1, max_len);
  std::vector<DialogueFlow> flows(static_cast<std::size_t>(count));
  for (auto& f : flows) {
    const int t = turns(rng);
    for (int i = 0; i < t; ++i) {
      Utterance u(static_cast<std::size_t>(len(rng)));
      for (auto& x : u) x = tok(rng);
      f.utterances.push_back(std::move(u));
    }
  }
  return flows;
}

struct GradCheckResult {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Central differences of a scalar loss against the accumulated analytic
// gradients already stored in model.params(). loss_for(param) selects which
// loss a parameter is compared against.
template <typename LossFn>
GradCheckResult finite_difference_check(NexusModel& model, LossFn loss_for, double step = 1e-5) {
  GradCheckResult r;
  for (Parameter* p : model.params().all()) {
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + step;
      const double up = loss_for(*p);
      x = saved - step;
      const double down = loss_for(*p);
      x = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad.data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-5});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > r.max_rel_err) {
        r.max_rel_err = rel;
        r.worst_param = p->name() + "[" + std::to_string(i) + "]";
      }
      ++r.checked;
    }
  }
  return r;
}

// Total-loss gradient check; with routing on, encoder and embedding parameters
// are compared against the decoder loss, everything else against the total.
inline GradCheckResult gradient_check(NexusModel& model, std::span<const ContextSplit> batch,
                                      const ObjectiveConfig& cfg, const Matrix& noise) {
  model.params().zero_grad();
  total_loss(model, batch, cfg, noise);
  auto loss_for = [&](const Parameter& p) {
    const LossBreakdown b = evaluate_loss(model, batch, cfg, noise);
    if (cfg.route_gradients && is_encoder_group(p.group())) return b.loss_decoder;
    return b.total;
  };
  GradCheckResult r = finite_difference_check(model, loss_for);
  model.params().zero_grad();
  return r;
}

}  // namespace nexus::testing
