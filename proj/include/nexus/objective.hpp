#pragma once

#include "nexus/model.hpp"

#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace nexus {

struct ObjectiveConfig {
  double lambda1 = 0.5;  // history reconstruction weight
  double lambda2 = 1.0;  // future reconstruction weight
  // Encoders learn only from the decoder loss when set; off means plain
  // backpropagation of the total, used to cross-check gradients.
  bool route_gradients = true;

  void validate() const;
};

struct LossBreakdown {
  double loss_code = 0.0;
  double loss_decoder = 0.0;
  double loss_prior_recon = 0.0;
  double loss_prior_kl = 0.0;
  double total = 0.0;
  std::size_t instances = 0;
  std::size_t decoder_tokens = 0;  // gold tokens plus EOS over the batch

  // Decoder cross-entropy in nats per token.
  double per_token_ce() const;
};

// Batch-mean losses as 1x1 graph nodes.
struct LossExprs {
  Expr code;
  Expr decoder;
  Expr prior_recon;
  Expr prior_kl;
  Expr total;
};

// Builds every loss term for a batch. noise is code_dim x B (ignored without a
// code path); column b drives the single code sample of instance b, shared by
// all three losses.
LossExprs build_losses(Graph& g, const NexusModel& model, std::span<const ContextSplit> batch,
                       const ObjectiveConfig& cfg, const Matrix& noise);

LossBreakdown breakdown_of(const LossExprs& losses, std::span<const ContextSplit> batch);

// Forward only.
LossBreakdown evaluate_loss(const NexusModel& model, std::span<const ContextSplit> batch,
                            const ObjectiveConfig& cfg, const Matrix& noise);
// Forward and backward of the total; gradients accumulate into model params.
LossBreakdown total_loss(NexusModel& model, std::span<const ContextSplit> batch,
                         const ObjectiveConfig& cfg, const Matrix& noise);

// Single-instance terms on precomputed vectors.
double loss_code(const NexusModel& model, const EncodedContext& enc, const CodeSample& code,
                 const ObjectiveConfig& cfg);
double loss_decoder(const NexusModel& model, const ContextSplit& split, const Vector& h_tilde,
                    const CodeSample& code);
struct PriorLoss {
  double recon = 0.0;
  double kl = 0.0;
};
PriorLoss loss_prior(const NexusModel& model, const EncodedContext& enc,
                     const GaussianParams& posterior, const CodeSample& code);

enum class LossTerm { code, decoder, prior_recon, prior_kl };

struct RoutingReport {
  // Max |grad| per parameter group under the probed losses.
  std::map<std::string, double> group_max_abs;
  std::vector<std::string> violations;

  bool ok() const { return violations.empty(); }
};

class RoutingViolation : public std::runtime_error {
 public:
  RoutingViolation(const std::string& what, std::vector<std::string> groups)
      : std::runtime_error(what), groups_(std::move(groups)) {}
  const std::vector<std::string>& groups() const { return groups_; }

 private:
  std::vector<std::string> groups_;
};

bool is_encoder_group(const std::string& group);

// Gradient magnitudes per group from the chosen terms alone. Leaves the
// model's gradients zeroed.
RoutingReport gradient_by_group(NexusModel& model, std::span<const ContextSplit> batch,
                                const ObjectiveConfig& cfg, const Matrix& noise,
                                const std::vector<LossTerm>& terms);

// Backpropagates loss_code + loss_prior and requires every encoder and
// embedding gradient to be exactly zero; throws RoutingViolation otherwise.
RoutingReport assert_gradient_routing(NexusModel& model, std::span<const ContextSplit> batch,
                                      const ObjectiveConfig& cfg, const Matrix& noise);

}  // namespace nexus
