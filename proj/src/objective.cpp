#include "nexus/objective.hpp"

#include <cmath>

namespace nexus {

namespace {

Expr batch_mean(const Expr& per_instance) {
  return scale(sum_all(per_instance), 1.0 / static_cast<double>(per_instance.cols()));
}

Expr zero_scalar(Graph& g) { return g.constant(Matrix::Zero(1, 1)); }

std::vector<const Utterance*> targets_of(std::span<const ContextSplit> batch) {
  std::vector<const Utterance*> out;
  out.reserve(batch.size());
  for (const auto& s : batch) out.push_back(&s.target());
  return out;
}

}  // namespace

void ObjectiveConfig::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !std::isfinite(lambda1) || !std::isfinite(lambda2)) {
    throw std::invalid_argument("lambda1 and lambda2 must be finite and >= 0");
  }
}

double LossBreakdown::per_token_ce() const {
  if (decoder_tokens == 0) return 0.0;
  return loss_decoder * static_cast<double>(instances) / static_cast<double>(decoder_tokens);
}

LossExprs build_losses(Graph& g, const NexusModel& model, std::span<const ContextSplit> batch,
                       const ObjectiveConfig& cfg, const Matrix& noise) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  cfg.validate();
  const auto targets = targets_of(batch);
  LossExprs out;

  if (!model.code_enabled()) {
    Expr h = model.encoders().encode_histories(g, batch);
    out.decoder = batch_mean(model.decoder().teacher_forced_nll(g, h, targets));
    out.code = zero_scalar(g);
    out.prior_recon = zero_scalar(g);
    out.prior_kl = zero_scalar(g);
    out.total = out.decoder;
    return out;
  }

  const auto batch_size = static_cast<Eigen::Index>(batch.size());
  if (noise.rows() != model.code_dim() || noise.cols() != batch_size) {
    throw std::invalid_argument("total_loss: noise must be code_dim x batch");
  }
  const CodeSpace& cs = model.code_space();
  const EncodedBatch enc = model.encoders().encode(g, batch);

  // Observations seen by the code and prior losses.
  const bool route = cfg.route_gradients;
  const Expr h_obs = route ? detach(enc.h_tilde) : enc.h_tilde;
  const Expr f_inc_obs = route ? detach(enc.f_inclusive) : enc.f_inclusive;
  const Expr f_strict_obs = route ? detach(enc.f_strict) : enc.f_strict;

  const GaussianExpr post = cs.posterior(g, h_obs, f_inc_obs);
  const Expr code = reparameterize(post, noise);

  auto [head_h, head_f] = cs.reconstruction_heads(g, code);
  Expr lc = scale(gaussian_logpdf(h_obs, head_h), -cfg.lambda1);
  Expr lf = scale_cols(gaussian_logpdf(f_strict_obs, head_f), enc.strict_present);
  lc = sub(lc, scale(lf, cfg.lambda2));
  out.code = batch_mean(lc);

  const GaussianExpr prior = cs.prior(g, h_obs);
  const GaussianExpr future = cs.future_predictor(g, h_obs, code);
  out.prior_recon = batch_mean(scale(gaussian_logpdf(f_inc_obs, future), -1.0));
  out.prior_kl = batch_mean(gaussian_kl(post, prior));

  // The decoder sees the attached encodings. With routing on, a second
  // posterior pass over them gives the same code value (same noise) while
  // carrying the decoder's gradient back into the encoders.
  Expr dec_code = code;
  if (route) dec_code = reparameterize(cs.posterior(g, enc.h_tilde, enc.f_inclusive), noise);
  const Expr condition = concat_rows({enc.h_tilde, dec_code});
  out.decoder = batch_mean(model.decoder().teacher_forced_nll(g, condition, targets));

  out.total = add(add(out.code, out.decoder), add(out.prior_recon, out.prior_kl));
  return out;
}

LossBreakdown breakdown_of(const LossExprs& losses, std::span<const ContextSplit> batch) {
  LossBreakdown b;
  b.loss_code = losses.code.scalar();
  b.loss_decoder = losses.decoder.scalar();
  b.loss_prior_recon = losses.prior_recon.scalar();
  b.loss_prior_kl = losses.prior_kl.scalar();
  b.total = losses.total.scalar();
  b.instances = batch.size();
  for (const auto& s : batch) b.decoder_tokens += s.target().size() + 1;
  return b;
}

LossBreakdown evaluate_loss(const NexusModel& model, std::span<const ContextSplit> batch,
                            const ObjectiveConfig& cfg, const Matrix& noise) {
  Graph g(false);
  return breakdown_of(build_losses(g, model, batch, cfg, noise), batch);
}

LossBreakdown total_loss(NexusModel& model, std::span<const ContextSplit> batch,
                         const ObjectiveConfig& cfg, const Matrix& noise) {
  Graph g;
  const LossExprs losses = build_losses(g, model, batch, cfg, noise);
  g.backward(losses.total);
  return breakdown_of(losses, batch);
}

double loss_code(const NexusModel& model, const EncodedContext& enc, const CodeSample& code,
                 const ObjectiveConfig& cfg) {
  auto [head_h, head_f] = model.code_space().reconstruction_heads(code.c);
  double out = -cfg.lambda1 * gaussian_logpdf(enc.h_tilde, head_h);
  if (enc.strict_future_present) out -= cfg.lambda2 * gaussian_logpdf(enc.f_tilde_strict, head_f);
  return out;
}

double loss_decoder(const NexusModel& model, const ContextSplit& split, const Vector& h_tilde,
                    const CodeSample& code) {
  return model.decoder().teacher_forced_nll(model.condition(h_tilde, code.c), split.target());
}

PriorLoss loss_prior(const NexusModel& model, const EncodedContext& enc,
                     const GaussianParams& posterior, const CodeSample& code) {
  const CodeSpace& cs = model.code_space();
  PriorLoss out;
  out.recon = -gaussian_logpdf(enc.f_tilde_inclusive, cs.future_predictor(enc.h_tilde, code.c));
  out.kl = gaussian_kl(posterior, cs.prior(enc.h_tilde));
  return out;
}

bool is_encoder_group(const std::string& group) {
  return group == "embedding" || group.rfind("encoder", 0) == 0;
}

RoutingReport gradient_by_group(NexusModel& model, std::span<const ContextSplit> batch,
                                const ObjectiveConfig& cfg, const Matrix& noise,
                                const std::vector<LossTerm>& terms) {
  if (terms.empty()) throw std::invalid_argument("gradient_by_group: no loss terms");
  model.params().zero_grad();
  {
    Graph g;
    const LossExprs losses = build_losses(g, model, batch, cfg, noise);
    Expr probe;
    for (LossTerm t : terms) {
      Expr e = t == LossTerm::code      ? losses.code
               : t == LossTerm::decoder ? losses.decoder
               : t == LossTerm::prior_recon ? losses.prior_recon
                                            : losses.prior_kl;
      probe = probe.valid() ? add(probe, e) : e;
    }
    g.backward(probe);
  }
  RoutingReport report;
  for (Parameter* p : model.params().all()) {
    double& m = report.group_max_abs[p->group()];
    m = std::max(m, p->grad.cwiseAbs().maxCoeff());
  }
  model.params().zero_grad();
  return report;
}

RoutingReport assert_gradient_routing(NexusModel& model, std::span<const ContextSplit> batch,
                                      const ObjectiveConfig& cfg, const Matrix& noise) {
  RoutingReport report = gradient_by_group(
      model, batch, cfg, noise, {LossTerm::code, LossTerm::prior_recon, LossTerm::prior_kl});
  for (const auto& [group, value] : report.group_max_abs) {
    if (is_encoder_group(group) && value != 0.0) report.violations.push_back(group);
  }
  if (!report.ok()) {
    std::string msg = "encoder gradients from code/prior losses in:";
    for (const auto& v : report.violations) msg += " " + v;
    throw RoutingViolation(msg, report.violations);
  }
  return report;
}

}  // namespace nexus
