#pragma once

#include "nexus/encoder_stack.hpp"
#include "nexus/layers.hpp"

#include <utility>

namespace nexus {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// Diagonal Gaussian N(mean, diag(exp(log_var))).
struct GaussianParams {
  Vector mean;
  Vector log_var;

  Eigen::Index dim() const { return mean.size(); }
  // Throws on unequal dims or non-finite entries; clamps log_var.
  static GaussianParams make(Vector mean, Vector log_var);
};

struct CodeSample {
  Vector c;
  Vector noise;
};

double gaussian_logpdf(const Vector& x, const GaussianParams& params);
// KL(p || q) in closed form.
double gaussian_kl(const GaussianParams& p, const GaussianParams& q);
CodeSample sample_reparam(const GaussianParams& params, Rng& rng);
CodeSample reparam_with_noise(const GaussianParams& params, const Vector& noise);
Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

// Batched graph counterparts; column b is one Gaussian.
struct GaussianExpr {
  Expr mean;
  Expr log_var;
};

Expr gaussian_logpdf(const Expr& x, const GaussianExpr& params);           // 1 x B
Expr gaussian_kl(const GaussianExpr& p, const GaussianExpr& q);            // 1 x B
Expr reparameterize(const GaussianExpr& params, const Matrix& noise);      // dim x B

// The perceptrons parameterizing every Gaussian of the model.
class CodeSpace {
 public:
  // code_log_var_init sets the initial log-variance output of the posterior and
  // prior networks.
  CodeSpace(ParameterSet& params, const EncoderConfig& config, int mlp_hidden,
            double code_log_var_init, Rng& rng);

  int code_dim() const { return code_dim_; }
  int observation_dim() const { return obs_dim_; }

  // p_phi(c | H, F_i)
  GaussianExpr posterior(Graph& g, const Expr& h_tilde, const Expr& f_inclusive) const;
  // p_theta(c | H)
  GaussianExpr prior(Graph& g, const Expr& h_tilde) const;
  // p_phi(H~ | c) and p_phi(F~_{i+1} | c)
  std::pair<GaussianExpr, GaussianExpr> reconstruction_heads(Graph& g, const Expr& code) const;
  // p_theta(F~_i | H, c)
  GaussianExpr future_predictor(Graph& g, const Expr& h_tilde, const Expr& code) const;

  GaussianParams posterior(const Vector& h_tilde, const Vector& f_inclusive) const;
  GaussianParams prior(const Vector& h_tilde) const;
  std::pair<GaussianParams, GaussianParams> reconstruction_heads(const Vector& code) const;
  GaussianParams future_predictor(const Vector& h_tilde, const Vector& code) const;

 private:
  static GaussianExpr split(const Expr& raw, int dim);

  int code_dim_;
  int obs_dim_;
  Mlp3 posterior_, prior_, head_history_, head_future_, future_;
};

}  // namespace nexus
