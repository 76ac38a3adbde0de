#include "nexus/code_space.hpp"

#include <cmath>
#include <stdexcept>

namespace nexus {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // ln(2 pi)

void require_same_dim(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

GaussianParams from_expr(const GaussianExpr& e) {
  return {e.mean.value().col(0), e.log_var.value().col(0)};
}

}  // namespace

GaussianParams GaussianParams::make(Vector mean, Vector log_var) {
  require_same_dim(mean.size(), log_var.size(), "GaussianParams");
  if (!mean.allFinite() || !log_var.allFinite()) {
    throw std::invalid_argument("GaussianParams: non-finite entries");
  }
  return {std::move(mean), log_var.cwiseMax(kLogVarMin).cwiseMin(kLogVarMax)};
}

double gaussian_logpdf(const Vector& x, const GaussianParams& params) {
  require_same_dim(x.size(), params.dim(), "gaussian_logpdf");
  const auto diff = (x - params.mean).array();
  return (-0.5 * (kLog2Pi + params.log_var.array() + diff.square() * (-params.log_var.array()).exp()))
      .sum();
}

double gaussian_kl(const GaussianParams& p, const GaussianParams& q) {
  require_same_dim(p.dim(), q.dim(), "gaussian_kl");
  const Eigen::ArrayXd dm = (p.mean - q.mean).array();
  const Eigen::ArrayXd r = (p.log_var - q.log_var).array();
  // expm1(r) - r is exactly zero at r = 0 and never negative.
  const Eigen::ArrayXd terms = r.unaryExpr([](double v) { return std::expm1(v) - v; }) +
                               dm.square() * (-q.log_var.array()).exp();
  return 0.5 * terms.sum();
}

Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

CodeSample reparam_with_noise(const GaussianParams& params, const Vector& noise) {
  require_same_dim(noise.size(), params.dim(), "reparam_with_noise");
  Vector c = (params.mean.array() + (params.log_var.array() * 0.5).exp() * noise.array()).matrix();
  return {std::move(c), noise};
}

CodeSample sample_reparam(const GaussianParams& params, Rng& rng) {
  return reparam_with_noise(params, standard_normal(params.dim(), 1, rng).col(0));
}

Expr gaussian_logpdf(const Expr& x, const GaussianExpr& params) {
  Graph& g = *x.graph();
  const Matrix& xv = x.value();
  const Matrix& mv = params.mean.value();
  const Matrix& lv = params.log_var.value();
  if (xv.rows() != mv.rows() || xv.cols() != mv.cols() || lv.rows() != mv.rows() ||
      lv.cols() != mv.cols()) {
    throw std::invalid_argument("gaussian_logpdf: shape mismatch");
  }
  const Matrix diff = xv - mv;
  const Matrix inv_var = (-lv.array()).exp().matrix();
  Matrix out = (-0.5 * (kLog2Pi + lv.array() + diff.array().square() * inv_var.array()))
                   .colwise()
                   .sum()
                   .matrix();
  const int ix = x.id(), im = params.mean.id(), il = params.log_var.id();
  return g.push(std::move(out), {ix, im, il}, [=](Graph& g, int self) {
    const RowVector d = g.grad(self).row(0);
    const Matrix scaled = diff.cwiseProduct(inv_var);
    if (g.needs_grad(ix)) g.grad_buffer(ix) -= scaled * d.asDiagonal();
    if (g.needs_grad(im)) g.grad_buffer(im) += scaled * d.asDiagonal();
    if (g.needs_grad(il)) {
      const Matrix dl = (0.5 * (diff.array().square() * inv_var.array() - 1.0)).matrix();
      g.grad_buffer(il) += dl * d.asDiagonal();
    }
  });
}

Expr gaussian_kl(const GaussianExpr& p, const GaussianExpr& q) {
  Graph& g = *p.mean.graph();
  const Matrix& mp = p.mean.value();
  const Matrix& lp = p.log_var.value();
  const Matrix& mq = q.mean.value();
  const Matrix& lq = q.log_var.value();
  if (mp.rows() != mq.rows() || mp.cols() != mq.cols() || lp.rows() != mp.rows() ||
      lq.rows() != mq.rows() || lp.cols() != mp.cols() || lq.cols() != mq.cols()) {
    throw std::invalid_argument("gaussian_kl: shape mismatch");
  }
  const Matrix dm = mp - mq;
  const Matrix inv_vq = (-lq.array()).exp().matrix();
  const Matrix vp = lp.array().exp().matrix();
  const Eigen::ArrayXXd r = lp.array() - lq.array();
  Matrix out = (0.5 * (r.unaryExpr([](double v) { return std::expm1(v) - v; }) +
                       dm.array().square() * inv_vq.array()))
                   .colwise()
                   .sum()
                   .matrix();
  const int imp = p.mean.id(), ilp = p.log_var.id(), imq = q.mean.id(), ilq = q.log_var.id();
  return g.push(std::move(out), {imp, ilp, imq, ilq}, [=](Graph& g, int self) {
    const RowVector d = g.grad(self).row(0);
    const Matrix dmean = dm.cwiseProduct(inv_vq) * d.asDiagonal();
    if (g.needs_grad(imp)) g.grad_buffer(imp) += dmean;
    if (g.needs_grad(imq)) g.grad_buffer(imq) -= dmean;
    if (g.needs_grad(ilp)) {
      g.grad_buffer(ilp) += (0.5 * (vp.array() * inv_vq.array() - 1.0)).matrix() * d.asDiagonal();
    }
    if (g.needs_grad(ilq)) {
      g.grad_buffer(ilq) +=
          (0.5 * (1.0 - (vp.array() + dm.array().square()) * inv_vq.array())).matrix() * d.asDiagonal();
    }
  });
}

Expr reparameterize(const GaussianExpr& params, const Matrix& noise) {
  Graph& g = *params.mean.graph();
  if (noise.rows() != params.mean.rows() || noise.cols() != params.mean.cols()) {
    throw std::invalid_argument("reparameterize: noise shape mismatch");
  }
  Expr sigma = exp(scale(params.log_var, 0.5));
  return add(params.mean, cmul(sigma, g.constant(noise)));
}

CodeSpace::CodeSpace(ParameterSet& params, const EncoderConfig& config, int mlp_hidden,
                     double code_log_var_init, Rng& rng)
    : code_dim_(config.code_dim), obs_dim_(config.context_hidden) {
  config.validate();
  const int h = config.context_hidden;
  const int c = config.code_dim;
  posterior_ = Mlp3(params, "posterior", "posterior", 2 * h, mlp_hidden, 2 * c, rng);
  prior_ = Mlp3(params, "prior", "prior", h, mlp_hidden, 2 * c, rng);
  head_history_ = Mlp3(params, "head.history", "head.history", c, mlp_hidden, 2 * h, rng);
  head_future_ = Mlp3(params, "head.future", "head.future", c, mlp_hidden, 2 * h, rng);
  future_ = Mlp3(params, "future_predictor", "future_predictor", h + c, mlp_hidden, 2 * h, rng);
  posterior_.output_layer().bias().value.bottomRows(c).setConstant(code_log_var_init);
  prior_.output_layer().bias().value.bottomRows(c).setConstant(code_log_var_init);
}

GaussianExpr CodeSpace::split(const Expr& raw, int dim) {
  return {slice_rows(raw, 0, dim), clamp(slice_rows(raw, dim, dim), kLogVarMin, kLogVarMax)};
}

GaussianExpr CodeSpace::posterior(Graph& g, const Expr& h_tilde, const Expr& f_inclusive) const {
  return split(posterior_(g, concat_rows({h_tilde, f_inclusive})), code_dim_);
}

GaussianExpr CodeSpace::prior(Graph& g, const Expr& h_tilde) const {
  return split(prior_(g, h_tilde), code_dim_);
}

std::pair<GaussianExpr, GaussianExpr> CodeSpace::reconstruction_heads(Graph& g, const Expr& code) const {
  return {split(head_history_(g, code), obs_dim_), split(head_future_(g, code), obs_dim_)};
}

GaussianExpr CodeSpace::future_predictor(Graph& g, const Expr& h_tilde, const Expr& code) const {
  return split(future_(g, concat_rows({h_tilde, code})), obs_dim_);
}

GaussianParams CodeSpace::posterior(const Vector& h_tilde, const Vector& f_inclusive) const {
  Graph g(false);
  return from_expr(posterior(g, g.constant(h_tilde), g.constant(f_inclusive)));
}

GaussianParams CodeSpace::prior(const Vector& h_tilde) const {
  Graph g(false);
  return from_expr(prior(g, g.constant(h_tilde)));
}

std::pair<GaussianParams, GaussianParams> CodeSpace::reconstruction_heads(const Vector& code) const {
  Graph g(false);
  auto [h, f] = reconstruction_heads(g, g.constant(code));
  return {from_expr(h), from_expr(f)};
}

GaussianParams CodeSpace::future_predictor(const Vector& h_tilde, const Vector& code) const {
  Graph g(false);
  return from_expr(future_predictor(g, g.constant(h_tilde), g.constant(code)));
}

}  // namespace nexus
