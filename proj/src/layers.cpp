#include "nexus/layers.hpp"

#include <cmath>

namespace nexus {

Matrix fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cols));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
  }
  return m;
}

Linear::Linear(ParameterSet& params, const std::string& name, const std::string& group,
               int in_dim, int out_dim, Rng& rng)
    : in_(in_dim), out_(out_dim) {
  w_ = &params.add(name + ".w", group, fan_in_uniform(out_dim, in_dim, rng));
  b_ = &params.add(name + ".b", group, Matrix::Zero(out_dim, 1));
}

Expr Linear::operator()(Graph& g, const Expr& x) const {
  return linear(g.parameter(*w_), x, g.parameter(*b_));
}

Matrix Linear::forward(const Matrix& x) const {
  Matrix out = w_->value * x;
  out.colwise() += b_->value.col(0);
  return out;
}

Mlp3::Mlp3(ParameterSet& params, const std::string& name, const std::string& group, int in_dim,
           int hidden_dim, int out_dim, Rng& rng)
    : l1_(params, name + ".l1", group, in_dim, hidden_dim, rng),
      l2_(params, name + ".l2", group, hidden_dim, hidden_dim, rng),
      l3_(params, name + ".l3", group, hidden_dim, out_dim, rng) {}

Expr Mlp3::operator()(Graph& g, const Expr& x) const {
  Expr h = tanh(l1_(g, x));
  h = tanh(l2_(g, h));
  return l3_(g, h);
}

GruCell::GruCell(ParameterSet& params, const std::string& name, const std::string& group,
                 int in_dim, int hidden_dim, Rng& rng)
    : in_(in_dim), hidden_(hidden_dim) {
  w_ = &params.add(name + ".w", group, fan_in_uniform(3 * hidden_dim, in_dim, rng));
  u_ = &params.add(name + ".u", group, fan_in_uniform(3 * hidden_dim, hidden_dim, rng));
  b_ = &params.add(name + ".b", group, Matrix::Zero(3 * hidden_dim, 1));
}

Expr GruCell::step(Graph& g, const Expr& x, const Expr& h) const {
  return gru_step(x, h, g.parameter(*w_), g.parameter(*u_), g.parameter(*b_));
}

Matrix GruCell::forward(const Matrix& x, const Matrix& h) const {
  return gru_forward(x, h, w_->value, u_->value, b_->value);
}

Expr GruCell::initial_state(Graph& g, Eigen::Index batch) const {
  return g.constant(Matrix::Zero(hidden_, batch));
}

}  // namespace nexus
