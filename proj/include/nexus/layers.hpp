#pragma once

#include "nexus/tensor_graph.hpp"

#include <random>
#include <string>

namespace nexus {

using Rng = std::mt19937_64;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Matrix fan_in_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng);

class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& name, const std::string& group,
         int in_dim, int out_dim, Rng& rng);

  Expr operator()(Graph& g, const Expr& x) const;
  Matrix forward(const Matrix& x) const;
  int in_dim() const { return in_; }
  int out_dim() const { return out_; }
  Parameter& weight() const { return *w_; }
  Parameter& bias() const { return *b_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* b_ = nullptr;
  int in_ = 0;
  int out_ = 0;
};

// Three affine layers; tanh after the first two.
class Mlp3 {
 public:
  Mlp3() = default;
  Mlp3(ParameterSet& params, const std::string& name, const std::string& group, int in_dim,
       int hidden_dim, int out_dim, Rng& rng);

  Expr operator()(Graph& g, const Expr& x) const;
  int out_dim() const { return l3_.out_dim(); }
  const Linear& output_layer() const { return l3_; }

 private:
  Linear l1_, l2_, l3_;
};

class GruCell {
 public:
  GruCell() = default;
  GruCell(ParameterSet& params, const std::string& name, const std::string& group, int in_dim,
          int hidden_dim, Rng& rng);

  Expr step(Graph& g, const Expr& x, const Expr& h) const;
  Matrix forward(const Matrix& x, const Matrix& h) const;
  Expr initial_state(Graph& g, Eigen::Index batch) const;
  int hidden_dim() const { return hidden_; }
  int in_dim() const { return in_; }

 private:
  Parameter* w_ = nullptr;
  Parameter* u_ = nullptr;
  Parameter* b_ = nullptr;
  int in_ = 0;
  int hidden_ = 0;
};

}  // namespace nexus
