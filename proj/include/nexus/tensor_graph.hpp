#pragma once

// Reverse-mode differentiation over dense column-batched matrices.
//
// Every value is a Matrix whose columns are batch members. A Graph records
// the operations applied to its nodes and replays them backwards; parameter
// leaves accumulate their gradient into the owning Parameter.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

namespace nexus {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

class Parameter {
 public:
  Parameter(std::string name, std::string group, Matrix init);

  const std::string& name() const { return name_; }
  const std::string& group() const { return group_; }

  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }

 private:
  std::string name_;
  std::string group_;
};

// Ordered parameter collection with stable addresses.
class ParameterSet {
 public:
  Parameter& add(std::string name, std::string group, Matrix init);

  std::vector<Parameter*> all() const;
  Parameter* find(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  void zero_grad();
  void copy_values_from(const ParameterSet& other);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

class Graph;

class Expr {
 public:
  Expr() = default;
  Expr(Graph* g, int id) : graph_(g), id_(id) {}

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

  const Matrix& value() const;
  double scalar() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  // With record=false no backward closures are stored (inference only).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // One leaf per parameter per graph; repeated calls return the same node.
  Expr parameter(Parameter& p);
  Expr constant(Matrix value);

  // Seeds d(loss)/d(loss) = 1 for a 1x1 loss and propagates to parameters.
  void backward(const Expr& loss);

  bool recording() const { return record_; }
  std::size_t node_count() const { return nodes_.size(); }

  // Op construction interface.
  Expr push(Matrix value, std::vector<int> inputs, BackwardFn fn);
  const Matrix& value(int id) const { return nodes_[id].value; }
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  const std::vector<int>& inputs(int id) const { return nodes_[id].inputs; }
  // Lazily allocated accumulation buffer of an input node.
  Matrix& grad_buffer(int id);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> param_nodes_;
  bool record_;
};

// ---- ops -------------------------------------------------------------------

Expr matmul(const Expr& a, const Expr& b);
// W x + b, with b (rows x 1) broadcast over the columns of x.
Expr linear(const Expr& w, const Expr& x, const Expr& b);
Expr add(const Expr& a, const Expr& b);
Expr sub(const Expr& a, const Expr& b);
Expr cmul(const Expr& a, const Expr& b);
Expr scale(const Expr& a, double s);
// Multiplies column j of a by w(j).
Expr scale_cols(const Expr& a, const RowVector& w);
Expr tanh(const Expr& a);
Expr sigmoid(const Expr& a);
Expr exp(const Expr& a);
// Gradient passes only where lo < a < hi.
Expr clamp(const Expr& a, double lo, double hi);
Expr detach(const Expr& a);

Expr concat_rows(const std::vector<Expr>& parts);
Expr slice_rows(const Expr& a, Eigen::Index start, Eigen::Index n);
// Column j of the result is column idx[j] of a, or zeros when idx[j] < 0.
Expr gather_cols(const Expr& a, const std::vector<int>& idx);
// Column j of the result is column j of states[step[j] - 1]; step[j] == 0
// yields a zero column. All states share one shape.
Expr pick_steps(const std::vector<Expr>& states, const std::vector<int>& step);

Expr sum_rows(const Expr& a);  // 1 x cols
Expr sum_all(const Expr& a);   // 1 x 1

// Gated recurrent step: w (3H x I), u (3H x H), b (3H x 1), ordered
// update/reset/candidate. n = tanh(Wn x + bn + r * (Un h)), h' = (1-z) n + z h.
Expr gru_step(const Expr& x, const Expr& h, const Expr& w, const Expr& u,
              const Expr& b);
// Value-only evaluation of the same step, for inference loops.
Matrix gru_forward(const Matrix& x, const Matrix& h, const Matrix& w, const Matrix& u,
                   const Matrix& b);

// Per-column negative log-likelihood of targets under softmax(logits),
// multiplied by weights. Returns 1 x cols.
Expr softmax_xent(const Expr& logits, const std::vector<int>& targets,
                  const RowVector& weights);

}  // namespace nexus
