#include "nexus/tensor_graph.hpp"

#include <cmath>
#include <stdexcept>

namespace nexus {

Parameter::Parameter(std::string name, std::string group, Matrix init)
    : value(std::move(init)), name_(std::move(name)), group_(std::move(group)) {
  zero_grad();
}

Parameter& ParameterSet::add(std::string name, std::string group, Matrix init) {
  if (find(name) != nullptr) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(group),
                                                std::move(init)));
  return *params_.back();
}

std::vector<Parameter*> ParameterSet::all() const {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name() == name) return p.get();
  }
  return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  if (other.params_.size() != params_.size()) {
    throw std::invalid_argument("parameter set layout mismatch");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto& src = *other.params_[i];
    auto& dst = *params_[i];
    if (src.name() != dst.name() || src.value.rows() != dst.value.rows() ||
        src.value.cols() != dst.value.cols()) {
      throw std::invalid_argument("parameter set layout mismatch at " + dst.name());
    }
    dst.value = src.value;
  }
}

const Matrix& Expr::value() const { return graph_->value(id_); }

double Expr::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::logic_error("Expr::scalar on non-scalar node");
  return v(0, 0);
}

Expr Graph::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return {this, it->second};
  Node n;
  n.value = p.value;
  n.param = &p;
  n.needs_grad = record_;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return {this, id};
}

Expr Graph::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Expr Graph::push(Matrix value, std::vector<int> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  if (record_) {
    for (int i : inputs) n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
    if (n.needs_grad) {
      n.inputs = std::move(inputs);
      n.backward = std::move(fn);
    }
  }
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Matrix& Graph::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad.setZero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(const Expr& loss) {
  if (!record_) throw std::logic_error("backward on a non-recording graph");
  if (loss.graph() != this || loss.value().size() != 1) {
    throw std::invalid_argument("backward needs a 1x1 node of this graph");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_buffer(loss.id()).setOnes();
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

namespace {

Graph& same_graph(const Expr& a, const Expr& b) {
  if (a.graph() != b.graph()) throw std::invalid_argument("expressions from different graphs");
  return *a.graph();
}

void check_same_shape(const Expr& a, const Expr& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Expr matmul(const Expr& a, const Expr& b) {
  Graph& g = same_graph(a, b);
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  const int ia = a.id(), ib = b.id();
  return g.push(a.value() * b.value(), {ia, ib}, [ia, ib](Graph& g, int self) {
    const Matrix& d = g.grad(self);
    if (g.needs_grad(ia)) g.grad_buffer(ia).noalias() += d * g.value(ib).transpose();
    if (g.needs_grad(ib)) g.grad_buffer(ib).noalias() += g.value(ia).transpose() * d;
  });
}

Expr linear(const Expr& w, const Expr& x, const Expr& b) {
  Graph& g = same_graph(w, x);
  same_graph(w, b);
  if (w.cols() != x.rows() || b.rows() != w.rows() || b.cols() != 1) {
    throw std::invalid_argument("linear: shape mismatch");
  }
  Matrix out = w.value() * x.value();
  out.colwise() += b.value().col(0);
  const int iw = w.id(), ix = x.id(), ib = b.id();
  return g.push(std::move(out), {iw, ix, ib}, [iw, ix, ib](Graph& g, int self) {
    const Matrix& d = g.grad(self);
    if (g.needs_grad(iw)) g.grad_buffer(iw).noalias() += d * g.value(ix).transpose();
    if (g.needs_grad(ix)) g.grad_buffer(ix).noalias() += g.value(iw).transpose() * d;
    if (g.needs_grad(ib)) g.grad_buffer(ib) += d.rowwise().sum();
  });
}

Expr add(const Expr& a, const Expr& b) {
  Graph& g = same_graph(a, b);
  check_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return g.push(a.value() + b.value(), {ia, ib}, [ia, ib](Graph& g, int self) {
    if (g.needs_grad(ia)) g.grad_buffer(ia) += g.grad(self);
    if (g.needs_grad(ib)) g.grad_buffer(ib) += g.grad(self);
  });
}

Expr sub(const Expr& a, const Expr& b) {
  Graph& g = same_graph(a, b);
  check_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return g.push(a.value() - b.value(), {ia, ib}, [ia, ib](Graph& g, int self) {
    if (g.needs_grad(ia)) g.grad_buffer(ia) += g.grad(self);
    if (g.needs_grad(ib)) g.grad_buffer(ib) -= g.grad(self);
  });
}

Expr cmul(const Expr& a, const Expr& b) {
  Graph& g = same_graph(a, b);
  check_same_shape(a, b, "cmul");
  const int ia = a.id(), ib = b.id();
  return g.push(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Graph& g, int self) {
    const Matrix& d = g.grad(self);
    if (g.needs_grad(ia)) g.grad_buffer(ia) += d.cwiseProduct(g.value(ib));
    if (g.needs_grad(ib)) g.grad_buffer(ib) += d.cwiseProduct(g.value(ia));
  });
}

Expr scale(const Expr& a, double s) {
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.push(a.value() * s, {ia}, [ia, s](Graph& g, int self) {
    g.grad_buffer(ia) += g.grad(self) * s;
  });
}

Expr scale_cols(const Expr& a, const RowVector& w) {
  Graph& g = *a.graph();
  if (w.size() != a.cols()) throw std::invalid_argument("scale_cols: width mismatch");
  const int ia = a.id();
  Matrix out = a.value() * w.asDiagonal();
  return g.push(std::move(out), {ia}, [ia, w](Graph& g, int self) {
    g.grad_buffer(ia) += g.grad(self) * w.asDiagonal();
  });
}

Expr tanh(const Expr& a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.push(a.value().array().tanh().matrix(), {ia}, [ia](Graph& g, int self) {
    const Matrix& y = g.value(self);
    g.grad_buffer(ia).array() += g.grad(self).array() * (1.0 - y.array().square());
  });
}

Expr sigmoid(const Expr& a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix y = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  return g.push(std::move(y), {ia}, [ia](Graph& g, int self) {
    const Matrix& y = g.value(self);
    g.grad_buffer(ia).array() += g.grad(self).array() * y.array() * (1.0 - y.array());
  });
}

Expr exp(const Expr& a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.push(a.value().array().exp().matrix(), {ia}, [ia](Graph& g, int self) {
    g.grad_buffer(ia).array() += g.grad(self).array() * g.value(self).array();
  });
}

Expr clamp(const Expr& a, double lo, double hi) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix y = a.value().cwiseMax(lo).cwiseMin(hi);
  return g.push(std::move(y), {ia}, [ia, lo, hi](Graph& g, int self) {
    const Matrix& x = g.value(ia);
    Matrix& dst = g.grad_buffer(ia);
    const Matrix& d = g.grad(self);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      if (x(i) > lo && x(i) < hi) dst(i) += d(i);
    }
  });
}

Expr detach(const Expr& a) { return a.graph()->constant(a.value()); }

Expr concat_rows(const std::vector<Expr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no inputs");
  Graph& g = *parts.front().graph();
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts.front().cols();
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.graph() != &g || p.cols() != cols) {
      throw std::invalid_argument("concat_rows: column mismatch");
    }
    rows += p.rows();
    ids.push_back(p.id());
  }
  Matrix out(rows, cols);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return g.push(std::move(out), ids, [ids](Graph& g, int self) {
    Eigen::Index r = 0;
    for (int id : ids) {
      const Eigen::Index n = g.value(id).rows();
      if (g.needs_grad(id)) g.grad_buffer(id) += g.grad(self).middleRows(r, n);
      r += n;
    }
  });
}

Expr slice_rows(const Expr& a, Eigen::Index start, Eigen::Index n) {
  if (start < 0 || n < 0 || start + n > a.rows()) {
    throw std::invalid_argument("slice_rows: out of range");
  }
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.push(a.value().middleRows(start, n), {ia}, [ia, start, n](Graph& g, int self) {
    g.grad_buffer(ia).middleRows(start, n) += g.grad(self);
  });
}

Expr gather_cols(const Expr& a, const std::vector<int>& idx) {
  Graph& g = *a.graph();
  const Matrix& src = a.value();
  Matrix out = Matrix::Zero(src.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] >= src.cols()) throw std::out_of_range("gather_cols: index out of range");
    if (idx[j] >= 0) out.col(static_cast<Eigen::Index>(j)) = src.col(idx[j]);
  }
  const int ia = a.id();
  return g.push(std::move(out), {ia}, [ia, idx](Graph& g, int self) {
    Matrix& dst = g.grad_buffer(ia);
    const Matrix& d = g.grad(self);
    for (std::size_t j = 0; j < idx.size(); ++j) {
      if (idx[j] >= 0) dst.col(idx[j]) += d.col(static_cast<Eigen::Index>(j));
    }
  });
}

Expr pick_steps(const std::vector<Expr>& states, const std::vector<int>& step) {
  if (states.empty()) throw std::invalid_argument("pick_steps: no states");
  Graph& g = *states.front().graph();
  const Eigen::Index rows = states.front().rows();
  const Eigen::Index cols = static_cast<Eigen::Index>(step.size());
  std::vector<int> ids;
  for (const auto& s : states) {
    if (s.rows() != rows || s.cols() != cols) throw std::invalid_argument("pick_steps: shape mismatch");
    ids.push_back(s.id());
  }
  Matrix out = Matrix::Zero(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    const int k = step[static_cast<std::size_t>(j)];
    if (k < 0 || k > static_cast<int>(states.size())) throw std::out_of_range("pick_steps: step out of range");
    if (k > 0) out.col(j) = states[static_cast<std::size_t>(k - 1)].value().col(j);
  }
  return g.push(std::move(out), ids, [ids, step](Graph& g, int self) {
    const Matrix& d = g.grad(self);
    for (std::size_t j = 0; j < step.size(); ++j) {
      const int k = step[j];
      if (k == 0) continue;
      const int id = ids[static_cast<std::size_t>(k - 1)];
      if (g.needs_grad(id)) g.grad_buffer(id).col(static_cast<Eigen::Index>(j)) += d.col(static_cast<Eigen::Index>(j));
    }
  });
}

Expr sum_rows(const Expr& a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  return g.push(a.value().colwise().sum(), {ia}, [ia](Graph& g, int self) {
    g.grad_buffer(ia).rowwise() += g.grad(self).row(0);
  });
}

Expr sum_all(const Expr& a) {
  Graph& g = *a.graph();
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return g.push(std::move(out), {ia}, [ia](Graph& g, int self) {
    g.grad_buffer(ia).array() += g.grad(self)(0, 0);
  });
}

namespace {

struct GruValues {
  Matrix z, r, n, uh_n, out;
};

GruValues gru_values(const Matrix& x, const Matrix& h, const Matrix& w, const Matrix& u,
                     const Matrix& b) {
  const Eigen::Index H = h.rows();
  if (w.rows() != 3 * H || u.rows() != 3 * H || u.cols() != H || w.cols() != x.rows() ||
      b.rows() != 3 * H || b.cols() != 1 || x.cols() != h.cols()) {
    throw std::invalid_argument("gru_step: shape mismatch");
  }
  Matrix gx = w * x;
  gx.colwise() += b.col(0);
  const Matrix gh = u * h;
  GruValues v;
  v.z = (1.0 + (-(gx.topRows(H) + gh.topRows(H)).array()).exp()).inverse().matrix();
  v.r = (1.0 + (-(gx.middleRows(H, H) + gh.middleRows(H, H)).array()).exp()).inverse().matrix();
  v.uh_n = gh.bottomRows(H);
  v.n = (gx.bottomRows(H).array() + v.r.array() * v.uh_n.array()).tanh().matrix();
  v.out = ((1.0 - v.z.array()) * v.n.array() + v.z.array() * h.array()).matrix();
  return v;
}

}  // namespace

Matrix gru_forward(const Matrix& x, const Matrix& h, const Matrix& w, const Matrix& u,
                   const Matrix& b) {
  return gru_values(x, h, w, u, b).out;
}

Expr gru_step(const Expr& x, const Expr& h, const Expr& w, const Expr& u, const Expr& b) {
  Graph& g = same_graph(x, h);
  GruValues v = gru_values(x.value(), h.value(), w.value(), u.value(), b.value());
  const Eigen::Index H = h.rows();
  Matrix out = std::move(v.out);
  const Matrix z = std::move(v.z), r = std::move(v.r), n = std::move(v.n), uh_n = std::move(v.uh_n);

  const int ix = x.id(), ih = h.id(), iw = w.id(), iu = u.id(), ib = b.id();
  return g.push(std::move(out), {ix, ih, iw, iu, ib},
                [=](Graph& g, int self) {
                  const Matrix& d = g.grad(self);
                  const Matrix& hv = g.value(ih);
                  const Eigen::ArrayXXd dz = d.array() * (hv.array() - n.array());
                  const Eigen::ArrayXXd dn = d.array() * (1.0 - z.array());
                  const Eigen::ArrayXXd dn_pre = dn * (1.0 - n.array().square());
                  const Eigen::ArrayXXd dr = dn_pre * uh_n.array();
                  Matrix dgate(3 * H, d.cols());
                  dgate.topRows(H) = (dz * z.array() * (1.0 - z.array())).matrix();
                  dgate.middleRows(H, H) = (dr * r.array() * (1.0 - r.array())).matrix();
                  dgate.bottomRows(H) = dn_pre.matrix();
                  // Recurrent-side pre-activation gradient: candidate row is gated by r.
                  Matrix dgh = dgate;
                  dgh.bottomRows(H) = (dn_pre * r.array()).matrix();
                  if (g.needs_grad(ix)) g.grad_buffer(ix).noalias() += g.value(iw).transpose() * dgate;
                  if (g.needs_grad(iw)) g.grad_buffer(iw).noalias() += dgate * g.value(ix).transpose();
                  if (g.needs_grad(ib)) g.grad_buffer(ib) += dgate.rowwise().sum();
                  if (g.needs_grad(iu)) g.grad_buffer(iu).noalias() += dgh * hv.transpose();
                  if (g.needs_grad(ih)) {
                    Matrix& dh = g.grad_buffer(ih);
                    dh.noalias() += g.value(iu).transpose() * dgh;
                    dh.array() += d.array() * z.array();
                  }
                });
}

Expr softmax_xent(const Expr& logits, const std::vector<int>& targets, const RowVector& weights) {
  Graph& g = *logits.graph();
  const Matrix& l = logits.value();
  const Eigen::Index V = l.rows(), B = l.cols();
  if (static_cast<Eigen::Index>(targets.size()) != B || weights.size() != B) {
    throw std::invalid_argument("softmax_xent: batch mismatch");
  }
  Matrix prob(V, B);
  Matrix out(1, B);
  for (Eigen::Index j = 0; j < B; ++j) {
    const int t = targets[static_cast<std::size_t>(j)];
    if (t < 0 || t >= V) throw std::out_of_range("softmax_xent: target out of range");
    const double m = l.col(j).maxCoeff();
    Eigen::ArrayXd e = (l.col(j).array() - m).exp();
    const double z = e.sum();
    prob.col(j) = (e / z).matrix();
    out(0, j) = weights(j) * (std::log(z) + m - l(t, j));
  }
  const int il = logits.id();
  return g.push(std::move(out), {il}, [il, prob, targets, weights](Graph& g, int self) {
    Matrix& dst = g.grad_buffer(il);
    const Matrix& d = g.grad(self);
    for (Eigen::Index j = 0; j < prob.cols(); ++j) {
      const double s = d(0, j) * weights(j);
      if (s == 0.0) continue;
      dst.col(j) += s * prob.col(j);
      dst(targets[static_cast<std::size_t>(j)], j) -= s;
    }
  });
}

}  // namespace nexus
