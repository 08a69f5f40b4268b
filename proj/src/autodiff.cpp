#include "st3d/autodiff.hpp"

#include "binary_io.hpp"
#include "st3d/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <unordered_set>
#include <utility>

namespace st3d::ad {

namespace {

std::string shape(const Matrix& m) { return std::to_string(m.rows()) + "x" + std::to_string(m.cols()); }

void require(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) throw UsageError(std::string(op) + ": incompatible shapes " + shape(a) + " and " + shape(b));
}

void push(const Tensor& parent, const Matrix& g) {
  if (parent.requires_grad()) parent.node()->accumulate(g);
}

}  // namespace

// --- Tensor ---------------------------------------------------------------------

Tensor Tensor::constant(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Tensor(std::move(node));
}

Tensor Tensor::variable(Matrix value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Tensor(std::move(node));
}

const Matrix& Tensor::value() const {
  if (!node_) throw UsageError("use of an undefined tensor");
  return node_->value;
}

Matrix& Tensor::mutable_value() {
  if (!node_) throw UsageError("use of an undefined tensor");
  return node_->value;
}

Matrix Tensor::grad() const {
  if (node_->grad.size() == 0) return Matrix::Zero(rows(), cols());
  return node_->grad;
}

bool Tensor::has_grad() const { return node_ && node_->grad.size() != 0; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

double Tensor::item() const {
  if (rows() != 1 || cols() != 1) throw UsageError("item() on a " + shape(value()) + " tensor");
  return value()(0, 0);
}

void Tensor::zero_grad() {
  if (node_) node_->grad.resize(0, 0);
}

void Tensor::backward() const {
  if (rows() != 1 || cols() != 1) throw UsageError("backward() needs a 1x1 tensor, got " + shape(value()));
  if (!node_->requires_grad) return;

  // Iterative post-order DFS; reversed, it is a topological order from the root.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].node();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->accumulate(Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

void Node::accumulate(const Matrix& g) {
  if (g.rows() != value.rows() || g.cols() != value.cols()) {
    throw UsageError("gradient shape " + shape(g) + " does not match value shape " + shape(value));
  }
  if (grad.size() == 0) {
    grad = g;
  } else {
    grad += g;
  }
}

Tensor make_result(Matrix value, std::vector<Tensor> parents, std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return p.requires_grad(); });
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// --- primitives -------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul", a.value(), b.value());
  return make_result(a.value() * b.value(), {a, b}, [](Node& self) {
    const Tensor& a = self.parents[0];
    const Tensor& b = self.parents[1];
    if (a.requires_grad()) push(a, self.grad * b.value().transpose());
    if (b.requires_grad()) push(b, a.value().transpose() * self.grad);
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "add", a.value(), b.value());
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    push(self.parents[0], self.grad);
    push(self.parents[1], self.grad);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "sub", a.value(), b.value());
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    push(self.parents[0], self.grad);
    if (self.parents[1].requires_grad()) push(self.parents[1], -self.grad);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "mul", a.value(), b.value());
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    const Tensor& a = self.parents[0];
    const Tensor& b = self.parents[1];
    if (a.requires_grad()) push(a, self.grad.cwiseProduct(b.value()));
    if (b.requires_grad()) push(b, self.grad.cwiseProduct(a.value()));
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "add_row", a.value(), row.value());
  Matrix out = a.value();
  out.rowwise() += row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    push(self.parents[0], self.grad);
    if (self.parents[1].requires_grad()) push(self.parents[1], self.grad.colwise().sum());
  });
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
  require(row.rows() == 1 && row.cols() == a.cols(), "mul_row", a.value(), row.value());
  Matrix out = a.value().array().rowwise() * row.value().row(0).array();
  return make_result(std::move(out), {a, row}, [](Node& self) {
    const Tensor& a = self.parents[0];
    const Tensor& row = self.parents[1];
    if (a.requires_grad()) {
      Matrix g = self.grad.array().rowwise() * row.value().row(0).array();
      push(a, g);
    }
    if (row.requires_grad()) push(row, self.grad.cwiseProduct(a.value()).colwise().sum());
  });
}

Tensor scale(const Tensor& a, double s) {
  return make_result(a.value() * s, {a}, [s](Node& self) { push(self.parents[0], self.grad * s); });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  require(s.rows() == 1 && s.cols() == 1, "scale_by", a.value(), s.value());
  return make_result(a.value() * s.item(), {a, s}, [](Node& self) {
    const Tensor& a = self.parents[0];
    const Tensor& s = self.parents[1];
    if (a.requires_grad()) push(a, self.grad * s.item());
    if (s.requires_grad()) push(s, Matrix::Constant(1, 1, self.grad.cwiseProduct(a.value()).sum()));
  });
}

Tensor transpose(const Tensor& a) {
  return make_result(a.value().transpose(), {a}, [](Node& self) { push(self.parents[0], self.grad.transpose()); });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    require(p.rows() == parts.front().rows(), "concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix out(parts.front().rows(), cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result(std::move(out), parts, [](Node& self) {
    Eigen::Index at = 0;
    for (const auto& p : self.parents) {
      if (p.requires_grad()) push(p, self.grad.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Tensor slice_cols(const Tensor& a, Eigen::Index begin, Eigen::Index count) {
  if (begin < 0 || count < 0 || begin + count > a.cols()) {
    throw UsageError("slice_cols: columns [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + shape(a.value()));
  }
  return make_result(a.value().middleCols(begin, count), {a}, [begin, count](Node& self) {
    const Tensor& a = self.parents[0];
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    g.middleCols(begin, count) = self.grad;
    push(a, g);
  });
}

Tensor select_rows(const Tensor& a, const std::vector<Eigen::Index>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) {
      throw UsageError("select_rows: row " + std::to_string(rows[i]) + " out of range for " + shape(a.value()));
    }
    out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
  }
  return make_result(std::move(out), {a}, [rows](Node& self) {
    const Tensor& a = self.parents[0];
    Matrix g = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) g.row(rows[i]) += self.grad.row(static_cast<Eigen::Index>(i));
    push(a, g);
  });
}

Tensor outer_sum(const Tensor& col, const Tensor& row) {
  require(col.cols() == 1 && row.rows() == 1, "outer_sum", col.value(), row.value());
  Matrix out(col.rows(), row.cols());
  out.colwise() = col.value().col(0);
  out.rowwise() += row.value().row(0);
  return make_result(std::move(out), {col, row}, [](Node& self) {
    if (self.parents[0].requires_grad()) push(self.parents[0], self.grad.rowwise().sum());
    if (self.parents[1].requires_grad()) push(self.parents[1], self.grad.colwise().sum());
  });
}

Tensor leaky_relu(const Tensor& a, double slope) {
  Matrix out = a.value().unaryExpr([slope](double x) { return x > 0.0 ? x : slope * x; });
  return make_result(std::move(out), {a}, [slope](Node& self) {
    const Matrix& x = self.parents[0].value();
    Matrix g = self.grad.binaryExpr(x, [slope](double gi, double xi) { return xi > 0.0 ? gi : slope * gi; });
    push(self.parents[0], g);
  });
}

Tensor elu(const Tensor& a, double alpha) {
  Matrix out = a.value().unaryExpr([alpha](double x) { return x > 0.0 ? x : alpha * std::expm1(x); });
  return make_result(std::move(out), {a}, [alpha](Node& self) {
    const Matrix& x = self.parents[0].value();
    Matrix g = self.grad.binaryExpr(x, [alpha](double gi, double xi) { return xi > 0.0 ? gi : gi * alpha * std::exp(xi); });
    push(self.parents[0], g);
  });
}

Tensor square(const Tensor& a) {
  return make_result(a.value().cwiseAbs2(), {a}, [](Node& self) {
    push(self.parents[0], 2.0 * self.grad.cwiseProduct(self.parents[0].value()));
  });
}

namespace {

// dx = y * (g - rowsum(g * y)); masked entries have y = 0 and get no gradient.
void softmax_backward(Node& self) {
  const Matrix& y = self.value;
  Matrix gy = self.grad.cwiseProduct(y);
  Eigen::VectorXd dots = gy.rowwise().sum();
  Matrix g = gy - (y.array().colwise() * dots.array()).matrix();
  push(self.parents[0], g);
}

}  // namespace

Tensor softmax_rows(const Tensor& a) {
  Matrix out = a.value();
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return make_result(std::move(out), {a}, softmax_backward);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale) {
  require(q.cols() == k.cols(), "attention", q.value(), k.value());
  require(k.rows() == v.rows(), "attention", k.value(), v.value());
  auto weights = std::make_shared<Matrix>(scale * (q.value() * k.value().transpose()));
  Matrix& a = *weights;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double m = a.row(i).maxCoeff();
    a.row(i) = (a.row(i).array() - m).exp();
    a.row(i) /= a.row(i).sum();
  }
  Matrix out = a * v.value();
  return make_result(std::move(out), {q, k, v}, [weights, scale](Node& self) {
    const Tensor& q = self.parents[0];
    const Tensor& k = self.parents[1];
    const Tensor& v = self.parents[2];
    const Matrix& a = *weights;
    const Matrix& g = self.grad;
    if (v.requires_grad()) push(v, a.transpose() * g);
    if (!q.requires_grad() && !k.requires_grad()) return;
    Matrix ds = (g * v.value().transpose()).cwiseProduct(a);
    const Eigen::VectorXd dots = ds.rowwise().sum();
    ds -= (a.array().colwise() * dots.array()).matrix();
    ds *= scale;
    if (q.requires_grad()) push(q, ds * k.value());
    if (k.requires_grad()) push(k, ds.transpose() * q.value());
  });
}

Tensor masked_softmax_rows(const Tensor& a, const Matrix& mask) {
  require(mask.rows() == a.rows() && mask.cols() == a.cols(), "masked_softmax_rows", a.value(), mask);
  const Matrix& x = a.value();
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (mask(i, j) != 0.0) m = std::max(m, x(i, j));
    }
    if (!std::isfinite(m)) throw UsageError("masked_softmax_rows: row " + std::to_string(i) + " is fully masked");
    double total = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (mask(i, j) != 0.0) {
        out(i, j) = std::exp(x(i, j) - m);
        total += out(i, j);
      }
    }
    out.row(i) /= total;
  }
  return make_result(std::move(out), {a}, softmax_backward);
}

Tensor graph_attention(const Tensor& h, const Tensor& a_src, const Tensor& a_dst, const NeighborLists& neighbors,
                       double slope) {
  const Matrix& hv = h.value();
  const auto n = hv.rows();
  if (static_cast<Eigen::Index>(neighbors.size()) != n) {
    throw UsageError("graph_attention: " + std::to_string(neighbors.size()) + " neighbor lists for " +
                     std::to_string(n) + " nodes");
  }
  require(a_src.rows() == hv.cols() && a_src.cols() == 1, "graph_attention", hv, a_src.value());
  require(a_dst.rows() == hv.cols() && a_dst.cols() == 1, "graph_attention", hv, a_dst.value());
  const Eigen::VectorXd s = hv * a_src.value();
  const Eigen::VectorXd t = hv * a_dst.value();

  // Attention weights and pre-activation signs, stored per edge in list order.
  auto alpha = std::make_shared<std::vector<double>>();
  auto positive = std::make_shared<std::vector<char>>();
  Matrix out = Matrix::Zero(n, hv.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& nb = neighbors[static_cast<std::size_t>(i)];
    if (nb.empty()) throw UsageError("graph_attention: node " + std::to_string(i) + " has no neighbors");
    const std::size_t base = alpha->size();
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j : nb) {
      if (j < 0 || j >= n) throw UsageError("graph_attention: neighbor index out of range");
      const double z = s(i) + t(j);
      positive->push_back(z > 0.0 ? 1 : 0);
      const double e = z > 0.0 ? z : slope * z;
      alpha->push_back(e);
      m = std::max(m, e);
    }
    double total = 0.0;
    for (std::size_t k = base; k < alpha->size(); ++k) {
      (*alpha)[k] = std::exp((*alpha)[k] - m);
      total += (*alpha)[k];
    }
    for (std::size_t k = 0; k < nb.size(); ++k) {
      (*alpha)[base + k] /= total;
      out.row(i) += (*alpha)[base + k] * hv.row(nb[k]);
    }
  }
  auto lists = std::make_shared<NeighborLists>(neighbors);
  return make_result(std::move(out), {h, a_src, a_dst}, [lists, alpha, positive, slope](Node& self) {
    const Tensor& h = self.parents[0];
    const Tensor& a_src = self.parents[1];
    const Tensor& a_dst = self.parents[2];
    const Matrix& hv = h.value();
    const Matrix& g = self.grad;
    const auto n = hv.rows();
    Matrix dh = Matrix::Zero(n, hv.cols());
    Eigen::VectorXd ds = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd dt = Eigen::VectorXd::Zero(n);
    std::vector<double> dalpha;
    std::size_t base = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& nb = (*lists)[static_cast<std::size_t>(i)];
      dalpha.resize(nb.size());
      double weighted = 0.0;
      for (std::size_t k = 0; k < nb.size(); ++k) {
        const double a = (*alpha)[base + k];
        dh.row(nb[k]) += a * g.row(i);
        dalpha[k] = g.row(i).dot(hv.row(nb[k]));
        weighted += a * dalpha[k];
      }
      for (std::size_t k = 0; k < nb.size(); ++k) {
        const double de = (*alpha)[base + k] * (dalpha[k] - weighted);
        const double dz = (*positive)[base + k] ? de : slope * de;
        ds(i) += dz;
        dt(nb[k]) += dz;
      }
      base += nb.size();
    }
    if (a_src.requires_grad()) push(a_src, hv.transpose() * ds);
    if (a_dst.requires_grad()) push(a_dst, hv.transpose() * dt);
    if (h.requires_grad()) {
      dh += ds * a_src.value().transpose();
      dh += dt * a_dst.value().transpose();
      push(h, dh);
    }
  });
}

Tensor layer_norm_rows(const Tensor& a, double eps) {
  const Matrix& x = a.value();
  const auto n = static_cast<double>(x.cols());
  Matrix xhat(x.rows(), x.cols());
  Eigen::VectorXd inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().sum() / n;
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    xhat.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  return make_result(xhat, {a}, [inv_std, n](Node& self) {
    const Matrix& xh = self.value;
    const Matrix& g = self.grad;
    Matrix dx(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double gm = g.row(i).sum() / n;
      const double gxm = g.row(i).dot(xh.row(i)) / n;
      dx.row(i) = inv_std(i) * (g.row(i).array() - gm - xh.row(i).array() * gxm);
    }
    push(self.parents[0], dx);
  });
}

Tensor mean(const Tensor& a) {
  if (a.value().size() == 0) throw UsageError("mean of an empty tensor");
  const double count = static_cast<double>(a.value().size());
  return make_result(Matrix::Constant(1, 1, a.value().sum() / count), {a}, [count](Node& self) {
    const Tensor& a = self.parents[0];
    push(a, Matrix::Constant(a.rows(), a.cols(), self.grad(0, 0) / count));
  });
}

Tensor sum(const Tensor& a) {
  return make_result(Matrix::Constant(1, 1, a.value().sum()), {a}, [](Node& self) {
    const Tensor& a = self.parents[0];
    push(a, Matrix::Constant(a.rows(), a.cols(), self.grad(0, 0)));
  });
}

Tensor pearson_rows(const Tensor& x, const Tensor& y) {
  require(x.rows() == y.rows() && x.cols() == y.cols(), "pearson_rows", x.value(), y.value());
  if (x.cols() < 2) throw UsageError("pearson_rows: need at least 2 columns, got " + shape(x.value()));
  const Eigen::Index n = x.rows();
  Matrix xc = x.value();
  Matrix yc = y.value();
  xc.colwise() -= xc.rowwise().mean();
  yc.colwise() -= yc.rowwise().mean();
  Eigen::VectorXd sxx = xc.rowwise().squaredNorm();
  Eigen::VectorXd syy = yc.rowwise().squaredNorm();
  Eigen::VectorXd sxy = xc.cwiseProduct(yc).rowwise().sum();
  Matrix r = Matrix::Zero(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (sxx(i) > 0.0 && syy(i) > 0.0) r(i, 0) = sxy(i) / std::sqrt(sxx(i) * syy(i));
  }
  return make_result(r, {x, y}, [xc, yc, sxx, syy, r](Node& self) {
    const Tensor& x = self.parents[0];
    const Tensor& y = self.parents[1];
    Matrix gx = Matrix::Zero(xc.rows(), xc.cols());
    Matrix gy = Matrix::Zero(yc.rows(), yc.cols());
    for (Eigen::Index i = 0; i < xc.rows(); ++i) {
      if (!(sxx(i) > 0.0 && syy(i) > 0.0)) continue;
      const double g = self.grad(i, 0);
      const double inv = 1.0 / std::sqrt(sxx(i) * syy(i));
      gx.row(i) = g * (yc.row(i) * inv - r(i, 0) / sxx(i) * xc.row(i));
      gy.row(i) = g * (xc.row(i) * inv - r(i, 0) / syy(i) * yc.row(i));
    }
    if (x.requires_grad()) push(x, gx);
    if (y.requires_grad()) push(y, gy);
  });
}

// --- Rng ----------------------------------------------------------------------------

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
  if (n == 0) throw UsageError("Rng::index: empty range");
  return std::min(n - 1, static_cast<std::size_t>(uniform() * static_cast<double>(n)));
}

// --- ParameterStore ----------------------------------------------------------------------

Tensor ParameterStore::add(const std::string& name, Matrix value) {
  for (const auto& p : params_) {
    if (p.name == name) throw UsageError("duplicate parameter name " + name);
  }
  params_.push_back({name, Tensor::variable(std::move(value))});
  return params_.back().tensor;
}

Tensor ParameterStore::add_weight(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(rows));
  Matrix w(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = rng.uniform(-bound, bound);
  }
  return add(name, std::move(w));
}

Tensor ParameterStore::add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  return add(name, Matrix::Zero(rows, cols));
}

Tensor ParameterStore::add_constant(const std::string& name, Matrix value) { return add(name, std::move(value)); }

std::vector<Tensor> ParameterStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw UsageError("no parameter named " + name);
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.tensor.value().size());
  return n;
}

// --- grad_check ----------------------------------------------------------------------------

double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double h) {
  std::vector<Tensor> ps = params;
  for (auto& p : ps) p.zero_grad();
  f().backward();
  std::vector<Matrix> analytic;
  analytic.reserve(ps.size());
  for (const auto& p : ps) analytic.push_back(p.grad());

  double worst = 0.0;
  for (std::size_t k = 0; k < ps.size(); ++k) {
    Matrix& v = ps[k].mutable_value();
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      for (Eigen::Index j = 0; j < v.cols(); ++j) {
        const double saved = v(i, j);
        v(i, j) = saved + h;
        const double fp = f().item();
        v(i, j) = saved - h;
        const double fm = f().item();
        v(i, j) = saved;
        const double numeric = (fp - fm) / (2.0 * h);
        const double a = analytic[k](i, j);
        worst = std::max(worst, std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric)));
      }
    }
  }
  for (auto& p : ps) p.zero_grad();
  return worst;
}

// --- checkpoints ----------------------------------------------------------------------------

namespace {

constexpr char kCheckpointMagic[16] = {'S', 'T', '3', 'D', '-', 'C', 'K', 'P', 'T', '\0',
                                       '\0', '\0', '\0', '\0', '\0', '\0'};

}  // namespace

void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::write_le<std::uint16_t>(out, kCheckpointVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(store.parameters().size()));
  for (const auto& p : store.parameters()) {
    const Matrix& v = p.tensor.value();
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.rows()));
    detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(v.cols()));
    for (Eigen::Index i = 0; i < v.size(); ++i) detail::write_f64(out, v.data()[i]);
  }
  if (!out) throw DataError("failed writing " + path.string());
}

std::vector<NamedMatrix> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  detail::LeReader r(in, path.string());
  char magic[16];
  r.bytes(magic, sizeof(magic));
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kCheckpointMagic))) {
    throw FormatError(path.string() + ": not a checkpoint (bad magic)");
  }
  const auto version = r.read<std::uint16_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.read<std::uint32_t>();
  std::vector<NamedMatrix> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = r.read<std::uint32_t>();
    if (name_len > r.remaining()) throw FormatError(path.string() + ": truncated file");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const auto rows = r.read<std::uint32_t>();
    const auto cols = r.read<std::uint32_t>();
    if (static_cast<std::uint64_t>(rows) * cols * 8 > r.remaining()) {
      throw FormatError(path.string() + ": truncated file");
    }
    Matrix v(rows, cols);
    for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = r.f64();
    out.push_back({std::move(name), std::move(v)});
  }
  return out;
}

void load_checkpoint(ParameterStore& store, const std::filesystem::path& path) {
  const auto records = read_checkpoint(path);
  if (records.size() != store.parameters().size()) {
    throw DataError(path.string() + ": checkpoint holds " + std::to_string(records.size()) +
                    " parameters, model expects " + std::to_string(store.parameters().size()));
  }
  for (const auto& rec : records) {
    Tensor t = store.get(rec.name);
    if (t.rows() != rec.value.rows() || t.cols() != rec.value.cols()) {
      throw DataError(path.string() + ": parameter " + rec.name + " has shape " + shape(rec.value) +
                      ", model expects " + shape(t.value()));
    }
    t.mutable_value() = rec.value;
  }
}

}  // namespace st3d::ad
