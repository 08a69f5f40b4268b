#pragma once

// Minimal reverse-mode automatic differentiation over dense double matrices.
//
// A Tensor is a shared handle to a graph node holding a value, a lazily
// allocated gradient and the closure that pushes its gradient to its parents.
// Graphs are built by calling the free functions below and are confined to the
// thread that builds them.

#include "st3d/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace st3d::ad {

struct Node;

class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Matrix value);
  static Tensor variable(Matrix value);  // requires_grad = true

  bool defined() const { return node_ != nullptr; }
  const Matrix& value() const;
  Matrix& mutable_value();
  /// Zero matrix of the value's shape when no gradient has been accumulated.
  Matrix grad() const;
  bool has_grad() const;
  bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double item() const;

  /// Seeds d(this)/d(this) = 1 (this must be 1x1) and runs the backward pass.
  void backward() const;
  void zero_grad();

  Node* node() const { return node_.get(); }

 private:
  friend Tensor make_result(Matrix value, std::vector<Tensor> parents,
                            std::function<void(Node&)> backward);
  friend struct Node;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<Tensor> parents;
  std::function<void(Node&)> backward;

  void accumulate(const Matrix& g);
};

/// Builds an op result; `backward` is dropped when no parent requires a gradient.
Tensor make_result(Matrix value, std::vector<Tensor> parents, std::function<void(Node&)> backward);

// --- primitives ---------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product.
Tensor mul(const Tensor& a, const Tensor& b);
/// a (r x c) + row (1 x c) broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
/// a (r x c) * row (1 x c) broadcast over rows.
Tensor mul_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double s);
/// a * s where s is a 1x1 tensor.
Tensor scale_by(const Tensor& a, const Tensor& s);
Tensor transpose(const Tensor& a);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, Eigen::Index begin, Eigen::Index count);
Tensor select_rows(const Tensor& a, const std::vector<Eigen::Index>& rows);
/// col (n x 1) + row (1 x m) -> n x m.
Tensor outer_sum(const Tensor& col, const Tensor& row);
Tensor leaky_relu(const Tensor& a, double slope = 0.2);
Tensor elu(const Tensor& a, double alpha = 1.0);
Tensor square(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
/// Softmax restricted to entries where mask != 0; masked entries output 0.
/// Every row of the mask needs at least one non-zero entry.
Tensor masked_softmax_rows(const Tensor& a, const Matrix& mask);
/// Neighbor lists for graph_attention; each list must be non-empty.
using NeighborLists = std::vector<std::vector<Eigen::Index>>;
/// Sparse single-head graph attention. With s = h a_src and t = h a_dst,
/// out_i = sum over j in neighbors[i] of softmax_j(LeakyReLU(s_i + t_j)) h_j.
/// Equivalent to masked_softmax_rows over a dense mask, in O(edges) work.
Tensor graph_attention(const Tensor& h, const Tensor& a_src, const Tensor& a_dst, const NeighborLists& neighbors,
                       double slope = 0.2);
/// softmax_rows(scale * q k^T) v as a single node.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double scale);
/// Per-row standardization (no affine part).
Tensor layer_norm_rows(const Tensor& a, double eps = 1e-5);
/// Mean of all entries, 1x1.
Tensor mean(const Tensor& a);
/// Sum of all entries, 1x1.
Tensor sum(const Tensor& a);
/// Per-row Pearson correlation of x and y (n x 1). Rows where either side is
/// constant yield 0 with zero gradient.
Tensor pearson_rows(const Tensor& x, const Tensor& y);

// --- parameters -----------------------------------------------------------------

/// Deterministic generator shared by initializers and synthetic data.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  /// Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  std::uint64_t next() { return engine_(); }
  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

struct Parameter {
  std::string name;
  Tensor tensor;
};

class ParameterStore {
 public:
  /// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) with fan_in = rows.
  Tensor add_weight(const std::string& name, Eigen::Index rows, Eigen::Index cols, Rng& rng);
  Tensor add_zeros(const std::string& name, Eigen::Index rows, Eigen::Index cols);
  Tensor add_constant(const std::string& name, Matrix value);

  const std::vector<Parameter>& parameters() const { return params_; }
  std::vector<Tensor> tensors() const;
  const Tensor& get(const std::string& name) const;
  void zero_grad();
  std::size_t scalar_count() const;

 private:
  Tensor add(const std::string& name, Matrix value);
  std::vector<Parameter> params_;
};

// --- verification ---------------------------------------------------------------

/// Central finite-difference check of the gradient of the scalar `f` with
/// respect to every entry of `params`. Returns the largest
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, double h = 1e-5);

// --- checkpoints ----------------------------------------------------------------

struct NamedMatrix {
  std::string name;
  Matrix value;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// 16-byte magic "ST3D-CKPT" (NUL padded), u16 version, u32 record count, then
/// per record: u32 name length, name bytes, u32 rows, u32 cols, row-major f64.
/// All integers and floats little-endian.
void save_checkpoint(const ParameterStore& store, const std::filesystem::path& path);
std::vector<NamedMatrix> read_checkpoint(const std::filesystem::path& path);
/// Copies checkpoint values into matching parameters; names and shapes must match exactly.
void load_checkpoint(ParameterStore& store, const std::filesystem::path& path);

}  // namespace st3d::ad
