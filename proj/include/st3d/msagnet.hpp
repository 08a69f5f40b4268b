#pragma once

#include "st3d/autodiff.hpp"
#include "st3d/graph.hpp"
#include "st3d/imputation.hpp"
#include "st3d/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace st3d {

struct LossWeights {
  double lambda_s = 0.75;
  double lambda_r = 0.5;
  double lambda_g = 0.5;
  double lambda_1 = 0.25;
  double lambda_2 = 0.25;
  double gamma_1 = 1.0;
  double gamma_2 = 1.0;
};

struct ModelConfig {
  int feature_dim = 0;
  int hidden_dim = 64;
  int gat_layers = 3;
  int gat_heads = 4;
  int transformer_heads = 4;
  int gene_count = 0;
  LossWeights loss;
  /// Ablation switches; both on for the full model.
  bool use_cross_attention = true;
  bool use_gat = true;

  /// Desk-scale preset: hidden width 32, two heads per attention block.
  static ModelConfig toy();
  /// Throws UsageError when sizes are inconsistent.
  void validate() const;
};

struct TrainConfig {
  double lr0 = 1e-4;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  /// Final learning rate as a fraction of lr0 (cosine decay target).
  double final_lr_fraction = 0.01;
  /// Spot budget per step; a batch always holds whole samples (at least one).
  int batch_size = 256;
  int steps = 200;
  std::uint64_t seed = 0;

  /// Desk-scale preset used by the experiment harness and the CLI.
  static TrainConfig toy();
  void validate() const;
};

/// Cosine decay from lr0 at step 0 to final_lr_fraction * lr0 at the last step.
double cosine_lr(const TrainConfig& cfg, int step);

namespace ad {
/// softmax(q kv^T / sqrt(d)) kv with d = feature width.
Tensor cross_attention_fuse(const Tensor& query, const Tensor& key_value);
}  // namespace ad

/// Per-head parameters of one graph-attention layer.
struct GatHeadParams {
  ad::Tensor weight;      // in x head_dim
  ad::Tensor attn_src;    // head_dim x 1, scores the receiving node
  ad::Tensor attn_dst;    // head_dim x 1, scores the neighbor
};

/// Multi-head graph attention: per head, LeakyReLU(0.2) scores over the
/// neighbors and self, softmax, weighted sum of W F_j, ELU; heads concatenated.
/// `neighbors` lists each node's symmetrized-graph neighbors plus itself.
ad::Tensor gat_layer(const ad::Tensor& features, const ad::NeighborLists& neighbors,
                     const std::vector<GatHeadParams>& heads);

/// Neighbor lists of the symmetrized graph with each node's own index added,
/// sorted ascending.
ad::NeighborLists attention_neighbors(const SpatialGraph& graph);

struct Predictions {
  Matrix p_s;
  Matrix p_r;
  Matrix p_g;
};

/// Model inputs for one sample.
struct ModelInputs {
  Matrix f_s;
  Matrix f_r;
  Matrix f_g;
  ad::NeighborLists neighbors;  // attention_neighbors of the sample graph

  static ModelInputs from_stack(const SampleStack& stack, const SpatialGraph& graph);
};

class Msagnet {
 public:
  struct Outputs {
    ad::Tensor p_s;
    ad::Tensor p_r;
    ad::Tensor p_g;
  };

  Msagnet(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ad::ParameterStore& parameters() { return params_; }
  const ad::ParameterStore& parameters() const { return params_; }

  /// Differentiable forward pass.
  Outputs forward_tensors(const ModelInputs& in) const;
  Predictions forward(const ModelInputs& in) const;

 private:
  struct TransformerParams {
    ad::Tensor ln1_gain, ln1_bias, wq, wk, wv, wo, bo;
    ad::Tensor ln2_gain, ln2_bias, ff1, ff1_bias, ff2, ff2_bias;
  };

  ad::Tensor project(const ad::Tensor& x, const ad::Tensor& w, const ad::Tensor& b) const;
  ad::Tensor transformer(const ad::Tensor& x, const TransformerParams& p) const;

  ModelConfig cfg_;
  ad::ParameterStore params_;
  ad::Tensor in_s_w_, in_s_b_, in_r_w_, in_r_b_, in_g_w_, in_g_b_;
  std::vector<std::vector<GatHeadParams>> gat_;
  std::vector<TransformerParams> transformers_;
  ad::Tensor stage_logits_;
  ad::Tensor head_s_w_, head_s_b_, head_r_w_, head_r_b_, head_g_w_, head_g_b_;
};

/// Mean over rows of (1 - Pearson(pred_row, target_row)); constant rows count as
/// zero correlation.
ad::Tensor pcc_loss(const ad::Tensor& pred, const ad::Tensor& target);

/// Number of rows of `pred` or `target` with zero variance.
int constant_rows(const Matrix& pred, const Matrix& target);

struct LossTerms {
  ad::Tensor total;  // L
  double l_p = 0.0;
  double l_c = 0.0;
  double mse = 0.0;
  double p_s = 0.0;
  double p_r = 0.0;
  double p_g = 0.0;
  double p_sr = 0.0;
  double p_sg = 0.0;
  int constant_rows = 0;
};

/// L = g1 * [MSE(p_s, y_s) + ls P(p_s, y_s) + lr P(p_r, y_r) + lg P(p_g, y_g)]
///   + g2 * [l1 P(p_s, p_r) + l2 P(p_s, p_g)].
LossTerms total_loss(const ad::Tensor& p_s, const ad::Tensor& p_r, const ad::Tensor& p_g, const Matrix& y_s,
                     const Matrix& y_r, const Matrix& y_g, const LossWeights& w);

/// SGD with momentum and decoupled-from-loss L2 weight decay:
/// v = mu v + (g + wd theta); theta -= lr v.
class SgdMomentum {
 public:
  SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
  void step(ad::ParameterStore& params, double lr);

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Matrix> velocity_;
};

/// One sample prepared for training. Only `labeled_rows` enter the loss.
struct TrainingSample {
  std::string sample_id;
  std::vector<std::string> spot_ids;
  ModelInputs inputs;
  Matrix y_s;
  Matrix y_r;
  Matrix y_g;
  std::vector<Eigen::Index> labeled_rows;
};

/// Region/global labels are aggregated over labeled members only, so unlabeled
/// spots never leak into the targets.
TrainingSample make_training_sample(const SampleStack& stack, const SpatialGraph& graph, const Mask& labeled);

struct TraceRow {
  int step = 0;
  double lr = 0.0;
  double total = 0.0;
  double l_p = 0.0;
  double l_c = 0.0;
};

struct TrainResult {
  std::vector<TraceRow> trace;
  /// Every spot id whose label entered the loss at least once.
  std::vector<std::string> loss_spot_ids;
};

/// Runs SGD with momentum, weight decay and cosine learning-rate decay.
/// Batches are whole samples visited in a seeded shuffled order.
/// Throws TrainingDivergedError on a non-finite loss.
TrainResult train(Msagnet& model, const std::vector<TrainingSample>& samples, const TrainConfig& cfg);

void write_trace_csv(const std::vector<TraceRow>& trace, const std::filesystem::path& path);

/// Model spot predictions fused with propagated labels on unknown spots.
/// With no known spot the model prediction is returned as is.
ImputationResult predict_with_imputation(const SampleStack& stack, const SpatialGraph& graph, const Msagnet& model,
                                         const Mask& known, double alpha, const PropagationConfig& prop = {});

}  // namespace st3d
