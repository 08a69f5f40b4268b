#pragma once

#include "st3d/graph.hpp"
#include "st3d/types.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace st3d {

struct PropagationConfig {
  int iterations = 10;
  /// Per-node weights applied to neighbor labels; empty means all 1.0.
  std::vector<double> node_weights;
  /// Stop early once the largest update falls below this; 0 runs every iteration.
  double convergence_epsilon = 0.0;
};

enum class Provenance { known, propagated, unreached, model, fused };

const char* to_string(Provenance p);
Provenance provenance_from_string(const std::string& s);

struct ImputationResult {
  ExpressionMatrix predictions;
  std::vector<Provenance> provenance;
  std::optional<double> fusion_alpha;
  /// Iterations actually executed (propagation only).
  int iterations_run = 0;
};

/// Iterative cross-layer label propagation over the symmetrized graph.
///
/// Known rows never change. Unknown rows start at the mean of the known rows and,
/// once at least one neighbor is reached, take the edge-weighted average of the
/// reached neighbors' previous-step values (synchronous update). Rows that no
/// known row reaches within the iteration budget keep the initial value and are
/// marked unreached.
ImputationResult propagate_labels(const SpatialGraph& graph, const ExpressionMatrix& labels,
                                  const Mask& known, const PropagationConfig& cfg = {});

/// Overlap baseline: each unknown spot takes the IoU-weighted mean of the known
/// spots on other layers whose aligned discs overlap it.
ImputationResult overlap_impute(const SampleStack& stack, const ExpressionMatrix& labels, const Mask& known);

inline constexpr int kDefaultSimilarityNeighbors = 20;

/// Similarity baseline: each unknown spot takes the plain mean of the m known
/// spots with the highest feature cosine similarity.
ImputationResult similarity_impute(const FeatureMatrix& features, const ExpressionMatrix& labels,
                                   const Mask& known, int m = kDefaultSimilarityNeighbors);

/// alpha * model + (1 - alpha) * imputed, elementwise.
ExpressionMatrix fuse_predictions(const ExpressionMatrix& model_pred, const ExpressionMatrix& imputed,
                                  double alpha);

/// Grid {0, 0.1, ..., 1} search for the fusion weight maximizing per-gene PCC on
/// the rows selected by `eval_rows`. Ties keep the smaller alpha.
double select_fusion_alpha(const Matrix& model_pred, const Matrix& imputed, const Matrix& truth,
                           const Mask& eval_rows);

/// Sidecar TSV with columns spot_id, provenance, fusion_alpha.
void write_provenance_tsv(const ImputationResult& result, std::span<const std::string> spot_ids,
                          const std::filesystem::path& path);

}  // namespace st3d
