#include "st3d/imputation.hpp"

#include "st3d/error.hpp"
#include "st3d/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace st3d {

const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::known:
      return "known";
    case Provenance::propagated:
      return "propagated";
    case Provenance::unreached:
      return "unreached";
    case Provenance::model:
      return "model";
    case Provenance::fused:
      return "fused";
  }
  return "unknown";
}

Provenance provenance_from_string(const std::string& s) {
  for (Provenance p : {Provenance::known, Provenance::propagated, Provenance::unreached, Provenance::model,
                       Provenance::fused}) {
    if (s == to_string(p)) return p;
  }
  throw FormatError("unknown provenance '" + s + "'");
}

namespace {

std::size_t check_known(const ExpressionMatrix& labels, const Mask& known, std::size_t rows) {
  if (static_cast<std::size_t>(labels.rows()) != rows) {
    throw UsageError("label matrix has " + std::to_string(labels.rows()) + " rows for " +
                     std::to_string(rows) + " nodes");
  }
  if (known.size() != rows) {
    throw UsageError("known mask has " + std::to_string(known.size()) + " entries for " +
                     std::to_string(rows) + " nodes");
  }
  const auto count = static_cast<std::size_t>(std::count(known.begin(), known.end(), true));
  if (count == 0) throw UsageError("imputation needs at least one known spot");
  return count;
}

Eigen::RowVectorXd known_mean(const ExpressionMatrix& labels, const Mask& known) {
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(labels.cols());
  double count = 0.0;
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    if (!known[static_cast<std::size_t>(i)]) continue;
    mean += labels.values.row(i);
    count += 1.0;
  }
  return mean / count;
}

/// Known rows copied, unknown rows set to the known mean and marked unreached.
ImputationResult initial_result(const ExpressionMatrix& labels, const Mask& known) {
  ImputationResult result;
  result.predictions = labels;
  result.provenance.assign(known.size(), Provenance::unreached);
  const Eigen::RowVectorXd mean = known_mean(labels, known);
  for (Eigen::Index i = 0; i < labels.rows(); ++i) {
    if (known[static_cast<std::size_t>(i)]) {
      result.provenance[static_cast<std::size_t>(i)] = Provenance::known;
    } else {
      result.predictions.values.row(i) = mean;
    }
  }
  return result;
}

}  // namespace

ImputationResult propagate_labels(const SpatialGraph& graph, const ExpressionMatrix& labels, const Mask& known,
                                  const PropagationConfig& cfg) {
  const std::size_t n = graph.node_count;
  check_known(labels, known, n);
  if (cfg.iterations < 1) throw UsageError("propagation needs at least one iteration");
  if (!cfg.node_weights.empty()) {
    if (cfg.node_weights.size() != n) throw UsageError("node_weights size does not match node count");
    for (double a : cfg.node_weights) {
      if (!(a >= 0.0)) throw UsageError("node_weights must be non-negative");
    }
  }
  const auto weight_of = [&cfg](std::size_t j) { return cfg.node_weights.empty() ? 1.0 : cfg.node_weights[j]; };

  const Adjacency adj = symmetrize(graph);
  ImputationResult result = initial_result(labels, known);
  Matrix current = result.predictions.values;
  std::vector<bool> reached(known.begin(), known.end());
  const Eigen::Index genes = labels.cols();

  Eigen::RowVectorXd num(genes), lo(genes), hi(genes), contrib(genes);
  for (int t = 0; t < cfg.iterations; ++t) {
    Matrix next = current;
    std::vector<bool> next_reached = reached;
    double max_change = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (known[i]) continue;
      num.setZero();
      double den = 0.0;
      bool any = false;
      for (const Neighbor& nb : adj.neighbors[i]) {
        if (!reached[nb.index] || !(nb.weight > 0.0)) continue;
        contrib = weight_of(nb.index) * current.row(static_cast<Eigen::Index>(nb.index));
        num += nb.weight * contrib;
        den += nb.weight;
        if (!any) {
          lo = contrib;
          hi = contrib;
          any = true;
        } else {
          lo = lo.cwiseMin(contrib);
          hi = hi.cwiseMax(contrib);
        }
      }
      if (!(den > 0.0)) continue;
      const auto row = static_cast<Eigen::Index>(i);
      for (Eigen::Index g = 0; g < genes; ++g) {
        // The quotient is a convex combination; pin it to the contributing range so
        // that rounding never leaves it (and constant neighborhoods stay exact).
        next(row, g) = lo(g) == hi(g) ? lo(g) : std::clamp(num(g) / den, lo(g), hi(g));
      }
      max_change = std::max(max_change, (next.row(row) - current.row(row)).cwiseAbs().maxCoeff());
      next_reached[i] = true;
    }
    current.swap(next);
    reached.swap(next_reached);
    result.iterations_run = t + 1;
    if (cfg.convergence_epsilon > 0.0 && max_change < cfg.convergence_epsilon) break;
  }

  result.predictions.values = std::move(current);
  for (std::size_t i = 0; i < n; ++i) {
    if (!known[i] && reached[i]) result.provenance[i] = Provenance::propagated;
  }
  return result;
}

ImputationResult overlap_impute(const SampleStack& stack, const ExpressionMatrix& labels, const Mask& known) {
  require_valid(stack);
  const auto refs = stack.spot_refs();
  check_known(labels, known, refs.size());
  ImputationResult result = initial_result(labels, known);

  std::vector<Circle> circles;
  circles.reserve(refs.size());
  for (const auto& r : refs) circles.push_back({stack.aligned_center(r), stack.aligned_radius(r)});

  Eigen::RowVectorXd num(labels.cols());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (known[i]) continue;
    num.setZero();
    double den = 0.0;
    for (std::size_t j = 0; j < refs.size(); ++j) {
      if (!known[j] || refs[j].layer == refs[i].layer) continue;
      const double w = circle_iou(circles[i], circles[j]);
      if (!(w > 0.0)) continue;
      num += w * labels.values.row(static_cast<Eigen::Index>(j));
      den += w;
    }
    if (den > 0.0) {
      result.predictions.values.row(static_cast<Eigen::Index>(i)) = num / den;
      result.provenance[i] = Provenance::propagated;
    }
  }
  return result;
}

ImputationResult similarity_impute(const FeatureMatrix& features, const ExpressionMatrix& labels,
                                   const Mask& known, int m) {
  if (m < 1) throw UsageError("similarity_impute: m must be at least 1");
  check_known(labels, known, static_cast<std::size_t>(features.rows()));
  ImputationResult result = initial_result(labels, known);

  const Eigen::Index n = features.rows();
  std::vector<bool> usable(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) usable[static_cast<std::size_t>(i)] = features.values.row(i).squaredNorm() > 0.0;

  Eigen::RowVectorXd sum(labels.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto ui = static_cast<std::size_t>(i);
    if (known[ui] || !usable[ui]) continue;
    std::vector<Candidate> cands;
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto uj = static_cast<std::size_t>(j);
      if (!known[uj] || !usable[uj]) continue;
      cands.push_back({uj, cosine_similarity(row_view(features.values, i), row_view(features.values, j))});
    }
    const auto top = topk_select(std::move(cands), static_cast<std::size_t>(m));
    if (top.empty()) continue;
    sum.setZero();
    for (const auto& c : top) sum += labels.values.row(static_cast<Eigen::Index>(c.index));
    result.predictions.values.row(i) = sum / static_cast<double>(top.size());
    result.provenance[ui] = Provenance::propagated;
  }
  return result;
}

ExpressionMatrix fuse_predictions(const ExpressionMatrix& model_pred, const ExpressionMatrix& imputed, double alpha) {
  if (model_pred.rows() != imputed.rows() || model_pred.cols() != imputed.cols()) {
    throw UsageError("fuse_predictions: shape mismatch (" + std::to_string(model_pred.rows()) + "x" +
                     std::to_string(model_pred.cols()) + " vs " + std::to_string(imputed.rows()) + "x" +
                     std::to_string(imputed.cols()) + ")");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("fuse_predictions: alpha must lie in [0, 1]");
  ExpressionMatrix out;
  out.gene_names = model_pred.gene_names.empty() ? imputed.gene_names : model_pred.gene_names;
  out.values = alpha * model_pred.values + (1.0 - alpha) * imputed.values;
  return out;
}

double select_fusion_alpha(const Matrix& model_pred, const Matrix& imputed, const Matrix& truth,
                           const Mask& eval_rows) {
  const Matrix p = select_rows(model_pred, eval_rows);
  const Matrix q = select_rows(imputed, eval_rows);
  const Matrix y = select_rows(truth, eval_rows);
  double best_alpha = 0.0;
  double best_pcc = -2.0;
  for (int step = 0; step <= 10; ++step) {
    const double alpha = step / 10.0;
    const double pcc = metric_pcc(alpha * p + (1.0 - alpha) * q, y).value;
    if (pcc > best_pcc) {
      best_pcc = pcc;
      best_alpha = alpha;
    }
  }
  return best_alpha;
}

void write_provenance_tsv(const ImputationResult& result, std::span<const std::string> spot_ids,
                          const std::filesystem::path& path) {
  if (spot_ids.size() != result.provenance.size()) {
    throw UsageError("write_provenance_tsv: spot id count does not match result rows");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "spot_id\tprovenance\tfusion_alpha\n";
  std::string alpha;
  if (result.fusion_alpha) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", *result.fusion_alpha);
    alpha = buf;
  }
  for (std::size_t i = 0; i < spot_ids.size(); ++i) {
    out << spot_ids[i] << '\t' << to_string(result.provenance[i]) << '\t' << alpha << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace st3d
