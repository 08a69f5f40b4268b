#include "st3d/preprocess.hpp"

#include "st3d/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace st3d {

ExpressionMatrix select_top_genes(const ExpressionMatrix& expr, int n) {
  const auto genes = static_cast<int>(expr.cols());
  if (n < 1 || n > genes) {
    throw UsageError("select_top_genes: cannot keep " + std::to_string(n) + " of " + std::to_string(genes) + " genes");
  }
  if (static_cast<int>(expr.gene_names.size()) != genes) throw UsageError("select_top_genes: gene name count mismatch");
  Eigen::RowVectorXd means = expr.values.colwise().mean();
  std::vector<int> order(static_cast<std::size_t>(genes));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (means(a) != means(b)) return means(a) > means(b);
    return expr.gene_names[static_cast<std::size_t>(a)] < expr.gene_names[static_cast<std::size_t>(b)];
  });
  order.resize(static_cast<std::size_t>(n));
  std::sort(order.begin(), order.end());

  ExpressionMatrix out;
  out.values.resize(expr.rows(), n);
  for (int k = 0; k < n; ++k) {
    out.values.col(k) = expr.values.col(order[static_cast<std::size_t>(k)]);
    out.gene_names.push_back(expr.gene_names[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])]);
  }
  return out;
}

NormalizeResult normalize(const ExpressionMatrix& expr, double scale) {
  if (!(scale > 0.0)) throw UsageError("normalize: scale must be positive");
  NormalizeResult out;
  out.expression.gene_names = expr.gene_names;
  out.expression.values = Matrix::Zero(expr.rows(), expr.cols());
  for (Eigen::Index i = 0; i < expr.rows(); ++i) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < expr.cols(); ++j) {
      const double v = expr.values(i, j);
      if (!std::isfinite(v) || v < 0.0) {
        throw DataError("normalize: invalid count " + std::to_string(v) + " at row " + std::to_string(i) +
                        ", column " + std::to_string(j));
      }
      total += v;
    }
    if (total == 0.0) {
      out.zero_rows.push_back(i);
      continue;
    }
    for (Eigen::Index j = 0; j < expr.cols(); ++j) {
      out.expression.values(i, j) = std::log1p(scale * expr.values(i, j) / total);
    }
  }
  return out;
}

Membership patch_membership(const SampleStack& stack, double patch_side) {
  if (!(patch_side > 0.0)) throw UsageError("patch_membership: patch side must be positive");
  const double half = patch_side / 2.0;
  const auto refs = stack.spot_refs();
  Membership out(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Spot& si = stack.spot(refs[i]);
    for (std::size_t j = 0; j < refs.size(); ++j) {
      if (refs[j].layer != refs[i].layer) continue;
      const Spot& sj = stack.spot(refs[j]);
      const double dx = sj.center.x - si.center.x;
      const double dy = sj.center.y - si.center.y;
      if (dx >= -half && dx < half && dy >= -half && dy < half) out[i].push_back(j);
    }
  }
  return out;
}

Membership restrict_membership(const Membership& membership, const Mask& keep) {
  Membership out(membership.size());
  for (std::size_t i = 0; i < membership.size(); ++i) {
    for (std::size_t j : membership[i]) {
      if (j >= keep.size()) throw UsageError("restrict_membership: member index out of range");
      if (keep[j]) out[i].push_back(j);
    }
  }
  return out;
}

LevelLabels aggregate_levels(const Matrix& y, const Membership& region, const Membership& global) {
  const auto n = static_cast<std::size_t>(y.rows());
  if (region.size() != n || global.size() != n) {
    throw UsageError("aggregate_levels: membership lists must have one entry per spot");
  }
  LevelLabels out;
  out.y_r = Matrix::Zero(y.rows(), y.cols());
  out.y_g = Matrix::Zero(y.rows(), y.cols());
  const auto fill = [&](const Membership& members, Matrix& target, std::vector<std::size_t>& empty) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = static_cast<Eigen::Index>(i);
      if (members[i].empty()) {
        target.row(row) = y.row(row);
        empty.push_back(i);
        continue;
      }
      for (std::size_t j : members[i]) {
        if (j >= n) throw UsageError("aggregate_levels: member index out of range");
        target.row(row) += y.row(static_cast<Eigen::Index>(j));
      }
    }
  };
  fill(region, out.y_r, out.empty_region_rows);
  fill(global, out.y_g, out.empty_global_rows);
  return out;
}

}  // namespace st3d
