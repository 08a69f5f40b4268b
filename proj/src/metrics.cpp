#include "st3d/metrics.hpp"

#include "st3d/error.hpp"

#include <cmath>
#include <string>

namespace st3d {

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw UsageError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}

}  // namespace

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw UsageError("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 2) return std::nullopt;
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

double metric_mse(const Matrix& pred, const Matrix& truth) {
  require_same_shape(pred, truth, "metric_mse");
  if (pred.size() == 0) throw UsageError("metric_mse: empty input");
  return (pred - truth).array().square().mean();
}

double metric_mae(const Matrix& pred, const Matrix& truth) {
  require_same_shape(pred, truth, "metric_mae");
  if (pred.size() == 0) throw UsageError("metric_mae: empty input");
  return (pred - truth).array().abs().mean();
}

PccSummary metric_pcc(const Matrix& pred, const Matrix& truth) {
  require_same_shape(pred, truth, "metric_pcc");
  PccSummary out;
  double total = 0.0;
  std::vector<double> p(static_cast<std::size_t>(pred.rows()));
  std::vector<double> t(p.size());
  for (Eigen::Index g = 0; g < pred.cols(); ++g) {
    for (Eigen::Index i = 0; i < pred.rows(); ++i) {
      p[static_cast<std::size_t>(i)] = pred(i, g);
      t[static_cast<std::size_t>(i)] = truth(i, g);
    }
    if (const auto r = pearson(p, t)) {
      total += *r;
      ++out.scored_genes;
    } else {
      ++out.skipped_genes;
    }
  }
  if (out.scored_genes > 0) out.value = total / out.scored_genes;
  return out;
}

Matrix select_rows(const Matrix& m, const Mask& mask) {
  if (static_cast<Eigen::Index>(mask.size()) != m.rows()) {
    throw UsageError("select_rows: mask of " + std::to_string(mask.size()) + " for " +
                     std::to_string(m.rows()) + " rows");
  }
  Eigen::Index count = 0;
  for (bool b : mask) count += b ? 1 : 0;
  Matrix out(count, m.cols());
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) out.row(r++) = m.row(i);
  }
  return out;
}

}  // namespace st3d
