#pragma once

#include "st3d/types.hpp"

#include <optional>
#include <span>

namespace st3d {

/// Pearson correlation; nullopt when either input has zero variance.
std::optional<double> pearson(std::span<const double> x, std::span<const double> y);

double metric_mse(const Matrix& pred, const Matrix& truth);
double metric_mae(const Matrix& pred, const Matrix& truth);

struct PccSummary {
  double value = 0.0;  // mean over scored genes, 0 when none could be scored
  int scored_genes = 0;
  int skipped_genes = 0;  // constant prediction or truth column
};

/// Mean over genes of the Pearson correlation between predicted and true
/// columns across spots.
PccSummary metric_pcc(const Matrix& pred, const Matrix& truth);

/// Rows of `m` where `mask` is true, in order.
Matrix select_rows(const Matrix& m, const Mask& mask);

}  // namespace st3d
