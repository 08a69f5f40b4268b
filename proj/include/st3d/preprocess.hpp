#pragma once

#include "st3d/types.hpp"

#include <cstddef>
#include <vector>

namespace st3d {

inline constexpr int kDefaultTopGenes = 250;
inline constexpr double kDefaultNormalizeScale = 1e4;

/// Patch side lengths in pixels for the three resolution levels.
inline constexpr double kSpotPatchSide = 224.0;
inline constexpr double kRegionPatchSide = 512.0;
inline constexpr double kGlobalPatchSide = 1024.0;

/// Keeps the n genes with the largest mean over all spots, in their original
/// column order. Ties rank by gene name ascending.
ExpressionMatrix select_top_genes(const ExpressionMatrix& expr, int n = kDefaultTopGenes);

struct NormalizeResult {
  ExpressionMatrix expression;
  /// Rows whose total was zero; they stay all-zero.
  std::vector<Eigen::Index> zero_rows;
};

/// value -> log(1 + scale * value / row_sum). Negative or non-finite counts throw DataError.
NormalizeResult normalize(const ExpressionMatrix& expr, double scale = kDefaultNormalizeScale);

/// For each spot, the rows (same layer) whose slide-coordinate centers fall in
/// the square patch of side `patch_side` centered on that spot.
using Membership = std::vector<std::vector<std::size_t>>;

Membership patch_membership(const SampleStack& stack, double patch_side);

/// Drops members whose mask entry is false.
Membership restrict_membership(const Membership& membership, const Mask& keep);

struct LevelLabels {
  Matrix y_r;
  Matrix y_g;
  /// Rows whose region / global membership was empty; their aggregate is their own label.
  std::vector<std::size_t> empty_region_rows;
  std::vector<std::size_t> empty_global_rows;
};

/// y_r[i] = sum of y over region[i], y_g[i] = sum of y over global[i].
LevelLabels aggregate_levels(const Matrix& y, const Membership& region, const Membership& global);

}  // namespace st3d
