#pragma once

#include "st3d/types.hpp"

#include <cstdint>
#include <string>

namespace st3d {

/// Parameters of a generated multi-layer stack.
///
/// Spots of every layer sit on the same jittered lattice in the reference frame;
/// each layer is stored in its own slide frame related by a small random
/// similarity transform. Gene fields are sums of radial bumps: sqrt(rho) of the
/// field is shared by all layers, the rest is drawn per layer.
struct SyntheticSpec {
  int layers = 3;
  int spots_per_layer = 200;
  int genes = 20;
  double length_scale = 600.0;  // bump width in pixels
  double rho = 0.8;             // cross-layer correlation of the gene fields
  double jitter = 10.0;         // sd of per-spot position noise, pixels
  std::uint64_t seed = 0;
  int feature_dim = 16;
  double feature_noise = 0.5;  // sd of additive feature noise
  double spacing = 260.0;      // lattice pitch in pixels
  /// Seed of the expression -> feature projections. Shared across samples so
  /// that features mean the same thing in every stack.
  std::uint64_t encoder_seed = 0x5eed;
  /// Empty means "synth_<seed>".
  std::string sample_id;

  /// Throws UsageError on out-of-range values.
  void validate() const;
};

/// Expression offset added to every standardized gene field before clamping at 0.
inline constexpr double kSyntheticExpressionOffset = 3.0;

SampleStack generate_synthetic(const SyntheticSpec& spec);

/// Mean over spot positions and layer pairs of the Pearson correlation, across
/// genes, between the expression of corresponding spots (same position in
/// their layers' spot lists). Requires equal layer sizes.
double cross_layer_expression_correlation(const SampleStack& stack);

}  // namespace st3d
