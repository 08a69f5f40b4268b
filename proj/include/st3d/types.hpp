#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace st3d {

/// Row-major so that a spot's row is a contiguous span.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Mask = std::vector<bool>;

/// Spot radius in pixels when a spots table omits it.
inline constexpr double kDefaultSpotRadius = 112.0;

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

/// Maps (x, y) to (a*x + b*y + tx, c*x + d*y + ty).
class AffineTransform2D {
 public:
  constexpr AffineTransform2D() = default;
  constexpr AffineTransform2D(double a, double b, double c, double d, double tx, double ty)
      : a_(a), b_(b), c_(c), d_(d), tx_(tx), ty_(ty) {}

  static constexpr AffineTransform2D identity() { return {}; }
  static constexpr AffineTransform2D translation(double tx, double ty) {
    return {1.0, 0.0, 0.0, 1.0, tx, ty};
  }
  /// Counter-clockwise rotation about the origin.
  static AffineTransform2D rotation(double radians);
  static AffineTransform2D similarity(double scale, double radians, double tx, double ty);

  double a() const { return a_; }
  double b() const { return b_; }
  double c() const { return c_; }
  double d() const { return d_; }
  double tx() const { return tx_; }
  double ty() const { return ty_; }

  double determinant() const { return a_ * d_ - b_ * c_; }
  bool is_invertible() const;
  bool is_identity() const;

  Point2 apply(Point2 p) const { return {a_ * p.x + b_ * p.y + tx_, c_ * p.x + d_ * p.y + ty_}; }

  /// Throws GeometryError when the transform is singular.
  AffineTransform2D inverse() const;

  friend bool operator==(const AffineTransform2D&, const AffineTransform2D&) = default;

 private:
  double a_ = 1.0, b_ = 0.0, c_ = 0.0, d_ = 1.0, tx_ = 0.0, ty_ = 0.0;
};

inline Point2 apply_transform(const AffineTransform2D& t, Point2 p) { return t.apply(p); }

/// Result applies `inner` first, then `outer`.
AffineTransform2D compose_transforms(const AffineTransform2D& outer, const AffineTransform2D& inner);

struct Spot {
  std::string spot_id;
  int layer_index = 0;
  Point2 center;  // slide coordinates, before alignment
  double radius = kDefaultSpotRadius;
  bool known = false;
};

struct Layer {
  int layer_index = 0;
  std::vector<Spot> spots;
  AffineTransform2D transform;  // slide -> reference frame
  bool is_reference = false;
};

struct ExpressionMatrix {
  Matrix values;
  std::vector<std::string> gene_names;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

enum class FeatureLevel : std::uint8_t { spot = 0, region = 1, global = 2 };

const char* to_string(FeatureLevel level);

struct FeatureMatrix {
  Matrix values;
  FeatureLevel level = FeatureLevel::spot;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
};

/// Position of a spot inside the layer list.
struct SpotRef {
  std::size_t layer = 0;
  std::size_t spot = 0;
};

/// A registered multi-layer sample. Matrix rows follow spot enumeration order:
/// layers in ascending layer_index, spots in file order within each layer.
struct SampleStack {
  std::string sample_id;
  std::vector<Layer> layers;
  ExpressionMatrix expression;
  FeatureMatrix features{Matrix(), FeatureLevel::spot};
  FeatureMatrix region_features{Matrix(), FeatureLevel::region};
  FeatureMatrix global_features{Matrix(), FeatureLevel::global};

  std::size_t spot_count() const;
  /// Row index -> (layer, spot) position, in enumeration order.
  std::vector<SpotRef> spot_refs() const;
  std::vector<std::string> spot_ids() const;
  /// Layer index of every row.
  std::vector<int> row_layers() const;
  const Spot& spot(SpotRef ref) const { return layers[ref.layer].spots[ref.spot]; }
  /// Spot center mapped into the reference frame.
  Point2 aligned_center(SpotRef ref) const;
  /// Equal-area radius after mapping into the reference frame.
  double aligned_radius(SpotRef ref) const;
  Mask known_mask() const;
};

enum class ViolationKind {
  row_count_mismatch,
  duplicate_spot_id,
  non_invertible_transform,
  reference_layer,
  non_finite_value,
  invalid_radius,
  gene_names,
  layer_order,
};

const char* to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  std::string message;
};

/// Lists every structural defect of `stack`; empty iff the stack is well formed.
std::vector<Violation> validate_stack(const SampleStack& stack);

/// Throws DataError listing the violations when `stack` is not well formed.
void require_valid(const SampleStack& stack);

inline std::span<const double> row_view(const Matrix& m, Eigen::Index row) {
  return {m.data() + row * m.cols(), static_cast<std::size_t>(m.cols())};
}

}  // namespace st3d
