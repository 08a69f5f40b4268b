#include "st3d/types.hpp"

#include "st3d/error.hpp"

#include <cmath>
#include <sstream>
#include <unordered_set>

namespace st3d {

namespace {

constexpr double kSingularDeterminant = 1e-12;

bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace

AffineTransform2D AffineTransform2D::rotation(double radians) {
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  return {c, -s, s, c, 0.0, 0.0};
}

AffineTransform2D AffineTransform2D::similarity(double scale, double radians, double tx, double ty) {
  const double c = scale * std::cos(radians);
  const double s = scale * std::sin(radians);
  return {c, -s, s, c, tx, ty};
}

bool AffineTransform2D::is_invertible() const {
  const double det = determinant();
  return std::isfinite(det) && std::abs(det) > kSingularDeterminant && std::isfinite(tx_) &&
         std::isfinite(ty_);
}

bool AffineTransform2D::is_identity() const { return *this == identity(); }

AffineTransform2D AffineTransform2D::inverse() const {
  if (!is_invertible()) {
    throw GeometryError("affine transform is not invertible (determinant " +
                        std::to_string(determinant()) + ")");
  }
  const double inv_det = 1.0 / determinant();
  const double ia = d_ * inv_det;
  const double ib = -b_ * inv_det;
  const double ic = -c_ * inv_det;
  const double id = a_ * inv_det;
  return {ia, ib, ic, id, -(ia * tx_ + ib * ty_), -(ic * tx_ + id * ty_)};
}

AffineTransform2D compose_transforms(const AffineTransform2D& outer, const AffineTransform2D& inner) {
  return {outer.a() * inner.a() + outer.b() * inner.c(),
          outer.a() * inner.b() + outer.b() * inner.d(),
          outer.c() * inner.a() + outer.d() * inner.c(),
          outer.c() * inner.b() + outer.d() * inner.d(),
          outer.a() * inner.tx() + outer.b() * inner.ty() + outer.tx(),
          outer.c() * inner.tx() + outer.d() * inner.ty() + outer.ty()};
}

const char* to_string(FeatureLevel level) {
  switch (level) {
    case FeatureLevel::spot:
      return "spot";
    case FeatureLevel::region:
      return "region";
    case FeatureLevel::global:
      return "global";
  }
  return "unknown";
}

std::size_t SampleStack::spot_count() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.spots.size();
  return n;
}

std::vector<SpotRef> SampleStack::spot_refs() const {
  std::vector<SpotRef> refs;
  refs.reserve(spot_count());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (std::size_t s = 0; s < layers[l].spots.size(); ++s) refs.push_back({l, s});
  }
  return refs;
}

std::vector<std::string> SampleStack::spot_ids() const {
  std::vector<std::string> ids;
  ids.reserve(spot_count());
  for (const auto& layer : layers) {
    for (const auto& s : layer.spots) ids.push_back(s.spot_id);
  }
  return ids;
}

std::vector<int> SampleStack::row_layers() const {
  std::vector<int> out;
  out.reserve(spot_count());
  for (const auto& layer : layers) out.insert(out.end(), layer.spots.size(), layer.layer_index);
  return out;
}

Point2 SampleStack::aligned_center(SpotRef ref) const {
  return layers[ref.layer].transform.apply(spot(ref).center);
}

double SampleStack::aligned_radius(SpotRef ref) const {
  return spot(ref).radius * std::sqrt(std::abs(layers[ref.layer].transform.determinant()));
}

Mask SampleStack::known_mask() const {
  Mask mask;
  mask.reserve(spot_count());
  for (const auto& layer : layers) {
    for (const auto& s : layer.spots) mask.push_back(s.known);
  }
  return mask;
}

const char* to_string(ViolationKind kind) {
  switch (kind) {
    case ViolationKind::row_count_mismatch:
      return "row-count mismatch";
    case ViolationKind::duplicate_spot_id:
      return "duplicate spot id";
    case ViolationKind::non_invertible_transform:
      return "non-invertible transform";
    case ViolationKind::reference_layer:
      return "reference layer";
    case ViolationKind::non_finite_value:
      return "non-finite value";
    case ViolationKind::invalid_radius:
      return "invalid radius";
    case ViolationKind::gene_names:
      return "gene names";
    case ViolationKind::layer_order:
      return "layer order";
  }
  return "unknown";
}

std::vector<Violation> validate_stack(const SampleStack& stack) {
  std::vector<Violation> out;
  auto add = [&out](ViolationKind kind, std::string message) {
    out.push_back({kind, std::move(message)});
  };

  const auto n = static_cast<Eigen::Index>(stack.spot_count());

  std::size_t reference_count = 0;
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    const Layer& layer = stack.layers[l];
    if (l > 0 && layer.layer_index <= stack.layers[l - 1].layer_index) {
      add(ViolationKind::layer_order, "layer " + std::to_string(layer.layer_index) +
                                          " is not in ascending layer order");
    }
    if (!layer.transform.is_invertible()) {
      add(ViolationKind::non_invertible_transform,
          "layer " + std::to_string(layer.layer_index) + " transform is not invertible");
    }
    if (layer.is_reference) {
      ++reference_count;
      if (!layer.transform.is_identity()) {
        add(ViolationKind::reference_layer, "reference layer " + std::to_string(layer.layer_index) +
                                                " does not carry the identity transform");
      }
    }
    for (const Spot& s : layer.spots) {
      if (s.layer_index != layer.layer_index) {
        add(ViolationKind::layer_order, "spot " + s.spot_id + " has layer_index " +
                                            std::to_string(s.layer_index) + " inside layer " +
                                            std::to_string(layer.layer_index));
      }
      if (!std::isfinite(s.center.x) || !std::isfinite(s.center.y)) {
        add(ViolationKind::non_finite_value, "spot " + s.spot_id + " has a non-finite center");
      }
      if (!(s.radius > 0.0) || !std::isfinite(s.radius)) {
        add(ViolationKind::invalid_radius, "spot " + s.spot_id + " has non-positive radius");
      }
    }
  }
  if (reference_count != 1) {
    add(ViolationKind::reference_layer,
        "expected exactly one reference layer, found " + std::to_string(reference_count));
  }

  std::unordered_set<std::string> ids;
  for (const auto& layer : stack.layers) {
    for (const Spot& s : layer.spots) {
      if (!ids.insert(s.spot_id).second) {
        add(ViolationKind::duplicate_spot_id, "duplicate spot id " + s.spot_id);
      }
    }
  }

  if (stack.expression.rows() != n) {
    add(ViolationKind::row_count_mismatch, "expression has " + std::to_string(stack.expression.rows()) +
                                               " rows for " + std::to_string(n) + " spots");
  }
  if (stack.features.rows() != n) {
    add(ViolationKind::row_count_mismatch, "spot features have " + std::to_string(stack.features.rows()) +
                                               " rows for " + std::to_string(n) + " spots");
  }
  for (const FeatureMatrix* f : {&stack.region_features, &stack.global_features}) {
    if (f->values.size() != 0 && f->rows() != n) {
      add(ViolationKind::row_count_mismatch, std::string(to_string(f->level)) + " features have " +
                                                 std::to_string(f->rows()) + " rows for " +
                                                 std::to_string(n) + " spots");
    }
  }

  if (static_cast<Eigen::Index>(stack.expression.gene_names.size()) != stack.expression.cols()) {
    add(ViolationKind::gene_names, "expression has " + std::to_string(stack.expression.cols()) +
                                       " columns but " +
                                       std::to_string(stack.expression.gene_names.size()) + " gene names");
  }
  std::unordered_set<std::string> genes;
  for (const auto& g : stack.expression.gene_names) {
    if (!genes.insert(g).second) add(ViolationKind::gene_names, "duplicate gene name " + g);
  }

  if (!all_finite(stack.expression.values)) {
    add(ViolationKind::non_finite_value, "expression contains NaN or Inf");
  }
  for (const FeatureMatrix* f : {&stack.features, &stack.region_features, &stack.global_features}) {
    if (!all_finite(f->values)) {
      add(ViolationKind::non_finite_value,
          std::string(to_string(f->level)) + " features contain NaN or Inf");
    }
  }
  return out;
}

void require_valid(const SampleStack& stack) {
  const auto violations = validate_stack(stack);
  if (violations.empty()) return;
  std::ostringstream msg;
  msg << "sample " << stack.sample_id << " is not well formed:";
  for (const auto& v : violations) msg << "\n  " << to_string(v.kind) << ": " << v.message;
  throw DataError(msg.str());
}

}  // namespace st3d
