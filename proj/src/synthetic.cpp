#include "st3d/synthetic.hpp"

#include "st3d/autodiff.hpp"
#include "st3d/error.hpp"
#include "st3d/metrics.hpp"
#include "st3d/preprocess.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace st3d {

void SyntheticSpec::validate() const {
  if (layers < 1 || spots_per_layer < 1 || genes < 1 || feature_dim < 1) {
    throw UsageError("synthetic spec: layers, spots, genes and feature_dim must be positive");
  }
  if (!(rho >= 0.0 && rho <= 1.0)) throw UsageError("synthetic spec: rho must lie in [0, 1]");
  if (!(length_scale > 0.0) || !(spacing > 0.0)) throw UsageError("synthetic spec: length scale and spacing must be positive");
  if (!(jitter >= 0.0) || !(feature_noise >= 0.0)) throw UsageError("synthetic spec: jitter and noise must be non-negative");
}

namespace {

struct Bump {
  Point2 center;
  double weight;
};

// Random bump field evaluated at `points`, then standardized to mean 0, sd 1.
Vector bump_field(const std::vector<Point2>& points, double lo_x, double hi_x, double lo_y, double hi_y,
                  double length_scale, ad::Rng& rng) {
  const double area = (hi_x - lo_x) * (hi_y - lo_y);
  const int count = std::max(8, static_cast<int>(std::lround(3.0 * area / (std::numbers::pi * length_scale * length_scale))));
  std::vector<Bump> bumps(static_cast<std::size_t>(count));
  for (auto& b : bumps) {
    b.center = {rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)};
    b.weight = rng.normal();
  }
  const double inv = 1.0 / (2.0 * length_scale * length_scale);
  Vector field(static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) {
    double v = 0.0;
    for (const auto& b : bumps) {
      const double dx = points[i].x - b.center.x;
      const double dy = points[i].y - b.center.y;
      v += b.weight * std::exp(-(dx * dx + dy * dy) * inv);
    }
    field(static_cast<Eigen::Index>(i)) = v;
  }
  const double mean = field.mean();
  field.array() -= mean;
  const double sd = std::sqrt(field.squaredNorm() / static_cast<double>(field.size()));
  if (sd > 0.0) field /= sd;
  return field;
}

Matrix random_projection(int genes, int dim, ad::Rng& rng) {
  Matrix p(genes, dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(genes));
  for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = scale * rng.normal();
  return p;
}

Matrix project_with_noise(const Matrix& centered, const Matrix& projection, double noise, ad::Rng& rng) {
  Matrix f = centered * projection;
  for (Eigen::Index i = 0; i < f.size(); ++i) {
    // Stored as 32-bit on disk; round here so that generated and reloaded stacks agree.
    f.data()[i] = static_cast<double>(static_cast<float>(f.data()[i] + noise * rng.normal()));
  }
  return f;
}

Matrix mean_over(const Matrix& x, const Membership& members) {
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (std::size_t i = 0; i < members.size(); ++i) {
    for (std::size_t j : members[i]) out.row(static_cast<Eigen::Index>(i)) += x.row(static_cast<Eigen::Index>(j));
    out.row(static_cast<Eigen::Index>(i)) /= static_cast<double>(members[i].size());
  }
  return out;
}

}  // namespace

SampleStack generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  ad::Rng rng(spec.seed);

  const int n = spec.spots_per_layer;
  const int grid_cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  std::vector<Point2> lattice(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double wobble = 0.05 * spec.spacing;
    lattice[static_cast<std::size_t>(i)] = {(i % grid_cols) * spec.spacing + rng.uniform(-wobble, wobble),
                                            (i / grid_cols) * spec.spacing + rng.uniform(-wobble, wobble)};
  }
  double lo_x = lattice[0].x, hi_x = lattice[0].x, lo_y = lattice[0].y, hi_y = lattice[0].y;
  for (const auto& p : lattice) {
    lo_x = std::min(lo_x, p.x);
    hi_x = std::max(hi_x, p.x);
    lo_y = std::min(lo_y, p.y);
    hi_y = std::max(hi_y, p.y);
  }
  lo_x -= spec.length_scale;
  hi_x += spec.length_scale;
  lo_y -= spec.length_scale;
  hi_y += spec.length_scale;

  const auto L = static_cast<std::size_t>(spec.layers);
  const auto N = static_cast<Eigen::Index>(n);
  const double shared_w = std::sqrt(spec.rho);
  const double own_w = std::sqrt(1.0 - spec.rho);

  Matrix expr(static_cast<Eigen::Index>(L) * N, spec.genes);
  std::vector<Vector> shared;
  for (int g = 0; g < spec.genes; ++g) shared.push_back(bump_field(lattice, lo_x, hi_x, lo_y, hi_y, spec.length_scale, rng));
  for (std::size_t l = 0; l < L; ++l) {
    for (int g = 0; g < spec.genes; ++g) {
      const Vector own = bump_field(lattice, lo_x, hi_x, lo_y, hi_y, spec.length_scale, rng);
      const Vector field = shared_w * shared[static_cast<std::size_t>(g)] + own_w * own;
      for (Eigen::Index i = 0; i < N; ++i) {
        expr(static_cast<Eigen::Index>(l) * N + i, g) = std::max(0.0, kSyntheticExpressionOffset + field(i));
      }
    }
  }

  SampleStack stack;
  stack.sample_id = spec.sample_id.empty() ? "synth_" + std::to_string(spec.seed) : spec.sample_id;
  const std::size_t reference = L / 2;
  for (std::size_t l = 0; l < L; ++l) {
    Layer layer;
    layer.layer_index = static_cast<int>(l);
    layer.is_reference = l == reference;
    if (!layer.is_reference) {
      const double angle = rng.uniform(-4.0, 4.0) * std::numbers::pi / 180.0;
      const double scale = rng.uniform(0.98, 1.02);
      layer.transform = AffineTransform2D::similarity(scale, angle, rng.uniform(-150.0, 150.0), rng.uniform(-150.0, 150.0));
    }
    const AffineTransform2D to_slide = layer.transform.inverse();
    for (int i = 0; i < n; ++i) {
      Point2 q = lattice[static_cast<std::size_t>(i)];
      q.x += spec.jitter * rng.normal();
      q.y += spec.jitter * rng.normal();
      Spot s;
      char id[64];
      std::snprintf(id, sizeof(id), "%s_L%zu_S%04d", stack.sample_id.c_str(), l, i);
      s.spot_id = id;
      s.layer_index = layer.layer_index;
      s.center = to_slide.apply(q);
      s.radius = kDefaultSpotRadius;
      layer.spots.push_back(std::move(s));
    }
    stack.layers.push_back(std::move(layer));
  }

  stack.expression.values = expr;
  for (int g = 0; g < spec.genes; ++g) {
    char name[16];
    std::snprintf(name, sizeof(name), "G%03d", g);
    stack.expression.gene_names.emplace_back(name);
  }

  ad::Rng encoder(spec.encoder_seed);
  const Matrix p_s = random_projection(spec.genes, spec.feature_dim, encoder);
  const Matrix p_r = random_projection(spec.genes, spec.feature_dim, encoder);
  const Matrix p_g = random_projection(spec.genes, spec.feature_dim, encoder);
  const Matrix centered = expr.array() - kSyntheticExpressionOffset;
  stack.features = {project_with_noise(centered, p_s, spec.feature_noise, rng), FeatureLevel::spot};
  stack.region_features = {
      project_with_noise(mean_over(centered, patch_membership(stack, kRegionPatchSide)), p_r, spec.feature_noise, rng),
      FeatureLevel::region};
  stack.global_features = {
      project_with_noise(mean_over(centered, patch_membership(stack, kGlobalPatchSide)), p_g, spec.feature_noise, rng),
      FeatureLevel::global};
  return stack;
}

double cross_layer_expression_correlation(const SampleStack& stack) {
  const std::size_t L = stack.layers.size();
  if (L < 2) throw UsageError("cross_layer_expression_correlation: need at least two layers");
  const std::size_t n = stack.layers[0].spots.size();
  for (const auto& layer : stack.layers) {
    if (layer.spots.size() != n) throw UsageError("cross_layer_expression_correlation: layers differ in size");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < L; ++a) {
    for (std::size_t b = a + 1; b < L; ++b) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto r = pearson(row_view(stack.expression.values, static_cast<Eigen::Index>(a * n + i)),
                               row_view(stack.expression.values, static_cast<Eigen::Index>(b * n + i)));
        if (r) {
          total += *r;
          ++count;
        }
      }
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace st3d
