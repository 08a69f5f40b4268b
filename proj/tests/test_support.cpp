#include "test_support.hpp"

#include <atomic>
#include <numbers>
#include <unistd.h>

namespace st3d::testing {

SampleStack random_stack(std::uint64_t seed, int layers, int spots, int genes, int feature_dim, double extent) {
  ad::Rng rng(seed);
  SampleStack s;
  s.sample_id = "rand" + std::to_string(seed);
  for (int l = 0; l < layers; ++l) {
    Layer layer;
    layer.layer_index = l;
    layer.is_reference = l == 0;
    if (l > 0) {
      layer.transform = AffineTransform2D::similarity(rng.uniform(0.9, 1.1), rng.uniform(-0.2, 0.2),
                                                      rng.uniform(-80, 80), rng.uniform(-80, 80));
    }
    for (int i = 0; i < spots; ++i) {
      Spot sp;
      sp.spot_id = s.sample_id + "_" + std::to_string(l) + "_" + std::to_string(i);
      sp.layer_index = l;
      sp.center = {rng.uniform(0, extent), rng.uniform(0, extent)};
      sp.radius = rng.uniform(60, 160);
      layer.spots.push_back(sp);
    }
    s.layers.push_back(layer);
  }
  const auto n = static_cast<Eigen::Index>(layers * spots);
  s.expression.values = random_matrix(n, genes, rng).array().abs();
  for (int g = 0; g < genes; ++g) s.expression.gene_names.push_back("g" + std::to_string(g));
  s.features = {random_matrix(n, feature_dim, rng), FeatureLevel::spot};
  s.region_features = {random_matrix(n, feature_dim, rng), FeatureLevel::region};
  s.global_features = {random_matrix(n, feature_dim, rng), FeatureLevel::global};
  return s;
}

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, ad::Rng& rng, double scale) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("st3d_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace st3d::testing
