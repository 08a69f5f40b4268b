#pragma once

#include "st3d/autodiff.hpp"
#include "st3d/types.hpp"

#include <filesystem>
#include <string>

namespace st3d::testing {

/// Random stack with `layers` layers of `spots` spots scattered over a square
/// of side `extent`, random similarity transforms and random features.
SampleStack random_stack(std::uint64_t seed, int layers, int spots, int genes, int feature_dim,
                         double extent = 1500.0);

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, ad::Rng& rng, double scale = 1.0);

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace st3d::testing
