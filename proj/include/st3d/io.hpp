#pragma once

// On-disk formats:
//   spots table   TSV: sample_id, layer_index, spot_id, x, y, radius, known
//   expression    TSV: spot_id then one column per gene, header row of gene names
//   features      binary: "ST3D-FMAT", u16 version, u8 level, u32 rows, u32 cols,
//                 row-major little-endian f32 values
//   transforms    JSON: per layer six affine coefficients and is_reference
//   manifest      JSON: per sample the paths of the files above, relative to the
//                 manifest's directory
// Decimal values are written with 9 significant digits.

#include "st3d/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace st3d::io {

inline constexpr std::uint16_t kFeatureFormatVersion = 1;
inline constexpr int kManifestFormatVersion = 1;

struct SpotsTable {
  std::string sample_id;
  std::vector<Spot> spots;  // file order
};

void write_spots_tsv(const SampleStack& stack, const std::filesystem::path& path);
SpotsTable read_spots_tsv(const std::filesystem::path& path);

void write_expression_tsv(const ExpressionMatrix& expr, std::span<const std::string> spot_ids,
                          const std::filesystem::path& path);

struct ExpressionTable {
  ExpressionMatrix expression;
  std::vector<std::string> spot_ids;
};

ExpressionTable read_expression_tsv(const std::filesystem::path& path);

void write_feature_matrix(const FeatureMatrix& features, const std::filesystem::path& path);
FeatureMatrix read_feature_matrix(const std::filesystem::path& path);

struct LayerTransform {
  int layer_index = 0;
  AffineTransform2D transform;
  bool is_reference = false;
};

void write_transforms_json(const SampleStack& stack, const std::filesystem::path& path);
std::vector<LayerTransform> read_transforms_json(const std::filesystem::path& path);

struct ManifestEntry {
  std::string sample_id;
  std::string spots;
  std::string expression;
  std::string spot_features;
  std::string region_features;  // optional, empty when absent
  std::string global_features;  // optional, empty when absent
  std::string transforms;
};

struct DatasetManifest {
  int format_version = kManifestFormatVersion;
  std::vector<ManifestEntry> samples;
  std::filesystem::path base_dir;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Loads one sample and checks that every file agrees on the spot set.
SampleStack load_sample(const DatasetManifest& manifest, const ManifestEntry& entry);
std::vector<SampleStack> load_dataset(const std::filesystem::path& manifest_path);

/// Writes every sample's files into `dir` plus dir/manifest.json.
std::filesystem::path save_dataset(std::span<const SampleStack> stacks, const std::filesystem::path& dir);

/// Formats a double with 9 significant digits.
std::string format_value(double v);

}  // namespace st3d::io
