#pragma once

#include "st3d/types.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace st3d {

struct Circle {
  Point2 center;
  double radius = kDefaultSpotRadius;
};

/// Exact intersection-over-union of two discs (lens-area formula).
/// Throws GeometryError for non-positive radii.
double circle_iou(const Circle& c1, const Circle& c2);

/// Throws DegenerateFeatureError for a zero-norm vector, UsageError on length mismatch.
double cosine_similarity(std::span<const double> u, std::span<const double> v);

/// One spot as seen by the edge-weight functions.
struct PlacedSpot {
  Point2 center;
  double radius = kDefaultSpotRadius;
  int layer_index = 0;
  std::span<const double> feature;
};

/// Cross-layer connection weight: disc IoU plus feature cosine similarity, in [-1, 2].
/// Centers must already be in the reference frame.
double cross_layer_weight(const PlacedSpot& s1, const PlacedSpot& s2);

/// As above, mapping each spot through its slide-to-reference transform first.
double cross_layer_weight(const PlacedSpot& s1, const AffineTransform2D& t1, const PlacedSpot& s2,
                          const AffineTransform2D& t2);

/// Inverse Euclidean distance between two spots of one layer.
double intra_layer_weight(const PlacedSpot& s1, const PlacedSpot& s2);

struct Candidate {
  std::size_t index = 0;
  double weight = 0.0;

  friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// The k largest candidates by weight; ties go to the lower index.
std::vector<Candidate> topk_select(std::vector<Candidate> candidates, std::size_t k);

enum class EdgeKind { intra_layer, cross_layer };

const char* to_string(EdgeKind kind);

struct Edge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double weight = 0.0;
  EdgeKind kind = EdgeKind::intra_layer;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Directed spot graph; edges are stored as selected per source node,
/// grouped by source in ascending order.
struct SpatialGraph {
  std::size_t node_count = 0;
  std::vector<Edge> edges;
  std::size_t k_intra = 0;
  std::size_t k_cross = 0;
  bool directed = true;
};

inline constexpr std::size_t kDefaultIntraK = 8;
inline constexpr std::size_t kDefaultCrossK = 12;
inline constexpr std::size_t kDefault2dK = 12;

/// Intra-layer top-k by inverse distance plus cross-layer top-k over all other
/// layers pooled; non-positive cross weights are dropped before selection.
SpatialGraph build_3d_graph(const SampleStack& stack, std::size_t k_intra = kDefaultIntraK,
                            std::size_t k_cross = kDefaultCrossK);

/// Intra-layer inverse-distance edges only.
SpatialGraph build_2d_graph(const SampleStack& stack, std::size_t k = kDefault2dK);

struct Neighbor {
  std::size_t index = 0;
  double weight = 0.0;
};

/// Undirected adjacency: an edge present in either direction, weight = max of the two.
/// Neighbor lists are sorted by index.
struct Adjacency {
  std::vector<std::vector<Neighbor>> neighbors;

  std::size_t node_count() const { return neighbors.size(); }
};

Adjacency symmetrize(const SpatialGraph& graph);

/// Dense 0/1 mask of the symmetrized graph with self loops, for attention layers.
Matrix attention_mask(const Adjacency& adjacency);

/// TSV edge list (src_spot_id, dst_spot_id, weight, kind) with a header line.
void write_graph_tsv(const SpatialGraph& graph, std::span<const std::string> spot_ids,
                     const std::filesystem::path& path);
SpatialGraph read_graph_tsv(const std::filesystem::path& path, std::span<const std::string> spot_ids);

}  // namespace st3d
