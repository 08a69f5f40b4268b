#include "st3d/graph.hpp"

#include "st3d/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <unordered_map>

namespace st3d {

double circle_iou(const Circle& c1, const Circle& c2) {
  // Evaluate with the smaller circle first so the result is bitwise symmetric.
  const double r1 = std::min(c1.radius, c2.radius);
  const double r2 = std::max(c1.radius, c2.radius);
  if (!(c1.radius > 0.0) || !(c2.radius > 0.0)) {
    throw GeometryError("circle radius must be positive (got " + std::to_string(c1.radius) + ", " +
                        std::to_string(c2.radius) + ")");
  }
  const double d = std::hypot(c1.center.x - c2.center.x, c1.center.y - c2.center.y);
  const double area1 = std::numbers::pi * r1 * r1;
  const double area2 = std::numbers::pi * r2 * r2;
  if (d >= r1 + r2) return 0.0;
  if (d <= std::abs(r1 - r2)) return std::min(area1, area2) / std::max(area1, area2);

  const double d2 = d * d;
  const double cos1 = std::clamp((d2 + r1 * r1 - r2 * r2) / (2.0 * d * r1), -1.0, 1.0);
  const double cos2 = std::clamp((d2 + r2 * r2 - r1 * r1) / (2.0 * d * r2), -1.0, 1.0);
  const double kite = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2);
  const double lens = r1 * r1 * std::acos(cos1) + r2 * r2 * std::acos(cos2) -
                      0.5 * std::sqrt(std::max(0.0, kite));
  const double inter = std::clamp(lens, 0.0, std::min(area1, area2));
  return inter / (area1 + area2 - inter);
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw UsageError("cosine_similarity: length mismatch (" + std::to_string(u.size()) + " vs " +
                     std::to_string(v.size()) + ")");
  }
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw DegenerateFeatureError("cosine_similarity: zero-norm feature vector");
  return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

double cross_layer_weight(const PlacedSpot& s1, const PlacedSpot& s2) {
  if (s1.layer_index == s2.layer_index) {
    throw UsageError("cross_layer_weight: both spots lie on layer " + std::to_string(s1.layer_index));
  }
  return circle_iou({s1.center, s1.radius}, {s2.center, s2.radius}) +
         cosine_similarity(s1.feature, s2.feature);
}

double cross_layer_weight(const PlacedSpot& s1, const AffineTransform2D& t1, const PlacedSpot& s2,
                          const AffineTransform2D& t2) {
  PlacedSpot a = s1;
  PlacedSpot b = s2;
  a.center = t1.apply(s1.center);
  a.radius = s1.radius * std::sqrt(std::abs(t1.determinant()));
  b.center = t2.apply(s2.center);
  b.radius = s2.radius * std::sqrt(std::abs(t2.determinant()));
  return cross_layer_weight(a, b);
}

double intra_layer_weight(const PlacedSpot& s1, const PlacedSpot& s2) {
  if (s1.layer_index != s2.layer_index) {
    throw UsageError("intra_layer_weight: spots lie on layers " + std::to_string(s1.layer_index) +
                     " and " + std::to_string(s2.layer_index));
  }
  const double d = std::hypot(s1.center.x - s2.center.x, s1.center.y - s2.center.y);
  if (d == 0.0) {
    throw GeometryError("intra_layer_weight: coincident spot centers on layer " +
                        std::to_string(s1.layer_index));
  }
  return 1.0 / d;
}

std::vector<Candidate> topk_select(std::vector<Candidate> candidates, std::size_t k) {
  if (k == 0) throw UsageError("topk_select: k must be at least 1");
  const auto better = [](const Candidate& x, const Candidate& y) {
    if (x.weight != y.weight) return x.weight > y.weight;
    return x.index < y.index;
  };
  const std::size_t keep = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep),
                    candidates.end(), better);
  candidates.resize(keep);
  return candidates;
}

const char* to_string(EdgeKind kind) {
  return kind == EdgeKind::intra_layer ? "intra_layer" : "cross_layer";
}

namespace {

std::vector<PlacedSpot> placed_spots(const SampleStack& stack, bool with_features) {
  require_valid(stack);
  const auto refs = stack.spot_refs();
  std::vector<PlacedSpot> out;
  out.reserve(refs.size());
  for (std::size_t i = 0; i < refs.size(); ++i) {
    PlacedSpot p;
    p.center = stack.aligned_center(refs[i]);
    p.radius = stack.aligned_radius(refs[i]);
    p.layer_index = stack.spot(refs[i]).layer_index;
    if (with_features) p.feature = row_view(stack.features.values, static_cast<Eigen::Index>(i));
    out.push_back(p);
  }
  return out;
}

void append_intra(const std::vector<PlacedSpot>& spots, std::size_t i, std::size_t k,
                  std::vector<Edge>& edges) {
  std::vector<Candidate> cands;
  for (std::size_t j = 0; j < spots.size(); ++j) {
    if (j == i || spots[j].layer_index != spots[i].layer_index) continue;
    cands.push_back({j, intra_layer_weight(spots[i], spots[j])});
  }
  for (const auto& c : topk_select(std::move(cands), k)) {
    edges.push_back({i, c.index, c.weight, EdgeKind::intra_layer});
  }
}

}  // namespace

SpatialGraph build_3d_graph(const SampleStack& stack, std::size_t k_intra, std::size_t k_cross) {
  if (k_intra == 0 || k_cross == 0) throw UsageError("build_3d_graph: k values must be at least 1");
  const auto spots = placed_spots(stack, true);
  for (std::size_t i = 0; i < spots.size(); ++i) {
    bool nonzero = false;
    for (double v : spots[i].feature) nonzero = nonzero || v != 0.0;
    if (!nonzero) {
      throw DegenerateFeatureError("spot " + stack.spot_ids()[i] + " has a zero-norm feature vector");
    }
  }

  SpatialGraph graph;
  graph.node_count = spots.size();
  graph.k_intra = k_intra;
  graph.k_cross = k_cross;
  for (std::size_t i = 0; i < spots.size(); ++i) {
    append_intra(spots, i, k_intra, graph.edges);
    std::vector<Candidate> cands;
    for (std::size_t j = 0; j < spots.size(); ++j) {
      if (spots[j].layer_index == spots[i].layer_index) continue;
      const double w = cross_layer_weight(spots[i], spots[j]);
      if (w > 0.0) cands.push_back({j, w});
    }
    for (const auto& c : topk_select(std::move(cands), k_cross)) {
      graph.edges.push_back({i, c.index, c.weight, EdgeKind::cross_layer});
    }
  }
  return graph;
}

SpatialGraph build_2d_graph(const SampleStack& stack, std::size_t k) {
  if (k == 0) throw UsageError("build_2d_graph: k must be at least 1");
  const auto spots = placed_spots(stack, false);
  SpatialGraph graph;
  graph.node_count = spots.size();
  graph.k_intra = k;
  graph.k_cross = 0;
  for (std::size_t i = 0; i < spots.size(); ++i) append_intra(spots, i, k, graph.edges);
  return graph;
}

Adjacency symmetrize(const SpatialGraph& graph) {
  std::vector<std::vector<Neighbor>> raw(graph.node_count);
  for (const Edge& e : graph.edges) {
    if (e.src >= graph.node_count || e.dst >= graph.node_count) {
      throw UsageError("edge endpoint out of range for graph of " + std::to_string(graph.node_count) +
                       " nodes");
    }
    if (e.src == e.dst) continue;
    raw[e.src].push_back({e.dst, e.weight});
    raw[e.dst].push_back({e.src, e.weight});
  }
  Adjacency adj;
  adj.neighbors.resize(graph.node_count);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto& list = raw[i];
    std::sort(list.begin(), list.end(), [](const Neighbor& a, const Neighbor& b) {
      return a.index != b.index ? a.index < b.index : a.weight > b.weight;
    });
    for (const Neighbor& n : list) {
      if (!adj.neighbors[i].empty() && adj.neighbors[i].back().index == n.index) continue;
      adj.neighbors[i].push_back(n);
    }
  }
  return adj;
}

Matrix attention_mask(const Adjacency& adjacency) {
  const auto n = static_cast<Eigen::Index>(adjacency.node_count());
  Matrix mask = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    mask(i, i) = 1.0;
    for (const Neighbor& nb : adjacency.neighbors[static_cast<std::size_t>(i)]) {
      mask(i, static_cast<Eigen::Index>(nb.index)) = 1.0;
    }
  }
  return mask;
}

void write_graph_tsv(const SpatialGraph& graph, std::span<const std::string> spot_ids,
                     const std::filesystem::path& path) {
  if (spot_ids.size() != graph.node_count) {
    throw UsageError("write_graph_tsv: " + std::to_string(spot_ids.size()) + " spot ids for " +
                     std::to_string(graph.node_count) + " nodes");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "src_spot_id\tdst_spot_id\tweight\tkind\n";
  char buf[64];
  for (const Edge& e : graph.edges) {
    std::snprintf(buf, sizeof(buf), "%.9g", e.weight);
    out << spot_ids[e.src] << '\t' << spot_ids[e.dst] << '\t' << buf << '\t' << to_string(e.kind) << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

SpatialGraph read_graph_tsv(const std::filesystem::path& path, std::span<const std::string> spot_ids) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open graph file " + path.string());
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < spot_ids.size(); ++i) index.emplace(spot_ids[i], i);

  std::string line;
  if (!std::getline(in, line) || line != "src_spot_id\tdst_spot_id\tweight\tkind") {
    throw FormatError(path.string() + ": missing or malformed header line");
  }
  SpatialGraph graph;
  graph.node_count = spot_ids.size();
  std::vector<std::size_t> intra_deg(spot_ids.size(), 0), cross_deg(spot_ids.size(), 0);
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream fields(line);
    std::string src, dst, weight, kind;
    if (!std::getline(fields, src, '\t') || !std::getline(fields, dst, '\t') ||
        !std::getline(fields, weight, '\t') || !std::getline(fields, kind)) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 4 columns");
    }
    const auto s = index.find(src);
    const auto d = index.find(dst);
    if (s == index.end() || d == index.end()) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": unknown spot id");
    }
    Edge e;
    e.src = s->second;
    e.dst = d->second;
    try {
      std::size_t used = 0;
      e.weight = std::stod(weight, &used);
      if (used != weight.size()) throw std::invalid_argument(weight);
    } catch (const std::exception&) {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad weight '" + weight + "'");
    }
    if (kind == "intra_layer") {
      e.kind = EdgeKind::intra_layer;
      graph.k_intra = std::max(graph.k_intra, ++intra_deg[e.src]);
    } else if (kind == "cross_layer") {
      e.kind = EdgeKind::cross_layer;
      graph.k_cross = std::max(graph.k_cross, ++cross_deg[e.src]);
    } else {
      throw FormatError(path.string() + ":" + std::to_string(line_no) + ": unknown edge kind '" + kind + "'");
    }
    if (!(e.weight >= 0.0) || e.src == e.dst) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": invalid edge");
    }
    graph.edges.push_back(e);
  }
  return graph;
}

}  // namespace st3d
