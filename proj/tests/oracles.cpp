#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace st3d::oracle {

double monte_carlo_iou(const Circle& a, const Circle& b, std::size_t samples, ad::Rng& rng) {
  const double x0 = std::min(a.center.x - a.radius, b.center.x - b.radius);
  const double x1 = std::max(a.center.x + a.radius, b.center.x + b.radius);
  const double y0 = std::min(a.center.y - a.radius, b.center.y - b.radius);
  const double y1 = std::max(a.center.y + a.radius, b.center.y + b.radius);
  std::size_t in_both = 0, in_any = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    const double x = rng.uniform(x0, x1);
    const double y = rng.uniform(y0, y1);
    const double da = (x - a.center.x) * (x - a.center.x) + (y - a.center.y) * (y - a.center.y);
    const double db = (x - b.center.x) * (x - b.center.x) + (y - b.center.y) * (y - b.center.y);
    const bool ia = da <= a.radius * a.radius;
    const bool ib = db <= b.radius * b.radius;
    in_both += (ia && ib) ? 1 : 0;
    in_any += (ia || ib) ? 1 : 0;
  }
  return in_any == 0 ? 0.0 : static_cast<double>(in_both) / static_cast<double>(in_any);
}

namespace {

struct Placed {
  Point2 c;
  double r;
  int layer;
};

std::vector<Placed> place(const SampleStack& stack) {
  std::vector<Placed> out;
  for (const auto& ref : stack.spot_refs()) {
    out.push_back({stack.aligned_center(ref), stack.aligned_radius(ref), stack.spot(ref).layer_index});
  }
  return out;
}

std::vector<std::pair<std::size_t, double>> best(std::vector<std::pair<std::size_t, double>> all, std::size_t k) {
  std::sort(all.begin(), all.end(), [](const auto& x, const auto& y) {
    return x.second != y.second ? x.second > y.second : x.first < y.first;
  });
  if (all.size() > k) all.resize(k);
  return all;
}

void intra(const std::vector<Placed>& p, std::size_t i, std::size_t k, std::vector<Edge>& edges) {
  std::vector<std::pair<std::size_t, double>> all;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (j == i || p[j].layer != p[i].layer) continue;
    all.push_back({j, 1.0 / std::hypot(p[i].c.x - p[j].c.x, p[i].c.y - p[j].c.y)});
  }
  for (const auto& [j, w] : best(all, k)) edges.push_back({i, j, w, EdgeKind::intra_layer});
}

}  // namespace

SpatialGraph brute_force_3d_graph(const SampleStack& stack, std::size_t k_intra, std::size_t k_cross) {
  const auto p = place(stack);
  SpatialGraph g;
  g.node_count = p.size();
  g.k_intra = k_intra;
  g.k_cross = k_cross;
  for (std::size_t i = 0; i < p.size(); ++i) {
    intra(p, i, k_intra, g.edges);
    std::vector<std::pair<std::size_t, double>> all;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (p[j].layer == p[i].layer) continue;
      const double w = circle_iou({p[i].c, p[i].r}, {p[j].c, p[j].r}) +
                       cosine_similarity(row_view(stack.features.values, static_cast<Eigen::Index>(i)),
                                         row_view(stack.features.values, static_cast<Eigen::Index>(j)));
      if (w > 0.0) all.push_back({j, w});
    }
    for (const auto& [j, w] : best(all, k_cross)) g.edges.push_back({i, j, w, EdgeKind::cross_layer});
  }
  return g;
}

SpatialGraph brute_force_2d_graph(const SampleStack& stack, std::size_t k) {
  const auto p = place(stack);
  SpatialGraph g;
  g.node_count = p.size();
  g.k_intra = k;
  for (std::size_t i = 0; i < p.size(); ++i) intra(p, i, k, g.edges);
  return g;
}

double pearson_straight(const double* x, const double* y, Eigen::Index n) {
  double mx = 0, my = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0, sxx = 0, syy = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

namespace {

double pcc_term(const Matrix& a, const Matrix& b) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    total += 1.0 - pearson_straight(a.data() + i * a.cols(), b.data() + i * b.cols(), a.cols());
  }
  return total / static_cast<double>(a.rows());
}

}  // namespace

double total_loss_straight(const Matrix& p_s, const Matrix& p_r, const Matrix& p_g, const Matrix& y_s,
                           const Matrix& y_r, const Matrix& y_g, const LossWeights& w) {
  double mse = 0.0;
  for (Eigen::Index i = 0; i < p_s.size(); ++i) {
    const double d = p_s.data()[i] - y_s.data()[i];
    mse += d * d;
  }
  mse /= static_cast<double>(p_s.size());
  const double l_p = mse + w.lambda_s * pcc_term(p_s, y_s) + w.lambda_r * pcc_term(p_r, y_r) +
                     w.lambda_g * pcc_term(p_g, y_g);
  const double l_c = w.lambda_1 * pcc_term(p_s, p_r) + w.lambda_2 * pcc_term(p_s, p_g);
  return w.gamma_1 * l_p + w.gamma_2 * l_c;
}

Matrix overlap_straight(const SampleStack& stack, const Matrix& labels, const Mask& known) {
  const auto p = place(stack);
  Matrix out = Matrix::Constant(labels.rows(), labels.cols(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto row = static_cast<Eigen::Index>(i);
    if (known[i]) {
      out.row(row) = labels.row(row);
      continue;
    }
    std::vector<double> num(static_cast<std::size_t>(labels.cols()), 0.0);
    double den = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      if (!known[j] || p[j].layer == p[i].layer) continue;
      const double w = circle_iou({p[i].c, p[i].r}, {p[j].c, p[j].r});
      if (w <= 0.0) continue;
      for (Eigen::Index g = 0; g < labels.cols(); ++g) num[static_cast<std::size_t>(g)] += w * labels(static_cast<Eigen::Index>(j), g);
      den += w;
    }
    if (den == 0.0) continue;
    for (Eigen::Index g = 0; g < labels.cols(); ++g) out(row, g) = num[static_cast<std::size_t>(g)] / den;
  }
  return out;
}

Matrix similarity_straight(const Matrix& features, const Matrix& labels, const Mask& known, int m) {
  Matrix out = labels;
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    if (known[static_cast<std::size_t>(i)]) continue;
    std::vector<std::pair<std::size_t, double>> all;
    for (Eigen::Index j = 0; j < features.rows(); ++j) {
      if (!known[static_cast<std::size_t>(j)]) continue;
      double dot = 0, ni = 0, nj = 0;
      for (Eigen::Index d = 0; d < features.cols(); ++d) {
        dot += features(i, d) * features(j, d);
        ni += features(i, d) * features(i, d);
        nj += features(j, d) * features(j, d);
      }
      all.push_back({static_cast<std::size_t>(j), std::clamp(dot / (std::sqrt(ni) * std::sqrt(nj)), -1.0, 1.0)});
    }
    const auto top = best(all, static_cast<std::size_t>(m));
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(labels.cols());
    for (const auto& [j, w] : top) sum += labels.row(static_cast<Eigen::Index>(j));
    out.row(i) = sum / static_cast<double>(top.size());
  }
  return out;
}

}  // namespace st3d::oracle
