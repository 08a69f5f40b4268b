#include "st3d/heatmap.hpp"

#include "st3d/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace st3d {

namespace {

// Polynomial fit of the viridis colormap, evaluated once into an 8-bit table.
std::array<Rgb, 256> build_table() {
  static constexpr double c[7][3] = {
      {0.2777273272234177, 0.005407344544966578, 0.3340998053353061},
      {0.1050930431085774, 1.404613529898575, 1.384590162594685},
      {-0.3308618287255563, 0.214847559468213, 0.09509516302823659},
      {-4.634230498983486, -5.799100973351585, -19.33244095627987},
      {6.228269936347081, 14.17993336680509, 56.69055260068105},
      {4.776384997670288, -13.74514537774601, -65.35303263337234},
      {-5.435455855934631, 4.645852612178535, 26.3124352495832},
  };
  std::array<Rgb, 256> table{};
  for (int i = 0; i < 256; ++i) {
    const double t = i / 255.0;
    std::uint8_t ch[3];
    for (int k = 0; k < 3; ++k) {
      double v = c[6][k];
      for (int p = 5; p >= 0; --p) v = c[p][k] + t * v;
      ch[k] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    }
    table[static_cast<std::size_t>(i)] = {ch[0], ch[1], ch[2]};
  }
  return table;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

const std::array<Rgb, 256>& viridis_table() {
  static const std::array<Rgb, 256> table = build_table();
  return table;
}

std::size_t color_index(double v, double lo, double hi) {
  if (!(hi > lo)) return 128;
  const double t = std::clamp((v - lo) / (hi - lo), 0.0, 1.0);
  return static_cast<std::size_t>(std::lround(t * 255.0));
}

std::string heatmap_svg(const SampleStack& stack, std::span<const double> values, const std::string& gene) {
  const auto refs = stack.spot_refs();
  if (refs.empty()) throw UsageError("heatmap: stack has no spots");
  if (values.size() != refs.size()) {
    throw UsageError("heatmap: " + std::to_string(values.size()) + " values for " + std::to_string(refs.size()) +
                     " spots");
  }
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : values) {
    if (!std::isfinite(v)) throw UsageError("heatmap: values must be finite");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }

  std::vector<Point2> centers;
  std::vector<double> radii;
  double min_x = std::numeric_limits<double>::infinity(), min_y = min_x;
  double max_x = -min_x, max_y = -min_x;
  for (const auto& r : refs) {
    const Point2 c = stack.aligned_center(r);
    const double rad = stack.aligned_radius(r);
    centers.push_back(c);
    radii.push_back(rad);
    min_x = std::min(min_x, c.x - rad);
    min_y = std::min(min_y, c.y - rad);
    max_x = std::max(max_x, c.x + rad);
    max_y = std::max(max_y, c.y + rad);
  }
  const double margin = 20.0;
  const double title_h = 40.0;
  const double panel_w = max_x - min_x + 2 * margin;
  const double height = max_y - min_y + 2 * margin + title_h;
  const double width = panel_w * static_cast<double>(stack.layers.size());

  const auto& table = viridis_table();
  std::string svg;
  svg += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" + fmt(height) +
         "\" viewBox=\"0 0 " + fmt(width) + " " + fmt(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  char range[96];
  std::snprintf(range, sizeof(range), " [%.6g, %.6g]", lo, hi);
  svg += "<text x=\"" + fmt(margin) + "\" y=\"" + fmt(title_h * 0.7) + "\" font-family=\"sans-serif\" font-size=\"24\">" +
         xml_escape(stack.sample_id + " " + gene) + range + "</text>\n";
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const double ox = panel_w * static_cast<double>(refs[i].layer) + margin - min_x;
    const double oy = title_h + margin - min_y;
    const Rgb c = table[color_index(values[i], lo, hi)];
    char fill[8];
    std::snprintf(fill, sizeof(fill), "#%02x%02x%02x", c.r, c.g, c.b);
    svg += "<circle cx=\"" + fmt(centers[i].x + ox) + "\" cy=\"" + fmt(centers[i].y + oy) + "\" r=\"" + fmt(radii[i]) +
           "\" fill=\"" + fill + "\"/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

void export_heatmap(const SampleStack& stack, std::span<const double> values, const std::string& gene,
                    const std::filesystem::path& path) {
  const std::string svg = heatmap_svg(stack, values, gene);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << svg;
  if (!out) throw DataError("failed writing " + path.string());
}

}  // namespace st3d
