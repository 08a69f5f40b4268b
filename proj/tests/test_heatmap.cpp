#include "test_support.hpp"

#include "st3d/error.hpp"
#include "st3d/heatmap.hpp"

#include <doctest.h>

#include <cmath>

using namespace st3d;

namespace {

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("heatmap svg") {
  const SampleStack s = testing::random_stack(3, 2, 9, 2, 3, 800.0);
  std::vector<double> v(s.spot_count());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(static_cast<double>(i));
  const std::string svg = heatmap_svg(s, v, "ERBB2");
  CHECK(count(svg, "<circle") == 18);
  CHECK(svg == heatmap_svg(s, v, "ERBB2"));
  CHECK(svg.find("ERBB2") != std::string::npos);

  const std::vector<double> flat(s.spot_count(), 4.0);
  const std::string mid = heatmap_svg(s, flat, "G");
  const Rgb c = viridis_table()[128];
  char fill[16];
  std::snprintf(fill, sizeof fill, "#%02x%02x%02x", c.r, c.g, c.b);
  CHECK(count(mid, std::string("fill=\"") + fill + "\"") == 18);

  CHECK(color_index(0.0, 0.0, 1.0) == 0);
  CHECK(color_index(1.0, 0.0, 1.0) == 255);
  CHECK(color_index(2.0, 2.0, 2.0) == 128);

  SampleStack empty;
  CHECK_THROWS_AS(heatmap_svg(empty, {}, "G"), UsageError);
  v[0] = std::nan("");
  CHECK_THROWS_AS(heatmap_svg(s, v, "G"), UsageError);
  v.pop_back();
  CHECK_THROWS_AS(heatmap_svg(s, v, "G"), UsageError);
}
