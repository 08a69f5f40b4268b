#pragma once

#include "st3d/types.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace st3d {

struct Rgb {
  std::uint8_t r, g, b;
};

/// 256-step perceptually ordered color table, dark purple to yellow.
const std::array<Rgb, 256>& viridis_table();

/// Table index for `v` mapped linearly from [lo, hi]; a degenerate range maps
/// to the middle entry.
std::size_t color_index(double v, double lo, double hi);

/// SVG with one circle per spot at its aligned coordinates. Layers are drawn
/// as side-by-side panels in layer order.
std::string heatmap_svg(const SampleStack& stack, std::span<const double> values, const std::string& gene);

void export_heatmap(const SampleStack& stack, std::span<const double> values, const std::string& gene,
                    const std::filesystem::path& path);

}  // namespace st3d
