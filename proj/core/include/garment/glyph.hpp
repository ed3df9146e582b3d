#pragma once

#include <array>
#include <utility>
#include <vector>

namespace garment {

/// Rasterized footprint of one component glyph at a given image size.
/// Shapes cycle by class index: disc (button), rectangle (pocket),
/// top-triangle (collar), horizontal band (stripe).
struct Glyph {
    std::vector<std::pair<int, int>> pixels;  // (y, x) offsets inside the bounding box
    int box_w = 0;
    int box_h = 0;
    std::array<double, 3> color{};

    int area() const { return int(pixels.size()); }

    /// Centroid in pixel units relative to the box origin, pixel centers at +0.5.
    std::array<double, 2> centroid() const;
};

/// Distinct saturated colors, one per class index (palette of 8; class
/// detection by color matching assumes k <= 8).
std::array<double, 3> class_color(int class_index);

std::array<double, 3> background_color();

Glyph glyph_for_class(int class_index, int image_size);

/// Pixel area of the nominal glyph for a class at a given image size.
int nominal_glyph_area(int class_index, int image_size);

}  // namespace garment
