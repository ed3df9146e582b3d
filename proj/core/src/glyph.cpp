#include "garment/glyph.hpp"

#include <algorithm>

namespace garment {

namespace {

// Values pre-rounded through float so rendered images survive the 32-bit
// image file format bit-for-bit.
constexpr int kPaletteSize = 8;

std::array<double, 3> snap(double r, double g, double b) {
    return {double(float(r)), double(float(g)), double(float(b))};
}

const std::array<std::array<double, 3>, kPaletteSize>& palette() {
    static const std::array<std::array<double, 3>, kPaletteSize> p = {
        snap(0.90, 0.20, 0.20),  // red
        snap(0.20, 0.80, 0.25),  // green
        snap(0.25, 0.35, 0.90),  // blue
        snap(0.85, 0.80, 0.20),  // yellow
        snap(0.80, 0.25, 0.80),  // magenta
        snap(0.20, 0.80, 0.80),  // cyan
        snap(0.95, 0.55, 0.15),  // orange
        snap(0.55, 0.35, 0.15),  // brown
    };
    return p;
}

}  // namespace

std::array<double, 3> class_color(int class_index) {
    return palette()[class_index % kPaletteSize];
}

std::array<double, 3> background_color() {
    static const auto bg = snap(0.10, 0.10, 0.10);
    return bg;
}

std::array<double, 2> Glyph::centroid() const {
    double sx = 0.0, sy = 0.0;
    for (const auto& [y, x] : pixels) {
        sy += y + 0.5;
        sx += x + 0.5;
    }
    const double n = double(pixels.size());
    return {sx / n, sy / n};
}

Glyph glyph_for_class(int class_index, int image_size) {
    const int s = image_size;
    Glyph g;
    g.color = class_color(class_index);
    switch (class_index % 4) {
        case 0: {  // disc
            const int r = std::max(1, s / 16);
            g.box_w = g.box_h = 2 * r + 1;
            for (int y = -r; y <= r; ++y)
                for (int x = -r; x <= r; ++x)
                    if (x * x + y * y <= r * r) g.pixels.emplace_back(y + r, x + r);
            break;
        }
        case 1: {  // rectangle
            g.box_w = std::max(2, 5 * s / 32);
            g.box_h = std::max(2, 4 * s / 32);
            for (int y = 0; y < g.box_h; ++y)
                for (int x = 0; x < g.box_w; ++x) g.pixels.emplace_back(y, x);
            break;
        }
        case 2: {  // top-triangle, widest row first
            const int rows = std::max(2, s / 8);
            g.box_w = 2 * rows - 1;
            g.box_h = rows;
            for (int y = 0; y < rows; ++y) {
                const int width = 2 * (rows - y) - 1;
                const int x0 = (g.box_w - width) / 2;
                for (int x = x0; x < x0 + width; ++x) g.pixels.emplace_back(y, x);
            }
            break;
        }
        default: {  // horizontal band
            g.box_w = std::max(3, s / 2);
            g.box_h = std::max(1, s / 16);
            for (int y = 0; y < g.box_h; ++y)
                for (int x = 0; x < g.box_w; ++x) g.pixels.emplace_back(y, x);
            break;
        }
    }
    return g;
}

int nominal_glyph_area(int class_index, int image_size) {
    return glyph_for_class(class_index, image_size).area();
}

}  // namespace garment
