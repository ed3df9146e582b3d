#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace garment {

struct GridShape {
    int c = 0;
    int h = 0;
    int w = 0;

    bool operator==(const GridShape&) const = default;
    std::size_t size() const { return std::size_t(c) * h * w; }
};

/// Dense row-major (channel, row, column) tensor of doubles. The one numeric
/// container shared by images, attention maps, heatmaps and model activations.
class Grid {
public:
    Grid() = default;
    Grid(int c, int h, int w, double fill = 0.0)
        : shape_{c, h, w}, data_(std::size_t(c) * h * w, fill) {
        if (c < 0 || h < 0 || w < 0) throw std::invalid_argument("Grid: negative dimension");
    }
    explicit Grid(GridShape s, double fill = 0.0) : Grid(s.c, s.h, s.w, fill) {}

    const GridShape& shape() const { return shape_; }
    int channels() const { return shape_.c; }
    int height() const { return shape_.h; }
    int width() const { return shape_.w; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double& at(int c, int y, int x) { return data_[(std::size_t(c) * shape_.h + y) * shape_.w + x]; }
    double at(int c, int y, int x) const { return data_[(std::size_t(c) * shape_.h + y) * shape_.w + x]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    double* channel(int c) { return data_.data() + std::size_t(c) * shape_.h * shape_.w; }
    const double* channel(int c) const { return data_.data() + std::size_t(c) * shape_.h * shape_.w; }

    void fill(double v) { data_.assign(data_.size(), v); }

    bool operator==(const Grid&) const = default;

private:
    GridShape shape_;
    std::vector<double> data_;
};

/// Binary H×W raster; 0/1 values stored as bytes.
struct BinaryMask {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> v;

    BinaryMask() = default;
    BinaryMask(int h_, int w_) : h(h_), w(w_), v(std::size_t(h_) * w_, 0) {}

    std::uint8_t& at(int y, int x) { return v[std::size_t(y) * w + x]; }
    std::uint8_t at(int y, int x) const { return v[std::size_t(y) * w + x]; }
    std::size_t count() const {
        std::size_t n = 0;
        for (auto b : v) n += b;
        return n;
    }
    bool any() const {
        for (auto b : v)
            if (b) return true;
        return false;
    }
    bool operator==(const BinaryMask&) const = default;
};

}  // namespace garment
