#include "garment/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "garment/glyph.hpp"

namespace garment {

namespace {

/// Color response: 1 at the exact class color, linearly falling to 0 at an
/// RGB distance of 0.6. Palette colors are mutually > 0.6 apart, so at the
/// default 0.5 threshold each pixel responds to at most one class.
double color_response(const Grid& image, int y, int x, const std::array<double, 3>& color) {
    double d2 = 0.0;
    for (int c = 0; c < 3; ++c) {
        const double diff = image.at(c, y, x) - color[c];
        d2 += diff * diff;
    }
    return std::max(0.0, 1.0 - std::sqrt(d2) / 0.6);
}

}  // namespace

std::pair<int, std::vector<Detection>> count_components(const Grid& image, int class_index, double threshold) {
    const int h = image.height(), w = image.width();
    const auto color = class_color(class_index);

    std::vector<std::uint8_t> hit(std::size_t(h) * w, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (color_response(image, y, x, color) >= threshold) hit[std::size_t(y) * w + x] = 1;

    const int min_area = std::max(1, nominal_glyph_area(class_index, std::min(h, w)) / 2);
    std::vector<Detection> detections;
    std::vector<int> stack;
    for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
            if (!hit[std::size_t(y0) * w + x0]) continue;
            // Flood-fill one 4-connected blob, consuming its pixels.
            stack.assign(1, y0 * w + x0);
            hit[std::size_t(y0) * w + x0] = 0;
            double sx = 0.0, sy = 0.0;
            int area = 0;
            int bx0 = x0, by0 = y0, bx1 = x0 + 1, by1 = y0 + 1;
            while (!stack.empty()) {
                const int p = stack.back();
                stack.pop_back();
                const int y = p / w, x = p % w;
                ++area;
                sx += x + 0.5;
                sy += y + 0.5;
                bx0 = std::min(bx0, x);
                by0 = std::min(by0, y);
                bx1 = std::max(bx1, x + 1);
                by1 = std::max(by1, y + 1);
                const int ny[4] = {y - 1, y + 1, y, y};
                const int nx[4] = {x, x, x - 1, x + 1};
                for (int k = 0; k < 4; ++k) {
                    if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
                    auto& cell = hit[std::size_t(ny[k]) * w + nx[k]];
                    if (cell) {
                        cell = 0;
                        stack.push_back(ny[k] * w + nx[k]);
                    }
                }
            }
            if (area < min_area) continue;
            Detection det;
            det.class_index = class_index;
            det.center_x = sx / area / w;
            det.center_y = sy / area / h;
            det.pixel_area = area;
            det.box_x0 = bx0;
            det.box_y0 = by0;
            det.box_x1 = bx1;
            det.box_y1 = by1;
            detections.push_back(det);
        }
    }
    return {int(detections.size()), std::move(detections)};
}

double mock_alignment_score(const ComponentVocabulary& vocab, const Grid& image, const BinaryMask& mask,
                            const std::string& description) {
    auto clause = parse_clause(vocab, description);
    if (!clause) throw std::invalid_argument("mock_alignment_score: unparseable description: " + description);
    if (mask.h != image.height() || mask.w != image.width())
        throw std::invalid_argument("mock_alignment_score: mask shape mismatch");

    // Detector only sees the masked region; everything else becomes background.
    Grid masked(3, image.height(), image.width());
    const auto bg = background_color();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < image.height(); ++y)
            for (int x = 0; x < image.width(); ++x)
                masked.at(c, y, x) = mask.at(y, x) ? image.at(c, y, x) : bg[c];

    auto [n_hat, detections] = count_components(masked, clause->class_index);

    const double nominal = double(nominal_glyph_area(clause->class_index, std::min(image.height(), image.width())));
    double shape_agreement = 0.0;
    if (!detections.empty()) {
        for (const auto& det : detections) {
            const double lo = std::min(double(det.pixel_area), nominal);
            const double hi = std::max(double(det.pixel_area), nominal);
            shape_agreement += lo / hi;
        }
        shape_agreement /= double(detections.size());
    }

    const int q = clause->quantity;
    const double count_agreement = std::max(0.0, 1.0 - std::abs(n_hat - q) / double(std::max(q, 1)));

    double bucket_agreement = 0.0;
    if (!detections.empty()) {
        double mx = 0.0, my = 0.0;
        for (const auto& det : detections) {
            mx += det.center_x;
            my += det.center_y;
        }
        mx /= double(detections.size());
        my /= double(detections.size());
        bucket_agreement = PositionBucket::of_point(mx, my) == clause->bucket ? 1.0 : 0.0;
    }

    const double score = 0.5 * shape_agreement + 0.3 * count_agreement + 0.2 * bucket_agreement;
    return std::max(score, 1e-3);
}

}  // namespace garment
