#pragma once

#include <utility>
#include <vector>

#include "garment/caption.hpp"
#include "garment/grid.hpp"
#include "garment/vocabulary.hpp"

namespace garment {

/// One detected component instance.
struct Detection {
    int class_index = 0;
    double center_x = 0.0;  // normalized, pixel centers at +0.5
    double center_y = 0.0;
    int pixel_area = 0;
    int box_x0 = 0, box_y0 = 0, box_x1 = 0, box_y1 = 0;  // half-open pixel box

    bool operator==(const Detection&) const = default;
};

/// Counts instances of one component class by color response thresholding and
/// 4-connected labeling. Blobs below half the nominal glyph area are noise and
/// are not counted. Exact on clean renders; merged overlapping glyphs count
/// once (the generator keeps glyphs disjoint, so that case never arises on
/// corpus images).
std::pair<int, std::vector<Detection>> count_components(const Grid& image, int class_index,
                                                        double threshold = 0.5);

/// Detector-based alignment between a masked image region and one caption
/// clause. Combines shape, count and position agreement:
///   0.5 * shape + 0.3 * count + 0.2 * bucket, floored at 1e-3.
/// Throws std::invalid_argument when the description does not parse.
double mock_alignment_score(const ComponentVocabulary& vocab, const Grid& image, const BinaryMask& mask,
                            const std::string& description);

}  // namespace garment
