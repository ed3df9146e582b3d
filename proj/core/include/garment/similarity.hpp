#pragma once

#include <string>
#include <string_view>

#include "garment/caption.hpp"

namespace garment {

struct SimilarityConfig {
    double alpha = 1.0;      // caption-distance weight in the overall score
    double epsilon = 1e-6;   // denominator guard, keeps identical components finite
    bool skip_mutually_absent = true;

    void validate() const;
};

/// Case-folds and collapses runs of whitespace to single spaces, trimming the
/// ends. Applied to every string before the Jaro comparison.
std::string normalize_text(std::string_view s);

/// Standard Jaro similarity in [0,1] over normalized strings. Both empty
/// compares as 1, exactly one empty as 0.
double jaro_similarity(std::string_view s1, std::string_view s2);

/// 1 - jaro_similarity. Zero iff the normalized strings are equal.
double jaro_distance(std::string_view s1, std::string_view s2);

/// Per-component similarity
///   S(x, y, i) = 1 / (|q_x - q_y| + jaro_distance(t_x, t_y) + epsilon).
double component_similarity(const GarmentRecord& x, const GarmentRecord& y, int class_index,
                            const SimilarityConfig& cfg);

/// Whole-record similarity: the component sum minus alpha times the caption
/// distance. Components absent on both sides are skipped when the config says
/// so (the default), otherwise their guarded 1/epsilon term enters the sum.
double overall_similarity(const GarmentRecord& x, const GarmentRecord& y, const SimilarityConfig& cfg);

}  // namespace garment
