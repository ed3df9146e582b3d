#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "garment/grid.hpp"
#include "garment/vocabulary.hpp"

namespace garment {

/// One of nine coarse image regions, {top,middle,bottom} x {left,center,right},
/// indexed row-major: bucket = row * 3 + col.
struct PositionBucket {
    int row = 0;  // 0 top, 1 middle, 2 bottom
    int col = 0;  // 0 left, 1 center, 2 right

    int index() const { return row * 3 + col; }
    static PositionBucket from_index(int idx) { return {idx / 3, idx % 3}; }

    /// Bucket of a normalized (x, y) point; cells are [0,1/3), [1/3,2/3), [2/3,1].
    static PositionBucket of_point(double x, double y);

    std::string phrase() const;  // e.g. "top center"
    static std::optional<PositionBucket> parse_phrase(const std::string& row_word, const std::string& col_word);

    bool operator==(const PositionBucket&) const = default;
};

struct ComponentAnnotation {
    int class_index = 0;
    std::string description;  // caption clause, empty when absent
    int quantity = 0;
    std::vector<std::array<double, 2>> centers;  // normalized (x, y), one per glyph
    BinaryMask mask;

    bool present() const { return quantity > 0; }
    std::array<double, 2> mean_center() const;
    bool operator==(const ComponentAnnotation&) const = default;
};

struct GarmentRecord {
    std::string id;
    std::string caption;
    std::vector<ComponentAnnotation> components;  // one slot per vocabulary class
    Grid image;                                   // C x H x W in [0, 1]
    double aesthetic_score = 0.0;
    double preference_score = 0.0;

    const ComponentAnnotation& component(int class_index) const { return components.at(class_index); }
    bool operator==(const GarmentRecord&) const = default;
};

/// "two" for 2 up to "five"; numerals beyond.
std::string quantity_word(int q);

/// One parsed caption clause.
struct CaptionClause {
    int class_index = 0;
    std::string description;  // the clause text itself
    int quantity = 0;
    PositionBucket bucket;

    bool operator==(const CaptionClause&) const = default;
};

struct ParseResult {
    std::vector<CaptionClause> clauses;
    int warning_count = 0;
    std::vector<std::string> diagnostics;
};

/// Deterministic template caption: one clause per present component in
/// vocabulary order ("two buttons at the top center, ..."), or the fixed
/// phrase "a plain garment" when nothing is present.
std::string compose_caption(const ComponentVocabulary& vocab, const std::vector<ComponentAnnotation>& components);

/// Single clause for one present component. quantity > 0 required.
std::string compose_clause(const ComponentVocabulary& vocab, int class_index, int quantity, PositionBucket bucket);

/// Inverse of compose_caption. Unknown or malformed clauses are skipped and
/// recorded as diagnostics, never fatal.
ParseResult parse_caption(const ComponentVocabulary& vocab, const std::string& caption);

/// Parses a single clause; nullopt when it does not follow the grammar.
std::optional<CaptionClause> parse_clause(const ComponentVocabulary& vocab, const std::string& clause);

}  // namespace garment
