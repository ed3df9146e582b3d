#include "garment/similarity.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace garment {

void SimilarityConfig::validate() const {
    if (alpha < 0) throw std::invalid_argument("SimilarityConfig: alpha must be >= 0");
    if (epsilon <= 0) throw std::invalid_argument("SimilarityConfig: epsilon must be > 0");
}

std::string normalize_text(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (char ch : s) {
        if (std::isspace(static_cast<unsigned char>(ch))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(char(std::tolower(static_cast<unsigned char>(ch))));
    }
    return out;
}

double jaro_similarity(std::string_view s1, std::string_view s2) {
    const std::string a = normalize_text(s1);
    const std::string b = normalize_text(s2);
    if (a.empty() && b.empty()) return 1.0;
    if (a.empty() || b.empty()) return 0.0;

    const int la = int(a.size()), lb = int(b.size());
    const int window = std::max(0, std::max(la, lb) / 2 - 1);

    std::vector<char> matched_a(la, 0), matched_b(lb, 0);
    int m = 0;
    for (int i = 0; i < la; ++i) {
        const int lo = std::max(0, i - window);
        const int hi = std::min(lb - 1, i + window);
        for (int j = lo; j <= hi; ++j) {
            if (!matched_b[j] && a[i] == b[j]) {
                matched_a[i] = matched_b[j] = 1;
                ++m;
                break;
            }
        }
    }
    if (m == 0) return 0.0;

    // Half-transpositions: matched characters out of order between the strings.
    int half_transpositions = 0;
    int j = 0;
    for (int i = 0; i < la; ++i) {
        if (!matched_a[i]) continue;
        while (!matched_b[j]) ++j;
        if (a[i] != b[j]) ++half_transpositions;
        ++j;
    }
    const double t = half_transpositions / 2.0;
    return (double(m) / la + double(m) / lb + (m - t) / m) / 3.0;
}

double jaro_distance(std::string_view s1, std::string_view s2) { return 1.0 - jaro_similarity(s1, s2); }

double component_similarity(const GarmentRecord& x, const GarmentRecord& y, int class_index,
                            const SimilarityConfig& cfg) {
    cfg.validate();
    const auto& cx = x.components.at(class_index);
    const auto& cy = y.components.at(class_index);
    const double qdiff = std::abs(cx.quantity - cy.quantity);
    return 1.0 / (qdiff + jaro_distance(cx.description, cy.description) + cfg.epsilon);
}

double overall_similarity(const GarmentRecord& x, const GarmentRecord& y, const SimilarityConfig& cfg) {
    cfg.validate();
    if (x.components.size() != y.components.size())
        throw std::invalid_argument("overall_similarity: records have different component arity");
    double sum = 0.0;
    for (int i = 0; i < int(x.components.size()); ++i) {
        if (cfg.skip_mutually_absent && !x.components[i].present() && !y.components[i].present()) continue;
        sum += component_similarity(x, y, i, cfg);
    }
    return sum - cfg.alpha * jaro_distance(x.caption, y.caption);
}

}  // namespace garment
