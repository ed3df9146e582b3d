#include "garment/caption.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <stdexcept>

namespace garment {

namespace {

const char* kRowWords[] = {"top", "middle", "bottom"};
const char* kColWords[] = {"left", "center", "right"};
const char* kNumberWords[] = {"zero", "one", "two", "three", "four", "five"};

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string w;
    while (in >> w) out.push_back(w);
    return out;
}

std::optional<int> parse_quantity_word(const std::string& w) {
    for (int i = 0; i <= 5; ++i)
        if (w == kNumberWords[i]) return i;
    if (!w.empty() && std::all_of(w.begin(), w.end(), [](unsigned char c) { return std::isdigit(c); })) {
        try {
            return std::stoi(w);
        } catch (const std::exception&) {
            return std::nullopt;
        }
    }
    return std::nullopt;
}

}  // namespace

PositionBucket PositionBucket::of_point(double x, double y) {
    auto cell = [](double t) {
        if (t < 1.0 / 3.0) return 0;
        if (t < 2.0 / 3.0) return 1;
        return 2;
    };
    return {cell(y), cell(x)};
}

std::string PositionBucket::phrase() const {
    return std::string(kRowWords[row]) + " " + kColWords[col];
}

std::optional<PositionBucket> PositionBucket::parse_phrase(const std::string& row_word, const std::string& col_word) {
    PositionBucket b;
    bool ok_row = false, ok_col = false;
    for (int r = 0; r < 3; ++r)
        if (row_word == kRowWords[r]) {
            b.row = r;
            ok_row = true;
        }
    for (int c = 0; c < 3; ++c)
        if (col_word == kColWords[c]) {
            b.col = c;
            ok_col = true;
        }
    if (!ok_row || !ok_col) return std::nullopt;
    return b;
}

std::array<double, 2> ComponentAnnotation::mean_center() const {
    std::array<double, 2> m{0.0, 0.0};
    if (centers.empty()) return m;
    for (const auto& c : centers) {
        m[0] += c[0];
        m[1] += c[1];
    }
    m[0] /= double(centers.size());
    m[1] /= double(centers.size());
    return m;
}

std::string quantity_word(int q) {
    if (q >= 0 && q <= 5) return kNumberWords[q];
    return std::to_string(q);
}

std::string compose_clause(const ComponentVocabulary& vocab, int class_index, int quantity, PositionBucket bucket) {
    if (quantity <= 0) throw std::invalid_argument("compose_clause: quantity must be positive");
    std::string name = vocab.name(class_index);
    if (quantity != 1) name += "s";
    return quantity_word(quantity) + " " + name + " at the " + bucket.phrase();
}

std::string compose_caption(const ComponentVocabulary& vocab, const std::vector<ComponentAnnotation>& components) {
    std::string caption;
    for (const auto& comp : components) {
        if (!comp.present()) continue;
        const auto c = comp.mean_center();
        const auto clause = compose_clause(vocab, comp.class_index, comp.quantity, PositionBucket::of_point(c[0], c[1]));
        if (!caption.empty()) caption += ", ";
        caption += clause;
    }
    if (caption.empty()) return "a plain garment";
    return caption;
}

std::optional<CaptionClause> parse_clause(const ComponentVocabulary& vocab, const std::string& clause) {
    // <quantity> <class[s]> at the <row> <col>
    const auto words = split_words(clause);
    if (words.size() != 6) return std::nullopt;
    if (words[2] != "at" || words[3] != "the") return std::nullopt;

    const auto qty = parse_quantity_word(words[0]);
    if (!qty || *qty <= 0) return std::nullopt;

    std::string cls = words[1];
    int class_index = vocab.index_of(cls);
    if (class_index < 0 && cls.size() > 1 && cls.back() == 's')
        class_index = vocab.index_of(cls.substr(0, cls.size() - 1));
    if (class_index < 0) return std::nullopt;

    const auto bucket = PositionBucket::parse_phrase(words[4], words[5]);
    if (!bucket) return std::nullopt;

    CaptionClause out;
    out.class_index = class_index;
    out.quantity = *qty;
    out.bucket = *bucket;
    out.description = compose_clause(vocab, class_index, *qty, *bucket);
    return out;
}

ParseResult parse_caption(const ComponentVocabulary& vocab, const std::string& caption) {
    ParseResult result;
    if (caption == "a plain garment" || caption.empty()) return result;

    std::size_t start = 0;
    while (start <= caption.size()) {
        std::size_t end = caption.find(", ", start);
        const std::string clause =
            caption.substr(start, end == std::string::npos ? std::string::npos : end - start);
        if (auto parsed = parse_clause(vocab, clause)) {
            result.clauses.push_back(std::move(*parsed));
        } else if (!clause.empty()) {
            ++result.warning_count;
            result.diagnostics.push_back("unrecognized clause: \"" + clause + "\"");
        }
        if (end == std::string::npos) break;
        start = end + 2;
    }
    return result;
}

}  // namespace garment
