#pragma once

#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace garment {

/// Ordered set of component class names. The ordering is canonical: every
/// record stores its component slots in this order and all per-class loops in
/// the pipeline iterate in it.
struct ComponentVocabulary {
    std::vector<std::string> classes;

    ComponentVocabulary() = default;
    explicit ComponentVocabulary(std::vector<std::string> names) : classes(std::move(names)) { validate(); }

    static ComponentVocabulary standard() {
        return ComponentVocabulary({"button", "pocket", "collar", "stripe"});
    }

    int k() const { return int(classes.size()); }

    const std::string& name(int class_index) const { return classes.at(class_index); }

    int index_of(const std::string& name) const {
        for (int i = 0; i < k(); ++i)
            if (classes[i] == name) return i;
        return -1;
    }

    void validate() const {
        if (classes.empty()) throw std::invalid_argument("vocabulary: needs at least one class");
        std::set<std::string> seen;
        for (const auto& c : classes) {
            if (c.empty()) throw std::invalid_argument("vocabulary: empty class name");
            if (!seen.insert(c).second) throw std::invalid_argument("vocabulary: duplicate class name " + c);
        }
    }

    bool operator==(const ComponentVocabulary&) const = default;
};

}  // namespace garment
