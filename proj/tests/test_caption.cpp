#include <doctest.h>

#include <string>
#include <vector>

#include "garment/caption.hpp"
#include "garment/rng.hpp"

using namespace garment;

TEST_CASE("position buckets map points to the nine cells") {
    CHECK(PositionBucket::of_point(0.0, 0.0) == PositionBucket{0, 0});
    CHECK(PositionBucket::of_point(0.5, 0.5) == PositionBucket{1, 1});
    CHECK(PositionBucket::of_point(0.99, 0.99) == PositionBucket{2, 2});
    CHECK(PositionBucket::of_point(1.0, 1.0) == PositionBucket{2, 2});
    // Boundaries belong to the upper cell.
    CHECK(PositionBucket::of_point(1.0 / 3.0, 0.0) == PositionBucket{0, 1});
    CHECK(PositionBucket::of_point(0.0, 2.0 / 3.0) == PositionBucket{2, 0});
}

TEST_CASE("bucket phrases round-trip through the parser") {
    for (int idx = 0; idx < 9; ++idx) {
        const auto bucket = PositionBucket::from_index(idx);
        CHECK(bucket.index() == idx);
        const auto phrase = bucket.phrase();
        const auto space = phrase.find(' ');
        REQUIRE(space != std::string::npos);
        const auto parsed = PositionBucket::parse_phrase(phrase.substr(0, space), phrase.substr(space + 1));
        REQUIRE(parsed.has_value());
        CHECK(*parsed == bucket);
    }
    CHECK_FALSE(PositionBucket::parse_phrase("upper", "left").has_value());
    CHECK_FALSE(PositionBucket::parse_phrase("top", "side").has_value());
}

TEST_CASE("quantity words") {
    CHECK(quantity_word(1) == "one");
    CHECK(quantity_word(2) == "two");
    CHECK(quantity_word(5) == "five");
    CHECK(quantity_word(6) == "6");
    CHECK(quantity_word(13) == "13");
}

TEST_CASE("single clause composes with number agreement") {
    const auto vocab = ComponentVocabulary::standard();
    CHECK(compose_clause(vocab, 0, 1, {0, 1}) == "one button at the top center");
    CHECK(compose_clause(vocab, 0, 3, {1, 0}) == "three buttons at the middle left");
    CHECK(compose_clause(vocab, 3, 2, {2, 2}) == "two stripes at the bottom right");
    CHECK_THROWS_AS(compose_clause(vocab, 0, 0, {0, 0}), std::invalid_argument);
}

TEST_CASE("empty annotation set composes the fixed fallback caption") {
    const auto vocab = ComponentVocabulary::standard();
    std::vector<ComponentAnnotation> components(vocab.k());
    for (int i = 0; i < vocab.k(); ++i) components[i].class_index = i;
    CHECK(compose_caption(vocab, components) == "a plain garment");

    const auto parsed = parse_caption(vocab, "a plain garment");
    CHECK(parsed.clauses.empty());
    CHECK(parsed.warning_count == 0);
}

TEST_CASE("parse_clause recovers class, quantity, and bucket") {
    const auto vocab = ComponentVocabulary::standard();
    const auto clause = parse_clause(vocab, "three buttons at the middle left");
    REQUIRE(clause.has_value());
    CHECK(clause->class_index == 0);
    CHECK(clause->quantity == 3);
    CHECK(clause->bucket == PositionBucket{1, 0});

    CHECK_FALSE(parse_clause(vocab, "three widgets at the middle left").has_value());
    CHECK_FALSE(parse_clause(vocab, "many buttons at the middle left").has_value());
    CHECK_FALSE(parse_clause(vocab, "three buttons near the middle left").has_value());
    CHECK_FALSE(parse_clause(vocab, "").has_value());
}

TEST_CASE("malformed clauses are skipped with diagnostics, not errors") {
    const auto vocab = ComponentVocabulary::standard();
    const auto r = parse_caption(vocab, "two buttons at the top left, utter nonsense, one collar at the top center");
    CHECK(r.clauses.size() == 2);
    CHECK(r.warning_count == 1);
    REQUIRE(r.diagnostics.size() == 1);
    CHECK(r.diagnostics[0].find("nonsense") != std::string::npos);
}

TEST_CASE("compose then parse round-trips over random annotation sets") {
    const auto vocab = ComponentVocabulary::standard();
    Rng rng(314159);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<ComponentAnnotation> components(vocab.k());
        std::vector<CaptionClause> expected;
        for (int i = 0; i < vocab.k(); ++i) {
            auto& c = components[i];
            c.class_index = i;
            c.quantity = rng.range_int(0, 6);
            if (c.quantity == 0) continue;
            // A single synthetic center pins the bucket the clause names.
            const double x = rng.uniform();
            const double y = rng.uniform();
            c.centers.assign(std::size_t(c.quantity), {x, y});
            const auto bucket = PositionBucket::of_point(x, y);
            c.description = compose_clause(vocab, i, c.quantity, bucket);
            expected.push_back({i, c.description, c.quantity, bucket});
        }

        const auto caption = compose_caption(vocab, components);
        const auto parsed = parse_caption(vocab, caption);
        CHECK(parsed.warning_count == 0);
        REQUIRE(parsed.clauses.size() == expected.size());
        for (std::size_t k = 0; k < expected.size(); ++k) CHECK(parsed.clauses[k] == expected[k]);
    }
}

TEST_CASE("mean_center averages glyph centers") {
    ComponentAnnotation c;
    c.quantity = 2;
    c.centers = {{0.2, 0.4}, {0.6, 0.8}};
    const auto m = c.mean_center();
    CHECK(m[0] == doctest::Approx(0.4));
    CHECK(m[1] == doctest::Approx(0.6));
}

TEST_CASE("vocabulary rejects duplicates and empties") {
    CHECK_THROWS_AS(ComponentVocabulary({"a", "a"}), std::invalid_argument);
    CHECK_THROWS_AS(ComponentVocabulary(std::vector<std::string>{}), std::invalid_argument);
    CHECK_THROWS_AS(ComponentVocabulary({"a", ""}), std::invalid_argument);
    const auto vocab = ComponentVocabulary::standard();
    CHECK(vocab.k() == 4);
    CHECK(vocab.index_of("collar") == 2);
    CHECK(vocab.index_of("widget") == -1);
}
