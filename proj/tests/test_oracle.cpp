#include <doctest.h>

#include <cmath>

#include "garment/dataset.hpp"
#include "garment/glyph.hpp"
#include "garment/oracle.hpp"

using namespace garment;

namespace {

Grid background_image(int size) {
    Grid img(3, size, size);
    const auto bg = background_color();
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < size * size; ++i) img.channel(c)[i] = bg[c];
    return img;
}

void stamp(Grid& img, int class_index, int y0, int x0) {
    const auto g = glyph_for_class(class_index, img.height());
    for (const auto& [dy, dx] : g.pixels)
        for (int c = 0; c < 3; ++c) img.at(c, y0 + dy, x0 + dx) = g.color[c];
}

}  // namespace

TEST_CASE("plain background contains no detections") {
    const auto img = background_image(32);
    for (int cls = 0; cls < 4; ++cls) {
        const auto [count, detections] = count_components(img, cls);
        CHECK(count == 0);
        CHECK(detections.empty());
    }
}

TEST_CASE("separated glyphs are counted exactly with correct centroids") {
    auto img = background_image(32);
    stamp(img, 0, 2, 2);
    stamp(img, 0, 20, 18);

    const auto [count, detections] = count_components(img, 0);
    REQUIRE(count == 2);
    REQUIRE(detections.size() == 2);

    const auto g = glyph_for_class(0, 32);
    const auto c = g.centroid();
    // Detections are discovered in scan order; the first stamp is the first hit.
    CHECK(detections[0].center_x == doctest::Approx((2 + c[1]) / 32.0).epsilon(1e-12));
    CHECK(detections[0].center_y == doctest::Approx((2 + c[0]) / 32.0).epsilon(1e-12));
    CHECK(detections[0].pixel_area == g.area());
    CHECK(detections[1].center_x == doctest::Approx((18 + c[1]) / 32.0).epsilon(1e-12));
    CHECK(detections[1].center_y == doctest::Approx((20 + c[0]) / 32.0).epsilon(1e-12));

    // The other classes see nothing: the palette keeps colors apart.
    for (int cls = 1; cls < 4; ++cls) CHECK(count_components(img, cls).first == 0);
}

TEST_CASE("tiny speckles fall below the area floor") {
    auto img = background_image(32);
    const auto color = class_color(0);
    for (int c = 0; c < 3; ++c) img.at(c, 10, 10) = color[c];  // one lone pixel
    CHECK(count_components(img, 0).first == 0);
}

TEST_CASE("touching glyphs of one class merge into a single detection") {
    auto img = background_image(32);
    stamp(img, 1, 4, 4);
    const auto g = glyph_for_class(1, 32);
    stamp(img, 1, 4, 4 + g.box_w);  // flush against the first box

    const auto [count, detections] = count_components(img, 1);
    CHECK(count == 1);
    REQUIRE(detections.size() == 1);
    CHECK(detections[0].pixel_area == 2 * g.area());
}

TEST_CASE("detection boxes bound the stamped pixels") {
    auto img = background_image(32);
    stamp(img, 3, 12, 3);
    const auto g = glyph_for_class(3, 32);
    const auto [count, detections] = count_components(img, 3);
    REQUIRE(count == 1);
    CHECK(detections[0].box_y0 == 12);
    CHECK(detections[0].box_x0 == 3);
    CHECK(detections[0].box_y1 == 12 + g.box_h);
    CHECK(detections[0].box_x1 == 3 + g.box_w);
}

TEST_CASE("alignment score is high when the region matches its clause") {
    const auto vocab = ComponentVocabulary::standard();
    auto img = background_image(32);
    const auto g = glyph_for_class(0, 32);
    // Two buttons inside the top-left cell of the 3x3 position grid.
    stamp(img, 0, 1, 1);
    stamp(img, 0, 1, 1 + g.box_w + 2);

    BinaryMask mask(32, 32);
    for (const auto& [dy, dx] : g.pixels) {
        mask.at(1 + dy, 1 + dx) = 1;
        mask.at(1 + dy, 1 + dx + g.box_w + 2) = 1;
    }

    const double good = mock_alignment_score(vocab, img, mask, "two buttons at the top left");
    CHECK(good == doctest::Approx(1.0).epsilon(1e-9));

    // Wrong count keeps shape and bucket credit but loses count credit.
    const double wrong_count = mock_alignment_score(vocab, img, mask, "four buttons at the top left");
    CHECK(wrong_count < good);
    // Wrong bucket drops the position credit.
    const double wrong_bucket = mock_alignment_score(vocab, img, mask, "two buttons at the bottom right");
    CHECK(wrong_bucket == doctest::Approx(good - 0.2).epsilon(1e-9));
}

TEST_CASE("empty region scores the floor value") {
    const auto vocab = ComponentVocabulary::standard();
    const auto img = background_image(32);
    BinaryMask mask(32, 32);  // nothing selected
    const double s = mock_alignment_score(vocab, img, mask, "one button at the top left");
    CHECK(s == doctest::Approx(1e-3));
}

TEST_CASE("alignment score rejects descriptions that do not parse") {
    const auto vocab = ComponentVocabulary::standard();
    const auto img = background_image(32);
    BinaryMask mask(32, 32);
    CHECK_THROWS_AS(mock_alignment_score(vocab, img, mask, "gibberish"), std::invalid_argument);
}

TEST_CASE("oracle recovers generator ground truth across a corpus") {
    const auto ds = generate_dataset(DatasetSpec::standard(40, 32, 424242));
    int checked = 0;
    for (const auto& rec : ds.records) {
        for (const auto& comp : rec.components) {
            const auto [count, detections] = count_components(rec.image, comp.class_index);
            CHECK(count == comp.quantity);
            ++checked;
        }
    }
    CHECK(checked == 160);
}

TEST_CASE("standard palette colors cannot alias under the detector") {
    // A pixel responds to a class when it sits within 0.3 of that class color
    // (response 1 - d/0.6 crossing the 0.5 threshold), so the four standard
    // colors must be pairwise farther apart than that.
    for (int i = 0; i < 8; ++i)
        for (double v : class_color(i)) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    for (int i = 0; i < 4; ++i) {
        const auto c = class_color(i);
        for (int j = i + 1; j < 4; ++j) {
            const auto d = class_color(j);
            const double dist = std::sqrt((c[0] - d[0]) * (c[0] - d[0]) + (c[1] - d[1]) * (c[1] - d[1]) +
                                          (c[2] - d[2]) * (c[2] - d[2]));
            CHECK(dist > 0.3);
        }
        const auto bg = background_color();
        const double dbg = std::sqrt((c[0] - bg[0]) * (c[0] - bg[0]) + (c[1] - bg[1]) * (c[1] - bg[1]) +
                                     (c[2] - bg[2]) * (c[2] - bg[2]));
        CHECK(dbg > 0.3);  // background never reads as a component
    }
}
