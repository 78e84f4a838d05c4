// Box geometry: the frozen IoU example, algebraic properties, and an
// exhaustive unit-cell rasterization oracle on integer boxes.
#include <catch2/catch_amalgamated.hpp>

#include <vector>

#include "pudet/pudet.hpp"

using namespace pudet;
using Catch::Matchers::WithinAbs;

TEST_CASE("iou reproduces the frozen one-seventh example", "[geometry]") {
    const Box a{0, 0, 2, 2}, b{1, 1, 3, 3};
    CHECK_THAT(iou(a, b), WithinAbs(1.0 / 7.0, 1e-15));
    CHECK(iou(a, b) == iou(b, a));
}

TEST_CASE("iou endpoints: identical, contained, touching, disjoint", "[geometry]") {
    const Box a{0, 0, 4, 4};
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(a, Box{0, 0, 1, 1}) == 0.0625);  // 1 / 16
    CHECK(iou(a, Box{4, 0, 8, 4}) == 0.0);     // shared edge, zero-width overlap
    CHECK(iou(a, Box{10, 10, 12, 12}) == 0.0);
}

TEST_CASE("iou matches a unit-cell counting oracle on integer boxes", "[geometry]") {
    Rng rng(23);
    for (int trial = 0; trial < 300; ++trial) {
        auto random_box = [&rng]() {
            const int x0 = rng.uniform_int(0, 15), y0 = rng.uniform_int(0, 15);
            return Box{static_cast<double>(x0), static_cast<double>(y0),
                       static_cast<double>(x0 + rng.uniform_int(1, 5)),
                       static_cast<double>(y0 + rng.uniform_int(1, 5))};
        };
        const Box a = random_box(), b = random_box();
        long inter = 0, only_a = 0, only_b = 0;
        for (int x = 0; x < 21; ++x)
            for (int y = 0; y < 21; ++y) {
                const bool in_a = x >= a.x_min && x < a.x_max && y >= a.y_min && y < a.y_max;
                const bool in_b = x >= b.x_min && x < b.x_max && y >= b.y_min && y < b.y_max;
                inter += in_a && in_b;
                only_a += in_a && !in_b;
                only_b += !in_a && in_b;
            }
        const double expected =
            inter == 0 ? 0.0
                       : static_cast<double>(inter) /
                             static_cast<double>(inter + only_a + only_b);
        REQUIRE(iou(a, b) == expected);
    }
}

TEST_CASE("degenerate boxes are rejected", "[geometry]") {
    CHECK_THROWS_AS(check_box(Box{1, 0, 1, 2}), InvalidInputError);
    CHECK_THROWS_AS(check_box(Box{0, 3, 2, 3}), InvalidInputError);
    CHECK_THROWS_AS(iou(Box{0, 0, 1, 1}, Box{2, 2, 2, 3}), InvalidInputError);
    CHECK(Box{0, 0, 1, 1}.valid());
    CHECK_FALSE(Box{1, 0, 0, 1}.valid());
}

TEST_CASE("box_less is a strict lexicographic order", "[geometry]") {
    const Box a{0, 0, 1, 1}, b{0, 0, 1, 2}, c{0, 1, 1, 1}, d{1, 0, 2, 1};
    CHECK(box_less(a, b));
    CHECK(box_less(a, c));
    CHECK(box_less(c, d));
    CHECK_FALSE(box_less(a, a));
    CHECK_FALSE(box_less(b, a));
    CHECK(a == a);
    CHECK_FALSE(a == b);
    CHECK(a.width() == 1.0);
    CHECK(b.height() == 2.0);
    CHECK(b.area() == 2.0);
}
