// Config text round-trips, key=value parsing, and the dataset file format.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <sstream>
#include <string>
#include <vector>

#include "pudet/pudet.hpp"

using namespace pudet;

TEST_CASE("format_real round-trips doubles bit-exactly", "[io]") {
    const std::vector<double> values = {0.0,  -0.0,    1.0 / 3.0,          0.1,
                                        -2.5, 1e-300,  6.02214076e23,      0.8883,
                                        M_PI, 5.0 / 6.0, 0.14285714285714285};
    for (double v : values) {
        const double back = parse_real(format_real(v));
        REQUIRE(std::memcmp(&back, &v, sizeof v) == 0);
    }
}

TEST_CASE("parse_real and parse_int reject malformed text", "[io]") {
    CHECK(parse_real("0.25") == 0.25);
    CHECK(parse_int("-17") == -17);
    CHECK_THROWS_AS(parse_real("abc"), ConfigError);
    CHECK_THROWS_AS(parse_real("1.5x"), ConfigError);
    CHECK_THROWS_AS(parse_real(""), ConfigError);
    CHECK_THROWS_AS(parse_int("3.5"), ConfigError);
    CHECK_THROWS_AS(parse_int(""), ConfigError);
}

TEST_CASE("content_hash matches frozen FNV-1a values", "[io]") {
    CHECK(content_hash("") == 0xcbf29ce484222325ULL);
    CHECK(content_hash("abc") == 0xe71fa2190541574bULL);
    CHECK(content_hash("abc") != content_hash("abd"));
}

TEST_CASE("KeyValues parses comments, blanks, and padded pairs", "[io]") {
    std::stringstream ss("# a comment\n\n  alpha = 1.5 \nbeta=two words\n");
    const KeyValues kv = KeyValues::parse(ss);
    CHECK(kv.items().size() == 2);
    CHECK(kv.get_real("alpha", 0.0) == 1.5);
    CHECK(kv.get_string("beta", "") == "two words");
    CHECK(kv.get("gamma") == std::nullopt);
    CHECK(kv.get_int("gamma", 9) == 9);
}

TEST_CASE("KeyValues rejects non key=value lines with the line number", "[io]") {
    std::stringstream ss("ok=1\nnot a pair\n");
    CHECK_THROWS_WITH(KeyValues::parse(ss),
                      Catch::Matchers::ContainsSubstring("config line 2"));
}

TEST_CASE("KeyValues set overwrites in place and preserves insertion order", "[io]") {
    KeyValues kv;
    kv.set("b", "1");
    kv.set_int("a", 2);
    kv.set("b", "3");
    kv.set_real_list("c", {0.5, 1.5});
    REQUIRE(kv.items().size() == 3);
    CHECK(kv.items()[0].first == "b");
    CHECK(kv.items()[0].second == "3");
    CHECK(kv.items()[1].first == "a");
    CHECK(kv.items()[2].first == "c");

    std::stringstream out;
    kv.write(out);
    CHECK(out.str() == "b=3\na=2\nc=0.5,1.5\n");

    std::stringstream in(out.str());
    const KeyValues back = KeyValues::parse(in);
    CHECK(back.get_real_list("c", {}) == std::vector<double>{0.5, 1.5});
}

TEST_CASE("KeyValues require and list fallbacks", "[io]") {
    KeyValues kv;
    kv.set("empty", "");
    kv.set("list", " 1 , 2 ");
    CHECK_THROWS_AS(kv.require("missing"), ConfigError);
    CHECK(kv.require("list") == " 1 , 2 ");  // set() stores values verbatim
    CHECK(kv.get_real_list("list", {}) == std::vector<double>{1.0, 2.0});
    CHECK_THROWS_AS(kv.get_real_list("empty", {7.0}), ConfigError);
    CHECK(kv.get_real_list("missing", {7.0}) == std::vector<double>{7.0});
    CHECK(kv.get_u64("missing", 5) == 5);
    kv.set("u", "12345678901234567890");
    CHECK(kv.get_u64("u", 0) == 12345678901234567890ULL);
}

TEST_CASE("dataset text round-trips bit-exactly", "[io]") {
    WorldConfig world;
    world.seed = 77;
    Dataset ds;
    ds.world = world;
    ds.missing.rho = 0.3;
    ds.missing.mode = MissingnessMode::PerAnnotation;
    ds.scenes = generate_scenes(world, 5);
    Rng discard_rng(mix_seed(world.seed, kDiscardStreamSalt));
    discard_labels(ds.scenes, ds.missing, discard_rng);
    REQUIRE(ds.total_objects() > 0);

    std::stringstream first;
    write_dataset(first, ds);
    std::stringstream parse_in(first.str());
    const Dataset back = read_dataset(parse_in);

    CHECK(back.missing.rho == 0.3);
    CHECK(back.missing.mode == MissingnessMode::PerAnnotation);
    CHECK(back.world.seed == 77);
    CHECK(back.world.feature_dim == world.feature_dim);
    REQUIRE(back.scenes.size() == ds.scenes.size());
    CHECK(back.total_objects() == ds.total_objects());
    CHECK(back.labeled_objects() == ds.labeled_objects());
    for (std::size_t i = 0; i < ds.scenes.size(); ++i) {
        REQUIRE(back.scenes[i].id == ds.scenes[i].id);
        REQUIRE(back.scenes[i].objects.size() == ds.scenes[i].objects.size());
        for (std::size_t j = 0; j < ds.scenes[i].objects.size(); ++j) {
            CHECK(back.scenes[i].objects[j].box == ds.scenes[i].objects[j].box);
            CHECK(back.scenes[i].objects[j].labeled == ds.scenes[i].objects[j].labeled);
        }
    }

    std::stringstream second;
    write_dataset(second, back);
    CHECK(second.str() == first.str());
}

TEST_CASE("read_dataset rejects broken files", "[io]") {
    SECTION("missing magic") {
        std::stringstream ss("# world.seed=1\n0 100 100 0\n");
        CHECK_THROWS_AS(read_dataset(ss), ConfigError);
    }
    SECTION("malformed scene line") {
        std::stringstream ss("# pudet-dataset v1\nnot numbers\n");
        CHECK_THROWS_AS(read_dataset(ss), ConfigError);
    }
    SECTION("truncated object list") {
        std::stringstream ss("# pudet-dataset v1\n0 100 100 2 1 1 5 5 1\n");
        CHECK_THROWS_AS(read_dataset(ss), ConfigError);
    }
    SECTION("degenerate box") {
        std::stringstream ss("# pudet-dataset v1\n0 100 100 1 5 5 5 9 1\n");
        CHECK_THROWS_AS(read_dataset(ss), InvalidInputError);
    }
}

TEST_CASE("dataset file helpers error on unusable paths", "[io]") {
    CHECK_THROWS_AS(read_dataset_file("/nonexistent/nope.txt"), ConfigError);
    CHECK_THROWS_AS(write_dataset_file("/nonexistent/nope.txt", Dataset{}), ConfigError);
    CHECK_THROWS_AS(KeyValues::parse_file("/nonexistent/nope.txt"), ConfigError);
}
