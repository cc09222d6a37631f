#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>

#include "cg/common.hpp"
#include "cg/text.hpp"

using namespace cg;

TEST_CASE("tokenization lowercases and splits on punctuation") {
    auto t = tokenize("The SAR ship, at-dock!");
    REQUIRE(t.size() == 5);
    CHECK(t[0] == "the");
    CHECK(t[1] == "sar");
    CHECK(t[2] == "ship");
    CHECK(t[3] == "at");
    CHECK(t[4] == "dock");
}

TEST_CASE("text embeddings are deterministic unit vectors") {
    auto a = encode_text("the small optical ship in the upper left of the image");
    auto b = encode_text("the small optical ship in the upper left of the image");
    REQUIRE(a.size() == (size_t)kTextDim);
    CHECK(a == b);
    double sq = 0;
    for (double v : a) sq += v * v;
    CHECK(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
}

TEST_CASE("distinct texts embed distinctly") {
    auto a = encode_text("ship");
    auto b = encode_text("plane");
    double diff = 0;
    for (int i = 0; i < kTextDim; ++i) diff += std::abs(a[i] - b[i]);
    CHECK(diff > 1e-6);
}

TEST_CASE("degenerate text is rejected") {
    CHECK_THROWS_AS(encode_text(""), ContractViolation);
    CHECK_THROWS_AS(encode_text("!!! --- ..."), ContractViolation);
}

TEST_CASE("direction cells follow the thirds rule") {
    CHECK(direction_from_center(0.1, 0.1) == "upper left");
    CHECK(direction_from_center(0.5, 0.5) == "center");
    CHECK(direction_from_center(0.9, 0.5) == "right");
    CHECK(direction_from_center(0.5, 0.9) == "bottom");
    CHECK(direction_from_center(1.0, 1.0) == "lower right");
    // boundary values belong to the lower-index cell
    CHECK(direction_from_center(1.0 / 3.0, 0.5) == "left");
    CHECK(direction_from_center(2.0 / 3.0, 0.0) == "top");
    CHECK_THROWS_AS(direction_from_center(-0.1, 0.5), ContractViolation);
    CHECK_THROWS_AS(direction_from_center(0.5, 1.2), ContractViolation);
}

TEST_CASE("cell mirrors are involutions matching geometry") {
    for (int c = 0; c < 9; ++c) {
        CHECK(mirror_cell_h(mirror_cell_h(c)) == c);
        CHECK(mirror_cell_v(mirror_cell_v(c)) == c);
    }
    CHECK(direction_grid()[mirror_cell_h(0)] == "upper right");
    CHECK(direction_grid()[mirror_cell_v(1)] == "bottom");
    CHECK(mirror_cell_h(4) == 4);
}

TEST_CASE("swap table is an involution with center excluded") {
    const auto& lex = DirectionLexicon::builtin();
    int mirrored = 0;
    for (const auto& p : direction_grid()) {
        auto m = lex.mirror(p);
        if (p == "center") {
            CHECK_FALSE(m.has_value());
            continue;
        }
        REQUIRE(m.has_value());
        CHECK(*m != p);
        CHECK(*lex.mirror(*m) == p);
        ++mirrored;
    }
    CHECK(mirrored == 8);
}

TEST_CASE("orientation negatives swap exactly one phrase") {
    Rng rng(1);
    auto a = make_orientation_negative(
        "the small ship in the upper left of the optical image", rng);
    REQUIRE(a.has_value());
    CHECK(*a == "the small ship in the upper right of the optical image");

    auto b = make_orientation_negative("a large ship near the dock", rng);
    CHECK_FALSE(b.has_value());

    auto c = make_orientation_negative("lower right", rng);
    REQUIRE(c.has_value());
    CHECK(*c == "lower left");

    auto d = make_orientation_negative("the tank in the center of the image", rng);
    CHECK_FALSE(d.has_value());

    auto e = make_orientation_negative("the tank in the top of the image", rng);
    REQUIRE(e.has_value());
    CHECK(*e == "the tank in the bottom of the image");
}

TEST_CASE("modality negatives swap the domain word both ways") {
    auto a = make_modality_negative("the SAR ship at the bottom");
    REQUIRE(a.has_value());
    CHECK(*a == "the optical ship at the bottom");
    CHECK(*make_modality_negative(*a) == "the SAR ship at the bottom");

    CHECK_FALSE(make_modality_negative("two vehicles on a road").has_value());
    CHECK_FALSE(make_modality_negative("optically dense scene").has_value());
}

TEST_CASE("flip rewrites keep captions geometrically true") {
    std::string cap = "the plane in the upper left of the image";
    CHECK(rewrite_direction_for_flip(cap, true, false) ==
          "the plane in the upper right of the image");
    CHECK(rewrite_direction_for_flip(cap, false, true) ==
          "the plane in the lower left of the image");
    CHECK(rewrite_direction_for_flip(cap, true, true) ==
          "the plane in the lower right of the image");
    CHECK(rewrite_direction_for_flip("the ship in the top of the image", true, false) ==
          "the ship in the top of the image");
    CHECK(rewrite_direction_for_flip("no direction here", true, true) == "no direction here");
}

namespace {

std::vector<std::string> make_pool(int n) {
    std::vector<std::string> pool;
    for (int i = 0; i < n; ++i) pool.push_back("pool caption number " + std::to_string(i));
    return pool;
}

}  // namespace

TEST_CASE("batch text assembly fills to capacity with the positives marked") {
    std::vector<std::string> pos = {"the small optical ship in the upper left of the image",
                                    "the large SAR tower in the lower right of the image"};
    auto pool = make_pool(30);
    NegativeSamplingConfig cfg;
    Rng rng(7);
    auto batch = sample_batch_texts(pos, pool, cfg, rng);
    CHECK(batch.texts.size() == 20);
    REQUIRE(batch.positive_indices.size() == 2);
    CHECK(batch.texts[batch.positive_indices[0]] == pos[0]);
    CHECK(batch.texts[batch.positive_indices[1]] == pos[1]);

    std::set<std::string> uniq(batch.texts.begin(), batch.texts.end());
    CHECK(uniq.size() == 20);

    // adversarials are the entries that are neither positives nor pool texts
    std::set<std::string> pool_set(pool.begin(), pool.end());
    int adversarial = 0;
    for (const auto& t : batch.texts)
        if (!pool_set.count(t) && t != pos[0] && t != pos[1]) ++adversarial;
    CHECK(adversarial == 1);
}

TEST_CASE("batch text assembly is seed-deterministic") {
    std::vector<std::string> pos = {"the small optical ship in the upper left of the image",
                                    "the large SAR ship in the center of the image",
                                    "the small optical plane in the top of the image"};
    auto pool = make_pool(25);
    NegativeSamplingConfig cfg;
    Rng r1(99), r2(99), r3(100);
    auto a = sample_batch_texts(pos, pool, cfg, r1);
    auto b = sample_batch_texts(pos, pool, cfg, r2);
    CHECK(a.texts == b.texts);
    CHECK(a.positive_indices == b.positive_indices);
    auto c = sample_batch_texts(pos, pool, cfg, r3);
    CHECK(a.texts != c.texts);  // different draws almost surely
}

TEST_CASE("orientation swaps are preferred and modality is the fallback") {
    auto pool = make_pool(25);
    NegativeSamplingConfig cfg;
    {
        std::vector<std::string> pos = {"the small optical ship in the upper left of the image"};
        Rng rng(5);
        auto batch = sample_batch_texts(pos, pool, cfg, rng);
        bool found = false;
        for (const auto& t : batch.texts)
            found = found || t == "the small optical ship in the upper right of the image";
        CHECK(found);
    }
    {
        std::vector<std::string> pos = {"the small optical ship in the center of the image"};
        Rng rng(5);
        auto batch = sample_batch_texts(pos, pool, cfg, rng);
        bool found = false;
        for (const auto& t : batch.texts)
            found = found || t == "the small SAR ship in the center of the image";
        CHECK(found);
    }
}

TEST_CASE("overfull positives are rejected and duplicates are collapsed") {
    auto pool = make_pool(30);
    NegativeSamplingConfig cfg;
    std::vector<std::string> too_many;
    for (int i = 0; i < 21; ++i) too_many.push_back("positive " + std::to_string(i));
    Rng rng(1);
    CHECK_THROWS_AS(sample_batch_texts(too_many, pool, cfg, rng), ContractViolation);
    CHECK_THROWS_AS(sample_batch_texts({}, pool, cfg, rng), ContractViolation);

    std::vector<std::string> dup = {"the ship in the top of the image",
                                    "the ship in the top of the image"};
    auto batch = sample_batch_texts(dup, pool, cfg, rng);
    REQUIRE(batch.positive_indices.size() == 1);
    CHECK(batch.texts[batch.positive_indices[0]] == dup[0]);
}

TEST_CASE("small pools that cannot reach capacity are rejected") {
    std::vector<std::string> pos = {"the ship in the top of the image"};
    auto pool = make_pool(3);
    NegativeSamplingConfig cfg;
    Rng rng(2);
    CHECK_THROWS_AS(sample_batch_texts(pos, pool, cfg, rng), ContractViolation);
}

TEST_CASE("lexicon round-trips through its file form") {
    std::string path = "/tmp/cg_lexicon_test.txt";
    {
        std::ofstream out(path);
        out << "# swap table\n";
        out << "upper left\tupper right\n";
        out << "left\tright\n";
        out << "lower left\tlower right\n";
        out << "top\tbottom\n";
        out << "center\n";
    }
    auto lex = DirectionLexicon::load(path);
    CHECK(*lex.mirror("upper left") == "upper right");
    CHECK(*lex.mirror("bottom") == "top");
    CHECK_FALSE(lex.mirror("center").has_value());
    std::remove(path.c_str());

    CHECK_THROWS_AS(DirectionLexicon::load("/nonexistent/lexicon.txt"), IoError);

    std::string bad = "/tmp/cg_lexicon_bad.txt";
    {
        std::ofstream out(bad);
        out << "left\tright\n";
        out << "left\tbottom\n";
    }
    CHECK_THROWS_AS(DirectionLexicon::load(bad), ContractViolation);
    std::remove(bad.c_str());
}
