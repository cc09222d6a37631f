#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

#include "cg/data.hpp"
#include "cg/text.hpp"

using namespace cg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / "crossground_tests" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

SceneSpec basic_spec(const std::string& domain, uint64_t seed) {
    SceneSpec spec;
    spec.scene_id = "t0";
    spec.domain = domain;
    spec.objects.push_back({domain == "optical" ? "ship" : "tower", 1, 3});
    spec.seed = seed;
    return spec;
}

AnnotationRecord basic_record(const std::string& id, const std::string& domain,
                              const std::string& category, Box box) {
    AnnotationRecord r;
    r.id = id;
    r.image = "images/x.ppm";
    r.domain = domain;
    r.w = 64;
    r.h = 64;
    r.box = box;
    r.caption = "the medium " + std::string(domain == "sar" ? "SAR" : "optical") + " " + category;
    r.category = category;
    return r;
}

Sample record_sample(const AnnotationRecord& r) {
    Sample s;
    s.id = r.id;
    s.image = Image::create(r.w, r.h, r.domain == "optical" ? 3 : 1);
    uint8_t v = 1;
    for (auto& p : s.image.pixels) p = v = (uint8_t)(v * 31 + 7);
    s.domain = r.domain;
    s.caption = r.caption;
    s.box = r.box;
    s.category = r.category;
    return s;
}

}  // namespace

TEST_CASE("same seed renders a byte-identical scene and captions") {
    SceneSpec spec = basic_spec("optical", 42);
    spec.objects.push_back({"plane", 0, 9});
    Scene a = generate_scene(spec);
    Scene b = generate_scene(spec);
    CHECK(a.image == b.image);
    REQUIRE(a.samples.size() == 2);
    for (size_t i = 0; i < a.samples.size(); ++i) {
        CHECK(a.samples[i].caption == b.samples[i].caption);
        CHECK(a.samples[i].box.x1 == b.samples[i].box.x1);
        CHECK(a.samples[i].box.y2 == b.samples[i].box.y2);
        CHECK(a.samples[i].id == spec.scene_id + "_" + std::to_string(i));
    }
    Scene c = generate_scene(basic_spec("optical", 43));
    CHECK(c.image.pixels != a.image.pixels);
}

TEST_CASE("radar scenes are dark gray with bright targets, optical scenes are color") {
    Scene sar = generate_scene(basic_spec("sar", 7));
    CHECK(sar.image.channels == 1);
    const Box& b = sar.samples[0].box;
    double inside = 0, outside = 0;
    int n_in = 0, n_out = 0;
    for (int y = 0; y < sar.image.h; ++y)
        for (int x = 0; x < sar.image.w; ++x) {
            bool in = x + 0.5 > b.x1 && x + 0.5 < b.x2 && y + 0.5 > b.y1 && y + 0.5 < b.y2;
            (in ? inside : outside) += sar.image.at(x, y, 0);
            (in ? n_in : n_out) += 1;
        }
    CHECK(inside / n_in > 3.0 * (outside / n_out));

    Scene opt = generate_scene(basic_spec("optical", 7));
    CHECK(opt.image.channels == 3);
}

TEST_CASE("generated boxes are strictly inside the image with positive area") {
    CorpusConfig cfg;
    cfg.scenes = 120;
    cfg.seed = 5;
    for (const auto& scene : generate_corpus(cfg)) {
        for (const auto& s : scene.samples) {
            CHECK(s.box.x1 > 0.0);
            CHECK(s.box.y1 > 0.0);
            CHECK(s.box.x2 < cfg.width);
            CHECK(s.box.y2 < cfg.height);
            CHECK(s.box.w() > 0.0);
            CHECK(s.box.h() > 0.0);
        }
    }
}

TEST_CASE("caption direction matches the box center across a ten-thousand-sample sweep") {
    CorpusConfig cfg;
    cfg.scenes = 6800;
    cfg.seed = 11;
    auto scenes = generate_corpus(cfg);
    int total = 0, agree = 0;
    for (const auto& scene : scenes)
        for (const auto& s : scene.samples) {
            ++total;
            auto mention = first_direction_mention(s.caption);
            REQUIRE(mention.has_value());
            if (mention->phrase ==
                direction_from_center(s.box.cx() / s.image.w, s.box.cy() / s.image.h))
                ++agree;
            CHECK(verify_direction(s).ok);
        }
    CHECK(total >= 10000);
    CHECK(agree == total);
}

TEST_CASE("scene generation respects the overlap cap and caption uniqueness") {
    CorpusConfig cfg;
    cfg.scenes = 300;
    cfg.min_objects = 2;
    cfg.max_objects = 2;
    cfg.seed = 21;
    for (const auto& scene : generate_corpus(cfg)) {
        REQUIRE(scene.samples.size() == 2);
        const auto& a = scene.samples[0];
        const auto& b = scene.samples[1];
        CHECK(iou(a.box, b.box) <= cfg.iou_cap + 1e-12);
        if (a.category == b.category) CHECK(a.caption != b.caption);
    }
}

TEST_CASE("impossible placement specs fail loudly") {
    SceneSpec spec = basic_spec("optical", 3);
    spec.iou_cap = 0.0;
    for (int i = 0; i < 40; ++i) spec.objects.push_back({"ship", 2, i});
    CHECK_THROWS_AS(generate_scene(spec), GenerationFailure);
    SceneSpec bad = basic_spec("optical", 3);
    bad.objects[0].category = "tower";
    CHECK_THROWS_AS(generate_scene(bad), ContractViolation);
}

TEST_CASE("corpus generator honors the domain mix and id scheme") {
    CorpusConfig cfg;
    cfg.scenes = 40;
    cfg.optical_fraction = 0.75;
    cfg.seed = 2;
    auto scenes = generate_corpus(cfg);
    REQUIRE((int)scenes.size() == 40);
    int optical = 0;
    for (const auto& s : scenes)
        if (s.id.rfind("optical_", 0) == 0) ++optical;
    CHECK(optical == 30);
    CHECK(scenes[0].id == "optical_00000");
    CHECK(scenes[39].id == "sar_00039");
    std::set<std::string> ids;
    for (const auto& sc : scenes)
        for (const auto& s : sc.samples) CHECK(ids.insert(s.id).second);
}

TEST_CASE("cleaning removes degenerate boxes with the right reason") {
    auto r = basic_record("a", "optical", "ship", Box{30, 20, 30, 40});
    auto res = clean_annotations({r});
    CHECK(res.kept.empty());
    REQUIRE(res.removed.size() == 1);
    CHECK(res.removed[0].reason == "degenerate");
    auto r2 = basic_record("b", "optical", "ship", Box{30, 40, 20, 50});
    CHECK(clean_annotations({r2}).removed[0].reason == "degenerate");
}

TEST_CASE("cleaning removes boxes that leave the image with the right reason") {
    auto r = basic_record("a", "optical", "ship", Box{50, 20, 70, 40});
    auto res = clean_annotations({r});
    REQUIRE(res.removed.size() == 1);
    CHECK(res.removed[0].reason == "out-of-bounds");
    CHECK(clean_annotations({basic_record("b", "sar", "ship", Box{-1, 0, 10, 10})})
              .removed[0]
              .reason == "out-of-bounds");
    auto deg = basic_record("c", "optical", "ship", Box{80, 20, 70, 40});
    CHECK(clean_annotations({deg}).removed[0].reason == "degenerate");
}

TEST_CASE("cleaning keeps valid records unchanged and is idempotent") {
    std::vector<AnnotationRecord> recs = {
        basic_record("a", "optical", "ship", Box{0, 0, 64, 64}),
        basic_record("b", "sar", "tower", Box{10, 10, 20, 20}),
        basic_record("c", "optical", "tank", Box{10, 10, 10, 20}),
    };
    auto once = clean_annotations(recs);
    CHECK(once.kept.size() == 2);
    CHECK(once.kept[0].id == "a");
    CHECK(once.kept[0].caption == recs[0].caption);
    auto twice = clean_annotations(once.kept);
    CHECK(twice.removed.empty());
    CHECK(twice.kept.size() == once.kept.size());
}

TEST_CASE("horizontal flip mirrors the box across the vertical axis") {
    auto r = basic_record("a", "optical", "ship", Box{10, 20, 30, 40});
    r.w = 100;
    r.h = 100;
    Sample s = record_sample(r);
    s.image = Image::create(100, 100, 3);
    Sample f = augment_geometric(s, FlipOp::hflip);
    CHECK(f.box.x1 == 70.0);
    CHECK(f.box.y1 == 20.0);
    CHECK(f.box.x2 == 90.0);
    CHECK(f.box.y2 == 40.0);
    CHECK(f.id == s.id);
    CHECK(f.category == s.category);
    CHECK(f.box.area() == s.box.area());
}

TEST_CASE("flip augmentations are exact involutions on every field") {
    SceneSpec spec = basic_spec("optical", 99);
    spec.objects[0].size_class = 2;
    Scene scene = generate_scene(spec);
    const Sample& s = scene.samples[0];
    for (FlipOp op : {FlipOp::hflip, FlipOp::vflip, FlipOp::rot180}) {
        CAPTURE(flip_name(op));
        Sample back = augment_geometric(augment_geometric(s, op), op);
        CHECK(back.image == s.image);
        CHECK(back.box.x1 == s.box.x1);
        CHECK(back.box.y1 == s.box.y1);
        CHECK(back.box.x2 == s.box.x2);
        CHECK(back.box.y2 == s.box.y2);
        CHECK(back.caption == s.caption);
        CHECK(back.id == s.id);
    }
}

TEST_CASE("rot180 equals hflip composed with vflip") {
    Scene scene = generate_scene(basic_spec("sar", 123));
    const Sample& s = scene.samples[0];
    Sample a = augment_geometric(augment_geometric(s, FlipOp::hflip), FlipOp::vflip);
    Sample b = augment_geometric(s, FlipOp::rot180);
    CHECK(a.image == b.image);
    CHECK(a.box.x1 == b.box.x1);
    CHECK(a.box.y1 == b.box.y1);
    CHECK(a.box.x2 == b.box.x2);
    CHECK(a.box.y2 == b.box.y2);
    CHECK(a.caption == b.caption);
}

TEST_CASE("flipped captions still describe where the box sits") {
    CorpusConfig cfg;
    cfg.scenes = 150;
    cfg.seed = 31;
    for (const auto& scene : generate_corpus(cfg))
        for (const auto& s : scene.samples)
            for (FlipOp op : {FlipOp::hflip, FlipOp::vflip, FlipOp::rot180}) {
                Sample f = augment_geometric(s, op);
                CAPTURE(flip_name(op));
                CAPTURE(f.caption);
                CHECK(verify_direction(f).ok);
            }
}

TEST_CASE("direction verification flags corrupted captions and passes vacuous ones") {
    Scene scene = generate_scene(basic_spec("optical", 55));
    Sample s = scene.samples[0];
    CHECK(verify_direction(s).ok);

    auto mention = first_direction_mention(s.caption);
    REQUIRE(mention.has_value());
    std::string mirrored = direction_grid()[(size_t)mirror_cell_h(mention->cell)];
    if (mirrored == mention->phrase) mirrored = direction_grid()[(size_t)mirror_cell_v(mention->cell)];
    if (mirrored != mention->phrase) {
        Sample bad = s;
        bad.caption.replace(bad.caption.find(mention->phrase), mention->phrase.size(), mirrored);
        auto check = verify_direction(bad);
        CHECK(!check.ok);
        CHECK(check.expected == mention->phrase);
        CHECK(check.found == mirrored);
    }

    Sample vacuous = s;
    vacuous.caption = "the medium optical ship";
    CHECK(verify_direction(vacuous).ok);
}

TEST_CASE("a uniform thousand-record set splits eight to one to one") {
    std::vector<AnnotationRecord> recs;
    for (int i = 0; i < 1000; ++i)
        recs.push_back(basic_record("id" + std::to_string(i), "optical", "ship", Box{1, 1, 9, 9}));
    SplitResult sp = split_dataset(recs, 77);
    CHECK(sp.train.size() == 800);
    CHECK(sp.val.size() == 100);
    CHECK(sp.test.size() == 100);
}

TEST_CASE("each stratum of ten contributes eight, one, and one") {
    std::vector<AnnotationRecord> recs;
    std::vector<std::pair<std::string, std::string>> strata = {
        {"optical", "ship"}, {"optical", "tank"}, {"sar", "tower"}};
    for (auto& [dom, cat] : strata)
        for (int i = 0; i < 10; ++i)
            recs.push_back(
                basic_record(dom + "_" + cat + "_" + std::to_string(i), dom, cat, Box{1, 1, 9, 9}));
    SplitResult sp = split_dataset(recs, 3);
    CHECK(sp.train.size() == 24);
    CHECK(sp.val.size() == 3);
    CHECK(sp.test.size() == 3);
    for (auto& [dom, cat] : strata) {
        auto of_stratum = [&](const std::vector<std::string>& ids) {
            return std::count_if(ids.begin(), ids.end(), [&](const std::string& id) {
                return id.rfind(dom + "_" + cat + "_", 0) == 0;
            });
        };
        CHECK(of_stratum(sp.train) == 8);
        CHECK(of_stratum(sp.val) == 1);
        CHECK(of_stratum(sp.test) == 1);
    }
}

TEST_CASE("splits are deterministic, disjoint, and exhaustive") {
    std::vector<AnnotationRecord> recs;
    Rng rng(4);
    for (int i = 0; i < 137; ++i) {
        std::string dom = rng.uniform() < 0.5 ? "optical" : "sar";
        const auto& cats = dom == "optical" ? optical_categories() : sar_categories();
        recs.push_back(basic_record("r" + std::to_string(i), dom,
                                    cats[(size_t)rng.uniform_u64(cats.size())], Box{1, 1, 9, 9}));
    }
    SplitResult a = split_dataset(recs, 19);
    SplitResult b = split_dataset(recs, 19);
    CHECK(a.train == b.train);
    CHECK(a.val == b.val);
    CHECK(a.test == b.test);

    std::set<std::string> seen;
    for (const auto* part : {&a.train, &a.val, &a.test})
        for (const auto& id : *part) CHECK(seen.insert(id).second);
    CHECK(seen.size() == recs.size());

    SplitResult c = split_dataset(recs, 20);
    CHECK(c.train != a.train);
}

TEST_CASE("caption masking replaces exactly the requested fraction") {
    std::vector<AnnotationRecord> recs;
    for (int i = 0; i < 1000; ++i) {
        auto r = basic_record("id" + std::to_string(i), i % 4 ? "optical" : "sar", "ship",
                              Box{1, 1, 9, 9});
        r.caption = "the small optical ship in the upper left of the image";
        recs.push_back(r);
    }

    Rng rng0(5);
    auto same = mask_captions(recs, 0.0, rng0);
    for (size_t i = 0; i < recs.size(); ++i) CHECK(same[i].caption == recs[i].caption);

    Rng rng1(5);
    auto all = mask_captions(recs, 1.0, rng1);
    for (const auto& r : all) {
        std::string want = std::string("the ") + (r.domain == "sar" ? "SAR" : "optical") + " ship";
        CHECK(r.caption == want);
    }

    Rng rng3(5);
    auto some = mask_captions(recs, 0.3, rng3);
    int replaced = 0;
    for (size_t i = 0; i < recs.size(); ++i)
        if (some[i].caption != recs[i].caption) ++replaced;
    CHECK(replaced == 300);

    Rng rng3b(5);
    auto again = mask_captions(recs, 0.3, rng3b);
    for (size_t i = 0; i < recs.size(); ++i) CHECK(again[i].caption == some[i].caption);
}

TEST_CASE("annotation files round-trip through json lines") {
    auto dir = temp_dir("jsonl");
    std::vector<AnnotationRecord> recs = {
        basic_record("a", "optical", "ship", Box{1.5, 2.25, 9, 9}),
        basic_record("b", "sar", "tower", Box{3, 4, 11, 12}),
    };
    recs[0].caption = "the small optical ship in the upper left of the image";
    std::string path = (dir / "ann.jsonl").string();
    write_annotations(recs, path);
    auto back = read_annotations(path);
    REQUIRE(back.size() == 2);
    CHECK(back[0].id == "a");
    CHECK(back[0].box.x1 == 1.5);
    CHECK(back[0].box.y1 == 2.25);
    CHECK(back[0].caption == recs[0].caption);
    CHECK(back[1].domain == "sar");
    CHECK(back[1].w == 64);
    CHECK(back[1].category == "tower");
}

TEST_CASE("annotation reader rejects malformed lines with their line number") {
    auto dir = temp_dir("jsonl_bad");
    auto write_line = [&](const std::string& name, const std::string& line) {
        std::string p = (dir / name).string();
        std::ofstream out(p);
        out << line << "\n";
        return p;
    };
    std::string good =
        R"({"id":"a","image":"images/a.ppm","domain":"optical","w":64,"h":64,)"
        R"("box":[1,2,3,4],"caption":"c","category":"ship"})";

    CHECK_THROWS_WITH_AS(read_annotations(write_line("syntax.jsonl", "{nope")),
                         doctest::Contains(":1:"), IoError);
    std::string missing = good;
    missing.replace(missing.find("\"caption\""), 9, "\"capt\"");
    CHECK_THROWS_AS(read_annotations(write_line("missing.jsonl", missing)), IoError);
    std::string extra = good;
    extra.insert(extra.size() - 1, R"(,"zzz":1)");
    CHECK_THROWS_AS(read_annotations(write_line("extra.jsonl", extra)), IoError);
    std::string badbox = good;
    badbox.replace(badbox.find("[1,2,3,4]"), 9, "[1,2,3]");
    CHECK_THROWS_AS(read_annotations(write_line("badbox.jsonl", badbox)), IoError);
    std::string baddom = good;
    baddom.replace(baddom.find("optical"), 7, "thermal");
    CHECK_THROWS_AS(read_annotations(write_line("baddom.jsonl", baddom)), IoError);

    std::string two = (dir / "two.jsonl").string();
    {
        std::ofstream out(two);
        out << good << "\n" << "{broken\n";
    }
    CHECK_THROWS_WITH_AS(read_annotations(two), doctest::Contains(":2:"), IoError);
}

TEST_CASE("id lists round-trip") {
    auto dir = temp_dir("idlist");
    std::vector<std::string> ids = {"optical_00000_0", "sar_00039_1", "x"};
    std::string path = (dir / "train.txt").string();
    write_id_list(ids, path);
    CHECK(read_id_list(path) == ids);
}

TEST_CASE("a written corpus can be read back sample by sample") {
    auto dir = temp_dir("corpus");
    CorpusConfig cfg;
    cfg.scenes = 12;
    cfg.optical_fraction = 0.5;
    cfg.seed = 8;
    auto scenes = generate_corpus(cfg);
    auto records = write_corpus(scenes, dir.string());
    CHECK(records.size() >= scenes.size());
    CHECK(fs::exists(dir / "annotations.jsonl"));

    auto back = read_annotations((dir / "annotations.jsonl").string());
    REQUIRE(back.size() == records.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].id == records[i].id);
        CHECK(fs::exists(dir / back[i].image));
        std::string ext = fs::path(back[i].image).extension().string();
        CHECK(ext == (back[i].domain == "optical" ? ".ppm" : ".pgm"));
        Sample s = record_to_sample(back[i], dir.string());
        CHECK(s.image.w == back[i].w);
        CHECK(s.image.channels == (back[i].domain == "optical" ? 3 : 1));
        CHECK(verify_direction(s).ok);
    }
    Scene& first = scenes[0];
    Sample s0 = record_to_sample(back[0], dir.string());
    CHECK(s0.image == first.image);
}

TEST_CASE("probe scenes put the target and its twin in mirrored cells") {
    CorpusConfig cfg;
    auto probes = generate_probe_scenes(60, cfg, 17);
    REQUIRE(probes.size() == 60);
    for (const auto& p : probes) {
        int tcell = direction_cell(p.target.cx() / cfg.width, p.target.cy() / cfg.height);
        int dcell = direction_cell(p.distractor.cx() / cfg.width, p.distractor.cy() / cfg.height);
        CHECK(tcell != dcell);
        CHECK(tcell / 3 == dcell / 3);          // same row
        CHECK(tcell % 3 + dcell % 3 == 2);      // mirrored columns
        CHECK(tcell % 3 != 1);
        auto mention = first_direction_mention(p.caption);
        REQUIRE(mention.has_value());
        CHECK(mention->cell == tcell);
        CHECK(iou(p.target, p.distractor) == 0.0);
        CHECK(p.target.x1 > 0.0);
        CHECK(p.target.x2 < cfg.width);
    }
    auto again = generate_probe_scenes(60, cfg, 17);
    CHECK(again[5].image == probes[5].image);
    CHECK(again[5].caption == probes[5].caption);
}

TEST_CASE("model input tensors scale bytes into the unit interval") {
    Image rgb = Image::create(2, 2, 3);
    for (size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = (uint8_t)(i * 20);
    Tensor t = image_to_input(rgb);
    CHECK(t.shape() == Shape{1, 3, 2, 2});
    CHECK(t.at({0, 0, 0, 0}) == doctest::Approx(rgb.at(0, 0, 0) / 255.0));
    CHECK(t.at({0, 2, 1, 1}) == doctest::Approx(rgb.at(1, 1, 2) / 255.0));

    Image gray = Image::create(2, 1, 1);
    gray.at(0, 0, 0) = 51;
    gray.at(1, 0, 0) = 255;
    Tensor g = images_to_batch({&gray, &gray});
    CHECK(g.shape() == Shape{2, 3, 1, 2});
    for (int c = 0; c < 3; ++c) {
        CHECK(g.at({0, c, 0, 0}) == doctest::Approx(0.2));
        CHECK(g.at({1, c, 0, 1}) == doctest::Approx(1.0));
    }
}
