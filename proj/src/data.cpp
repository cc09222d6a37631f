#include "cg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "cg/text.hpp"

namespace fs = std::filesystem;

namespace cg {

const std::vector<std::string>& optical_categories() {
    static const std::vector<std::string> v = {"ship", "plane", "tank", "bridge"};
    return v;
}

const std::vector<std::string>& sar_categories() {
    static const std::vector<std::string> v = {"ship", "tower"};
    return v;
}

const std::vector<std::string>& size_classes() {
    static const std::vector<std::string> v = {"small", "medium", "large"};
    return v;
}

namespace {

enum class ShapeKind { ellipse, plus, rect, disc };

struct Style {
    ShapeKind shape;
    double aspect;   // width over height before orientation swap
    bool may_rotate; // vertical variant allowed
    uint8_t rgb[3];  // gray level in rgb[0] for sar
};

Style style_for(const std::string& domain, const std::string& category) {
    if (domain == "optical") {
        if (category == "ship") return {ShapeKind::ellipse, 2.2, true, {45, 70, 150}};
        if (category == "plane") return {ShapeKind::plus, 1.0, false, {215, 215, 225}};
        if (category == "tank") return {ShapeKind::rect, 1.15, false, {95, 115, 60}};
        if (category == "bridge") return {ShapeKind::rect, 3.6, true, {150, 125, 100}};
    } else if (domain == "sar") {
        if (category == "ship") return {ShapeKind::ellipse, 2.2, true, {205, 205, 205}};
        if (category == "tower") return {ShapeKind::disc, 1.0, false, {235, 235, 235}};
    }
    throw ContractViolation("unknown category '" + category + "' for domain '" + domain + "'");
}

// max-dimension pixel range per size class at a 64px reference, scaled
std::pair<int, int> size_range(int size_class, int min_side) {
    double s = min_side / 64.0;
    switch (size_class) {
        case 0: return {(int)std::lround(9 * s), (int)std::lround(12 * s)};
        case 1: return {(int)std::lround(13 * s), (int)std::lround(17 * s)};
        case 2: return {(int)std::lround(18 * s), (int)std::lround(24 * s)};
        default: throw ContractViolation("size class index out of range");
    }
}

uint8_t clamp_byte(double v) { return (uint8_t)std::clamp(std::lround(v), 0L, 255L); }

void render_background(Image& img, const std::string& domain, Rng& rng) {
    if (domain == "optical") {
        double base[3], gx[3], gy[3];
        for (int c = 0; c < 3; ++c) {
            base[c] = rng.uniform(90.0, 170.0);
            gx[c] = rng.uniform(-50.0, 50.0);
            gy[c] = rng.uniform(-50.0, 50.0);
        }
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x) {
                double u = img.w > 1 ? x / (img.w - 1.0) - 0.5 : 0.0;
                double v = img.h > 1 ? y / (img.h - 1.0) - 0.5 : 0.0;
                for (int c = 0; c < 3; ++c)
                    img.at(x, y, c) = clamp_byte(base[c] + gx[c] * u + gy[c] * v);
            }
    } else {
        double base = rng.uniform(18.0, 36.0);
        double fx = rng.uniform(0.02, 0.08), fy = rng.uniform(0.02, 0.08);
        double phase = rng.uniform(0.0, 6.28318);
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                img.at(x, y, 0) =
                    clamp_byte(base + 6.0 * std::sin(6.28318 * (fx * x + fy * y) + phase));
    }
}

void fill_shape(Image& img, ShapeKind shape, const Box& b, const uint8_t* color) {
    double cx = b.cx(), cy = b.cy(), a = b.w() / 2.0, hh = b.h() / 2.0;
    int x0 = (int)std::floor(b.x1), x1 = (int)std::ceil(b.x2);
    int y0 = (int)std::floor(b.y1), y1 = (int)std::ceil(b.y2);
    for (int y = std::max(0, y0); y < std::min(img.h, y1); ++y)
        for (int x = std::max(0, x0); x < std::min(img.w, x1); ++x) {
            double px = x + 0.5, py = y + 0.5;
            if (px < b.x1 || px > b.x2 || py < b.y1 || py > b.y2) continue;
            bool inside = false;
            switch (shape) {
                case ShapeKind::ellipse:
                case ShapeKind::disc: {
                    double dx = (px - cx) / a, dy = (py - cy) / hh;
                    inside = dx * dx + dy * dy <= 1.0;
                    break;
                }
                case ShapeKind::plus: {
                    double barw = std::max(3.0, b.w() / 3.0) / 2.0;
                    double barh = std::max(3.0, b.h() / 3.0) / 2.0;
                    inside = std::abs(py - cy) <= barh || std::abs(px - cx) <= barw;
                    break;
                }
                case ShapeKind::rect:
                    inside = true;
                    break;
            }
            if (inside)
                for (int c = 0; c < img.channels; ++c) img.at(x, y, c) = color[c];
        }
}

void apply_speckle(Image& img, Rng& rng) {
    for (auto& p : img.pixels) p = clamp_byte(p * (rng.gamma(4.0) / 4.0));
}

std::string domain_word(const std::string& domain) {
    return domain == "sar" ? "SAR" : "optical";
}

std::string make_caption(const std::string& size_cls, const std::string& domain,
                         const std::string& category, const Box& box, int w, int h) {
    std::string dir = direction_from_center(box.cx() / w, box.cy() / h);
    return "the " + size_cls + " " + domain_word(domain) + " " + category + " in the " + dir +
           " of the image";
}

struct Placement {
    Box box;
    uint8_t color[3];
    ShapeKind shape;
};

Placement place_object(const SceneSpec& spec, const ObjectSpec& obj,
                       const std::vector<Placement>& accepted,
                       const std::vector<const ObjectSpec*>& accepted_specs, Rng& rng) {
    const Style st = style_for(spec.domain, obj.category);
    const int margin = 2;
    auto [lo, hi] = size_range(obj.size_class, std::min(spec.width, spec.height));
    Rng fill_rng((uint64_t)obj.fill * 0x9e3779b97f4a7c15ULL + 1);
    double jitter[3];
    for (double& j : jitter) j = fill_rng.uniform(-18.0, 18.0);

    for (int attempt = 0; attempt < 100; ++attempt) {
        int max_dim = rng.uniform_int(lo, hi);
        int w0 = max_dim;
        int h0 = std::max(4, (int)std::lround(max_dim / st.aspect));
        if (st.may_rotate && rng.uniform() < 0.5) std::swap(w0, h0);
        if (w0 > spec.width - 2 * margin || h0 > spec.height - 2 * margin) continue;
        int x1 = rng.uniform_int(margin, spec.width - margin - w0);
        int y1 = rng.uniform_int(margin, spec.height - margin - h0);
        Box box{(double)x1, (double)y1, (double)(x1 + w0), (double)(y1 + h0)};

        bool ok = true;
        int cell = direction_cell(box.cx() / spec.width, box.cy() / spec.height);
        for (size_t i = 0; i < accepted.size() && ok; ++i) {
            if (iou(box, accepted[i].box) > spec.iou_cap) ok = false;
            if (accepted_specs[i]->category == obj.category) {
                Box other = accepted[i].box;
                if (direction_cell(other.cx() / spec.width, other.cy() / spec.height) == cell)
                    ok = false;  // caption could not disambiguate
            }
        }
        if (!ok) continue;

        Placement p;
        p.box = box;
        p.shape = st.shape;
        for (int c = 0; c < 3; ++c) p.color[c] = clamp_byte(st.rgb[c] + jitter[c]);
        return p;
    }
    throw GenerationFailure("could not place '" + obj.category + "' in scene '" + spec.scene_id +
                            "' after 100 attempts");
}

void check_spec(const SceneSpec& spec) {
    CG_CHECK(spec.domain == "optical" || spec.domain == "sar",
             "scene domain must be optical or sar");
    CG_CHECK(spec.width >= 32 && spec.height >= 32, "scene too small to place objects");
    CG_CHECK(!spec.objects.empty(), "scene needs at least one object");
    const auto& cats = spec.domain == "optical" ? optical_categories() : sar_categories();
    for (const auto& o : spec.objects) {
        CG_CHECK(std::find(cats.begin(), cats.end(), o.category) != cats.end(),
                 "category not available in domain: " + o.category);
        CG_CHECK(o.size_class >= 0 && o.size_class < (int)size_classes().size(),
                 "size class index out of range");
    }
}

}  // namespace

Scene generate_scene(const SceneSpec& spec) {
    check_spec(spec);
    Rng rng(spec.seed);
    Scene scene;
    scene.id = spec.scene_id;
    scene.image = Image::create(spec.width, spec.height, spec.domain == "optical" ? 3 : 1);
    render_background(scene.image, spec.domain, rng);

    std::vector<Placement> placements;
    std::vector<const ObjectSpec*> placed_specs;
    for (const auto& obj : spec.objects) {
        placements.push_back(place_object(spec, obj, placements, placed_specs, rng));
        placed_specs.push_back(&obj);
    }
    for (const auto& p : placements) fill_shape(scene.image, p.shape, p.box, p.color);
    if (spec.domain == "sar") apply_speckle(scene.image, rng);

    for (size_t j = 0; j < placements.size(); ++j) {
        Sample s;
        s.id = spec.scene_id + "_" + std::to_string(j);
        s.image = scene.image;
        s.domain = spec.domain;
        s.box = placements[j].box;
        s.category = spec.objects[j].category;
        s.caption = make_caption(size_classes()[spec.objects[j].size_class], spec.domain,
                                 s.category, s.box, spec.width, spec.height);
        scene.samples.push_back(std::move(s));
    }
    return scene;
}

std::vector<Scene> generate_corpus(const CorpusConfig& cfg) {
    CG_CHECK(cfg.scenes >= 1, "corpus needs at least one scene");
    CG_CHECK(cfg.optical_fraction >= 0.0 && cfg.optical_fraction <= 1.0,
             "optical fraction must lie in [0,1]");
    CG_CHECK(cfg.min_objects >= 1 && cfg.max_objects >= cfg.min_objects,
             "object count range malformed");
    Rng rng(cfg.seed);
    int n_optical = (int)std::llround(cfg.optical_fraction * cfg.scenes);
    std::vector<Scene> scenes;
    scenes.reserve(cfg.scenes);
    for (int i = 0; i < cfg.scenes; ++i) {
        SceneSpec spec;
        spec.domain = i < n_optical ? "optical" : "sar";
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "%s_%05d", spec.domain.c_str(), i);
        spec.scene_id = idbuf;
        spec.width = cfg.width;
        spec.height = cfg.height;
        spec.iou_cap = cfg.iou_cap;
        const auto& cats = spec.domain == "optical" ? optical_categories() : sar_categories();
        int n_obj = rng.uniform_int(cfg.min_objects, cfg.max_objects);
        for (int j = 0; j < n_obj; ++j) {
            ObjectSpec o;
            o.category = cats[(size_t)rng.uniform_u64(cats.size())];
            o.size_class = rng.uniform_int(0, (int)size_classes().size() - 1);
            o.fill = (int)(rng.next_u64() & 0x7fffffff);
            spec.objects.push_back(o);
        }
        spec.seed = rng.next_u64();
        for (int retry = 0;; ++retry) {
            try {
                scenes.push_back(generate_scene(spec));
                break;
            } catch (const GenerationFailure&) {
                if (retry >= 20) throw;
                spec.seed = rng.next_u64();
            }
        }
    }
    return scenes;
}

// ---- on-disk form ----

namespace {

nlohmann::json record_json(const AnnotationRecord& r) {
    return nlohmann::json{{"id", r.id},
                          {"image", r.image},
                          {"domain", r.domain},
                          {"w", r.w},
                          {"h", r.h},
                          {"box", {r.box.x1, r.box.y1, r.box.x2, r.box.y2}},
                          {"caption", r.caption},
                          {"category", r.category}};
}

AnnotationRecord record_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_object()) throw IoError(where + ": annotation line is not an object");
    static const std::vector<std::string> keys = {"id",  "image", "domain",  "w",
                                                  "h",   "box",   "caption", "category"};
    for (const auto& k : keys)
        if (!j.contains(k)) throw IoError(where + ": missing key '" + k + "'");
    if (j.size() != keys.size()) throw IoError(where + ": unexpected extra keys");
    AnnotationRecord r;
    try {
        r.id = j["id"].get<std::string>();
        r.image = j["image"].get<std::string>();
        r.domain = j["domain"].get<std::string>();
        r.w = j["w"].get<int>();
        r.h = j["h"].get<int>();
        auto box = j["box"];
        if (!box.is_array() || box.size() != 4) throw IoError(where + ": box must have 4 numbers");
        r.box = Box{box[0].get<double>(), box[1].get<double>(), box[2].get<double>(),
                    box[3].get<double>()};
        r.caption = j["caption"].get<std::string>();
        r.category = j["category"].get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(where + ": " + e.what());
    }
    if (r.domain != "optical" && r.domain != "sar")
        throw IoError(where + ": domain must be optical or sar");
    if (r.w < 1 || r.h < 1) throw IoError(where + ": image size must be positive");
    if (r.id.empty() || r.image.empty() || r.caption.empty() || r.category.empty())
        throw IoError(where + ": empty required field");
    return r;
}

}  // namespace

void write_annotations(const std::vector<AnnotationRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& r : records) out << record_json(r).dump() << "\n";
    if (!out) throw IoError("short write: " + path);
}

std::vector<AnnotationRecord> read_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<AnnotationRecord> records;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path + ":" + std::to_string(lineno);
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw IoError(where + ": invalid json");
        records.push_back(record_from_json(j, where));
    }
    return records;
}

void write_id_list(const std::vector<std::string>& ids, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& id : ids) out << id << "\n";
    if (!out) throw IoError("short write: " + path);
}

std::vector<std::string> read_id_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ids.push_back(line);
    return ids;
}

std::vector<AnnotationRecord> write_corpus(std::vector<Scene>& scenes, const std::string& dir) {
    std::error_code ec;
    fs::create_directories(fs::path(dir) / "images", ec);
    if (ec) throw IoError("cannot create corpus directory: " + dir);
    std::vector<AnnotationRecord> records;
    for (auto& scene : scenes) {
        const char* ext = scene.image.channels == 3 ? ".ppm" : ".pgm";
        scene.image_path = "images/" + scene.id + ext;
        write_pnm(scene.image, (fs::path(dir) / scene.image_path).string());
        for (const auto& s : scene.samples) {
            AnnotationRecord r;
            r.id = s.id;
            r.image = scene.image_path;
            r.domain = s.domain;
            r.w = scene.image.w;
            r.h = scene.image.h;
            r.box = s.box;
            r.caption = s.caption;
            r.category = s.category;
            records.push_back(std::move(r));
        }
    }
    write_annotations(records, (fs::path(dir) / "annotations.jsonl").string());
    return records;
}

// ---- pipeline stages ----

CleanResult clean_annotations(const std::vector<AnnotationRecord>& records) {
    CleanResult res;
    for (const auto& r : records) {
        if (r.box.x1 >= r.box.x2 || r.box.y1 >= r.box.y2) {
            res.removed.push_back({r, "degenerate"});
        } else if (r.box.x1 < 0 || r.box.y1 < 0 || r.box.x2 > r.w || r.box.y2 > r.h) {
            res.removed.push_back({r, "out-of-bounds"});
        } else {
            res.kept.push_back(r);
        }
    }
    return res;
}

const char* flip_name(FlipOp op) {
    switch (op) {
        case FlipOp::hflip: return "hflip";
        case FlipOp::vflip: return "vflip";
        case FlipOp::rot180: return "rot180";
    }
    throw ContractViolation("unknown flip op");
}

Sample augment_geometric(const Sample& sample, FlipOp op) {
    CG_CHECK(sample.image.w >= 1 && sample.image.h >= 1, "augment: sample has no image");
    Sample out = sample;
    bool h = op == FlipOp::hflip || op == FlipOp::rot180;
    bool v = op == FlipOp::vflip || op == FlipOp::rot180;
    switch (op) {
        case FlipOp::hflip: out.image = flip_h(sample.image); break;
        case FlipOp::vflip: out.image = flip_v(sample.image); break;
        case FlipOp::rot180: out.image = rot180(sample.image); break;
    }
    if (h) {
        out.box.x1 = sample.image.w - sample.box.x2;
        out.box.x2 = sample.image.w - sample.box.x1;
    }
    if (v) {
        out.box.y1 = sample.image.h - sample.box.y2;
        out.box.y2 = sample.image.h - sample.box.y1;
    }
    out.caption = rewrite_direction_for_flip(sample.caption, h, v);
    return out;
}

namespace {

DirectionCheck check_direction(const std::string& caption, const Box& box, int w, int h) {
    DirectionCheck res;
    auto mention = first_direction_mention(caption);
    if (!mention) return res;
    std::string expected = direction_from_center(box.cx() / w, box.cy() / h);
    if (mention->phrase != expected) {
        res.ok = false;
        res.expected = expected;
        res.found = mention->phrase;
    }
    return res;
}

}  // namespace

DirectionCheck verify_direction(const Sample& sample) {
    return check_direction(sample.caption, sample.box, sample.image.w, sample.image.h);
}

DirectionCheck verify_direction(const AnnotationRecord& record) {
    return check_direction(record.caption, record.box, record.w, record.h);
}

SplitResult split_dataset(const std::vector<AnnotationRecord>& records, uint64_t seed) {
    CG_CHECK(records.size() >= 10, "split needs at least ten samples");
    std::map<std::string, std::vector<std::string>> strata;
    for (const auto& r : records) strata[r.domain + "\x1f" + r.category].push_back(r.id);
    SplitResult out;
    for (auto& [key, ids] : strata) {
        Rng rng(seed ^ fnv1a64(key));
        rng.shuffle(ids);
        size_t n = ids.size();
        size_t n_val = n / 10, n_test = n / 10;
        size_t n_train = n - n_val - n_test;
        out.train.insert(out.train.end(), ids.begin(), ids.begin() + n_train);
        out.val.insert(out.val.end(), ids.begin() + n_train, ids.begin() + n_train + n_val);
        out.test.insert(out.test.end(), ids.begin() + n_train + n_val, ids.end());
    }
    return out;
}

std::vector<AnnotationRecord> mask_captions(const std::vector<AnnotationRecord>& records,
                                            double ratio, Rng& rng) {
    CG_CHECK(ratio >= 0.0 && ratio <= 1.0, "mask ratio must lie in [0,1]");
    std::vector<AnnotationRecord> out = records;
    size_t count = (size_t)std::llround(ratio * (double)records.size());
    std::vector<size_t> idx(records.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    for (size_t k = 0; k < count; ++k) {
        auto& r = out[idx[k]];
        r.caption = "the " + domain_word(r.domain) + " " + r.category;
    }
    return out;
}

std::vector<ProbeScene> generate_probe_scenes(int count, const CorpusConfig& cfg, uint64_t seed) {
    CG_CHECK(count >= 1, "need at least one probe scene");
    Rng rng(seed);
    std::vector<ProbeScene> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        std::string domain = rng.uniform() < cfg.optical_fraction ? "optical" : "sar";
        const auto& cats = domain == "optical" ? optical_categories() : sar_categories();
        std::string category = cats[(size_t)rng.uniform_u64(cats.size())];
        int size_class = rng.uniform_int(0, 2);
        const Style st = style_for(domain, category);
        auto [lo, hi] = size_range(size_class, std::min(cfg.width, cfg.height));
        int max_dim = rng.uniform_int(lo, hi);
        int w0 = max_dim, h0 = std::max(4, (int)std::lround(max_dim / st.aspect));

        // target in the left or right column, distractor mirrored across x
        int row = rng.uniform_int(0, 2);
        bool left = rng.uniform() < 0.5;
        int cx_lo = 2 + (w0 + 1) / 2;
        int cx_hi = cfg.width / 3 - 1;
        CG_CHECK(cx_lo <= cx_hi, "probe scene too small for the object size");
        int cx = rng.uniform_int(cx_lo, cx_hi);
        if (!left) cx = cfg.width - cx;
        int third = cfg.height / 3;
        int cy_lo = std::max(2 + (h0 + 1) / 2, row * third + (row > 0 ? 2 : 0));
        int cy_hi = std::min((row + 1) * third - 1, cfg.height - 2 - (h0 + 1) / 2);
        CG_CHECK(cy_lo <= cy_hi, "probe scene too small for the object size");
        int cy = rng.uniform_int(cy_lo, cy_hi);

        auto box_at = [&](int cxi) {
            return Box{cxi - w0 / 2.0, cy - h0 / 2.0, cxi + w0 / 2.0, cy + h0 / 2.0};
        };
        ProbeScene ps;
        ps.domain = domain;
        ps.target = box_at(cx);
        ps.distractor = box_at(cfg.width - cx);

        ps.image = Image::create(cfg.width, cfg.height, domain == "optical" ? 3 : 1);
        render_background(ps.image, domain, rng);
        Rng fill_rng(rng.next_u64());
        double jitter[3];
        for (double& j : jitter) j = fill_rng.uniform(-18.0, 18.0);
        uint8_t color[3];
        for (int c = 0; c < 3; ++c) color[c] = clamp_byte(st.rgb[c] + jitter[c]);
        fill_shape(ps.image, st.shape, ps.target, color);
        fill_shape(ps.image, st.shape, ps.distractor, color);
        if (domain == "sar") apply_speckle(ps.image, rng);

        ps.caption = make_caption(size_classes()[size_class], domain, category, ps.target,
                                  cfg.width, cfg.height);
        out.push_back(std::move(ps));
    }
    return out;
}

// ---- model input ----

Tensor image_to_input(const Image& img) { return images_to_batch({&img}); }

Tensor images_to_batch(const std::vector<const Image*>& imgs) {
    CG_CHECK(!imgs.empty(), "images_to_batch: empty batch");
    int w = imgs[0]->w, h = imgs[0]->h;
    int b = (int)imgs.size();
    std::vector<double> data((size_t)b * 3 * h * w);
    for (int ib = 0; ib < b; ++ib) {
        const Image& im = *imgs[ib];
        CG_CHECK(im.w == w && im.h == h, "images_to_batch: mixed image sizes");
        CG_CHECK(im.channels == 1 || im.channels == 3, "images_to_batch: bad channel count");
        for (int c = 0; c < 3; ++c) {
            int src_c = im.channels == 3 ? c : 0;
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    data[(((size_t)ib * 3 + c) * h + y) * w + x] =
                        im.at(x, y, src_c) / 255.0;
        }
    }
    return Tensor::from({b, 3, h, w}, std::move(data));
}

Sample record_to_sample(const AnnotationRecord& record, const std::string& root_dir) {
    Sample s;
    s.id = record.id;
    s.image = read_pnm((fs::path(root_dir) / record.image).string());
    CG_CHECK(s.image.w == record.w && s.image.h == record.h,
             "record_to_sample: image size disagrees with the annotation");
    s.domain = record.domain;
    s.caption = record.caption;
    s.box = record.box;
    s.category = record.category;
    return s;
}

}  // namespace cg
