#include <algorithm>
#include <deque>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cg/checkpoint.hpp"
#include "cg/common.hpp"
#include "cg/config.hpp"
#include "cg/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cg;

namespace {

struct CliArgs {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<double> data_ratio;
    std::optional<double> mask_ratio;
    double threshold = 0.85;
    std::string out;
    bool deterministic = false;  // single-threaded execution is already the only mode
};

RunConfig resolve_config(const CliArgs& a) {
    RunConfig cfg = a.config_path.empty() ? RunConfig{} : load_run_config(a.config_path);
    if (a.seed) cfg.seed = *a.seed;
    if (a.data_ratio) cfg.train.data_ratio = *a.data_ratio;
    if (a.mask_ratio) cfg.mask_ratio = *a.mask_ratio;
    // Round-tripping re-applies every range check to the overridden values.
    return run_config_from_json(run_config_to_json(cfg));
}

std::string corpus_dir(const RunConfig& cfg, const CliArgs& a) {
    return a.out.empty() ? cfg.data.dir : a.out;
}

std::string run_dir(const RunConfig& cfg, const CliArgs& a) {
    return a.out.empty() ? cfg.out_dir : a.out;
}

std::string annotations_path(const std::string& dir) { return dir + "/annotations.jsonl"; }

void write_splits(const SplitResult& split, const std::string& dir) {
    fs::create_directories(dir + "/splits");
    write_id_list(split.train, dir + "/splits/train.txt");
    write_id_list(split.val, dir + "/splits/val.txt");
    write_id_list(split.test, dir + "/splits/test.txt");
}

void cmd_generate(const RunConfig& cfg, const CliArgs& a) {
    std::string dir = corpus_dir(cfg, a);
    CorpusConfig cc = corpus_config(cfg);
    auto scenes = generate_corpus(cc);
    auto records = write_corpus(scenes, dir);
    SplitResult split = split_dataset(records, cfg.seed);
    write_splits(split, dir);

    std::map<std::string, std::map<std::string, int>> counts;
    for (const auto& r : records) counts[r.domain][r.category] += 1;
    json manifest = {{"scenes", cc.scenes},
                     {"records", records.size()},
                     {"width", cc.width},
                     {"height", cc.height},
                     {"seed", cc.seed},
                     {"counts", counts},
                     {"splits",
                      {{"train", split.train.size()},
                       {"val", split.val.size()},
                       {"test", split.test.size()}}}};
    std::ofstream mf(dir + "/manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest: " + dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";
    std::cout << manifest.dump() << "\n";
}

void cmd_clean(const RunConfig& cfg, const CliArgs& a) {
    std::string dir = corpus_dir(cfg, a);
    CleanResult res = clean_annotations(read_annotations(annotations_path(dir)));
    write_annotations(res.kept, annotations_path(dir));
    std::ofstream removed(dir + "/removed.jsonl", std::ios::trunc);
    if (!removed) throw IoError("cannot write removal log: " + dir + "/removed.jsonl");
    for (const auto& r : res.removed)
        removed << json{{"id", r.record.id}, {"reason", r.reason}}.dump() << "\n";
    std::cout << json{{"kept", res.kept.size()}, {"removed", res.removed.size()}}.dump() << "\n";
}

std::string augmented_image_path(const std::string& rel, const char* op) {
    fs::path p(rel);
    fs::path dir = p.parent_path();
    std::string name = p.stem().string() + "_" + op + p.extension().string();
    return (dir / name).string();
}

void cmd_augment(const RunConfig& cfg, const CliArgs& a) {
    std::string src = cfg.data.dir;
    std::string dst = a.out.empty() ? cfg.data.dir + "-aug" : a.out;
    auto records = read_annotations(annotations_path(src));
    fs::create_directories(dst + "/images");

    std::set<std::string> written;
    std::vector<AnnotationRecord> out_records;
    for (const auto& r : records) {
        Sample s = record_to_sample(r, src);
        if (written.insert(r.image).second) write_pnm(s.image, dst + "/" + r.image);
        out_records.push_back(r);
        for (FlipOp op : {FlipOp::hflip, FlipOp::vflip, FlipOp::rot180}) {
            Sample t = augment_geometric(s, op);
            std::string rel = augmented_image_path(r.image, flip_name(op));
            if (written.insert(rel).second) write_pnm(t.image, dst + "/" + rel);
            AnnotationRecord ar = r;
            ar.id = r.id + "_" + flip_name(op);
            ar.image = rel;
            ar.box = t.box;
            ar.caption = t.caption;
            out_records.push_back(ar);
        }
    }
    write_annotations(out_records, annotations_path(dst));
    std::cout << json{{"input", records.size()}, {"output", out_records.size()}, {"dir", dst}}.dump()
              << "\n";
}

void cmd_verify(const RunConfig& cfg, const CliArgs& a) {
    std::string dir = corpus_dir(cfg, a);
    auto records = read_annotations(annotations_path(dir));
    size_t conflicts = 0;
    for (const auto& r : records) {
        DirectionCheck check = verify_direction(r);
        if (!check.ok) {
            ++conflicts;
            std::cout << json{{"id", r.id}, {"expected", check.expected}, {"found", check.found}}
                             .dump()
                      << "\n";
        }
    }
    std::cout << json{{"checked", records.size()}, {"conflicts", conflicts}}.dump() << "\n";
    CG_CHECK(conflicts == 0, std::to_string(conflicts) + " caption direction conflicts");
}

void cmd_split(const RunConfig& cfg, const CliArgs& a) {
    std::string dir = corpus_dir(cfg, a);
    auto records = read_annotations(annotations_path(dir));
    SplitResult split = split_dataset(records, cfg.seed);
    write_splits(split, dir);
    std::cout << json{{"train", split.train.size()},
                      {"val", split.val.size()},
                      {"test", split.test.size()}}
                     .dump()
              << "\n";
}

json report_line(int64_t step, double lr, const LossReport& r) {
    return {{"step", step},
            {"lr", lr},
            {"cls", r.cls},
            {"box", r.box},
            {"dfl", r.dfl},
            {"region", r.region},
            {"balance", r.balance},
            {"total", r.total},
            {"routing_entropy", r.routing_entropy}};
}

void cmd_train(RunConfig cfg, const CliArgs& a) {
    cfg.out_dir = run_dir(cfg, a);
    LoadedCorpus corpus = load_corpus(cfg.data.dir);
    fs::create_directories(cfg.out_dir);
    save_run_config(cfg.out_dir + "/config.json", cfg);

    std::ofstream log(cfg.out_dir + "/train_log.jsonl", std::ios::trunc);
    if (!log) throw IoError("cannot write training log: " + cfg.out_dir + "/train_log.jsonl");

    Rng rng(cfg.seed);
    Model m = make_model(cfg.model, rng);
    std::deque<json> tail;
    auto on_step = [&](int64_t step, double lr, const LossReport& r) {
        json line = report_line(step, lr, r);
        log << line.dump() << "\n";
        tail.push_back(std::move(line));
        if (tail.size() > 10) tail.pop_front();
    };
    auto on_val = [&](int epoch, const MetricsReport& rep) {
        json line = {{"epoch", epoch},
                     {"val_mean_iou", rep.overall.mean_iou},
                     {"val_pr50", rep.overall.pr50},
                     {"val_n", rep.overall.n}};
        log << line.dump() << "\n";
        log.flush();
        std::cout << line.dump() << "\n";
    };

    try {
        TrainResult res = train_model(m, cfg, corpus, on_step, on_val);
        std::string ckpt = cfg.out_dir + "/checkpoint.bin";
        save_checkpoint(ckpt, m, res.steps, run_config_to_json(cfg));
        std::cout << json{{"steps", res.steps},
                          {"final_total", res.last.total},
                          {"val_mean_iou", res.final_val_mean_iou},
                          {"checkpoint", ckpt}}
                         .dump()
                  << "\n";
    } catch (const NumericalError&) {
        std::cerr << "non-finite loss; last step reports:\n";
        for (const auto& line : tail) std::cerr << line.dump() << "\n";
        log.flush();
        throw;
    }
}

Model load_model(const std::string& ckpt_path) {
    CheckpointInfo info = peek_checkpoint(ckpt_path);
    CG_CHECK(!info.config_json.empty(), "checkpoint carries no config snapshot: " + ckpt_path);
    RunConfig stored = run_config_from_json(info.config_json, ckpt_path);
    Rng rng(stored.seed);
    Model m = make_model(stored.model, rng);
    load_checkpoint(ckpt_path, m);
    return m;
}

void cmd_eval(RunConfig cfg, const CliArgs& a, const std::string& split_name) {
    cfg.out_dir = run_dir(cfg, a);
    Model m = load_model(cfg.out_dir + "/checkpoint.bin");
    LoadedCorpus corpus = load_corpus(cfg.data.dir);

    const std::vector<std::string>* ids = nullptr;
    if (split_name == "train") ids = &corpus.split.train;
    if (split_name == "val") ids = &corpus.split.val;
    if (split_name == "test") ids = &corpus.split.test;
    CG_CHECK(ids != nullptr, "unknown split: " + split_name);

    std::vector<std::string> skipped;
    MetricsReport report = evaluate_split(m, corpus, *ids, cfg.mask_ratio, cfg.seed, &skipped);
    for (const auto& id : skipped)
        std::cerr << json{{"skipped", id}, {"reason", "missing image"}}.dump() << "\n";

    std::string line = metrics_to_json(report);
    std::string suffix =
        cfg.mask_ratio > 0.0
            ? "_mask" + std::to_string((int)std::lround(cfg.mask_ratio * 100))
            : "";
    std::ofstream out(cfg.out_dir + "/metrics_" + split_name + suffix + ".json", std::ios::trunc);
    if (out) out << line << "\n";
    std::cout << line << "\n";
}

void cmd_ground(RunConfig cfg, const CliArgs& a, const std::string& image_path,
                const std::string& text) {
    cfg.out_dir = run_dir(cfg, a);
    Model m = load_model(cfg.out_dir + "/checkpoint.bin");
    Image img = read_pnm(image_path);
    CG_CHECK(img.w % 16 == 0 && img.h % 16 == 0, "image size must be divisible by 16");
    GroundResult g = ground_image(m, image_to_input(img), text);
    std::cout << json{{"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}},
                      {"score", g.score},
                      {"level", g.level},
                      {"location", g.loc}}
                     .dump()
              << "\n";
}

std::string category_from_caption(const std::string& caption) {
    std::vector<std::string> tokens = tokenize(caption);
    auto mentions = [&](const std::string& cat) {
        return std::find(tokens.begin(), tokens.end(), cat) != tokens.end();
    };
    for (const auto& cat : optical_categories())
        if (mentions(cat)) return cat;
    for (const auto& cat : sar_categories())
        if (mentions(cat)) return cat;
    return "object";
}

void cmd_annotate(RunConfig cfg, const CliArgs& a, const std::string& image_dir,
                  const std::string& pool_path) {
    cfg.out_dir = run_dir(cfg, a);
    Model m = load_model(cfg.out_dir + "/checkpoint.bin");

    std::ifstream pool_in(pool_path);
    if (!pool_in) throw IoError("cannot open text pool: " + pool_path);
    std::vector<std::string> pool;
    std::string line;
    while (std::getline(pool_in, line))
        if (!line.empty()) pool.push_back(line);
    CG_CHECK(!pool.empty(), "annotation text pool is empty");

    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(image_dir)) {
        std::string ext = entry.path().extension().string();
        if (ext == ".ppm" || ext == ".pgm") files.push_back(entry.path().string());
    }
    std::sort(files.begin(), files.end());

    for (const auto& file : files) {
        Image img = read_pnm(file);
        CG_CHECK(img.w % 16 == 0 && img.h % 16 == 0,
                 "image size must be divisible by 16: " + file);
        Tensor input = image_to_input(img);
        std::string stem = fs::path(file).stem().string();
        int kept = 0;
        for (const auto& text : pool) {
            GroundResult g = ground_image(m, input, text);
            if (g.score <= a.threshold) continue;
            json rec = {{"id", stem + "_" + std::to_string(kept++)},
                        {"image", file},
                        {"domain", img.channels == 1 ? "sar" : "optical"},
                        {"w", img.w},
                        {"h", img.h},
                        {"box", {g.box.x1, g.box.y1, g.box.x2, g.box.y2}},
                        {"caption", text},
                        {"category", category_from_caption(text)}};
            std::cout << rec.dump() << "\n";
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cross-domain visual grounding toolkit"};
    app.require_subcommand(1);

    CliArgs args;
    app.add_option("--config", args.config_path, "run configuration JSON");
    app.add_option("--seed", args.seed, "override the configured seed");
    app.add_option("--data-ratio", args.data_ratio, "fraction of train ids to use, in (0,1]");
    app.add_option("--mask-ratio", args.mask_ratio, "fraction of captions to mask, in [0,1]");
    app.add_option("--threshold", args.threshold, "annotation confidence threshold");
    app.add_option("--out", args.out, "output directory override");
    app.add_flag("--deterministic", args.deterministic,
                 "force the deterministic single-threaded path (always on)");

    auto* generate = app.add_subcommand("generate", "render the synthetic corpus and splits");
    auto* clean = app.add_subcommand("clean", "drop invalid annotation records in place");
    auto* augment = app.add_subcommand("augment", "write a geometrically augmented corpus");
    auto* verify = app.add_subcommand("verify", "cross-check caption directions against boxes");
    auto* split = app.add_subcommand("split", "write stratified train/val/test id lists");
    auto* train = app.add_subcommand("train", "optimize a model on the corpus");
    auto* eval = app.add_subcommand("eval", "score a checkpoint on a split");
    std::string split_name = "test";
    eval->add_option("split", split_name, "train, val, or test")->capture_default_str();
    auto* ground = app.add_subcommand("ground", "ground one caption on one image");
    std::string image_path, text;
    ground->add_option("image", image_path, "PNM image path")->required();
    ground->add_option("text", text, "query caption")->required();
    auto* annotate = app.add_subcommand("annotate", "label a directory with a text pool");
    std::string image_dir, pool_path;
    annotate->add_option("dir", image_dir, "directory of PNM images")->required();
    annotate->add_option("pool", pool_path, "file with one candidate caption per line")
        ->required();
    for (auto* sub : {generate, clean, augment, verify, split, train, eval, ground, annotate})
        sub->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = resolve_config(args);
        if (generate->parsed()) cmd_generate(cfg, args);
        if (clean->parsed()) cmd_clean(cfg, args);
        if (augment->parsed()) cmd_augment(cfg, args);
        if (verify->parsed()) cmd_verify(cfg, args);
        if (split->parsed()) cmd_split(cfg, args);
        if (train->parsed()) cmd_train(cfg, args);
        if (eval->parsed()) cmd_eval(cfg, args, split_name);
        if (ground->parsed()) cmd_ground(cfg, args, image_path, text);
        if (annotate->parsed()) cmd_annotate(cfg, args, image_dir, pool_path);
    } catch (const ContractViolation& e) {
        std::cerr << "contract violation: " << e.what() << "\n";
        return 1;
    } catch (const IoError& e) {
        std::cerr << "i/o failure: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
