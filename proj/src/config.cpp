#include "cg/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace cg {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
    CG_CHECK(j.is_object(), where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        CG_CHECK(known.count(it.key()) != 0, where + ": unknown key \"" + it.key() + "\"");
}

template <typename T>
void take(const json& j, const char* key, T& into) {
    if (j.contains(key)) into = j.at(key).get<T>();
}

void take_patch(const json& j, const char* key, int& into) {
    if (!j.contains(key)) return;
    if (j.at(key).is_string()) {
        CG_CHECK(j.at(key).get<std::string>() == "image",
                 "moe.patch accepts a patch side or the word \"image\"");
        into = 0;  // whole-map routing
    } else {
        into = j.at(key).get<int>();
    }
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
    json j = {
        {"seed", c.seed},
        {"mask_ratio", c.mask_ratio},
        {"out_dir", c.out_dir},
        {"model",
         {{"channels", c.model.channels},
          {"text_dim", c.model.text_dim},
          {"moe",
           {{"experts", c.model.moe.experts},
            {"top_k", c.model.moe.top_k},
            {"patch", c.model.moe.patch == 0 ? json("image") : json(c.model.moe.patch)},
            {"rank", c.model.moe.rank},
            {"cascades", c.model.moe.cascades},
            {"temperature", c.model.moe.temperature}}},
          {"fusion",
           {{"heads", c.model.fusion.heads},
            {"embed", c.model.fusion.embed},
            {"groups", c.model.fusion.groups}}},
          {"heads",
           {{"embed_dim", c.model.heads.embed_dim},
            {"bins", c.model.heads.bins},
            {"grid_rows", c.model.heads.grid_rows},
            {"grid_cols", c.model.heads.grid_cols}}}}},
        {"loss_weights",
         {{"cls", c.weights.cls},
          {"box", c.weights.box},
          {"dfl", c.weights.dfl},
          {"region", c.weights.region},
          {"balance", c.weights.balance}}},
        {"negatives",
         {{"adversarial_ratio", c.negatives.adversarial_ratio},
          {"random_lo", c.negatives.random_lo},
          {"random_hi", c.negatives.random_hi},
          {"capacity", c.negatives.capacity}}},
        {"data",
         {{"dir", c.data.dir},
          {"scenes", c.data.scenes},
          {"image_size", c.data.image_size},
          {"optical_fraction", c.data.optical_fraction},
          {"iou_cap", c.data.iou_cap},
          {"min_objects", c.data.min_objects},
          {"max_objects", c.data.max_objects}}},
        {"train",
         {{"epochs", c.train.epochs},
          {"batch_size", c.train.batch_size},
          {"lr_init", c.train.lr_init},
          {"weight_decay", c.train.weight_decay},
          {"cosine_final", c.train.cosine_final},
          {"data_ratio", c.train.data_ratio},
          {"val_interval", c.train.val_interval},
          {"adversarial_negatives", c.train.adversarial_negatives}}},
    };
    return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text, const std::string& where) {
    json j = json::parse(text, nullptr, false);
    if (j.is_discarded()) throw IoError(where + ": malformed JSON");

    RunConfig c;
    try {
        reject_unknown(j, {"seed", "mask_ratio", "out_dir", "model", "loss_weights", "negatives",
                           "data", "train"},
                       where);
        take(j, "seed", c.seed);
        take(j, "mask_ratio", c.mask_ratio);
        take(j, "out_dir", c.out_dir);
        if (j.contains("model")) {
            const json& m = j["model"];
            reject_unknown(m, {"channels", "text_dim", "moe", "fusion", "heads"}, where + ".model");
            take(m, "channels", c.model.channels);
            take(m, "text_dim", c.model.text_dim);
            if (m.contains("moe")) {
                const json& mo = m["moe"];
                reject_unknown(mo, {"experts", "top_k", "patch", "rank", "cascades", "temperature"},
                               where + ".model.moe");
                take(mo, "experts", c.model.moe.experts);
                take(mo, "top_k", c.model.moe.top_k);
                take_patch(mo, "patch", c.model.moe.patch);
                take(mo, "rank", c.model.moe.rank);
                take(mo, "cascades", c.model.moe.cascades);
                take(mo, "temperature", c.model.moe.temperature);
            }
            if (m.contains("fusion")) {
                const json& f = m["fusion"];
                reject_unknown(f, {"heads", "embed", "groups"}, where + ".model.fusion");
                take(f, "heads", c.model.fusion.heads);
                take(f, "embed", c.model.fusion.embed);
                take(f, "groups", c.model.fusion.groups);
            }
            if (m.contains("heads")) {
                const json& h = m["heads"];
                reject_unknown(h, {"embed_dim", "bins", "grid_rows", "grid_cols"},
                               where + ".model.heads");
                take(h, "embed_dim", c.model.heads.embed_dim);
                take(h, "bins", c.model.heads.bins);
                take(h, "grid_rows", c.model.heads.grid_rows);
                take(h, "grid_cols", c.model.heads.grid_cols);
            }
        }
        if (j.contains("loss_weights")) {
            const json& w = j["loss_weights"];
            reject_unknown(w, {"cls", "box", "dfl", "region", "balance"}, where + ".loss_weights");
            take(w, "cls", c.weights.cls);
            take(w, "box", c.weights.box);
            take(w, "dfl", c.weights.dfl);
            take(w, "region", c.weights.region);
            take(w, "balance", c.weights.balance);
        }
        if (j.contains("negatives")) {
            const json& n = j["negatives"];
            reject_unknown(n, {"adversarial_ratio", "random_lo", "random_hi", "capacity"},
                           where + ".negatives");
            take(n, "adversarial_ratio", c.negatives.adversarial_ratio);
            take(n, "random_lo", c.negatives.random_lo);
            take(n, "random_hi", c.negatives.random_hi);
            take(n, "capacity", c.negatives.capacity);
        }
        if (j.contains("data")) {
            const json& d = j["data"];
            reject_unknown(d,
                           {"dir", "scenes", "image_size", "optical_fraction", "iou_cap",
                            "min_objects", "max_objects"},
                           where + ".data");
            take(d, "dir", c.data.dir);
            take(d, "scenes", c.data.scenes);
            take(d, "image_size", c.data.image_size);
            take(d, "optical_fraction", c.data.optical_fraction);
            take(d, "iou_cap", c.data.iou_cap);
            take(d, "min_objects", c.data.min_objects);
            take(d, "max_objects", c.data.max_objects);
        }
        if (j.contains("train")) {
            const json& t = j["train"];
            reject_unknown(t,
                           {"epochs", "batch_size", "lr_init", "weight_decay", "cosine_final",
                            "data_ratio", "val_interval", "adversarial_negatives"},
                           where + ".train");
            take(t, "epochs", c.train.epochs);
            take(t, "batch_size", c.train.batch_size);
            take(t, "lr_init", c.train.lr_init);
            take(t, "weight_decay", c.train.weight_decay);
            take(t, "cosine_final", c.train.cosine_final);
            take(t, "data_ratio", c.train.data_ratio);
            take(t, "val_interval", c.train.val_interval);
            take(t, "adversarial_negatives", c.train.adversarial_negatives);
        }
    } catch (const json::exception& e) {
        throw IoError(where + ": " + e.what());
    }

    CG_CHECK(c.train.epochs >= 1 && c.train.batch_size >= 1, "training needs epochs and a batch");
    CG_CHECK(c.train.data_ratio > 0.0 && c.train.data_ratio <= 1.0,
             "data ratio must lie in (0, 1]");
    CG_CHECK(c.mask_ratio >= 0.0 && c.mask_ratio <= 1.0, "mask ratio must lie in [0, 1]");
    CG_CHECK(c.data.image_size % 16 == 0, "image size must be divisible by 16");
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return run_config_from_json(text, path);
}

void save_run_config(const std::string& path, const RunConfig& c) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write config: " + path);
    out << run_config_to_json(c) << "\n";
}

CorpusConfig corpus_config(const RunConfig& c) {
    CorpusConfig cc;
    cc.scenes = c.data.scenes;
    cc.width = c.data.image_size;
    cc.height = c.data.image_size;
    cc.optical_fraction = c.data.optical_fraction;
    cc.min_objects = c.data.min_objects;
    cc.max_objects = c.data.max_objects;
    cc.iou_cap = c.data.iou_cap;
    cc.seed = c.seed;
    return cc;
}

}  // namespace cg
