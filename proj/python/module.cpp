#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "cg/checkpoint.hpp"
#include "cg/config.hpp"
#include "cg/train.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace cg;

namespace {

struct PyModel {
    RunConfig cfg;
    Model model;
};

PyModel load_py_model(const std::string& path) {
    CheckpointInfo info = peek_checkpoint(path);
    CG_CHECK(!info.config_json.empty(), "checkpoint carries no config snapshot: " + path);
    RunConfig cfg = run_config_from_json(info.config_json, path);
    Rng rng(cfg.seed);
    PyModel pm{cfg, make_model(cfg.model, rng)};
    load_checkpoint(path, pm.model);
    return pm;
}

py::dict ground_dict(const GroundResult& g) {
    py::dict out;
    out["box"] = py::make_tuple(g.box.x1, g.box.y1, g.box.x2, g.box.y2);
    out["score"] = g.score;
    out["level"] = g.level;
    out["location"] = g.loc;
    return out;
}

}  // namespace

PYBIND11_MODULE(crossground, m) {
    m.doc() = "cross-domain visual grounding: corpus generation, training, and inference";

    py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_IOError);
    py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

    m.def("encode_text", &encode_text, py::arg("text"),
          "frozen unit-norm embedding of a caption");
    m.def("direction_from_center", &direction_from_center, py::arg("cx"), py::arg("cy"),
          "direction phrase for a normalized box center");
    m.def("default_config", [] { return run_config_to_json(RunConfig{}); },
          "canonical run configuration JSON with every default");
    m.def(
        "iou",
        [](double ax1, double ay1, double ax2, double ay2, double bx1, double by1, double bx2,
           double by2) { return iou(Box{ax1, ay1, ax2, ay2}, Box{bx1, by1, bx2, by2}); },
        "intersection over union of two corner-form boxes");

    m.def(
        "generate",
        [](const std::string& config_json) {
            RunConfig cfg = run_config_from_json(config_json);
            auto scenes = generate_corpus(corpus_config(cfg));
            auto records = write_corpus(scenes, cfg.data.dir);
            SplitResult split = split_dataset(records, cfg.seed);
            fs::create_directories(cfg.data.dir + "/splits");
            write_id_list(split.train, cfg.data.dir + "/splits/train.txt");
            write_id_list(split.val, cfg.data.dir + "/splits/val.txt");
            write_id_list(split.test, cfg.data.dir + "/splits/test.txt");
            return records.size();
        },
        py::arg("config_json"), "render the synthetic corpus and splits; returns record count");

    m.def(
        "train",
        [](const std::string& config_json) {
            RunConfig cfg = run_config_from_json(config_json);
            LoadedCorpus corpus = load_corpus(cfg.data.dir);
            fs::create_directories(cfg.out_dir);
            Rng rng(cfg.seed);
            Model model = make_model(cfg.model, rng);
            TrainResult res = train_model(model, cfg, corpus, nullptr);
            std::string ckpt = cfg.out_dir + "/checkpoint.bin";
            save_checkpoint(ckpt, model, res.steps, run_config_to_json(cfg));
            py::dict out;
            out["steps"] = res.steps;
            out["final_total"] = res.last.total;
            out["val_mean_iou"] = res.final_val_mean_iou;
            out["checkpoint"] = ckpt;
            return out;
        },
        py::arg("config_json"), "train on the configured corpus and save a checkpoint");

    m.def(
        "evaluate",
        [](const std::string& config_json, const std::string& split) {
            RunConfig cfg = run_config_from_json(config_json);
            PyModel pm = load_py_model(cfg.out_dir + "/checkpoint.bin");
            LoadedCorpus corpus = load_corpus(cfg.data.dir);
            const std::vector<std::string>* ids = nullptr;
            if (split == "train") ids = &corpus.split.train;
            if (split == "val") ids = &corpus.split.val;
            if (split == "test") ids = &corpus.split.test;
            CG_CHECK(ids != nullptr, "unknown split: " + split);
            return metrics_to_json(
                evaluate_split(pm.model, corpus, *ids, cfg.mask_ratio, cfg.seed));
        },
        py::arg("config_json"), py::arg("split") = "test",
        "score the configured checkpoint on a split; returns single-line metrics JSON");

    py::class_<PyModel>(m, "Model")
        .def_static("load", &load_py_model, py::arg("checkpoint"),
                    "rebuild the network from a checkpoint's own config snapshot")
        .def(
            "ground",
            [](PyModel& pm, const std::string& image_path, const std::string& caption) {
                Image img = read_pnm(image_path);
                CG_CHECK(img.w % 16 == 0 && img.h % 16 == 0,
                         "image size must be divisible by 16");
                return ground_dict(ground_image(pm.model, image_to_input(img), caption));
            },
            py::arg("image"), py::arg("caption"),
            "ground one caption on one PNM image; returns box, score, level, location")
        .def_property_readonly(
            "config", [](const PyModel& pm) { return run_config_to_json(pm.cfg); });
}
