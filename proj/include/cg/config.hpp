#pragma once

#include <string>

#include "cg/data.hpp"
#include "cg/losses.hpp"
#include "cg/model.hpp"
#include "cg/text.hpp"

namespace cg {

// One JSON document drives every run; unknown keys are rejected so a typo
// cannot silently fall back to a default.

struct DataConfig {
    std::string dir = "data/corpus";
    int scenes = 2400;
    int image_size = 64;
    double optical_fraction = 0.75;
    double iou_cap = 0.1;
    int min_objects = 1;
    int max_objects = 2;
};

struct TrainConfig {
    int epochs = 30;
    int batch_size = 8;
    double lr_init = 2e-3;
    double weight_decay = 0.025;
    double cosine_final = 0.01;
    double data_ratio = 1.0;
    int val_interval = 10;  // epochs between validation passes; 0 disables
    bool adversarial_negatives = true;
};

struct RunConfig {
    uint64_t seed = 7;
    ModelConfig model;
    LossWeights weights;
    NegativeSamplingConfig negatives;
    DataConfig data;
    TrainConfig train;
    double mask_ratio = 0.0;
    std::string out_dir = "runs/default";
};

std::string run_config_to_json(const RunConfig& c);   // canonical single document
RunConfig run_config_from_json(const std::string& text, const std::string& where = "config");
RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& c);

// The generator settings implied by a run: data section plus the run seed.
CorpusConfig corpus_config(const RunConfig& c);

}  // namespace cg
