#pragma once

#include <functional>
#include <string>
#include <vector>

#include "cg/config.hpp"
#include "cg/data.hpp"
#include "cg/metrics.hpp"
#include "cg/model.hpp"

namespace cg {

// Orchestration: corpus loading, the optimization loop, and evaluation.

struct LoadedCorpus {
    std::string root;
    std::vector<AnnotationRecord> records;  // cleaned, in file order
    SplitResult split;
};
LoadedCorpus load_corpus(const std::string& dir);

struct BatchLoss {
    Tensor total;
    LossReport report;
};

// Builds the full loss graph for one batch of samples against a text pool
// drawn by the negative-sampling protocol.
BatchLoss batch_loss(Model& m, const RunConfig& cfg, const std::vector<Sample>& batch,
                     const std::vector<std::string>& global_pool, Rng& rng);

using StepLogger = std::function<void(int64_t step, double lr, const LossReport&)>;
using ValLogger = std::function<void(int epoch, const MetricsReport&)>;

struct TrainResult {
    int64_t steps = 0;
    LossReport last;
    double final_val_mean_iou = -1.0;  // -1 when validation never ran
};

// Deterministic under cfg.seed. A non-finite loss propagates as
// NumericalError; on_step has already seen every completed step.
TrainResult train_model(Model& m, const RunConfig& cfg, const LoadedCorpus& corpus,
                        const StepLogger& on_step, const ValLogger& on_val = nullptr);

// Grounds each listed sample's caption (after optional caption masking) and
// scores the predictions; unreadable images are skipped and reported.
MetricsReport evaluate_split(Model& m, const LoadedCorpus& corpus,
                             const std::vector<std::string>& ids, double mask_ratio,
                             uint64_t mask_seed, std::vector<std::string>* skipped = nullptr);

double probe_accuracy(Model& m, const std::vector<ProbeScene>& scenes);

// Exact seeded prefix of the shuffled train ids; nested across ratios.
std::vector<std::string> train_subset(const std::vector<std::string>& train_ids, double ratio,
                                      uint64_t seed);

}  // namespace cg
