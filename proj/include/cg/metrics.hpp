#pragma once

#include <string>
#include <vector>

#include "cg/boxes.hpp"

namespace cg {

struct EvalRecord {
    std::string id;
    Box pred;
    Box gt;
    std::string domain;
    bool has_direction = true;
};

double pr_at(const std::vector<EvalRecord>& records, double t);   // percentage
double mean_iou(const std::vector<EvalRecord>& records);          // percentage
double cum_iou(const std::vector<EvalRecord>& records);           // percentage

struct MetricsSummary {
    double pr50 = 0, pr60 = 0, pr70 = 0, pr80 = 0, pr90 = 0;
    double mean_iou = 0, cum_iou = 0;
    int n = 0;
};

struct MetricsReport {
    MetricsSummary overall;
    std::vector<std::pair<std::string, MetricsSummary>> domains;  // sorted by name
};

MetricsReport compute_metrics(const std::vector<EvalRecord>& records);
std::string metrics_to_json(const MetricsReport& report);  // single line

// One mirrored-pair probe item: the box named by the caption, the mirrored
// same-category distractor, and what the model grounded.
struct ProbePair {
    Box target;
    Box distractor;
    Box predicted;
};

// Fraction of items whose prediction overlaps the named object strictly more
// than the mirrored distractor.
double direction_probe(const std::vector<ProbePair>& pairs);

}  // namespace cg
