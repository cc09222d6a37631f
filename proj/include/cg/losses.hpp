#pragma once

#include <span>
#include <string>

#include "cg/tensor.hpp"

namespace cg {

struct LossWeights {
    double cls = 0.5;
    double box = 7.5;
    double dfl = 1.5;
    double region = 1.0;
    double balance = 1.5;
};

// Mean BCE over every (location, text) cell; positive cells carry a quality
// weight (decoded-box IoU, detached), negative cells weight 1.
Tensor cls_loss(const Tensor& logits, std::span<const double> targets,
                std::span<const double> weights);

// Mean (1 - GIoU) over positive locations. pred: [P,4], gt flat [P*4].
Tensor box_loss(const Tensor& pred, std::span<const double> gt);

// Two-neighbor-bin focal regression on side distances in stride units.
Tensor dfl_loss(const Tensor& side_logits, std::span<const double> targets);

// Pixel-wise cross-entropy against the shared location-grid label map.
Tensor region_loss(const Tensor& logits, std::span<const int> labels);

struct LossReport {
    double cls = 0.0, box = 0.0, dfl = 0.0, region = 0.0, balance = 0.0;
    double total = 0.0;
    double routing_entropy = 0.0;
};

// Weighted sum of the five components; throws NumericalError naming the first
// non-finite component. Any component may be undefined (treated as zero).
Tensor total_loss(const Tensor& cls, const Tensor& box, const Tensor& dfl, const Tensor& region,
                  const Tensor& balance, const LossWeights& w, LossReport* report = nullptr);

}  // namespace cg
