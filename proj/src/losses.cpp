#include "cg/losses.hpp"

#include <cmath>

namespace cg {

Tensor cls_loss(const Tensor& logits, std::span<const double> targets,
                std::span<const double> weights) {
    CG_CHECK(!targets.empty(), "classification loss needs at least one cell");
    for (double t : targets)
        CG_CHECK(t == 0.0 || t == 1.0, "classification targets must be 0 or 1");
    return scale(bce_logits_weighted_sum(logits, targets, weights), 1.0 / (double)targets.size());
}

Tensor box_loss(const Tensor& pred, std::span<const double> gt) {
    CG_CHECK(pred.ndim() == 2 && pred.dim(0) >= 1, "box loss needs at least one positive");
    return mean_all(giou_loss_rows(pred, gt));
}

Tensor dfl_loss(const Tensor& side_logits, std::span<const double> targets) {
    return dfl_rows(side_logits, targets);
}

Tensor region_loss(const Tensor& logits, std::span<const int> labels) {
    return ce_spatial(logits, labels);
}

namespace {

double finite_item(const Tensor& t, const char* name) {
    if (!t.defined()) return 0.0;
    double v = t.item();
    if (!std::isfinite(v))
        throw NumericalError(std::string("loss component is not finite: ") + name);
    return v;
}

}  // namespace

Tensor total_loss(const Tensor& cls, const Tensor& box, const Tensor& dfl, const Tensor& region,
                  const Tensor& balance, const LossWeights& w, LossReport* report) {
    LossReport r;
    r.cls = finite_item(cls, "cls");
    r.box = finite_item(box, "box");
    r.dfl = finite_item(dfl, "dfl");
    r.region = finite_item(region, "region");
    r.balance = finite_item(balance, "balance");

    Tensor total;
    auto accumulate = [&total](const Tensor& t, double weight) {
        if (!t.defined()) return;
        Tensor term = scale(t, weight);
        total = total.defined() ? add(total, term) : term;
    };
    accumulate(cls, w.cls);
    accumulate(box, w.box);
    accumulate(dfl, w.dfl);
    accumulate(region, w.region);
    accumulate(balance, w.balance);
    CG_CHECK(total.defined(), "total loss needs at least one component");

    r.total = total.item();
    if (!std::isfinite(r.total)) throw NumericalError("total loss is not finite");
    if (report) {
        r.routing_entropy = report->routing_entropy;
        *report = r;
    }
    return total;
}

}  // namespace cg
