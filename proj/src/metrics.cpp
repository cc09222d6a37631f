#include "cg/metrics.hpp"

#include <algorithm>
#include <map>

#include <json.hpp>

namespace cg {

namespace {

void check_records(const std::vector<EvalRecord>& records, const char* op) {
    CG_CHECK(!records.empty(), std::string(op) + ": empty record set");
    for (const auto& r : records)
        CG_CHECK(r.pred.well_ordered() && r.gt.well_ordered(),
                 std::string(op) + ": box corners out of order");
}

}  // namespace

double pr_at(const std::vector<EvalRecord>& records, double t) {
    check_records(records, "pr_at");
    int hits = 0;
    for (const auto& r : records)
        if (iou(r.pred, r.gt) >= t) ++hits;
    return 100.0 * hits / (double)records.size();
}

double mean_iou(const std::vector<EvalRecord>& records) {
    check_records(records, "mean_iou");
    double acc = 0.0;
    for (const auto& r : records) acc += iou(r.pred, r.gt);
    return 100.0 * acc / (double)records.size();
}

double cum_iou(const std::vector<EvalRecord>& records) {
    check_records(records, "cum_iou");
    double inter = 0.0, uni = 0.0;
    for (const auto& r : records) {
        inter += intersection_area(r.pred, r.gt);
        uni += union_area(r.pred, r.gt);
    }
    CG_CHECK(uni > 0.0, "cum_iou: total union area is zero");
    return 100.0 * inter / uni;
}

namespace {

MetricsSummary summarize(const std::vector<EvalRecord>& records) {
    MetricsSummary s;
    s.pr50 = pr_at(records, 0.5);
    s.pr60 = pr_at(records, 0.6);
    s.pr70 = pr_at(records, 0.7);
    s.pr80 = pr_at(records, 0.8);
    s.pr90 = pr_at(records, 0.9);
    s.mean_iou = mean_iou(records);
    s.cum_iou = cum_iou(records);
    s.n = (int)records.size();
    return s;
}

nlohmann::json summary_json(const MetricsSummary& s) {
    return nlohmann::json{{"pr50", s.pr50},         {"pr60", s.pr60},
                          {"pr70", s.pr70},         {"pr80", s.pr80},
                          {"pr90", s.pr90},         {"mean_iou", s.mean_iou},
                          {"cum_iou", s.cum_iou},   {"n", s.n}};
}

}  // namespace

MetricsReport compute_metrics(const std::vector<EvalRecord>& records) {
    MetricsReport rep;
    rep.overall = summarize(records);
    std::map<std::string, std::vector<EvalRecord>> by_domain;
    for (const auto& r : records) by_domain[r.domain].push_back(r);
    for (const auto& [name, recs] : by_domain) rep.domains.push_back({name, summarize(recs)});
    return rep;
}

std::string metrics_to_json(const MetricsReport& report) {
    nlohmann::json j = summary_json(report.overall);
    nlohmann::json dom = nlohmann::json::object();
    for (const auto& [name, s] : report.domains) dom[name] = summary_json(s);
    j["domains"] = dom;
    return j.dump();
}

double direction_probe(const std::vector<ProbePair>& pairs) {
    CG_CHECK(!pairs.empty(), "direction_probe: empty probe set");
    int hits = 0;
    for (const auto& p : pairs)
        if (iou(p.predicted, p.target) > iou(p.predicted, p.distractor)) ++hits;
    return (double)hits / (double)pairs.size();
}

}  // namespace cg
