#include "cg/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "cg/common.hpp"
#include "cg/losses.hpp"
#include "cg/optim.hpp"
#include "cg/text.hpp"

namespace cg {

namespace {

std::unordered_map<std::string, const AnnotationRecord*> index_by_id(
    const std::vector<AnnotationRecord>& records) {
    std::unordered_map<std::string, const AnnotationRecord*> m;
    m.reserve(records.size());
    for (const auto& r : records) m[r.id] = &r;
    return m;
}

std::vector<AnnotationRecord> records_for_ids(const LoadedCorpus& corpus,
                                              const std::vector<std::string>& ids) {
    auto index = index_by_id(corpus.records);
    std::vector<AnnotationRecord> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = index.find(id);
        CG_CHECK(it != index.end(), "split id not present in annotations: " + id);
        out.push_back(*it->second);
    }
    return out;
}

Tensor encode_pool(const std::vector<std::string>& texts) {
    const int k = static_cast<int>(texts.size());
    std::vector<double> flat(static_cast<size_t>(k) * kTextDim);
    for (int i = 0; i < k; ++i) {
        std::vector<double> v = encode_text(texts[i]);
        std::copy(v.begin(), v.end(), flat.begin() + static_cast<size_t>(i) * kTextDim);
    }
    return Tensor::from({k, kTextDim}, std::move(flat));
}

struct LevelTargets {
    std::vector<double> cls_targets, cls_weights;
    std::vector<Loc> locs;
    std::vector<double> gt_flat;      // x1,y1,x2,y2 per positive location
    std::vector<double> centers;      // cx,cy per positive location
    std::vector<double> side_targets; // l,t,r,b per positive location, stride units
};

// Side logits for one location, channel-major, read off the forward values.
std::vector<double> side_logits_at(const Tensor& sides, const Loc& loc) {
    const int c4 = sides.dim(1), h = sides.dim(2), w = sides.dim(3);
    std::vector<double> v(static_cast<size_t>(c4));
    std::span<const double> d = sides.data();
    for (int c = 0; c < c4; ++c)
        v[static_cast<size_t>(c)] = d[((static_cast<size_t>(loc.b) * c4 + c) * h + loc.i) * w + loc.j];
    return v;
}

// Box and distribution-focal terms for one level's positive locations,
// combined later in proportion to each level's location count.
struct LevelLoss {
    Tensor box, dfl;
    int count = 0;
};

LevelLoss level_box_losses(const LevelOutput& level, const LevelTargets& t, int bins) {
    LevelLoss out;
    out.count = static_cast<int>(t.locs.size());
    if (out.count == 0) return out;
    const int r1 = bins + 1;
    Tensor rows = gather_locations(level.sides, t.locs);              // [P, 4*(bins+1)]
    Tensor per_side = reshape(rows, {out.count * 4, r1});             // [4P, bins+1]
    out.dfl = dfl_rows(per_side, t.side_targets);

    std::vector<double> bin_centers(static_cast<size_t>(r1));
    std::iota(bin_centers.begin(), bin_centers.end(), 0.0);
    Tensor expected = matmul(softmax_rows(per_side), Tensor::from({r1, 1}, bin_centers));
    Tensor sides = reshape(expected, {out.count, 4});                 // stride units
    Tensor pred = decode_box_rows(sides, t.centers, level.geo.stride, -1.0, -1.0);
    out.box = box_loss(pred, t.gt_flat);
    return out;
}

Tensor blend_by_count(const Tensor& a, int na, const Tensor& b, int nb) {
    if (!a.defined()) return b;
    if (!b.defined()) return a;
    double total = static_cast<double>(na) + static_cast<double>(nb);
    return add(scale(a, na / total), scale(b, nb / total));
}

}  // namespace

LoadedCorpus load_corpus(const std::string& dir) {
    LoadedCorpus c;
    c.root = dir;
    c.records = clean_annotations(read_annotations(dir + "/annotations.jsonl")).kept;
    c.split.train = read_id_list(dir + "/splits/train.txt");
    c.split.val = read_id_list(dir + "/splits/val.txt");
    c.split.test = read_id_list(dir + "/splits/test.txt");
    return c;
}

std::vector<std::string> train_subset(const std::vector<std::string>& train_ids, double ratio,
                                      uint64_t seed) {
    CG_CHECK(ratio > 0.0 && ratio <= 1.0, "data ratio must be in (0, 1]");
    std::vector<std::string> ids = train_ids;
    Rng rng(seed ^ fnv1a64("ratio"));
    rng.shuffle(ids);
    auto keep = static_cast<size_t>(std::llround(ratio * static_cast<double>(ids.size())));
    keep = std::clamp<size_t>(keep, ids.empty() ? 0 : 1, ids.size());
    ids.resize(keep);
    return ids;
}

BatchLoss batch_loss(Model& m, const RunConfig& cfg, const std::vector<Sample>& batch,
                     const std::vector<std::string>& global_pool, Rng& rng) {
    CG_CHECK(!batch.empty(), "training batch must be non-empty");
    const int bins = m.cfg.heads.bins;

    std::vector<const Image*> imgs;
    imgs.reserve(batch.size());
    for (const Sample& s : batch) imgs.push_back(&s.image);
    Tensor images = images_to_batch(imgs);
    const int img_h = images.dim(2), img_w = images.dim(3);

    // Distinct captions form the positive set; each sample points at its own.
    std::vector<std::string> positives;
    std::vector<int> pos_of_sample(batch.size());
    for (size_t b = 0; b < batch.size(); ++b) {
        auto it = std::find(positives.begin(), positives.end(), batch[b].caption);
        if (it == positives.end()) {
            pos_of_sample[b] = static_cast<int>(positives.size());
            positives.push_back(batch[b].caption);
        } else {
            pos_of_sample[b] = static_cast<int>(it - positives.begin());
        }
    }
    NegativeSamplingConfig neg = cfg.negatives;
    if (!cfg.train.adversarial_negatives) neg.adversarial_ratio = 0.0;
    BatchTexts pool = sample_batch_texts(positives, global_pool, neg, rng);
    const int k_texts = static_cast<int>(pool.texts.size());

    ModelOutput out = model_forward(m, images, encode_pool(pool.texts), true);

    const std::vector<LevelGeometry> levels = {out.l8.geo, out.l16.geo};
    const LevelOutput* level_out[2] = {&out.l8, &out.l16};
    LevelTargets targets[2];
    for (int l = 0; l < 2; ++l) {
        size_t cells = static_cast<size_t>(batch.size()) * k_texts * levels[l].h * levels[l].w;
        targets[l].cls_targets.assign(cells, 0.0);
        targets[l].cls_weights.assign(cells, 1.0);
    }

    for (size_t b = 0; b < batch.size(); ++b) {
        Assignment a = assign_targets(batch[b].box, static_cast<int>(b), levels, bins);
        LevelTargets& t = targets[a.level];
        const LevelGeometry& geo = levels[a.level];
        const int k = pool.positive_indices[static_cast<size_t>(pos_of_sample[b])];
        for (size_t p = 0; p < a.locs.size(); ++p) {
            const Loc& loc = a.locs[p];
            size_t cell = ((static_cast<size_t>(loc.b) * k_texts + k) * geo.h + loc.i) * geo.w + loc.j;
            t.cls_targets[cell] = 1.0;
            // Quality weight: IoU of the current decoded box, values only.
            std::vector<double> logits = side_logits_at(level_out[a.level]->sides, loc);
            double cx = a.centers[2 * p], cy = a.centers[2 * p + 1];
            Box decoded = decode_box_values(logits, bins, cx, cy, geo.stride, img_w, img_h);
            t.cls_weights[cell] = iou(decoded, batch[b].box);

            t.locs.push_back(loc);
            t.centers.insert(t.centers.end(), {cx, cy});
            t.gt_flat.insert(t.gt_flat.end(),
                             {batch[b].box.x1, batch[b].box.y1, batch[b].box.x2, batch[b].box.y2});
            t.side_targets.insert(t.side_targets.end(), a.targets.begin() + 4 * p,
                                  a.targets.begin() + 4 * p + 4);
        }
    }

    Tensor cls8 = cls_loss(out.l8.scores, targets[0].cls_targets, targets[0].cls_weights);
    Tensor cls16 = cls_loss(out.l16.scores, targets[1].cls_targets, targets[1].cls_weights);
    Tensor cls = blend_by_count(cls8, static_cast<int>(targets[0].cls_targets.size()), cls16,
                                static_cast<int>(targets[1].cls_targets.size()));

    LevelLoss bx8 = level_box_losses(out.l8, targets[0], bins);
    LevelLoss bx16 = level_box_losses(out.l16, targets[1], bins);
    Tensor box = blend_by_count(bx8.box, bx8.count, bx16.box, bx16.count);
    Tensor dfl = blend_by_count(bx8.dfl, bx8.count, bx16.dfl, bx16.count);

    std::vector<int> labels = region_grid_labels(out.l16.geo, img_w, img_h, m.cfg.heads.grid_rows,
                                                 m.cfg.heads.grid_cols);
    Tensor region = region_loss(out.aux, labels);

    Tensor balance;
    double entropy = 0.0;
    for (const RoutingStats& s : out.stats) {
        Tensor lb = load_balance_loss(s, m.cfg.moe.experts);
        balance = balance.defined() ? add(balance, lb) : lb;
        entropy += s.entropy();
    }
    if (!out.stats.empty()) {
        balance = scale(balance, 1.0 / static_cast<double>(out.stats.size()));
        entropy /= static_cast<double>(out.stats.size());
    }

    BatchLoss result;
    result.report.routing_entropy = entropy;
    result.total = total_loss(cls, box, dfl, region, balance, cfg.weights, &result.report);
    return result;
}

TrainResult train_model(Model& m, const RunConfig& cfg, const LoadedCorpus& corpus,
                        const StepLogger& on_step, const ValLogger& on_val) {
    std::vector<std::string> ids = train_subset(corpus.split.train, cfg.train.data_ratio, cfg.seed);
    CG_CHECK(!ids.empty(), "training split is empty");
    std::vector<AnnotationRecord> records = records_for_ids(corpus, ids);

    std::vector<Sample> samples;
    std::vector<std::string> pool;
    samples.reserve(records.size());
    pool.reserve(records.size());
    for (const auto& r : records) {
        samples.push_back(record_to_sample(r, corpus.root));
        pool.push_back(r.caption);
    }

    AdamWConfig decay_cfg;
    decay_cfg.lr = cfg.train.lr_init;
    decay_cfg.weight_decay = cfg.train.weight_decay;
    AdamWConfig plain_cfg = decay_cfg;
    plain_cfg.weight_decay = 0.0;
    AdamW decayed(decay_cfg), plain(plain_cfg);
    for (auto& [name, p] : named_parameters(m)) {
        (p->ndim() >= 2 ? decayed : plain).add_param(*p);
    }

    const int n = static_cast<int>(samples.size());
    const int bs = cfg.train.batch_size;
    const int64_t steps_per_epoch = (n + bs - 1) / bs;
    const int64_t total_steps = steps_per_epoch * cfg.train.epochs;
    CosineSchedule sched(cfg.train.lr_init, cfg.train.lr_init * cfg.train.cosine_final, total_steps);

    Rng text_rng(cfg.seed ^ fnv1a64("negatives"));
    TrainResult result;
    int64_t step = 0;

    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        std::vector<int> order(samples.size());
        std::iota(order.begin(), order.end(), 0);
        Rng shuffle_rng(cfg.seed ^ fnv1a64("order") ^
                        (static_cast<uint64_t>(epoch) * 0x9e3779b97f4a7c15ULL));
        shuffle_rng.shuffle(order);

        for (int start = 0; start < n; start += bs) {
            std::vector<Sample> batch;
            batch.reserve(static_cast<size_t>(bs));
            for (int i = start; i < std::min(start + bs, n); ++i)
                batch.push_back(samples[static_cast<size_t>(order[static_cast<size_t>(i)])]);

            double lr = sched.lr_at(step);
            decayed.set_lr(lr);
            plain.set_lr(lr);

            BatchLoss loss = batch_loss(m, cfg, batch, pool, text_rng);
            loss.total.backward();
            decayed.step();
            plain.step();
            decayed.zero_grad();
            plain.zero_grad();
            for (auto& block : m.backbone.blocks) renormalize_prototypes(block.experts);

            ++step;
            result.last = loss.report;
            if (on_step) on_step(step, lr, loss.report);
        }

        bool last_epoch = epoch + 1 == cfg.train.epochs;
        if (cfg.train.val_interval > 0 &&
            ((epoch + 1) % cfg.train.val_interval == 0 || last_epoch)) {
            MetricsReport val = evaluate_split(m, corpus, corpus.split.val, 0.0, cfg.seed);
            result.final_val_mean_iou = val.overall.mean_iou;
            if (on_val) on_val(epoch + 1, val);
        }
    }
    result.steps = step;
    return result;
}

MetricsReport evaluate_split(Model& m, const LoadedCorpus& corpus,
                             const std::vector<std::string>& ids, double mask_ratio,
                             uint64_t mask_seed, std::vector<std::string>* skipped) {
    std::vector<AnnotationRecord> records = records_for_ids(corpus, ids);
    if (mask_ratio > 0.0) {
        Rng rng(mask_seed ^ fnv1a64("mask"));
        records = mask_captions(records, mask_ratio, rng);
    }

    std::vector<EvalRecord> evals;
    evals.reserve(records.size());
    for (const auto& r : records) {
        Sample s;
        try {
            s = record_to_sample(r, corpus.root);
        } catch (const IoError&) {
            if (skipped) skipped->push_back(r.id);
            continue;
        }
        GroundResult g = ground_image(m, image_to_input(s.image), r.caption);
        EvalRecord e;
        e.id = r.id;
        e.pred = g.box;
        e.gt = r.box;
        e.domain = r.domain;
        e.has_direction = first_direction_mention(r.caption).has_value();
        evals.push_back(std::move(e));
    }
    return compute_metrics(evals);
}

double probe_accuracy(Model& m, const std::vector<ProbeScene>& scenes) {
    std::vector<ProbePair> pairs;
    pairs.reserve(scenes.size());
    for (const ProbeScene& p : scenes) {
        GroundResult g = ground_image(m, image_to_input(p.image), p.caption);
        pairs.push_back({p.target, p.distractor, g.box});
    }
    return direction_probe(pairs);
}

}  // namespace cg
