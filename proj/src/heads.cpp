#include "cg/heads.hpp"

#include <algorithm>
#include <cmath>

namespace cg {

RegionEmbedParams make_region_embed_params(int channels, int embed_dim, Rng& rng) {
    RegionEmbedParams p;
    p.w1 = Tensor::normal({embed_dim, channels, 1, 1}, rng, std::sqrt(2.0 / channels));
    p.w1.set_requires_grad(true);
    p.b1 = Tensor::zeros({embed_dim});
    p.b1.set_requires_grad(true);
    p.w2 = Tensor::normal({embed_dim, embed_dim, 1, 1}, rng, std::sqrt(2.0 / embed_dim));
    p.w2.set_requires_grad(true);
    p.b2 = Tensor::zeros({embed_dim});
    p.b2.set_requires_grad(true);
    p.run_mean.assign(embed_dim, 0.0);
    p.run_var.assign(embed_dim, 1.0);
    return p;
}

Tensor embed_regions(const Tensor& f, RegionEmbedParams& p, bool training) {
    Tensor z = conv2d(relu(conv2d(f, p.w1, p.b1, 1, 0)), p.w2, p.b2, 1, 0);
    Tensor y;
    if (training) {
        std::vector<double> mean, var;
        y = batch_standardize(z, p.eps, &mean, &var);
        for (size_t c = 0; c < mean.size(); ++c) {
            p.run_mean[c] += p.momentum * (mean[c] - p.run_mean[c]);
            p.run_var[c] += p.momentum * (var[c] - p.run_var[c]);
        }
    } else {
        y = standardize_const(z, p.run_mean, p.run_var, p.eps);
    }
    return l2_normalize_locations(y);
}

Calibration make_calibration() {
    Calibration c;
    c.gamma = Tensor::full({1}, 10.0);
    c.gamma.set_requires_grad(true);
    c.bias = Tensor::full({1}, -4.0);
    c.bias.set_requires_grad(true);
    return c;
}

Tensor score_texts(const Tensor& e, std::span<const double> texts, int k_texts,
                   const Calibration& c) {
    return add_scalar_t(mul_scalar_t(region_text_scores(e, texts, k_texts), c.gamma), c.bias);
}

BoxHeadParams make_box_head_params(int channels, int bins, Rng& rng) {
    BoxHeadParams p;
    p.w = Tensor::normal({4 * (bins + 1), channels, 1, 1}, rng, std::sqrt(2.0 / channels));
    p.w.set_requires_grad(true);
    p.b = Tensor::zeros({4 * (bins + 1)});
    p.b.set_requires_grad(true);
    return p;
}

Tensor box_side_logits(const Tensor& f, const BoxHeadParams& p) {
    return conv2d(f, p.w, p.b, 1, 0);
}

Assignment assign_targets(const Box& gt, int batch_index,
                          const std::vector<LevelGeometry>& levels, int bins) {
    CG_CHECK(gt.well_ordered() && gt.area() > 0.0, "assignment needs a positive-area box");
    CG_CHECK(!levels.empty(), "assignment needs at least one level");

    double side = std::sqrt(gt.area());
    Assignment out;
    double best = -1.0;
    for (size_t l = 0; l < levels.size(); ++l) {
        double d = std::abs(levels[l].stride - side);
        if (best < 0.0 || d < best || (d == best && levels[l].stride > levels[out.level].stride)) {
            best = d;
            out.level = (int)l;
        }
    }
    const LevelGeometry& geo = levels[out.level];

    double cx = gt.cx(), cy = gt.cy();
    double x1s = cx - gt.w() / 4.0, x2s = cx + gt.w() / 4.0;
    double y1s = cy - gt.h() / 4.0, y2s = cy + gt.h() / 4.0;
    for (int i = 0; i < geo.h; ++i)
        for (int j = 0; j < geo.w; ++j) {
            double lx = (j + 0.5) * geo.stride, ly = (i + 0.5) * geo.stride;
            if (lx >= x1s && lx <= x2s && ly >= y1s && ly <= y2s)
                out.locs.push_back({batch_index, i, j});
        }
    if (out.locs.empty()) {
        int bi = 0, bj = 0;
        double bd = -1.0;
        for (int i = 0; i < geo.h; ++i)
            for (int j = 0; j < geo.w; ++j) {
                double dx = (j + 0.5) * geo.stride - cx, dy = (i + 0.5) * geo.stride - cy;
                double d = dx * dx + dy * dy;
                if (bd < 0.0 || d < bd) {
                    bd = d;
                    bi = i;
                    bj = j;
                }
            }
        out.locs.push_back({batch_index, bi, bj});
    }

    for (const Loc& loc : out.locs) {
        double lx = (loc.j + 0.5) * geo.stride, ly = (loc.i + 0.5) * geo.stride;
        out.centers.push_back(lx);
        out.centers.push_back(ly);
        double sides[4] = {(lx - gt.x1) / geo.stride, (ly - gt.y1) / geo.stride,
                           (gt.x2 - lx) / geo.stride, (gt.y2 - ly) / geo.stride};
        for (double s : sides) out.targets.push_back(std::clamp(s, 0.0, (double)bins));
    }
    return out;
}

namespace {

int partition_cell(double v, int n) {
    return std::clamp((int)std::ceil(v * n) - 1, 0, n - 1);
}

}  // namespace

std::vector<int> region_grid_labels(const LevelGeometry& geo, int img_w, int img_h, int rows,
                                    int cols) {
    CG_CHECK(rows >= 1 && cols >= 1, "grid needs at least one cell");
    std::vector<int> labels((size_t)geo.h * geo.w);
    for (int i = 0; i < geo.h; ++i)
        for (int j = 0; j < geo.w; ++j) {
            int row = partition_cell((i + 0.5) * geo.stride / img_h, rows);
            int col = partition_cell((j + 0.5) * geo.stride / img_w, cols);
            labels[(size_t)i * geo.w + j] = row * cols + col;
        }
    return labels;
}

Box decode_box_values(std::span<const double> side_logits, int bins, double cx, double cy,
                      double stride, double clip_w, double clip_h) {
    int m = bins + 1;
    CG_CHECK((int)side_logits.size() == 4 * m, "decode: wrong logit count for one location");
    double dist[4];
    for (int s = 0; s < 4; ++s) {
        const double* row = side_logits.data() + s * m;
        double mx = *std::max_element(row, row + m);
        double z = 0.0, acc = 0.0;
        for (int j = 0; j < m; ++j) {
            double e = std::exp(row[j] - mx);
            z += e;
            acc += j * e;
        }
        dist[s] = stride * acc / z;
    }
    Box b{cx - dist[0], cy - dist[1], cx + dist[2], cy + dist[3]};
    if (clip_w >= 0.0) {
        b.x1 = std::clamp(b.x1, 0.0, clip_w);
        b.x2 = std::clamp(b.x2, 0.0, clip_w);
    }
    if (clip_h >= 0.0) {
        b.y1 = std::clamp(b.y1, 0.0, clip_h);
        b.y2 = std::clamp(b.y2, 0.0, clip_h);
    }
    return b;
}

GroundResult ground(const std::vector<GroundLevel>& levels, int bins, int img_w, int img_h) {
    CG_CHECK(!levels.empty(), "grounding needs at least one level");
    int m = bins + 1;
    std::vector<size_t> order(levels.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return levels[a].stride > levels[b].stride;
    });

    GroundResult res;
    bool found = false;
    double best = 0.0;
    for (size_t oi : order) {
        const GroundLevel& lv = levels[oi];
        CG_CHECK((int)lv.scores.size() == lv.h * lv.w, "grounding: score map size mismatch");
        CG_CHECK((int)lv.side_logits.size() == 4 * m * lv.h * lv.w,
                 "grounding: side logit size mismatch");
        for (int k = 0; k < lv.h * lv.w; ++k) {
            if (!found || lv.scores[k] > best) {
                found = true;
                best = lv.scores[k];
                res.level = (int)oi;
                res.loc = k;
            }
        }
    }
    const GroundLevel& lv = levels[res.level];
    int i = res.loc / lv.w, j = res.loc % lv.w;
    int hw = lv.h * lv.w;
    std::vector<double> logits(4 * m);
    for (int ch = 0; ch < 4 * m; ++ch) logits[ch] = lv.side_logits[(size_t)ch * hw + res.loc];
    res.box = decode_box_values(logits, bins, (j + 0.5) * lv.stride, (i + 0.5) * lv.stride,
                                lv.stride, img_w, img_h);
    res.score = 1.0 / (1.0 + std::exp(-best));
    return res;
}

}  // namespace cg
