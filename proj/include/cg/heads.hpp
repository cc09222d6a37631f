#pragma once

#include <vector>

#include "cg/boxes.hpp"
#include "cg/rng.hpp"
#include "cg/tensor.hpp"

namespace cg {

// Dense grounding heads: unit-norm region embeddings scored against text
// embeddings, per-side distance distributions for boxes, and a coarse-grid
// auxiliary classifier.

struct HeadsConfig {
    int embed_dim = 64;  // must match the text embedding width
    int bins = 8;        // R; each side distribution has bins+1 entries
    int grid_rows = 3;
    int grid_cols = 3;
};

struct RegionEmbedParams {
    Tensor w1, b1, w2, b2;  // two 1x1 convolutions with a relu between
    std::vector<double> run_mean, run_var;
    double momentum = 0.1;
    double eps = 1e-5;
};
RegionEmbedParams make_region_embed_params(int channels, int embed_dim, Rng& rng);

// Project, standardize per channel (batch statistics while training, running
// statistics otherwise), then L2-normalize each location. Training mode
// updates the running buffers in place.
Tensor embed_regions(const Tensor& f, RegionEmbedParams& p, bool training);

struct Calibration {
    Tensor gamma, bias;
};
Calibration make_calibration();

// S[b,k,h,w] = gamma * <E[b,:,h,w], t_k> + bias; texts are a frozen [K,D] buffer.
Tensor score_texts(const Tensor& e, std::span<const double> texts, int k_texts,
                   const Calibration& c);

struct BoxHeadParams {
    Tensor w, b;  // 1x1 conv C -> 4*(bins+1)
};
BoxHeadParams make_box_head_params(int channels, int bins, Rng& rng);
Tensor box_side_logits(const Tensor& f, const BoxHeadParams& p);

struct LevelGeometry {
    int stride, h, w;
};

struct Assignment {
    int level = 0;                // index into the geometry list
    std::vector<Loc> locs;        // positive locations (batch, row, col)
    std::vector<double> targets;  // per location: l,t,r,b in stride units
    std::vector<double> centers;  // per location: cx,cy in pixels
};

// Positives are centers inside the half-scaled gt box at the level whose
// stride best matches sqrt(area) (ties to the coarser level); when that set
// is empty the nearest center is assigned. Side targets clamp to [0, bins].
Assignment assign_targets(const Box& gt, int batch_index,
                          const std::vector<LevelGeometry>& levels, int bins);

// Label = row * cols + col of each location center under the thirds-style
// partition of the image plane; boundaries belong to the lower cell.
std::vector<int> region_grid_labels(const LevelGeometry& geo, int img_w, int img_h, int rows,
                                    int cols);

// Expected side distances from softmaxed logits, as a box in pixels.
Box decode_box_values(std::span<const double> side_logits, int bins, double cx, double cy,
                      double stride, double clip_w, double clip_h);

struct GroundLevel {
    int stride = 0, h = 0, w = 0;
    std::vector<double> scores;       // h*w calibrated logits for the query
    std::vector<double> side_logits;  // 4*(bins+1)*h*w, channel-major
};

struct GroundResult {
    Box box;
    double score = 0.0;  // sigmoid of the winning logit
    int level = 0;       // index into the supplied levels
    int loc = 0;         // flat row-major location on that level
};

// Global argmax over every level and location; ties prefer the coarser level
// (larger stride), then the lower flat index. The box is clipped to the image.
GroundResult ground(const std::vector<GroundLevel>& levels, int bins, int img_w, int img_h);

}  // namespace cg
