#include "cg/model.hpp"

#include <cmath>

namespace cg {

Model make_model(const ModelConfig& cfg, Rng& rng) {
    CG_CHECK(cfg.heads.embed_dim == cfg.text_dim,
             "region embedding width must match the text embedding width");
    Model m;
    m.cfg = cfg;
    m.backbone = make_backbone_params(cfg.channels, cfg.moe, rng);
    m.fuse8 = make_fusion_params(cfg.channels, cfg.text_dim, cfg.fusion, rng);
    m.fuse16 = make_fusion_params(cfg.channels, cfg.text_dim, cfg.fusion, rng);
    m.embed8 = make_region_embed_params(cfg.channels, cfg.heads.embed_dim, rng);
    m.embed16 = make_region_embed_params(cfg.channels, cfg.heads.embed_dim, rng);
    m.box8 = make_box_head_params(cfg.channels, cfg.heads.bins, rng);
    m.box16 = make_box_head_params(cfg.channels, cfg.heads.bins, rng);
    m.cal = make_calibration();
    int g = cfg.heads.grid_rows * cfg.heads.grid_cols;
    m.aux_w = Tensor::normal({g, cfg.channels, 1, 1}, rng, std::sqrt(2.0 / cfg.channels));
    m.aux_w.set_requires_grad(true);
    m.aux_b = Tensor::zeros({g});
    m.aux_b.set_requires_grad(true);
    return m;
}

namespace {

void collect_fusion(const std::string& prefix, FusionParams& f,
                    std::vector<std::pair<std::string, Tensor*>>& out) {
    out.emplace_back(prefix + ".phi_w", &f.phi_w);
    out.emplace_back(prefix + ".phi_b", &f.phi_b);
    out.emplace_back(prefix + ".psi_w", &f.psi_w);
    out.emplace_back(prefix + ".psi_b", &f.psi_b);
    out.emplace_back(prefix + ".log_tau", &f.log_tau);
    out.emplace_back(prefix + ".head_bias", &f.head_bias);
    out.emplace_back(prefix + ".log_scale", &f.log_scale);
    out.emplace_back(prefix + ".alpha_gate", &f.alpha_gate);
    out.emplace_back(prefix + ".beta_gate", &f.beta_gate);
}

void collect_embed(const std::string& prefix, RegionEmbedParams& e,
                   std::vector<std::pair<std::string, Tensor*>>& out) {
    out.emplace_back(prefix + ".w1", &e.w1);
    out.emplace_back(prefix + ".b1", &e.b1);
    out.emplace_back(prefix + ".w2", &e.w2);
    out.emplace_back(prefix + ".b2", &e.b2);
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> named_parameters(Model& m) {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("stem.w1", &m.backbone.stem_w1);
    out.emplace_back("stem.b1", &m.backbone.stem_b1);
    out.emplace_back("stem.w2", &m.backbone.stem_w2);
    out.emplace_back("stem.b2", &m.backbone.stem_b2);
    out.emplace_back("stem.w3", &m.backbone.stem_w3);
    out.emplace_back("stem.b3", &m.backbone.stem_b3);
    for (size_t i = 0; i < m.backbone.blocks.size(); ++i) {
        std::string p = "block" + std::to_string(i);
        PlmoeBlockParams& blk = m.backbone.blocks[i];
        out.emplace_back(p + ".daa.cw1", &blk.daa.cw1);
        out.emplace_back(p + ".daa.cb1", &blk.daa.cb1);
        out.emplace_back(p + ".daa.cw2", &blk.daa.cw2);
        out.emplace_back(p + ".daa.cb2", &blk.daa.cb2);
        out.emplace_back(p + ".daa.sw", &blk.daa.sw);
        out.emplace_back(p + ".daa.sb", &blk.daa.sb);
        out.emplace_back(p + ".conv_w", &blk.experts.conv_w);
        out.emplace_back(p + ".conv_b", &blk.experts.conv_b);
        for (size_t e = 0; e < blk.experts.down.size(); ++e) {
            out.emplace_back(p + ".down" + std::to_string(e), &blk.experts.down[e]);
            out.emplace_back(p + ".up" + std::to_string(e), &blk.experts.up[e]);
        }
        out.emplace_back(p + ".prototypes", &blk.experts.prototypes);
        out.emplace_back(p + ".lora_scale", &blk.experts.lora_scale);
    }
    out.emplace_back("down.w", &m.backbone.down_w);
    out.emplace_back("down.b", &m.backbone.down_b);
    collect_fusion("fuse8", m.fuse8, out);
    collect_fusion("fuse16", m.fuse16, out);
    collect_embed("embed8", m.embed8, out);
    collect_embed("embed16", m.embed16, out);
    out.emplace_back("box8.w", &m.box8.w);
    out.emplace_back("box8.b", &m.box8.b);
    out.emplace_back("box16.w", &m.box16.w);
    out.emplace_back("box16.b", &m.box16.b);
    out.emplace_back("cal.gamma", &m.cal.gamma);
    out.emplace_back("cal.bias", &m.cal.bias);
    out.emplace_back("aux.w", &m.aux_w);
    out.emplace_back("aux.b", &m.aux_b);
    return out;
}

std::vector<std::pair<std::string, std::vector<double>*>> named_buffers(Model& m) {
    return {{"embed8.run_mean", &m.embed8.run_mean},
            {"embed8.run_var", &m.embed8.run_var},
            {"embed16.run_mean", &m.embed16.run_mean},
            {"embed16.run_var", &m.embed16.run_var}};
}

namespace {

LevelOutput level_heads(Model& m, const Tensor& fused, const Tensor& texts, int stride,
                        bool training, RegionEmbedParams& embed, const BoxHeadParams& box) {
    LevelOutput out;
    out.embeds = embed_regions(fused, embed, training);
    out.scores = score_texts(out.embeds, texts.data(), texts.dim(0), m.cal);
    out.sides = box_side_logits(fused, box);
    out.geo = {stride, fused.dim(2), fused.dim(3)};
    return out;
}

}  // namespace

ModelOutput model_forward(Model& m, const Tensor& images, const Tensor& texts, bool training,
                          std::vector<std::vector<int>>* plans) {
    CG_CHECK(texts.ndim() == 2 && texts.dim(1) == m.cfg.text_dim,
             "model forward needs a [K,text_dim] text matrix");
    Pyramid py = build_pyramid(images, m.cfg.moe, m.backbone, plans);
    FusedLevel f8 = fuse_level(py.f8, texts, m.cfg.fusion, m.fuse8);
    FusedLevel f16 = fuse_level(py.f16, texts, m.cfg.fusion, m.fuse16);

    ModelOutput out;
    out.l8 = level_heads(m, f8.fused, texts, 8, training, m.embed8, m.box8);
    out.l16 = level_heads(m, f16.fused, texts, 16, training, m.embed16, m.box16);
    out.aux = conv2d(f16.fused, m.aux_w, m.aux_b, 1, 0);
    out.stats = std::move(py.stats);
    return out;
}

GroundResult ground_image(Model& m, const Tensor& image, const std::string& caption) {
    CG_CHECK(image.ndim() == 4 && image.dim(0) == 1, "grounding takes a single image");
    NoGradGuard guard;
    std::vector<double> t = encode_text(caption);
    const int d = static_cast<int>(t.size());
    Tensor texts = Tensor::from({1, d}, std::move(t));
    ModelOutput out = model_forward(m, image, texts, false);

    auto to_level = [](const LevelOutput& lo) {
        GroundLevel lv;
        lv.stride = lo.geo.stride;
        lv.h = lo.geo.h;
        lv.w = lo.geo.w;
        lv.scores.assign(lo.scores.data().begin(), lo.scores.data().end());
        lv.side_logits.assign(lo.sides.data().begin(), lo.sides.data().end());
        return lv;
    };
    std::vector<GroundLevel> levels = {to_level(out.l8), to_level(out.l16)};
    return ground(levels, m.cfg.heads.bins, image.dim(3), image.dim(2));
}

}  // namespace cg
