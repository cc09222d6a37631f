#include "cg/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "cg/common.hpp"

namespace cg {

namespace {

bool is_word_char(char c) { return std::isalnum((unsigned char)c) != 0; }

std::string lower(const std::string& s) {
    std::string out = s;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return (char)std::tolower(c); });
    return out;
}

struct PhraseHit {
    size_t pos;
    size_t len;
    int cell;
};

// longest-match scan with word boundaries on both sides
std::vector<PhraseHit> find_direction_phrases(const std::string& text) {
    const auto& grid = direction_grid();
    std::vector<int> order(9);
    for (int i = 0; i < 9; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return grid[a].size() > grid[b].size();
    });
    std::string lo = lower(text);
    std::vector<PhraseHit> hits;
    size_t pos = 0;
    while (pos < lo.size()) {
        bool matched = false;
        if (pos == 0 || !is_word_char(lo[pos - 1])) {
            for (int cell : order) {
                const std::string& p = grid[cell];
                if (lo.compare(pos, p.size(), p) != 0) continue;
                size_t end = pos + p.size();
                if (end < lo.size() && is_word_char(lo[end])) continue;
                hits.push_back({pos, p.size(), cell});
                pos = end;
                matched = true;
                break;
            }
        }
        if (!matched) ++pos;
    }
    return hits;
}

}  // namespace

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::string cur;
    for (char c : text) {
        if (is_word_char(c)) {
            cur.push_back((char)std::tolower((unsigned char)c));
        } else if (!cur.empty()) {
            tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) tokens.push_back(cur);
    return tokens;
}

std::vector<double> encode_text(const std::string& text) {
    CG_CHECK(!text.empty(), "encode_text: empty text");
    auto tokens = tokenize(text);
    CG_CHECK(!tokens.empty(), "encode_text: no tokens after normalization");
    std::vector<double> acc(kTextDim, 0.0);
    for (const auto& tok : tokens) {
        Rng r(fnv1a64(tok));
        for (int d = 0; d < kTextDim; ++d) acc[d] += r.uniform(-1.0, 1.0);
    }
    double sq = 0.0;
    for (double v : acc) sq += v * v;
    CG_CHECK(sq > 0.0, "encode_text: text embeds to the zero vector");
    double inv = 1.0 / std::sqrt(sq);
    for (double& v : acc) v *= inv;
    return acc;
}

const std::array<std::string, 9>& direction_grid() {
    static const std::array<std::string, 9> grid = {
        "upper left", "top",    "upper right", "left",       "center",
        "right",      "lower left", "bottom", "lower right"};
    return grid;
}

std::optional<DirectionMention> first_direction_mention(const std::string& text) {
    auto hits = find_direction_phrases(text);
    if (hits.empty()) return std::nullopt;
    return DirectionMention{hits.front().cell, direction_grid()[hits.front().cell]};
}

int direction_cell(double cx, double cy) {
    CG_CHECK(cx >= 0.0 && cx <= 1.0 && cy >= 0.0 && cy <= 1.0,
             "direction_cell: coordinates must lie in [0,1]");
    auto third = [](double v) { return v <= 1.0 / 3.0 ? 0 : (v <= 2.0 / 3.0 ? 1 : 2); };
    return third(cy) * 3 + third(cx);
}

std::string direction_from_center(double cx, double cy) {
    return direction_grid()[direction_cell(cx, cy)];
}

int mirror_cell_h(int cell) {
    CG_CHECK(cell >= 0 && cell < 9, "mirror_cell_h: cell out of range");
    int row = cell / 3, col = cell % 3;
    return row * 3 + (2 - col);
}

int mirror_cell_v(int cell) {
    CG_CHECK(cell >= 0 && cell < 9, "mirror_cell_v: cell out of range");
    int row = cell / 3, col = cell % 3;
    return (2 - row) * 3 + col;
}

const DirectionLexicon& DirectionLexicon::builtin() {
    static const DirectionLexicon lex = [] {
        DirectionLexicon l;
        l.pairs_ = {{"upper left", "upper right"},
                    {"left", "right"},
                    {"lower left", "lower right"},
                    {"top", "bottom"}};
        return l;
    }();
    return lex;
}

DirectionLexicon DirectionLexicon::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open lexicon file: " + path);
    DirectionLexicon lex;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) continue;  // unpaired phrase: excluded from swapping
        std::string a = line.substr(0, tab), b = line.substr(tab + 1);
        CG_CHECK(!a.empty() && !b.empty() && a != b, "lexicon pair must name two distinct phrases");
        lex.pairs_.push_back({a, b});
    }
    for (size_t i = 0; i < lex.pairs_.size(); ++i)
        for (size_t j = i + 1; j < lex.pairs_.size(); ++j) {
            const auto& p = lex.pairs_[i];
            const auto& q = lex.pairs_[j];
            CG_CHECK(p.first != q.first && p.first != q.second && p.second != q.first &&
                         p.second != q.second,
                     "lexicon phrase appears in more than one pair");
        }
    return lex;
}

std::optional<std::string> DirectionLexicon::mirror(const std::string& phrase) const {
    for (const auto& [a, b] : pairs_) {
        if (phrase == a) return b;
        if (phrase == b) return a;
    }
    return std::nullopt;
}

std::optional<std::string> make_orientation_negative(const std::string& text, Rng& rng) {
    return make_orientation_negative(text, rng, DirectionLexicon::builtin());
}

std::optional<std::string> make_orientation_negative(const std::string& text, Rng& rng,
                                                     const DirectionLexicon& lex) {
    auto hits = find_direction_phrases(text);
    std::vector<std::pair<PhraseHit, std::string>> swappable;
    for (const auto& h : hits)
        if (auto m = lex.mirror(direction_grid()[h.cell])) swappable.push_back({h, *m});
    if (swappable.empty()) return std::nullopt;
    const auto& [hit, replacement] =
        swappable[rng.uniform_int(0, (int)swappable.size() - 1)];
    std::string out = text;
    out.replace(hit.pos, hit.len, replacement);
    return out;
}

std::optional<std::string> make_modality_negative(const std::string& text) {
    std::string lo = lower(text);
    struct Span {
        size_t pos, len;
        const char* repl;
    };
    std::vector<Span> spans;
    auto scan = [&](const std::string& word, const char* repl) {
        size_t pos = 0;
        while ((pos = lo.find(word, pos)) != std::string::npos) {
            size_t end = pos + word.size();
            bool lb = pos == 0 || !is_word_char(lo[pos - 1]);
            bool rb = end >= lo.size() || !is_word_char(lo[end]);
            if (lb && rb) spans.push_back({pos, word.size(), repl});
            pos = end;
        }
    };
    scan("optical", "SAR");
    scan("sar", "optical");
    if (spans.empty()) return std::nullopt;
    std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.pos > b.pos; });
    std::string out = text;
    for (const auto& s : spans) out.replace(s.pos, s.len, s.repl);
    return out;
}

std::string rewrite_direction_for_flip(const std::string& text, bool hflip, bool vflip) {
    auto hits = find_direction_phrases(text);
    if (hits.empty()) return text;
    std::string out = text;
    // back-to-front so earlier offsets stay valid
    for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
        int cell = it->cell;
        if (hflip) cell = mirror_cell_h(cell);
        if (vflip) cell = mirror_cell_v(cell);
        out.replace(it->pos, it->len, direction_grid()[cell]);
    }
    return out;
}

BatchTexts sample_batch_texts(const std::vector<std::string>& positives,
                              const std::vector<std::string>& global_pool,
                              const NegativeSamplingConfig& cfg, Rng& rng) {
    CG_CHECK(!positives.empty(), "sample_batch_texts: need at least one positive");
    CG_CHECK(cfg.capacity >= 1 && cfg.random_lo >= 0 && cfg.random_hi >= cfg.random_lo,
             "sample_batch_texts: malformed config");
    BatchTexts out;
    auto contains = [&](const std::string& s) {
        return std::find(out.texts.begin(), out.texts.end(), s) != out.texts.end();
    };
    for (const auto& p : positives)
        if (!contains(p)) {
            out.positive_indices.push_back((int)out.texts.size());
            out.texts.push_back(p);
        }
    int n_pos = (int)out.texts.size();
    CG_CHECK(n_pos <= cfg.capacity, "sample_batch_texts: positives alone exceed capacity");

    int n_adv = (int)std::ceil(cfg.adversarial_ratio * n_pos);
    int added = 0;
    for (int attempt = 0; added < n_adv && attempt < 20 * (n_adv + 1); ++attempt) {
        if ((int)out.texts.size() >= cfg.capacity) break;
        const std::string& base = out.texts[rng.uniform_int(0, n_pos - 1)];
        auto cand = make_orientation_negative(base, rng);
        if (!cand) cand = make_modality_negative(base);
        if (cand && !contains(*cand)) {
            out.texts.push_back(*cand);
            ++added;
        }
    }

    int u = rng.uniform_int(cfg.random_lo, cfg.random_hi);
    if (!global_pool.empty()) {
        int taken = 0;
        for (int attempt = 0; taken < u && attempt < 10 * (u + 1); ++attempt) {
            if ((int)out.texts.size() >= cfg.capacity) break;
            const std::string& cand =
                global_pool[(size_t)rng.uniform_u64(global_pool.size())];
            if (!contains(cand)) {
                out.texts.push_back(cand);
                ++taken;
            }
        }
    }

    for (const auto& cand : global_pool) {
        if ((int)out.texts.size() >= cfg.capacity) break;
        if (!contains(cand)) out.texts.push_back(cand);
    }
    CG_CHECK((int)out.texts.size() == cfg.capacity,
             "sample_batch_texts: pool too small to fill the batch to capacity");
    return out;
}

}  // namespace cg
