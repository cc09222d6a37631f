#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cg/rng.hpp"

namespace cg {

// Frozen deterministic text embedder plus the direction/modality vocabulary
// used for caption generation, augmentation rewrites, and hard negatives.

constexpr int kTextDim = 64;

std::vector<std::string> tokenize(const std::string& text);
std::vector<double> encode_text(const std::string& text);  // unit-norm kTextDim vector

// Nine direction phrases on a 3x3 grid (row-major, top row first).
const std::array<std::string, 9>& direction_grid();

// Thirds partition of the unit square; boundaries fall to the lower cell.
int direction_cell(double cx, double cy);  // 0..8 row-major
std::string direction_from_center(double cx, double cy);
int mirror_cell_h(int cell);  // left-right flip
int mirror_cell_v(int cell);  // top-bottom flip

// First direction phrase occurring in a text, with its grid cell.
struct DirectionMention {
    int cell;
    std::string phrase;
};
std::optional<DirectionMention> first_direction_mention(const std::string& text);

// Swap table for hard orientation negatives. Left-right pairs within each
// row; the middle column pairs top with bottom; center has no counterpart.
class DirectionLexicon {
public:
    static const DirectionLexicon& builtin();
    static DirectionLexicon load(const std::string& path);

    std::optional<std::string> mirror(const std::string& phrase) const;
    const std::vector<std::pair<std::string, std::string>>& pairs() const { return pairs_; }

private:
    std::vector<std::pair<std::string, std::string>> pairs_;  // stored one way, looked up both
};

// Replaces one direction phrase (chosen by rng when several occur) with its
// swap-table counterpart. Empty result when no swappable phrase occurs.
std::optional<std::string> make_orientation_negative(const std::string& text, Rng& rng);
std::optional<std::string> make_orientation_negative(const std::string& text, Rng& rng,
                                                     const DirectionLexicon& lex);

// Swaps every modality word to the opposite one ("optical" <-> "SAR",
// case-insensitive match, canonical replacement). Empty when neither occurs.
std::optional<std::string> make_modality_negative(const std::string& text);

// Rewrites the direction phrase in a caption under a geometric flip so the
// caption stays true for the transformed image. Identity when no phrase.
std::string rewrite_direction_for_flip(const std::string& text, bool hflip, bool vflip);

struct NegativeSamplingConfig {
    double adversarial_ratio = 0.5;
    int random_lo = 0;
    int random_hi = 10;
    int capacity = 20;
};

struct BatchTexts {
    std::vector<std::string> texts;
    std::vector<int> positive_indices;  // positions of the positives inside texts
};

// Assembles the per-batch text pool: all positives, hard negatives at the
// configured ratio (orientation preferred, modality fallback), a random
// number of pool negatives, then distinct pool texts to exact capacity.
BatchTexts sample_batch_texts(const std::vector<std::string>& positives,
                              const std::vector<std::string>& global_pool,
                              const NegativeSamplingConfig& cfg, Rng& rng);

}  // namespace cg
