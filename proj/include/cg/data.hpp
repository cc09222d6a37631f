#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cg/boxes.hpp"
#include "cg/image.hpp"
#include "cg/rng.hpp"
#include "cg/tensor.hpp"

namespace cg {

// Synthetic two-domain corpus: optical scenes are colored filled shapes on
// smooth backgrounds, radar scenes are bright speckled blobs on dark ground.

const std::vector<std::string>& optical_categories();  // ship plane tank bridge
const std::vector<std::string>& sar_categories();      // ship tower
const std::vector<std::string>& size_classes();        // small medium large

struct GenerationFailure : std::runtime_error {
    explicit GenerationFailure(const std::string& msg) : std::runtime_error(msg) {}
};

struct ObjectSpec {
    std::string category;
    int size_class = 0;  // index into size_classes()
    int fill = 0;        // style jitter
};

struct SceneSpec {
    std::string scene_id;
    std::string domain;  // "optical" | "sar"
    int width = 64, height = 64;
    std::vector<ObjectSpec> objects;
    double iou_cap = 0.1;
    uint64_t seed = 0;
};

struct Sample {
    std::string id;
    Image image;
    std::string domain;
    std::string caption;
    Box box;
    std::string category;
};

struct Scene {
    std::string id;
    std::string image_path;  // relative, filled when written
    Image image;
    std::vector<Sample> samples;  // one per object, each carrying the scene image
};

// Renders a scene; every object yields one sample whose caption names it
// unambiguously. Throws GenerationFailure when placement cannot satisfy the
// overlap cap and caption-uniqueness rules within 100 attempts per object.
Scene generate_scene(const SceneSpec& spec);

struct CorpusConfig {
    int scenes = 2400;
    int width = 64, height = 64;
    double optical_fraction = 0.75;
    int min_objects = 1, max_objects = 2;
    double iou_cap = 0.1;
    uint64_t seed = 1;
};

std::vector<Scene> generate_corpus(const CorpusConfig& cfg);

// ---- on-disk form ----

struct AnnotationRecord {
    std::string id;
    std::string image;  // relative path
    std::string domain;
    int w = 0, h = 0;
    Box box;
    std::string caption;
    std::string category;
};

void write_annotations(const std::vector<AnnotationRecord>& records, const std::string& path);
std::vector<AnnotationRecord> read_annotations(const std::string& path);
void write_id_list(const std::vector<std::string>& ids, const std::string& path);
std::vector<std::string> read_id_list(const std::string& path);

// Writes images/ plus annotations.jsonl under dir; returns the records.
std::vector<AnnotationRecord> write_corpus(std::vector<Scene>& scenes, const std::string& dir);

// ---- pipeline stages ----

struct RemovedRecord {
    AnnotationRecord record;
    std::string reason;  // "degenerate" | "out-of-bounds"
};

struct CleanResult {
    std::vector<AnnotationRecord> kept;
    std::vector<RemovedRecord> removed;
};

CleanResult clean_annotations(const std::vector<AnnotationRecord>& records);

enum class FlipOp { hflip, vflip, rot180 };
const char* flip_name(FlipOp op);

// Image, box, and caption transform under the same mirror; ids are untouched
// so the operation is a strict involution (rot180) or pairwise inverse.
Sample augment_geometric(const Sample& sample, FlipOp op);

struct DirectionCheck {
    bool ok = true;
    std::string expected;  // populated on conflict
    std::string found;
};

DirectionCheck verify_direction(const Sample& sample);
DirectionCheck verify_direction(const AnnotationRecord& record);  // same rule, disk form

struct SplitResult {
    std::vector<std::string> train, val, test;
};

// Stratified by (domain, category); within each stratum a seeded shuffle
// then floor(n/10) to val and test each, remainder to train.
SplitResult split_dataset(const std::vector<AnnotationRecord>& records, uint64_t seed);

// Replaces a seeded exact fraction of captions with "the {domain} {category}".
std::vector<AnnotationRecord> mask_captions(const std::vector<AnnotationRecord>& records,
                                            double ratio, Rng& rng);

// ---- probe scenes for the direction-discrimination protocol ----

struct ProbeScene {
    Image image;
    std::string caption;  // names the target side
    Box target;
    Box distractor;
    std::string domain;
};

std::vector<ProbeScene> generate_probe_scenes(int count, const CorpusConfig& cfg, uint64_t seed);

// ---- model input ----

Tensor image_to_input(const Image& img);                        // [1,3,H,W] in [0,1]
Tensor images_to_batch(const std::vector<const Image*>& imgs);  // [B,3,H,W]

// Loads the referenced image file relative to root_dir.
Sample record_to_sample(const AnnotationRecord& record, const std::string& root_dir);

}  // namespace cg
