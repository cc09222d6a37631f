#include "cg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <json.hpp>

namespace cg {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload assumes a little-endian host");

namespace {

size_t align64(size_t n) { return (n + 63) & ~size_t{63}; }

}  // namespace

void save_checkpoint(const std::string& path, Model& m, int64_t step,
                     const std::string& config_json) {
    auto params = named_parameters(m);
    nlohmann::json tensors = nlohmann::json::array();
    size_t offset = 0;
    for (auto& [name, t] : params) {
        offset = align64(offset);
        tensors.push_back({{"name", name},
                           {"shape", t->shape()},
                           {"offset", offset},
                           {"count", t->size()}});
        offset += (size_t)t->size() * sizeof(float);
    }
    nlohmann::json buffers = nlohmann::json::object();
    for (auto& [name, v] : named_buffers(m)) buffers[name] = *v;

    nlohmann::json manifest = {
        {"version", kCheckpointVersion},
        {"step", step},
        {"config", config_json.empty() ? nlohmann::json() : nlohmann::json::parse(config_json)},
        {"tensors", tensors},
        {"buffers", buffers},
    };
    std::string mtext = manifest.dump();

    size_t payload_start = align64(8 + mtext.size());
    std::vector<char> blob(payload_start + offset, 0);
    uint64_t mlen = mtext.size();
    std::memcpy(blob.data(), &mlen, 8);
    std::memcpy(blob.data() + 8, mtext.data(), mtext.size());

    size_t at = 0;
    for (auto& [name, t] : params) {
        at = align64(at);
        auto src = t->data();
        char* dst = blob.data() + payload_start + at;
        for (int64_t i = 0; i < t->size(); ++i) {
            float f = (float)src[i];
            std::memcpy(dst + (size_t)i * sizeof(float), &f, sizeof(float));
        }
        at += (size_t)t->size() * sizeof(float);
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out.write(blob.data(), (std::streamsize)blob.size());
    if (!out) throw IoError("short write while saving checkpoint: " + path);
}

CheckpointInfo peek_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    uint64_t mlen = 0;
    if (!in.read(reinterpret_cast<char*>(&mlen), 8))
        throw IoError("checkpoint truncated: " + path);
    std::string mtext(mlen, '\0');
    if (!in.read(mtext.data(), (std::streamsize)mlen))
        throw IoError("checkpoint manifest overruns the file: " + path);
    nlohmann::json manifest = nlohmann::json::parse(mtext, nullptr, false);
    if (manifest.is_discarded()) throw IoError("checkpoint manifest is not JSON: " + path);
    if (!manifest.contains("version") || manifest["version"].get<int>() != kCheckpointVersion)
        throw IoError("checkpoint format version mismatch: " + path);

    CheckpointInfo info;
    info.step = manifest["step"].get<int64_t>();
    if (!manifest["config"].is_null()) info.config_json = manifest["config"].dump();
    return info;
}

CheckpointInfo load_checkpoint(const std::string& path, Model& m) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::vector<char> blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (blob.size() < 8) throw IoError("checkpoint truncated: " + path);

    uint64_t mlen = 0;
    std::memcpy(&mlen, blob.data(), 8);
    if (8 + mlen > blob.size()) throw IoError("checkpoint manifest overruns the file: " + path);
    nlohmann::json manifest = nlohmann::json::parse(blob.begin() + 8, blob.begin() + 8 + mlen);

    if (!manifest.contains("version") || manifest["version"].get<int>() != kCheckpointVersion)
        throw IoError("checkpoint format version mismatch: " + path);
    size_t payload_start = align64(8 + mlen);

    auto params = named_parameters(m);
    CG_CHECK(manifest["tensors"].size() == params.size(),
             "checkpoint tensor count does not match the model");
    size_t idx = 0;
    for (auto& [name, t] : params) {
        const nlohmann::json& rec = manifest["tensors"][idx++];
        CG_CHECK(rec["name"].get<std::string>() == name,
                 "checkpoint tensor order does not match the model: " +
                     rec["name"].get<std::string>());
        CG_CHECK(rec["shape"].get<Shape>() == t->shape(),
                 "checkpoint tensor shape mismatch: " + name);
        size_t off = payload_start + rec["offset"].get<size_t>();
        size_t count = rec["count"].get<size_t>();
        CG_CHECK(count == (size_t)t->size(), "checkpoint tensor size mismatch: " + name);
        if (off + count * sizeof(float) > blob.size())
            throw IoError("checkpoint payload overruns the file: " + path);
        auto dst = t->data_mut();
        for (size_t i = 0; i < count; ++i) {
            float f;
            std::memcpy(&f, blob.data() + off + i * sizeof(float), sizeof(float));
            dst[i] = (double)f;
        }
    }
    auto buffers = named_buffers(m);
    for (auto& [name, v] : buffers) {
        CG_CHECK(manifest["buffers"].contains(name), "checkpoint missing buffer: " + name);
        std::vector<double> loaded = manifest["buffers"][name].get<std::vector<double>>();
        CG_CHECK(loaded.size() == v->size(), "checkpoint buffer size mismatch: " + name);
        *v = std::move(loaded);
    }

    CheckpointInfo info;
    info.step = manifest["step"].get<int64_t>();
    if (!manifest["config"].is_null()) info.config_json = manifest["config"].dump();
    return info;
}

}  // namespace cg
