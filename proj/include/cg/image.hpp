#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cg/common.hpp"

namespace cg {

// Row-major interleaved 8-bit image; channels is 1 (gray) or 3 (rgb).
struct Image {
    int w = 0, h = 0, channels = 0;
    std::vector<uint8_t> pixels;

    static Image create(int w, int h, int channels, uint8_t fill = 0);
    uint8_t& at(int x, int y, int c);
    uint8_t at(int x, int y, int c) const;
    bool operator==(const Image&) const = default;
};

// Binary portable pixmap/graymap: P6 for rgb, P5 for gray, maxval 255.
void write_pnm(const Image& img, const std::string& path);
Image read_pnm(const std::string& path);

Image flip_h(const Image& img);
Image flip_v(const Image& img);
Image rot180(const Image& img);

}  // namespace cg
