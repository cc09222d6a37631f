#include "cg/image.hpp"

#include <fstream>

namespace cg {

Image Image::create(int w, int h, int channels, uint8_t fill) {
    CG_CHECK(w >= 1 && h >= 1 && (channels == 1 || channels == 3),
             "Image: bad dimensions or channel count");
    Image img;
    img.w = w;
    img.h = h;
    img.channels = channels;
    img.pixels.assign((size_t)w * h * channels, fill);
    return img;
}

uint8_t& Image::at(int x, int y, int c) {
    CG_CHECK(x >= 0 && x < w && y >= 0 && y < h && c >= 0 && c < channels,
             "Image::at out of range");
    return pixels[((size_t)y * w + x) * channels + c];
}

uint8_t Image::at(int x, int y, int c) const {
    CG_CHECK(x >= 0 && x < w && y >= 0 && y < h && c >= 0 && c < channels,
             "Image::at out of range");
    return pixels[((size_t)y * w + x) * channels + c];
}

void write_pnm(const Image& img, const std::string& path) {
    CG_CHECK(img.channels == 1 || img.channels == 3, "write_pnm: unsupported channel count");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << (img.channels == 3 ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    out.write((const char*)img.pixels.data(), (std::streamsize)img.pixels.size());
    if (!out) throw IoError("short write: " + path);
}

Image read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::string magic;
    in >> magic;
    int channels;
    if (magic == "P6")
        channels = 3;
    else if (magic == "P5")
        channels = 1;
    else
        throw IoError("unsupported image format in " + path);
    auto next_int = [&]() {
        // skip whitespace and '#' comment lines
        int c;
        while ((c = in.peek()) != EOF) {
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        int v;
        if (!(in >> v)) throw IoError("truncated image header in " + path);
        return v;
    };
    int w = next_int(), h = next_int(), maxval = next_int();
    if (w < 1 || h < 1 || maxval != 255) throw IoError("unsupported image geometry in " + path);
    in.get();  // single whitespace after maxval
    Image img = Image::create(w, h, channels);
    in.read((char*)img.pixels.data(), (std::streamsize)img.pixels.size());
    if (in.gcount() != (std::streamsize)img.pixels.size())
        throw IoError("truncated pixel data in " + path);
    return img;
}

Image flip_h(const Image& img) {
    Image out = img;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(img.w - 1 - x, y, c) = img.at(x, y, c);
    return out;
}

Image flip_v(const Image& img) {
    Image out = img;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < img.channels; ++c) out.at(x, img.h - 1 - y, c) = img.at(x, y, c);
    return out;
}

Image rot180(const Image& img) { return flip_h(flip_v(img)); }

}  // namespace cg
