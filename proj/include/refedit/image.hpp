#ifndef REFEDIT_IMAGE_HPP
#define REFEDIT_IMAGE_HPP

// 8-bit raster I/O: RGB images as binary PPM (P6), single-channel masks as
// binary PGM (P5). Pixels are interleaved row-major; masks are 0/255.

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace refedit {

struct Image {
    size_t width = 0;
    size_t height = 0;
    std::vector<uint8_t> rgb;  // width*height*3, row-major interleaved

    Image() = default;
    Image(size_t w, size_t h, uint8_t fill = 0) : width(w), height(h), rgb(w * h * 3, fill) {}

    uint8_t* px(size_t x, size_t y) { return rgb.data() + (y * width + x) * 3; }
    const uint8_t* px(size_t x, size_t y) const { return rgb.data() + (y * width + x) * 3; }

    bool operator==(const Image& o) const = default;
};

struct Mask {
    size_t width = 0;
    size_t height = 0;
    std::vector<uint8_t> v;  // 0 or 255

    Mask() = default;
    Mask(size_t w, size_t h, uint8_t fill = 0) : width(w), height(h), v(w * h, fill) {}

    bool at(size_t x, size_t y) const { return v[y * width + x] != 0; }
    void set(size_t x, size_t y, bool on) { v[y * width + x] = on ? 255 : 0; }

    size_t area() const {
        size_t n = 0;
        for (uint8_t p : v) n += (p != 0);
        return n;
    }

    bool operator==(const Mask& o) const = default;
};

inline Mask mask_union(const Mask& a, const Mask& b) {
    Mask out(a.width, a.height);
    for (size_t i = 0; i < out.v.size(); ++i) {
        out.v[i] = (a.v[i] || b.v[i]) ? 255 : 0;
    }
    return out;
}

namespace detail {

inline int read_pnm_int(std::istream& in) {
    // skips whitespace and '#' comments per the PNM grammar
    int c = in.get();
    while (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '#') {
        if (c == '#') {
            while (c != '\n' && c != EOF) c = in.get();
        }
        c = in.get();
    }
    int value = 0;
    bool any = false;
    while (c >= '0' && c <= '9') {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) {
        throw std::runtime_error("pnm: malformed header");
    }
    return value;
}

}  // namespace detail

inline void write_ppm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()),
              static_cast<std::streamsize>(img.rgb.size()));
    if (!out) {
        throw std::runtime_error("short write to " + path);
    }
}

inline Image read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path);
    }
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '6') {
        throw std::runtime_error(path + ": not a P6 ppm");
    }
    size_t w = detail::read_pnm_int(in);
    size_t h = detail::read_pnm_int(in);
    int maxval = detail::read_pnm_int(in);
    if (maxval != 255) {
        throw std::runtime_error(path + ": unsupported maxval");
    }
    Image img(w, h);
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (in.gcount() != static_cast<std::streamsize>(img.rgb.size())) {
        throw std::runtime_error(path + ": truncated pixel data");
    }
    return img;
}

inline void write_pgm(const Mask& mask, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path);
    }
    out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(mask.v.data()),
              static_cast<std::streamsize>(mask.v.size()));
    if (!out) {
        throw std::runtime_error("short write to " + path);
    }
}

inline Mask read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read " + path);
    }
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || m1 != '5') {
        throw std::runtime_error(path + ": not a P5 pgm");
    }
    size_t w = detail::read_pnm_int(in);
    size_t h = detail::read_pnm_int(in);
    int maxval = detail::read_pnm_int(in);
    if (maxval != 255) {
        throw std::runtime_error(path + ": unsupported maxval");
    }
    Mask mask(w, h);
    in.read(reinterpret_cast<char*>(mask.v.data()), static_cast<std::streamsize>(mask.v.size()));
    if (in.gcount() != static_cast<std::streamsize>(mask.v.size())) {
        throw std::runtime_error(path + ": truncated pixel data");
    }
    // normalize mask values to strict 0/255
    for (uint8_t& p : mask.v) {
        p = p >= 128 ? 255 : 0;
    }
    return mask;
}

}  // namespace refedit

#endif  // REFEDIT_IMAGE_HPP
