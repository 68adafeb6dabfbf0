#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "hds/tensor.hpp"
#include "hds/volio.hpp"

namespace hds::io {

// fixed label palette (background black, then high-contrast colors; cycles
// past 16 labels)
inline std::array<uint8_t, 3> label_color(uint8_t label) {
    static constexpr std::array<std::array<uint8_t, 3>, 16> palette = {{
        {0, 0, 0},       {230, 25, 75},   {60, 180, 75},  {255, 225, 25},
        {0, 130, 200},   {245, 130, 48},  {145, 30, 180}, {70, 240, 240},
        {240, 50, 230},  {210, 245, 60},  {250, 190, 212}, {0, 128, 128},
        {220, 190, 255}, {170, 110, 40},  {255, 250, 200}, {128, 0, 0},
    }};
    return palette[label % palette.size()];
}

struct Slice2d {
    int64_t rows = 0, cols = 0;
    std::vector<int64_t> offsets;  // rows*cols voxel offsets into the volume
};

// axis 'z' keeps [H,W], 'y' keeps [D,W], 'x' keeps [D,H]
inline Slice2d slice_plan(const Shape& s, char axis, int64_t index) {
    check_shape(s.size() == 3, "slice: expected a single-channel [D,H,W] volume, got " +
                                   shape_str(s));
    const int64_t d = s[0], h = s[1], w = s[2];
    Slice2d out;
    auto at = [&](int64_t z, int64_t y, int64_t x) { return (z * h + y) * w + x; };
    if (axis == 'z') {
        check_shape(index >= 0 && index < d, "slice: z index out of range");
        out.rows = h;
        out.cols = w;
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) out.offsets.push_back(at(index, y, x));
    } else if (axis == 'y') {
        check_shape(index >= 0 && index < h, "slice: y index out of range");
        out.rows = d;
        out.cols = w;
        for (int64_t z = 0; z < d; ++z)
            for (int64_t x = 0; x < w; ++x) out.offsets.push_back(at(z, index, x));
    } else if (axis == 'x') {
        check_shape(index >= 0 && index < w, "slice: x index out of range");
        out.rows = d;
        out.cols = h;
        for (int64_t z = 0; z < d; ++z)
            for (int64_t y = 0; y < h; ++y) out.offsets.push_back(at(z, y, index));
    } else {
        throw ShapeError("slice: axis must be z, y or x");
    }
    return out;
}

// Grayscale PGM of one intensity slice, min-max scaled over the slice; a
// constant slice maps to mid-gray.
inline void write_slice_pgm(const std::string& path, const Tensor& vol, char axis, int64_t index) {
    const auto plan = slice_plan(vol.shape, axis, index);
    float lo = vol[plan.offsets[0]], hi = lo;
    for (int64_t off : plan.offsets) {
        lo = std::min(lo, vol[off]);
        hi = std::max(hi, vol[off]);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << "P5\n" << plan.cols << " " << plan.rows << "\n255\n";
    for (int64_t off : plan.offsets) {
        uint8_t v = 128;
        if (hi > lo)
            v = static_cast<uint8_t>(std::lround((vol[off] - lo) / (hi - lo) * 255.0f));
        f.write(reinterpret_cast<const char*>(&v), 1);
    }
    if (!f) throw IoError("short write to " + path);
}

// Paletted PPM of one label slice.
inline void write_slice_ppm(const std::string& path, const TensorT<uint8_t>& labels, char axis,
                            int64_t index) {
    const auto plan = slice_plan(labels.shape, axis, index);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    f << "P6\n" << plan.cols << " " << plan.rows << "\n255\n";
    for (int64_t off : plan.offsets) {
        const auto rgb = label_color(labels[off]);
        f.write(reinterpret_cast<const char*>(rgb.data()), 3);
    }
    if (!f) throw IoError("short write to " + path);
}

struct PnmImage {
    int64_t rows = 0, cols = 0, channels = 1;
    std::vector<uint8_t> pixels;  // row-major, interleaved channels
};

inline PnmImage read_pnm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string magic;
    f >> magic;
    PnmImage img;
    if (magic == "P5")
        img.channels = 1;
    else if (magic == "P6")
        img.channels = 3;
    else
        throw IoError(path + ": not a binary PGM/PPM file");
    int64_t maxval = 0;
    f >> img.cols >> img.rows >> maxval;
    if (!f || maxval != 255) throw IoError(path + ": unsupported PNM header");
    f.get();  // single whitespace after maxval
    img.pixels.resize(static_cast<size_t>(img.rows * img.cols * img.channels));
    f.read(reinterpret_cast<char*>(img.pixels.data()),
           static_cast<std::streamsize>(img.pixels.size()));
    if (!f) throw IoError(path + ": truncated pixel data");
    return img;
}

}  // namespace hds::io
