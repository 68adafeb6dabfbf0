#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "hds/tensor.hpp"

namespace hds::io {

static_assert(std::endian::native == std::endian::little,
              "volume files are little-endian; big-endian hosts need byte swapping");

// HDV1 volume file:
//   "HDV1" | dtype u8 (0 = f32, 1 = u8) | channels u64 | D u64 | H u64 | W u64
// followed by the raw little-endian payload, channel-major then D, H, W.
// Round-trips are bitwise exact.

enum class VolDType : uint8_t { F32 = 0, U8 = 1 };

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_u64(std::ofstream& f, uint64_t v) {
    f.write(reinterpret_cast<const char*>(&v), 8);
}

inline uint64_t get_u64(std::ifstream& f) {
    uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
}

// [D,H,W] counts as one channel; [C,D,H,W] carries its channel extent
inline void split_channels(const Shape& s, int64_t& c, Shape& spatial, const std::string& path) {
    if (s.size() == 3) {
        c = 1;
        spatial = s;
    } else if (s.size() == 4) {
        c = s[0];
        spatial = {s[1], s[2], s[3]};
    } else {
        throw IoError("volume " + path + ": expected [D,H,W] or [C,D,H,W], got " + shape_str(s));
    }
}

template <class T>
void write_hdv(const std::string& path, const TensorT<T>& vol, VolDType dtype) {
    int64_t c;
    Shape sp;
    split_channels(vol.shape, c, sp, path);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f.write("HDV1", 4);
    const auto code = static_cast<uint8_t>(dtype);
    f.write(reinterpret_cast<const char*>(&code), 1);
    put_u64(f, static_cast<uint64_t>(c));
    for (int i = 0; i < 3; ++i) put_u64(f, static_cast<uint64_t>(sp[static_cast<size_t>(i)]));
    f.write(reinterpret_cast<const char*>(vol.data.data()),
            static_cast<std::streamsize>(vol.data.size() * sizeof(T)));
    if (!f) throw IoError("short write to " + path);
}

struct Header {
    VolDType dtype;
    int64_t channels;
    Shape spatial;
};

inline Header read_header(std::ifstream& f, const std::string& path) {
    char magic[4] = {};
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "HDV1", 4) != 0)
        throw IoError(path + ": not an HDV1 volume file");
    uint8_t code = 0;
    f.read(reinterpret_cast<char*>(&code), 1);
    if (code > 1) throw IoError(path + ": unknown dtype code " + std::to_string(code));
    Header h;
    h.dtype = static_cast<VolDType>(code);
    h.channels = static_cast<int64_t>(get_u64(f));
    h.spatial = {static_cast<int64_t>(get_u64(f)), static_cast<int64_t>(get_u64(f)),
                 static_cast<int64_t>(get_u64(f))};
    if (!f || h.channels < 1 || h.spatial[0] < 1 || h.spatial[1] < 1 || h.spatial[2] < 1)
        throw IoError(path + ": corrupt header");
    return h;
}

template <class T>
TensorT<T> read_payload(std::ifstream& f, const Header& h, const std::string& path) {
    Shape s = h.channels == 1 ? h.spatial
                              : Shape{h.channels, h.spatial[0], h.spatial[1], h.spatial[2]};
    TensorT<T> out(s);
    f.read(reinterpret_cast<char*>(out.data.data()),
           static_cast<std::streamsize>(out.data.size() * sizeof(T)));
    if (!f) throw IoError(path + ": truncated payload");
    char extra;
    if (f.read(&extra, 1)) throw IoError(path + ": trailing bytes after payload");
    return out;
}

}  // namespace detail

inline void save_volume(const std::string& path, const Tensor& vol) {
    detail::write_hdv(path, vol, VolDType::F32);
}

inline void save_labels(const std::string& path, const TensorT<uint8_t>& labels) {
    detail::write_hdv(path, labels, VolDType::U8);
}

inline VolDType peek_dtype(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    return detail::read_header(f, path).dtype;
}

// single-channel files come back rank 3, multi-channel files rank 4
inline Tensor load_volume(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    const auto h = detail::read_header(f, path);
    if (h.dtype != VolDType::F32) throw IoError(path + ": expected f32 volume, found u8");
    return detail::read_payload<float>(f, h, path);
}

inline TensorT<uint8_t> load_labels(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    const auto h = detail::read_header(f, path);
    if (h.dtype != VolDType::U8) throw IoError(path + ": expected u8 labels, found f32");
    return detail::read_payload<uint8_t>(f, h, path);
}

}  // namespace hds::io
