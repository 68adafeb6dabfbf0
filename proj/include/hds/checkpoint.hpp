#pragma once

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hds/autodiff.hpp"

namespace hds {

// Parameter checkpoint, magic "HDT1". Per-parameter record:
//   u64 name length, name bytes, u64 rank, u64 extents..., f32 payload.
// All integers and floats little-endian.

using NamedParams = std::vector<std::pair<std::string, ad::Var<float>>>;

namespace detail {
inline void write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}
inline uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, const NamedParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    os.write("HDT1", 4);
    detail::write_u64(os, params.size());
    for (const auto& [name, p] : params) {
        detail::write_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_u64(os, p->value.shape.size());
        for (int64_t e : p->value.shape) detail::write_u64(os, static_cast<uint64_t>(e));
        static_assert(sizeof(float) == 4);
        os.write(reinterpret_cast<const char*>(p->value.ptr()),
                 static_cast<std::streamsize>(p->value.size() * 4));
    }
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

// Loads values into an existing parameter set; names and shapes must match.
inline void load_checkpoint(const std::string& path, NamedParams& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "HDT1", 4) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path);
    const uint64_t count = detail::read_u64(is);
    if (count != params.size())
        throw std::runtime_error("checkpoint " + path + " has " + std::to_string(count) +
                                 " parameters, expected " + std::to_string(params.size()));
    for (auto& [name, p] : params) {
        const uint64_t nlen = detail::read_u64(is);
        std::string rname(nlen, '\0');
        is.read(rname.data(), static_cast<std::streamsize>(nlen));
        if (rname != name)
            throw std::runtime_error("checkpoint parameter order mismatch: expected '" + name +
                                     "', found '" + rname + "'");
        const uint64_t rank = detail::read_u64(is);
        Shape shape(rank);
        for (uint64_t i = 0; i < rank; ++i)
            shape[i] = static_cast<int64_t>(detail::read_u64(is));
        if (shape != p->value.shape)
            throw std::runtime_error("checkpoint shape mismatch for '" + name + "': file " +
                                     shape_str(shape) + " vs model " +
                                     shape_str(p->value.shape));
        is.read(reinterpret_cast<char*>(p->value.ptr()),
                static_cast<std::streamsize>(p->value.size() * 4));
        if (!is) throw std::runtime_error("truncated checkpoint: " + path);
    }
}

}  // namespace hds
