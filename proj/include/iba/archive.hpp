#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "iba/tensor.hpp"

namespace iba {

// Named f32 tensor container.
// Layout: magic "IBAW" | u32 version=1 | u32 count | per tensor:
//   u32 name_len | name bytes | u32 ndim | u64 dims... | f32 little-endian payload
struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

namespace detail {

inline void put_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<char*>(b), 4);
}

inline void put_u64(std::ofstream& f, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    f.write(reinterpret_cast<char*>(b), 8);
}

inline uint32_t get_u32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("truncated archive " + path);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline uint64_t get_u64(std::ifstream& f, const std::string& path) {
    unsigned char b[8];
    if (!f.read(reinterpret_cast<char*>(b), 8)) throw std::runtime_error("truncated archive " + path);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace detail

inline void save_archive(const std::string& path, const std::vector<NamedTensor>& tensors) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write("IBAW", 4);
    detail::put_u32(f, 1u);
    detail::put_u32(f, static_cast<uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        if (static_cast<long long>(t.data.size()) != numel(t.shape))
            throw std::invalid_argument("archive tensor '" + t.name + "': data/shape mismatch");
        detail::put_u32(f, static_cast<uint32_t>(t.name.size()));
        f.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        detail::put_u32(f, static_cast<uint32_t>(t.shape.size()));
        for (int d : t.shape) detail::put_u64(f, static_cast<uint64_t>(d));
        static_assert(sizeof(float) == 4);
        for (float v : t.data) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            detail::put_u32(f, bits);
        }
    }
    if (!f) throw std::runtime_error("write failed for " + path);
}

inline std::vector<NamedTensor> load_archive(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read " + path);
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, "IBAW", 4) != 0)
        throw std::runtime_error("bad magic in " + path + " (expected IBAW)");
    const uint32_t version = detail::get_u32(f, path);
    if (version != 1) throw std::runtime_error("unsupported archive version " + std::to_string(version));
    const uint32_t count = detail::get_u32(f, path);
    std::vector<NamedTensor> out(count);
    for (auto& t : out) {
        const uint32_t nlen = detail::get_u32(f, path);
        t.name.resize(nlen);
        if (!f.read(t.name.data(), nlen)) throw std::runtime_error("truncated archive " + path);
        const uint32_t ndim = detail::get_u32(f, path);
        t.shape.resize(ndim);
        for (auto& d : t.shape) d = static_cast<int>(detail::get_u64(f, path));
        t.data.resize(static_cast<size_t>(numel(t.shape)));
        for (auto& v : t.data) {
            const uint32_t bits = detail::get_u32(f, path);
            std::memcpy(&v, &bits, 4);
        }
    }
    return out;
}

inline const NamedTensor& archive_find(const std::vector<NamedTensor>& ts, const std::string& name) {
    for (const auto& t : ts)
        if (t.name == name) return t;
    throw std::runtime_error("archive has no tensor named '" + name + "'");
}

}  // namespace iba
