#ifndef REFEDIT_CHECKPOINT_HPP
#define REFEDIT_CHECKPOINT_HPP

// Checkpoint container: magic "FEDT1", u64 entry count, then per entry a
// length-prefixed utf-8 name, u32 rank, u64 dims, and a little-endian f32
// payload. Entries are written in sorted name order, so identical parameter
// maps serialize to identical bytes.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "refedit/tensor.hpp"

namespace refedit {

inline constexpr char kCheckpointMagic[5] = {'F', 'E', 'D', 'T', '1'};

namespace detail {

template <typename V>
void write_pod(std::ostream& out, V v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& in, const std::string& path) {
    V v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!in) {
        throw std::runtime_error(path + ": truncated checkpoint");
    }
    return v;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const ParamMap<T>& params, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write checkpoint " + path);
    }
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_pod<uint64_t>(out, params.size());
    for (const auto& [name, p] : params) {
        detail::write_pod<uint32_t>(out, static_cast<uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::write_pod<uint32_t>(out, static_cast<uint32_t>(p.shape().size()));
        for (size_t d : p.shape()) {
            detail::write_pod<uint64_t>(out, d);
        }
        for (T v : p.values()) {
            detail::write_pod<float>(out, static_cast<float>(v));
        }
    }
    if (!out) {
        throw std::runtime_error("short write to checkpoint " + path);
    }
}

template <typename T = float>
ParamMap<T> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot read checkpoint " + path);
    }
    char magic[sizeof(kCheckpointMagic)] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw std::runtime_error(path + ": not a checkpoint file");
    }
    const uint64_t count = detail::read_pod<uint64_t>(in, path);
    ParamMap<T> params;
    for (uint64_t e = 0; e < count; ++e) {
        const uint32_t name_len = detail::read_pod<uint32_t>(in, path);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const uint32_t rank = detail::read_pod<uint32_t>(in, path);
        std::vector<size_t> shape(rank);
        for (uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<size_t>(detail::read_pod<uint64_t>(in, path));
        }
        Tensor<T> t(shape);
        for (T& v : t.values()) {
            v = static_cast<T>(detail::read_pod<float>(in, path));
        }
        if (!in) {
            throw std::runtime_error(path + ": truncated checkpoint");
        }
        params.emplace(std::move(name), std::move(t));
    }
    return params;
}

// FNV-1a over the f32 value bytes; used to pin down "did training touch this"
template <typename T>
uint64_t param_checksum(const Tensor<T>& t) {
    uint64_t h = 1469598103934665603ull;
    for (T v : t.values()) {
        float f = static_cast<float>(v);
        unsigned char bytes[sizeof(float)];
        std::memcpy(bytes, &f, sizeof(float));
        for (unsigned char b : bytes) {
            h = (h ^ b) * 1099511628211ull;
        }
    }
    return h;
}

// combined checksum of every parameter whose name starts with `prefix`
// (empty prefix covers the whole map); name bytes participate
template <typename T>
uint64_t checksum_group(const ParamMap<T>& params, const std::string& prefix = "") {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, p] : params) {
        if (name.rfind(prefix, 0) != 0) {
            continue;
        }
        for (char c : name) {
            h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
        }
        uint64_t sub = param_checksum(p);
        for (size_t i = 0; i < sizeof(sub); ++i) {
            h = (h ^ ((sub >> (8 * i)) & 0xff)) * 1099511628211ull;
        }
    }
    return h;
}

}  // namespace refedit

#endif  // REFEDIT_CHECKPOINT_HPP
