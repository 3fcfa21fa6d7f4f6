#pragma once

#include "evt/nn/tensor.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace evt::nn {

// Named learnable tensors with matching gradient buffers. Iteration order is
// insertion order, which keeps initialization and optimizer sweeps
// deterministic.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> value;
        Tensor<T> grad;
    };

    int add(const std::string& name, Tensor<T> value) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        Entry e;
        e.name = name;
        e.grad = Tensor<T>(value.shape);
        e.value = std::move(value);
        entries_.push_back(std::move(e));
        index_[name] = int(entries_.size()) - 1;
        return int(entries_.size()) - 1;
    }

    int find(const std::string& name) const {
        auto it = index_.find(name);
        return it == index_.end() ? -1 : it->second;
    }
    int id(const std::string& name) const {
        const int i = find(name);
        if (i < 0) throw ConfigError("unknown parameter: " + name);
        return i;
    }

    Entry& entry(int id) { return entries_[id]; }
    const Entry& entry(int id) const { return entries_[id]; }
    Entry& entry(const std::string& name) { return entries_[id(name)]; }
    const Entry& entry(const std::string& name) const { return entries_[id(name)]; }

    int count() const { return int(entries_.size()); }
    std::int64_t total_values() const {
        std::int64_t n = 0;
        for (const auto& e : entries_) n += e.value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries_)
            std::fill(e.grad.data.begin(), e.grad.data.end(), T(0));
    }

    void scale_grads(T s) {
        for (auto& e : entries_)
            for (auto& g : e.grad.data) g *= s;
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
        return out;
    }

    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, int> index_;
};

// ---- NNP1 checkpoint format -------------------------------------------
// "NNP1" | count:u32 | per tensor: name_len:u32 | name | rank:u32 |
// dims:u32 each | f32 values, all little-endian.

namespace detail {
inline void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(uint8_t(v >> (8 * i)));
}
inline uint32_t get_u32(const std::vector<uint8_t>& in, std::size_t& off) {
    if (off + 4 > in.size()) throw ParseError("NNP1: truncated u32", off);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(in[off + i]) << (8 * i);
    off += 4;
    return v;
}
} // namespace detail

inline std::vector<uint8_t> encode_params(const ParamStore<float>& store) {
    std::vector<uint8_t> out = {'N', 'N', 'P', '1'};
    detail::put_u32(out, uint32_t(store.count()));
    for (const auto& e : store) {
        detail::put_u32(out, uint32_t(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        detail::put_u32(out, uint32_t(e.value.rank()));
        for (int d : e.value.shape) detail::put_u32(out, uint32_t(d));
        for (float v : e.value.data) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            detail::put_u32(out, bits);
        }
    }
    return out;
}

inline ParamStore<float> decode_params(const std::vector<uint8_t>& bytes) {
    std::size_t off = 0;
    if (bytes.size() < 4 || std::memcmp(bytes.data(), "NNP1", 4) != 0)
        throw ParseError("NNP1: bad magic", 0);
    off = 4;
    const uint32_t count = detail::get_u32(bytes, off);
    ParamStore<float> store;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = detail::get_u32(bytes, off);
        if (off + name_len > bytes.size()) throw ParseError("NNP1: truncated name", off);
        std::string name(bytes.begin() + off, bytes.begin() + off + name_len);
        off += name_len;
        const uint32_t rank = detail::get_u32(bytes, off);
        Shape shape(rank);
        for (uint32_t d = 0; d < rank; ++d) shape[d] = int(detail::get_u32(bytes, off));
        Tensor<float> t(shape);
        for (auto& v : t.data) {
            const uint32_t bits = detail::get_u32(bytes, off);
            std::memcpy(&v, &bits, 4);
        }
        store.add(name, std::move(t));
    }
    return store;
}

inline void save_params(const std::string& path, const ParamStore<float>& store) {
    const auto bytes = encode_params(store);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open for write: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

inline ParamStore<float> load_params(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_params(bytes);
}

} // namespace evt::nn
