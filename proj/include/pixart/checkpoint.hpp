#pragma once

#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "pixart/config.hpp"
#include "pixart/model.hpp"
#include "pixart/tensor.hpp"

// Named-weight container with a bit-exact on-disk format:
//
//   magic "PXAR" | u32 format_version | config | metadata | weight table |
//   8-aligned raw arrays (f64 little-endian, each 8-aligned) | u64 fnv1a
//
// The weight table is length-prefixed names plus shapes plus an explicit
// element count; load validates shape-vs-length agreement entry by entry
// before anything else touches the data section, and verifies the trailing
// checksum last. Serialization order is the (name-sorted) map order, so a
// checkpoint's bytes are a pure function of its contents.

namespace pixart {

constexpr uint32_t kCheckpointFormatVersion = 1;
constexpr char kCheckpointMagic[4] = {'P', 'X', 'A', 'R'};

namespace io {

struct Writer {
    std::vector<uint8_t> bytes;

    void u32(uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void u64(uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<uint8_t>(v >> (8 * i)));
    }
    void i32(int32_t v) { u32(static_cast<uint32_t>(v)); }
    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        u64(bits);
    }
    void str(const std::string& s) {
        u32(static_cast<uint32_t>(s.size()));
        bytes.insert(bytes.end(), s.begin(), s.end());
    }
    void align8() {
        while (bytes.size() % 8 != 0) bytes.push_back(0);
    }
};

struct Reader {
    const std::vector<uint8_t>& bytes;
    size_t pos = 0;

    explicit Reader(const std::vector<uint8_t>& b) : bytes(b) {}

    void need(size_t n) {
        if (pos + n > bytes.size()) throw DataError("truncated checkpoint file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(bytes[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    int32_t i32() { return static_cast<int32_t>(u32()); }
    double f64() {
        uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    std::string str() {
        uint32_t n = u32();
        need(n);
        std::string s(bytes.begin() + static_cast<long>(pos),
                      bytes.begin() + static_cast<long>(pos + n));
        pos += n;
        return s;
    }
    void align8() {
        while (pos % 8 != 0) {
            need(1);
            ++pos;
        }
    }
};

inline uint64_t fnv1a(const uint8_t* data, size_t n) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= data[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

// One mutex per canonical path; file writes and reads are exclusive within
// the process.
inline std::mutex& path_lock(const std::string& path) {
    static std::mutex registry_mutex;
    static std::map<std::string, std::mutex> locks;
    std::error_code ec;
    std::string key = std::filesystem::weakly_canonical(path, ec).string();
    if (ec) key = path;
    std::lock_guard<std::mutex> g(registry_mutex);
    return locks[key];
}

}  // namespace io

// weight name grammar: <module>.<block_index|g>.<role>
inline bool valid_weight_name(const std::string& name) {
    const size_t a = name.find('.');
    if (a == std::string::npos || a == 0) return false;
    const size_t b = name.find('.', a + 1);
    if (b == std::string::npos || b == a + 1) return false;
    if (name.find('.', b + 1) != std::string::npos) return false;
    const std::string idx = name.substr(a + 1, b - a - 1);
    if (idx != "g" && idx.find_first_not_of("0123456789") != std::string::npos) return false;
    const std::string role = name.substr(b + 1);
    if (role.empty()) return false;
    for (char c : name)
        if (!(std::islower(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) ||
              c == '_' || c == '.'))
            return false;
    return true;
}

struct Checkpoint {
    uint32_t format_version = kCheckpointFormatVersion;
    ModelConfig config;
    std::map<std::string, Tensor> weights;
    std::map<std::string, std::string> metadata;

    static Checkpoint from_model(const Model& model,
                                 std::map<std::string, std::string> metadata = {}) {
        Checkpoint ckpt;
        ckpt.config = model.config();
        ckpt.metadata = std::move(metadata);
        for (const auto& [name, w] : model.params()) ckpt.weights.emplace(name, w.detach(false));
        return ckpt;
    }

    Model to_model() const {
        std::map<std::string, Tensor> params;
        for (const auto& [name, w] : weights) params.emplace(name, w.detach(true));
        return Model(config, std::move(params));
    }
};

namespace detail_ckpt {

inline void write_config(io::Writer& w, const ModelConfig& c) {
    w.str(variant_name(c.variant));
    for (int v : {c.hidden_size, c.depth, c.num_heads, c.patch_size, c.latent_channels, c.text_dim,
                  c.max_text_tokens, c.time_embed_freq_dim, c.num_classes, c.mlp_ratio,
                  c.base_grid})
        w.i32(v);
}

inline ModelConfig read_config(io::Reader& r) {
    ModelConfig c;
    c.variant = variant_from_name(r.str());
    c.hidden_size = r.i32();
    c.depth = r.i32();
    c.num_heads = r.i32();
    c.patch_size = r.i32();
    c.latent_channels = r.i32();
    c.text_dim = r.i32();
    c.max_text_tokens = r.i32();
    c.time_embed_freq_dim = r.i32();
    c.num_classes = r.i32();
    c.mlp_ratio = r.i32();
    c.base_grid = r.i32();
    return c;
}

}  // namespace detail_ckpt

inline std::vector<uint8_t> serialize(const Checkpoint& ckpt) {
    io::Writer w;
    w.bytes.insert(w.bytes.end(), kCheckpointMagic, kCheckpointMagic + 4);
    w.u32(ckpt.format_version);
    detail_ckpt::write_config(w, ckpt.config);
    w.u32(static_cast<uint32_t>(ckpt.metadata.size()));
    for (const auto& [k, v] : ckpt.metadata) {
        w.str(k);
        w.str(v);
    }
    w.u32(static_cast<uint32_t>(ckpt.weights.size()));
    for (const auto& [name, t] : ckpt.weights) {
        if (!valid_weight_name(name)) throw DataError("weight name violates grammar: " + name);
        w.str(name);
        w.u32(static_cast<uint32_t>(t.shape().size()));
        for (int d : t.shape()) w.i32(d);
        w.u64(t.numel());
    }
    w.align8();
    for (const auto& [name, t] : ckpt.weights) {
        w.align8();
        for (real v : t.data()) w.f64(v);
    }
    w.u64(io::fnv1a(w.bytes.data(), w.bytes.size()));
    return w.bytes;
}

inline Checkpoint deserialize(const std::vector<uint8_t>& bytes) {
    io::Reader r(bytes);
    r.need(4);
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
        throw DataError("not a checkpoint file (bad magic)");
    r.pos = 4;
    const uint32_t version = r.u32();
    if (version != kCheckpointFormatVersion)
        throw VersionError("checkpoint format_version " + std::to_string(version) +
                           " not supported (this build reads " +
                           std::to_string(kCheckpointFormatVersion) + ")");
    Checkpoint ckpt;
    ckpt.format_version = version;
    ckpt.config = detail_ckpt::read_config(r);
    const uint32_t meta_count = r.u32();
    for (uint32_t i = 0; i < meta_count; ++i) {
        std::string k = r.str();
        ckpt.metadata[k] = r.str();
    }
    const uint32_t weight_count = r.u32();
    struct Entry {
        std::string name;
        Shape shape;
        uint64_t length;
    };
    std::vector<Entry> entries;
    entries.reserve(weight_count);
    for (uint32_t i = 0; i < weight_count; ++i) {
        Entry e;
        e.name = r.str();
        if (!valid_weight_name(e.name)) throw DataError("weight name violates grammar: " + e.name);
        const uint32_t ndim = r.u32();
        if (ndim > 8) throw DataError("implausible weight rank in checkpoint");
        uint64_t prod = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            const int32_t dim = r.i32();
            if (dim <= 0) throw DataError("non-positive dimension for weight " + e.name);
            e.shape.push_back(dim);
            prod *= static_cast<uint64_t>(dim);
        }
        e.length = r.u64();
        if (prod != e.length)
            throw DataError("shape/length disagreement for weight " + e.name + ": shape " +
                            shape_str(e.shape) + " declares " + std::to_string(prod) +
                            " elements, stored length is " + std::to_string(e.length));
        entries.push_back(std::move(e));
    }
    r.align8();
    for (const Entry& e : entries) {
        r.align8();
        std::vector<real> data(e.length);
        for (uint64_t i = 0; i < e.length; ++i) data[i] = r.f64();
        ckpt.weights.emplace(e.name, Tensor::from(e.shape, std::move(data)));
    }
    const size_t body_end = r.pos;
    const uint64_t stored = r.u64();
    if (r.pos != bytes.size()) throw DataError("trailing bytes after checkpoint checksum");
    if (stored != io::fnv1a(bytes.data(), body_end)) throw DataError("checkpoint checksum mismatch");
    return ckpt;
}

inline void save(const Checkpoint& ckpt, const std::string& path) {
    std::lock_guard<std::mutex> g(io::path_lock(path));
    std::vector<uint8_t> bytes = serialize(ckpt);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<long>(bytes.size()));
    if (!f) throw DataError("write failed for " + path);
}

inline Checkpoint load(const std::string& path) {
    std::lock_guard<std::mutex> g(io::path_lock(path));
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

}  // namespace pixart
