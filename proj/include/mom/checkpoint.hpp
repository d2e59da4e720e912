#pragma once

// Named-tensor binary checkpoints. Layout, all little-endian:
//   magic "MOMCKPT1" | version u32 | tensor count u32
//   per tensor: name (u32 length + UTF-8) | dtype u8 (0=f32, 1=f64)
//               rank u32 | dims u64... | raw scalars
//   metadata count u32 | per entry: key and value as u32-length strings
// Files are written to a temp path and renamed; a bad magic or version is
// rejected before anything is touched.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mom/model.hpp"

namespace mom {

namespace ckpt {

constexpr char kMagic[8] = {'M', 'O', 'M', 'C', 'K', 'P', 'T', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
constexpr uint8_t dtype_code() {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    return std::is_same_v<T, float> ? 0 : 1;
}

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(char((v >> (8 * i)) & 0xFF));
}
inline void put_string(std::string& out, const std::string& s) {
    put_u32(out, uint32_t(s.size()));
    out += s;
}

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= uint32_t(uint8_t(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= uint64_t(uint8_t(data_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    uint8_t u8() {
        need(1);
        return uint8_t(data_[pos_++]);
    }
    std::string str() {
        const uint32_t len = u32();
        need(len);
        std::string s = data_.substr(pos_, len);
        pos_ += len;
        return s;
    }
    const char* raw(size_t n) {
        need(n);
        const char* p = data_.data() + pos_;
        pos_ += n;
        return p;
    }
    bool at_end() const { return pos_ == data_.size(); }

private:
    void need(size_t n) const {
        if (pos_ + n > data_.size())
            throw std::runtime_error("checkpoint: truncated file");
    }
    std::string data_;
    size_t pos_ = 0;
};

}  // namespace ckpt

struct TensorBlob {
    uint8_t dtype = 0;
    std::vector<uint64_t> dims;
    std::string bytes;  // raw little-endian scalars

    size_t scalar_size() const { return dtype == 0 ? 4 : 8; }
    size_t numel() const {
        size_t n = 1;
        for (const uint64_t d : dims) n *= size_t(d);
        return n;
    }
};

struct CheckpointData {
    std::vector<std::pair<std::string, TensorBlob>> tensors;  // file order
    std::vector<std::pair<std::string, std::string>> metadata;

    const TensorBlob* find(const std::string& name) const {
        for (const auto& [n, blob] : tensors)
            if (n == name) return &blob;
        return nullptr;
    }
    const std::string* meta(const std::string& key) const {
        for (const auto& [k, v] : metadata)
            if (k == key) return &v;
        return nullptr;
    }
    std::string meta_or_throw(const std::string& key) const {
        const auto* v = meta(key);
        if (!v) throw std::runtime_error("checkpoint: missing metadata key '" + key + "'");
        return *v;
    }
};

inline std::string serialize_checkpoint(const CheckpointData& data) {
    std::string out;
    out.append(ckpt::kMagic, sizeof(ckpt::kMagic));
    ckpt::put_u32(out, ckpt::kVersion);
    ckpt::put_u32(out, uint32_t(data.tensors.size()));
    for (const auto& [name, blob] : data.tensors) {
        ckpt::put_string(out, name);
        out.push_back(char(blob.dtype));
        ckpt::put_u32(out, uint32_t(blob.dims.size()));
        for (const uint64_t d : blob.dims) ckpt::put_u64(out, d);
        if (blob.bytes.size() != blob.numel() * blob.scalar_size())
            throw std::logic_error("checkpoint: blob size mismatch for " + name);
        out += blob.bytes;
    }
    ckpt::put_u32(out, uint32_t(data.metadata.size()));
    for (const auto& [k, v] : data.metadata) {
        ckpt::put_string(out, k);
        ckpt::put_string(out, v);
    }
    return out;
}

inline CheckpointData deserialize_checkpoint(std::string raw) {
    if (raw.size() < sizeof(ckpt::kMagic) ||
        std::memcmp(raw.data(), ckpt::kMagic, sizeof(ckpt::kMagic)) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    ckpt::Reader r(std::move(raw));
    r.raw(sizeof(ckpt::kMagic));
    const uint32_t version = r.u32();
    if (version != ckpt::kVersion)
        throw std::runtime_error("checkpoint: unsupported version " +
                                 std::to_string(version));
    CheckpointData data;
    const uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
        std::string name = r.str();
        TensorBlob blob;
        blob.dtype = r.u8();
        if (blob.dtype > 1) throw std::runtime_error("checkpoint: bad dtype code");
        const uint32_t rank = r.u32();
        blob.dims.resize(rank);
        for (auto& d : blob.dims) d = r.u64();
        const size_t nbytes = blob.numel() * blob.scalar_size();
        blob.bytes.assign(r.raw(nbytes), nbytes);
        data.tensors.emplace_back(std::move(name), std::move(blob));
    }
    const uint32_t meta_count = r.u32();
    for (uint32_t i = 0; i < meta_count; ++i) {
        std::string k = r.str();
        std::string v = r.str();
        data.metadata.emplace_back(std::move(k), std::move(v));
    }
    if (!r.at_end()) throw std::runtime_error("checkpoint: trailing bytes");
    return data;
}

// Atomic write: temp file in the same directory, then rename.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp);
        out.write(bytes.data(), std::streamsize(bytes.size()));
        if (!out) throw std::runtime_error("short write to " + tmp);
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0)
        throw std::runtime_error("cannot rename " + tmp + " to " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
TensorBlob to_blob(const Tensor<T>& t) {
    TensorBlob blob;
    blob.dtype = ckpt::dtype_code<T>();
    for (const size_t d : t.shape()) blob.dims.push_back(uint64_t(d));
    blob.bytes.assign(reinterpret_cast<const char*>(t.values().data()),
                      t.numel() * sizeof(T));
    return blob;
}

template <typename T>
CheckpointData checkpoint_from_model(MomModel<T>& model,
                                     std::vector<std::pair<std::string, std::string>> extra = {}) {
    CheckpointData data;
    for (auto& [name, tensor] : model.named_params())
        data.tensors.emplace_back(name, to_blob(*tensor));
    data.metadata.emplace_back("format", "mom-checkpoint");
    data.metadata.emplace_back("d", std::to_string(model.cfg.d));
    data.metadata.emplace_back("heads", std::to_string(model.cfg.heads));
    data.metadata.emplace_back("d_ff", std::to_string(model.cfg.d_ff));
    data.metadata.emplace_back("max_seq", std::to_string(model.cfg.max_seq));
    data.metadata.emplace_back("vocab", std::to_string(model.cfg.vocab));
    data.metadata.emplace_back("plan", model.plan.render());
    data.metadata.emplace_back("mom", model.mom.render());
    data.metadata.emplace_back("dtype", std::to_string(int(ckpt::dtype_code<T>())));
    for (auto& kv : extra) data.metadata.push_back(std::move(kv));
    return data;
}

template <typename T>
void save_checkpoint(const std::string& path, MomModel<T>& model,
                     std::vector<std::pair<std::string, std::string>> extra = {}) {
    write_file_atomic(path, serialize_checkpoint(checkpoint_from_model(model, extra)));
}

// Rebuilds the model shape recorded in the metadata, then loads weights.
// Every model parameter must be present with matching dtype and shape.
template <typename T>
MomModel<T> model_from_checkpoint(const CheckpointData& data) {
    ModelConfig cfg;
    cfg.d = std::stoul(data.meta_or_throw("d"));
    cfg.heads = std::stoul(data.meta_or_throw("heads"));
    cfg.d_ff = std::stoul(data.meta_or_throw("d_ff"));
    cfg.max_seq = std::stoul(data.meta_or_throw("max_seq"));
    cfg.vocab = std::stoul(data.meta_or_throw("vocab"));
    auto plan = parse_chunk_plan(data.meta_or_throw("plan"));
    auto mom_cfg = parse_mom_config(data.meta_or_throw("mom"));
    auto model = MomModel<T>::init(cfg, plan, mom_cfg, 0);

    size_t applied = 0;
    for (auto& [name, tensor] : model.named_params()) {
        const TensorBlob* blob = data.find(name);
        if (!blob) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
        if (blob->dtype != ckpt::dtype_code<T>())
            throw std::runtime_error("checkpoint: dtype mismatch for '" + name + "'");
        if (blob->dims.size() != tensor->shape().size())
            throw std::runtime_error("checkpoint: rank mismatch for '" + name + "'");
        for (size_t i = 0; i < blob->dims.size(); ++i)
            if (size_t(blob->dims[i]) != tensor->shape()[i])
                throw std::runtime_error("checkpoint: shape mismatch for '" + name + "'");
        std::memcpy(tensor->raw_values().data(), blob->bytes.data(), blob->bytes.size());
        ++applied;
    }
    if (applied != data.tensors.size())
        throw std::runtime_error("checkpoint: file holds " +
                                 std::to_string(data.tensors.size()) +
                                 " tensors but the model uses " + std::to_string(applied));
    return model;
}

template <typename T>
MomModel<T> load_checkpoint(const std::string& path) {
    return model_from_checkpoint<T>(deserialize_checkpoint(read_file(path)));
}

}  // namespace mom
