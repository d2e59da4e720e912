#pragma once

// Byte-level corpus handling: ids are raw bytes (vocabulary 256), split
// into train/validation by a fixed ratio on sequence-aligned boundaries.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mom/rng.hpp"

namespace mom {

inline std::vector<uint8_t> corpus_load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("corpus: cannot open " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (bytes.empty()) throw std::runtime_error("corpus: " + path + " is empty");
    return bytes;
}

struct CorpusSplit {
    std::vector<uint8_t> train;
    std::vector<uint8_t> valid;
    size_t valid_begin = 0;  // byte range carved out of the source
    size_t valid_end = 0;
};

// Carves a contiguous validation range whose boundaries are aligned to
// seq_len units; the unit offset is drawn from the seed.
inline CorpusSplit split_corpus(const std::vector<uint8_t>& bytes, size_t seq_len,
                                uint64_t seed, double valid_ratio = 0.01) {
    if (seq_len == 0) throw std::invalid_argument("corpus split: seq_len must be positive");
    if (bytes.size() < 2 * (seq_len + 1))
        throw std::runtime_error("corpus split: corpus shorter than two sequences");
    const size_t units = bytes.size() / seq_len;
    size_t valid_units = static_cast<size_t>(
        std::llround(valid_ratio * static_cast<double>(units)));
    if (valid_units < 1) valid_units = 1;
    if (valid_units > units - 1) valid_units = units - 1;
    Rng rng(seed ^ 0x5EEDB0A2D5ULL);
    const size_t start_unit = static_cast<size_t>(rng.next_below(units - valid_units + 1));
    CorpusSplit out;
    out.valid_begin = start_unit * seq_len;
    out.valid_end = out.valid_begin + valid_units * seq_len;
    out.valid.assign(bytes.begin() + out.valid_begin, bytes.begin() + out.valid_end);
    out.train.assign(bytes.begin(), bytes.begin() + out.valid_begin);
    out.train.insert(out.train.end(), bytes.begin() + out.valid_end, bytes.end());
    return out;
}

// Unigram byte entropy in nats.
inline double unigram_entropy(const std::vector<uint8_t>& bytes) {
    if (bytes.empty()) throw std::invalid_argument("entropy of empty corpus");
    std::vector<size_t> counts(256, 0);
    for (const uint8_t b : bytes) ++counts[b];
    double h = 0.0;
    const double n = static_cast<double>(bytes.size());
    for (const size_t c : counts)
        if (c > 0) {
            const double p = static_cast<double>(c) / n;
            h -= p * std::log(p);
        }
    return h;
}

// Epoch-shuffled windows of seq_len + 1 bytes (input plus shifted target),
// striding by seq_len. Reshuffles with a fresh epoch-derived stream.
class WindowSampler {
public:
    WindowSampler(const std::vector<uint8_t>& data, size_t seq_len, uint64_t seed)
        : data_(&data), seq_len_(seq_len), seed_(seed) {
        if (data.size() < seq_len + 1)
            throw std::runtime_error("sampler: data shorter than one window");
        n_windows_ = (data.size() - 1) / seq_len;
        start_epoch();
    }

    size_t windows_per_epoch() const { return n_windows_; }
    size_t epoch() const { return epoch_; }

    // Next window as (inputs, targets), ids in [0, 255].
    void next(std::vector<int>& inputs, std::vector<int>& targets) {
        if (cursor_ >= order_.size()) {
            ++epoch_;
            start_epoch();
        }
        const size_t start = order_[cursor_++] * seq_len_;
        inputs.resize(seq_len_);
        targets.resize(seq_len_);
        for (size_t i = 0; i < seq_len_; ++i) {
            inputs[i] = (*data_)[start + i];
            targets[i] = (*data_)[start + i + 1];
        }
    }

private:
    void start_epoch() {
        order_.resize(n_windows_);
        for (size_t i = 0; i < n_windows_; ++i) order_[i] = i;
        Rng rng(seed_ + 0x9E3779B9ull * (epoch_ + 1));
        rng.shuffle(order_);
        cursor_ = 0;
    }

    const std::vector<uint8_t>* data_;
    size_t seq_len_;
    uint64_t seed_;
    size_t n_windows_ = 0;
    size_t epoch_ = 0;
    size_t cursor_ = 0;
    std::vector<size_t> order_;
};

}  // namespace mom
