#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace esp {

// Error taxonomy mirrored by the CLI exit codes: ConfigError -> 2,
// IoError -> 3, InternalError -> 4.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct InternalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

using TokenId = int32_t;

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent substream key for (seed, index). Each committed position owns
// one draw, so speculative and plain decoding consume identical streams.
inline uint64_t substream(uint64_t seed, uint64_t index) {
    return splitmix64(seed ^ splitmix64(index + 1));
}

inline double uniform01(uint64_t key) {
    return static_cast<double>(splitmix64(key) >> 11) * 0x1.0p-53;
}

// Cosine in double; f32 inputs widen exactly. Identical vectors short-circuit
// to exact 1 so identity cases are not at the mercy of rounding.
inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
    if (a.size() != b.size() || a.empty()) {
        throw InternalError("cosine: dimension mismatch");
    }
    if (a == b) {
        return 1.0;
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double x = a[i], y = b[i];
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if (na == 0.0 || nb == 0.0) {
        throw InternalError("cosine: zero-norm input");
    }
    const double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return c < -1.0 ? -1.0 : (c > 1.0 ? 1.0 : c);
}

inline double l2_norm(const std::vector<float>& v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(s);
}

// Greedy pick with ties broken toward the smallest id, shared by every
// decode path so selections agree bit-for-bit.
inline TokenId argmax_token(const std::vector<float>& logits) {
    TokenId best = 0;
    float best_v = logits.at(0);
    for (size_t i = 1; i < logits.size(); ++i) {
        if (logits[i] > best_v) {
            best_v = logits[i];
            best = static_cast<TokenId>(i);
        }
    }
    return best;
}

// Indices of the top-k values, descending, ties toward smaller index.
inline std::vector<int> top_k_indices(const std::vector<float>& values, int k) {
    std::vector<int> idx(values.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    const int n = static_cast<int>(values.size());
    k = k < n ? k : n;
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        if (values[a] != values[b]) return values[a] > values[b];
        return a < b;
    });
    idx.resize(k);
    return idx;
}

inline std::vector<float> softmax(const std::vector<float>& logits) {
    float m = logits.at(0);
    for (float v : logits) m = v > m ? v : m;
    std::vector<float> p(logits.size());
    float sum = 0.0f;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - m);
        sum += p[i];
    }
    for (float& v : p) v /= sum;
    return p;
}

}  // namespace esp
