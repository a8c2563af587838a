#pragma once

// Minimal frozen decoder-only transformer with arbitrary attention masks and
// position ids. Everything here is deterministic by construction:
//
//   * reductions (matvec, attention, norms) always run in ascending index
//     order, so a position's logits are a pure function of (model, its own
//     embedding, its position id, the ordered set of columns it attends);
//   * the attention mask is realized as exclusion, never as an additive
//     -inf term, so a non-attended column contributes exactly nothing.
//
// Together these give the prefix-determinism guarantee the speculative
// decoder relies on: a token scored inside a tree block produces the same
// logit bytes as the same token scored alone on the same history.
//
// Architecture per layer: rmsnorm -> qkv -> rope -> masked attention -> o-proj
// -> residual -> rmsnorm -> silu-gated ffn -> residual. Final rmsnorm feeds a
// linear head. All math is float32.

#include <cstddef>
#include <random>

#include "esp/common.hpp"

namespace esp {

struct ModelConfig {
    int vocab_size = 256;
    int model_dim = 64;
    int num_layers = 4;
    int num_heads = 4;
    int ffn_dim = 256;
    float rope_base = 10000.0f;
    uint64_t seed = 0;

    int head_dim() const { return model_dim / num_heads; }

    void validate() const {
        if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
        if (num_layers < 1) throw ConfigError("num_layers must be >= 1");
        if (num_heads < 1 || model_dim % num_heads != 0) {
            throw ConfigError("model_dim must be divisible by num_heads");
        }
        if (ffn_dim < model_dim) throw ConfigError("ffn_dim must be >= model_dim");
        if (head_dim() % 2 != 0) throw ConfigError("head_dim must be even");
        if (!(rope_base > 0.0f)) throw ConfigError("rope_base must be positive");
    }
};

struct LayerWeights {
    std::vector<float> attn_norm;  // [d]
    std::vector<float> wq, wk, wv, wo;  // [d*d], row-major in_dim x out_dim
    std::vector<float> ffn_norm;  // [d]
    std::vector<float> w_gate, w_up;  // [d*ffn]
    std::vector<float> w_down;  // [ffn*d]
};

struct FrozenModel {
    ModelConfig config;
    std::vector<float> embedding;  // [V*d], row v = embedding of token v
    std::vector<LayerWeights> layers;
    std::vector<float> final_norm;  // [d]
    std::vector<float> lm_head;  // [d*V], logits = h . W

    std::vector<float> embed(TokenId token) const {
        const int V = config.vocab_size, d = config.model_dim;
        if (token < 0 || token >= V) {
            throw ConfigError("embed: token id out of range");
        }
        return std::vector<float>(embedding.begin() + static_cast<size_t>(token) * d,
                                  embedding.begin() + static_cast<size_t>(token + 1) * d);
    }
};

// Per-layer key/value store addressed by insertion slot. slot_to_position is
// the authoritative position record; positions need not stay contiguous
// until the engine compacts back to the committed history.
struct KvCache {
    std::vector<std::vector<float>> keys;    // [layer][slot*d]
    std::vector<std::vector<float>> values;  // [layer][slot*d]
    std::vector<int> slot_to_position;
    int dim = 0;

    static KvCache make(const ModelConfig& cfg) {
        KvCache c;
        c.keys.resize(cfg.num_layers);
        c.values.resize(cfg.num_layers);
        c.dim = cfg.model_dim;
        return c;
    }

    size_t length() const { return slot_to_position.size(); }
};

inline KvCache cache_compact(const KvCache& cache, const std::vector<size_t>& keep_slots) {
    for (size_t i = 0; i < keep_slots.size(); ++i) {
        if (keep_slots[i] >= cache.length()) {
            throw ConfigError("cache_compact: slot out of range");
        }
        if (i > 0 && keep_slots[i] <= keep_slots[i - 1]) {
            throw ConfigError("cache_compact: keep_slots must be strictly increasing");
        }
    }
    KvCache out;
    out.dim = cache.dim;
    out.keys.resize(cache.keys.size());
    out.values.resize(cache.values.size());
    const size_t d = static_cast<size_t>(cache.dim);
    for (size_t l = 0; l < cache.keys.size(); ++l) {
        out.keys[l].reserve(keep_slots.size() * d);
        out.values[l].reserve(keep_slots.size() * d);
        for (size_t s : keep_slots) {
            out.keys[l].insert(out.keys[l].end(), cache.keys[l].begin() + s * d,
                               cache.keys[l].begin() + (s + 1) * d);
            out.values[l].insert(out.values[l].end(), cache.values[l].begin() + s * d,
                                 cache.values[l].begin() + (s + 1) * d);
        }
    }
    out.slot_to_position.reserve(keep_slots.size());
    for (size_t s : keep_slots) out.slot_to_position.push_back(cache.slot_to_position[s]);
    return out;
}

// One block of flattened tree input. The mask has block_len rows and
// (cache_len + block_len) columns; a block token may attend cache slots and
// block tokens at earlier or equal layout index only.
struct ForwardRequest {
    std::vector<float> input_embeddings;  // [block_len * d]
    std::vector<int> position_ids;        // [block_len]
    std::vector<uint8_t> attention_mask;  // [block_len * (cache_len + block_len)]
    bool capture_hidden_states = false;
};

struct ForwardResult {
    std::vector<float> logits;  // [block_len * V]
    // When captured: L+1 levels. levels[0] is the embedding input, levels[l]
    // the residual after layer l, except that the top level carries the
    // final-norm output the head consumes (levels[L] . lm_head == logits).
    std::vector<std::vector<float>> hidden_levels;  // [L+1][block_len * d]
    size_t cache_length = 0;
};

namespace detail {

// out[j] = sum_i x[i] * w[i*out_dim + j], i ascending.
inline void matvec(const float* x, const float* w, int in_dim, int out_dim, float* out) {
    for (int j = 0; j < out_dim; ++j) out[j] = 0.0f;
    for (int i = 0; i < in_dim; ++i) {
        const float xi = x[i];
        const float* row = w + static_cast<size_t>(i) * out_dim;
        for (int j = 0; j < out_dim; ++j) out[j] += xi * row[j];
    }
}

inline void rmsnorm(const float* x, const float* gain, int d, float* out) {
    float ss = 0.0f;
    for (int i = 0; i < d; ++i) ss += x[i] * x[i];
    const float scale = 1.0f / std::sqrt(ss / static_cast<float>(d) + 1e-6f);
    for (int i = 0; i < d; ++i) out[i] = x[i] * scale * gain[i];
}

inline void rope_in_place(float* vec, int num_heads, int head_dim, int pos, float base) {
    const float p = static_cast<float>(pos);
    for (int h = 0; h < num_heads; ++h) {
        float* head = vec + h * head_dim;
        for (int pair = 0; pair * 2 < head_dim; ++pair) {
            const float freq =
                std::pow(base, -2.0f * static_cast<float>(pair) / static_cast<float>(head_dim));
            const float angle = p * freq;
            const float c = std::cos(angle), s = std::sin(angle);
            const float a = head[2 * pair], b = head[2 * pair + 1];
            head[2 * pair] = a * c - b * s;
            head[2 * pair + 1] = a * s + b * c;
        }
    }
}

}  // namespace detail

// Runs one block through the model, appending the block's keys/values to the
// cache. Logits at each row depend only on that row's attended columns.
inline ForwardResult forward(const FrozenModel& model, KvCache& cache, const ForwardRequest& req) {
    const ModelConfig& cfg = model.config;
    const int d = cfg.model_dim, V = cfg.vocab_size, L = cfg.num_layers;
    const int hd = cfg.head_dim(), H = cfg.num_heads;
    const size_t block_len = req.position_ids.size();
    const size_t cache_len = cache.length();
    const size_t total_cols = cache_len + block_len;

    if (block_len == 0) throw ConfigError("forward: empty block");
    if (req.input_embeddings.size() != block_len * static_cast<size_t>(d)) {
        throw ConfigError("forward: embeddings/position_ids shape mismatch");
    }
    if (req.attention_mask.size() != block_len * total_cols) {
        throw ConfigError("forward: attention mask shape mismatch");
    }
    for (size_t i = 0; i < block_len; ++i) {
        const uint8_t* row = req.attention_mask.data() + i * total_cols;
        bool any = false;
        for (size_t c = 0; c < total_cols; ++c) {
            if (!row[c]) continue;
            any = true;
            if (c >= cache_len && c - cache_len > i) {
                throw ConfigError("forward: block token attends a later layout index");
            }
        }
        if (!any) throw ConfigError("forward: attention row attends nothing");
        if (req.position_ids[i] < 0) throw ConfigError("forward: negative position id");
    }

    ForwardResult result;
    std::vector<float> x = req.input_embeddings;  // residual stream, [block_len*d]
    if (req.capture_hidden_states) {
        result.hidden_levels.reserve(L + 1);
        result.hidden_levels.push_back(x);
    }

    std::vector<float> normed(block_len * d), q(block_len * d);
    std::vector<float> attn_out(d), proj(d), gate(cfg.ffn_dim), up(cfg.ffn_dim), down(d);
    std::vector<float> scores(total_cols), weights(total_cols);

    for (int l = 0; l < L; ++l) {
        const LayerWeights& w = model.layers[l];
        std::vector<float>& lk = cache.keys[l];
        std::vector<float>& lv = cache.values[l];
        const size_t base = lk.size();
        lk.resize(base + block_len * d);
        lv.resize(base + block_len * d);

        // qkv for the whole block; keys are cached post-rotation.
        for (size_t i = 0; i < block_len; ++i) {
            detail::rmsnorm(x.data() + i * d, w.attn_norm.data(), d, normed.data() + i * d);
            detail::matvec(normed.data() + i * d, w.wq.data(), d, d, q.data() + i * d);
            detail::matvec(normed.data() + i * d, w.wk.data(), d, d, lk.data() + base + i * d);
            detail::matvec(normed.data() + i * d, w.wv.data(), d, d, lv.data() + base + i * d);
            detail::rope_in_place(q.data() + i * d, H, hd, req.position_ids[i], cfg.rope_base);
            detail::rope_in_place(lk.data() + base + i * d, H, hd, req.position_ids[i],
                                  cfg.rope_base);
        }

        for (size_t i = 0; i < block_len; ++i) {
            const uint8_t* mask_row = req.attention_mask.data() + i * total_cols;
            const float inv_sqrt_hd = 1.0f / std::sqrt(static_cast<float>(hd));
            for (int h = 0; h < H; ++h) {
                const float* qh = q.data() + i * d + h * hd;
                // Softmax strictly over attended columns, ascending slot order.
                float max_score = -INFINITY;
                for (size_t c = 0; c < total_cols; ++c) {
                    if (!mask_row[c]) continue;
                    const float* kh = lk.data() + c * d + h * hd;
                    float s = 0.0f;
                    for (int t = 0; t < hd; ++t) s += qh[t] * kh[t];
                    s *= inv_sqrt_hd;
                    scores[c] = s;
                    if (s > max_score) max_score = s;
                }
                float denom = 0.0f;
                for (size_t c = 0; c < total_cols; ++c) {
                    if (!mask_row[c]) continue;
                    weights[c] = std::exp(scores[c] - max_score);
                    denom += weights[c];
                }
                float* out_h = attn_out.data() + h * hd;
                for (int t = 0; t < hd; ++t) out_h[t] = 0.0f;
                for (size_t c = 0; c < total_cols; ++c) {
                    if (!mask_row[c]) continue;
                    const float wgt = weights[c] / denom;
                    const float* vh = lv.data() + c * d + h * hd;
                    for (int t = 0; t < hd; ++t) out_h[t] += wgt * vh[t];
                }
            }
            detail::matvec(attn_out.data(), w.wo.data(), d, d, proj.data());
            float* xi = x.data() + i * d;
            for (int t = 0; t < d; ++t) xi[t] += proj[t];

            detail::rmsnorm(xi, w.ffn_norm.data(), d, normed.data() + i * d);
            detail::matvec(normed.data() + i * d, w.w_gate.data(), d, cfg.ffn_dim, gate.data());
            detail::matvec(normed.data() + i * d, w.w_up.data(), d, cfg.ffn_dim, up.data());
            for (int t = 0; t < cfg.ffn_dim; ++t) {
                const float g = gate[t];
                gate[t] = g / (1.0f + std::exp(-g)) * up[t];
            }
            detail::matvec(gate.data(), w.w_down.data(), cfg.ffn_dim, d, down.data());
            for (int t = 0; t < d; ++t) xi[t] += down[t];
        }
        if (req.capture_hidden_states && l + 1 < L) result.hidden_levels.push_back(x);
    }

    // Final norm in place; the captured top level is exactly what the head sees.
    for (size_t i = 0; i < block_len; ++i) {
        detail::rmsnorm(x.data() + i * d, model.final_norm.data(), d, normed.data() + i * d);
    }
    if (req.capture_hidden_states) result.hidden_levels.push_back(normed);

    result.logits.resize(block_len * V);
    for (size_t i = 0; i < block_len; ++i) {
        detail::matvec(normed.data() + i * d, model.lm_head.data(), d, V,
                       result.logits.data() + i * V);
    }
    for (float v : result.logits) {
        if (!std::isfinite(v)) throw InternalError("forward: non-finite logit");
    }

    for (size_t i = 0; i < block_len; ++i) cache.slot_to_position.push_back(req.position_ids[i]);
    result.cache_length = cache.length();
    return result;
}

// Seeded random model. Draw order is fixed: embedding, then per layer
// [wq, wk, wv, wo, w_gate, w_up, w_down], then lm_head; norm gains are ones.
// Identical config => bit-identical weights.
inline FrozenModel build_random_model(const ModelConfig& config) {
    config.validate();
    FrozenModel m;
    m.config = config;
    std::mt19937_64 rng(config.seed);
    const int d = config.model_dim, V = config.vocab_size;

    auto draw = [&rng](std::vector<float>& t, size_t n, float stddev) {
        std::normal_distribution<float> dist(0.0f, stddev);
        t.resize(n);
        for (size_t i = 0; i < n; ++i) t[i] = dist(rng);
    };

    const float w_std = 1.0f / std::sqrt(static_cast<float>(d));
    const float down_std = 1.0f / std::sqrt(static_cast<float>(config.ffn_dim));
    draw(m.embedding, static_cast<size_t>(V) * d, 1.0f);
    m.layers.resize(config.num_layers);
    for (LayerWeights& lw : m.layers) {
        lw.attn_norm.assign(d, 1.0f);
        draw(lw.wq, static_cast<size_t>(d) * d, w_std);
        draw(lw.wk, static_cast<size_t>(d) * d, w_std);
        draw(lw.wv, static_cast<size_t>(d) * d, w_std);
        draw(lw.wo, static_cast<size_t>(d) * d, w_std);
        lw.ffn_norm.assign(d, 1.0f);
        draw(lw.w_gate, static_cast<size_t>(d) * config.ffn_dim, w_std);
        draw(lw.w_up, static_cast<size_t>(d) * config.ffn_dim, w_std);
        draw(lw.w_down, static_cast<size_t>(config.ffn_dim) * d, down_std);
    }
    m.final_norm.assign(d, 1.0f);
    draw(m.lm_head, static_cast<size_t>(d) * V, w_std);
    return m;
}

// Hand-constructed one-layer oracle. Attention at every position lands (with
// overwhelming softmax mass) on the nearest attended column one position id
// behind it, and the head maps that column's token v to a one-hot logit at
// (v + 2*stride) mod V. On successor chains x_{p+1} = (x_p + stride) mod V
// the model is AR-consistent, and a probe placed after x_t predicts x_{t+2}.
//
// Mechanics: embeddings carry a token one-hot in channels [0,V), a constant
// bias in channel 2V, and zero elsewhere, so every token has the same norm.
// Queries and keys read only the bias channel into rotary pair 0, with the
// key pre-rotated by one unit angle; after rope the score is
// G*cos(angle * (delta - 1)) where delta is the position-id gap, peaking
// exactly at delta = 1. Pair-0 angles are exactly representable integers, so
// the worst competing column within a 512-position window trails the target
// by > 5e-5 in cosine; G = 2e5 turns that into a softmax gap of e^-10 or
// better. Values copy the token one-hot into channels [V,2V), which is all
// the head reads.
inline FrozenModel build_successor_model(int vocab, int stride) {
    if (vocab < 2) throw ConfigError("successor model: vocab must be >= 2");
    if (stride < 1 || stride >= vocab) {
        throw ConfigError("successor model: stride must satisfy 1 <= stride < vocab");
    }
    const int V = vocab;
    const int d = 2 * V + 2;
    ModelConfig cfg;
    cfg.vocab_size = V;
    cfg.model_dim = d;
    cfg.num_layers = 1;
    cfg.num_heads = 1;
    cfg.ffn_dim = d;
    cfg.rope_base = 10000.0f;
    cfg.seed = 0;
    cfg.validate();

    FrozenModel m;
    m.config = cfg;
    m.embedding.assign(static_cast<size_t>(V) * d, 0.0f);
    for (int v = 0; v < V; ++v) {
        m.embedding[static_cast<size_t>(v) * d + v] = 1.0f;
        m.embedding[static_cast<size_t>(v) * d + 2 * V] = 1.0f;  // bias channel
    }

    LayerWeights lw;
    lw.attn_norm.assign(d, 1.0f);
    lw.ffn_norm.assign(d, 1.0f);
    lw.wq.assign(static_cast<size_t>(d) * d, 0.0f);
    lw.wk.assign(static_cast<size_t>(d) * d, 0.0f);
    lw.wv.assign(static_cast<size_t>(d) * d, 0.0f);
    lw.wo.assign(static_cast<size_t>(d) * d, 0.0f);
    lw.w_gate.assign(static_cast<size_t>(d) * cfg.ffn_dim, 0.0f);
    lw.w_up.assign(static_cast<size_t>(d) * cfg.ffn_dim, 0.0f);
    lw.w_down.assign(static_cast<size_t>(cfg.ffn_dim) * d, 0.0f);

    // Score gain G = sqrt(d)/2 * sq * sk; aim for ~2e5.
    const float s = std::sqrt(4.0e5f / std::sqrt(static_cast<float>(d)));
    const int bias_row = 2 * V;
    lw.wq[static_cast<size_t>(bias_row) * d + 0] = s;
    lw.wk[static_cast<size_t>(bias_row) * d + 0] = s * std::cos(1.0f);
    lw.wk[static_cast<size_t>(bias_row) * d + 1] = s * std::sin(1.0f);
    for (int v = 0; v < V; ++v) {
        lw.wv[static_cast<size_t>(v) * d + V + v] = 1.0f;
    }
    for (int i = 0; i < d; ++i) lw.wo[static_cast<size_t>(i) * d + i] = 1.0f;
    m.layers.push_back(std::move(lw));

    m.final_norm.assign(d, 1.0f);
    m.lm_head.assign(static_cast<size_t>(d) * V, 0.0f);
    for (int v = 0; v < V; ++v) {
        const int target = (v + 2 * stride) % V;
        m.lm_head[static_cast<size_t>(V + v) * V + target] = 1.0f;
    }
    return m;
}

// Full causal mask for a plain block (row i attends cache + block[0..i]).
inline std::vector<uint8_t> causal_mask(size_t cache_len, size_t block_len) {
    const size_t total = cache_len + block_len;
    std::vector<uint8_t> mask(block_len * total, 0);
    for (size_t i = 0; i < block_len; ++i) {
        for (size_t c = 0; c <= cache_len + i; ++c) mask[i * total + c] = 1;
    }
    return mask;
}

}  // namespace esp
