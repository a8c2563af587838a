#pragma once

// Synthesis and maintenance of the k probe ("mask") embeddings. Probe values
// are shared across every tree position; under the mean and Gaussian inits
// all k probes also hold one common value, while the hard init deliberately
// assigns probe i the embedding of prompt token t-k-i.

#include <random>

#include "esp/common.hpp"

namespace esp {

enum class MaskInit { PromptMean, LastK, GaussianSample };

struct MaskStrategy {
    MaskInit kind = MaskInit::PromptMean;
    // Gaussian sampling: probe ~ N(mu + sample_scale * sigma, sigma^2 I), with
    // mu/sigma taken over the full embedding table. sample_scale 0 stays in
    // distribution; 5 or 10 stress-tests out-of-distribution starts.
    float sample_scale = 0.0f;
    bool pooled_sigma = false;  // scalar sigma instead of per-dimension
    uint64_t seed = 0;
};

struct MaskState {
    int k = 1;
    std::vector<std::vector<float>> embeddings;  // k copies, always bit-equal
    MaskStrategy strategy;
    float lambda = 0.1f;
    int64_t step = 0;

    const std::vector<float>& shared_value() const { return embeddings.at(0); }
};

namespace detail {

inline MaskState make_state(std::vector<float> value, int k, MaskStrategy strategy,
                            float lambda) {
    if (k < 1) throw ConfigError("mask state: k must be >= 1");
    MaskState s;
    s.k = k;
    s.embeddings.assign(k, std::move(value));
    s.strategy = strategy;
    s.lambda = lambda;
    return s;
}

}  // namespace detail

// Every probe = mean of the prompt embeddings.
inline MaskState init_mean(const std::vector<std::vector<float>>& prompt_embeddings, int k,
                           float lambda = 0.1f, MaskStrategy strategy = {}) {
    if (prompt_embeddings.empty()) throw ConfigError("init_mean: empty prompt");
    const size_t d = prompt_embeddings.front().size();
    std::vector<float> mean(d, 0.0f);
    for (const auto& e : prompt_embeddings) {
        for (size_t i = 0; i < d; ++i) mean[i] += e[i];
    }
    const float inv = 1.0f / static_cast<float>(prompt_embeddings.size());
    for (float& v : mean) v *= inv;
    strategy.kind = MaskInit::PromptMean;
    return detail::make_state(std::move(mean), k, strategy, lambda);
}

// Hard init from trailing prompt tokens: probe i = e_{t-k-i} against 1-based
// prompt positions, so for t=10, k=1 the probe is the 8th embedding.
inline MaskState init_last_k(const std::vector<std::vector<float>>& prompt_embeddings, int k,
                             float lambda = 0.1f, MaskStrategy strategy = {}) {
    if (k < 1) throw ConfigError("mask state: k must be >= 1");
    const int t = static_cast<int>(prompt_embeddings.size());
    if (t <= 2 * k) {
        throw ConfigError("init_last_k: prompt length must exceed 2k");
    }
    strategy.kind = MaskInit::LastK;
    MaskState s;
    s.k = k;
    s.strategy = strategy;
    s.lambda = lambda;
    s.embeddings.reserve(k);
    for (int i = 1; i <= k; ++i) {
        s.embeddings.push_back(prompt_embeddings[t - k - i - 1]);  // to 0-based
    }
    return s;
}

// One seeded draw from a Gaussian fit to the embedding table, shared by all
// k probes. sigma is per-dimension unless the strategy pools it.
inline MaskState init_sample(const std::vector<float>& embedding_table, int vocab, int dim, int k,
                             float lambda = 0.1f, MaskStrategy strategy = {}) {
    if (vocab < 1 || dim < 1 ||
        embedding_table.size() != static_cast<size_t>(vocab) * static_cast<size_t>(dim)) {
        throw ConfigError("init_sample: bad embedding table shape");
    }
    strategy.kind = MaskInit::GaussianSample;
    std::vector<double> mu(dim, 0.0), var(dim, 0.0);
    for (int v = 0; v < vocab; ++v) {
        for (int i = 0; i < dim; ++i) mu[i] += embedding_table[static_cast<size_t>(v) * dim + i];
    }
    for (double& m : mu) m /= vocab;
    for (int v = 0; v < vocab; ++v) {
        for (int i = 0; i < dim; ++i) {
            const double dlt = embedding_table[static_cast<size_t>(v) * dim + i] - mu[i];
            var[i] += dlt * dlt;
        }
    }
    for (double& s : var) s /= vocab;
    std::vector<double> sigma(dim);
    if (strategy.pooled_sigma) {
        double pooled = 0.0;
        for (double s : var) pooled += s;
        pooled = std::sqrt(pooled / dim);
        sigma.assign(dim, pooled);
    } else {
        for (int i = 0; i < dim; ++i) sigma[i] = std::sqrt(var[i]);
    }

    std::mt19937_64 rng(strategy.seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::vector<float> probe(dim);
    for (int i = 0; i < dim; ++i) {
        const double z = unit(rng);
        probe[i] = static_cast<float>(mu[i] + strategy.sample_scale * sigma[i] + sigma[i] * z);
    }
    return detail::make_state(std::move(probe), k, strategy, lambda);
}

// EMA toward the newest committed token's embedding: m <- m + lambda*(e - m).
// Endpoints are handled exactly so lambda=0 is a no-op and lambda=1 replaces.
inline void ema_update(MaskState& state, const std::vector<float>& last_token_embedding) {
    if (state.embeddings.empty()) throw ConfigError("ema_update: uninitialized mask state");
    const float lambda = state.lambda;
    for (auto& m : state.embeddings) {
        if (m.size() != last_token_embedding.size()) {
            throw ConfigError("ema_update: dimension mismatch");
        }
        if (lambda >= 1.0f) {
            m = last_token_embedding;
        } else if (lambda > 0.0f) {
            for (size_t i = 0; i < m.size(); ++i) {
                m[i] += lambda * (last_token_embedding[i] - m[i]);
            }
        }
    }
    ++state.step;
}

}  // namespace esp
