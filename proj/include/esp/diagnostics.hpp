#pragma once

// Hindsight diagnostics for why probing works: per-layer cosine traces
// between probe and true-token hidden states, and the threshold delta* above
// which the greedy next-next token is guaranteed to land in the probe's
// top-K set. Inputs are the model's float32 tensors; all analysis math runs
// in double.
//
// The guarantee is one-directional. With c = sqrt(2) * c_w * c_h,
// c_w >= max_r ||w_r||, c_h >= max(||h_m||, ||h_v||) and margin the gap
// between the top and K-th logit under h_v:
//     cos(h_m, h_v) >= delta* = 1 - (margin / 2c)^2  =>  i* in top-K(h_m).
// Nothing is claimed below the threshold.

#include <optional>
#include <tuple>

#include <json.hpp>

#include "esp/decode.hpp"

namespace esp {

struct CosTraceRecord {
    std::string prompt_id;
    int position = 0;  // index of the true-next token in the full transcript
    bool accepted = false;
    std::vector<double> layer_cosines;  // L+1 levels, embeddings first
};

struct LemmaReport {
    double cos = 0.0;
    double delta_star = 0.0;
    double c_h = 0.0;
    double c_w = 0.0;
    double c = 0.0;
    int top_k = 0;
    TokenId i_star = 0;
    bool in_topk = false;
    double margin = 0.0;
};

struct ThresholdResult {
    double delta_star = 0.0;
    TokenId i_star = 0;
    double margin = 0.0;
    double c_w = 0.0;
    double c_h = 0.0;
};

struct MonteCarloResult {
    int64_t trials = 0;
    int64_t hypothesis_satisfied = 0;
    int64_t counterexamples = 0;
};

namespace detail {

// logits[r] = sum_i h[i] * W[i*V + r], in double.
inline std::vector<double> head_logits(const std::vector<float>& h, const std::vector<float>& W,
                                       int V) {
    const int d = static_cast<int>(h.size());
    if (W.size() != static_cast<size_t>(d) * V) {
        throw ConfigError("lemma: head shape mismatch");
    }
    std::vector<double> logits(V, 0.0);
    for (int i = 0; i < d; ++i) {
        const double hi = h[i];
        for (int r = 0; r < V; ++r) logits[r] += hi * W[static_cast<size_t>(i) * V + r];
    }
    return logits;
}

inline std::vector<int> top_k_desc(const std::vector<double>& values, int k) {
    std::vector<int> idx(values.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
        if (values[a] != values[b]) return values[a] > values[b];
        return a < b;
    });
    idx.resize(k);
    return idx;
}

inline double max_column_norm(const std::vector<float>& W, int d, int V) {
    double best = 0.0;
    for (int r = 0; r < V; ++r) {
        double s = 0.0;
        for (int i = 0; i < d; ++i) {
            const double w = W[static_cast<size_t>(i) * V + r];
            s += w * w;
        }
        best = std::max(best, std::sqrt(s));
    }
    return best;
}

}  // namespace detail

// delta* for the greedy token under h_v against its own top-K margin. c_h
// defaults to ||h_v||; callers comparing against a probe state pass the pair
// maximum instead.
inline ThresholdResult lemma_threshold(const std::vector<float>& h_v, const std::vector<float>& W,
                                       int V, int K, double c_h = 0.0) {
    if (K < 1 || K > V) throw ConfigError("lemma_threshold: K must be in [1, V]");
    const int d = static_cast<int>(h_v.size());
    ThresholdResult out;
    out.c_h = c_h > 0.0 ? c_h : l2_norm(h_v);
    if (out.c_h <= 0.0) throw ConfigError("lemma_threshold: zero-norm hidden state");
    out.c_w = detail::max_column_norm(W, d, V);
    if (out.c_w <= 0.0) throw ConfigError("lemma_threshold: zero-norm head");

    const std::vector<double> logits = detail::head_logits(h_v, W, V);
    const std::vector<int> top = detail::top_k_desc(logits, K);
    out.i_star = static_cast<TokenId>(top.front());
    out.margin = logits[top.front()] - logits[top.back()];  // gap to the K-th
    const double c = std::sqrt(2.0) * out.c_w * out.c_h;
    const double ratio = out.margin / (2.0 * c);
    out.delta_star = 1.0 - ratio * ratio;
    return out;
}

inline LemmaReport lemma_check(const std::vector<float>& h_m, const std::vector<float>& h_v,
                               const std::vector<float>& W, int V, int K) {
    const double norm_m = l2_norm(h_m), norm_v = l2_norm(h_v);
    if (norm_m <= 0.0 || norm_v <= 0.0) throw ConfigError("lemma_check: zero-norm hidden state");
    const double c_h = std::max(norm_m, norm_v);
    const ThresholdResult thr = lemma_threshold(h_v, W, V, K, c_h);

    LemmaReport report;
    report.cos = cosine(h_m, h_v);
    report.delta_star = thr.delta_star;
    report.c_h = c_h;
    report.c_w = thr.c_w;
    report.c = std::sqrt(2.0) * thr.c_w * c_h;
    report.top_k = K;
    report.i_star = thr.i_star;
    report.margin = thr.margin;

    const std::vector<double> mask_logits = detail::head_logits(h_m, W, V);
    report.in_topk = false;
    for (int r : detail::top_k_desc(mask_logits, K)) {
        if (r == thr.i_star) report.in_topk = true;
    }
    return report;
}

// Seeded random + adversarial instances. Every fourth draw is independent;
// the rest perturb h_v at shrinking scales so the cos >= delta* region is
// actually populated. Any counterexample is an implementation bug.
inline MonteCarloResult lemma_monte_carlo(int64_t trials, int d, int V, int K, uint64_t seed) {
    if (trials < 1) throw ConfigError("lemma_monte_carlo: trials must be >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> unit(0.0f, 1.0f);
    MonteCarloResult result;
    result.trials = trials;
    const float eps_schedule[3] = {0.1f, 0.01f, 0.001f};
    std::vector<float> W(static_cast<size_t>(d) * V), h_v(d), h_m(d);
    for (int64_t t = 0; t < trials; ++t) {
        for (float& w : W) w = unit(rng);
        for (float& x : h_v) x = unit(rng);
        if (t % 4 == 0) {
            for (float& x : h_m) x = unit(rng);
        } else {
            const float eps = eps_schedule[t % 4 - 1];
            for (int i = 0; i < d; ++i) h_m[i] = h_v[i] + eps * unit(rng);
        }
        const LemmaReport rep = lemma_check(h_m, h_v, W, V, K);
        if (rep.cos >= rep.delta_star) {
            ++result.hypothesis_satisfied;
            if (!rep.in_topk) ++result.counterexamples;
        }
    }
    return result;
}

// Hidden states for one hindsight comparison: the block is
// [prefix..., true_next, probe] where both tail slots share a position id
// and attend only the prefix and themselves.
struct TracePoint {
    std::vector<double> layer_cosines;
    bool accepted = false;
};

inline TracePoint trace_position(const FrozenModel& model, const std::vector<TokenId>& prefix,
                                 TokenId true_next, TokenId true_next_next,
                                 const std::vector<float>& probe_embedding) {
    if (prefix.empty()) throw ConfigError("trace_position: empty prefix");
    const int d = model.config.model_dim, V = model.config.vocab_size;
    const size_t t = prefix.size();
    const size_t block_len = t + 2;

    ForwardRequest req;
    req.capture_hidden_states = true;
    for (TokenId tok : prefix) detail::append_embedding(model, tok, req.input_embeddings);
    detail::append_embedding(model, true_next, req.input_embeddings);
    req.input_embeddings.insert(req.input_embeddings.end(), probe_embedding.begin(),
                                probe_embedding.end());
    req.position_ids.resize(block_len);
    for (size_t i = 0; i < t; ++i) req.position_ids[i] = static_cast<int>(i);
    req.position_ids[t] = static_cast<int>(t);
    req.position_ids[t + 1] = static_cast<int>(t);  // probe stands in for true_next

    req.attention_mask.assign(block_len * block_len, 0);
    for (size_t i = 0; i < t; ++i) {
        for (size_t c = 0; c <= i; ++c) req.attention_mask[i * block_len + c] = 1;
    }
    for (size_t row : {t, t + 1}) {
        for (size_t c = 0; c < t; ++c) req.attention_mask[row * block_len + c] = 1;
        req.attention_mask[row * block_len + row] = 1;
    }

    KvCache cache = KvCache::make(model.config);
    const ForwardResult result = forward(model, cache, req);

    TracePoint point;
    point.layer_cosines.reserve(result.hidden_levels.size());
    for (const auto& level : result.hidden_levels) {
        const std::vector<float> h_v(level.begin() + t * d, level.begin() + (t + 1) * d);
        const std::vector<float> h_m(level.begin() + (t + 1) * d, level.begin() + (t + 2) * d);
        point.layer_cosines.push_back(cosine(h_v, h_m));
    }
    point.accepted =
        argmax_token(detail::logits_row(result, t + 1, V)) == true_next_next;
    return point;
}

// Greedy transcript of horizon+1 tokens, then one hindsight comparison per
// generation position. The probe starts at the prompt mean and follows the
// same EMA schedule the engine uses.
inline std::vector<CosTraceRecord> cosine_trace(const FrozenModel& model,
                                                const std::vector<TokenId>& prompt, int horizon,
                                                float lambda = 0.1f,
                                                const std::string& prompt_id = "0") {
    if (horizon < 1) throw ConfigError("cosine_trace: horizon must be >= 1");
    if (prompt.empty()) throw ConfigError("cosine_trace: empty prompt");
    const DecodeResult ar = decode_autoregressive(model, prompt, 0.0f, 0, horizon + 1);
    if (static_cast<int>(ar.tokens.size()) < horizon + 1) {
        throw ConfigError("cosine_trace: horizon exceeds generated length");
    }
    std::vector<TokenId> full = prompt;
    full.insert(full.end(), ar.tokens.begin(), ar.tokens.end());

    std::vector<std::vector<float>> prompt_emb;
    prompt_emb.reserve(prompt.size());
    for (TokenId tok : prompt) prompt_emb.push_back(model.embed(tok));
    MaskState probe = init_mean(prompt_emb, 1, lambda);

    std::vector<CosTraceRecord> records;
    records.reserve(horizon);
    const size_t t = prompt.size();
    for (int i = 0; i < horizon; ++i) {
        const std::vector<TokenId> prefix(full.begin(), full.begin() + t + i);
        const TokenId true_next = full[t + i];
        const TokenId true_next_next = full[t + i + 1];
        const TracePoint point =
            trace_position(model, prefix, true_next, true_next_next, probe.shared_value());
        CosTraceRecord rec;
        rec.prompt_id = prompt_id;
        rec.position = static_cast<int>(t) + i;
        rec.accepted = point.accepted;
        rec.layer_cosines = point.layer_cosines;
        records.push_back(std::move(rec));
        ema_update(probe, model.embed(true_next));
    }
    return records;
}

inline nlohmann::json to_json(const CosTraceRecord& r) {
    return nlohmann::json{{"prompt_id", r.prompt_id},
                          {"position", r.position},
                          {"accepted", r.accepted},
                          {"layer_cosines", r.layer_cosines}};
}

inline nlohmann::json to_json(const LemmaReport& r) {
    return nlohmann::json{{"cos", r.cos},       {"delta_star", r.delta_star},
                          {"c_h", r.c_h},       {"c_w", r.c_w},
                          {"c", r.c},           {"top_k", r.top_k},
                          {"i_star", r.i_star}, {"in_topk", r.in_topk},
                          {"margin", r.margin}};
}

}  // namespace esp
