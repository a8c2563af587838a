#pragma once

// The decode loop: prefill proposes, every later forward pass verifies the
// pending tree and proposes the next one in the same call.
//
// Losslessness contract: the committed stream always equals what plain
// one-token-at-a-time decoding of the same model/prompt/seed would produce.
// Greedy mode gets this from prefix determinism (a tree slot on an accepted
// path sees exactly the attended set the plain decoder would, so its logit
// bytes match). Sampled mode additionally keys every selection to the
// committed position index: the draw for position p comes from substream
// (seed, p) in both decoders, so identical logits imply identical picks.

#include <chrono>
#include <optional>

#include "esp/io.hpp"
#include "esp/mask_probe.hpp"
#include "esp/model.hpp"
#include "esp/tree_attention.hpp"

namespace esp {

struct EngineConfig {
    int block_complexity = 30;
    int mask_count = 1;
    BranchConfig branch{BranchMode::Static, {14}, 0, 1};
    MaskInit init = MaskInit::PromptMean;
    float sample_scale = 0.0f;
    bool pooled_sigma = false;
    float lambda = 0.1f;
    float temperature = 0.0f;
    uint64_t seed = 0;
    int max_new_tokens = 64;
    int max_context = 4096;  // prompt + generated positions
    bool pruning_enabled = true;
    bool efficient_layout = true;
    bool capture_diagnostics = false;
    std::optional<TokenId> stop_token;

    // Tree tokens including the root that a dynamic budget buys.
    int dynamic_budget() const { return block_complexity / (mask_count + 1); }

    void validate() const {
        if (mask_count < 1) throw ConfigError("config: mask_count must be >= 1");
        if (temperature < 0.0f) throw ConfigError("config: temperature must be >= 0");
        if (max_new_tokens < 1) throw ConfigError("config: max_new_tokens must be >= 1");
        if (branch.k != mask_count) throw ConfigError("config: branch k != mask_count");
        if (branch.mode == BranchMode::Static) {
            if (static_cast<int>(branch.static_widths.size()) != mask_count) {
                throw ConfigError("config: static branch needs one width per probe");
            }
            bool seen_zero = false;
            for (int w : branch.static_widths) {
                if (w == 0) seen_zero = true;
                else if (seen_zero) {
                    throw ConfigError("config: width after an empty tree level");
                }
            }
            const int64_t bc = esp::block_complexity(mask_count, branch.static_widths);
            if (bc != block_complexity) {
                throw ConfigError("config: widths give block complexity " + std::to_string(bc) +
                                  ", configured " + std::to_string(block_complexity));
            }
        } else {
            if (efficient_layout) {
                throw ConfigError("config: efficient layout requires static branching");
            }
            if (block_complexity % (mask_count + 1) != 0) {
                throw ConfigError("config: dynamic block complexity must be divisible by k+1");
            }
            if (dynamic_budget() < 2) {
                throw ConfigError("config: dynamic budget must be >= 2");
            }
        }
    }

    std::string describe() const {
        std::string branch_str;
        if (branch.mode == BranchMode::Static) {
            branch_str = "static:[";
            for (size_t i = 0; i < branch.static_widths.size(); ++i) {
                if (i) branch_str += ",";
                branch_str += std::to_string(branch.static_widths[i]);
            }
            branch_str += "]";
        } else {
            branch_str = "dynamic";
        }
        const char* init_str = init == MaskInit::PromptMean ? "mean"
                               : init == MaskInit::LastK    ? "lastk"
                                                            : "sample";
        std::string s = "bc=" + std::to_string(block_complexity) +
                        " k=" + std::to_string(mask_count) + " branch=" + branch_str +
                        " init=" + init_str + " lambda=" + std::to_string(lambda) +
                        " temp=" + std::to_string(temperature) +
                        " seed=" + std::to_string(seed) +
                        " prune=" + (pruning_enabled ? "on" : "off") +
                        " layout=" + (efficient_layout ? "efficient" : "naive");
        return s;
    }
};

struct StepMetrics {
    int accepted_count = 0;
    int bonus_emitted = 1;
    int64_t call_index = 0;
    size_t block_size = 0;
};

inline bool stop_token_hit(const std::optional<TokenId>& stop, TokenId tok) {
    return stop.has_value() && tok == *stop;
}

struct DecodeState {
    size_t prompt_len = 0;
    std::vector<TokenId> committed;  // generated tokens, prompt excluded
    KvCache cache;
    MaskState mask;
    DraftTree tree;
    FlattenedTree flat;
    AttentionLayout layout;
    bool layout_valid = false;
    size_t last_emitted = 0;  // cache growth feeding the next layout advance
    uint64_t draw_cursor = 0;
    int64_t model_calls = 0;
    std::vector<StepMetrics> steps;
    bool finished = false;
};

struct DecodeResult {
    std::vector<TokenId> tokens;
    RunRecord record;
    std::vector<StepMetrics> steps;  // populated when capture_diagnostics is set
};

// One selection, shared by every decode path. Greedy at temperature zero,
// otherwise an inverse-CDF pick from the temperature-scaled softmax using the
// uniform draw owned by this committed position.
inline TokenId select_token(const std::vector<float>& logits, float temperature, uint64_t seed,
                            uint64_t draw_index) {
    if (temperature <= 0.0f) return argmax_token(logits);
    double max_logit = -INFINITY;
    for (float v : logits) max_logit = std::max(max_logit, static_cast<double>(v));
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((static_cast<double>(logits[i]) - max_logit) / temperature);
        sum += p[i];
    }
    const double u = uniform01(substream(seed, draw_index)) * sum;
    double cum = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        cum += p[i];
        if (u < cum) return static_cast<TokenId>(i);
    }
    return static_cast<TokenId>(p.size() - 1);
}

namespace detail {

inline void append_embedding(const FrozenModel& model, TokenId token, std::vector<float>& out) {
    const int d = model.config.model_dim;
    if (token < 0 || token >= model.config.vocab_size) {
        throw InternalError("append_embedding: token out of range");
    }
    out.insert(out.end(), model.embedding.begin() + static_cast<size_t>(token) * d,
               model.embedding.begin() + static_cast<size_t>(token + 1) * d);
}

inline std::vector<float> logits_row(const ForwardResult& result, size_t slot, int vocab) {
    return std::vector<float>(result.logits.begin() + slot * vocab,
                              result.logits.begin() + (slot + 1) * vocab);
}

inline MaskState init_mask_state(const FrozenModel& model, const std::vector<TokenId>& prompt,
                                 const EngineConfig& cfg) {
    MaskStrategy strategy;
    strategy.sample_scale = cfg.sample_scale;
    strategy.pooled_sigma = cfg.pooled_sigma;
    strategy.seed = cfg.seed;
    if (cfg.init == MaskInit::GaussianSample) {
        return init_sample(model.embedding, model.config.vocab_size, model.config.model_dim,
                           cfg.mask_count, cfg.lambda, strategy);
    }
    std::vector<std::vector<float>> prompt_emb;
    prompt_emb.reserve(prompt.size());
    for (TokenId t : prompt) prompt_emb.push_back(model.embed(t));
    if (cfg.init == MaskInit::LastK) {
        return init_last_k(prompt_emb, cfg.mask_count, cfg.lambda, strategy);
    }
    return init_mean(prompt_emb, cfg.mask_count, cfg.lambda, strategy);
}

inline DraftTree make_tree(const std::vector<std::vector<float>>& mask_logits,
                           const EngineConfig& cfg, TokenId root) {
    DraftTree tree;
    if (cfg.branch.mode == BranchMode::Static) {
        tree = build_static_tree(mask_logits, cfg.branch, root);
    } else {
        tree = build_dynamic_tree(mask_logits, cfg.dynamic_budget(), cfg.mask_count, root);
    }
    if (cfg.pruning_enabled) tree = prune(tree, mask_logits);
    return tree;
}

}  // namespace detail

// One pass over [prompt ++ k probes] with a causal mask. Commits the first
// token from the last prompt position, seeds the first tree from the probe
// rows, and compacts the cache back to the prompt.
inline DecodeState prefill(const FrozenModel& model, const std::vector<TokenId>& prompt,
                           const EngineConfig& cfg) {
    cfg.validate();
    if (prompt.empty()) throw ConfigError("prefill: prompt must be non-empty");
    if (static_cast<int>(prompt.size()) + cfg.max_new_tokens > cfg.max_context) {
        throw ConfigError("prefill: prompt plus max_new_tokens exceeds the context bound");
    }
    if (cfg.branch.mode == BranchMode::Static) {
        for (int w : cfg.branch.static_widths) {
            if (w > model.config.vocab_size) {
                throw ConfigError("prefill: branch width exceeds vocabulary");
            }
        }
    }

    DecodeState state;
    state.prompt_len = prompt.size();
    state.cache = KvCache::make(model.config);
    state.mask = detail::init_mask_state(model, prompt, cfg);

    const size_t t = prompt.size();
    const int k = cfg.mask_count;
    ForwardRequest req;
    req.input_embeddings.reserve((t + k) * model.config.model_dim);
    for (TokenId tok : prompt) detail::append_embedding(model, tok, req.input_embeddings);
    for (int j = 0; j < k; ++j) {
        const auto& m = state.mask.embeddings[j];
        req.input_embeddings.insert(req.input_embeddings.end(), m.begin(), m.end());
    }
    req.position_ids.resize(t + k);
    for (size_t i = 0; i < t + k; ++i) req.position_ids[i] = static_cast<int>(i);
    req.attention_mask = causal_mask(0, t + k);

    const ForwardResult result = forward(model, state.cache, req);
    state.model_calls = 1;

    const int V = model.config.vocab_size;
    const TokenId first =
        select_token(detail::logits_row(result, t - 1, V), cfg.temperature, cfg.seed, 0);
    state.committed.push_back(first);
    state.draw_cursor = 1;
    if (cfg.stop_token && first == *cfg.stop_token) state.finished = true;

    std::vector<std::vector<float>> mask_logits;
    mask_logits.reserve(k);
    for (int j = 0; j < k; ++j) mask_logits.push_back(detail::logits_row(result, t + j, V));
    state.tree = detail::make_tree(mask_logits, cfg, first);
    state.flat = flatten(state.tree);

    std::vector<size_t> keep(t);
    for (size_t i = 0; i < t; ++i) keep[i] = i;
    state.cache = cache_compact(state.cache, keep);
    return state;
}

// One decode call: flatten the pending tree, verify it against the model's
// own selections, commit the accepted chain plus the bonus token, compact the
// cache to the committed history, refresh the probe state, and build the next
// tree from the probe chain anchored at the deepest accepted position.
inline void step(const FrozenModel& model, DecodeState& state, const EngineConfig& cfg) {
    if (state.finished) throw InternalError("step: decode already finished");
    const int V = model.config.vocab_size;
    const int d = model.config.model_dim;
    const int k = cfg.mask_count;
    const size_t p0 = state.prompt_len + state.committed.size() - 1;
    if (state.cache.length() != p0) {
        throw InternalError("step: cache length disagrees with committed history");
    }

    if (cfg.efficient_layout && state.layout_valid) {
        state.layout = advance_layout_efficient(state.layout, state.last_emitted);
    } else {
        state.layout = build_layout_naive(state.tree, state.flat, state.cache.length(),
                                          static_cast<int>(p0));
        state.layout_valid = true;
    }

    ForwardRequest req;
    req.input_embeddings.reserve(state.flat.block_len() * d);
    for (const LayoutSlot& slot : state.flat.slots) {
        switch (slot.kind) {
            case LayoutSlot::Kind::Root:
                detail::append_embedding(model, state.committed.back(), req.input_embeddings);
                break;
            case LayoutSlot::Kind::Node:
                detail::append_embedding(model, state.tree.nodes[slot.node].token,
                                         req.input_embeddings);
                break;
            case LayoutSlot::Kind::Mask: {
                const auto& m = state.mask.embeddings[slot.mask_index - 1];
                req.input_embeddings.insert(req.input_embeddings.end(), m.begin(), m.end());
                break;
            }
        }
    }
    req.position_ids = state.layout.position_ids;
    req.attention_mask = state.layout.mask;

    const size_t cache_before = state.cache.length();
    const ForwardResult result = forward(model, state.cache, req);
    ++state.model_calls;

    // Verification walk. Each selection consumes the rng draw owned by the
    // position it generates, keeping sampled mode aligned with the oracle.
    const int remaining = cfg.max_new_tokens - static_cast<int>(state.committed.size());
    std::vector<int> chain;
    std::vector<TokenId> emitted;
    int cur_node = -1;
    size_t cur_slot = 0;
    while (true) {
        const TokenId sel =
            select_token(detail::logits_row(result, cur_slot, V), cfg.temperature, cfg.seed,
                         state.draw_cursor + emitted.size());
        emitted.push_back(sel);
        int child = -1;
        if (static_cast<int>(emitted.size()) < remaining) {
            for (size_t i = 0; i < state.tree.nodes.size(); ++i) {
                if (state.tree.nodes[i].parent == cur_node && state.tree.nodes[i].token == sel) {
                    child = static_cast<int>(i);
                    break;
                }
            }
        }
        if (child < 0) break;  // mismatch or leaf: `sel` stays as the bonus token
        chain.push_back(child);
        cur_node = child;
        cur_slot = static_cast<size_t>(child) + 1;
    }
    const int accepted = static_cast<int>(chain.size());

    StepMetrics metrics;
    metrics.accepted_count = accepted;
    metrics.call_index = state.model_calls;
    metrics.block_size = state.flat.block_len();
    state.steps.push_back(metrics);

    std::vector<size_t> keep(cache_before);
    for (size_t i = 0; i < cache_before; ++i) keep[i] = i;
    for (size_t slot : gather_accept_path_columns(state.tree, chain)) {
        keep.push_back(cache_before + slot);
    }
    state.cache = cache_compact(state.cache, keep);

    for (TokenId tok : emitted) {
        state.committed.push_back(tok);
        ++state.draw_cursor;
        if (cfg.stop_token && tok == *cfg.stop_token) {
            state.finished = true;
            break;
        }
    }
    if (static_cast<int>(state.committed.size()) >= cfg.max_new_tokens) state.finished = true;
    state.last_emitted = emitted.size();
    if (state.finished) return;

    ema_update(state.mask, model.embed(state.committed.back()));

    const int anchor_rank = chain.empty() ? 0 : chain.back() + 1;
    std::vector<std::vector<float>> mask_logits;
    mask_logits.reserve(k);
    for (int j = 1; j <= k; ++j) {
        mask_logits.push_back(detail::logits_row(result, state.flat.mask_slot(anchor_rank, j), V));
    }
    state.tree = detail::make_tree(mask_logits, cfg, state.committed.back());
    state.flat = flatten(state.tree);
}

namespace detail {

inline RunRecord finish_record(const std::string& prompt_id, const std::string& method,
                               const std::string& config, const std::vector<TokenId>& tokens,
                               int64_t model_calls, const std::vector<StepMetrics>& steps,
                               std::chrono::steady_clock::time_point t0) {
    RunRecord rec;
    rec.prompt_id = prompt_id;
    rec.method = method;
    rec.config = config;
    rec.output_tokens = tokens;
    rec.model_calls = model_calls;
    rec.tau = static_cast<double>(tokens.size()) / static_cast<double>(model_calls);
    for (const StepMetrics& m : steps) rec.accepted_histogram[m.accepted_count] += 1;
    rec.wall_nanos = std::chrono::duration_cast<std::chrono::nanoseconds>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    return rec;
}

}  // namespace detail

inline DecodeResult decode(const FrozenModel& model, const std::vector<TokenId>& prompt,
                           const EngineConfig& cfg, const std::string& prompt_id = "0") {
    const auto t0 = std::chrono::steady_clock::now();
    DecodeState state = prefill(model, prompt, cfg);
    while (!state.finished &&
           static_cast<int>(state.committed.size()) < cfg.max_new_tokens) {
        step(model, state, cfg);
    }
    DecodeResult out;
    out.tokens = state.committed;
    out.record = detail::finish_record(prompt_id, "esp", cfg.describe(), state.committed,
                                       state.model_calls, state.steps, t0);
    if (cfg.capture_diagnostics) out.steps = state.steps;
    return out;
}

// Plain one-token-per-call decoding with the same selection rule and rng
// discipline as the verifier.
inline DecodeResult decode_autoregressive(const FrozenModel& model,
                                          const std::vector<TokenId>& prompt, float temperature,
                                          uint64_t seed, int max_new_tokens,
                                          std::optional<TokenId> stop_token = std::nullopt,
                                          const std::string& prompt_id = "0") {
    if (prompt.empty()) throw ConfigError("decode: prompt must be non-empty");
    if (max_new_tokens < 1) throw ConfigError("decode: max_new_tokens must be >= 1");
    const auto t0 = std::chrono::steady_clock::now();
    const int V = model.config.vocab_size;

    KvCache cache = KvCache::make(model.config);
    ForwardRequest req;
    for (TokenId tok : prompt) detail::append_embedding(model, tok, req.input_embeddings);
    req.position_ids.resize(prompt.size());
    for (size_t i = 0; i < prompt.size(); ++i) req.position_ids[i] = static_cast<int>(i);
    req.attention_mask = causal_mask(0, prompt.size());
    ForwardResult result = forward(model, cache, req);
    int64_t calls = 1;

    std::vector<TokenId> tokens;
    TokenId tok = select_token(detail::logits_row(result, prompt.size() - 1, V), temperature,
                               seed, 0);
    tokens.push_back(tok);
    while (static_cast<int>(tokens.size()) < max_new_tokens &&
           !(stop_token && tokens.back() == *stop_token)) {
        ForwardRequest r;
        detail::append_embedding(model, tokens.back(), r.input_embeddings);
        r.position_ids = {static_cast<int>(prompt.size() + tokens.size() - 1)};
        r.attention_mask = causal_mask(cache.length(), 1);
        result = forward(model, cache, r);
        ++calls;
        tok = select_token(detail::logits_row(result, 0, V), temperature, seed, tokens.size());
        tokens.push_back(tok);
    }

    DecodeResult out;
    out.tokens = tokens;
    out.record = detail::finish_record(prompt_id, "ar",
                                       "temp=" + std::to_string(temperature) +
                                           " seed=" + std::to_string(seed),
                                       tokens, calls, {}, t0);
    return out;
}

struct PldConfig {
    int ngram = 3;
    int draft_depth = 10;  // single-path tree, one token per depth
    float temperature = 0.0f;
    uint64_t seed = 0;
    int max_new_tokens = 64;
    std::optional<TokenId> stop_token;
};

// Prompt-lookup drafting: copy the continuation of the most recent earlier
// occurrence of the trailing n-gram and verify it as a single-path draft.
// Verification is the same exact-match walk, so PLD is lossless too.
inline DecodeResult decode_pld(const FrozenModel& model, const std::vector<TokenId>& prompt,
                               const PldConfig& cfg, const std::string& prompt_id = "0") {
    if (prompt.empty()) throw ConfigError("decode: prompt must be non-empty");
    if (cfg.ngram < 1) throw ConfigError("pld: ngram must be >= 1");
    const auto t0 = std::chrono::steady_clock::now();
    const int V = model.config.vocab_size;

    KvCache cache = KvCache::make(model.config);
    ForwardRequest req;
    for (TokenId tok : prompt) detail::append_embedding(model, tok, req.input_embeddings);
    req.position_ids.resize(prompt.size());
    for (size_t i = 0; i < prompt.size(); ++i) req.position_ids[i] = static_cast<int>(i);
    req.attention_mask = causal_mask(0, prompt.size());
    ForwardResult result = forward(model, cache, req);
    int64_t calls = 1;

    std::vector<TokenId> context = prompt;
    std::vector<TokenId> tokens;
    std::vector<StepMetrics> steps;
    TokenId first = select_token(detail::logits_row(result, prompt.size() - 1, V),
                                 cfg.temperature, cfg.seed, 0);
    tokens.push_back(first);
    context.push_back(first);
    bool finished = stop_token_hit(cfg.stop_token, first);

    while (!finished && static_cast<int>(tokens.size()) < cfg.max_new_tokens) {
        // Most recent earlier occurrence of the trailing n-gram.
        std::vector<TokenId> draft;
        const size_t n = static_cast<size_t>(cfg.ngram);
        if (context.size() >= n + 1) {
            for (size_t j = context.size() - n; j-- > 0;) {
                if (std::equal(context.begin() + j, context.begin() + j + n,
                               context.end() - n)) {
                    const size_t start = j + n;
                    const size_t len = std::min<size_t>(cfg.draft_depth, context.size() - start);
                    draft.assign(context.begin() + start, context.begin() + start + len);
                    break;
                }
            }
        }

        const size_t cache_before = cache.length();
        ForwardRequest r;
        detail::append_embedding(model, tokens.back(), r.input_embeddings);
        for (TokenId tok : draft) detail::append_embedding(model, tok, r.input_embeddings);
        r.position_ids.resize(1 + draft.size());
        for (size_t i = 0; i < r.position_ids.size(); ++i) {
            r.position_ids[i] = static_cast<int>(cache_before + i);
        }
        r.attention_mask = causal_mask(cache_before, 1 + draft.size());
        result = forward(model, cache, r);
        ++calls;

        const int remaining = cfg.max_new_tokens - static_cast<int>(tokens.size());
        std::vector<TokenId> emitted;
        size_t accepted = 0;
        while (true) {
            const TokenId sel = select_token(detail::logits_row(result, accepted, V),
                                             cfg.temperature, cfg.seed,
                                             tokens.size() + emitted.size());
            emitted.push_back(sel);
            if (accepted < draft.size() && sel == draft[accepted] &&
                static_cast<int>(emitted.size()) < remaining) {
                ++accepted;
            } else {
                break;
            }
        }

        StepMetrics m;
        m.accepted_count = static_cast<int>(accepted);
        m.call_index = calls;
        m.block_size = 1 + draft.size();
        steps.push_back(m);

        std::vector<size_t> keep(cache_before + 1 + accepted);
        for (size_t i = 0; i < keep.size(); ++i) keep[i] = i;
        cache = cache_compact(cache, keep);

        for (TokenId tok : emitted) {
            tokens.push_back(tok);
            context.push_back(tok);
            if (stop_token_hit(cfg.stop_token, tok)) {
                finished = true;
                break;
            }
        }
    }

    DecodeResult out;
    out.tokens = tokens;
    out.record = detail::finish_record(prompt_id, "pld",
                                       "ngram=" + std::to_string(cfg.ngram) +
                                           " depth=" + std::to_string(cfg.draft_depth) +
                                           " temp=" + std::to_string(cfg.temperature) +
                                           " seed=" + std::to_string(cfg.seed),
                                       tokens, calls, steps, t0);
    return out;
}

struct BenchRow {
    std::string method;
    double mean_tau = 0.0;
    double mean_calls = 0.0;
    double call_reduction = 0.0;  // 1 - calls_method / calls_ar
};

struct BenchSummary {
    std::vector<BenchRow> rows;
    std::vector<RunRecord> records;
};

// Cross-product of prompts x {ar, pld, each engine config}; per-run records
// are appended to out_path (when non-empty) in prompt-major order.
inline BenchSummary run_bench(const FrozenModel& model, const std::vector<PromptRecord>& prompts,
                              const std::vector<EngineConfig>& esp_configs,
                              const std::string& out_path, float temperature = 0.0f,
                              uint64_t seed = 0, int max_new_tokens = 64) {
    if (prompts.empty()) throw ConfigError("bench: no prompts");
    BenchSummary summary;
    std::vector<std::string> methods = {"ar", "pld"};
    for (const EngineConfig& cfg : esp_configs) {
        methods.push_back("esp " + std::to_string(cfg.block_complexity) + "/" +
                          std::to_string(cfg.mask_count));
    }
    std::vector<double> tau_sum(methods.size(), 0.0), call_sum(methods.size(), 0.0);

    for (const PromptRecord& prompt : prompts) {
        size_t mi = 0;
        DecodeResult ar = decode_autoregressive(model, prompt.tokens, temperature, seed,
                                                max_new_tokens, std::nullopt, prompt.id);
        tau_sum[mi] += ar.record.tau;
        call_sum[mi] += static_cast<double>(ar.record.model_calls);
        summary.records.push_back(ar.record);
        ++mi;

        PldConfig pld;
        pld.temperature = temperature;
        pld.seed = seed;
        pld.max_new_tokens = max_new_tokens;
        DecodeResult pld_result = decode_pld(model, prompt.tokens, pld, prompt.id);
        tau_sum[mi] += pld_result.record.tau;
        call_sum[mi] += static_cast<double>(pld_result.record.model_calls);
        summary.records.push_back(pld_result.record);
        ++mi;

        for (const EngineConfig& base_cfg : esp_configs) {
            EngineConfig cfg = base_cfg;
            cfg.temperature = temperature;
            cfg.seed = seed;
            cfg.max_new_tokens = max_new_tokens;
            DecodeResult r = decode(model, prompt.tokens, cfg, prompt.id);
            tau_sum[mi] += r.record.tau;
            call_sum[mi] += static_cast<double>(r.record.model_calls);
            summary.records.push_back(r.record);
            ++mi;
        }
    }

    const double n = static_cast<double>(prompts.size());
    const double ar_calls = call_sum[0] / n;
    for (size_t i = 0; i < methods.size(); ++i) {
        BenchRow row;
        row.method = methods[i];
        row.mean_tau = tau_sum[i] / n;
        row.mean_calls = call_sum[i] / n;
        row.call_reduction = 1.0 - row.mean_calls / ar_calls;
        summary.rows.push_back(row);
    }
    if (!out_path.empty()) write_metrics(summary.records, out_path);
    return summary;
}

}  // namespace esp
