#include <doctest.h>

#include <atomic>
#include <functional>
#include <random>
#include <thread>

#include "esp/diagnostics.hpp"

using namespace esp;

namespace {

ModelConfig small_config(uint64_t seed) {
    ModelConfig cfg;
    cfg.vocab_size = 64;
    cfg.model_dim = 32;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.ffn_dim = 64;
    cfg.seed = seed;
    return cfg;
}

std::vector<float> random_vec(int d, std::mt19937_64& rng, float scale = 1.0f) {
    std::normal_distribution<float> dist(0.0f, scale);
    std::vector<float> v(d);
    for (float& x : v) x = dist(rng);
    return v;
}

}  // namespace

TEST_CASE("cosine helper") {
    CHECK(cosine({1.0f, 0.0f}, {0.0f, 1.0f}) == 0.0);
    CHECK(cosine({1.0f, 2.0f, -3.0f}, {1.0f, 2.0f, -3.0f}) == 1.0);
    CHECK(cosine({2.0f, 0.0f}, {-3.0f, 0.0f}) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(cosine({0.0f, 0.0f}, {1.0f, 0.0f}), InternalError);
}

TEST_CASE("threshold formula edges") {
    // Head with orthogonal columns: margins are fully controllable.
    const int V = 4, d = 2;
    std::vector<float> W(d * V, 0.0f);
    W[0 * V + 0] = 1.0f;  // w_0 = (1, 0)
    W[1 * V + 1] = 1.0f;  // w_1 = (0, 1)
    W[0 * V + 2] = 0.5f;  // w_2 = (0.5, 0)
    W[1 * V + 3] = 0.25f;

    const std::vector<float> h_v = {2.0f, 1.0f};  // logits: 2, 1, 1, 0.25

    SUBCASE("K=1 pins delta* to exactly 1") {
        const ThresholdResult r = lemma_threshold(h_v, W, V, 1);
        CHECK(r.i_star == 0);
        CHECK(r.margin == 0.0);
        CHECK(r.delta_star == 1.0);
    }
    SUBCASE("margin of 2c drives delta* to 0") {
        // Supply c_h explicitly so that 2c equals the K=V margin.
        ThresholdResult base = lemma_threshold(h_v, W, V, 4);
        const double c_h = base.margin / (2.0 * std::sqrt(2.0) * base.c_w);
        const ThresholdResult r = lemma_threshold(h_v, W, V, 4, c_h);
        CHECK(r.delta_star == doctest::Approx(0.0));
    }
    SUBCASE("delta* is non-increasing in K") {
        double prev = 2.0;
        for (int K = 1; K <= V; ++K) {
            const ThresholdResult r = lemma_threshold(h_v, W, V, K);
            CHECK(r.delta_star <= prev);
            prev = r.delta_star;
        }
        // K = V margin: max minus min logit.
        const ThresholdResult r = lemma_threshold(h_v, W, V, V);
        CHECK(r.margin == doctest::Approx(2.0 - 0.25));
    }
    SUBCASE("zero-norm inputs error") {
        CHECK_THROWS_AS(lemma_threshold({0.0f, 0.0f}, W, V, 2), ConfigError);
    }
}

TEST_CASE("lemma check identity and containment") {
    std::mt19937_64 rng(17);
    const int d = 16, V = 32;
    const std::vector<float> W = random_vec(d * V, rng);
    const std::vector<float> h_v = random_vec(d, rng);

    SUBCASE("identical states always land in the top-K") {
        const LemmaReport r = lemma_check(h_v, h_v, W, V, 4);
        CHECK(r.cos == 1.0);
        CHECK(r.cos >= r.delta_star);
        CHECK(r.in_topk);
    }
    SUBCASE("below-threshold reports carry no claim") {
        const std::vector<float> h_m = random_vec(d, rng);
        const LemmaReport r = lemma_check(h_m, h_v, W, V, 4);
        CHECK(r.cos >= -1.0);
        CHECK(r.cos <= 1.0);
        CHECK(r.margin >= 0.0);
    }
    SUBCASE("satisfied hypothesis forces containment, brute-force checked") {
        std::mt19937_64 inner(99);
        int satisfied = 0;
        for (int trial = 0; trial < 2000; ++trial) {
            const std::vector<float> w = random_vec(d * V, inner);
            const std::vector<float> v = random_vec(d, inner);
            std::vector<float> m = v;
            std::normal_distribution<float> noise(0.0f, 0.002f);
            for (float& x : m) x += noise(inner);
            const LemmaReport r = lemma_check(m, v, w, V, 8);
            if (r.cos >= r.delta_star) {
                ++satisfied;
                // Independent brute-force top-K of the probe logits.
                std::vector<std::pair<double, int>> scored(V);
                for (int t = 0; t < V; ++t) {
                    double acc = 0.0;
                    for (int i = 0; i < d; ++i) {
                        acc += static_cast<double>(m[i]) * w[static_cast<size_t>(i) * V + t];
                    }
                    scored[t] = {acc, t};
                }
                std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
                    if (a.first != b.first) return a.first > b.first;
                    return a.second < b.second;
                });
                bool found = false;
                for (int i = 0; i < 8; ++i) found |= scored[i].second == r.i_star;
                CHECK(found);
                CHECK(r.in_topk == found);
            }
        }
        CHECK(satisfied > 100);  // the adversarial draws populate the region
    }
}

TEST_CASE("lemma monte carlo finds no counterexamples") {
    for (int K : {1, 4, 8}) {
        const MonteCarloResult r = lemma_monte_carlo(2000, 16, 64, K, 7070 + K);
        CHECK(r.counterexamples == 0);
        CHECK(r.trials == 2000);
        if (K > 1) CHECK(r.hypothesis_satisfied > 0);
    }
}

TEST_CASE("trace positions: identical and probe-vs-true states") {
    const FrozenModel m = build_random_model(small_config(5));
    const std::vector<TokenId> prefix = {4, 9, 11, 30};

    SUBCASE("injecting the true token's embedding gives all-layer cosine 1") {
        const TracePoint p = trace_position(m, prefix, 7, 13, m.embed(7));
        REQUIRE(p.layer_cosines.size() == static_cast<size_t>(m.config.num_layers) + 1);
        for (double c : p.layer_cosines) CHECK(c == 1.0);
    }
    SUBCASE("a mean probe produces in-range cosines and an acceptance label") {
        std::vector<std::vector<float>> emb;
        for (TokenId t : prefix) emb.push_back(m.embed(t));
        const MaskState probe = init_mean(emb, 1);
        const TracePoint p = trace_position(m, prefix, 7, 13, probe.shared_value());
        for (double c : p.layer_cosines) {
            CHECK(c >= -1.0);
            CHECK(c <= 1.0);
        }
    }
}

TEST_CASE("cosine_trace runs hindsight comparisons along a transcript") {
    const FrozenModel m = build_random_model(small_config(6));
    const std::vector<TokenId> prompt = {3, 17, 42, 8, 25};
    const auto records = cosine_trace(m, prompt, 6, 0.1f, "p");
    REQUIRE(records.size() == 6);
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(records[i].prompt_id == "p");
        CHECK(records[i].position == static_cast<int>(prompt.size()) + static_cast<int>(i));
        CHECK(records[i].layer_cosines.size() == static_cast<size_t>(m.config.num_layers) + 1);
    }
    CHECK_THROWS_AS(cosine_trace(m, prompt, 0), ConfigError);

    // The acceptance label mirrors the greedy transcript: recompute position
    // zero by hand.
    const DecodeResult ar = decode_autoregressive(m, prompt, 0.0f, 0, 7);
    std::vector<TokenId> full = prompt;
    full.insert(full.end(), ar.tokens.begin(), ar.tokens.end());
    std::vector<std::vector<float>> emb;
    for (TokenId t : prompt) emb.push_back(m.embed(t));
    const MaskState probe = init_mean(emb, 1, 0.1f);
    const TracePoint p = trace_position(
        m, std::vector<TokenId>(full.begin(), full.begin() + prompt.size()), full[prompt.size()],
        full[prompt.size() + 1], probe.shared_value());
    CHECK(records[0].accepted == p.accepted);
}

TEST_CASE("accepted positions sit closer to the true token state") {
    // Corpus-level direction of the per-layer alignment: over a 100-prompt
    // seeded corpus on the default toy model, positions whose probe argmax
    // matched the true next-next token average a clearly higher final-layer
    // cosine (~0.53) than rejected ones (~0.31). Only the direction is
    // asserted; the magnitudes are model-specific.
    ModelConfig mc;  // toy defaults
    mc.seed = 2024;
    const FrozenModel model = build_random_model(mc);

    std::vector<std::vector<CosTraceRecord>> all(100);
    std::atomic<int> next{0};
    auto worker = [&] {
        for (int i = next.fetch_add(1); i < 100; i = next.fetch_add(1)) {
            std::mt19937_64 rng(7000 + i);
            std::vector<TokenId> prompt(8 + i % 9);
            for (TokenId& t : prompt) t = static_cast<TokenId>(rng() % 256);
            all[i] = cosine_trace(model, prompt, 8, 0.1f, "p" + std::to_string(i));
        }
    };
    std::thread t1(worker), t2(worker);
    t1.join();
    t2.join();

    double acc_sum = 0.0, rej_sum = 0.0;
    int acc_n = 0, rej_n = 0;
    for (const auto& recs : all) {
        for (const CosTraceRecord& r : recs) {
            CHECK(r.layer_cosines.size() == static_cast<size_t>(mc.num_layers) + 1);
            for (double c : r.layer_cosines) {
                CHECK(c >= -1.0 - 1e-6);
                CHECK(c <= 1.0 + 1e-6);
            }
            if (r.accepted) {
                acc_sum += r.layer_cosines.back();
                ++acc_n;
            } else {
                rej_sum += r.layer_cosines.back();
                ++rej_n;
            }
        }
    }
    REQUIRE(acc_n > 0);
    REQUIRE(rej_n > 0);
    CHECK(acc_sum / acc_n > rej_sum / rej_n);
}

TEST_CASE("json encoders for diagnostics records") {
    CosTraceRecord rec;
    rec.prompt_id = "x";
    rec.position = 3;
    rec.accepted = true;
    rec.layer_cosines = {0.5, 0.75};
    const auto j = to_json(rec);
    CHECK(j["accepted"] == true);
    CHECK(j["layer_cosines"].size() == 2);

    LemmaReport lr;
    lr.cos = 0.9;
    lr.delta_star = 0.8;
    lr.in_topk = true;
    const auto jl = to_json(lr);
    CHECK(jl["in_topk"] == true);
    CHECK(jl["cos"] == 0.9);
}
