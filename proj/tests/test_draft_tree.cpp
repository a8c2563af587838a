#include <doctest.h>

#include <random>

#include "esp/draft_tree.hpp"

using namespace esp;

namespace {

// Logit row with chosen peaks; everything else sits at `floor`.
std::vector<float> peaked_row(int vocab, std::initializer_list<std::pair<int, float>> peaks,
                              float floor = 0.0f) {
    std::vector<float> row(vocab, floor);
    for (const auto& [token, value] : peaks) row[token] = value;
    return row;
}

BranchConfig static_config(std::vector<int> widths) {
    BranchConfig cfg;
    cfg.mode = BranchMode::Static;
    cfg.k = static_cast<int>(widths.size());
    cfg.static_widths = std::move(widths);
    return cfg;
}

// Independent re-derivation of the candidate pool and selection used by the
// dynamic builder, kept deliberately separate from the implementation.
struct OracleCand {
    TokenId token;
    int depth;
    double cum;
};

std::vector<OracleCand> oracle_dynamic_selection(const std::vector<std::vector<float>>& logits,
                                                 int budget, int k) {
    std::vector<OracleCand> pool;
    double spine_cum = 1.0;
    for (int depth = 1; depth <= k; ++depth) {
        const std::vector<float> probs = softmax(logits[depth - 1]);
        std::vector<int> ids(probs.size());
        for (size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
        std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
            if (probs[a] != probs[b]) return probs[a] > probs[b];
            return a < b;
        });
        const int width = std::min<int>(budget - depth, static_cast<int>(probs.size()));
        if (width <= 0) break;
        std::vector<OracleCand> level;
        for (int i = 0; i < width; ++i) {
            level.push_back({static_cast<TokenId>(ids[i]), depth,
                             spine_cum * static_cast<double>(probs[ids[i]])});
        }
        pool.insert(pool.end(), level.begin(), level.end());
        // The strongest candidate at this depth is the next spine node.
        OracleCand best = level.front();
        for (const OracleCand& c : level) {
            if (c.cum > best.cum || (c.cum == best.cum && c.token < best.token)) best = c;
        }
        spine_cum = best.cum;
    }
    std::stable_sort(pool.begin(), pool.end(), [](const OracleCand& a, const OracleCand& b) {
        if (a.cum != b.cum) return a.cum > b.cum;
        if (a.depth != b.depth) return a.depth < b.depth;
        return a.token < b.token;
    });
    if (static_cast<int>(pool.size()) > budget - 1) pool.resize(budget - 1);
    return pool;
}

}  // namespace

TEST_CASE("block complexity identities") {
    CHECK(block_complexity(2, {15, 4}) == 60);
    CHECK(block_complexity(2, {7, 2}) == 30);
    CHECK(block_complexity(1, {29}) == 60);
    CHECK(block_complexity(1, {14}) == 30);
    CHECK(block_complexity(1, {4}) == 10);
    CHECK(block_complexity(1, {0}) == 2);
    // Worked two-probe form: 3*(1 + K1 + K2).
    CHECK(block_complexity(2, {5, 4}) == 3 * (1 + 5 + 4));
    CHECK_THROWS_AS(block_complexity(0, {1}), ConfigError);
    CHECK_THROWS_AS(block_complexity(1, {-1}), ConfigError);
}

TEST_CASE("static tree: top-k per depth under the strongest parent") {
    const int V = 16;
    SUBCASE("k=1 keeps the peak order") {
        const std::vector<std::vector<float>> logits = {
            peaked_row(V, {{7, 5.0f}, {2, 4.0f}, {9, 3.0f}})};
        const DraftTree tree = build_static_tree(logits, static_config({3}), 0);
        REQUIRE(tree.nodes.size() == 3);
        CHECK(tree.nodes[0].token == 7);
        CHECK(tree.nodes[1].token == 2);
        CHECK(tree.nodes[2].token == 9);
        for (const TreeNode& n : tree.nodes) {
            CHECK(n.parent == -1);
            CHECK(n.depth == 1);
            CHECK(n.cum_prob == doctest::Approx(n.prob));
        }
    }
    SUBCASE("k=2 hangs depth-2 under the depth-1 argmax") {
        const std::vector<std::vector<float>> logits = {
            peaked_row(V, {{3, 6.0f}, {5, 2.0f}}), peaked_row(V, {{11, 4.0f}})};
        const DraftTree tree = build_static_tree(logits, static_config({2, 1}), 0);
        REQUIRE(tree.nodes.size() == 3);
        CHECK(tree.nodes[0].token == 3);
        CHECK(tree.nodes[2].depth == 2);
        CHECK(tree.nodes[2].parent == 0);  // the argmax child
        CHECK(tree.nodes[2].cum_prob ==
              doctest::Approx(tree.nodes[0].prob * tree.nodes[2].prob));
    }
    SUBCASE("uniform logits break ties by ascending token id") {
        const std::vector<std::vector<float>> logits = {std::vector<float>(V, 0.0f)};
        const DraftTree tree = build_static_tree(logits, static_config({4}), 0);
        REQUIRE(tree.nodes.size() == 4);
        for (int i = 0; i < 4; ++i) CHECK(tree.nodes[i].token == i);
    }
    SUBCASE("width above vocab is rejected") {
        const std::vector<std::vector<float>> logits = {std::vector<float>(V, 0.0f)};
        CHECK_THROWS_AS(build_static_tree(logits, static_config({17}), 0), ConfigError);
    }
}

TEST_CASE("dynamic tree: budget law") {
    std::mt19937_64 rng(101);
    std::normal_distribution<float> dist(0.0f, 2.0f);
    for (int trial = 0; trial < 200; ++trial) {
        const int V = 8 + static_cast<int>(rng() % 56);
        const int k = 1 + static_cast<int>(rng() % 3);
        const int B = 2 + static_cast<int>(rng() % 7);
        std::vector<std::vector<float>> logits(k, std::vector<float>(V));
        for (auto& row : logits)
            for (float& x : row) x = dist(rng);
        const DraftTree tree = build_dynamic_tree(logits, B, k, 0);
        CHECK(static_cast<int>(tree.nodes.size()) + 1 <= B);
        if (V >= B) CHECK(static_cast<int>(tree.nodes.size()) + 1 == B);
        // Connectivity and monotone cumulative scores along every path.
        for (const TreeNode& n : tree.nodes) {
            if (n.parent >= 0) {
                CHECK(n.parent < static_cast<int>(tree.nodes.size()));
                CHECK(tree.nodes[n.parent].depth == n.depth - 1);
                CHECK(n.cum_prob <= tree.nodes[n.parent].cum_prob);
            }
        }
    }
}

TEST_CASE("dynamic tree with k=1 equals static top-k") {
    const int V = 32;
    std::mt19937_64 rng(55);
    std::normal_distribution<float> dist(0.0f, 1.5f);
    std::vector<std::vector<float>> logits(1, std::vector<float>(V));
    for (float& x : logits[0]) x = dist(rng);

    const DraftTree dyn = build_dynamic_tree(logits, 5, 1, 3);
    const DraftTree sta = build_static_tree(logits, static_config({4}), 3);
    REQUIRE(dyn.nodes.size() == sta.nodes.size());
    for (size_t i = 0; i < dyn.nodes.size(); ++i) {
        CHECK(dyn.nodes[i].token == sta.nodes[i].token);
        CHECK(dyn.nodes[i].prob == sta.nodes[i].prob);
    }
}

TEST_CASE("dynamic tree shifts budget toward the informative depth") {
    const int V = 64;
    // Peaked depth-1 starves depth-1 alternatives of probability, so depth-2
    // candidates (flat, riding a near-1 spine) win slots; a flat depth-1
    // drowns depth-2 in the parent factor.
    const std::vector<std::vector<float>> peaked_then_flat = {
        peaked_row(V, {{5, 12.0f}}), std::vector<float>(V, 0.0f)};
    const std::vector<std::vector<float>> flat_then_flat = {std::vector<float>(V, 0.0f),
                                                            std::vector<float>(V, 0.0f)};
    auto depth2_count = [](const DraftTree& tree) {
        int n = 0;
        for (const TreeNode& node : tree.nodes) n += node.depth == 2;
        return n;
    };
    const DraftTree focused = build_dynamic_tree(peaked_then_flat, 10, 2, 0);
    const DraftTree spread = build_dynamic_tree(flat_then_flat, 10, 2, 0);
    CHECK(depth2_count(focused) > depth2_count(spread));

    // Brute-force scoring agrees on both counts.
    for (const auto* logits : {&peaked_then_flat, &flat_then_flat}) {
        const auto oracle = oracle_dynamic_selection(*logits, 10, 2);
        const DraftTree tree = build_dynamic_tree(*logits, 10, 2, 0);
        int oracle_d2 = 0;
        for (const auto& c : oracle) oracle_d2 += c.depth == 2;
        CHECK(depth2_count(tree) == oracle_d2);
    }
}

TEST_CASE("dynamic tree matches exhaustive small-instance oracle") {
    std::mt19937_64 rng(500);
    std::normal_distribution<float> dist(0.0f, 2.0f);
    for (int trial = 0; trial < 500; ++trial) {
        const int V = 2 + static_cast<int>(rng() % 7);   // <= 8
        const int k = 1 + static_cast<int>(rng() % 2);   // <= 2
        const int B = 2 + static_cast<int>(rng() % 5);   // <= 6
        std::vector<std::vector<float>> logits(k, std::vector<float>(V));
        for (auto& row : logits)
            for (float& x : row) x = dist(rng);

        const DraftTree tree = build_dynamic_tree(logits, B, k, 0);
        const auto oracle = oracle_dynamic_selection(logits, B, k);
        REQUIRE(tree.nodes.size() == oracle.size());
        std::vector<std::tuple<int, TokenId, double>> got, want;
        for (const TreeNode& n : tree.nodes) got.emplace_back(n.depth, n.token, n.cum_prob);
        for (const OracleCand& c : oracle) want.emplace_back(c.depth, c.token, c.cum);
        std::sort(got.begin(), got.end());
        std::sort(want.begin(), want.end());
        CHECK(got == want);
    }
}

TEST_CASE("prune replaces parent-duplicate tokens") {
    const int V = 16;
    SUBCASE("depth-1 child repeating the root is replaced by the runner-up") {
        const std::vector<std::vector<float>> logits = {
            peaked_row(V, {{4, 8.0f}, {9, 6.0f}, {1, 5.0f}})};
        DraftTree tree = build_static_tree(logits, static_config({2}), /*root=*/4);
        CHECK(tree.nodes[0].token == 4);  // duplicates the root
        const DraftTree pruned = prune(tree, logits);
        CHECK(pruned.nodes.size() == tree.nodes.size());
        CHECK(pruned.nodes[0].token == 1);  // 9 is taken by the sibling
        CHECK(pruned.nodes[1].token == 9);
        CHECK(pruned.nodes[0].prob == doctest::Approx(softmax(logits[0])[1]));
    }
    SUBCASE("duplicate-free trees come back bit-equal") {
        const std::vector<std::vector<float>> logits = {
            peaked_row(V, {{4, 8.0f}, {9, 6.0f}}), peaked_row(V, {{2, 7.0f}})};
        const DraftTree tree = build_static_tree(logits, static_config({2, 1}), 0);
        const DraftTree pruned = prune(tree, logits);
        REQUIRE(pruned.nodes.size() == tree.nodes.size());
        for (size_t i = 0; i < tree.nodes.size(); ++i) {
            CHECK(pruned.nodes[i].token == tree.nodes[i].token);
            CHECK(pruned.nodes[i].prob == tree.nodes[i].prob);
            CHECK(pruned.nodes[i].cum_prob == tree.nodes[i].cum_prob);
        }
    }
    SUBCASE("chained duplicates resolve top-down with fresh scores") {
        // Root 3; depth-1 argmax is also 3; its replacement is 6; the depth-2
        // argmax is 6 again, duplicating the new parent, and lands on 8.
        const std::vector<std::vector<float>> logits = {
            peaked_row(V, {{3, 9.0f}, {6, 7.0f}}),
            peaked_row(V, {{6, 9.0f}, {8, 5.0f}})};
        DraftTree tree = build_static_tree(logits, static_config({1, 1}), 3);
        const DraftTree pruned = prune(tree, logits);
        CHECK(pruned.nodes[0].token == 6);
        CHECK(pruned.nodes[1].token == 8);
        for (const TreeNode& n : pruned.nodes) {
            const TokenId parent_token =
                n.parent < 0 ? pruned.root_token : pruned.nodes[n.parent].token;
            CHECK(n.token != parent_token);
        }
        CHECK(pruned.nodes[1].cum_prob ==
              doctest::Approx(pruned.nodes[0].prob * pruned.nodes[1].prob));
    }
    SUBCASE("exhausted vocabulary is an error") {
        const std::vector<std::vector<float>> logits = {peaked_row(2, {{0, 3.0f}})};
        DraftTree tree = build_static_tree(logits, static_config({2}), 0);
        CHECK_THROWS_AS(prune(tree, logits), ConfigError);
    }
}

TEST_CASE("prune property: no parent-child equality over random trees") {
    std::mt19937_64 rng(808);
    std::normal_distribution<float> dist(0.0f, 3.0f);
    for (int trial = 0; trial < 300; ++trial) {
        const int V = 8 + static_cast<int>(rng() % 24);
        const int k = 1 + static_cast<int>(rng() % 3);
        std::vector<std::vector<float>> logits(k, std::vector<float>(V));
        for (auto& row : logits)
            for (float& x : row) x = dist(rng);
        const TokenId root = static_cast<TokenId>(rng() % V);
        const DraftTree tree = build_dynamic_tree(logits, 2 + static_cast<int>(rng() % 5), k, root);
        const DraftTree pruned = prune(tree, logits);
        REQUIRE(pruned.nodes.size() == tree.nodes.size());
        for (const TreeNode& n : pruned.nodes) {
            const TokenId parent_token =
                n.parent < 0 ? pruned.root_token : pruned.nodes[n.parent].token;
            CHECK(n.token != parent_token);
            for (const TreeNode& sib : pruned.nodes) {
                if (&sib != &n && sib.parent == n.parent) CHECK(sib.token != n.token);
            }
        }
    }
}

TEST_CASE("flatten layout shape and ordering") {
    const int V = 64;
    std::mt19937_64 rng(4242);
    std::normal_distribution<float> dist(0.0f, 2.0f);

    SUBCASE("19 nodes with k=2 make 60 slots") {
        std::vector<std::vector<float>> logits(2, std::vector<float>(V));
        for (auto& row : logits)
            for (float& x : row) x = dist(rng);
        DraftTree tree = build_static_tree(logits, static_config({15, 4}), 0);
        REQUIRE(tree.nodes.size() == 19);
        const FlattenedTree flat = flatten(tree);
        CHECK(flat.block_len() == 60);
        CHECK(flat.real_count() == 20);
    }
    SUBCASE("empty tree flattens to 1 + k slots") {
        std::vector<std::vector<float>> logits(3, std::vector<float>(V, 0.0f));
        DraftTree tree = build_static_tree(logits, static_config({0, 0, 0}), 5);
        CHECK(tree.nodes.empty());
        const FlattenedTree flat = flatten(tree);
        CHECK(flat.block_len() == 4);
        CHECK(flat.slots[0].kind == LayoutSlot::Kind::Root);
        for (int j = 1; j <= 3; ++j) {
            CHECK(flat.slots[j].kind == LayoutSlot::Kind::Mask);
            CHECK(flat.slots[j].mask_index == j);
        }
    }
    SUBCASE("every node appears exactly once before any probe slot") {
        std::vector<std::vector<float>> logits(2, std::vector<float>(V));
        for (auto& row : logits)
            for (float& x : row) x = dist(rng);
        DraftTree tree = build_dynamic_tree(logits, 10, 2, 1);
        const FlattenedTree flat = flatten(tree);
        std::vector<int> seen(tree.nodes.size(), 0);
        bool mask_started = false;
        for (const LayoutSlot& slot : flat.slots) {
            if (slot.kind == LayoutSlot::Kind::Mask) mask_started = true;
            else CHECK(!mask_started);
            if (slot.kind == LayoutSlot::Kind::Node) ++seen[slot.node];
        }
        for (int count : seen) CHECK(count == 1);
        // Within a depth, cumulative scores are non-increasing.
        for (size_t i = 1; i < tree.nodes.size(); ++i) {
            if (tree.nodes[i].depth == tree.nodes[i - 1].depth) {
                CHECK(tree.nodes[i].cum_prob <= tree.nodes[i - 1].cum_prob);
            } else {
                CHECK(tree.nodes[i].depth > tree.nodes[i - 1].depth);
            }
        }
    }
}
