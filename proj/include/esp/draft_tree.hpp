#pragma once

// Speculative token tree built from the k probe-token distributions.
//
// Depth-i nodes come from probe i's softmax; only the strongest node at each
// depth receives children (Top-1 expansion), so a tree is a set of sibling
// fans hanging off one spine. Ties break deterministically everywhere:
// descending probability, then ascending token id.
//
// Node storage order is the build order (depth by depth, strongest first).
// flatten() emits that order, which for freshly built trees coincides with
// breadth-first descending-cum_prob order. The pruner replaces tokens in
// place and never reorders, so a static-width tree keeps an identical
// slot-for-slot layout shape across decode steps; the incremental attention
// path depends on that stability.

#include <optional>

#include "esp/common.hpp"

namespace esp {

enum class BranchMode { Static, Dynamic };

struct BranchConfig {
    BranchMode mode = BranchMode::Static;
    std::vector<int> static_widths;  // K_1..K_k (Static)
    int budget = 0;                  // tree tokens including root (Dynamic)
    int k = 1;
};

// Total tokens processed in one forward pass: the last accepted token, all
// tree nodes, and one probe chain of length k per tree position.
inline int64_t block_complexity(int k, const std::vector<int>& widths) {
    if (k < 1) throw ConfigError("block_complexity: k must be >= 1");
    int64_t sum = 0;
    for (int w : widths) {
        if (w < 0) throw ConfigError("block_complexity: widths must be non-negative");
        sum += w;
    }
    return static_cast<int64_t>(k + 1) * (1 + sum);
}

struct TreeNode {
    TokenId token = 0;
    int parent = -1;  // node index, -1 = root
    int depth = 1;
    float prob = 0.0f;
    double cum_prob = 0.0;
    int layout_slot = -1;  // assigned by flatten
};

struct DraftTree {
    TokenId root_token = 0;
    std::vector<TreeNode> nodes;  // grouped by depth, build order within depth
    int k = 1;

    std::vector<int> children_of(int parent) const {
        std::vector<int> out;
        for (size_t i = 0; i < nodes.size(); ++i) {
            if (nodes[i].parent == parent) out.push_back(static_cast<int>(i));
        }
        return out;
    }
};

namespace detail {

struct Candidate {
    TokenId token;
    int parent;
    int depth;
    float prob;
    double cum_prob;
};

// Global candidate order: best cum_prob first, ancestors before descendants
// on ties (lower depth), then ascending token id. Because a child's cum_prob
// never exceeds its parent's, any selection prefix is automatically a
// connected tree.
inline bool candidate_before(const Candidate& a, const Candidate& b) {
    if (a.cum_prob != b.cum_prob) return a.cum_prob > b.cum_prob;
    if (a.depth != b.depth) return a.depth < b.depth;
    return a.token < b.token;
}

inline void check_logits(const std::vector<std::vector<float>>& mask_logits, int k, int vocab) {
    if (static_cast<int>(mask_logits.size()) < k) {
        throw ConfigError("draft tree: need one logit row per probe");
    }
    for (const auto& row : mask_logits) {
        if (static_cast<int>(row.size()) != vocab) {
            throw ConfigError("draft tree: logit row width != vocab");
        }
        for (float v : row) {
            if (!std::isfinite(v)) throw ConfigError("draft tree: non-finite logit");
        }
    }
}

}  // namespace detail

// Fixed widths: top-K_1 tokens of probe 1 under the root; for i >= 2, top-K_i
// tokens of probe i under the single strongest depth-(i-1) node.
inline DraftTree build_static_tree(const std::vector<std::vector<float>>& mask_logits,
                                   const BranchConfig& config, TokenId root_token) {
    if (config.mode != BranchMode::Static) {
        throw ConfigError("build_static_tree: config is not static");
    }
    const int k = config.k;
    if (static_cast<int>(config.static_widths.size()) != k) {
        throw ConfigError("build_static_tree: need k widths");
    }
    const int vocab = mask_logits.empty() ? 0 : static_cast<int>(mask_logits.front().size());
    detail::check_logits(mask_logits, k, vocab);

    DraftTree tree;
    tree.root_token = root_token;
    tree.k = k;
    int expansion_parent = -1;
    double expansion_cum = 1.0;
    for (int depth = 1; depth <= k; ++depth) {
        const int width = config.static_widths[depth - 1];
        if (width > vocab) throw ConfigError("build_static_tree: width exceeds vocab");
        if (width == 0) break;  // nothing to expand below an empty level
        const std::vector<float> probs = softmax(mask_logits[depth - 1]);
        const std::vector<int> top = top_k_indices(probs, width);
        int best_at_depth = -1;
        for (int t : top) {
            TreeNode node;
            node.token = static_cast<TokenId>(t);
            node.parent = expansion_parent;
            node.depth = depth;
            node.prob = probs[t];
            node.cum_prob = expansion_cum * probs[t];
            tree.nodes.push_back(node);
            if (best_at_depth < 0) best_at_depth = static_cast<int>(tree.nodes.size()) - 1;
        }
        expansion_parent = best_at_depth;
        expansion_cum = tree.nodes[best_at_depth].cum_prob;
    }
    return tree;
}

// Budgeted construction: at depth i the strongest depth-(i-1) node offers up
// to (budget - i) candidates; after k depths the best (budget - 1) candidates
// by cumulative probability form the tree.
inline DraftTree build_dynamic_tree(const std::vector<std::vector<float>>& mask_logits, int budget,
                                    int k, TokenId root_token) {
    if (budget < 2) throw ConfigError("build_dynamic_tree: budget must be >= 2");
    if (k < 1) throw ConfigError("build_dynamic_tree: k must be >= 1");
    const int vocab = mask_logits.empty() ? 0 : static_cast<int>(mask_logits.front().size());
    detail::check_logits(mask_logits, k, vocab);

    std::vector<detail::Candidate> candidates;
    int expansion_index = -1;  // index into candidates, -1 = root
    double expansion_cum = 1.0;
    for (int depth = 1; depth <= k; ++depth) {
        const int width = std::min(budget - depth, vocab);
        if (width <= 0) break;
        const std::vector<float> probs = softmax(mask_logits[depth - 1]);
        const std::vector<int> top = top_k_indices(probs, width);
        const int first_new = static_cast<int>(candidates.size());
        for (int t : top) {
            candidates.push_back({static_cast<TokenId>(t), expansion_index, depth, probs[t],
                                  expansion_cum * probs[t]});
        }
        if (depth < k) {
            // Top-1 expansion: strongest candidate at this depth carries on.
            int best = first_new;
            for (int i = first_new + 1; i < static_cast<int>(candidates.size()); ++i) {
                if (detail::candidate_before(candidates[i], candidates[best])) best = i;
            }
            expansion_index = best;
            expansion_cum = candidates[best].cum_prob;
        }
    }

    // Select the best budget-1 candidates. Selection order keeps ancestors
    // ahead of their descendants, so the kept set is connected as-is; the
    // repair loop below only documents (and would enforce) that contract.
    std::vector<int> order(candidates.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return detail::candidate_before(candidates[a], candidates[b]);
    });
    const size_t want = std::min<size_t>(budget - 1, order.size());
    std::vector<char> selected(candidates.size(), 0);
    for (size_t i = 0; i < want; ++i) selected[order[i]] = 1;
    for (size_t i = candidates.size(); i-- > 0;) {
        if (selected[i] && candidates[i].parent >= 0) selected[candidates[i].parent] = 1;
    }
    size_t kept = 0;
    for (char s : selected) kept += s;
    for (size_t i = order.size(); kept > want && i-- > 0;) {
        const int idx = order[i];
        bool is_parent = false;
        for (size_t j = 0; j < candidates.size(); ++j) {
            if (selected[j] && candidates[j].parent == idx) is_parent = true;
        }
        if (selected[idx] && !is_parent) {
            selected[idx] = 0;
            --kept;
        }
    }

    DraftTree tree;
    tree.root_token = root_token;
    tree.k = k;
    std::vector<int> remap(candidates.size(), -1);
    for (size_t i = 0; i < candidates.size(); ++i) {  // build order groups by depth
        if (!selected[i]) continue;
        const detail::Candidate& c = candidates[i];
        TreeNode node;
        node.token = c.token;
        node.parent = c.parent < 0 ? -1 : remap[c.parent];
        node.depth = c.depth;
        node.prob = c.prob;
        node.cum_prob = c.cum_prob;
        remap[i] = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(node);
    }
    return tree;
}

// Replaces any node whose token repeats its parent's token (the root acts as
// depth-0 parent) with the best token from the same probe distribution that
// is neither the parent token nor an existing sibling. Counts, parents and
// layout order are untouched; probabilities are recomputed top-down.
inline DraftTree prune(const DraftTree& tree, const std::vector<std::vector<float>>& mask_logits) {
    const int vocab = mask_logits.empty() ? 0 : static_cast<int>(mask_logits.front().size());
    detail::check_logits(mask_logits, tree.k, vocab);
    DraftTree out = tree;

    std::vector<std::vector<float>> probs(tree.k);
    for (int i = 0; i < tree.k; ++i) probs[i] = softmax(mask_logits[i]);

    // Nodes are stored parents-first, so one pass fixes tokens and cum_probs.
    for (size_t i = 0; i < out.nodes.size(); ++i) {
        TreeNode& node = out.nodes[i];
        const TokenId parent_token =
            node.parent < 0 ? out.root_token : out.nodes[node.parent].token;
        const double parent_cum = node.parent < 0 ? 1.0 : out.nodes[node.parent].cum_prob;
        if (node.token == parent_token) {
            std::vector<char> taken(vocab, 0);
            taken[parent_token] = 1;
            for (const TreeNode& sib : out.nodes) {
                if (&sib != &node && sib.parent == node.parent) taken[sib.token] = 1;
            }
            const std::vector<float>& dist = probs[node.depth - 1];
            int best = -1;
            for (int t = 0; t < vocab; ++t) {
                if (taken[t]) continue;
                if (best < 0 || dist[t] > dist[best]) best = t;
            }
            if (best < 0) {
                throw ConfigError("prune: vocabulary exhausted, tree wider than distinct tokens");
            }
            node.token = static_cast<TokenId>(best);
            node.prob = dist[best];
        }
        node.cum_prob = parent_cum * node.prob;
    }
    return out;
}

struct LayoutSlot {
    enum class Kind { Root, Node, Mask } kind = Kind::Root;
    int node = -1;         // Node: node index; Mask: anchor node index (-1 = root)
    int mask_index = 0;    // Mask: 1..k within the anchor's probe chain
};

struct FlattenedTree {
    std::vector<TokenId> real_tokens;   // root + node tokens, layout order
    std::vector<LayoutSlot> slots;      // one per layout slot
    std::vector<int> anchor_rank_of_node;  // node index -> anchor rank
    int k = 1;

    size_t block_len() const { return slots.size(); }
    size_t real_count() const { return real_tokens.size(); }
    // Probe chain slots for the anchor at `rank` (0 = root).
    size_t mask_slot(int rank, int mask_index) const {
        return real_tokens.size() + static_cast<size_t>(rank) * k + (mask_index - 1);
    }
};

// Layout order: root, tree nodes (stored order = breadth-first, strongest
// first), then one k-probe chain per tree position in that same order. Total
// slots = (k+1) * (1 + node_count).
inline FlattenedTree flatten(DraftTree& tree) {
    FlattenedTree flat;
    flat.k = tree.k;
    flat.real_tokens.push_back(tree.root_token);
    flat.slots.push_back({LayoutSlot::Kind::Root, -1, 0});
    flat.anchor_rank_of_node.resize(tree.nodes.size());
    for (size_t i = 0; i < tree.nodes.size(); ++i) {
        tree.nodes[i].layout_slot = static_cast<int>(flat.slots.size());
        flat.real_tokens.push_back(tree.nodes[i].token);
        flat.slots.push_back({LayoutSlot::Kind::Node, static_cast<int>(i), 0});
        flat.anchor_rank_of_node[i] = static_cast<int>(i) + 1;
    }
    const int positions = static_cast<int>(flat.real_tokens.size());
    for (int rank = 0; rank < positions; ++rank) {
        for (int j = 1; j <= tree.k; ++j) {
            flat.slots.push_back({LayoutSlot::Kind::Mask, rank - 1, j});
        }
    }
    return flat;
}

}  // namespace esp
