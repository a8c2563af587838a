#pragma once

// Attention layout for one flattened tree block: a boolean mask over
// (cache columns + block columns) and per-slot position ids.
//
// Wiring rules:
//   * every row attends the whole cache (the cache holds exactly the
//     committed history the root continues);
//   * a node attends the cache, its root-to-node path, and itself;
//   * probe j of an anchor attends everything the anchor attends, the
//     anchor itself, probes 1..j-1 of the same anchor, and itself.
// Position ids depend only on tree depth: root p0, depth-i node p0+i, probe
// j of a depth-i anchor p0+i+j. Branches at equal depth share position ids.
//
// For a static-width tree the block-internal pattern never changes between
// steps, so the next step's layout is the previous one with `be` freshly
// committed (hence fully attended) cache columns spliced in at the cache/
// block boundary and every position id shifted up by `be`.

#include "esp/draft_tree.hpp"

namespace esp {

struct AttentionLayout {
    size_t cache_len = 0;
    size_t block_len = 0;
    std::vector<uint8_t> mask;      // [block_len * (cache_len + block_len)]
    std::vector<int> position_ids;  // [block_len]
    std::vector<LayoutSlot> slots;

    size_t total_cols() const { return cache_len + block_len; }
    bool attends(size_t row, size_t col) const { return mask[row * total_cols() + col] != 0; }

    bool operator==(const AttentionLayout& other) const {
        return cache_len == other.cache_len && block_len == other.block_len &&
               mask == other.mask && position_ids == other.position_ids;
    }
};

inline AttentionLayout build_layout_naive(const DraftTree& tree, const FlattenedTree& flat,
                                          size_t cache_len, int p0) {
    if (flat.k != tree.k || flat.real_count() != tree.nodes.size() + 1) {
        throw ConfigError("build_layout_naive: tree and flattened layout disagree");
    }
    AttentionLayout layout;
    layout.cache_len = cache_len;
    layout.block_len = flat.block_len();
    layout.slots = flat.slots;
    layout.position_ids.assign(layout.block_len, 0);
    layout.mask.assign(layout.block_len * layout.total_cols(), 0);

    // Block-column attention set of each real position (root rank 0, node i
    // rank i+1), reused verbatim by that position's probe chain.
    const size_t ranks = flat.real_count();
    std::vector<std::vector<size_t>> path_cols(ranks);
    std::vector<int> depth_of_rank(ranks, 0);
    path_cols[0] = {0};  // root attends itself
    for (size_t i = 0; i < tree.nodes.size(); ++i) {
        const TreeNode& node = tree.nodes[i];
        const size_t rank = i + 1;
        const size_t parent_rank = node.parent < 0 ? 0 : static_cast<size_t>(node.parent) + 1;
        path_cols[rank] = path_cols[parent_rank];
        path_cols[rank].push_back(rank);  // own layout slot == rank
        depth_of_rank[rank] = node.depth;
    }

    auto set_row = [&](size_t row, const std::vector<size_t>& block_cols) {
        uint8_t* r = layout.mask.data() + row * layout.total_cols();
        for (size_t c = 0; c < cache_len; ++c) r[c] = 1;
        for (size_t col : block_cols) r[cache_len + col] = 1;
    };

    for (size_t rank = 0; rank < ranks; ++rank) {
        layout.position_ids[rank] = p0 + depth_of_rank[rank];
        set_row(rank, path_cols[rank]);
    }
    for (size_t rank = 0; rank < ranks; ++rank) {
        std::vector<size_t> cols = path_cols[rank];
        for (int j = 1; j <= flat.k; ++j) {
            const size_t slot = flat.mask_slot(static_cast<int>(rank), j);
            cols.push_back(slot);
            set_row(slot, cols);
            layout.position_ids[slot] = p0 + depth_of_rank[rank] + j;
        }
    }
    return layout;
}

// Incremental update for a step-invariant block shape: splice `be` fully
// attended columns in at the cache/block boundary and shift position ids.
// Callers must only use this while the tree shape is static; the engine
// rejects the combination with dynamic branching up front.
inline AttentionLayout advance_layout_efficient(const AttentionLayout& prev, size_t be) {
    AttentionLayout next;
    next.cache_len = prev.cache_len + be;
    next.block_len = prev.block_len;
    next.slots = prev.slots;
    next.position_ids.resize(prev.position_ids.size());
    for (size_t i = 0; i < prev.position_ids.size(); ++i) {
        next.position_ids[i] = prev.position_ids[i] + static_cast<int>(be);
    }
    next.mask.assign(next.block_len * next.total_cols(), 0);
    for (size_t row = 0; row < next.block_len; ++row) {
        const uint8_t* src = prev.mask.data() + row * prev.total_cols();
        uint8_t* dst = next.mask.data() + row * next.total_cols();
        std::copy(src, src + prev.cache_len, dst);
        std::fill(dst + prev.cache_len, dst + prev.cache_len + be, uint8_t{1});
        std::copy(src + prev.cache_len, src + prev.total_cols(), dst + next.cache_len);
    }
    return next;
}

// Layout slots of root plus the accepted chain, in depth order; these become
// the block slots the cache keeps after verification.
inline std::vector<size_t> gather_accept_path_columns(const DraftTree& tree,
                                                      const std::vector<int>& accepted_chain) {
    std::vector<size_t> slots = {0};
    int expected_parent = -1;
    for (int node_index : accepted_chain) {
        if (node_index < 0 || node_index >= static_cast<int>(tree.nodes.size())) {
            throw ConfigError("gather_accept_path_columns: node index out of range");
        }
        const TreeNode& node = tree.nodes[node_index];
        if (node.parent != expected_parent) {
            throw ConfigError("gather_accept_path_columns: chain is not a root-to-node path");
        }
        slots.push_back(static_cast<size_t>(node_index) + 1);
        expected_parent = node_index;
    }
    return slots;
}

}  // namespace esp
