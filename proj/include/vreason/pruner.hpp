#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "vreason/common.hpp"
#include "vreason/kv_cache.hpp"

namespace vreason {

struct PruneReport {
    double keep_ratio = 1.0;
    std::vector<double> scores;        // one per video slot, original order
    std::vector<std::int64_t> kept;    // original positions, ascending
    std::vector<std::int64_t> evicted; // original positions, ascending
};

// score(j) = mean over layers and kv heads of the L2 norm of V[layer][head][j].
inline std::vector<double> score_video_tokens(const KVCache& cache) {
    if (cache.video_slots.empty()) throw NumericError("no video slots to score");
    const auto dh = static_cast<std::size_t>(cache.d_head);
    std::vector<double> scores(cache.video_slots.size(), 0.0);
    for (std::size_t vi = 0; vi < cache.video_slots.size(); ++vi) {
        const auto slot = static_cast<std::size_t>(cache.video_slots[vi]);
        double sum = 0.0;
        for (int layer = 0; layer < cache.n_layers; ++layer)
            for (int h = 0; h < cache.n_kv_heads; ++h)
                sum += l2_norm(cache.value_at(layer, h, slot), dh);
        scores[vi] = sum / (static_cast<double>(cache.n_layers) * cache.n_kv_heads);
    }
    return scores;
}

// Keep the ceil(keep_ratio * n) highest-scoring video positions; ties keep
// the lower original position.
inline PruneReport select_keep_set(const KVCache& cache, const std::vector<double>& scores,
                                   double keep_ratio) {
    if (!(keep_ratio > 0.0) || keep_ratio > 1.0)
        throw ConfigError("keep_ratio must be in (0, 1]");
    if (scores.size() != cache.video_slots.size())
        throw NumericError("score count does not match video slots");
    const std::size_t n = scores.size();
    const auto n_keep = static_cast<std::size_t>(
        std::ceil(keep_ratio * static_cast<double>(n)));

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return cache.position_map[static_cast<std::size_t>(cache.video_slots[a])] <
               cache.position_map[static_cast<std::size_t>(cache.video_slots[b])];
    });

    PruneReport rep;
    rep.keep_ratio = keep_ratio;
    rep.scores = scores;
    for (std::size_t i = 0; i < n; ++i) {
        const auto pos = cache.position_map[static_cast<std::size_t>(cache.video_slots[order[i]])];
        (i < n_keep ? rep.kept : rep.evicted).push_back(pos);
    }
    std::sort(rep.kept.begin(), rep.kept.end());
    std::sort(rep.evicted.begin(), rep.evicted.end());
    return rep;
}

// Evict the report's positions from every layer's K and V. Kept slots retain
// their original position indices and their recorded original value norms.
inline void prune_cache(KVCache& cache, const PruneReport& rep) {
    std::vector<char> evict(cache.cached_len(), 0);
    std::vector<char> is_video(cache.cached_len(), 0);
    for (int slot : cache.video_slots) is_video[static_cast<std::size_t>(slot)] = 1;
    for (std::int64_t pos : rep.evicted) {
        auto it = std::find(cache.position_map.begin(), cache.position_map.end(), pos);
        if (it == cache.position_map.end())
            throw NumericError("prune report names position " + std::to_string(pos) +
                               " which is not cached");
        const auto slot = static_cast<std::size_t>(it - cache.position_map.begin());
        if (!is_video[slot])
            throw NumericError("prune report tries to evict non-video position " +
                               std::to_string(pos));
        evict[slot] = 1;
    }
    for (std::int64_t pos : rep.kept) {
        auto it = std::find(cache.position_map.begin(), cache.position_map.end(), pos);
        if (it == cache.position_map.end() || !is_video[static_cast<std::size_t>(it - cache.position_map.begin())])
            throw NumericError("prune report keep-set does not match cache video slots");
    }
    if (rep.kept.size() + rep.evicted.size() != cache.video_slots.size())
        throw NumericError("prune report does not cover the video slots exactly");

    const auto dh = static_cast<std::size_t>(cache.d_head);
    const auto old_len = cache.cached_len();
    std::vector<std::size_t> keep_slots;
    keep_slots.reserve(old_len);
    for (std::size_t j = 0; j < old_len; ++j)
        if (!evict[j]) keep_slots.push_back(j);

    for (auto& layer : cache.layers)
        for (int h = 0; h < cache.n_kv_heads; ++h) {
            auto& k = layer.k[static_cast<std::size_t>(h)];
            auto& v = layer.v[static_cast<std::size_t>(h)];
            std::vector<double> nk, nv;
            nk.reserve(keep_slots.size() * dh);
            nv.reserve(keep_slots.size() * dh);
            for (std::size_t j : keep_slots) {
                nk.insert(nk.end(), k.begin() + static_cast<long>(j * dh),
                          k.begin() + static_cast<long>((j + 1) * dh));
                nv.insert(nv.end(), v.begin() + static_cast<long>(j * dh),
                          v.begin() + static_cast<long>((j + 1) * dh));
            }
            k = std::move(nk);
            v = std::move(nv);
        }

    // Re-index positions, video slots, and retained norms over the kept slots.
    std::vector<int> old_video = cache.video_slots;
    std::vector<double> old_norms = cache.original_value_norms;
    std::vector<int> video_idx_of_slot(old_len, -1);
    for (std::size_t vi = 0; vi < old_video.size(); ++vi)
        video_idx_of_slot[static_cast<std::size_t>(old_video[vi])] = static_cast<int>(vi);

    std::vector<std::int64_t> new_pos;
    std::vector<int> new_video;
    std::vector<int> kept_video_old_idx;
    new_pos.reserve(keep_slots.size());
    for (std::size_t new_j = 0; new_j < keep_slots.size(); ++new_j) {
        const std::size_t j = keep_slots[new_j];
        new_pos.push_back(cache.position_map[j]);
        if (video_idx_of_slot[j] >= 0) {
            new_video.push_back(static_cast<int>(new_j));
            kept_video_old_idx.push_back(video_idx_of_slot[j]);
        }
    }
    std::vector<double> new_norms(static_cast<std::size_t>(cache.n_kv_heads) * new_video.size());
    for (int h = 0; h < cache.n_kv_heads; ++h)
        for (std::size_t vi = 0; vi < new_video.size(); ++vi)
            new_norms[static_cast<std::size_t>(h) * new_video.size() + vi] =
                old_norms[static_cast<std::size_t>(h) * old_video.size() +
                          static_cast<std::size_t>(kept_video_old_idx[vi])];

    cache.position_map = std::move(new_pos);
    cache.video_slots = std::move(new_video);
    cache.original_value_norms = std::move(new_norms);
}

}  // namespace vreason
