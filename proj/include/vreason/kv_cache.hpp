#pragma once

#include <cstdint>
#include <vector>

#include "vreason/common.hpp"
#include "vreason/config.hpp"

namespace vreason {

// Per-layer K/V storage, one growing [len * d_head] buffer per kv head.
// Slots keep their original absolute position in position_map; pruning
// removes slots without re-compacting positions.
struct KVCache {
    int n_layers = 0;
    int n_kv_heads = 0;
    int d_head = 0;
    int max_seq = 0;

    struct LayerKV {
        std::vector<std::vector<double>> k;  // [n_kv_heads][len * d_head]
        std::vector<std::vector<double>> v;
    };
    std::vector<LayerKV> layers;

    std::vector<std::int64_t> position_map;  // slot -> original absolute position
    std::vector<int> video_slots;            // current slot indices inside the video span
    std::vector<double> original_value_norms;  // [n_kv_heads][n_video], recorded at prefill
    std::int64_t next_pos = 0;

    static KVCache make(const ModelConfig& cfg) {
        KVCache c;
        c.n_layers = cfg.n_layers;
        c.n_kv_heads = cfg.n_kv_heads;
        c.d_head = cfg.d_head;
        c.max_seq = cfg.max_seq;
        c.layers.resize(static_cast<std::size_t>(cfg.n_layers));
        for (auto& l : c.layers) {
            l.k.resize(static_cast<std::size_t>(cfg.n_kv_heads));
            l.v.resize(static_cast<std::size_t>(cfg.n_kv_heads));
        }
        return c;
    }

    std::size_t cached_len() const { return position_map.size(); }
    std::size_t n_video() const { return video_slots.size(); }

    const double* key_at(int layer, int kv_head, std::size_t slot) const {
        return layers[layer].k[kv_head].data() + slot * static_cast<std::size_t>(d_head);
    }
    const double* value_at(int layer, int kv_head, std::size_t slot) const {
        return layers[layer].v[kv_head].data() + slot * static_cast<std::size_t>(d_head);
    }
    double original_norm(int kv_head, std::size_t video_idx) const {
        return original_value_norms[static_cast<std::size_t>(kv_head) * video_slots.size() + video_idx];
    }
};

}  // namespace vreason
