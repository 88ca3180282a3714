#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "vreason/common.hpp"
#include "vreason/config.hpp"
#include "vreason/entropy.hpp"
#include "vreason/rng.hpp"

namespace vreason {

// Temperature, then top-p nucleus, then optional min-p. Returns the surviving
// token ids, highest probability first; ties order by (probability desc,
// token id asc) for determinism. The argmax token survives every truncation,
// so the support is never empty. probs_out, when given, receives the full
// tempered distribution so a caller can renormalize without recomputing it.
inline std::vector<int> truncated_support(const std::vector<double>& logits,
                                          const GenerationConfig& cfg,
                                          std::vector<double>* probs_out = nullptr) {
    if (!all_finite(logits)) throw NumericError("non-finite logits in sampler");
    std::vector<double> scaled(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) scaled[i] = logits[i] / cfg.temperature;
    const std::vector<double> p = softmax(scaled);

    std::vector<int> order(p.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (p[static_cast<std::size_t>(a)] != p[static_cast<std::size_t>(b)])
            return p[static_cast<std::size_t>(a)] > p[static_cast<std::size_t>(b)];
        return a < b;
    });

    std::size_t support = 0;
    double cum = 0.0;
    while (support < order.size() && cum < cfg.top_p) {
        cum += p[static_cast<std::size_t>(order[support])];
        ++support;
    }
    if (support == 0) support = 1;

    if (cfg.min_p_set()) {
        const double threshold = cfg.min_p * p[static_cast<std::size_t>(order[0])];
        std::size_t kept = 1;  // argmax always stays
        for (std::size_t i = 1; i < support; ++i)
            if (p[static_cast<std::size_t>(order[i])] >= threshold) ++kept;
            else break;  // sorted descending, the rest are below too
        support = kept;
    }

    order.resize(support);
    if (probs_out) *probs_out = p;
    return order;
}

// Renormalize over the surviving support and draw.
inline int sample(const std::vector<double>& logits, const GenerationConfig& cfg, Rng& rng) {
    std::vector<double> p;
    const std::vector<int> keep = truncated_support(logits, cfg, &p);

    double total = 0.0;
    for (int id : keep) total += p[static_cast<std::size_t>(id)];
    const double u = rng.next_double() * total;
    double acc = 0.0;
    for (int id : keep) {
        acc += p[static_cast<std::size_t>(id)];
        if (u < acc) return id;
    }
    return keep.back();
}

}  // namespace vreason
