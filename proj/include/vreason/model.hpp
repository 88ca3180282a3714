#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "vreason/common.hpp"
#include "vreason/config.hpp"
#include "vreason/controller.hpp"
#include "vreason/entropy.hpp"
#include "vreason/kv_cache.hpp"
#include "vreason/weights.hpp"

namespace vreason {

inline constexpr double kRmsEps = 1e-6;

inline double gelu(double u) {
    const double c = std::sqrt(2.0 / std::numbers::pi);
    return 0.5 * u * (1.0 + std::tanh(c * (u + 0.044715 * u * u * u)));
}

inline double gelu_deriv(double u) {
    const double c = std::sqrt(2.0 / std::numbers::pi);
    const double w = c * (u + 0.044715 * u * u * u);
    const double t = std::tanh(w);
    return 0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * u * u);
}

inline void rmsnorm(const std::vector<double>& x, const std::vector<double>& gamma,
                    std::vector<double>& out) {
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(ms + kRmsEps);
    out.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * gamma[i] * inv;
}

// g_x for y = rmsnorm(x) given upstream g_y, evaluated at x.
inline void rmsnorm_backward(const std::vector<double>& x, const std::vector<double>& gamma,
                             const std::vector<double>& g_y, std::vector<double>& g_x) {
    const auto n = x.size();
    double ms = 0.0;
    for (double v : x) ms += v * v;
    ms /= static_cast<double>(n);
    const double s = std::sqrt(ms + kRmsEps);
    double proj = 0.0;
    for (std::size_t i = 0; i < n; ++i) proj += g_y[i] * gamma[i] * x[i];
    const double coef = proj / (static_cast<double>(n) * s * s * s);
    g_x.resize(n);
    for (std::size_t i = 0; i < n; ++i) g_x[i] = g_y[i] * gamma[i] / s - x[i] * coef;
}

// y = W x + b with W row-major [rows][cols].
inline void matvec(const std::vector<double>& W, const std::vector<double>& b,
                   const std::vector<double>& x, std::size_t rows, std::size_t cols,
                   std::vector<double>& y) {
    y.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* wr = W.data() + r * cols;
        double s = b.empty() ? 0.0 : b[r];
        for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
        y[r] = s;
    }
}

// g_x = W^T g_y for the same layout.
inline void matvec_transpose(const std::vector<double>& W, const std::vector<double>& g_y,
                             std::size_t rows, std::size_t cols, std::vector<double>& g_x) {
    g_x.assign(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* wr = W.data() + r * cols;
        const double gy = g_y[r];
        for (std::size_t c = 0; c < cols; ++c) g_x[c] += wr[c] * gy;
    }
}

// Everything the switching-loss backward needs from one forward, captured for
// the last decoder layer. Video values are stored pre-controller; the
// delta-dependent tail is re-derived from these at whatever delta is probed.
struct SavedActivations {
    std::int64_t pos = -1;        // absolute position of this forward
    std::size_t cached_len = 0;   // slots visible to this step, including its own
    int n_heads = 0, n_kv_heads = 0, d_head = 0;
    std::vector<std::vector<double>> attn_w;  // [n_heads][cached_len]
    std::vector<double> attended_nonvideo;    // [n_heads * d_head]
    std::vector<double> attn_in;              // residual stream entering the last layer
    std::vector<double> video_values;         // [n_kv][n_video][d_head], raw cache values
    std::vector<double> video_norms;          // [n_kv][n_video]
    std::vector<int> video_slots;             // cache slot indices at capture time
    std::vector<double> logits;
    int degenerate_slots = 0;

    int n_video() const { return static_cast<int>(video_slots.size()); }
    const double* video_value(int kv_head, int video_idx) const {
        return video_values.data() +
               (static_cast<std::size_t>(kv_head) * video_slots.size() + video_idx) * d_head;
    }
    double video_norm(int kv_head, int video_idx) const {
        return video_norms[static_cast<std::size_t>(kv_head) * video_slots.size() + video_idx];
    }
};

struct StepResult {
    std::vector<double> logits;
    SavedActivations saved;
    int degenerate_slots = 0;
};

namespace detail {

inline void snapshot_video(const KVCache& cache, SavedActivations& saved) {
    const int last = cache.n_layers - 1;
    const auto nv = cache.video_slots.size();
    saved.video_slots = cache.video_slots;
    saved.video_norms = cache.original_value_norms;
    saved.video_values.resize(static_cast<std::size_t>(cache.n_kv_heads) * nv *
                              static_cast<std::size_t>(cache.d_head));
    for (int h = 0; h < cache.n_kv_heads; ++h)
        for (std::size_t vi = 0; vi < nv; ++vi) {
            const double* src = cache.value_at(last, h, static_cast<std::size_t>(cache.video_slots[vi]));
            double* dst = saved.video_values.data() +
                          (static_cast<std::size_t>(h) * nv + vi) * cache.d_head;
            for (int i = 0; i < cache.d_head; ++i) dst[i] = src[i];
        }
}

}  // namespace detail

inline StepResult forward_one_position(const Weights& w, KVCache& cache, int token,
                                       const ValueCacheController* ctrl, bool capture) {
    const auto& cfg = w.cfg;
    if (token < 0 || token >= cfg.vocab_size)
        throw NumericError("token id " + std::to_string(token) + " out of vocabulary");
    if (cache.cached_len() >= static_cast<std::size_t>(cfg.max_seq))
        throw NumericError("KV cache full (max_seq " + std::to_string(cfg.max_seq) + ")");
    if (cache.next_pos >= cfg.max_seq)
        throw NumericError("position " + std::to_string(cache.next_pos) + " beyond max_seq");
    if (ctrl) {
        if (ctrl->n_kv_heads != cfg.n_kv_heads || ctrl->d_head != cfg.d_head ||
            ctrl->n_video != static_cast<int>(cache.n_video()))
            throw NumericError("controller shape does not match cache video slots");
    }

    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto dh = static_cast<std::size_t>(cfg.d_head);
    const std::size_t qd = static_cast<std::size_t>(cfg.n_heads) * dh;
    const int group = cfg.n_heads / cfg.n_kv_heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(cfg.d_head));
    const std::int64_t pos = cache.next_pos;

    std::vector<double> x(d);
    for (std::size_t i = 0; i < d; ++i)
        x[i] = w.tok_emb[static_cast<std::size_t>(token) * d + i] +
               w.pos_emb[static_cast<std::size_t>(pos) * d + i];

    StepResult res;
    SavedActivations& saved = res.saved;

    // Transformed last-layer video values, built once per forward.
    const int last = cfg.n_layers - 1;
    std::vector<double> transformed;
    std::vector<char> transformed_ok;
    if (ctrl) {
        const auto nv = cache.n_video();
        transformed.resize(static_cast<std::size_t>(cfg.n_kv_heads) * nv * dh);
        transformed_ok.assign(static_cast<std::size_t>(cfg.n_kv_heads) * nv, 0);
        for (int h = 0; h < cfg.n_kv_heads; ++h)
            for (std::size_t vi = 0; vi < nv; ++vi) {
                const double* v = cache.value_at(last, h, static_cast<std::size_t>(cache.video_slots[vi]));
                double* out = transformed.data() + (static_cast<std::size_t>(h) * nv + vi) * dh;
                const bool ok = transform_value_slot(v, ctrl->slot(h, static_cast<int>(vi)),
                                                     cache.original_norm(h, vi), out,
                                                     cfg.d_head);
                transformed_ok[static_cast<std::size_t>(h) * nv + vi] = ok ? 1 : 0;
                if (!ok) res.degenerate_slots += 1;
            }
    }

    std::vector<double> h_norm, q, k_new, v_new, attn_cat(qd), o, h2, u, gelu_u, f, y;
    for (int layer = 0; layer < cfg.n_layers; ++layer) {
        const auto& L = w.layers[static_cast<std::size_t>(layer)];
        const bool cap = capture && layer == last;

        if (cap) saved.attn_in = x;
        rmsnorm(x, L.attn_norm, h_norm);
        matvec(L.wq, L.bq, h_norm, qd, d, q);
        matvec(L.wk, L.bk, h_norm, static_cast<std::size_t>(cfg.n_kv_heads) * dh, d, k_new);
        matvec(L.wv, L.bv, h_norm, static_cast<std::size_t>(cfg.n_kv_heads) * dh, d, v_new);
        for (int h = 0; h < cfg.n_kv_heads; ++h) {
            auto& lk = cache.layers[static_cast<std::size_t>(layer)].k[static_cast<std::size_t>(h)];
            auto& lv = cache.layers[static_cast<std::size_t>(layer)].v[static_cast<std::size_t>(h)];
            lk.insert(lk.end(), k_new.begin() + h * static_cast<long>(dh),
                      k_new.begin() + (h + 1) * static_cast<long>(dh));
            lv.insert(lv.end(), v_new.begin() + h * static_cast<long>(dh),
                      v_new.begin() + (h + 1) * static_cast<long>(dh));
        }
        const std::size_t len = cache.layers[static_cast<std::size_t>(layer)].k[0].size() / dh;

        // slot -> video index, valid for the last layer only
        std::vector<int> video_of;
        const bool split = (cap || (ctrl && layer == last));
        if (split) {
            video_of.assign(len, -1);
            for (std::size_t vi = 0; vi < cache.video_slots.size(); ++vi)
                video_of[static_cast<std::size_t>(cache.video_slots[vi])] = static_cast<int>(vi);
        }
        if (cap) {
            saved.cached_len = len;
            saved.n_heads = cfg.n_heads;
            saved.n_kv_heads = cfg.n_kv_heads;
            saved.d_head = cfg.d_head;
            saved.pos = pos;
            saved.attn_w.assign(static_cast<std::size_t>(cfg.n_heads), {});
            saved.attended_nonvideo.assign(qd, 0.0);
        }

        std::vector<double> scores(len);
        for (int i = 0; i < cfg.n_heads; ++i) {
            const int g = i / group;
            const double* qi = q.data() + static_cast<std::size_t>(i) * dh;
            for (std::size_t j = 0; j < len; ++j)
                scores[j] = dot(qi, cache.key_at(layer, g, j), dh) * inv_sqrt_dh;
            std::vector<double> a = softmax(scores);
            double* out = attn_cat.data() + static_cast<std::size_t>(i) * dh;
            for (std::size_t z = 0; z < dh; ++z) out[z] = 0.0;
            for (std::size_t j = 0; j < len; ++j) {
                const int vi = split ? video_of[j] : -1;
                const double* vj;
                if (layer == last && ctrl && vi >= 0 &&
                    transformed_ok[static_cast<std::size_t>(g) * cache.n_video() + vi]) {
                    vj = transformed.data() +
                         (static_cast<std::size_t>(g) * cache.n_video() + vi) * dh;
                } else {
                    vj = cache.value_at(layer, g, j);
                }
                for (std::size_t z = 0; z < dh; ++z) out[z] += a[j] * vj[z];
                if (cap && vi < 0) {
                    double* nv = saved.attended_nonvideo.data() + static_cast<std::size_t>(i) * dh;
                    const double* raw = cache.value_at(layer, g, j);
                    for (std::size_t z = 0; z < dh; ++z) nv[z] += a[j] * raw[z];
                }
            }
            if (cap) saved.attn_w[static_cast<std::size_t>(i)] = std::move(a);
        }

        matvec(L.wo, L.bo, attn_cat, d, qd, o);
        for (std::size_t i = 0; i < d; ++i) x[i] += o[i];

        rmsnorm(x, L.ffn_norm, h2);
        matvec(L.w1, L.b1, h2, static_cast<std::size_t>(cfg.d_ff), d, u);
        gelu_u.resize(u.size());
        for (std::size_t i = 0; i < u.size(); ++i) gelu_u[i] = gelu(u[i]);
        matvec(L.w2, L.b2, gelu_u, d, static_cast<std::size_t>(cfg.d_ff), f);
        for (std::size_t i = 0; i < d; ++i) x[i] += f[i];
    }

    rmsnorm(x, w.final_norm, y);
    matvec(w.head_w, w.head_b, y, static_cast<std::size_t>(cfg.vocab_size), d, res.logits);

    cache.position_map.push_back(pos);
    cache.next_pos = pos + 1;
    if (capture) {
        saved.logits = res.logits;
        saved.degenerate_slots = res.degenerate_slots;
    }
    return res;
}

struct PrefillResult {
    std::vector<double> logits;
    KVCache cache;
    SavedActivations saved;  // last prompt position
};

// Full forward over the prompt, one position at a time (bit-identical to
// incremental decoding by construction). No controller participates; the
// last-layer value norms at video slots are recorded afterwards.
inline PrefillResult prefill(const Weights& w, const PromptSpec& prompt) {
    prompt.validate(w.cfg);
    PrefillResult out;
    out.cache = KVCache::make(w.cfg);
    const auto n_tok = prompt.tokens.size();
    for (std::size_t i = 0; i < n_tok; ++i) {
        if (static_cast<int>(i) >= prompt.video_begin && static_cast<int>(i) < prompt.video_end)
            out.cache.video_slots.push_back(static_cast<int>(i));
        StepResult r = forward_one_position(w, out.cache, prompt.tokens[i], nullptr,
                                            i + 1 == n_tok);
        if (i + 1 == n_tok) {
            out.logits = std::move(r.logits);
            out.saved = std::move(r.saved);
        }
    }
    const int last = w.cfg.n_layers - 1;
    const auto nv = out.cache.video_slots.size();
    out.cache.original_value_norms.resize(static_cast<std::size_t>(w.cfg.n_kv_heads) * nv);
    for (int h = 0; h < w.cfg.n_kv_heads; ++h)
        for (std::size_t vi = 0; vi < nv; ++vi) {
            const double* v =
                out.cache.value_at(last, h, static_cast<std::size_t>(out.cache.video_slots[vi]));
            double norm = l2_norm(v, static_cast<std::size_t>(w.cfg.d_head));
            if (norm < kDegenerateNormGuard)
                throw NumericError("degenerate value norm at prefill (kv_head " + std::to_string(h) +
                                   ", video slot " + std::to_string(out.cache.video_slots[vi]) + ")");
            out.cache.original_value_norms[static_cast<std::size_t>(h) * nv + vi] = norm;
        }
    detail::snapshot_video(out.cache, out.saved);
    return out;
}

inline StepResult decode_step(const Weights& w, int token, KVCache& cache,
                              const ValueCacheController* ctrl) {
    StepResult r = forward_one_position(w, cache, token, ctrl, true);
    detail::snapshot_video(cache, r.saved);
    return r;
}

}  // namespace vreason
