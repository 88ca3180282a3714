#pragma once

#include <vector>

#include "vreason/common.hpp"
#include "vreason/controller.hpp"
#include "vreason/entropy.hpp"
#include "vreason/model.hpp"

namespace vreason {

// The attention weights and the residual stream entering the last layer do
// not depend on delta (scores read keys only), so the captured activations
// pin everything upstream and the tail below is an exact function of delta.
struct TailState {
    std::vector<double> vprime;  // [n_kv][n_video][d_head]
    std::vector<double> rho;     // [n_kv][n_video]
    std::vector<char> ok;        // 0 = degenerate slot, transform skipped
    std::vector<double> attn_cat, x2, h2, u, gelu_u, x3, y, logits;
};

namespace detail {

inline void check_saved(const SavedActivations& s, const Weights& w) {
    if (s.attn_in.empty() || s.attn_w.empty() || s.cached_len == 0)
        throw NumericError("saved activations are empty or were not captured");
    if (s.n_heads != w.cfg.n_heads || s.n_kv_heads != w.cfg.n_kv_heads || s.d_head != w.cfg.d_head)
        throw NumericError("saved activations do not match this model");
    for (const auto& row : s.attn_w)
        if (row.size() != s.cached_len)
            throw NumericError("stale saved activations: attention row length mismatch");
    for (int slot : s.video_slots)
        if (slot < 0 || static_cast<std::size_t>(slot) >= s.cached_len)
            throw NumericError("stale saved activations: video slot outside attended range");
}

}  // namespace detail

inline TailState tail_forward(const Weights& w, const SavedActivations& s, const double* delta) {
    detail::check_saved(s, w);
    const auto& cfg = w.cfg;
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto dh = static_cast<std::size_t>(cfg.d_head);
    const std::size_t qd = static_cast<std::size_t>(cfg.n_heads) * dh;
    const auto nv = static_cast<std::size_t>(s.n_video());
    const int group = cfg.n_heads / cfg.n_kv_heads;
    const auto& L = w.layers.back();

    TailState t;
    t.vprime.resize(static_cast<std::size_t>(cfg.n_kv_heads) * nv * dh);
    t.rho.resize(static_cast<std::size_t>(cfg.n_kv_heads) * nv);
    t.ok.assign(static_cast<std::size_t>(cfg.n_kv_heads) * nv, 1);
    for (int g = 0; g < cfg.n_kv_heads; ++g)
        for (std::size_t vi = 0; vi < nv; ++vi) {
            const std::size_t idx = static_cast<std::size_t>(g) * nv + vi;
            const double* v = s.video_value(g, static_cast<int>(vi));
            const double* dslot = delta + idx * dh;
            double* out = t.vprime.data() + idx * dh;
            double rho_sq = 0.0;
            for (std::size_t z = 0; z < dh; ++z) {
                const double wv = v[z] + dslot[z];
                rho_sq += wv * wv;
            }
            t.rho[idx] = std::sqrt(rho_sq);
            if (!transform_value_slot(v, dslot, s.video_norm(g, static_cast<int>(vi)), out,
                                      cfg.d_head)) {
                t.ok[idx] = 0;
                for (std::size_t z = 0; z < dh; ++z) out[z] = v[z];
            }
        }

    t.attn_cat.assign(qd, 0.0);
    for (int i = 0; i < cfg.n_heads; ++i) {
        const int g = i / group;
        double* out = t.attn_cat.data() + static_cast<std::size_t>(i) * dh;
        const double* base = s.attended_nonvideo.data() + static_cast<std::size_t>(i) * dh;
        for (std::size_t z = 0; z < dh; ++z) out[z] = base[z];
        for (std::size_t vi = 0; vi < nv; ++vi) {
            const double a = s.attn_w[static_cast<std::size_t>(i)]
                                     [static_cast<std::size_t>(s.video_slots[vi])];
            const double* vp = t.vprime.data() + (static_cast<std::size_t>(g) * nv + vi) * dh;
            for (std::size_t z = 0; z < dh; ++z) out[z] += a * vp[z];
        }
    }

    std::vector<double> o, f;
    matvec(L.wo, L.bo, t.attn_cat, d, qd, o);
    t.x2.resize(d);
    for (std::size_t i = 0; i < d; ++i) t.x2[i] = s.attn_in[i] + o[i];
    rmsnorm(t.x2, L.ffn_norm, t.h2);
    matvec(L.w1, L.b1, t.h2, static_cast<std::size_t>(cfg.d_ff), d, t.u);
    t.gelu_u.resize(t.u.size());
    for (std::size_t i = 0; i < t.u.size(); ++i) t.gelu_u[i] = gelu(t.u[i]);
    matvec(L.w2, L.b2, t.gelu_u, d, static_cast<std::size_t>(cfg.d_ff), f);
    t.x3.resize(d);
    for (std::size_t i = 0; i < d; ++i) t.x3[i] = t.x2[i] + f[i];
    rmsnorm(t.x3, w.final_norm, t.y);
    matvec(w.head_w, w.head_b, t.y, static_cast<std::size_t>(cfg.vocab_size), d, t.logits);
    return t;
}

inline std::vector<double> recompute_logits_with_delta(const Weights& w, const SavedActivations& s,
                                                       const double* delta) {
    return tail_forward(w, s, delta).logits;
}

// dH/ddelta for the captured step, given dH/dlogits. Exact reverse of
// tail_forward at the same delta.
inline ControllerGradient backprop_to_controller(const Weights& w, const SavedActivations& s,
                                                 const double* delta,
                                                 const std::vector<double>& dh_dz) {
    const auto& cfg = w.cfg;
    if (dh_dz.size() != static_cast<std::size_t>(cfg.vocab_size))
        throw NumericError("dH/dz length does not match vocabulary");
    const TailState t = tail_forward(w, s, delta);

    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto dh = static_cast<std::size_t>(cfg.d_head);
    const std::size_t qd = static_cast<std::size_t>(cfg.n_heads) * dh;
    const auto nv = static_cast<std::size_t>(s.n_video());
    const int group = cfg.n_heads / cfg.n_kv_heads;
    const auto& L = w.layers.back();

    std::vector<double> g_y, g_x3, g_f, g_gelu, g_u, g_h2, g_x2_ffn, g_x2, g_attn_cat;
    matvec_transpose(w.head_w, dh_dz, static_cast<std::size_t>(cfg.vocab_size), d, g_y);
    rmsnorm_backward(t.x3, w.final_norm, g_y, g_x3);

    matvec_transpose(L.w2, g_x3, d, static_cast<std::size_t>(cfg.d_ff), g_gelu);
    g_u.resize(t.u.size());
    for (std::size_t i = 0; i < t.u.size(); ++i) g_u[i] = gelu_deriv(t.u[i]) * g_gelu[i];
    matvec_transpose(L.w1, g_u, static_cast<std::size_t>(cfg.d_ff), d, g_h2);
    rmsnorm_backward(t.x2, L.ffn_norm, g_h2, g_x2_ffn);
    g_x2.resize(d);
    for (std::size_t i = 0; i < d; ++i) g_x2[i] = g_x3[i] + g_x2_ffn[i];

    matvec_transpose(L.wo, g_x2, d, qd, g_attn_cat);

    ControllerGradient out;
    out.grad.assign(static_cast<std::size_t>(cfg.n_kv_heads) * nv * dh, 0.0);
    std::vector<double> g_vprime(dh);
    for (int g = 0; g < cfg.n_kv_heads; ++g)
        for (std::size_t vi = 0; vi < nv; ++vi) {
            const std::size_t idx = static_cast<std::size_t>(g) * nv + vi;
            for (std::size_t z = 0; z < dh; ++z) g_vprime[z] = 0.0;
            for (int i = g * group; i < (g + 1) * group; ++i) {
                const double a = s.attn_w[static_cast<std::size_t>(i)]
                                         [static_cast<std::size_t>(s.video_slots[vi])];
                const double* gc = g_attn_cat.data() + static_cast<std::size_t>(i) * dh;
                for (std::size_t z = 0; z < dh; ++z) g_vprime[z] += a * gc[z];
            }
            if (!t.ok[idx]) continue;  // transform skipped; no delta path
            const double rho = t.rho[idx];
            const double r = s.video_norm(g, static_cast<int>(vi));
            const double* v = s.video_value(g, static_cast<int>(vi));
            const double* dslot = delta + idx * dh;
            double proj = 0.0;
            for (std::size_t z = 0; z < dh; ++z)
                proj += (v[z] + dslot[z]) / rho * g_vprime[z];
            double* gd = out.grad.data() + idx * dh;
            for (std::size_t z = 0; z < dh; ++z) {
                const double u_dir = (v[z] + dslot[z]) / rho;
                gd[z] = (r / rho) * (g_vprime[z] - u_dir * proj);
            }
        }
    out.pre_clip_norm = l2_norm(out.grad);
    return out;
}

}  // namespace vreason
