#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vreason/common.hpp"

namespace vreason {

inline constexpr double kDegenerateNormGuard = 1e-12;

// Norm-preserving value update for one cache slot: rescale v + delta back to
// the recorded original norm r. Returns false (and leaves `out` untouched by
// contract of the caller) when v + delta is degenerate. scale is computed as
// r/rho so that delta == 0 reproduces v bit-exactly.
inline bool transform_value_slot(const double* v, const double* delta, double r, double* out, int d) {
    double rho_sq = 0.0;
    for (int i = 0; i < d; ++i) {
        const double w = v[i] + delta[i];
        rho_sq += w * w;
    }
    const double rho = std::sqrt(rho_sq);
    if (rho < kDegenerateNormGuard) return false;
    const double scale = r / rho;
    for (int i = 0; i < d; ++i) out[i] = (v[i] + delta[i]) * scale;
    return true;
}

// Trainable offset on the last decoder layer's value cache, one d_head slice
// per (kv_head, video slot), with AdamW state alongside.
struct ValueCacheController {
    int n_kv_heads = 0;
    int n_video = 0;
    int d_head = 0;
    double learning_rate = 3e-4;
    double clip_norm = 1.0;
    int step_size_k = 4;
    long long opt_step_count = 0;
    std::vector<double> delta, m, v;  // each [n_kv_heads * n_video * d_head]

    static ValueCacheController make(int n_kv, int n_video, int d_head, double lr, double clip,
                                     int k) {
        if (n_kv < 1 || n_video < 1 || d_head < 1)
            throw ConfigError("controller dimensions must be positive");
        if (!(lr >= 0.0)) throw ConfigError("controller learning rate must be >= 0");
        if (!(clip > 0.0)) throw ConfigError("controller clip norm must be > 0");
        if (k < 1) throw ConfigError("controller step size must be positive");
        ValueCacheController c;
        c.n_kv_heads = n_kv;
        c.n_video = n_video;
        c.d_head = d_head;
        c.learning_rate = lr;
        c.clip_norm = clip;
        c.step_size_k = k;
        const std::size_t n = static_cast<std::size_t>(n_kv) * static_cast<std::size_t>(n_video) *
                              static_cast<std::size_t>(d_head);
        c.delta.assign(n, 0.0);
        c.m.assign(n, 0.0);
        c.v.assign(n, 0.0);
        return c;
    }

    std::size_t param_count() const { return delta.size(); }

    const double* slot(int kv_head, int video_idx) const {
        return delta.data() + (static_cast<std::size_t>(kv_head) * n_video + video_idx) * d_head;
    }
};

struct ControllerGradient {
    std::vector<double> grad;   // dH/ddelta, same layout as controller.delta
    double pre_clip_norm = 0.0;
};

// One AdamW step on the switching loss: effective gradient -alpha * dH/ddelta,
// rescaled to clip_norm when it exceeds it. No weight decay; bias-corrected
// moments (beta1 0.9, beta2 0.999, eps 1e-8).
inline void adamw_step(ValueCacheController& c, const ControllerGradient& g, int alpha) {
    if (alpha != 1 && alpha != -1) throw NumericError("adamw alpha must be +1 or -1");
    if (g.grad.size() != c.delta.size())
        throw NumericError("gradient size " + std::to_string(g.grad.size()) +
                           " does not match controller parameters " + std::to_string(c.delta.size()));
    if (!all_finite(g.grad)) throw NumericError("non-finite controller gradient");

    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double scale = -static_cast<double>(alpha);
    if (g.pre_clip_norm > c.clip_norm) scale *= c.clip_norm / g.pre_clip_norm;

    c.opt_step_count += 1;
    const double t = static_cast<double>(c.opt_step_count);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < c.delta.size(); ++i) {
        const double gi = scale * g.grad[i];
        c.m[i] = beta1 * c.m[i] + (1.0 - beta1) * gi;
        c.v[i] = beta2 * c.v[i] + (1.0 - beta2) * gi * gi;
        const double m_hat = c.m[i] / bc1;
        const double v_hat = c.v[i] / bc2;
        c.delta[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + eps);
    }
}

inline constexpr const char* kControllerMagic = "vreason-controller-v1";

inline void dump_controller(const ValueCacheController& c, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << kControllerMagic << "\n"
        << "n_kv_heads " << c.n_kv_heads << "\n"
        << "n_video " << c.n_video << "\n"
        << "d_head " << c.d_head << "\n"
        << "opt_step_count " << c.opt_step_count << "\n"
        << "payload\n";
    auto write_vec = [&](const std::vector<double>& v) {
        for (double x : v) {
            std::uint64_t bits;
            std::memcpy(&bits, &x, 8);
            unsigned char buf[8];
            for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
            out.write(reinterpret_cast<const char*>(buf), 8);
        }
    };
    write_vec(c.delta);
    write_vec(c.m);
    write_vec(c.v);
    if (!out) throw FormatError("short write to '" + path + "'");
}

inline ValueCacheController load_controller_dump(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open controller dump '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != kControllerMagic)
        throw FormatError("bad magic in controller dump '" + path + "'");
    int n_kv = 0, n_video = 0, d_head = 0;
    long long steps = 0;
    while (std::getline(in, line) && line != "payload") {
        std::istringstream ls(line);
        std::string key;
        long long v;
        if (!(ls >> key >> v)) throw FormatError("malformed controller dump line: '" + line + "'");
        if (key == "n_kv_heads") n_kv = static_cast<int>(v);
        else if (key == "n_video") n_video = static_cast<int>(v);
        else if (key == "d_head") d_head = static_cast<int>(v);
        else if (key == "opt_step_count") steps = v;
        else throw FormatError("unknown controller dump field '" + key + "'");
    }
    auto c = ValueCacheController::make(n_kv, n_video, d_head, 0.0, 1.0, 1);
    c.opt_step_count = steps;
    auto read_vec = [&](std::vector<double>& v) {
        unsigned char buf[8];
        for (double& x : v) {
            in.read(reinterpret_cast<char*>(buf), 8);
            if (in.gcount() != 8) throw FormatError("truncated controller dump payload");
            std::uint64_t bits = 0;
            for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
            std::memcpy(&x, &bits, 8);
        }
    };
    read_vec(c.delta);
    read_vec(c.m);
    read_vec(c.v);
    return c;
}

}  // namespace vreason
