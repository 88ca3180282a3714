#pragma once

#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "json.hpp"
#include "vreason/backprop.hpp"
#include "vreason/controller.hpp"
#include "vreason/decode.hpp"
#include "vreason/entropy.hpp"
#include "vreason/model.hpp"
#include "vreason/rng.hpp"
#include "vreason/tracker.hpp"
#include "vreason/weights.hpp"

namespace vreason {

// Entropy of the captured step as a function of delta alone.
inline double entropy_at_delta(const Weights& w, const SavedActivations& s, const double* delta) {
    const std::vector<double> logits = recompute_logits_with_delta(w, s, delta);
    if (!all_finite(logits)) throw NumericError("non-finite probe output at delta");
    return entropy(floored_softmax(logits));
}

// Central differences per delta coordinate; probes only the frozen-step tail,
// everything else untouched. Independent of the reverse-mode path.
inline std::vector<double> finite_diff_grad(const Weights& w, const SavedActivations& s,
                                            const std::vector<double>& delta, double eps) {
    if (!(eps > 0.0)) throw ConfigError("finite-difference epsilon must be > 0");
    std::vector<double> probe = delta;
    std::vector<double> grad(delta.size());
    for (std::size_t i = 0; i < delta.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double hp = entropy_at_delta(w, s, probe.data());
        probe[i] = orig - eps;
        const double hm = entropy_at_delta(w, s, probe.data());
        probe[i] = orig;
        grad[i] = (hp - hm) / (2.0 * eps);
    }
    return grad;
}

struct GradCheckReport {
    double epsilon = 1e-5;
    double tolerance = 1e-4;
    std::size_t coords = 0;
    double max_abs_error = 0.0;
    double max_rel_error = 0.0;
    std::size_t worst_coordinate = 0;
    double analytic_norm = 0.0;
    double runtime_ms = 0.0;
    bool pass = false;
};

// Relative error uses max(|analytic| + |numeric|, 1e-6) per coordinate so
// coordinates with genuinely tiny gradients compare against a sane scale.
inline GradCheckReport gradcheck(const Weights& w, const SavedActivations& s,
                                 const std::vector<double>& delta, double eps = 1e-5,
                                 double tol = 1e-4) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> p = floored_softmax(recompute_logits_with_delta(w, s, delta.data()));
    const std::vector<double> dh_dz = entropy_grad_logits(p);
    const ControllerGradient analytic = backprop_to_controller(w, s, delta.data(), dh_dz);
    const std::vector<double> numeric = finite_diff_grad(w, s, delta, eps);

    GradCheckReport rep;
    rep.epsilon = eps;
    rep.tolerance = tol;
    rep.coords = delta.size();
    rep.analytic_norm = analytic.pre_clip_norm;
    for (std::size_t i = 0; i < delta.size(); ++i) {
        const double a = analytic.grad[i];
        const double f = numeric[i];
        const double abs_err = std::abs(a - f);
        const double rel_err = abs_err / std::max(std::abs(a) + std::abs(f), 1e-6);
        if (abs_err > rep.max_abs_error) rep.max_abs_error = abs_err;
        if (rel_err > rep.max_rel_error) {
            rep.max_rel_error = rel_err;
            rep.worst_coordinate = i;
        }
    }
    rep.pass = rep.max_rel_error <= tol;
    rep.runtime_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    return rep;
}

inline nlohmann::json gradcheck_report_json(const GradCheckReport& r) {
    return {{"epsilon", r.epsilon},
            {"tolerance", r.tolerance},
            {"coords", r.coords},
            {"max_abs_error", r.max_abs_error},
            {"max_rel_error", r.max_rel_error},
            {"worst_coordinate", r.worst_coordinate},
            {"analytic_norm", r.analytic_norm},
            {"runtime_ms", r.runtime_ms},
            {"pass", r.pass}};
}

inline GradCheckReport gradcheck_report_from_json(const nlohmann::json& j) {
    GradCheckReport r;
    r.epsilon = j.at("epsilon").get<double>();
    r.tolerance = j.at("tolerance").get<double>();
    r.coords = j.at("coords").get<std::size_t>();
    r.max_abs_error = j.at("max_abs_error").get<double>();
    r.max_rel_error = j.at("max_rel_error").get<double>();
    r.worst_coordinate = j.at("worst_coordinate").get<std::size_t>();
    r.analytic_norm = j.at("analytic_norm").get<double>();
    r.runtime_ms = j.at("runtime_ms").get<double>();
    r.pass = j.at("pass").get<bool>();
    return r;
}

struct GradCheckFixture {
    Weights weights;
    KVCache cache;
    SavedActivations saved;
    PromptSpec prompt;
};

inline ModelConfig toy_config(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.vocab_size = 17;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 4;
    cfg.n_kv_heads = 2;
    cfg.d_head = 4;
    cfg.d_ff = 32;
    cfg.max_seq = 128;
    cfg.seed = seed;
    return cfg;
}

// Deterministic model + prompt + a couple of argmax decode steps; the saved
// activations of the last step are the gradcheck subject.
inline GradCheckFixture make_fixture(const ModelConfig& cfg, int prompt_len = 14,
                                     int video_begin = 3, int video_end = 9,
                                     int warm_steps = 2) {
    GradCheckFixture fx;
    fx.weights = init_random(cfg);
    Rng rng(cfg.seed ^ 0x5deece66dull);
    fx.prompt.video_begin = video_begin;
    fx.prompt.video_end = video_end;
    for (int i = 0; i < prompt_len; ++i)
        fx.prompt.tokens.push_back(
            1 + static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(cfg.vocab_size - 1)));
    PrefillResult pre = prefill(fx.weights, fx.prompt);
    fx.cache = std::move(pre.cache);
    fx.saved = std::move(pre.saved);
    std::vector<double> logits = std::move(pre.logits);
    for (int s = 0; s < warm_steps; ++s) {
        int tok = 0;
        for (std::size_t i = 1; i < logits.size(); ++i)
            if (logits[i] > logits[static_cast<std::size_t>(tok)]) tok = static_cast<int>(i);
        StepResult r = decode_step(fx.weights, tok, fx.cache, nullptr);
        fx.saved = std::move(r.saved);
        logits = std::move(r.logits);
    }
    return fx;
}

inline GradCheckFixture make_fixture(std::uint64_t seed) { return make_fixture(toy_config(seed)); }

// Repeated AdamW steps against the frozen step; element i is the entropy
// after i steps (length n_steps + 1).
inline std::vector<double> frozen_descent_entropy_path(const Weights& w,
                                                       const SavedActivations& s, int alpha,
                                                       double lr, int n_steps) {
    auto ctrl = ValueCacheController::make(s.n_kv_heads, s.n_video(), s.d_head, lr, 1.0, 1);
    std::vector<double> path;
    path.reserve(static_cast<std::size_t>(n_steps) + 1);
    for (int i = 0; i <= n_steps; ++i) {
        const std::vector<double> logits = recompute_logits_with_delta(w, s, ctrl.delta.data());
        const std::vector<double> p = floored_softmax(logits);
        path.push_back(entropy(p));
        if (i == n_steps) break;
        const std::vector<double> dh_dz = entropy_grad_logits(p);
        ControllerGradient g = backprop_to_controller(w, s, ctrl.delta.data(), dh_dz);
        adamw_step(ctrl, g, alpha);
    }
    return path;
}

struct PropResult {
    std::string kind;
    bool pass = false;
    nlohmann::json measurements;
};

// Entropy change from a single optimizer step scales linearly in the learning
// rate (first-order bound); checked by eta-halving, plus a live toy run whose
// entropies must stay inside [0, log n].
inline PropResult prop_bounded_update(std::uint64_t seed) {
    PropResult out;
    out.kind = "bounded_update";
    const GradCheckFixture fx = make_fixture(seed);
    const std::vector<double> etas = {1e-4, 5e-5, 2.5e-5};
    std::vector<double> dh;
    for (double eta : etas) {
        auto ctrl = ValueCacheController::make(fx.saved.n_kv_heads, fx.saved.n_video(),
                                               fx.saved.d_head, eta, 1.0, 1);
        const double h0 = entropy_at_delta(fx.weights, fx.saved, ctrl.delta.data());
        const std::vector<double> p =
            floored_softmax(recompute_logits_with_delta(fx.weights, fx.saved, ctrl.delta.data()));
        ControllerGradient g =
            backprop_to_controller(fx.weights, fx.saved, ctrl.delta.data(), entropy_grad_logits(p));
        adamw_step(ctrl, g, 1);
        dh.push_back(std::abs(entropy_at_delta(fx.weights, fx.saved, ctrl.delta.data()) - h0));
    }
    const double r1 = dh[1] / dh[0];
    const double r2 = dh[2] / dh[1];
    bool ratios_ok = r1 >= 0.3 && r1 <= 0.7 && r2 >= 0.3 && r2 <= 0.7;

    GenerationConfig cfg;
    cfg.mode = Mode::VReason;
    cfg.max_length = 100;
    cfg.learning_rate = 1e-4;
    cfg.step_size_k = 2;
    cfg.sampler_seed = seed;
    cfg.eos_token = -1;
    const GenerationResult res = generate(fx.weights, fx.prompt, cfg);
    const double h_max = std::log(static_cast<double>(fx.weights.cfg.vocab_size));
    bool range_ok = true;
    double max_step_dh = 0.0;
    for (std::size_t i = 0; i < res.trace.steps.size(); ++i) {
        const auto& st = res.trace.steps[i];
        if (!(st.h >= 0.0 && st.h <= h_max)) range_ok = false;
        if (i > 0 && st.opt_step)
            max_step_dh = std::max(max_step_dh, std::abs(st.h - res.trace.steps[i - 1].h));
    }
    out.pass = ratios_ok && range_ok && std::isfinite(max_step_dh);
    out.measurements = {{"delta_h", dh},
                        {"ratio_eta_halved", {r1, r2}},
                        {"loglog_slope", {std::log2(dh[0] / dh[1]), std::log2(dh[1] / dh[2])}},
                        {"run_max_step_dh", max_step_dh},
                        {"run_h_in_range", range_ok}};
    return out;
}

// First-order low-pass gain of the smoother: a sinusoid at frequency omega
// comes out attenuated by |(1-beta)/(1-beta e^{-i omega})|. Amplitude is
// measured by projection onto e^{-i omega t} over whole periods after a long
// burn-in, which is phase-independent.
inline PropResult prop_ema_lowpass() {
    PropResult out;
    out.kind = "ema_lowpass";
    const double beta = 0.98;
    const double amp = 0.5, base = 1.0;
    bool all_ok = true;
    nlohmann::json freqs = nlohmann::json::array();
    for (const double omega : {std::numbers::pi / 2.0, std::numbers::pi / 8.0}) {
        const int period = static_cast<int>(std::llround(2.0 * std::numbers::pi / omega));
        const int burn = 3000, window = 128 * period;
        std::vector<double> h;
        h.reserve(static_cast<std::size_t>(burn + window));
        for (int t = 0; t < burn + window; ++t)
            h.push_back(base + amp * std::sin(omega * t));
        const std::vector<double> ema = ema_series(h, beta);
        std::complex<double> acc(0.0, 0.0);
        for (int t = burn; t < burn + window; ++t)
            acc += ema[static_cast<std::size_t>(t)] *
                   std::exp(std::complex<double>(0.0, -omega * t));
        const double measured = 2.0 * std::abs(acc) / static_cast<double>(window);
        const double expected =
            amp * (1.0 - beta) /
            std::abs(std::complex<double>(1.0, 0.0) -
                     beta * std::exp(std::complex<double>(0.0, -omega)));
        const double rel = std::abs(measured - expected) / expected;
        const bool ok = rel <= 0.05;
        all_ok = all_ok && ok;
        freqs.push_back({{"omega", omega},
                         {"measured_amplitude", measured},
                         {"expected_amplitude", expected},
                         {"rel_error", rel},
                         {"pass", ok}});
    }
    out.pass = all_ok;
    out.measurements = {{"beta", beta}, {"frequencies", freqs}};
    return out;
}

// Smoothing can only move the argmax of a unimodal bump later, never earlier.
inline PropResult prop_peak_delay(std::uint64_t seed, int n_series = 100) {
    PropResult out;
    out.kind = "peak_delay";
    Rng rng(seed);
    int violations = 0;
    long long total_delay = 0;
    for (int s = 0; s < n_series; ++s) {
        const int n = 600;
        const double t0 = 150.0 + 200.0 * rng.next_double();
        const double width = 30.0 + 50.0 * rng.next_double();
        std::vector<double> h(n);
        for (int t = 0; t < n; ++t) {
            const double z = (t - t0) / width;
            h[static_cast<std::size_t>(t)] =
                0.5 + std::exp(-z * z) + 0.01 * (rng.next_double() - 0.5);
        }
        const std::vector<double> ema = ema_series(h, 0.98);
        std::size_t am_h = 0, am_e = 0;
        for (std::size_t i = 1; i < h.size(); ++i) {
            if (h[i] > h[am_h]) am_h = i;
            if (ema[i] > ema[am_e]) am_e = i;
        }
        if (am_e < am_h) ++violations;
        total_delay += static_cast<long long>(am_e) - static_cast<long long>(am_h);
    }
    out.pass = violations == 0;
    out.measurements = {{"series", n_series},
                        {"violations", violations},
                        {"mean_delay", static_cast<double>(total_delay) / n_series}};
    return out;
}

// Immediately after the first global EMA maximum the switching rule must
// flip to -1. Checked on live toy-model traces and synthetic random walks.
inline PropResult prop_post_peak_alpha(std::uint64_t seed, int n_runs = 20) {
    PropResult out;
    out.kind = "post_peak_alpha";
    int checked = 0, violations = 0, vacuous = 0;
    for (int r = 0; r < n_runs; ++r) {
        ModelConfig mc = toy_config(seed + static_cast<std::uint64_t>(r));
        const GradCheckFixture fx = make_fixture(mc, 14, 3, 9, 0);
        GenerationConfig cfg;
        cfg.mode = Mode::Baseline;
        cfg.max_length = 80;
        cfg.sampler_seed = seed + static_cast<std::uint64_t>(r);
        cfg.eos_token = -1;
        const GenerationResult res = generate(fx.weights, fx.prompt, cfg);
        const std::vector<double> ema = res.trace.ema_values();
        std::size_t peak = 0;
        for (std::size_t i = 1; i < ema.size(); ++i)
            if (ema[i] > ema[peak]) peak = i;
        if (peak + 1 >= ema.size()) {
            ++vacuous;
            continue;
        }
        ++checked;
        if (res.trace.steps[peak + 1].alpha_rule != -1) ++violations;
    }
    Rng rng(seed ^ 0xabcdef12345ull);
    for (int s = 0; s < 200; ++s) {
        std::vector<double> ema(300);
        double v = 1.0;
        for (auto& e : ema) {
            v += 0.05 * (rng.next_double() - 0.5);
            e = v;
        }
        const std::vector<int> alpha = alpha_series_from_ema(ema);
        std::size_t peak = 0;
        for (std::size_t i = 1; i < ema.size(); ++i)
            if (ema[i] > ema[peak]) peak = i;
        if (peak + 1 >= ema.size()) {
            ++vacuous;
            continue;
        }
        ++checked;
        if (alpha[peak + 1] != -1) ++violations;
    }
    out.pass = violations == 0 && checked > 0;
    out.measurements = {{"checked", checked}, {"vacuous", vacuous}, {"violations", violations}};
    return out;
}

}  // namespace vreason
