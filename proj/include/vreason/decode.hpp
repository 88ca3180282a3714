#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vreason/backprop.hpp"
#include "vreason/config.hpp"
#include "vreason/controller.hpp"
#include "vreason/entropy.hpp"
#include "vreason/model.hpp"
#include "vreason/pruner.hpp"
#include "vreason/sampler.hpp"
#include "vreason/trace.hpp"
#include "vreason/tracker.hpp"
#include "vreason/weights.hpp"

namespace vreason {

struct GenerationResult {
    Trace trace;
    std::optional<ValueCacheController> controller;  // final state, when one ran
};

namespace detail {

inline int policy_alpha(const GenerationConfig& cfg, const EntropyTracker& tracker) {
    switch (cfg.mode) {
        case Mode::MinEntropy: return -1;
        case Mode::MaxEntropy: return 1;
        case Mode::VReason:
        case Mode::VReasonLite:
            return cfg.force_alpha != 0 ? cfg.force_alpha : tracker.alpha();
        case Mode::Baseline: return tracker.alpha();
    }
    return tracker.alpha();
}

// Shared by generate and generate_lite; the only difference is the one-shot
// prune between prefill and the first sampled token.
inline GenerationResult run_generation(const Weights& w, const PromptSpec& prompt,
                                       const GenerationConfig& cfg) {
    cfg.validate();
    prompt.validate(w.cfg);
    const auto prompt_len = static_cast<int>(prompt.tokens.size());
    if (prompt_len + cfg.max_length - 1 > w.cfg.max_seq)
        throw ConfigError("prompt length + max_length exceeds max_seq capacity");

    PrefillResult pre = prefill(w, prompt);
    if (!all_finite(pre.logits)) throw NumericError("non-finite logits at prefill");
    KVCache cache = std::move(pre.cache);
    SavedActivations saved = std::move(pre.saved);
    bool saved_usable = true;

    GenerationResult out;
    Trace& trace = out.trace;
    trace.config = cfg;
    trace.vocab_size = w.cfg.vocab_size;
    trace.model_hash = weights_hash(w);

    if (cfg.mode == Mode::VReasonLite) {
        const std::vector<double> scores = score_video_tokens(cache);
        PruneReport rep = select_keep_set(cache, scores, cfg.keep_ratio);
        prune_cache(cache, rep);
        // The prefill capture spans the unpruned cache; once slots are gone its
        // shape no longer matches the controller.
        saved_usable = rep.evicted.empty();
        trace.prune = std::move(rep);
    }

    const bool ctrl_active = cfg.mode != Mode::Baseline;
    std::optional<ValueCacheController> ctrl;
    if (ctrl_active)
        ctrl = ValueCacheController::make(w.cfg.n_kv_heads, static_cast<int>(cache.n_video()),
                                          w.cfg.d_head, cfg.learning_rate, cfg.clip_norm,
                                          cfg.step_size_k);

    EntropyTracker tracker(cfg.beta, cfg.ema_raw_form);
    const double h0 = entropy(softmax(pre.logits));
    tracker.push(h0);
    trace.ema_init = h0;

    Rng rng(cfg.sampler_seed);
    int token = sample(pre.logits, cfg, rng);
    long long opt_steps = 0;

    {
        TraceStep rec;
        rec.index = 1;
        rec.token = token;
        rec.h = h0;
        rec.ema = tracker.ema();
        rec.alpha_rule = tracker.alpha();
        rec.alpha = policy_alpha(cfg, tracker);
        trace.steps.push_back(rec);
    }

    int generated = 1;
    while (generated < cfg.max_length && !(cfg.eos_token >= 0 && token == cfg.eos_token)) {
        const int s = generated + 1;  // index of the token this iteration produces
        TraceStep rec;

        if (ctrl_active && s % cfg.step_size_k == 0) {
            if (!saved_usable) {
                rec.opt_skipped = true;
            } else {
                const int alpha = policy_alpha(cfg, tracker);
                const std::vector<double> p = floored_softmax(saved.logits);
                const double h_opt = entropy(p);
                const std::vector<double> dh_dz = entropy_grad_logits(p);
                ControllerGradient grad =
                    backprop_to_controller(w, saved, ctrl->delta.data(), dh_dz);
                if (!all_finite(grad.grad) || !std::isfinite(grad.pre_clip_norm)) {
                    rec.opt_skipped = true;
                } else {
                    adamw_step(*ctrl, grad, alpha);
                    opt_steps += 1;
                    rec.opt_step = true;
                    rec.loss = switching_loss(h_opt, alpha);
                    rec.grad_preclip_norm = grad.pre_clip_norm;
                }
            }
        }

        StepResult r = decode_step(w, token, cache, ctrl_active ? &*ctrl : nullptr);
        if (!all_finite(r.logits))
            throw NumericError("non-finite logits at generated token " + std::to_string(s));
        const double h = entropy(softmax(r.logits));
        tracker.push(h);
        token = sample(r.logits, cfg, rng);
        saved = std::move(r.saved);
        saved_usable = true;
        generated = s;

        rec.index = s;
        rec.token = token;
        rec.h = h;
        rec.ema = tracker.ema();
        rec.alpha_rule = tracker.alpha();
        rec.alpha = policy_alpha(cfg, tracker);
        rec.opt_steps_cum = opt_steps;
        rec.degenerate_slots = r.degenerate_slots;
        trace.steps.push_back(rec);
    }

    // Backfill the cumulative count on the first record for consistency.
    trace.steps.front().opt_steps_cum = 0;
    out.controller = std::move(ctrl);
    return out;
}

}  // namespace detail

inline GenerationResult generate(const Weights& w, const PromptSpec& prompt,
                                 const GenerationConfig& cfg) {
    if (cfg.mode == Mode::VReasonLite)
        throw ConfigError("generate does not run vreason_lite; use generate_lite");
    return detail::run_generation(w, prompt, cfg);
}

inline GenerationResult generate_lite(const Weights& w, const PromptSpec& prompt,
                                      const GenerationConfig& cfg) {
    if (cfg.mode != Mode::VReasonLite)
        throw ConfigError("generate_lite requires mode vreason_lite");
    return detail::run_generation(w, prompt, cfg);
}

}  // namespace vreason
