#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "vreason/common.hpp"

namespace vreason {

struct ModelConfig {
    int vocab_size = 17;   // id 0 is reserved as EOS
    int d_model = 16;
    int n_layers = 2;
    int n_heads = 4;
    int n_kv_heads = 2;
    int d_head = 4;
    int d_ff = 32;
    int max_seq = 128;
    std::uint64_t seed = 0;

    void validate() const {
        if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2 (id 0 is EOS)");
        if (d_model < 1) throw ConfigError("d_model must be positive");
        if (n_layers < 1) throw ConfigError("n_layers must be positive");
        if (n_heads < 1) throw ConfigError("n_heads must be positive");
        if (n_kv_heads < 1 || n_kv_heads > n_heads)
            throw ConfigError("n_kv_heads must be in [1, n_heads]");
        if (n_heads % n_kv_heads != 0)
            throw ConfigError("n_heads must be divisible by n_kv_heads");
        if (d_head < 1) throw ConfigError("d_head must be positive");
        if (n_heads * d_head != d_model)
            throw ConfigError("n_heads * d_head must equal d_model (got " +
                              std::to_string(n_heads) + " * " + std::to_string(d_head) +
                              " != " + std::to_string(d_model) + ")");
        if (d_ff < 1) throw ConfigError("d_ff must be positive");
        if (max_seq < 1) throw ConfigError("max_seq must be positive");
    }
};

struct PromptSpec {
    std::vector<int> tokens;
    int video_begin = 0;  // half-open span [video_begin, video_end)
    int video_end = 0;

    void validate(const ModelConfig& cfg) const {
        if (tokens.empty()) throw ConfigError("prompt must be non-empty");
        if (static_cast<int>(tokens.size()) > cfg.max_seq)
            throw ConfigError("prompt longer than max_seq");
        for (int t : tokens)
            if (t < 0 || t >= cfg.vocab_size)
                throw ConfigError("prompt token id " + std::to_string(t) + " out of vocabulary");
        if (video_begin < 0 || video_end > static_cast<int>(tokens.size()) || video_begin >= video_end)
            throw ConfigError("video span must satisfy 0 <= begin < end <= prompt length");
        if (video_end - video_begin < 2)
            throw ConfigError("video span must cover at least 2 positions");
    }
};

enum class Mode { Baseline, VReason, VReasonLite, MinEntropy, MaxEntropy };

inline std::string mode_name(Mode m) {
    switch (m) {
        case Mode::Baseline: return "baseline";
        case Mode::VReason: return "vreason";
        case Mode::VReasonLite: return "vreason_lite";
        case Mode::MinEntropy: return "min_entropy";
        case Mode::MaxEntropy: return "max_entropy";
    }
    return "baseline";
}

inline Mode parse_mode(const std::string& s) {
    if (s == "baseline") return Mode::Baseline;
    if (s == "vreason") return Mode::VReason;
    if (s == "vreason_lite") return Mode::VReasonLite;
    if (s == "min_entropy") return Mode::MinEntropy;
    if (s == "max_entropy") return Mode::MaxEntropy;
    throw ConfigError("unknown mode '" + s + "'");
}

struct GenerationConfig {
    Mode mode = Mode::Baseline;
    int max_length = 64;           // generated tokens, not counting the prompt
    double temperature = 0.1;
    double top_p = 0.001;
    double min_p = std::numeric_limits<double>::quiet_NaN();  // NaN = disabled
    std::uint64_t sampler_seed = 0;
    int step_size_k = 4;           // optimizer cadence
    double learning_rate = 3e-4;
    double clip_norm = 1.0;
    double beta = 0.98;            // EMA coefficient
    double keep_ratio = 0.5;       // lite mode only
    int force_alpha = 0;           // 0 = follow the switching rule; otherwise +1 / -1
    bool ema_raw_form = false;     // smooth the raw series instead of the recursive form
    int eos_token = 0;             // negative disables EOS stopping

    bool min_p_set() const { return !std::isnan(min_p); }

    void validate() const {
        if (max_length < 1) throw ConfigError("max_length must be positive");
        if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
        if (!(top_p > 0.0) || top_p > 1.0) throw ConfigError("top_p must be in (0, 1]");
        if (min_p_set() && (min_p < 0.0 || min_p > 1.0))
            throw ConfigError("min_p must be in [0, 1]");
        if (step_size_k < 1) throw ConfigError("step size k must be positive");
        if (!(learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
        if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be > 0");
        if (!(beta >= 0.0) || beta >= 1.0) throw ConfigError("beta must be in [0, 1)");
        if (!(keep_ratio > 0.0) || keep_ratio > 1.0)
            throw ConfigError("keep_ratio must be in (0, 1]");
        if (force_alpha != 0 && force_alpha != 1 && force_alpha != -1)
            throw ConfigError("force_alpha must be -1 or +1");
    }
};

}  // namespace vreason
