#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "vreason/common.hpp"

namespace vreason {

inline constexpr double kProbFloor = 1e-12;

inline std::vector<double> softmax(const std::vector<double>& logits) {
    if (logits.empty()) throw NumericError("softmax on empty logits");
    if (!all_finite(logits)) throw NumericError("non-finite logits in softmax");
    double mx = logits[0];
    for (double z : logits) mx = std::max(mx, z);
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        sum += p[i];
    }
    for (double& v : p) v /= sum;
    return p;
}

// Optimization-path distribution: floored away from zero, then renormalized,
// so log p stays finite in the gradient.
inline std::vector<double> floored_softmax(const std::vector<double>& logits) {
    std::vector<double> p = softmax(logits);
    double sum = 0.0;
    for (double& v : p) {
        v = std::max(v, kProbFloor);
        sum += v;
    }
    for (double& v : p) v /= sum;
    return p;
}

// Shannon entropy in nats; zero entries contribute zero. Result clamped to
// the valid range [0, log n] to absorb boundary rounding.
inline double entropy(const std::vector<double>& p) {
    if (p.empty()) throw NumericError("entropy of empty distribution");
    double sum = 0.0;
    for (double v : p) {
        if (v < 0.0) throw NumericError("negative probability in entropy");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw NumericError("entropy input not normalized");
    double h = 0.0;
    for (double v : p)
        if (v > 0.0) h -= v * std::log(v);
    return std::clamp(h, 0.0, std::log(static_cast<double>(p.size())));
}

// dH/dz for p = softmax(z): component form -p_i (log p_i + H). Sums to zero
// (softmax tangent space). Requires strictly positive p; floor upstream.
inline std::vector<double> entropy_grad_logits(const std::vector<double>& p) {
    if (p.empty()) throw NumericError("entropy gradient of empty distribution");
    double sum = 0.0;
    for (double v : p) {
        if (!(v > 0.0)) throw NumericError("entropy gradient needs strictly positive probabilities");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw NumericError("entropy gradient input not normalized");
    double h = 0.0;
    for (double v : p) h -= v * std::log(v);
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = -p[i] * (std::log(p[i]) + h);
    return g;
}

inline double switching_loss(double h, int alpha) {
    if (alpha != 1 && alpha != -1) throw NumericError("alpha must be +1 or -1");
    return -static_cast<double>(alpha) * h;
}

}  // namespace vreason
