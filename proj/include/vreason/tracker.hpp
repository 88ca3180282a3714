#pragma once

#include <limits>
#include <vector>

#include "vreason/common.hpp"

namespace vreason {

// Switching rule over an EMA series: +1 while the current value is at or
// above the running peak of all strictly earlier values, else -1. The first
// element compares against an empty prefix (peak -inf) and is always +1.
inline std::vector<int> alpha_series_from_ema(const std::vector<double>& ema) {
    std::vector<int> out(ema.size());
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < ema.size(); ++i) {
        out[i] = ema[i] >= peak ? 1 : -1;
        peak = std::max(peak, ema[i]);
    }
    return out;
}

// Exponential smoothing of an entropy series. The first smoothed value is the
// first raw value. The default recursion feeds the previous smoothed value
// back in; raw_form instead mixes the previous raw observation.
inline std::vector<double> ema_series(const std::vector<double>& h, double beta, bool raw_form = false) {
    std::vector<double> out;
    out.reserve(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
        if (i == 0) {
            out.push_back(h[0]);
        } else {
            const double prev = raw_form ? h[i - 1] : out[i - 1];
            out.push_back(beta * prev + (1.0 - beta) * h[i]);
        }
    }
    return out;
}

class EntropyTracker {
public:
    EntropyTracker(double beta, bool raw_form = false) : beta_(beta), raw_form_(raw_form) {
        if (!(beta >= 0.0) || beta >= 1.0) throw ConfigError("tracker beta must be in [0, 1)");
    }

    void push(double h) {
        if (!std::isfinite(h)) throw NumericError("non-finite entropy pushed to tracker");
        double ema;
        if (h_.empty()) {
            ema = h;
        } else {
            peak_before_ = std::max(peak_before_, ema_.back());
            const double prev = raw_form_ ? h_.back() : ema_.back();
            ema = beta_ * prev + (1.0 - beta_) * h;
        }
        h_.push_back(h);
        ema_.push_back(ema);
    }

    // Switching sign for the newest step; peak excludes the newest value.
    int alpha() const {
        if (ema_.empty()) throw NumericError("alpha queried on empty tracker");
        return ema_.back() >= peak_before_ ? 1 : -1;
    }

    double ema() const {
        if (ema_.empty()) throw NumericError("ema queried on empty tracker");
        return ema_.back();
    }

    std::size_t size() const { return h_.size(); }
    double beta() const { return beta_; }
    bool raw_form() const { return raw_form_; }
    const std::vector<double>& h_values() const { return h_; }
    const std::vector<double>& ema_values() const { return ema_; }

private:
    double beta_;
    bool raw_form_;
    std::vector<double> h_, ema_;
    double peak_before_ = -std::numeric_limits<double>::infinity();
};

}  // namespace vreason
