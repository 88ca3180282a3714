#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "vreason/common.hpp"
#include "vreason/trace.hpp"

namespace vreason {

inline constexpr double kDefaultPersistence = 0.01;  // nats

struct PhaseSegmentation {
    std::size_t peak_index = 0;  // first global argmax of the EMA series
    double persistence = kDefaultPersistence;
    // (local-min index, following local-max index) pairs; a run up from the
    // series start is not a cycle.
    std::vector<std::pair<std::size_t, std::size_t>> micro_cycles;
};

// Alternating-extremum scan: an extremum is confirmed once the series retreats
// from it by at least `persistence`. Macro phases split at peak_index
// (exploration [0, peak], exploitation (peak, end]).
inline PhaseSegmentation segment_phases(const std::vector<double>& ema,
                                        double persistence = kDefaultPersistence) {
    if (ema.empty()) throw NumericError("segment_phases on empty series");
    if (!(persistence > 0.0)) throw ConfigError("persistence must be > 0");
    PhaseSegmentation out;
    out.persistence = persistence;
    for (std::size_t i = 1; i < ema.size(); ++i)
        if (ema[i] > ema[out.peak_index]) out.peak_index = i;

    std::vector<std::pair<char, std::size_t>> extrema;  // 'M' max / 'm' min
    int dir = 0;
    std::size_t cmax = 0, cmin = 0;
    for (std::size_t i = 1; i < ema.size(); ++i) {
        if (ema[i] > ema[cmax]) cmax = i;
        if (ema[i] < ema[cmin]) cmin = i;
        if (dir != -1 && ema[cmax] - ema[i] >= persistence) {
            extrema.emplace_back('M', cmax);
            dir = -1;
            cmax = cmin = i;
        } else if (dir != 1 && ema[i] - ema[cmin] >= persistence) {
            extrema.emplace_back('m', cmin);
            dir = 1;
            cmax = cmin = i;
        }
    }
    // A cycle needs a confirmed dip (min preceded by a max) and its recovery.
    for (std::size_t e = 1; e + 1 < extrema.size(); ++e)
        if (extrema[e].first == 'm' && extrema[e + 1].first == 'M')
            out.micro_cycles.emplace_back(extrema[e].second, extrema[e + 1].second);
    return out;
}

struct RunSummary {
    long long total_tokens = 0;
    long long optimizer_steps = 0;
    long long skipped_steps = 0;
    double final_h = 0.0;
    double final_ema = 0.0;
    std::size_t peak_index = 0;
    double peak_value = 0.0;
    std::size_t micro_cycle_count = 0;
    long long alpha_plus_before_peak = 0;   // policy alphas on steps strictly before the peak
    long long alpha_minus_before_peak = 0;
    double mean_loss = std::numeric_limits<double>::quiet_NaN();
    long long degenerate_events = 0;
};

inline RunSummary summarize(const Trace& t, double persistence = kDefaultPersistence) {
    if (t.steps.empty()) throw NumericError("summarize on empty trace");
    RunSummary s;
    s.total_tokens = static_cast<long long>(t.steps.size());
    const std::vector<double> ema = t.ema_values();
    const PhaseSegmentation seg = segment_phases(ema, persistence);
    s.peak_index = seg.peak_index;
    s.peak_value = ema[seg.peak_index];
    s.micro_cycle_count = seg.micro_cycles.size();
    s.final_h = t.steps.back().h;
    s.final_ema = t.steps.back().ema;
    double loss_sum = 0.0;
    long long loss_n = 0;
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
        const auto& st = t.steps[i];
        if (st.opt_step) {
            s.optimizer_steps += 1;
            loss_sum += st.loss;
            loss_n += 1;
        }
        if (st.opt_skipped) s.skipped_steps += 1;
        s.degenerate_events += st.degenerate_slots;
        if (i < seg.peak_index) {
            if (st.alpha > 0) s.alpha_plus_before_peak += 1;
            else s.alpha_minus_before_peak += 1;
        }
    }
    if (loss_n > 0) s.mean_loss = loss_sum / static_cast<double>(loss_n);
    return s;
}

// Mean Relative Accuracy over thresholds 0.50, 0.55, ..., 0.95: the fraction
// of thresholds theta with |pred - gt| / gt strictly below 1 - theta.
inline double mra(double pred, double gt) {
    if (gt == 0.0) throw NumericError("MRA ground truth must be nonzero");
    const double rel = std::abs(pred - gt) / std::abs(gt);
    int hits = 0;
    for (int i = 0; i < 10; ++i) {
        const double theta = static_cast<double>(50 + 5 * i) / 100.0;
        if (rel < 1.0 - theta) ++hits;
    }
    return static_cast<double>(hits) / 10.0;
}

inline double mra(const std::vector<double>& pred, const std::vector<double>& gt) {
    if (pred.size() != gt.size() || pred.empty())
        throw NumericError("MRA needs equal-length non-empty prediction/truth vectors");
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += mra(pred[i], gt[i]);
    return sum / static_cast<double>(pred.size());
}

struct CompareResult {
    long long delta_peak_index = 0;     // b - a throughout
    double delta_final_entropy = 0.0;
    long long delta_tokens = 0;
};

inline CompareResult compare_traces(const Trace& a, const Trace& b,
                                    double persistence = kDefaultPersistence) {
    const RunSummary sa = summarize(a, persistence);
    const RunSummary sb = summarize(b, persistence);
    CompareResult r;
    r.delta_peak_index =
        static_cast<long long>(sb.peak_index) - static_cast<long long>(sa.peak_index);
    r.delta_final_entropy = sb.final_ema - sa.final_ema;
    r.delta_tokens = sb.total_tokens - sa.total_tokens;
    return r;
}

inline nlohmann::json summary_to_json(const RunSummary& s) {
    nlohmann::json j = {{"total_tokens", s.total_tokens},
                        {"optimizer_steps", s.optimizer_steps},
                        {"skipped_steps", s.skipped_steps},
                        {"final_h", s.final_h},
                        {"final_ema", s.final_ema},
                        {"peak_index", s.peak_index},
                        {"peak_value", s.peak_value},
                        {"micro_cycle_count", s.micro_cycle_count},
                        {"alpha_plus_before_peak", s.alpha_plus_before_peak},
                        {"alpha_minus_before_peak", s.alpha_minus_before_peak},
                        {"degenerate_events", s.degenerate_events}};
    j["mean_loss"] = std::isnan(s.mean_loss) ? nlohmann::json(nullptr) : nlohmann::json(s.mean_loss);
    return j;
}

inline nlohmann::json segmentation_to_json(const PhaseSegmentation& seg) {
    nlohmann::json cycles = nlohmann::json::array();
    for (const auto& [lo, hi] : seg.micro_cycles) cycles.push_back({{"min", lo}, {"max", hi}});
    return {{"peak_index", seg.peak_index},
            {"persistence", seg.persistence},
            {"micro_cycles", cycles}};
}

inline void export_summary(const RunSummary& s, const PhaseSegmentation& seg,
                           const std::string& format, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    if (format == "jsonl") {
        nlohmann::json j = summary_to_json(s);
        j["segmentation"] = segmentation_to_json(seg);
        out << j.dump() << "\n";
    } else if (format == "csv") {
        out << "total_tokens,optimizer_steps,skipped_steps,final_h,final_ema,peak_index,"
               "peak_value,micro_cycle_count,alpha_plus_before_peak,alpha_minus_before_peak,"
               "mean_loss,degenerate_events\n";
        out << s.total_tokens << "," << s.optimizer_steps << "," << s.skipped_steps << ","
            << fmt_double(s.final_h) << "," << fmt_double(s.final_ema) << "," << s.peak_index
            << "," << fmt_double(s.peak_value) << "," << s.micro_cycle_count << ","
            << s.alpha_plus_before_peak << "," << s.alpha_minus_before_peak << ","
            << (std::isnan(s.mean_loss) ? "" : fmt_double(s.mean_loss)) << ","
            << s.degenerate_events << "\n";
    } else {
        throw ConfigError("unknown summary format '" + format + "' (expected jsonl or csv)");
    }
}

}  // namespace vreason
