#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "vreason/common.hpp"
#include "vreason/config.hpp"
#include "vreason/pruner.hpp"
#include "vreason/version.hpp"

namespace vreason {

struct TraceStep {
    int index = 0;  // 1-based generated-token index
    int token = 0;
    double h = 0.0;
    double ema = 0.0;
    int alpha = 1;       // value the active policy would use at this step
    int alpha_rule = 1;  // switching rule's value, regardless of mode
    bool opt_step = false;
    bool opt_skipped = false;
    double loss = std::numeric_limits<double>::quiet_NaN();
    double grad_preclip_norm = std::numeric_limits<double>::quiet_NaN();
    long long opt_steps_cum = 0;
    int degenerate_slots = 0;
};

struct Trace {
    std::string version = kVersion;
    std::string model_hash;
    int vocab_size = 0;
    GenerationConfig config;
    double ema_init = 0.0;
    std::optional<PruneReport> prune;
    std::vector<TraceStep> steps;

    std::vector<double> h_series() const {
        std::vector<double> out;
        out.reserve(steps.size());
        for (const auto& s : steps) out.push_back(s.h);
        return out;
    }
    std::vector<double> ema_values() const {
        std::vector<double> out;
        out.reserve(steps.size());
        for (const auto& s : steps) out.push_back(s.ema);
        return out;
    }
    std::vector<int> tokens() const {
        std::vector<int> out;
        out.reserve(steps.size());
        for (const auto& s : steps) out.push_back(s.token);
        return out;
    }
};

namespace detail {

inline nlohmann::json json_or_null(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

inline double double_or_nan(const nlohmann::json& j) {
    if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
    return j.get<double>();
}

}  // namespace detail

inline nlohmann::json config_to_json(const GenerationConfig& c) {
    return {
        {"mode", mode_name(c.mode)},
        {"max_length", c.max_length},
        {"temperature", c.temperature},
        {"top_p", c.top_p},
        {"min_p", detail::json_or_null(c.min_p)},
        {"sampler_seed", c.sampler_seed},
        {"step_size_k", c.step_size_k},
        {"learning_rate", c.learning_rate},
        {"clip_norm", c.clip_norm},
        {"beta", c.beta},
        {"keep_ratio", c.keep_ratio},
        {"force_alpha", c.force_alpha},
        {"ema_raw_form", c.ema_raw_form},
        {"eos_token", c.eos_token},
    };
}

inline GenerationConfig config_from_json(const nlohmann::json& j) {
    GenerationConfig c;
    c.mode = parse_mode(j.at("mode").get<std::string>());
    c.max_length = j.at("max_length").get<int>();
    c.temperature = j.at("temperature").get<double>();
    c.top_p = j.at("top_p").get<double>();
    c.min_p = detail::double_or_nan(j.at("min_p"));
    c.sampler_seed = j.at("sampler_seed").get<std::uint64_t>();
    c.step_size_k = j.at("step_size_k").get<int>();
    c.learning_rate = j.at("learning_rate").get<double>();
    c.clip_norm = j.at("clip_norm").get<double>();
    c.beta = j.at("beta").get<double>();
    c.keep_ratio = j.at("keep_ratio").get<double>();
    c.force_alpha = j.at("force_alpha").get<int>();
    c.ema_raw_form = j.at("ema_raw_form").get<bool>();
    c.eos_token = j.at("eos_token").get<int>();
    return c;
}

inline nlohmann::json prune_to_json(const PruneReport& r) {
    return {{"keep_ratio", r.keep_ratio},
            {"scores", r.scores},
            {"kept", r.kept},
            {"evicted", r.evicted}};
}

inline PruneReport prune_from_json(const nlohmann::json& j) {
    PruneReport r;
    r.keep_ratio = j.at("keep_ratio").get<double>();
    r.scores = j.at("scores").get<std::vector<double>>();
    r.kept = j.at("kept").get<std::vector<std::int64_t>>();
    r.evicted = j.at("evicted").get<std::vector<std::int64_t>>();
    return r;
}

inline nlohmann::json trace_header_json(const Trace& t) {
    nlohmann::json h = {{"record", "header"},
                        {"version", t.version},
                        {"model_hash", t.model_hash},
                        {"vocab_size", t.vocab_size},
                        {"ema_init", t.ema_init},
                        {"config", config_to_json(t.config)}};
    h["prune"] = t.prune ? prune_to_json(*t.prune) : nlohmann::json(nullptr);
    return h;
}

inline nlohmann::json step_to_json(const TraceStep& s) {
    return {{"record", "step"},
            {"index", s.index},
            {"token", s.token},
            {"h", s.h},
            {"ema", s.ema},
            {"alpha", s.alpha},
            {"alpha_rule", s.alpha_rule},
            {"opt_step", s.opt_step},
            {"opt_skipped", s.opt_skipped},
            {"loss", detail::json_or_null(s.loss)},
            {"grad_preclip_norm", detail::json_or_null(s.grad_preclip_norm)},
            {"opt_steps_cum", s.opt_steps_cum},
            {"degenerate_slots", s.degenerate_slots}};
}

inline TraceStep step_from_json(const nlohmann::json& j) {
    TraceStep s;
    s.index = j.at("index").get<int>();
    s.token = j.at("token").get<int>();
    s.h = j.at("h").get<double>();
    s.ema = j.at("ema").get<double>();
    s.alpha = j.at("alpha").get<int>();
    s.alpha_rule = j.at("alpha_rule").get<int>();
    s.opt_step = j.at("opt_step").get<bool>();
    s.opt_skipped = j.at("opt_skipped").get<bool>();
    s.loss = detail::double_or_nan(j.at("loss"));
    s.grad_preclip_norm = detail::double_or_nan(j.at("grad_preclip_norm"));
    s.opt_steps_cum = j.at("opt_steps_cum").get<long long>();
    s.degenerate_slots = j.at("degenerate_slots").get<int>();
    return s;
}

inline constexpr const char* kTraceCsvColumns =
    "index,token,h,ema,alpha,alpha_rule,opt_step,opt_skipped,loss,grad_preclip_norm,"
    "opt_steps_cum,degenerate_slots";

// JSONL: header object on the first line, one step object per following line.
// CSV: '#' line carrying the header JSON, a column row, then one row per step
// (empty cell = absent value). Both round-trip all numeric fields exactly.
inline void export_trace(const Trace& t, const std::string& format, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    if (format == "jsonl") {
        out << trace_header_json(t).dump() << "\n";
        for (const auto& s : t.steps) out << step_to_json(s).dump() << "\n";
    } else if (format == "csv") {
        out << "#" << trace_header_json(t).dump() << "\n" << kTraceCsvColumns << "\n";
        for (const auto& s : t.steps) {
            out << s.index << "," << s.token << "," << fmt_double(s.h) << "," << fmt_double(s.ema)
                << "," << s.alpha << "," << s.alpha_rule << "," << (s.opt_step ? 1 : 0) << ","
                << (s.opt_skipped ? 1 : 0) << "," << (std::isnan(s.loss) ? "" : fmt_double(s.loss))
                << ","
                << (std::isnan(s.grad_preclip_norm) ? "" : fmt_double(s.grad_preclip_norm)) << ","
                << s.opt_steps_cum << "," << s.degenerate_slots << "\n";
        }
    } else {
        throw ConfigError("unknown trace format '" + format + "' (expected jsonl or csv)");
    }
    if (!out) throw FormatError("short write to '" + path + "'");
}

inline Trace trace_from_header_json(const nlohmann::json& h) {
    Trace t;
    t.version = h.at("version").get<std::string>();
    t.model_hash = h.at("model_hash").get<std::string>();
    t.vocab_size = h.at("vocab_size").get<int>();
    t.ema_init = h.at("ema_init").get<double>();
    t.config = config_from_json(h.at("config"));
    if (!h.at("prune").is_null()) t.prune = prune_from_json(h.at("prune"));
    return t;
}

inline Trace parse_trace(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open trace '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line.empty())
        throw FormatError("trace '" + path + "' is empty");
    try {
        if (line[0] == '#') {  // CSV
            Trace t = trace_from_header_json(nlohmann::json::parse(line.substr(1)));
            if (!std::getline(in, line) || line != kTraceCsvColumns)
                throw FormatError("trace CSV column row mismatch in '" + path + "'");
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                std::vector<std::string> cells;
                std::stringstream ss(line);
                std::string cell;
                while (std::getline(ss, cell, ',')) cells.push_back(cell);
                while (cells.size() < 12) cells.emplace_back();
                if (cells.size() != 12)
                    throw FormatError("trace CSV row has " + std::to_string(cells.size()) +
                                      " cells, expected 12");
                TraceStep s;
                s.index = std::stoi(cells[0]);
                s.token = std::stoi(cells[1]);
                s.h = std::stod(cells[2]);
                s.ema = std::stod(cells[3]);
                s.alpha = std::stoi(cells[4]);
                s.alpha_rule = std::stoi(cells[5]);
                s.opt_step = cells[6] == "1";
                s.opt_skipped = cells[7] == "1";
                s.loss = cells[8].empty() ? std::numeric_limits<double>::quiet_NaN()
                                          : std::stod(cells[8]);
                s.grad_preclip_norm = cells[9].empty()
                                          ? std::numeric_limits<double>::quiet_NaN()
                                          : std::stod(cells[9]);
                s.opt_steps_cum = std::stoll(cells[10]);
                s.degenerate_slots = std::stoi(cells[11]);
                t.steps.push_back(s);
            }
            return t;
        }
        Trace t = trace_from_header_json(nlohmann::json::parse(line));
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            t.steps.push_back(step_from_json(nlohmann::json::parse(line)));
        }
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed trace '" + path + "': " + e.what());
    } catch (const std::invalid_argument&) {
        throw FormatError("malformed numeric cell in trace '" + path + "'");
    }
}

}  // namespace vreason
