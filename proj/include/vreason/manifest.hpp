#pragma once

#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "vreason/common.hpp"
#include "vreason/config.hpp"
#include "vreason/trace.hpp"
#include "vreason/version.hpp"
#include "vreason/weights.hpp"

namespace vreason {

// Everything needed to reproduce a run byte-for-byte: the weights (by path
// and content hash), the prompt, the full generation config, and what was
// written where. Sweeps additionally record their axis.
struct RunManifest {
    std::string tool = "vreason";
    std::string version = kVersion;
    std::string command;
    double duration_ms = 0.0;
    int threads = 1;
    std::string weights_path;
    std::string weights_hash;
    PromptSpec prompt;
    GenerationConfig config;
    std::map<std::string, std::string> outputs;  // label -> path
    std::string sweep_axis;                      // empty unless command == "sweep"
    std::vector<double> sweep_values;
    int sweep_seeds = 0;
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
    nlohmann::json j = {{"tool", m.tool},
                        {"version", m.version},
                        {"command", m.command},
                        {"duration_ms", m.duration_ms},
                        {"threads", m.threads},
                        {"weights", {{"path", m.weights_path}, {"hash", m.weights_hash}}},
                        {"prompt",
                         {{"tokens", m.prompt.tokens},
                          {"video_begin", m.prompt.video_begin},
                          {"video_end", m.prompt.video_end}}},
                        {"config", config_to_json(m.config)},
                        {"outputs", m.outputs}};
    if (!m.sweep_axis.empty())
        j["sweep"] = {{"axis", m.sweep_axis}, {"values", m.sweep_values}, {"seeds", m.sweep_seeds}};
    return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    RunManifest m;
    m.tool = j.at("tool").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.duration_ms = j.at("duration_ms").get<double>();
    m.threads = j.at("threads").get<int>();
    m.weights_path = j.at("weights").at("path").get<std::string>();
    m.weights_hash = j.at("weights").at("hash").get<std::string>();
    m.prompt.tokens = j.at("prompt").at("tokens").get<std::vector<int>>();
    m.prompt.video_begin = j.at("prompt").at("video_begin").get<int>();
    m.prompt.video_end = j.at("prompt").at("video_end").get<int>();
    m.config = config_from_json(j.at("config"));
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    if (j.contains("sweep")) {
        m.sweep_axis = j.at("sweep").at("axis").get<std::string>();
        m.sweep_values = j.at("sweep").at("values").get<std::vector<double>>();
        m.sweep_seeds = j.at("sweep").at("seeds").get<int>();
    }
    return m;
}

inline void save_manifest(const RunManifest& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    out << manifest_to_json(m).dump(2) << "\n";
    if (!out) throw FormatError("short write to '" + path + "'");
}

inline RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open manifest '" + path + "'");
    try {
        nlohmann::json j;
        in >> j;
        return manifest_from_json(j);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed manifest '" + path + "': " + e.what());
    }
}

// Reruns must fail loudly when the weights file changed since the manifest
// was written.
inline void check_manifest_weights(const RunManifest& m, const Weights& w) {
    const std::string h = weights_hash(w);
    if (h != m.weights_hash)
        throw FormatError("weights hash mismatch: manifest has " + m.weights_hash +
                          ", file '" + m.weights_path + "' hashes to " + h);
}

}  // namespace vreason
