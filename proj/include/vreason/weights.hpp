#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vreason/common.hpp"
#include "vreason/config.hpp"
#include "vreason/rng.hpp"

namespace vreason {

// Linear layers are stored row-major [out][in]; y = W x + b.
struct Weights {
    ModelConfig cfg;
    std::vector<double> tok_emb;  // [vocab][d_model]
    std::vector<double> pos_emb;  // [max_seq][d_model]
    struct Layer {
        std::vector<double> attn_norm;  // [d_model]
        std::vector<double> wq, bq;     // [n_heads*d_head][d_model], [n_heads*d_head]
        std::vector<double> wk, bk;     // [n_kv*d_head][d_model], [n_kv*d_head]
        std::vector<double> wv, bv;
        std::vector<double> wo, bo;     // [d_model][n_heads*d_head], [d_model]
        std::vector<double> ffn_norm;   // [d_model]
        std::vector<double> w1, b1;     // [d_ff][d_model], [d_ff]
        std::vector<double> w2, b2;     // [d_model][d_ff], [d_model]
    };
    std::vector<Layer> layers;
    std::vector<double> final_norm;  // [d_model]
    std::vector<double> head_w;      // [vocab][d_model]
    std::vector<double> head_b;      // [vocab]
};

struct TensorRef {
    std::string name;
    std::vector<std::size_t> dims;
    std::vector<double>* data;

    std::size_t count() const {
        std::size_t n = 1;
        for (std::size_t d : dims) n *= d;
        return n;
    }
};

// Canonical tensor order; save/load/init all walk this one manifest.
inline std::vector<TensorRef> tensor_manifest(Weights& w) {
    const auto& c = w.cfg;
    const auto n = static_cast<std::size_t>(c.vocab_size);
    const auto d = static_cast<std::size_t>(c.d_model);
    const auto qd = static_cast<std::size_t>(c.n_heads * c.d_head);
    const auto kd = static_cast<std::size_t>(c.n_kv_heads * c.d_head);
    const auto f = static_cast<std::size_t>(c.d_ff);
    std::vector<TensorRef> m;
    m.push_back({"tok_emb", {n, d}, &w.tok_emb});
    m.push_back({"pos_emb", {static_cast<std::size_t>(c.max_seq), d}, &w.pos_emb});
    for (int i = 0; i < c.n_layers; ++i) {
        auto& L = w.layers[static_cast<std::size_t>(i)];
        const std::string p = "layer" + std::to_string(i) + ".";
        m.push_back({p + "attn_norm", {d}, &L.attn_norm});
        m.push_back({p + "wq", {qd, d}, &L.wq});
        m.push_back({p + "bq", {qd}, &L.bq});
        m.push_back({p + "wk", {kd, d}, &L.wk});
        m.push_back({p + "bk", {kd}, &L.bk});
        m.push_back({p + "wv", {kd, d}, &L.wv});
        m.push_back({p + "bv", {kd}, &L.bv});
        m.push_back({p + "wo", {d, qd}, &L.wo});
        m.push_back({p + "bo", {d}, &L.bo});
        m.push_back({p + "ffn_norm", {d}, &L.ffn_norm});
        m.push_back({p + "w1", {f, d}, &L.w1});
        m.push_back({p + "b1", {f}, &L.b1});
        m.push_back({p + "w2", {d, f}, &L.w2});
        m.push_back({p + "b2", {d}, &L.b2});
    }
    m.push_back({"final_norm", {d}, &w.final_norm});
    m.push_back({"head_w", {n, d}, &w.head_w});
    m.push_back({"head_b", {n}, &w.head_b});
    return m;
}

// Seeded init: normals scaled by 1/sqrt(d_model) for every projection,
// unit-scale normals for the embeddings, ones for norm gains, zero biases.
inline Weights init_random(const ModelConfig& cfg) {
    cfg.validate();
    Weights w;
    w.cfg = cfg;
    w.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    Rng rng(cfg.seed);
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    for (auto& t : tensor_manifest(w)) {
        t.data->resize(t.count());
        const bool is_norm = t.name.find("norm") != std::string::npos;
        const bool is_bias = t.name.find(".b") != std::string::npos || t.name == "head_b";
        const bool is_emb = t.name == "tok_emb" || t.name == "pos_emb";
        for (double& v : *t.data) {
            if (is_norm) v = 1.0;
            else if (is_bias) v = 0.0;
            else if (is_emb) v = rng.next_normal();
            else v = proj_std * rng.next_normal();
        }
    }
    return w;
}

namespace detail {

inline void pack_le(double v, unsigned char out[8]) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
}

inline double unpack_le(const unsigned char in[8]) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(in[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

}  // namespace detail

inline constexpr const char* kWeightsMagic = "vreason-weights-v1";

inline void save_weights(Weights& w, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open '" + path + "' for writing");
    const auto& c = w.cfg;
    out << kWeightsMagic << "\n"
        << "vocab_size " << c.vocab_size << "\n"
        << "d_model " << c.d_model << "\n"
        << "n_layers " << c.n_layers << "\n"
        << "n_heads " << c.n_heads << "\n"
        << "n_kv_heads " << c.n_kv_heads << "\n"
        << "d_head " << c.d_head << "\n"
        << "d_ff " << c.d_ff << "\n"
        << "max_seq " << c.max_seq << "\n"
        << "seed " << c.seed << "\n";
    auto manifest = tensor_manifest(w);
    for (const auto& t : manifest) {
        out << "tensor " << t.name;
        for (std::size_t d : t.dims) out << " " << d;
        out << "\n";
    }
    out << "payload\n";
    unsigned char buf[8];
    for (const auto& t : manifest) {
        for (double v : *t.data) {
            detail::pack_le(v, buf);
            out.write(reinterpret_cast<const char*>(buf), 8);
        }
    }
    if (!out) throw FormatError("short write to '" + path + "'");
}

inline Weights load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open weights file '" + path + "'");
    std::string line;
    if (!std::getline(in, line) || line != kWeightsMagic)
        throw FormatError("bad magic in '" + path + "' (expected " + std::string(kWeightsMagic) + ")");

    ModelConfig cfg;
    std::vector<std::pair<std::string, std::vector<std::size_t>>> declared;
    bool saw_payload = false;
    while (std::getline(in, line)) {
        if (line == "payload") {
            saw_payload = true;
            break;
        }
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "tensor") {
            std::string name;
            ls >> name;
            std::vector<std::size_t> dims;
            std::size_t d;
            while (ls >> d) dims.push_back(d);
            if (name.empty() || dims.empty())
                throw FormatError("malformed tensor line in weights header: '" + line + "'");
            declared.emplace_back(name, dims);
        } else {
            long long v;
            if (!(ls >> v)) throw FormatError("malformed weights header line: '" + line + "'");
            if (key == "vocab_size") cfg.vocab_size = static_cast<int>(v);
            else if (key == "d_model") cfg.d_model = static_cast<int>(v);
            else if (key == "n_layers") cfg.n_layers = static_cast<int>(v);
            else if (key == "n_heads") cfg.n_heads = static_cast<int>(v);
            else if (key == "n_kv_heads") cfg.n_kv_heads = static_cast<int>(v);
            else if (key == "d_head") cfg.d_head = static_cast<int>(v);
            else if (key == "d_ff") cfg.d_ff = static_cast<int>(v);
            else if (key == "max_seq") cfg.max_seq = static_cast<int>(v);
            else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(v);
            else throw FormatError("unknown weights header field '" + key + "'");
        }
    }
    if (!saw_payload) throw FormatError("weights header missing payload marker");
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw FormatError("weights header invalid: " + std::string(e.what()));
    }

    Weights w;
    w.cfg = cfg;
    w.layers.resize(static_cast<std::size_t>(cfg.n_layers));
    auto manifest = tensor_manifest(w);
    if (declared.size() != manifest.size())
        throw FormatError("weights header declares " + std::to_string(declared.size()) +
                          " tensors, expected " + std::to_string(manifest.size()));
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        if (declared[i].first != manifest[i].name)
            throw FormatError("tensor order mismatch: got '" + declared[i].first + "', expected '" +
                              manifest[i].name + "'");
        if (declared[i].second != manifest[i].dims)
            throw FormatError("tensor '" + manifest[i].name + "' has inconsistent dimensions for this config");
    }
    unsigned char buf[8];
    for (auto& t : manifest) {
        t.data->resize(t.count());
        for (std::size_t i = 0; i < t.data->size(); ++i) {
            in.read(reinterpret_cast<char*>(buf), 8);
            if (in.gcount() != 8)
                throw FormatError("truncated payload for tensor '" + t.name + "' (expected " +
                                  std::to_string(t.count() * 8) + " bytes)");
            (*t.data)[i] = detail::unpack_le(buf);
        }
    }
    if (in.read(reinterpret_cast<char*>(buf), 1); in.gcount() != 0)
        throw FormatError("trailing bytes after final tensor 'head_b'");
    return w;
}

// Stable content hash over the config line and payload bits.
inline std::string weights_hash(const Weights& w_const) {
    // Read-only walk; the manifest carries mutable pointers only for load().
    Weights& w = const_cast<Weights&>(w_const);
    std::uint64_t h = fnv1a64(kWeightsMagic, std::strlen(kWeightsMagic));
    const auto& c = w.cfg;
    const long long fields[] = {c.vocab_size, c.d_model,  c.n_layers, c.n_heads,
                                c.n_kv_heads, c.d_head,   c.d_ff,     c.max_seq,
                                static_cast<long long>(c.seed)};
    h = fnv1a64(fields, sizeof fields, h);
    unsigned char buf[8];
    for (const auto& t : tensor_manifest(w))
        for (double v : *t.data) {
            detail::pack_le(v, buf);
            h = fnv1a64(buf, 8, h);
        }
    return hex64(h);
}

}  // namespace vreason
