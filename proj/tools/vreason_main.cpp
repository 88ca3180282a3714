// vreason command-line front end: model init, guided generation, trace
// analytics, and the verification harnesses, with reproducible manifests.

#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "vreason/vreason.hpp"

namespace {

using namespace vreason;

std::vector<int> parse_csv_ints(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(cell, &used);
            if (used != cell.size()) throw std::invalid_argument(cell);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("bad integer '" + cell + "' in list '" + s + "'");
        }
    }
    if (out.empty()) throw ConfigError("empty integer list '" + s + "'");
    return out;
}

std::vector<double> parse_csv_doubles(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            std::size_t used = 0;
            const double v = std::stod(cell, &used);
            if (used != cell.size()) throw std::invalid_argument(cell);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("bad number '" + cell + "' in list '" + s + "'");
        }
    }
    if (out.empty()) throw ConfigError("empty number list '" + s + "'");
    return out;
}

void parse_span(const std::string& s, int& begin, int& end) {
    const auto colon = s.find(':');
    if (colon == std::string::npos)
        throw ConfigError("video span must be BEGIN:END, got '" + s + "'");
    try {
        begin = std::stoi(s.substr(0, colon));
        end = std::stoi(s.substr(colon + 1));
    } catch (const std::exception&) {
        throw ConfigError("bad video span '" + s + "'");
    }
}

std::string join_args(int argc, char** argv) {
    std::string out;
    for (int i = 0; i < argc; ++i) {
        if (i) out += ' ';
        out += argv[i];
    }
    return out;
}

// Options shared by generate and sweep.
struct GenOpts {
    std::string weights_path;
    std::string prompt_csv;
    std::string span = "0:0";
    std::string mode = "vreason";
    int max_len = 64;
    double temperature = 0.1;
    double top_p = 0.001;
    double min_p = 0.0;
    std::uint64_t seed = 0;
    int k = 4;
    double lr = 3e-4;
    double clip = 1.0;
    double beta = 0.98;
    double keep_ratio = 0.5;
    int force_alpha = 0;
    bool ema_raw = false;
};

void add_gen_flags(CLI::App* cmd, GenOpts& o, bool weights_required) {
    auto* wopt = cmd->add_option("--weights", o.weights_path, "model weights file");
    if (weights_required) wopt->required();
    cmd->add_option("--prompt-tokens", o.prompt_csv, "prompt token ids, comma separated");
    cmd->add_option("--video-span", o.span, "video token span BEGIN:END (half-open)");
    cmd->add_option("--mode", o.mode,
                    "baseline | vreason | vreason_lite | min_entropy | max_entropy")
        ->capture_default_str();
    cmd->add_option("--max-len", o.max_len, "tokens to generate")->capture_default_str();
    cmd->add_option("--temperature", o.temperature, "sampling temperature")->capture_default_str();
    cmd->add_option("--top-p", o.top_p, "nucleus threshold")->capture_default_str();
    cmd->add_option("--min-p", o.min_p, "min-p threshold relative to the top probability");
    cmd->add_option("--seed", o.seed, "sampler seed")->capture_default_str();
    cmd->add_option("--k", o.k, "optimizer cadence (every k-th token)")->capture_default_str();
    cmd->add_option("--lr", o.lr, "controller learning rate")->capture_default_str();
    cmd->add_option("--clip", o.clip, "gradient clip norm")->capture_default_str();
    cmd->add_option("--beta", o.beta, "entropy EMA coefficient")->capture_default_str();
    cmd->add_option("--keep-ratio", o.keep_ratio, "lite mode keep ratio")->capture_default_str();
    cmd->add_option("--force-alpha", o.force_alpha, "-1/+1 overrides the switching rule")
        ->check(CLI::IsMember({-1, 0, 1}));
    cmd->add_flag("--ema-raw", o.ema_raw, "smooth raw entropies instead of the recursion");
}

GenerationConfig config_from_opts(const CLI::App* cmd, const GenOpts& o) {
    GenerationConfig cfg;
    cfg.mode = parse_mode(o.mode);
    cfg.max_length = o.max_len;
    cfg.temperature = o.temperature;
    cfg.top_p = o.top_p;
    if (cmd->count("--min-p")) cfg.min_p = o.min_p;
    cfg.sampler_seed = o.seed;
    cfg.step_size_k = o.k;
    cfg.learning_rate = o.lr;
    cfg.clip_norm = o.clip;
    cfg.beta = o.beta;
    cfg.keep_ratio = o.keep_ratio;
    cfg.force_alpha = o.force_alpha;
    cfg.ema_raw_form = o.ema_raw;
    if (cfg.mode == Mode::Baseline) {
        for (const char* flag : {"--lr", "--k", "--clip", "--force-alpha"})
            if (cmd->count(flag))
                std::cerr << "warning: " << flag << " has no effect in baseline mode; ignored\n";
    }
    if (cfg.mode != Mode::VReasonLite && cmd->count("--keep-ratio"))
        std::cerr << "warning: --keep-ratio only applies to vreason_lite; ignored\n";
    return cfg;
}

PromptSpec prompt_from_opts(const CLI::App* cmd, const GenOpts& o) {
    if (!cmd->count("--prompt-tokens")) throw ConfigError("--prompt-tokens is required");
    if (!cmd->count("--video-span")) throw ConfigError("--video-span is required");
    PromptSpec p;
    p.tokens = parse_csv_ints(o.prompt_csv);
    parse_span(o.span, p.video_begin, p.video_end);
    return p;
}

GenerationResult run_any(const Weights& w, const PromptSpec& p, const GenerationConfig& c) {
    return c.mode == Mode::VReasonLite ? generate_lite(w, p, c) : generate(w, p, c);
}

std::string out_path(const std::string& dir, const std::string& name) {
    if (dir.empty()) return name;
    std::filesystem::create_directories(dir);
    return (std::filesystem::path(dir) / name).string();
}

struct SweepRow {
    double value = 0.0;
    int n_ok = 0, n_fail = 0;
    double sum_final_ema = 0.0, sum_peak_delay = 0.0, sum_tokens = 0.0;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"entropy-guided decoding with a trainable value-cache controller"};
    app.set_version_flag("--version", std::string(vreason::kVersion));
    app.require_subcommand(1);

    int threads = 1;
    std::string output_dir;
    app.add_option("--threads", threads, "worker threads (sweep)")->capture_default_str();
    app.add_option("--output-dir", output_dir, "directory for default output files");

    // ---- init ----
    auto* cmd_init = app.add_subcommand("init", "create a seeded model weights file");
    ModelConfig mc;
    std::string init_out = "weights.bin";
    cmd_init->add_option("--out", init_out, "output path")->capture_default_str();
    cmd_init->add_option("--vocab", mc.vocab_size)->capture_default_str();
    cmd_init->add_option("--d-model", mc.d_model)->capture_default_str();
    cmd_init->add_option("--layers", mc.n_layers)->capture_default_str();
    cmd_init->add_option("--heads", mc.n_heads)->capture_default_str();
    cmd_init->add_option("--kv-heads", mc.n_kv_heads)->capture_default_str();
    cmd_init->add_option("--d-head", mc.d_head)->capture_default_str();
    cmd_init->add_option("--d-ff", mc.d_ff)->capture_default_str();
    cmd_init->add_option("--max-seq", mc.max_seq)->capture_default_str();
    cmd_init->add_option("--model-seed", mc.seed, "weight init seed")->capture_default_str();

    // ---- generate ----
    auto* cmd_gen = app.add_subcommand("generate", "run one decoding session");
    GenOpts gen_opts;
    std::string trace_out, trace_format = "jsonl", controller_dump_path, manifest_out,
                from_manifest;
    add_gen_flags(cmd_gen, gen_opts, /*weights_required=*/false);
    cmd_gen->add_option("--trace-out", trace_out, "write the step trace here");
    cmd_gen->add_option("--trace-format", trace_format, "jsonl | csv")->capture_default_str();
    cmd_gen->add_option("--controller-dump", controller_dump_path,
                        "write the final controller state here");
    cmd_gen->add_option("--manifest-out", manifest_out, "manifest path (default in output dir)");
    cmd_gen->add_option("--from-manifest", from_manifest,
                        "replay a previous run from its manifest");

    // ---- analyze ----
    auto* cmd_an = app.add_subcommand("analyze", "summarize a trace file");
    std::string an_trace, an_format = "jsonl", an_out;
    double an_persistence = kDefaultPersistence;
    cmd_an->add_option("--trace", an_trace, "trace file (jsonl or csv)")->required();
    cmd_an->add_option("--persistence", an_persistence, "extremum persistence, nats")
        ->capture_default_str();
    cmd_an->add_option("--format", an_format, "jsonl | csv")->capture_default_str();
    cmd_an->add_option("--out", an_out, "also export the summary here");

    // ---- compare ----
    auto* cmd_cmp = app.add_subcommand("compare", "diff two traces (b minus a)");
    std::string cmp_a, cmp_b;
    double cmp_persistence = kDefaultPersistence;
    cmd_cmp->add_option("--trace-a", cmp_a)->required();
    cmd_cmp->add_option("--trace-b", cmp_b)->required();
    cmd_cmp->add_option("--persistence", cmp_persistence)->capture_default_str();

    // ---- gradcheck ----
    auto* cmd_gc = app.add_subcommand("gradcheck", "finite-difference check of the controller gradient");
    std::uint64_t gc_seed = 7;
    double gc_eps = 1e-5, gc_tol = 1e-4, gc_delta_scale = 0.01;
    std::string gc_out;
    cmd_gc->add_option("--seed", gc_seed, "fixture seed")->capture_default_str();
    cmd_gc->add_option("--epsilon", gc_eps, "finite-difference step")->capture_default_str();
    cmd_gc->add_option("--tolerance", gc_tol, "max relative error allowed")->capture_default_str();
    cmd_gc->add_option("--delta-scale", gc_delta_scale, "stddev of the random probe point")
        ->capture_default_str();
    cmd_gc->add_option("--out", gc_out, "write the report JSON here");

    // ---- props ----
    auto* cmd_pr = app.add_subcommand("props", "behavioral property harnesses");
    std::string pr_kind = "all";
    std::uint64_t pr_seed = 1;
    int pr_seeds = 20;
    std::string pr_out;
    cmd_pr->add_option("--kind", pr_kind,
                       "all | bounded_update | ema_lowpass | peak_delay | post_peak_alpha")
        ->capture_default_str();
    cmd_pr->add_option("--seed", pr_seed, "base seed")->capture_default_str();
    cmd_pr->add_option("--seeds", pr_seeds, "runs/series for the sampled harnesses")
        ->capture_default_str();
    cmd_pr->add_option("--out", pr_out, "write results JSON here");

    // ---- sweep ----
    auto* cmd_sw = app.add_subcommand("sweep", "grid over k or lr against per-seed baselines");
    GenOpts sw_opts;
    sw_opts.mode = "vreason";
    std::string sw_axis = "k", sw_values_csv, sw_out, sw_manifest_out;
    int sw_seeds = 4;
    add_gen_flags(cmd_sw, sw_opts, /*weights_required=*/true);
    cmd_sw->add_option("--axis", sw_axis, "k | lr")->check(CLI::IsMember({"k", "lr"}))
        ->capture_default_str();
    cmd_sw->add_option("--values", sw_values_csv, "axis values, comma separated");
    cmd_sw->add_option("--seeds", sw_seeds, "sampler seeds per value")->capture_default_str();
    cmd_sw->add_option("--out", sw_out, "write the result table here");
    cmd_sw->add_option("--manifest-out", sw_manifest_out, "manifest path (default in output dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    const auto t_start = std::chrono::steady_clock::now();
    auto elapsed_ms = [&t_start] {
        return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                         t_start)
            .count();
    };

    try {
        if (*cmd_init) {
            Weights w = init_random(mc);
            const std::string path = output_dir.empty() ? init_out : out_path(output_dir, init_out);
            save_weights(w, path);
            nlohmann::json j = {{"weights", path}, {"hash", weights_hash(w)},
                                {"parameters", 0}};
            std::size_t n = 0;
            for (const auto& t : tensor_manifest(w)) n += t.count();
            j["parameters"] = n;
            std::cout << j.dump() << "\n";
            return 0;
        }

        if (*cmd_gen) {
            RunManifest man;
            man.command = join_args(argc, argv);
            Weights w;
            PromptSpec prompt;
            GenerationConfig cfg;
            if (!from_manifest.empty()) {
                const RunManifest prev = load_manifest(from_manifest);
                const std::string wpath = cmd_gen->count("--weights") ? gen_opts.weights_path
                                                                      : prev.weights_path;
                w = load_weights(wpath);
                check_manifest_weights(prev, w);
                prompt = prev.prompt;
                cfg = prev.config;
                man.weights_path = wpath;
            } else {
                if (!cmd_gen->count("--weights")) throw ConfigError("--weights is required");
                w = load_weights(gen_opts.weights_path);
                prompt = prompt_from_opts(cmd_gen, gen_opts);
                cfg = config_from_opts(cmd_gen, gen_opts);
                man.weights_path = gen_opts.weights_path;
            }
            man.weights_hash = weights_hash(w);
            man.prompt = prompt;
            man.config = cfg;
            man.threads = threads;

            const GenerationResult res = run_any(w, prompt, cfg);

            if (!trace_out.empty()) {
                export_trace(res.trace, trace_format, trace_out);
                man.outputs["trace"] = trace_out;
            }
            if (!controller_dump_path.empty()) {
                if (!res.controller)
                    throw ConfigError("--controller-dump: baseline mode has no controller");
                dump_controller(*res.controller, controller_dump_path);
                man.outputs["controller"] = controller_dump_path;
            }
            const RunSummary sum = summarize(res.trace);
            nlohmann::json j = summary_to_json(sum);
            j["mode"] = mode_name(cfg.mode);
            j["model_hash"] = res.trace.model_hash;
            std::cout << j.dump() << "\n";

            man.duration_ms = elapsed_ms();
            const std::string mpath =
                manifest_out.empty() ? out_path(output_dir, "generate_manifest.json") : manifest_out;
            man.outputs["manifest"] = mpath;
            save_manifest(man, mpath);
            return 0;
        }

        if (*cmd_an) {
            const Trace t = parse_trace(an_trace);
            const RunSummary sum = summarize(t, an_persistence);
            const PhaseSegmentation seg = segment_phases(t.ema_values(), an_persistence);
            nlohmann::json j = summary_to_json(sum);
            j["segmentation"] = segmentation_to_json(seg);
            std::cout << j.dump() << "\n";
            if (!an_out.empty()) export_summary(sum, seg, an_format, an_out);
            return 0;
        }

        if (*cmd_cmp) {
            const Trace a = parse_trace(cmp_a);
            const Trace b = parse_trace(cmp_b);
            const CompareResult r = compare_traces(a, b, cmp_persistence);
            nlohmann::json j = {{"delta_peak_index", r.delta_peak_index},
                                {"delta_final_entropy", r.delta_final_entropy},
                                {"delta_tokens", r.delta_tokens}};
            std::cout << j.dump() << "\n";
            return 0;
        }

        if (*cmd_gc) {
            const GradCheckFixture fx = make_fixture(gc_seed);
            const std::size_t n = static_cast<std::size_t>(fx.weights.cfg.n_kv_heads) *
                                  static_cast<std::size_t>(fx.saved.n_video()) *
                                  static_cast<std::size_t>(fx.weights.cfg.d_head);
            std::vector<double> delta(n, 0.0);
            if (gc_delta_scale > 0.0) {
                Rng rng(gc_seed ^ 0x5ca1ab1eull);
                for (double& d : delta) d = gc_delta_scale * rng.next_normal();
            }
            const GradCheckReport rep = gradcheck(fx.weights, fx.saved, delta, gc_eps, gc_tol);
            const nlohmann::json j = gradcheck_report_json(rep);
            std::cout << j.dump() << "\n";
            if (!gc_out.empty()) {
                std::ofstream out(gc_out);
                if (!out) throw FormatError("cannot open '" + gc_out + "' for writing");
                out << j.dump(2) << "\n";
            }
            if (!rep.pass)
                throw NumericError("gradient check failed: max relative error " +
                                   fmt_double(rep.max_rel_error) + " exceeds " +
                                   fmt_double(rep.tolerance));
            return 0;
        }

        if (*cmd_pr) {
            std::vector<PropResult> results;
            const bool all = pr_kind == "all";
            if (all || pr_kind == "bounded_update") results.push_back(prop_bounded_update(pr_seed));
            if (all || pr_kind == "ema_lowpass") results.push_back(prop_ema_lowpass());
            if (all || pr_kind == "peak_delay")
                results.push_back(prop_peak_delay(pr_seed, std::max(pr_seeds, 1)));
            if (all || pr_kind == "post_peak_alpha")
                results.push_back(prop_post_peak_alpha(pr_seed, std::max(pr_seeds, 1)));
            if (results.empty()) throw ConfigError("unknown props kind '" + pr_kind + "'");
            nlohmann::json out = nlohmann::json::array();
            bool all_pass = true;
            for (const auto& r : results) {
                out.push_back(
                    {{"kind", r.kind}, {"pass", r.pass}, {"measurements", r.measurements}});
                all_pass = all_pass && r.pass;
            }
            std::cout << out.dump() << "\n";
            if (!pr_out.empty()) {
                std::ofstream f(pr_out);
                if (!f) throw FormatError("cannot open '" + pr_out + "' for writing");
                f << out.dump(2) << "\n";
            }
            if (!all_pass) throw NumericError("property harness reported a failure");
            return 0;
        }

        if (*cmd_sw) {
            if (threads < 1) throw ConfigError("--threads must be >= 1");
            const Weights w = load_weights(sw_opts.weights_path);
            const PromptSpec prompt = prompt_from_opts(cmd_sw, sw_opts);
            GenerationConfig base_cfg = config_from_opts(cmd_sw, sw_opts);
            if (base_cfg.mode == Mode::Baseline)
                throw ConfigError("sweep needs a controller mode; baseline is the reference");

            std::vector<double> values;
            if (!sw_values_csv.empty()) values = parse_csv_doubles(sw_values_csv);
            else if (sw_axis == "k") values = {2.0, 4.0, 8.0};
            else
                for (int i = 0; i < 10; ++i) values.push_back(5e-5 + i * 5e-5);
            if (sw_seeds < 1) throw ConfigError("--seeds must be >= 1");

            struct Cell {
                GenerationConfig cfg;
                std::size_t value_idx = 0;  // values.size() marks a baseline cell
                int seed_idx = 0;
                bool ok = false;
                double final_ema = 0.0;
                std::size_t peak_index = 0;
                long long tokens = 0;
                std::string error;
            };
            std::vector<Cell> cells;
            for (int s = 0; s < sw_seeds; ++s) {
                Cell c;
                c.cfg = base_cfg;
                c.cfg.mode = Mode::Baseline;
                c.cfg.sampler_seed = base_cfg.sampler_seed + static_cast<std::uint64_t>(s);
                c.value_idx = values.size();
                c.seed_idx = s;
                cells.push_back(c);
            }
            for (std::size_t vi = 0; vi < values.size(); ++vi)
                for (int s = 0; s < sw_seeds; ++s) {
                    Cell c;
                    c.cfg = base_cfg;
                    if (sw_axis == "k") {
                        const double v = values[vi];
                        if (v < 1.0 || v != std::floor(v))
                            throw ConfigError("axis k values must be positive integers");
                        c.cfg.step_size_k = static_cast<int>(v);
                    } else {
                        c.cfg.learning_rate = values[vi];
                    }
                    c.cfg.sampler_seed = base_cfg.sampler_seed + static_cast<std::uint64_t>(s);
                    c.value_idx = vi;
                    c.seed_idx = s;
                    cells.push_back(c);
                }

            std::atomic<std::size_t> next{0};
            auto worker = [&] {
                for (;;) {
                    const std::size_t i = next.fetch_add(1);
                    if (i >= cells.size()) return;
                    Cell& c = cells[i];
                    try {
                        const GenerationResult res = run_any(w, prompt, c.cfg);
                        const RunSummary sum = summarize(res.trace);
                        c.final_ema = sum.final_ema;
                        c.peak_index = sum.peak_index;
                        c.tokens = sum.total_tokens;
                        c.ok = true;
                    } catch (const std::exception& e) {
                        c.error = e.what();
                    }
                }
            };
            std::vector<std::thread> pool;
            const int n_threads = std::min<int>(threads, static_cast<int>(cells.size()));
            for (int i = 1; i < n_threads; ++i) pool.emplace_back(worker);
            worker();
            for (auto& t : pool) t.join();

            // Baselines indexed by seed; aggregation is order-fixed so the
            // table is byte-identical for any thread count.
            std::vector<const Cell*> baseline(static_cast<std::size_t>(sw_seeds), nullptr);
            for (const Cell& c : cells)
                if (c.value_idx == values.size()) baseline[static_cast<std::size_t>(c.seed_idx)] = &c;
            std::vector<SweepRow> rows(values.size());
            for (std::size_t vi = 0; vi < values.size(); ++vi) rows[vi].value = values[vi];
            for (const Cell& c : cells) {
                if (c.value_idx == values.size()) continue;
                SweepRow& row = rows[c.value_idx];
                const Cell* ref = baseline[static_cast<std::size_t>(c.seed_idx)];
                if (!c.ok || !ref->ok) {
                    row.n_fail += 1;
                    continue;
                }
                row.n_ok += 1;
                row.sum_final_ema += c.final_ema;
                row.sum_peak_delay += static_cast<double>(c.peak_index) -
                                      static_cast<double>(ref->peak_index);
                row.sum_tokens += static_cast<double>(c.tokens);
            }
            std::ostringstream table;
            table << "axis,value,seeds,mean_final_entropy,mean_peak_delay,mean_tokens,failures\n";
            for (const SweepRow& row : rows) {
                const double n = row.n_ok > 0 ? static_cast<double>(row.n_ok) : 1.0;
                table << sw_axis << "," << fmt_double(row.value) << "," << sw_seeds << ","
                      << fmt_double(row.sum_final_ema / n) << ","
                      << fmt_double(row.sum_peak_delay / n) << ","
                      << fmt_double(row.sum_tokens / n) << "," << row.n_fail << "\n";
            }
            std::cout << table.str();
            if (!sw_out.empty()) {
                std::ofstream f(sw_out);
                if (!f) throw FormatError("cannot open '" + sw_out + "' for writing");
                f << table.str();
            }

            RunManifest man;
            man.command = join_args(argc, argv);
            man.threads = threads;
            man.weights_path = sw_opts.weights_path;
            man.weights_hash = weights_hash(w);
            man.prompt = prompt;
            man.config = base_cfg;
            man.sweep_axis = sw_axis;
            man.sweep_values = values;
            man.sweep_seeds = sw_seeds;
            if (!sw_out.empty()) man.outputs["table"] = sw_out;
            man.duration_ms = elapsed_ms();
            const std::string mpath = sw_manifest_out.empty()
                                          ? out_path(output_dir, "sweep_manifest.json")
                                          : sw_manifest_out;
            man.outputs["manifest"] = mpath;
            save_manifest(man, mpath);
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}
