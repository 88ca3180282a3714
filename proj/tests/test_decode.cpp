#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "vreason/decode.hpp"
#include "vreason/manifest.hpp"
#include "vreason/verify.hpp"

using namespace vreason;

namespace {

GenerationConfig base_config(std::uint64_t seed = 3, int max_len = 24) {
    GenerationConfig cfg;
    cfg.mode = Mode::Baseline;
    cfg.max_length = max_len;
    cfg.sampler_seed = seed;
    cfg.eos_token = -1;
    return cfg;
}

bool same_steps(const Trace& a, const Trace& b) {
    if (a.steps.size() != b.steps.size()) return false;
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        const auto& x = a.steps[i];
        const auto& y = b.steps[i];
        if (x.token != y.token || x.h != y.h || x.ema != y.ema) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("optimizer fires on every k-th generated token") {
    const GradCheckFixture fx = make_fixture(21);
    for (const int k : {2, 3, 4, 8}) {
        GenerationConfig cfg = base_config(2, 20);
        cfg.mode = Mode::VReason;
        cfg.step_size_k = k;
        const GenerationResult res = generate(fx.weights, fx.prompt, cfg);
        int fired = 0;
        for (const auto& st : res.trace.steps) {
            if (st.opt_step) {
                ++fired;
                CHECK(st.index % k == 0);
            }
            CHECK_FALSE(st.opt_skipped);
        }
        CHECK(fired == 20 / k);
        CHECK(res.trace.steps.back().opt_steps_cum == 20 / k);
        REQUIRE(res.controller.has_value());
        CHECK(res.controller->opt_step_count == 20 / k);
    }
}

TEST_CASE("zero learning rate reduces to the baseline bit-for-bit") {
    const GradCheckFixture fx = make_fixture(21);
    const GenerationResult rb = generate(fx.weights, fx.prompt, base_config(4, 40));
    GenerationConfig cfg = base_config(4, 40);
    cfg.mode = Mode::VReason;
    cfg.learning_rate = 0.0;
    cfg.step_size_k = 2;
    const GenerationResult rz = generate(fx.weights, fx.prompt, cfg);
    CHECK(same_steps(rb.trace, rz.trace));
    // the optimizer did run; it just had nothing to move
    CHECK(rz.trace.steps.back().opt_steps_cum == 20);
    for (double d : rz.controller->delta) CHECK(d == 0.0);
}

TEST_CASE("forced alpha equals the fixed-sign modes bit-for-bit") {
    const GradCheckFixture fx = make_fixture(22);
    GenerationConfig mn = base_config(5, 30);
    mn.mode = Mode::MinEntropy;
    mn.learning_rate = 1e-3;
    mn.step_size_k = 2;
    GenerationConfig fr = mn;
    fr.mode = Mode::VReason;
    fr.force_alpha = -1;
    const GenerationResult a = generate(fx.weights, fx.prompt, mn);
    const GenerationResult b = generate(fx.weights, fx.prompt, fr);
    REQUIRE(a.trace.steps.size() == b.trace.steps.size());
    for (std::size_t i = 0; i < a.trace.steps.size(); ++i) {
        const auto& x = a.trace.steps[i];
        const auto& y = b.trace.steps[i];
        CHECK(x.token == y.token);
        CHECK(x.h == y.h);
        CHECK(x.alpha == y.alpha);
        CHECK(x.opt_step == y.opt_step);
        if (!std::isnan(x.loss) || !std::isnan(y.loss)) CHECK(x.loss == y.loss);
    }

    GenerationConfig mx = mn;
    mx.mode = Mode::MaxEntropy;
    GenerationConfig fp = fr;
    fp.force_alpha = 1;
    CHECK(same_steps(generate(fx.weights, fx.prompt, mx).trace,
                     generate(fx.weights, fx.prompt, fp).trace));
}

TEST_CASE("lite with keep ratio one matches the full controller mode") {
    const GradCheckFixture fx = make_fixture(23);
    GenerationConfig vr = base_config(6, 30);
    vr.mode = Mode::VReason;
    vr.learning_rate = 5e-4;
    GenerationConfig lt = vr;
    lt.mode = Mode::VReasonLite;
    lt.keep_ratio = 1.0;
    const GenerationResult a = generate(fx.weights, fx.prompt, vr);
    const GenerationResult b = generate_lite(fx.weights, fx.prompt, lt);
    CHECK(same_steps(a.trace, b.trace));
    CHECK(a.trace.steps.back().opt_steps_cum == b.trace.steps.back().opt_steps_cum);
    REQUIRE(b.trace.prune.has_value());
    CHECK(b.trace.prune->evicted.empty());
    CHECK_FALSE(a.trace.prune.has_value());
}

TEST_CASE("lite prunes once and sizes the controller to the kept slots") {
    const GradCheckFixture fx = make_fixture(24);
    GenerationConfig lt = base_config(7, 20);
    lt.mode = Mode::VReasonLite;
    lt.keep_ratio = 0.5;
    lt.step_size_k = 4;
    const GenerationResult r = generate_lite(fx.weights, fx.prompt, lt);
    REQUIRE(r.trace.prune.has_value());
    const auto& rep = *r.trace.prune;
    CHECK(rep.kept.size() == 3);  // ceil(0.5 * 6)
    CHECK(rep.evicted.size() == 3);
    REQUIRE(r.controller.has_value());
    CHECK(r.controller->n_video == 3);
    CHECK(r.controller->param_count() ==
          static_cast<std::size_t>(fx.weights.cfg.n_kv_heads) * 3 *
              static_cast<std::size_t>(fx.weights.cfg.d_head));
}

TEST_CASE("lite skips the first trigger when its capture predates the prune") {
    const GradCheckFixture fx = make_fixture(25);
    GenerationConfig lt = base_config(8, 10);
    lt.mode = Mode::VReasonLite;
    lt.keep_ratio = 0.5;
    lt.step_size_k = 2;
    const GenerationResult r = generate_lite(fx.weights, fx.prompt, lt);
    CHECK(r.trace.steps[1].opt_skipped);       // trigger at token 2 uses the prefill capture
    CHECK_FALSE(r.trace.steps[1].opt_step);
    CHECK(r.trace.steps[3].opt_step);          // by token 4 the capture is post-prune
    int skipped = 0;
    for (const auto& st : r.trace.steps)
        if (st.opt_skipped) ++skipped;
    CHECK(skipped == 1);
    CHECK(r.trace.steps.back().opt_steps_cum == 4);  // 5 triggers, 1 skipped
}

TEST_CASE("entropy-steering modes move the final smoothed entropy as directed") {
    // Sampling at the default settings is effectively greedy, so each model
    // gives one deterministic comparison; vary the model instead of the seed.
    int wins_min = 0, wins_max = 0;
    double mean_min = 0.0, mean_max = 0.0;
    const int n_models = 20;
    for (int ms = 0; ms < n_models; ++ms) {
        const GradCheckFixture fx = make_fixture(21 + static_cast<std::uint64_t>(ms));
        GenerationConfig b = base_config(5, 60);
        GenerationConfig mn = b;
        mn.mode = Mode::MinEntropy;
        mn.learning_rate = 5e-3;
        mn.step_size_k = 2;
        GenerationConfig mx = mn;
        mx.mode = Mode::MaxEntropy;
        const double hb = generate(fx.weights, fx.prompt, b).trace.steps.back().ema;
        const double hn = generate(fx.weights, fx.prompt, mn).trace.steps.back().ema;
        const double hx = generate(fx.weights, fx.prompt, mx).trace.steps.back().ema;
        if (hn < hb) ++wins_min;
        if (hx > hb) ++wins_max;
        mean_min += (hn - hb) / n_models;
        mean_max += (hx - hb) / n_models;
    }
    INFO("min wins " << wins_min << "/" << n_models << " mean " << mean_min
                     << "; max wins " << wins_max << "/" << n_models << " mean " << mean_max);
    // Greedy token switches make single models noisy; the tendency is what the
    // mechanism promises. Measured: 16/20 down, 17/20 up, mean gap ~7e-4.
    CHECK(wins_min >= 13);
    CHECK(wins_max >= 13);
    CHECK(mean_max > mean_min);
}

TEST_CASE("eos stops generation") {
    const GradCheckFixture fx = make_fixture(26);
    GenerationConfig open = base_config(9, 30);
    const GenerationResult full = generate(fx.weights, fx.prompt, open);
    REQUIRE(full.trace.steps.size() == 30);

    SECTION("eos on the first sampled token") {
        GenerationConfig cfg = open;
        cfg.eos_token = full.trace.steps[0].token;
        CHECK(generate(fx.weights, fx.prompt, cfg).trace.steps.size() == 1);
    }
    SECTION("eos mid-sequence") {
        // find a token whose first appearance is past the first step
        int target = -1;
        std::size_t first_at = 0;
        for (std::size_t i = 1; i < full.trace.steps.size(); ++i) {
            const int t = full.trace.steps[i].token;
            bool earlier = false;
            for (std::size_t j = 0; j < i; ++j)
                if (full.trace.steps[j].token == t) earlier = true;
            if (!earlier) {
                target = t;
                first_at = i;
                break;
            }
        }
        REQUIRE(target >= 0);
        GenerationConfig cfg = open;
        cfg.eos_token = target;
        CHECK(generate(fx.weights, fx.prompt, cfg).trace.steps.size() == first_at + 1);
    }
}

TEST_CASE("generation is deterministic run to run") {
    const GradCheckFixture fx = make_fixture(27);
    GenerationConfig cfg = base_config(11, 30);
    cfg.mode = Mode::VReason;
    const GenerationResult a = generate(fx.weights, fx.prompt, cfg);
    const GenerationResult b = generate(fx.weights, fx.prompt, cfg);
    CHECK(same_steps(a.trace, b.trace));
    CHECK(a.trace.model_hash == b.trace.model_hash);
    CHECK(a.trace.model_hash == weights_hash(fx.weights));
    CHECK(a.controller->delta == b.controller->delta);
}

TEST_CASE("different sampler seeds diverge") {
    const GradCheckFixture fx = make_fixture(27);
    GenerationConfig a = base_config(1, 30);
    a.temperature = 1.5;  // keep the distribution broad enough to actually vary
    a.top_p = 1.0;
    GenerationConfig b = a;
    b.sampler_seed = 2;
    CHECK_FALSE(same_steps(generate(fx.weights, fx.prompt, a).trace,
                           generate(fx.weights, fx.prompt, b).trace));
}

TEST_CASE("mode and capacity guards") {
    const GradCheckFixture fx = make_fixture(28);
    GenerationConfig lite = base_config();
    lite.mode = Mode::VReasonLite;
    CHECK_THROWS_AS(generate(fx.weights, fx.prompt, lite), ConfigError);
    GenerationConfig vr = base_config();
    vr.mode = Mode::VReason;
    CHECK_THROWS_AS(generate_lite(fx.weights, fx.prompt, vr), ConfigError);
    GenerationConfig big = base_config(1, 200);  // 14 + 200 - 1 > 128
    CHECK_THROWS_AS(generate(fx.weights, fx.prompt, big), ConfigError);
}

TEST_CASE("baseline has no controller; controller modes return their state") {
    const GradCheckFixture fx = make_fixture(29);
    CHECK_FALSE(generate(fx.weights, fx.prompt, base_config(1, 10)).controller.has_value());
    GenerationConfig vr = base_config(1, 10);
    vr.mode = Mode::VReason;
    const GenerationResult r = generate(fx.weights, fx.prompt, vr);
    REQUIRE(r.controller.has_value());
    CHECK(r.controller->n_video == 6);
}

TEST_CASE("trace export and parse round trip") {
    const GradCheckFixture fx = make_fixture(30);
    GenerationConfig cfg = base_config(13, 16);
    cfg.mode = Mode::VReason;
    cfg.step_size_k = 4;
    const GenerationResult res = generate(fx.weights, fx.prompt, cfg);
    const auto dir = std::filesystem::temp_directory_path();
    for (const std::string format : {"jsonl", "csv"}) {
        const std::string path = (dir / ("vreason_trace_rt." + format)).string();
        export_trace(res.trace, format, path);
        const Trace t = parse_trace(path);
        CHECK(t.version == res.trace.version);
        CHECK(t.model_hash == res.trace.model_hash);
        CHECK(t.vocab_size == res.trace.vocab_size);
        CHECK(t.ema_init == res.trace.ema_init);
        CHECK(t.config.mode == res.trace.config.mode);
        CHECK(t.config.step_size_k == res.trace.config.step_size_k);
        CHECK(t.config.learning_rate == res.trace.config.learning_rate);
        CHECK(std::isnan(t.config.min_p));
        REQUIRE(t.steps.size() == res.trace.steps.size());
        for (std::size_t i = 0; i < t.steps.size(); ++i) {
            const auto& x = res.trace.steps[i];
            const auto& y = t.steps[i];
            CHECK(y.index == x.index);
            CHECK(y.token == x.token);
            CHECK(y.h == x.h);  // exact: shortest round-trip formatting
            CHECK(y.ema == x.ema);
            CHECK(y.alpha == x.alpha);
            CHECK(y.alpha_rule == x.alpha_rule);
            CHECK(y.opt_step == x.opt_step);
            CHECK(y.opt_skipped == x.opt_skipped);
            if (std::isnan(x.loss)) CHECK(std::isnan(y.loss));
            else CHECK(y.loss == x.loss);
            if (std::isnan(x.grad_preclip_norm)) CHECK(std::isnan(y.grad_preclip_norm));
            else CHECK(y.grad_preclip_norm == x.grad_preclip_norm);
            CHECK(y.opt_steps_cum == x.opt_steps_cum);
            CHECK(y.degenerate_slots == x.degenerate_slots);
        }
        std::filesystem::remove(path);
    }
    CHECK_THROWS_AS(export_trace(res.trace, "xml", (dir / "t.xml").string()), ConfigError);
    CHECK_THROWS_AS(parse_trace((dir / "vreason_missing_trace.jsonl").string()), FormatError);
}

TEST_CASE("lite trace round-trips its prune report") {
    const GradCheckFixture fx = make_fixture(31);
    GenerationConfig lt = base_config(14, 12);
    lt.mode = Mode::VReasonLite;
    lt.keep_ratio = 0.5;
    const GenerationResult res = generate_lite(fx.weights, fx.prompt, lt);
    const auto path =
        (std::filesystem::temp_directory_path() / "vreason_lite_trace.jsonl").string();
    export_trace(res.trace, "jsonl", path);
    const Trace t = parse_trace(path);
    REQUIRE(t.prune.has_value());
    CHECK(t.prune->kept == res.trace.prune->kept);
    CHECK(t.prune->evicted == res.trace.prune->evicted);
    CHECK(t.prune->scores == res.trace.prune->scores);
    std::filesystem::remove(path);
}

TEST_CASE("manifest round trip and hash guard") {
    const GradCheckFixture fx = make_fixture(32);
    RunManifest m;
    m.command = "generate --demo";
    m.weights_path = "w.bin";
    m.weights_hash = weights_hash(fx.weights);
    m.prompt = fx.prompt;
    m.config = base_config(15, 20);
    m.config.mode = Mode::VReason;
    m.outputs["trace"] = "t.jsonl";
    m.sweep_axis = "k";
    m.sweep_values = {2.0, 4.0};
    m.sweep_seeds = 3;
    const auto path = (std::filesystem::temp_directory_path() / "vreason_manifest.json").string();
    save_manifest(m, path);
    const RunManifest r = load_manifest(path);
    CHECK(r.command == m.command);
    CHECK(r.weights_hash == m.weights_hash);
    CHECK(r.prompt.tokens == m.prompt.tokens);
    CHECK(r.prompt.video_begin == m.prompt.video_begin);
    CHECK(r.config.mode == Mode::VReason);
    CHECK(r.config.sampler_seed == 15);
    CHECK(r.sweep_axis == "k");
    CHECK(r.sweep_values == m.sweep_values);
    CHECK(r.outputs.at("trace") == "t.jsonl");

    // rerunning from the manifest reproduces the trace exactly
    const GenerationResult a = generate(fx.weights, m.prompt, m.config);
    const GenerationResult b = generate(fx.weights, r.prompt, r.config);
    CHECK(same_steps(a.trace, b.trace));

    CHECK_NOTHROW(check_manifest_weights(r, fx.weights));
    const Weights other = init_random(toy_config(99));
    CHECK_THROWS_AS(check_manifest_weights(r, other), FormatError);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(load_manifest("/nonexistent/vreason_manifest.json"), FormatError);
}
