#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "vreason/controller.hpp"
#include "vreason/model.hpp"
#include "vreason/rng.hpp"
#include "vreason/verify.hpp"

using namespace vreason;

TEST_CASE("norm-preserving transform hand value") {
    const double v[2] = {1.0, 0.0};
    const double delta[2] = {0.0, 1.0};
    double out[2];
    REQUIRE(transform_value_slot(v, delta, 1.0, out, 2));
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    CHECK(out[0] == Catch::Approx(inv_sqrt2).margin(1e-15));
    CHECK(out[1] == Catch::Approx(inv_sqrt2).margin(1e-15));
    CHECK(l2_norm(out, 2) == Catch::Approx(1.0).margin(1e-15));
}

TEST_CASE("transform preserves the recorded norm") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const int d = 6;
        std::vector<double> v(d), delta(d), out(d);
        for (auto& x : v) x = rng.next_normal();
        for (auto& x : delta) x = 0.5 * rng.next_normal();
        const double r = 0.1 + 2.0 * rng.next_double();
        REQUIRE(transform_value_slot(v.data(), delta.data(), r, out.data(), d));
        CHECK(l2_norm(out.data(), d) == Catch::Approx(r).margin(1e-9));
    }
}

TEST_CASE("zero delta reproduces the value bit-exactly") {
    Rng rng(8);
    const int d = 8;
    std::vector<double> v(d), delta(d, 0.0), out(d);
    for (auto& x : v) x = rng.next_normal();
    const double r = l2_norm(v.data(), d);  // same summation order as the transform
    REQUIRE(transform_value_slot(v.data(), delta.data(), r, out.data(), d));
    for (int i = 0; i < d; ++i) CHECK(out[i] == v[i]);
}

TEST_CASE("degenerate slot is reported, output untouched") {
    const double v[2] = {1e-13, 0.0};
    const double delta[2] = {-1e-13, 0.0};
    double out[2] = {7.0, 7.0};
    CHECK_FALSE(transform_value_slot(v, delta, 1.0, out, 2));
    CHECK(out[0] == 7.0);
    CHECK(out[1] == 7.0);
}

TEST_CASE("zero-delta controller decodes identically to no controller") {
    const GradCheckFixture fx = make_fixture(13);
    auto ctrl = ValueCacheController::make(fx.weights.cfg.n_kv_heads, fx.saved.n_video(),
                                           fx.weights.cfg.d_head, 1e-3, 1.0, 4);

    PrefillResult a = prefill(fx.weights, fx.prompt);
    PrefillResult b = prefill(fx.weights, fx.prompt);
    StepResult ra = decode_step(fx.weights, 3, a.cache, nullptr);
    StepResult rb = decode_step(fx.weights, 3, b.cache, &ctrl);
    REQUIRE(ra.logits.size() == rb.logits.size());
    for (std::size_t i = 0; i < ra.logits.size(); ++i) CHECK(ra.logits[i] == rb.logits[i]);
    CHECK(rb.degenerate_slots == 0);
}

TEST_CASE("controller shape is validated against the cache") {
    const GradCheckFixture fx = make_fixture(14);
    auto wrong = ValueCacheController::make(fx.weights.cfg.n_kv_heads, fx.saved.n_video() + 1,
                                            fx.weights.cfg.d_head, 1e-3, 1.0, 4);
    PrefillResult pre = prefill(fx.weights, fx.prompt);
    CHECK_THROWS_AS(decode_step(fx.weights, 3, pre.cache, &wrong), NumericError);
}

TEST_CASE("adamw zero gradient leaves parameters untouched") {
    auto c = ValueCacheController::make(1, 1, 4, 1e-3, 1.0, 4);
    ControllerGradient g;
    g.grad.assign(4, 0.0);
    g.pre_clip_norm = 0.0;
    adamw_step(c, g, 1);
    CHECK(c.opt_step_count == 1);
    for (double d : c.delta) CHECK(d == 0.0);
    for (double m : c.m) CHECK(m == 0.0);
    for (double v : c.v) CHECK(v == 0.0);
}

TEST_CASE("adamw first step moves by about the learning rate, sign by alpha") {
    const double lr = 2e-4;
    SECTION("alpha +1 ascends the entropy gradient") {
        auto c = ValueCacheController::make(1, 1, 4, lr, 1.0, 4);
        ControllerGradient g;
        g.grad = {0.5, 0.0, 0.0, 0.0};
        g.pre_clip_norm = 0.5;
        adamw_step(c, g, 1);
        // effective grad is -g; delta -= lr * sign -> +lr on coordinate 0
        CHECK(c.delta[0] == Catch::Approx(lr).epsilon(1e-6));
        CHECK(c.delta[1] == 0.0);
    }
    SECTION("alpha -1 descends") {
        auto c = ValueCacheController::make(1, 1, 4, lr, 1.0, 4);
        ControllerGradient g;
        g.grad = {0.5, 0.0, 0.0, 0.0};
        g.pre_clip_norm = 0.5;
        adamw_step(c, g, -1);
        CHECK(c.delta[0] == Catch::Approx(-lr).epsilon(1e-6));
    }
}

TEST_CASE("gradient clipping rescales to the clip norm") {
    auto c = ValueCacheController::make(1, 1, 4, 1e-3, 1.0, 4);
    ControllerGradient g;
    g.grad = {2.0, 0.0, 0.0, 0.0};
    g.pre_clip_norm = 2.0;  // exceeds clip 1.0 -> scaled by 0.5
    adamw_step(c, g, 1);
    // m = 0.1 * (-1 * 0.5 * 2.0) = -0.1; the applied first moment reflects the
    // clipped gradient of norm 1.0
    CHECK(c.m[0] == Catch::Approx(-0.1).margin(1e-15));
    const double applied_norm = std::abs(c.m[0] / 0.1);
    CHECK(applied_norm == Catch::Approx(1.0).margin(1e-12));
}

TEST_CASE("gradient below the clip norm is not rescaled") {
    auto c = ValueCacheController::make(1, 1, 4, 1e-3, 1.0, 4);
    ControllerGradient g;
    g.grad = {0.25, 0.0, 0.0, 0.0};
    g.pre_clip_norm = 0.25;
    adamw_step(c, g, 1);
    CHECK(c.m[0] == Catch::Approx(-0.025).margin(1e-15));
}

TEST_CASE("adamw validates its inputs") {
    auto c = ValueCacheController::make(1, 1, 4, 1e-3, 1.0, 4);
    ControllerGradient g;
    g.grad.assign(4, 0.1);
    g.pre_clip_norm = 0.2;
    CHECK_THROWS_AS(adamw_step(c, g, 0), NumericError);
    g.grad.assign(3, 0.1);
    CHECK_THROWS_AS(adamw_step(c, g, 1), NumericError);
    g.grad.assign(4, std::numeric_limits<double>::quiet_NaN());
    CHECK_THROWS_AS(adamw_step(c, g, 1), NumericError);
    CHECK(c.opt_step_count == 0);
}

TEST_CASE("controller construction validates dimensions") {
    CHECK_THROWS_AS(ValueCacheController::make(0, 1, 4, 1e-3, 1.0, 4), ConfigError);
    CHECK_THROWS_AS(ValueCacheController::make(1, 1, 4, -1.0, 1.0, 4), ConfigError);
    CHECK_THROWS_AS(ValueCacheController::make(1, 1, 4, 1e-3, 0.0, 4), ConfigError);
    CHECK_THROWS_AS(ValueCacheController::make(1, 1, 4, 1e-3, 1.0, 0), ConfigError);
    const auto c = ValueCacheController::make(2, 3, 4, 1e-3, 1.0, 4);
    CHECK(c.param_count() == 24);
}

TEST_CASE("controller dump round trip is bit exact") {
    auto c = ValueCacheController::make(2, 3, 4, 1e-3, 1.0, 4);
    Rng rng(77);
    for (auto& d : c.delta) d = rng.next_normal();
    for (auto& m : c.m) m = rng.next_normal();
    for (auto& v : c.v) v = std::abs(rng.next_normal());
    c.opt_step_count = 42;
    const auto path =
        (std::filesystem::temp_directory_path() / "vreason_test_controller.bin").string();
    dump_controller(c, path);
    const auto r = load_controller_dump(path);
    CHECK(r.n_kv_heads == 2);
    CHECK(r.n_video == 3);
    CHECK(r.d_head == 4);
    CHECK(r.opt_step_count == 42);
    CHECK(r.delta == c.delta);
    CHECK(r.m == c.m);
    CHECK(r.v == c.v);
    std::filesystem::remove(path);
}

TEST_CASE("controller dump loader rejects malformed files") {
    const auto dir = std::filesystem::temp_directory_path();
    SECTION("bad magic") {
        const auto p = (dir / "vreason_ctrl_badmagic.bin").string();
        std::ofstream(p) << "not-a-controller\n";
        CHECK_THROWS_AS(load_controller_dump(p), FormatError);
        std::filesystem::remove(p);
    }
    SECTION("truncated payload") {
        auto c = ValueCacheController::make(1, 2, 4, 1e-3, 1.0, 4);
        const auto p = (dir / "vreason_ctrl_trunc.bin").string();
        dump_controller(c, p);
        const auto size = std::filesystem::file_size(p);
        std::filesystem::resize_file(p, size - 8);
        CHECK_THROWS_AS(load_controller_dump(p), FormatError);
        std::filesystem::remove(p);
    }
    SECTION("missing file") {
        CHECK_THROWS_AS(load_controller_dump((dir / "vreason_no_such_dump.bin").string()),
                        FormatError);
    }
}
