#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>

#include "vreason/sampler.hpp"

using namespace vreason;

namespace {

// logits whose softmax at temperature 1 equals the given probabilities
std::vector<double> logits_for(const std::vector<double>& probs) {
    std::vector<double> z;
    z.reserve(probs.size());
    for (double p : probs) z.push_back(std::log(p));
    return z;
}

std::set<int> support_of(const std::vector<double>& logits, const GenerationConfig& cfg,
                         int draws = 4000) {
    Rng rng(123);
    std::set<int> seen;
    for (int i = 0; i < draws; ++i) seen.insert(sample(logits, cfg, rng));
    return seen;
}

GenerationConfig open_config() {
    GenerationConfig cfg;
    cfg.temperature = 1.0;
    cfg.top_p = 1.0;
    return cfg;
}

}  // namespace

TEST_CASE("tiny top-p keeps only the argmax") {
    GenerationConfig cfg = open_config();
    cfg.top_p = 0.001;
    const auto z = logits_for({0.5, 0.3, 0.15, 0.05});
    CHECK(support_of(z, cfg) == std::set<int>{0});
}

TEST_CASE("top-p takes the minimal covering prefix") {
    const auto z = logits_for({0.5, 0.3, 0.15, 0.05});
    GenerationConfig cfg = open_config();
    SECTION("exactly covered by the first token") {
        cfg.top_p = 0.5;
        CHECK(support_of(z, cfg) == std::set<int>{0});
    }
    SECTION("needs the second token") {
        cfg.top_p = 0.55;
        CHECK(support_of(z, cfg) == std::set<int>{0, 1});
    }
    SECTION("one covers everything") {
        cfg.top_p = 1.0;
        CHECK(support_of(z, cfg) == std::set<int>{0, 1, 2, 3});
    }
}

TEST_CASE("min-p filters relative to the top probability") {
    const auto z = logits_for({0.5, 0.3, 0.15, 0.05});
    GenerationConfig cfg = open_config();
    SECTION("threshold 0.1 keeps everything") {
        cfg.min_p = 0.1;  // cutoff 0.05; 0.05 >= 0.05 stays
        CHECK(support_of(z, cfg) == std::set<int>{0, 1, 2, 3});
    }
    SECTION("threshold 0.4 keeps the top two") {
        cfg.min_p = 0.4;  // cutoff 0.2
        CHECK(support_of(z, cfg) == std::set<int>{0, 1});
    }
    SECTION("threshold 1.0 keeps only the argmax") {
        cfg.min_p = 1.0;
        CHECK(support_of(z, cfg) == std::set<int>{0});
    }
}

TEST_CASE("min-p applies after top-p") {
    const auto z = logits_for({0.5, 0.3, 0.15, 0.05});
    GenerationConfig cfg = open_config();
    cfg.top_p = 0.55;  // {0, 1}
    cfg.min_p = 0.1;   // would keep everything on its own
    CHECK(support_of(z, cfg) == std::set<int>{0, 1});
}

TEST_CASE("the argmax always survives truncation") {
    const auto z = logits_for({0.97, 0.01, 0.01, 0.01});
    GenerationConfig cfg = open_config();
    cfg.top_p = 0.001;
    cfg.min_p = 1.0;
    Rng rng(5);
    for (int i = 0; i < 50; ++i) CHECK(sample(z, cfg, rng) == 0);
}

TEST_CASE("sampled frequencies match the renormalized distribution") {
    const auto z = logits_for({0.5, 0.3, 0.15, 0.05});
    GenerationConfig cfg = open_config();
    cfg.top_p = 0.55;  // support {0, 1}, renormalized to 0.625 / 0.375
    Rng rng(99);
    std::map<int, int> counts;
    const int n = 40000;
    for (int i = 0; i < n; ++i) counts[sample(z, cfg, rng)] += 1;
    CHECK(static_cast<double>(counts[0]) / n == Catch::Approx(0.625).margin(0.01));
    CHECK(static_cast<double>(counts[1]) / n == Catch::Approx(0.375).margin(0.01));
}

TEST_CASE("temperature sharpens the distribution") {
    const std::vector<double> z = {2.0, 1.0, 0.0};
    GenerationConfig cfg = open_config();
    cfg.temperature = 0.01;
    Rng rng(7);
    for (int i = 0; i < 50; ++i) CHECK(sample(z, cfg, rng) == 0);
}

TEST_CASE("equal draws with equal seeds") {
    const auto z = logits_for({0.4, 0.3, 0.2, 0.1});
    GenerationConfig cfg = open_config();
    Rng a(42), b(42);
    for (int i = 0; i < 200; ++i) CHECK(sample(z, cfg, a) == sample(z, cfg, b));
}

TEST_CASE("probability ties order by token id") {
    // two tokens tie for the argmax; the lower id fills the tiny nucleus
    const auto z = logits_for({0.25, 0.35, 0.35, 0.05});
    GenerationConfig cfg = open_config();
    cfg.top_p = 0.001;
    CHECK(support_of(z, cfg, 500) == std::set<int>{1});
}

TEST_CASE("sampler rejects non-finite logits") {
    GenerationConfig cfg = open_config();
    Rng rng(1);
    CHECK_THROWS_AS(sample({1.0, std::numeric_limits<double>::quiet_NaN()}, cfg, rng),
                    NumericError);
}
