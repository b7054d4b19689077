#include "cimd/errors.hpp"
#include "cimd/metrics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <set>

using namespace cimd;

using namespace oracle;

namespace {

Mask from_string(int h, int w, const std::string& bits) {
    Mask m(h, w);
    for (std::size_t i = 0; i < bits.size(); ++i) m.px[i] = bits[i] == '1';
    return m;
}

MaskSet set_of(std::vector<Mask> ms, MaskRole role = MaskRole::Prediction) { return MaskSet{std::move(ms), role}; }

Mask random_mask(std::mt19937_64& rng, int h, int w) {
    Mask m(h, w);
    std::uniform_int_distribution<int> kind(0, 5);
    const int k = kind(rng);
    if (k == 0) return m;  // empty
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double density = k == 1 ? 0.02 : u(rng);
    for (auto& v : m.px) v = u(rng) < density;
    return m;
}

MaskSet random_set(std::mt19937_64& rng, int lo, int hi, MaskRole role) {
    std::uniform_int_distribution<int> count(lo, hi);
    MaskSet s;
    s.role = role;
    const int n = count(rng);
    for (int i = 0; i < n; ++i) s.masks.push_back(random_mask(rng, 16, 16));
    return s;
}

}  // namespace

TEST_CASE("IoU and Dice on small examples") {
    const Mask a = from_string(2, 2, "1100");
    const Mask b = from_string(2, 2, "0110");
    const Mask e(2, 2);
    CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(dice(a, b) == 0.5);
    CHECK(iou(a, a) == 1.0);
    CHECK(iou(e, e) == 1.0);
    CHECK(dice(e, e) == 1.0);
    CHECK(iou(a, e) == 0.0);
    CHECK(dice(a, e) == 0.0);
    CHECK_THROWS_AS(iou(a, Mask(3, 2)), std::invalid_argument);
}

TEST_CASE("combined sensitivity, max Dice matching and dispersion by hand") {
    const auto p = set_of({from_string(1, 4, "1100"), from_string(1, 4, "0000")});
    const auto y = set_of({from_string(1, 4, "1000"), from_string(1, 4, "0011")}, MaskRole::GroundTruth);
    CHECK(combined_sensitivity(p, y) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    // gt0 best: dice(1100, 1000) = 2/3; gt1 best: 0 (no overlap, neither empty)
    CHECK(max_dice_match(p, y) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    // pred pair distance 1, gt pair distance 1 -> perfect agreement
    CHECK(diversity_agreement(p, y) == 1.0);
    // empty ground-truth union
    const auto ye = set_of({Mask(1, 4), Mask(1, 4)}, MaskRole::GroundTruth);
    CHECK(combined_sensitivity(p, ye) == 1.0);
    CHECK(pair_dispersion(from_string(1, 4, "1100"), from_string(1, 4, "0110"), Dispersion::PixelVariance) == 0.125);
}

TEST_CASE("composite score spot values") {
    CHECK(ci_score(1.0, 1.0, 0.5) == 0.6);
    CHECK(ci_score(0.5, 0.5, 0.5) == 0.25);
    CHECK(ci_score(1.0, 1.0, 1.0) == 1.0);
    CHECK(ci_score(0.0, 0.0, 0.0) == 0.0);
    CHECK(ci_harmonic_mean(0.5, 0.5, 0.5) == 0.5);
    CHECK(ci_harmonic_mean(1.0, 1.0, 0.5) == doctest::Approx(0.75));
}

TEST_CASE("identical prediction and ground-truth sets are a fixed point") {
    std::mt19937_64 rng(5);
    for (int k = 0; k < 50; ++k) {
        MaskSet y = random_set(rng, 2, 8, MaskRole::GroundTruth);
        MaskSet p = y;
        p.role = MaskRole::Prediction;
        const CIReport r = evaluate_pair(p, y);
        CHECK(r.ged == 0.0);
        CHECK(r.s_c == 1.0);
        CHECK(r.d_max == 1.0);
        CHECK(*r.d_a == 1.0);
        CHECK(*r.ci == 1.0);
    }
}

TEST_CASE("metrics agree with set-based reference implementations") {
    const auto start = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    for (int k = 0; k < 200; ++k) {
        const MaskSet p = random_set(rng, 1, 8, MaskRole::Prediction);
        const MaskSet y = random_set(rng, 1, 8, MaskRole::GroundTruth);
        const auto ps = as_sets(p), ys = as_sets(y);
        const CIReport r = evaluate_pair(p, y);
        CHECK(std::abs(r.ged - ref_ged(ps, ys)) <= 1e-9);
        CHECK(std::abs(r.s_c - ref_sc(ps, ys)) <= 1e-9);
        CHECK(std::abs(r.d_max - ref_dmax(ps, ys)) <= 1e-9);
        if (p.size() >= 2 && y.size() >= 2) {
            REQUIRE(r.d_a.has_value());
            const double da = ref_da(ps, ys);
            CHECK(std::abs(*r.d_a - da) <= 1e-9);
            const double a = ref_sc(ps, ys), b = ref_dmax(ps, ys);
            const double ci = (a + b + da) == 0.0 ? 0.0 : 3.0 * a * b * da / (a + b + da);
            CHECK(std::abs(*r.ci - ci) <= 1e-9);
        } else {
            CHECK_FALSE(r.d_a.has_value());
            CHECK_FALSE(r.ci.has_value());
        }
    }
    CHECK(std::chrono::steady_clock::now() - start < std::chrono::minutes(1));
}

TEST_CASE("metric invariants") {
    std::mt19937_64 rng(77);
    for (int k = 0; k < 100; ++k) {
        const MaskSet a = random_set(rng, 2, 6, MaskRole::Prediction);
        const MaskSet b = random_set(rng, 2, 6, MaskRole::GroundTruth);
        CHECK(ged(a, a) == doctest::Approx(0.0).scale(1e-12));
        CHECK(ged(a, b) == doctest::Approx(ged(b, a)).epsilon(1e-12));
        CHECK(ged(a, b) >= -1e-12);
        const CIReport r = evaluate_pair(a, b);
        for (double v : {r.s_c, r.d_max, *r.d_a, *r.ci}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(dice(a.masks[i], b.masks[0]) >= iou(a.masks[i], b.masks[0]));
            CHECK(iou(a.masks[i], b.masks[0]) == iou(b.masks[0], a.masks[i]));
        }
    }
    // The composite is nondecreasing in each argument on a grid.
    for (double x = 0.0; x <= 1.0; x += 0.125)
        for (double y = 0.0; y <= 1.0; y += 0.125)
            for (double z = 0.0; z < 1.0; z += 0.125) {
                CHECK(ci_score(x, y, z + 0.125) >= ci_score(x, y, z));
                CHECK(ci_score(z + 0.125, x, y) >= ci_score(z, x, y));
                CHECK(ci_score(x, z + 0.125, y) >= ci_score(x, z, y));
            }
}

TEST_CASE("GED with distinct pairs only") {
    const auto p = set_of({from_string(1, 4, "1100"), from_string(1, 4, "0011")});
    const auto y = set_of({from_string(1, 4, "1100"), from_string(1, 4, "0011")}, MaskRole::GroundTruth);
    // self pairs: 2*0.5 - 0.5 - 0.5 = 0; distinct: 2*0.5 - 1 - 1 = -1
    CHECK(ged(p, y) == 0.0);
    CHECK(ged(p, y, GedOptions{false}) == -1.0);
    const auto single = set_of({from_string(1, 4, "1100")});
    CHECK_THROWS_AS(ged(single, y, GedOptions{false}), UndefinedDispersionError);
}

TEST_CASE("singleton sets leave diversity agreement undefined") {
    const auto one = set_of({from_string(1, 4, "1100")});
    const auto y = set_of({from_string(1, 4, "1100"), Mask(1, 4)}, MaskRole::GroundTruth);
    CHECK_THROWS_AS(diversity_agreement(one, y), UndefinedDispersionError);
    const CIReport r = evaluate_pair(one, y);
    CHECK_FALSE(r.d_a.has_value());
    CHECK_FALSE(r.ci.has_value());
    CHECK(std::isfinite(r.ged));
}

TEST_CASE("invalid inputs are rejected") {
    Mask bad(1, 2);
    bad.px[0] = 2;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS_AS(evaluate_pair(set_of({bad}), set_of({Mask(1, 2)})), std::invalid_argument);
    CHECK_THROWS_AS(evaluate_pair(set_of({}), set_of({Mask(1, 2)})), std::invalid_argument);
    CHECK_THROWS_AS(evaluate_pair(set_of({Mask(1, 2)}), set_of({Mask(2, 2)})), std::invalid_argument);
}

TEST_CASE("test-set aggregation averages per-image reports") {
    std::mt19937_64 rng(9);
    std::vector<MaskSet> preds, gts;
    std::vector<std::string> ids;
    for (int i = 0; i < 6; ++i) {
        preds.push_back(random_set(rng, i == 2 ? 1 : 2, i == 2 ? 1 : 5, MaskRole::Prediction));
        gts.push_back(random_set(rng, 2, 5, MaskRole::GroundTruth));
        ids.push_back("img" + std::to_string(i));
    }
    const TestsetReport r = evaluate_testset(preds, gts, ids);
    REQUIRE(r.images.size() == 6);
    CHECK(r.undefined_d_a == 1);
    double g = 0.0, ci = 0.0;
    for (const auto& im : r.images) {
        g += im.report.ged;
        if (im.report.ci) ci += *im.report.ci;
    }
    CHECK(r.mean.ged == doctest::Approx(g / 6.0).epsilon(1e-14));
    CHECK(*r.mean.ci == doctest::Approx(ci / 5.0).epsilon(1e-14));
    CHECK(r.images[3].image_id == "img3");
    CHECK_THROWS_AS(evaluate_testset(preds, gts, {"a"}), std::invalid_argument);
    CHECK_THROWS_AS(evaluate_testset({}, {}, {}), std::invalid_argument);
}

TEST_CASE("thresholding a plane") {
    const std::vector<double> plane{-0.5, 0.0, 0.1, 2.0};
    const Mask m = Mask::threshold(plane, 2, 2, 0.0);
    CHECK(m.px == std::vector<std::uint8_t>{0, 0, 1, 1});
    const Tensor t = m.to_signed();
    CHECK(t.data == std::vector<double>{-1.0, -1.0, 1.0, 1.0});
}
