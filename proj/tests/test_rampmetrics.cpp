#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "skyramp/rampmetrics.hpp"
#include "skyramp/rng.hpp"

using namespace skyramp;
using namespace skyramp::metrics;

namespace {

// Independent O(n^2) reference: runs are re-derived with full prefix rescans
// (direction by forward scan from the origin, extremum by argext rescan per
// step) instead of the streaming automaton.
std::vector<RampEvent> reference_segment(const std::vector<double>& p, double capacity,
                                         const RampConfig& cfg) {
    const double eps = cfg.eps_tol * capacity;
    const double rth = cfg.r_th * capacity;
    const std::size_t n = p.size();
    std::vector<RampEvent> events;
    if (n < 2) return events;

    auto argext = [&](std::size_t lo, std::size_t hi, int dir) {
        std::size_t best = lo;
        for (std::size_t u = lo; u <= hi; ++u)
            if (dir > 0 ? p[u] > p[best] : p[u] < p[best]) best = u;
        return best;
    };
    auto emit = [&](std::size_t o, std::size_t e, int dir) {
        double m = std::abs(p[e] - p[o]);
        if (m >= rth)
            events.push_back({o, e, dir > 0 ? RampDirection::Up : RampDirection::Down, m});
    };

    std::size_t origin = 0;
    int dir = 0;
    while (origin + 1 < n) {
        std::size_t scan_from = origin + 1;
        if (dir == 0) {
            std::size_t t = origin + 1;
            for (; t < n; ++t) {
                if (p[t] - p[origin] > eps) {
                    dir = 1;
                    break;
                }
                if (p[origin] - p[t] > eps) {
                    dir = -1;
                    break;
                }
            }
            if (dir == 0) return events;
            scan_from = t;
        }
        bool reversed = false;
        for (std::size_t e = scan_from; e < n; ++e) {
            std::size_t ext = argext(origin + 1, e, dir);
            double counter = dir > 0 ? p[ext] - p[e] : p[e] - p[ext];
            if (counter > eps) {
                emit(origin, ext, dir);
                origin = ext;
                dir = -dir;
                reversed = true;
                break;
            }
        }
        if (!reversed) {
            emit(origin, argext(origin + 1, n - 1, dir), dir);
            return events;
        }
    }
    return events;
}

bool same_events(const std::vector<RampEvent>& a, const std::vector<RampEvent>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].start != b[i].start || a[i].end != b[i].end ||
            a[i].direction != b[i].direction ||
            std::abs(a[i].magnitude - b[i].magnitude) > 1e-12)
            return false;
    return true;
}

std::vector<double> random_walk(Rng& rng, std::size_t n, double capacity) {
    std::vector<double> p(n);
    p[0] = rng.uniform(0.2, 0.8) * capacity;
    for (std::size_t i = 1; i < n; ++i) {
        p[i] = p[i - 1] + rng.normal() * 0.08 * capacity;
        p[i] = std::clamp(p[i], 0.0, capacity);
    }
    return p;
}

} // namespace

TEST_CASE("segment_ramps worked example") {
    std::vector<double> series{50, 60, 72, 85, 84, 83, 60, 40};
    auto ev = segment_ramps(series, 100.0, RampConfig{0.05, 0.20});
    REQUIRE(ev.size() == 2);
    CHECK(ev[0].start == 0);
    CHECK(ev[0].end == 3);
    CHECK(ev[0].direction == RampDirection::Up);
    CHECK(ev[0].magnitude == doctest::Approx(35.0));
    CHECK(ev[1].start == 3);
    CHECK(ev[1].end == 7);
    CHECK(ev[1].direction == RampDirection::Down);
    CHECK(ev[1].magnitude == doctest::Approx(45.0));
}

TEST_CASE("segment_ramps edge cases") {
    RampConfig cfg{0.05, 0.20};
    CHECK(segment_ramps(std::vector<double>(16, 42.0), 100.0, cfg).empty());
    // monotone rise below the magnitude threshold
    std::vector<double> small{50, 53, 56, 59, 62, 65};
    CHECK(segment_ramps(small, 100.0, cfg).empty());
    CHECK(segment_ramps({1.0}, 100.0, cfg).empty());
}

TEST_CASE("segment_ramps equals O(n^2) reference on 1000 random walks") {
    Rng rng(2024);
    RampConfig cfg{0.05, 0.20};
    for (int w = 0; w < 1000; ++w) {
        auto p = random_walk(rng, 64, 100.0);
        CHECK(same_events(segment_ramps(p, 100.0, cfg), reference_segment(p, 100.0, cfg)));
    }
}

TEST_CASE("segment_ramps event invariants on random walks") {
    Rng rng(99);
    RampConfig cfg{0.05, 0.20};
    for (int w = 0; w < 200; ++w) {
        auto p = random_walk(rng, 64, 100.0);
        auto ev = segment_ramps(p, 100.0, cfg);
        for (std::size_t i = 0; i < ev.size(); ++i) {
            CHECK(ev[i].start < ev[i].end);
            CHECK(ev[i].magnitude >= 20.0);
            double delta = p[ev[i].end] - p[ev[i].start];
            CHECK((ev[i].direction == RampDirection::Up ? delta > 0 : delta < 0));
            if (i > 0) CHECK(ev[i].start >= ev[i - 1].end); // overlap at most a shared endpoint
            // runs alternate orientation; events inherit it whenever they
            // share an endpoint
            if (i > 0 && ev[i].start == ev[i - 1].end)
                CHECK(ev[i].direction != ev[i - 1].direction);
        }
    }
}

TEST_CASE("segment_ramps is offset-invariant and negation-equivariant") {
    Rng rng(7);
    RampConfig cfg{0.05, 0.20};
    for (int w = 0; w < 50; ++w) {
        auto p = random_walk(rng, 48, 100.0);
        auto base = segment_ramps(p, 100.0, cfg);

        auto shifted = p;
        for (auto& v : shifted) v += 13.5;
        CHECK(same_events(segment_ramps(shifted, 100.0, cfg), base));

        auto negated = p;
        for (auto& v : negated) v = -v;
        auto flipped = segment_ramps(negated, 100.0, cfg);
        REQUIRE(flipped.size() == base.size());
        for (std::size_t i = 0; i < base.size(); ++i) {
            CHECK(flipped[i].start == base[i].start);
            CHECK(flipped[i].end == base[i].end);
            CHECK(flipped[i].direction != base[i].direction);
        }
    }
}

TEST_CASE("match_events") {
    RampEvent up1{0, 3, RampDirection::Up, 35};
    RampEvent down1{3, 7, RampDirection::Down, 45};

    auto mc = match_events({up1, down1}, {up1, down1});
    CHECK(mc.hits == 2);
    CHECK(mc.misses == 0);
    CHECK(mc.false_alarms == 0);

    // disjoint-in-time lists
    RampEvent a{0, 2, RampDirection::Up, 30}, b{4, 6, RampDirection::Up, 30};
    RampEvent c{8, 10, RampDirection::Up, 30}, d{12, 14, RampDirection::Up, 30},
        e{16, 18, RampDirection::Up, 30};
    mc = match_events({a, b}, {c, d, e});
    CHECK(mc.hits == 0);
    CHECK(mc.misses == 3);
    CHECK(mc.false_alarms == 2);

    // overlapping but opposite direction
    RampEvent pup{0, 5, RampDirection::Up, 30};
    RampEvent tdown{2, 7, RampDirection::Down, 30};
    mc = match_events({pup}, {tdown});
    CHECK(mc.hits == 0);
    CHECK(mc.misses == 1);
    CHECK(mc.false_alarms == 1);
}

TEST_CASE("csi arithmetic and permutation invariance") {
    MatchCounts c;
    c.hits = 3;
    c.misses = 1;
    c.false_alarms = 2;
    CHECK(csi(c).value() == doctest::Approx(0.5));
    CHECK_FALSE(csi(MatchCounts{}).has_value());

    Rng rng(5);
    std::vector<RampEvent> pred, truth;
    for (int i = 0; i < 6; ++i) {
        std::size_t s = rng.below(40);
        pred.push_back({s, s + 3 + rng.below(5),
                        rng.bernoulli(0.5) ? RampDirection::Up : RampDirection::Down,
                        25.0 + rng.uniform(0, 10)});
        s = rng.below(40);
        truth.push_back({s, s + 3 + rng.below(5),
                         rng.bernoulli(0.5) ? RampDirection::Up : RampDirection::Down,
                         25.0 + rng.uniform(0, 10)});
    }
    auto base = csi(match_events(pred, truth));
    auto pred2 = pred;
    auto truth2 = truth;
    std::reverse(pred2.begin(), pred2.end());
    std::reverse(truth2.begin(), truth2.end());
    CHECK(csi(match_events(pred2, truth2)) == base);

    // identical lists give CSI = 1
    CHECK(csi(match_events(truth, truth)).value() == doctest::Approx(1.0));
}

TEST_CASE("mste mete mrme arithmetic") {
    MatchCounts c;
    RampEvent truth{10, 20, RampDirection::Up, 30};
    RampEvent pred{12, 19, RampDirection::Up, 24};
    c.pairs.push_back({pred, truth});
    c.hits = 1;
    auto tm = mste_mete(c).value();
    CHECK(tm.first == doctest::Approx(2.0));
    CHECK(tm.second == doctest::Approx(1.0));
    CHECK(mrme(c).value() == doctest::Approx(0.2));

    CHECK_FALSE(mste_mete(MatchCounts{}).has_value());
    CHECK_FALSE(mrme(MatchCounts{}).has_value());
}

TEST_CASE("rmse forecast skill and smart persistence") {
    std::vector<double> p{1, 2, 3}, t{1, 2, 3};
    CHECK(rmse(p, t) == doctest::Approx(0.0));
    CHECK(forecast_skill(0.0, 2.0).value() == doctest::Approx(100.0));
    CHECK(forecast_skill(2.0, 2.0).value() == doctest::Approx(0.0));
    CHECK(forecast_skill(4.0, 2.0).value() == doctest::Approx(-100.0));
    CHECK_FALSE(forecast_skill(1.0, 0.0).has_value());

    auto spm = smart_persistence({5.0, 6.0, 7.5}, 4);
    CHECK(spm == std::vector<double>{7.5, 7.5, 7.5, 7.5});
}

TEST_CASE("psnr") {
    // MSE = 1 on the 0-255 scale
    std::vector<float> a(100, 10.f), b(100, 11.f);
    CHECK(psnr(a, b, 255.0) == doctest::Approx(48.1308).epsilon(1e-5));
    CHECK(std::isinf(psnr(a, a, 255.0)));
}

TEST_CASE("ssim identity symmetry and noise monotonicity") {
    Rng rng(11);
    using T32 = num::Tensor<float>;
    T32 img = T32::uniform({1, 1, 16, 16}, rng, 0.f, 1.f);
    CHECK(double(ssim(img, img).item()) == doctest::Approx(1.0).epsilon(1e-9));

    T32 other = T32::uniform({1, 1, 16, 16}, rng, 0.f, 1.f);
    CHECK(double(ssim(img, other).item()) ==
          doctest::Approx(double(ssim(other, img).item())).epsilon(1e-9));

    double prev = 1.0;
    for (double sigma : {0.01, 0.02, 0.05, 0.1}) {
        T32 noisy = img.detach();
        Rng nrng(42); // same noise shape, scaled
        for (auto& v : noisy.data()) v = std::clamp(v + float(sigma * nrng.normal()), 0.f, 1.f);
        double s = double(ssim(img, noisy).item());
        CHECK(s < prev);
        prev = s;
    }
}

TEST_CASE("ssim gradient matches finite differences") {
    Rng rng(13);
    using T64 = num::Tensor<double>;
    T64 a = T64::uniform({1, 1, 8, 8}, rng, 0.1, 0.9);
    T64 b = T64::uniform({1, 1, 8, 8}, rng, 0.1, 0.9);
    b.set_requires_grad(true);
    auto loss = ssim(a, b);
    auto grads = num::compute_gradients(loss);
    REQUIRE(grads.has(b.impl().get()));
    auto analytic = grads.of(b.impl().get());
    double max_err = 0.0;
    for (std::size_t i = 0; i < 8; ++i) { // probe a few entries
        std::size_t idx = i * 7;
        double orig = b.data()[idx];
        const double eps = 1e-5;
        b.data()[idx] = orig + eps;
        double up = ssim(a, b).item();
        b.data()[idx] = orig - eps;
        double dn = ssim(a, b).item();
        b.data()[idx] = orig;
        double numeric = (up - dn) / (2 * eps);
        max_err = std::max(max_err,
                           std::abs(numeric - analytic[idx]) /
                               std::max({1.0, std::abs(numeric), std::abs(analytic[idx])}));
    }
    CHECK(max_err < 1e-4);
}
