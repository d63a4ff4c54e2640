#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "skyramp/skysim.hpp"

using namespace skyramp;
using namespace skyramp::sim;

TEST_CASE("solar position: equator equinox noon is near zenith") {
    // March 20; scan around solar noon at lon 0
    double best = -90.0;
    for (int m = 0; m < 240; ++m) {
        auto p = solar_position(0.0, 0.0, 2021, 79, 10.0 + m / 60.0);
        best = std::max(best, p.elevation_deg);
    }
    CHECK(best > 89.0);
}

TEST_CASE("solar position: local solar midnight is below horizon") {
    auto p = solar_position(37.0, 0.0, 2021, 172, 0.0);
    CHECK(p.elevation_deg < 0.0);
    auto q = solar_position(-33.0, 151.0, 2021, 10, 14.0); // Sydney ~midnight local
    CHECK(q.elevation_deg < 0.0);
}

TEST_CASE("solar position: solstice noon ordering at 37N") {
    double summer = -90, winter = -90;
    for (int m = 0; m < 240; ++m) {
        summer = std::max(summer,
                          solar_position(37.0, 0.0, 2021, 172, 10.0 + m / 60.0).elevation_deg);
        winter = std::max(winter,
                          solar_position(37.0, 0.0, 2021, 355, 10.0 + m / 60.0).elevation_deg);
    }
    CHECK(summer > winter);
    CHECK(summer == doctest::Approx(90.0 - 37.0 + 23.44).epsilon(0.02));
    CHECK(winter == doctest::Approx(90.0 - 37.0 - 23.44).epsilon(0.03));
}

TEST_CASE("solar position: azimuth stays in [0,360)") {
    for (int h = 0; h < 24; ++h) {
        auto p = solar_position(37.4, -122.2, 2021, 200, double(h));
        CHECK(p.azimuth_deg >= 0.0);
        CHECK(p.azimuth_deg < 360.0);
    }
}

TEST_CASE("fisheye projection") {
    const std::size_t H = 32;
    auto center = fisheye_project(123.0, 90.0, H);
    CHECK(center.row == doctest::Approx(16.0));
    CHECK(center.col == doctest::Approx(16.0));

    auto rim = fisheye_project(90.0, 0.0, H); // east on the horizon
    CHECK(std::hypot(rim.row - 16.0, rim.col - 16.0) == doctest::Approx(16.0));
    CHECK(rim.col == doctest::Approx(32.0));

    auto north45 = fisheye_project(0.0, 45.0, H);
    CHECK(north45.row == doctest::Approx(16.0 - 8.0));
    CHECK(north45.col == doctest::Approx(16.0));

    CHECK_THROWS(fisheye_project(0.0, -5.0, H));
}

TEST_CASE("sun mask: disk profile and mass invariance") {
    const std::size_t H = 64;
    const double rho = 3.0;
    auto m1 = render_sun_mask({32.0, 32.0}, rho, H);
    CHECK(m1[32 * H + 32] == doctest::Approx(1.0));
    // beyond 2 rho
    CHECK(m1[32 * H + 32 + 7] == doctest::Approx(0.0));

    double mass1 = 0, mass2 = 0, mass3 = 0;
    auto m2 = render_sun_mask({22.0, 40.0}, rho, H);
    auto m3 = render_sun_mask({40.5, 25.5}, rho, H);
    for (std::size_t i = 0; i < m1.size(); ++i) {
        mass1 += m1[i];
        mass2 += m2[i];
        mass3 += m3[i];
    }
    CHECK(mass2 == doctest::Approx(mass1).epsilon(0.01));
    CHECK(mass3 == doctest::Approx(mass1).epsilon(0.01));
}

TEST_CASE("cloud field: pure advection is exact translation for integer wind") {
    SceneConfig cfg;
    cfg.image_size = 32;
    cfg.wind_x = 2.0;
    cfg.wind_y = 1.0;
    cfg.deformation = 0.0;
    CloudField f(cfg, Rng(7));
    auto a = f.opacity(10.0);
    auto b = f.opacity(11.0);
    // interior comparison: b(r + wy, c + wx) == a(r, c)
    for (std::size_t r = 4; r < 24; ++r)
        for (std::size_t c = 4; c < 24; ++c)
            CHECK(double(b[(r + 1) * 32 + c + 2]) ==
                  doctest::Approx(double(a[r * 32 + c])).epsilon(1e-3));
}

TEST_CASE("cloud field: zero density and determinism") {
    SceneConfig cfg;
    cfg.cloud_density = 0.0;
    CloudField f(cfg, Rng(3));
    for (float v : f.opacity(5.0)) CHECK(v == 0.f);

    SceneConfig cfg2;
    CloudField g1(cfg2, Rng(99)), g2(cfg2, Rng(99));
    CHECK(g1.opacity(42.0) == g2.opacity(42.0));
}

TEST_CASE("synth_pv") {
    CHECK(synth_pv(30.0, 0.8, 0.0, 0.7, 0.0) == doctest::Approx(24.0));
    // full occlusion at kappa 0.7 leaves 30% of clear-sky output
    CHECK(synth_pv(30.0, 0.8, 1.0, 0.7, 0.0) == doctest::Approx(24.0 * 0.3));
    double prev = 1e9;
    for (double occ : {0.0, 0.2, 0.5, 0.9, 1.0}) {
        double p = synth_pv(30.0, 0.9, occ, 0.7, 0.0);
        CHECK(p <= prev);
        prev = p;
    }
    // clamped to [0, capacity]
    CHECK(synth_pv(30.0, 1.0, 0.0, 0.7, 100.0) == doctest::Approx(30.0));
    CHECK(synth_pv(30.0, 0.1, 1.0, 0.7, -100.0) == doctest::Approx(0.0));
}

TEST_CASE("occlusion fraction is invariant under joint rotation/flip") {
    SceneConfig cfg;
    cfg.image_size = 32;
    CloudField f(cfg, Rng(21));
    auto op = f.opacity(33.0);
    auto mask = render_sun_mask({12.0, 18.0}, 2.0, 32);
    double base = occlusion_fraction(op, mask);

    auto rot = [](const std::vector<float>& in, std::size_t n) {
        std::vector<float> out(in.size());
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) out[c * n + (n - 1 - r)] = in[r * n + c];
        return out;
    };
    auto fliph = [](const std::vector<float>& in, std::size_t n) {
        std::vector<float> out(in.size());
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < n; ++c) out[r * n + (n - 1 - c)] = in[r * n + c];
        return out;
    };
    CHECK(occlusion_fraction(rot(op, 32), rot(mask, 32)) == doctest::Approx(base).epsilon(1e-6));
    CHECK(occlusion_fraction(fliph(op, 32), fliph(mask, 32)) ==
          doctest::Approx(base).epsilon(1e-6));
}

TEST_CASE("apply_transform keeps frames and masks aligned") {
    SceneConfig cfg;
    cfg.image_size = 16;
    cfg.seed = 5;
    auto clips = make_dataset(cfg, 3);
    REQUIRE(!clips.empty());
    SkyClip clip = clips.front();
    SkyClip orig = clip;
    ClipTransform t{1, true, false};
    apply_transform(clip, t);
    // the transform is a permutation: multisets of pixel values survive
    auto sorted = [](std::vector<float> v) {
        std::sort(v.begin(), v.end());
        return v;
    };
    CHECK(sorted(clip.frames) == sorted(orig.frames));
    CHECK(sorted(clip.masks) == sorted(orig.masks));
    // rot90 x4 with no flips is the identity
    SkyClip round = orig;
    for (int i = 0; i < 4; ++i) apply_transform(round, ClipTransform{1, false, false});
    CHECK(round.frames == orig.frames);
}

TEST_CASE("make_dataset: splits, filters and determinism") {
    SceneConfig cfg;
    cfg.image_size = 16;
    cfg.seed = 11;
    const int n_days = 12;
    auto clips = make_dataset(cfg, n_days);
    REQUIRE(!clips.empty());

    std::set<int> train_days, val_days, test_days;
    for (const auto& c : clips) {
        REQUIRE(c.pv.size() == kClipLen);
        REQUIRE(c.frames.size() == kClipLen * 16 * 16);
        // independent recount of the 20-of-32 cloudiness rule
        int in_range = 0;
        for (double v : c.cloudiness)
            if (v >= 0.1 && v <= 0.8) ++in_range;
        CHECK(in_range >= 20);
        // timestamps strictly increasing by one minute
        for (std::size_t t = 1; t < c.minute_index.size(); ++t)
            CHECK(c.minute_index[t] == c.minute_index[t - 1] + 1);
        // PV within physical bounds
        for (double p : c.pv) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.1 * c.capacity_kw);
        }
        if (c.split == "train") train_days.insert(c.day_id);
        else if (c.split == "val") val_days.insert(c.day_id);
        else test_days.insert(c.day_id);
    }
    // no day appears in two splits
    for (int d : test_days) {
        CHECK(train_days.count(d) == 0);
        CHECK(val_days.count(d) == 0);
    }
    for (int d : val_days) CHECK(train_days.count(d) == 0);

    // byte-identical across runs
    auto clips2 = make_dataset(cfg, n_days);
    REQUIRE(clips2.size() == clips.size());
    for (std::size_t i = 0; i < clips.size(); ++i) {
        CHECK(clips2[i].frames == clips[i].frames);
        CHECK(clips2[i].pv == clips[i].pv);
        CHECK(clips2[i].split == clips[i].split);
    }

    // a permanently clear scene yields no qualifying clips
    SceneConfig clear = cfg;
    clear.cloud_density = 0.0;
    CHECK_THROWS(make_dataset(clear, 3));

    CHECK_THROWS(make_dataset(cfg, 2));
}
