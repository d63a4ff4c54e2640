#include "skyramp/skysim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace skyramp::sim {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kDeg = kPi / 180.0;
} // namespace

SolarPosition solar_position(double latitude_deg, double longitude_deg, int year,
                             int day_of_year, double utc_hours) {
    (void)year; // leap-year refinement is below the accuracy of this ephemeris
    const double gamma = 2.0 * kPi / 365.0 * (day_of_year - 1 + (utc_hours - 12.0) / 24.0);

    // equation of time [minutes] and declination [rad], NOAA coefficients
    const double eqtime = 229.18 * (0.000075 + 0.001868 * std::cos(gamma) -
                                    0.032077 * std::sin(gamma) - 0.014615 * std::cos(2 * gamma) -
                                    0.040849 * std::sin(2 * gamma));
    const double decl = 0.006918 - 0.399912 * std::cos(gamma) + 0.070257 * std::sin(gamma) -
                        0.006758 * std::cos(2 * gamma) + 0.000907 * std::sin(2 * gamma) -
                        0.002697 * std::cos(3 * gamma) + 0.00148 * std::sin(3 * gamma);

    // true solar time [minutes], longitude east-positive
    double tst = utc_hours * 60.0 + eqtime + 4.0 * longitude_deg;
    tst = std::fmod(std::fmod(tst, 1440.0) + 1440.0, 1440.0);
    const double ha = (tst / 4.0) - 180.0; // hour angle [deg]

    const double lat = latitude_deg * kDeg;
    const double cos_zen = std::sin(lat) * std::sin(decl) +
                           std::cos(lat) * std::cos(decl) * std::cos(ha * kDeg);
    const double zen = std::acos(std::clamp(cos_zen, -1.0, 1.0));
    const double elevation = 90.0 - zen / kDeg;

    double azimuth;
    const double sin_zen = std::sin(zen);
    if (sin_zen < 1e-9) {
        azimuth = 0.0; // sun at zenith: azimuth degenerate
    } else {
        double cos_az = (std::sin(decl) - std::sin(lat) * cos_zen) / (std::cos(lat) * sin_zen);
        azimuth = std::acos(std::clamp(cos_az, -1.0, 1.0)) / kDeg;
        if (ha > 0.0) azimuth = 360.0 - azimuth; // afternoon: sun west of north-south line
    }
    azimuth = std::fmod(azimuth + 360.0, 360.0);
    return {azimuth, elevation};
}

PixelPos fisheye_project(double azimuth_deg, double elevation_deg, std::size_t image_size) {
    if (elevation_deg < 0.0)
        throw std::invalid_argument("fisheye_project: elevation below horizon");
    const double r = (double(image_size) / 2.0) * (90.0 - elevation_deg) / 90.0;
    const double az = azimuth_deg * kDeg;
    const double cx = double(image_size) / 2.0;
    // north (az 0) points up, east (az 90) points right
    return {cx - r * std::cos(az), cx + r * std::sin(az)};
}

std::vector<float> render_sun_mask(const PixelPos& pos, double rho, std::size_t image_size) {
    if (rho < 1.0) throw std::invalid_argument("render_sun_mask: rho must be >= 1");
    std::vector<float> mask(image_size * image_size, 0.f);
    for (std::size_t r = 0; r < image_size; ++r)
        for (std::size_t c = 0; c < image_size; ++c) {
            double d = std::hypot(double(r) - pos.row, double(c) - pos.col);
            double v;
            if (d <= rho) v = 1.0;
            else if (d >= 2.0 * rho) v = 0.0;
            else v = 0.5 * (1.0 + std::cos(kPi * (d - rho) / rho));
            mask[r * image_size + c] = float(v);
        }
    return mask;
}

// ---- cloud field ----------------------------------------------------------------

CloudField::CloudField(const SceneConfig& cfg, Rng rng)
    : size_(cfg.image_size), octaves_(cfg.cloud_octaves), scale_(cfg.cloud_scale),
      threshold_(cfg.cloud_threshold), density_(cfg.cloud_density), wind_x_(cfg.wind_x),
      wind_y_(cfg.wind_y), deformation_(cfg.deformation) {
    key_ = rng.next_u64();
    for (int o = 0; o < octaves_; ++o) {
        double ang = rng.uniform(0.0, 2.0 * kPi);
        drift_dir_x_.push_back(std::cos(ang));
        drift_dir_y_.push_back(std::sin(ang));
    }
    cycle_phase_ = rng.uniform(0.0, 2.0 * kPi);
    cycle_period_ = rng.uniform(180.0, 360.0); // minutes
}

namespace {

std::uint64_t hash_cell(std::uint64_t key, std::int64_t ix, std::int64_t iy, int octave) {
    std::uint64_t z = key ^ (std::uint64_t(ix) * 0x9e3779b97f4a7c15ull) ^
                      (std::uint64_t(iy) * 0xc2b2ae3d27d4eb4full) ^
                      (std::uint64_t(octave) * 0x165667b19e3779f9ull);
    z ^= z >> 30;
    z *= 0xbf58476d1ce4e5b9ull;
    z ^= z >> 27;
    z *= 0x94d049bb133111ebull;
    z ^= z >> 31;
    return z;
}

double cell_value(std::uint64_t key, std::int64_t ix, std::int64_t iy, int octave) {
    return double(hash_cell(key, ix, iy, octave) >> 11) * 0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

} // namespace

double CloudField::value_noise(double x, double y, int octave) const {
    const std::int64_t ix = std::int64_t(std::floor(x));
    const std::int64_t iy = std::int64_t(std::floor(y));
    const double fx = smoothstep(x - double(ix));
    const double fy = smoothstep(y - double(iy));
    const double v00 = cell_value(key_, ix, iy, octave);
    const double v10 = cell_value(key_, ix + 1, iy, octave);
    const double v01 = cell_value(key_, ix, iy + 1, octave);
    const double v11 = cell_value(key_, ix + 1, iy + 1, octave);
    return (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy;
}

std::vector<float> CloudField::opacity(double t_minutes) const {
    std::vector<float> out(size_ * size_, 0.f);
    if (density_ <= 0.0) return out;

    // slow formation/dissipation cycle; disabled when deformation is 0 so the
    // field evolves by translation alone
    const double cycle =
        deformation_ > 0.0
            ? 0.75 + 0.25 * std::sin(2.0 * kPi * t_minutes / cycle_period_ + cycle_phase_)
            : 1.0;
    const double amp_total = (1.0 - std::pow(0.5, octaves_)) / 0.5;

    for (std::size_t r = 0; r < size_; ++r)
        for (std::size_t c = 0; c < size_; ++c) {
            double n = 0.0, amp = 1.0;
            for (int o = 0; o < octaves_; ++o) {
                const double freq = std::pow(2.0, o) / scale_;
                const double drift = deformation_ * t_minutes * std::pow(2.0, o);
                const double x = (double(c) - wind_x_ * t_minutes) * freq + drift * drift_dir_x_[o];
                const double y = (double(r) - wind_y_ * t_minutes) * freq + drift * drift_dir_y_[o];
                n += amp * value_noise(x, y, o);
                amp *= 0.5;
            }
            n /= amp_total;
            double op = (n - threshold_) / (1.0 - threshold_);
            op = std::clamp(op * 2.0, 0.0, 1.0); // steepen the cloud edge
            out[r * size_ + c] = float(std::clamp(op * density_ * cycle, 0.0, 1.0));
        }
    return out;
}

double occlusion_fraction(const std::vector<float>& opacity, const std::vector<float>& sun_mask) {
    if (opacity.size() != sun_mask.size())
        throw std::invalid_argument("occlusion_fraction: size mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < opacity.size(); ++i) {
        num += double(opacity[i]) * double(sun_mask[i]);
        den += double(sun_mask[i]);
    }
    return den > 0.0 ? num / den : 0.0;
}

double dome_cloudiness(const std::vector<float>& opacity, std::size_t image_size) {
    const double cx = double(image_size) / 2.0 - 0.5;
    const double rad = double(image_size) / 2.0;
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t r = 0; r < image_size; ++r)
        for (std::size_t c = 0; c < image_size; ++c)
            if (std::hypot(double(r) - cx, double(c) - cx) <= rad) {
                sum += double(opacity[r * image_size + c]);
                ++count;
            }
    return count ? sum / double(count) : 0.0;
}

double proxy_cloudiness_rgb(const std::vector<float>& r, const std::vector<float>& g,
                            const std::vector<float>& b, std::size_t image_size,
                            double threshold) {
    (void)g;
    const double cx = double(image_size) / 2.0 - 0.5;
    const double rad = double(image_size) / 2.0;
    std::size_t cloudy = 0, total = 0;
    for (std::size_t row = 0; row < image_size; ++row)
        for (std::size_t col = 0; col < image_size; ++col) {
            if (std::hypot(double(row) - cx, double(col) - cx) > rad) continue;
            std::size_t i = row * image_size + col;
            double denom = double(r[i]) + double(b[i]);
            double nrbr = denom > 1e-6 ? (double(r[i]) - double(b[i])) / denom : -1.0;
            if (nrbr > threshold) ++cloudy;
            ++total;
        }
    return total ? double(cloudy) / double(total) : 0.0;
}

double synth_pv(double capacity_kw, double clearsky, double occ, double kappa, double noise) {
    double p = capacity_kw * clearsky * (1.0 - kappa * occ) + noise;
    return std::clamp(p, 0.0, capacity_kw);
}

// ---- day simulation --------------------------------------------------------------

DayScene simulate_day(const SceneConfig& cfg, int day_index) {
    Rng master(cfg.seed);
    Rng day_rng = master.split(std::uint64_t(day_index));

    // per-day weather variation around the configured scene
    SceneConfig day_cfg = cfg;
    Rng weather = day_rng.split(0);
    double wind_rot = weather.uniform(-0.6, 0.6);
    double wind_scale = weather.uniform(0.7, 1.3);
    double wx = cfg.wind_x * wind_scale, wy = cfg.wind_y * wind_scale;
    day_cfg.wind_x = wx * std::cos(wind_rot) - wy * std::sin(wind_rot);
    day_cfg.wind_y = wx * std::sin(wind_rot) + wy * std::cos(wind_rot);
    day_cfg.cloud_threshold = std::clamp(cfg.cloud_threshold + weather.uniform(-0.08, 0.08),
                                         0.05, 0.9);

    CloudField clouds(day_cfg, day_rng.split(1));
    Rng noise_rng = day_rng.split(2);

    const int day_of_year = cfg.start_day_of_year + day_index;
    const std::size_t hw = cfg.image_size * cfg.image_size;
    const double dome_r = double(cfg.image_size) / 2.0;
    const double dome_c = double(cfg.image_size) / 2.0 - 0.5;

    DayScene scene;
    scene.day_id = day_index;
    for (int minute = 0; minute < 1440; ++minute) {
        const double utc_hours = minute / 60.0 - cfg.longitude / 15.0; // local solar-ish time
        auto pos = solar_position(cfg.latitude, cfg.longitude, cfg.year, day_of_year, utc_hours);
        const double clearsky = std::max(std::sin(pos.elevation_deg * kDeg), 0.0);
        if (clearsky < 0.2) continue; // nighttime cut: clear-sky PV below 20% capacity
        if (scene.pv.size() >= cfg.max_daylight_minutes) break;

        auto px = fisheye_project(pos.azimuth_deg, pos.elevation_deg, cfg.image_size);
        auto mask = render_sun_mask(px, cfg.sun_radius_px, cfg.image_size);
        auto opacity = clouds.opacity(double(minute));

        // frame: ambient sky + sun halo occluded by clouds + bright clouds
        std::vector<float> frame(hw, 0.f);
        for (std::size_t r = 0; r < cfg.image_size; ++r)
            for (std::size_t c = 0; c < cfg.image_size; ++c) {
                std::size_t i = r * cfg.image_size + c;
                if (std::hypot(double(r) - dome_c, double(c) - dome_c) > dome_r) continue;
                double d = std::hypot(double(r) - px.row, double(c) - px.col);
                double halo = std::exp(-d * d / (2.0 * std::pow(4.0 * cfg.sun_radius_px, 2)));
                double op = opacity[i];
                double lum = 0.12 + (0.30 * halo + 0.55 * double(mask[i])) * (1.0 - 0.85 * op) +
                             0.55 * op;
                frame[i] = float(std::clamp(lum, 0.0, 1.0));
            }

        double occ = occlusion_fraction(opacity, mask);
        double noise = cfg.noise_level > 0.0
                           ? cfg.noise_level * cfg.capacity_kw * noise_rng.normal()
                           : 0.0;
        scene.frames.insert(scene.frames.end(), frame.begin(), frame.end());
        scene.masks.insert(scene.masks.end(), mask.begin(), mask.end());
        scene.pv.push_back(synth_pv(cfg.capacity_kw, clearsky, occ, cfg.occlusion_depth, noise));
        scene.cloudiness.push_back(dome_cloudiness(opacity, cfg.image_size));
        scene.minute_index.push_back(minute);
    }
    return scene;
}

std::vector<SkyClip> make_dataset(const SceneConfig& cfg, int n_days) {
    if (n_days < 3) throw std::invalid_argument("make_dataset: need at least 3 days");

    // day-based split: shuffle day ids, 10% test, 10% val (at least one each)
    std::vector<int> days(n_days);
    std::iota(days.begin(), days.end(), 0);
    Rng split_rng = Rng(cfg.seed).split(0xD1CE);
    for (std::size_t i = days.size(); i > 1; --i)
        std::swap(days[i - 1], days[split_rng.below(i)]);
    const std::size_t n_test = std::max<std::size_t>(1, n_days / 10);
    const std::size_t n_val = std::max<std::size_t>(1, n_days / 10);
    std::vector<std::string> split_of(n_days, "train");
    for (std::size_t i = 0; i < n_test; ++i) split_of[days[i]] = "test";
    for (std::size_t i = n_test; i < n_test + n_val; ++i) split_of[days[i]] = "val";

    const std::size_t hw = cfg.image_size * cfg.image_size;
    std::vector<SkyClip> clips;
    for (int d = 0; d < n_days; ++d) {
        DayScene scene = simulate_day(cfg, d);
        if (scene.pv.size() < kClipLen) continue;
        for (std::size_t s = 0; s + kClipLen <= scene.pv.size(); ++s) {
            // window must be contiguous in time (no gap across the night cut)
            if (scene.minute_index[s + kClipLen - 1] - scene.minute_index[s] !=
                int(kClipLen) - 1)
                continue;
            std::size_t in_range = 0;
            for (std::size_t t = 0; t < kClipLen; ++t) {
                double c = scene.cloudiness[s + t];
                if (c >= 0.1 && c <= 0.8) ++in_range;
            }
            if (in_range < 20) continue;

            SkyClip clip;
            clip.image_size = cfg.image_size;
            clip.capacity_kw = cfg.capacity_kw;
            clip.day_id = d;
            clip.split = split_of[d];
            clip.frames.assign(scene.frames.begin() + s * hw,
                               scene.frames.begin() + (s + kClipLen) * hw);
            clip.masks.assign(scene.masks.begin() + s * hw,
                              scene.masks.begin() + (s + kClipLen) * hw);
            clip.pv.assign(scene.pv.begin() + s, scene.pv.begin() + s + kClipLen);
            clip.cloudiness.assign(scene.cloudiness.begin() + s,
                                   scene.cloudiness.begin() + s + kClipLen);
            clip.minute_index.assign(scene.minute_index.begin() + s,
                                     scene.minute_index.begin() + s + kClipLen);
            clips.push_back(std::move(clip));
        }
    }
    if (clips.empty()) throw std::runtime_error("make_dataset: no qualifying clips");
    return clips;
}

namespace {

void transform_plane(std::vector<float>& out, const std::vector<float>& in, std::size_t n,
                     const ClipTransform& t) {
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t c = 0; c < n; ++c) {
            std::size_t sr = r, sc = c;
            // inverse flips first, then inverse rotation
            if (t.flip_v) sr = n - 1 - sr;
            if (t.flip_h) sc = n - 1 - sc;
            for (int k = 0; k < t.rot90; ++k) {
                std::size_t nr = n - 1 - sc, nc = sr; // inverse of 90 deg CCW
                sr = nr;
                sc = nc;
            }
            out[r * n + c] = in[sr * n + sc];
        }
}

} // namespace

void apply_transform(SkyClip& clip, const ClipTransform& t) {
    const std::size_t n = clip.image_size;
    const std::size_t hw = n * n;
    std::vector<float> tmp(hw);
    for (std::size_t s = 0; s < kClipLen; ++s) {
        std::vector<float> in(clip.frames.begin() + s * hw, clip.frames.begin() + (s + 1) * hw);
        transform_plane(tmp, in, n, t);
        std::copy(tmp.begin(), tmp.end(), clip.frames.begin() + s * hw);
        in.assign(clip.masks.begin() + s * hw, clip.masks.begin() + (s + 1) * hw);
        transform_plane(tmp, in, n, t);
        std::copy(tmp.begin(), tmp.end(), clip.masks.begin() + s * hw);
    }
}

ClipTransform random_transform(Rng& rng) {
    ClipTransform t;
    t.rot90 = int(rng.below(4));
    t.flip_h = rng.bernoulli(0.5);
    t.flip_v = rng.bernoulli(0.5);
    return t;
}

} // namespace skyramp::sim
