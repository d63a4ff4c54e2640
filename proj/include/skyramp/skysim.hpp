#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "skyramp/rng.hpp"

namespace skyramp::sim {

struct SceneConfig {
    std::size_t image_size = 32;
    double latitude = 37.4;
    double longitude = -122.2;
    int year = 2021;
    int start_day_of_year = 121; // May 1
    double sun_radius_px = 2.0;
    int cloud_octaves = 3;
    double cloud_scale = 12.0;     // base lattice spacing, px
    double cloud_threshold = 0.35; // noise-to-opacity cut
    double cloud_density = 1.0;    // 0 disables clouds entirely
    double wind_x = 1.5;           // px/min
    double wind_y = 0.8;
    double deformation = 0.02; // per-octave phase drift rate
    double occlusion_depth = 0.7;
    double capacity_kw = 30.0;
    double noise_level = 0.0;              // PV noise, fraction of capacity
    std::size_t max_daylight_minutes = 480; // cap on simulated minutes per day
    std::uint64_t seed = 1;
};

struct SolarPosition {
    double azimuth_deg;   // [0, 360), from north, clockwise
    double elevation_deg; // [-90, 90]
};

struct PixelPos {
    double row;
    double col;
};

// One 32-minute training window.
struct SkyClip {
    std::size_t image_size = 0;
    std::vector<float> frames; // (32, 1, H, W), values in [0,1]
    std::vector<float> masks;  // (32, 1, H, W)
    std::vector<double> pv;    // kW, length 32
    std::vector<double> cloudiness;
    std::vector<int> minute_index; // minutes since local midnight, strictly +1
    double capacity_kw = 0.0;
    int day_id = 0;
    std::string split; // train / val / test
};

inline constexpr std::size_t kClipLen = 32;

// NOAA low-accuracy ephemeris (declination + equation of time + hour angle).
SolarPosition solar_position(double latitude_deg, double longitude_deg, int year,
                             int day_of_year, double utc_hours);

// Equidistant fisheye, north-up / east-right: r = (H/2) * (90 - elev) / 90.
PixelPos fisheye_project(double azimuth_deg, double elevation_deg, std::size_t image_size);

// Soft sun disk: 1 inside rho, cosine falloff to 0 over [rho, 2 rho].
std::vector<float> render_sun_mask(const PixelPos& pos, double rho, std::size_t image_size);

// Multi-octave value noise advected by wind with per-octave drift and a slow
// global density cycle; thresholded and rescaled to opacity in [0,1].
class CloudField {
public:
    CloudField(const SceneConfig& cfg, Rng rng);
    std::vector<float> opacity(double t_minutes) const;
    std::size_t size() const { return size_; }

private:
    double value_noise(double x, double y, int octave) const;

    std::size_t size_;
    int octaves_;
    double scale_, threshold_, density_;
    double wind_x_, wind_y_, deformation_;
    std::uint64_t key_;
    std::vector<double> drift_dir_x_, drift_dir_y_; // unit drift per octave
    double cycle_phase_, cycle_period_;
};

// Opacity-weighted mean over the sun disk; the occlusion fraction of Eq-style
// PV synthesis. Weights are the soft mask values.
double occlusion_fraction(const std::vector<float>& opacity, const std::vector<float>& sun_mask);

// Mean opacity over the sky dome circle.
double dome_cloudiness(const std::vector<float>& opacity, std::size_t image_size);

// Proxy cloudiness for ingested real RGB imagery: fraction of dome pixels
// whose normalized red-blue ratio (r-b)/(r+b) exceeds a cloud threshold.
// Stand-in for a full sky segmentation pipeline.
double proxy_cloudiness_rgb(const std::vector<float>& r, const std::vector<float>& g,
                            const std::vector<float>& b, std::size_t image_size,
                            double threshold = -0.05);

// P = capacity * clearsky * (1 - kappa * occ) + noise, clamped to [0, capacity];
// clearsky = max(sin(elevation), 0).
double synth_pv(double capacity_kw, double clearsky, double occ, double kappa, double noise);

struct DayScene {
    std::vector<float> frames; // (T, 1, H, W)
    std::vector<float> masks;
    std::vector<double> pv;
    std::vector<double> cloudiness;
    std::vector<int> minute_index;
    int day_id = 0;
};

// Simulates one day at 1-minute cadence, keeping only daylight frames
// (clear-sky PV >= 20% of capacity), up to max_daylight_minutes.
DayScene simulate_day(const SceneConfig& cfg, int day_index);

// Windowing + filtering + day-based splitting per the dataset recipe:
// stride-1 windows of 32 minutes, >= 20 frames with cloudiness in [0.1, 0.8],
// 80/10/10 split by day.
std::vector<SkyClip> make_dataset(const SceneConfig& cfg, int n_days);

// Training-time augmentation: k*90-degree rotation then optional flips,
// applied identically to frames and masks.
struct ClipTransform {
    int rot90 = 0; // 0..3
    bool flip_h = false;
    bool flip_v = false;
};
void apply_transform(SkyClip& clip, const ClipTransform& t);
ClipTransform random_transform(Rng& rng);

} // namespace skyramp::sim
