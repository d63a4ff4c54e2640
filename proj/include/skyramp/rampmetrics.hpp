#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "skyramp/conv.hpp"
#include "skyramp/ops.hpp"

namespace skyramp::metrics {

// Thresholds as fractions of installed capacity.
struct RampConfig {
    double eps_tol = 0.05; // noise tolerance band
    double r_th = 0.20;    // minimum cumulative event magnitude
};

enum class RampDirection { Up, Down };

struct RampEvent {
    std::size_t start = 0; // index of the run origin
    std::size_t end = 0;   // index of the run extremum
    RampDirection direction = RampDirection::Up;
    double magnitude = 0.0; // |P[end] - P[start]|, in power units
};

struct MatchedPair {
    RampEvent pred;
    RampEvent truth;
};

struct MatchCounts {
    std::size_t hits = 0;
    std::size_t misses = 0;
    std::size_t false_alarms = 0;
    std::vector<MatchedPair> pairs;
};

// All per-run scores; absent optionals serialize as null.
struct MetricReport {
    std::optional<double> rmse_kw;
    std::optional<double> fs_pct;
    std::optional<double> csi;
    std::optional<double> mste_min;
    std::optional<double> mete_min;
    std::optional<double> mrme;
    std::vector<double> psnr_db; // per horizon step; +inf for identical frames
    std::vector<double> ssim;    // per horizon step
    MatchCounts counts;
    std::string run_id;
    std::uint64_t seed = 0;
    std::size_t clip_count = 0;
};

// Zig-zag run segmentation: a run's direction is established once the
// excursion from its origin exceeds eps, it ends at its extremum when the
// counter-move exceeds eps (strict inequalities throughout), and it is
// emitted as an event iff its magnitude reaches r_th * capacity. The next
// run starts at the previous extremum.
std::vector<RampEvent> segment_ramps(const std::vector<double>& power, double capacity,
                                     const RampConfig& cfg);

// Greedy one-to-one matching by descending interval overlap; a pair matches
// iff directions agree and the index intervals intersect.
MatchCounts match_events(const std::vector<RampEvent>& pred, const std::vector<RampEvent>& truth);

std::optional<double> csi(const MatchCounts& counts);
// (mean start-time error, mean end-time error), minutes; absent with no hits
std::optional<std::pair<double, double>> mste_mete(const MatchCounts& counts);
std::optional<double> mrme(const MatchCounts& counts);

double rmse(const std::vector<double>& pred, const std::vector<double>& truth);
// percent improvement over the smart-persistence baseline; absent if the
// baseline error is zero
std::optional<double> forecast_skill(double rmse_model, double rmse_spm);
// constant continuation of the last observed power
std::vector<double> smart_persistence(const std::vector<double>& history, std::size_t horizon);

double psnr(const std::vector<float>& a, const std::vector<float>& b, double peak);

// Variance of the 3x3 Laplacian response, a sharpness proxy for single-
// channel frames.
double laplacian_variance(const std::vector<float>& frame, std::size_t h, std::size_t w);

// ---- SSIM (differentiable) -----------------------------------------------------

// Gaussian window, sigma 1.5; size shrinks to the largest odd value that
// fits when the image is smaller than 11.
template <typename T>
num::Tensor<T> gaussian_window(std::size_t k, T sigma = T(1.5)) {
    std::vector<T> w(k * k);
    const double c = (double(k) - 1.0) / 2.0;
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            double d2 = (i - c) * (i - c) + (j - c) * (j - c);
            double v = std::exp(-d2 / (2.0 * double(sigma) * double(sigma)));
            w[i * k + j] = T(v);
            total += v;
        }
    for (auto& v : w) v = T(double(v) / total);
    return num::Tensor<T>({1, 1, k, k}, std::move(w));
}

// Mean SSIM over valid windows of (..., H, W) inputs; standard constants
// C1=(0.01 peak)^2, C2=(0.03 peak)^2. Differentiable w.r.t. both images.
template <typename T>
num::Tensor<T> ssim(const num::Tensor<T>& a, const num::Tensor<T>& b, T peak = T(1)) {
    using namespace num;
    if (a.shape() != b.shape()) throw std::invalid_argument("ssim: shape mismatch");
    if (a.ndim() < 2) throw std::invalid_argument("ssim: need at least 2 dims");
    std::size_t H = a.dim(a.ndim() - 2), W = a.dim(a.ndim() - 1);
    std::size_t planes = a.size() / (H * W);
    std::size_t k = std::min<std::size_t>(11, std::min(H, W));
    if (k % 2 == 0) --k;

    Tensor<T> win = gaussian_window<T>(k);
    auto x = reshape(a, {planes, 1, H, W});
    auto y = reshape(b, {planes, 1, H, W});

    auto mu_x = conv2d(x, win);
    auto mu_y = conv2d(y, win);
    auto mu_xx = mul(mu_x, mu_x);
    auto mu_yy = mul(mu_y, mu_y);
    auto mu_xy = mul(mu_x, mu_y);
    auto sig_x = sub(conv2d(mul(x, x), win), mu_xx);
    auto sig_y = sub(conv2d(mul(y, y), win), mu_yy);
    auto sig_xy = sub(conv2d(mul(x, y), win), mu_xy);

    const T c1 = T(0.01) * peak * (T(0.01) * peak);
    const T c2 = T(0.03) * peak * (T(0.03) * peak);
    auto num_map = mul(add_scalar(mul_scalar(mu_xy, T(2)), c1),
                       add_scalar(mul_scalar(sig_xy, T(2)), c2));
    auto den_map = mul(add_scalar(add(mu_xx, mu_yy), c1), add_scalar(add(sig_x, sig_y), c2));
    return mean_all(div(num_map, den_map));
}

} // namespace skyramp::metrics
