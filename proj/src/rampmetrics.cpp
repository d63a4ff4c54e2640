#include "skyramp/rampmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace skyramp::metrics {

std::vector<RampEvent> segment_ramps(const std::vector<double>& power, double capacity,
                                     const RampConfig& cfg) {
    if (power.size() < 2) return {};
    if (!(cfg.eps_tol > 0.0 && cfg.eps_tol < cfg.r_th && cfg.r_th <= 1.0))
        throw std::invalid_argument("segment_ramps: require 0 < eps_tol < r_th <= 1");
    const double eps = cfg.eps_tol * capacity;
    const double rth = cfg.r_th * capacity;

    std::vector<RampEvent> events;
    auto emit = [&](std::size_t o, std::size_t e, int dir) {
        double m = std::abs(power[e] - power[o]);
        if (m >= rth)
            events.push_back({o, e, dir > 0 ? RampDirection::Up : RampDirection::Down, m});
    };

    std::size_t origin = 0;
    std::size_t ext = 0; // running extremum of the current run
    int dir = 0;         // 0 until the excursion from origin exceeds eps
    for (std::size_t t = 1; t < power.size(); ++t) {
        if (dir == 0) {
            if (power[t] - power[origin] > eps) {
                dir = 1;
                ext = t;
            } else if (power[origin] - power[t] > eps) {
                dir = -1;
                ext = t;
            }
        } else if (dir > 0) {
            if (power[t] > power[ext]) {
                ext = t;
            } else if (power[ext] - power[t] > eps) {
                emit(origin, ext, dir);
                origin = ext;
                dir = -1;
                ext = t; // first sub-eps-breaking point is the running min
            }
        } else {
            if (power[t] < power[ext]) {
                ext = t;
            } else if (power[t] - power[ext] > eps) {
                emit(origin, ext, dir);
                origin = ext;
                dir = 1;
                ext = t;
            }
        }
    }
    if (dir != 0) emit(origin, ext, dir);
    return events;
}

namespace {

long overlap_steps(const RampEvent& a, const RampEvent& b) {
    long lo = long(std::max(a.start, b.start));
    long hi = long(std::min(a.end, b.end));
    return hi - lo + 1; // shared single index counts as one step
}

} // namespace

MatchCounts match_events(const std::vector<RampEvent>& pred, const std::vector<RampEvent>& truth) {
    struct Cand {
        long overlap;
        std::size_t pi, ti;
    };
    std::vector<Cand> cands;
    for (std::size_t pi = 0; pi < pred.size(); ++pi)
        for (std::size_t ti = 0; ti < truth.size(); ++ti) {
            if (pred[pi].direction != truth[ti].direction) continue;
            long ov = overlap_steps(pred[pi], truth[ti]);
            if (ov >= 1) cands.push_back({ov, pi, ti});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.overlap != b.overlap) return a.overlap > b.overlap;
        if (a.ti != b.ti) return a.ti < b.ti;
        return a.pi < b.pi;
    });

    MatchCounts mc;
    std::vector<bool> pred_used(pred.size(), false), truth_used(truth.size(), false);
    for (const auto& c : cands) {
        if (pred_used[c.pi] || truth_used[c.ti]) continue;
        pred_used[c.pi] = true;
        truth_used[c.ti] = true;
        mc.pairs.push_back({pred[c.pi], truth[c.ti]});
    }
    mc.hits = mc.pairs.size();
    mc.misses = truth.size() - mc.hits;
    mc.false_alarms = pred.size() - mc.hits;
    return mc;
}

std::optional<double> csi(const MatchCounts& c) {
    std::size_t denom = c.hits + c.misses + c.false_alarms;
    if (denom == 0) return std::nullopt;
    return double(c.hits) / double(denom);
}

std::optional<std::pair<double, double>> mste_mete(const MatchCounts& c) {
    if (c.hits == 0) return std::nullopt;
    double se = 0.0, ee = 0.0;
    for (const auto& p : c.pairs) {
        se += std::abs(double(p.pred.start) - double(p.truth.start));
        ee += std::abs(double(p.pred.end) - double(p.truth.end));
    }
    return std::make_pair(se / double(c.hits), ee / double(c.hits));
}

std::optional<double> mrme(const MatchCounts& c) {
    if (c.hits == 0) return std::nullopt;
    double e = 0.0;
    for (const auto& p : c.pairs)
        e += std::abs(p.pred.magnitude - p.truth.magnitude) / p.truth.magnitude;
    return e / double(c.hits);
}

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw std::invalid_argument("rmse: length mismatch or empty");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = pred[i] - truth[i];
        s += d * d;
    }
    return std::sqrt(s / double(pred.size()));
}

std::optional<double> forecast_skill(double rmse_model, double rmse_spm) {
    if (rmse_spm == 0.0) return std::nullopt;
    return (1.0 - rmse_model / rmse_spm) * 100.0;
}

std::vector<double> smart_persistence(const std::vector<double>& history, std::size_t horizon) {
    if (history.empty()) throw std::invalid_argument("smart_persistence: empty history");
    return std::vector<double>(horizon, history.back());
}

double psnr(const std::vector<float>& a, const std::vector<float>& b, double peak) {
    if (a.size() != b.size() || a.empty()) throw std::invalid_argument("psnr: length mismatch");
    if (peak <= 0.0) throw std::invalid_argument("psnr: peak must be positive");
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = double(a[i]) - double(b[i]);
        mse += d * d;
    }
    mse /= double(a.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(peak) - 10.0 * std::log10(mse);
}

double laplacian_variance(const std::vector<float>& frame, std::size_t h, std::size_t w) {
    if (frame.size() != h * w || h < 3 || w < 3)
        throw std::invalid_argument("laplacian_variance: bad frame size");
    std::vector<double> resp;
    resp.reserve((h - 2) * (w - 2));
    for (std::size_t r = 1; r + 1 < h; ++r)
        for (std::size_t c = 1; c + 1 < w; ++c)
            resp.push_back(double(frame[(r - 1) * w + c]) + double(frame[(r + 1) * w + c]) +
                           double(frame[r * w + c - 1]) + double(frame[r * w + c + 1]) -
                           4.0 * double(frame[r * w + c]));
    double mean = 0.0;
    for (double v : resp) mean += v;
    mean /= double(resp.size());
    double var = 0.0;
    for (double v : resp) var += (v - mean) * (v - mean);
    return var / double(resp.size());
}

} // namespace skyramp::metrics
