#include "skyramp/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "skyramp/png_io.hpp"

namespace skyramp::data {

namespace fs = std::filesystem;
using nlohmann::json;

std::string clip_dir_name(int first_minute) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "clip_%04d", first_minute);
    return buf;
}

std::string day_dir_name(int day_id) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "day_%03d", day_id);
    return buf;
}

void write_dataset(const std::string& root, const std::vector<sim::SkyClip>& clips,
                   double latitude, double longitude) {
    for (const auto& clip : clips) {
        const std::size_t n = clip.image_size, hw = n * n;
        fs::path dir = fs::path(root) / clip.split / day_dir_name(clip.day_id) /
                       clip_dir_name(clip.minute_index.front());
        fs::create_directories(dir);

        for (std::size_t t = 0; t < sim::kClipLen; ++t) {
            char fname[32];
            std::snprintf(fname, sizeof(fname), "frame_%03zu.png", t);
            std::vector<float> plane(clip.frames.begin() + t * hw,
                                     clip.frames.begin() + (t + 1) * hw);
            io::write_png_gray((dir / fname).string(), plane, n, n);
            std::snprintf(fname, sizeof(fname), "mask_%03zu.png", t);
            plane.assign(clip.masks.begin() + t * hw, clip.masks.begin() + (t + 1) * hw);
            io::write_png_gray((dir / fname).string(), plane, n, n);
        }

        std::ofstream csv(dir / "pv.csv");
        csv << "minute_index,power_kw\n";
        for (std::size_t t = 0; t < sim::kClipLen; ++t) {
            char line[64];
            std::snprintf(line, sizeof(line), "%d,%.6f\n", clip.minute_index[t], clip.pv[t]);
            csv << line;
        }

        json meta;
        meta["capacity_kw"] = clip.capacity_kw;
        meta["lat"] = latitude;
        meta["lon"] = longitude;
        meta["start_utc"] = clip.minute_index.front() / 60.0 - longitude / 15.0;
        meta["cloudiness"] = clip.cloudiness;
        std::ofstream mf(dir / "meta.json");
        mf << meta.dump(2) << "\n";
    }
}

namespace {

[[noreturn]] void reject(const fs::path& where, const std::string& what) {
    throw std::runtime_error(where.string() + ": " + what);
}

} // namespace

sim::SkyClip read_clip(const std::string& dir_s, const std::string& split, int day_id) {
    const fs::path dir(dir_s);
    sim::SkyClip clip;
    clip.split = split;
    clip.day_id = day_id;

    // frames + masks, all 32 required
    std::size_t n = 0;
    std::vector<float> prev_frame;
    for (std::size_t t = 0; t < sim::kClipLen; ++t) {
        char fname[32];
        std::snprintf(fname, sizeof(fname), "frame_%03zu.png", t);
        fs::path fp = dir / fname;
        if (!fs::exists(fp)) reject(dir, "partial clip: missing " + std::string(fname));
        std::size_t h = 0, w = 0;
        auto frame = io::read_png_gray(fp.string(), h, w);
        if (h != w) reject(fp, "frames must be square");
        if (t == 0) {
            n = h;
            clip.image_size = n;
        } else if (h != n) {
            reject(fp, "frame size differs within clip");
        }
        if (t > 0 && frame == prev_frame)
            reject(fp, "consecutive byte-duplicate frame (sensor-fault rule)");
        prev_frame = frame;
        clip.frames.insert(clip.frames.end(), frame.begin(), frame.end());

        std::snprintf(fname, sizeof(fname), "mask_%03zu.png", t);
        fs::path mp = dir / fname;
        if (!fs::exists(mp)) reject(dir, "partial clip: missing " + std::string(fname));
        auto mask = io::read_png_gray(mp.string(), h, w);
        if (h != n || w != n) reject(mp, "mask size differs from frames");
        clip.masks.insert(clip.masks.end(), mask.begin(), mask.end());
    }
    {
        char extra[32];
        std::snprintf(extra, sizeof(extra), "frame_%03zu.png", sim::kClipLen);
        if (fs::exists(dir / extra)) reject(dir, "clip longer than 32 frames");
    }

    // pv.csv
    fs::path csvp = dir / "pv.csv";
    std::ifstream csv(csvp);
    if (!csv) reject(csvp, "missing pv.csv");
    std::string line;
    if (!std::getline(csv, line) || line != "minute_index,power_kw")
        reject(csvp, "bad header, expected 'minute_index,power_kw'");
    int row = 1;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        ++row;
        int minute = 0;
        double power = 0;
        if (std::sscanf(line.c_str(), "%d,%lf", &minute, &power) != 2)
            reject(csvp, "malformed row " + std::to_string(row));
        if (!clip.minute_index.empty() && minute != clip.minute_index.back() + 1)
            reject(csvp, "non-monotone minute_index at row " + std::to_string(row));
        clip.minute_index.push_back(minute);
        clip.pv.push_back(power);
    }
    if (clip.pv.size() != sim::kClipLen)
        reject(csvp, "expected 32 rows, got " + std::to_string(clip.pv.size()));

    // meta.json
    fs::path metap = dir / "meta.json";
    std::ifstream mf(metap);
    if (!mf) reject(metap, "missing meta.json");
    json meta;
    try {
        mf >> meta;
    } catch (const json::exception& e) {
        reject(metap, std::string("invalid JSON: ") + e.what());
    }
    if (!meta.contains("capacity_kw")) reject(metap, "missing capacity_kw");
    clip.capacity_kw = meta.at("capacity_kw").get<double>();
    if (clip.capacity_kw <= 0) reject(metap, "capacity_kw must be > 0");
    if (meta.contains("cloudiness"))
        clip.cloudiness = meta.at("cloudiness").get<std::vector<double>>();
    if (clip.cloudiness.size() != sim::kClipLen)
        reject(metap, "cloudiness must list one value per frame");

    for (double p : clip.pv)
        if (p < 0.0 || p > 1.1 * clip.capacity_kw)
            reject(csvp, "power outside [0, 1.1 * capacity]");
    return clip;
}

std::vector<sim::SkyClip> read_split(const std::string& root, const std::string& split) {
    fs::path sp = fs::path(root) / split;
    if (!fs::exists(sp)) throw std::runtime_error("missing split directory: " + sp.string());
    std::vector<fs::path> days;
    for (const auto& e : fs::directory_iterator(sp))
        if (e.is_directory()) days.push_back(e.path());
    std::sort(days.begin(), days.end());

    std::vector<sim::SkyClip> clips;
    for (const auto& day : days) {
        int day_id = 0;
        std::sscanf(day.filename().string().c_str(), "day_%d", &day_id);
        std::vector<fs::path> cdirs;
        for (const auto& e : fs::directory_iterator(day))
            if (e.is_directory()) cdirs.push_back(e.path());
        std::sort(cdirs.begin(), cdirs.end());
        for (const auto& cd : cdirs) clips.push_back(read_clip(cd.string(), split, day_id));
    }
    return clips;
}

} // namespace skyramp::data
