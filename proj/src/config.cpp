#include "skyramp/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace skyramp::cfg {

using nlohmann::json;

void RunConfig::validate() const {
    auto require = [](bool ok, const std::string& key, const std::string& what) {
        if (!ok) throw ConfigError(key, what);
    };
    require(scene.image_size >= 8 && scene.image_size % 4 == 0, "image_size",
            "must be >= 8 and divisible by 4");
    require(scene.latitude >= -90 && scene.latitude <= 90, "latitude", "must be in [-90, 90]");
    require(scene.longitude >= -180 && scene.longitude <= 180, "longitude",
            "must be in [-180, 180]");
    require(scene.sun_radius_px >= 1.0, "sun_radius_px", "must be >= 1");
    require(scene.cloud_octaves >= 1, "cloud_octaves", "must be >= 1");
    require(scene.cloud_density >= 0.0, "cloud_density", "must be >= 0");
    require(scene.capacity_kw > 0.0, "capacity_kw", "must be > 0");
    require(n_days >= 3, "n_days", "must be >= 3");
    require(hist_len >= 1, "hist_len", "must be >= 1");
    require(horizon >= 1, "horizon", "must be >= 1");
    require(past_len >= 1 && past_len <= hist_len, "past_len", "must be in [1, hist_len]");
    require(hist_len + horizon <= sim::kClipLen, "horizon",
            "hist_len + horizon must fit in a 32-minute clip");
    require(phydnet_latent >= 1, "phydnet_latent", "must be >= 1");
    require(phydnet_q >= 1, "phydnet_q", "must be >= 1");
    require(phydnet_kernel % 2 == 1 && phydnet_kernel >= phydnet_q + 1, "phydnet_kernel",
            "must be odd and >= q+1");
    require(alpha_frame >= 0.0 && alpha_frame <= 1.0, "alpha_frame", "must be in [0, 1]");
    require(lr_phydnet > 0, "lr_phydnet", "must be > 0");
    require(batch_phydnet >= 1, "batch_phydnet", "must be >= 1");
    require(epochs_phydnet >= 1, "epochs_phydnet", "must be >= 1");
    require(diffusion_steps >= 1, "diffusion_steps", "must be >= 1");
    require(schedule_s > 0, "schedule_s", "must be > 0");
    require(denoiser_base >= 2, "denoiser_base", "must be >= 2");
    require(denoiser_cond_base >= 1, "denoiser_cond_base", "must be >= 1");
    require(denoiser_temb >= 2 && denoiser_temb % 2 == 0, "denoiser_temb", "must be even, >= 2");
    require(lr_diffusion > 0, "lr_diffusion", "must be > 0");
    require(batch_diffusion >= 1, "batch_diffusion", "must be >= 1");
    require(iters_diffusion >= 1, "iters_diffusion", "must be >= 1");
    require(pv_d_model % pv_heads == 0, "pv_d_model", "must be divisible by pv_heads");
    require(pv_d_model % 2 == 0, "pv_d_model", "must be even");
    require(omega_p >= 0 && omega_s >= 0 && omega_r >= 0, "omega_p", "weights must be >= 0");
    require(focal_gamma >= 0, "focal_gamma", "must be >= 0");
    require(eps_label > 0, "eps_label", "must be > 0");
    require(lr_pv > 0, "lr_pv", "must be > 0");
    require(batch_pv >= 1, "batch_pv", "must be >= 1");
    require(epochs_pv >= 1, "epochs_pv", "must be >= 1");
    require(pv_gen_pool >= 1, "pv_gen_pool", "must be >= 1");
    require(eps_tol > 0, "eps_tol", "must be > 0");
    require(r_th > eps_tol, "r_th", "must exceed eps_tol");
    require(pv_model == "rapvformer" || pv_model == "visual_only", "pv_model",
            "must be 'rapvformer' or 'visual_only'");
}

RunConfig desk_preset() {
    RunConfig c;
    c.n_days = 5;
    // Smoother, faster-moving cloud fields: at 32x32 a desk run cannot
    // reconstruct fine texture, and slow drift makes frame persistence
    // nearly unbeatable within the horizon.
    c.scene.cloud_scale = 20.0;
    c.scene.cloud_octaves = 2;
    c.scene.wind_x = 5.0;
    c.scene.wind_y = 2.5;
    c.scene.deformation = 0.01;
    c.epochs_phydnet = 4;
    c.batch_phydnet = 4;
    c.diffusion_steps = 50;
    c.iters_diffusion = 2000;
    c.batch_diffusion = 2;
    c.denoiser_base = 8;
    c.denoiser_cond_base = 4;
    c.denoiser_temb = 32;
    c.epochs_pv = 4;
    c.batch_pv = 16;
    c.pv_gen_pool = 16;
    c.lr_phydnet = 1e-3;
    c.lr_diffusion = 1e-3;
    c.lr_pv = 3e-4;
    c.eval_max_clips = 32;
    return c;
}

namespace {

template <typename T>
void get(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(key, "wrong type");
    }
}

json to_json_obj(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["image_size"] = c.scene.image_size;
    j["latitude"] = c.scene.latitude;
    j["longitude"] = c.scene.longitude;
    j["year"] = c.scene.year;
    j["start_day_of_year"] = c.scene.start_day_of_year;
    j["sun_radius_px"] = c.scene.sun_radius_px;
    j["cloud_octaves"] = c.scene.cloud_octaves;
    j["cloud_scale"] = c.scene.cloud_scale;
    j["cloud_threshold"] = c.scene.cloud_threshold;
    j["cloud_density"] = c.scene.cloud_density;
    j["wind_x"] = c.scene.wind_x;
    j["wind_y"] = c.scene.wind_y;
    j["deformation"] = c.scene.deformation;
    j["occlusion_depth"] = c.scene.occlusion_depth;
    j["capacity_kw"] = c.scene.capacity_kw;
    j["noise_level"] = c.scene.noise_level;
    j["max_daylight_minutes"] = c.scene.max_daylight_minutes;
    j["n_days"] = c.n_days;
    j["hist_len"] = c.hist_len;
    j["horizon"] = c.horizon;
    j["past_len"] = c.past_len;
    j["phydnet_latent"] = c.phydnet_latent;
    j["phydnet_enc_mid"] = c.phydnet_enc_mid;
    j["phydnet_q"] = c.phydnet_q;
    j["phydnet_kernel"] = c.phydnet_kernel;
    j["alpha_frame"] = c.alpha_frame;
    j["lr_phydnet"] = c.lr_phydnet;
    j["batch_phydnet"] = c.batch_phydnet;
    j["epochs_phydnet"] = c.epochs_phydnet;
    j["diffusion_steps"] = c.diffusion_steps;
    j["schedule_s"] = c.schedule_s;
    j["denoiser_base"] = c.denoiser_base;
    j["denoiser_cond_base"] = c.denoiser_cond_base;
    j["denoiser_temb"] = c.denoiser_temb;
    j["lr_diffusion"] = c.lr_diffusion;
    j["batch_diffusion"] = c.batch_diffusion;
    j["iters_diffusion"] = c.iters_diffusion;
    j["pv_frame_dim"] = c.pv_frame_dim;
    j["pv_d_model"] = c.pv_d_model;
    j["pv_heads"] = c.pv_heads;
    j["pv_ff_stack"] = c.pv_ff_stack;
    j["pv_ff_fusion"] = c.pv_ff_fusion;
    j["pv_hidden"] = c.pv_hidden;
    j["omega_p"] = c.omega_p;
    j["omega_s"] = c.omega_s;
    j["omega_r"] = c.omega_r;
    j["alpha_slope"] = c.alpha_slope;
    j["focal_gamma"] = c.focal_gamma;
    j["eps_label"] = c.eps_label;
    j["lr_pv"] = c.lr_pv;
    j["batch_pv"] = c.batch_pv;
    j["epochs_pv"] = c.epochs_pv;
    j["pv_gen_pool"] = c.pv_gen_pool;
    j["eps_tol"] = c.eps_tol;
    j["r_th"] = c.r_th;
    j["eval_max_clips"] = c.eval_max_clips;
    j["exclude_sun_mask"] = c.exclude_sun_mask;
    j["skip_diffusion"] = c.skip_diffusion;
    j["pv_model"] = c.pv_model;
    return j;
}

} // namespace

RunConfig parse_config(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");

    RunConfig base;
    if (j.contains("preset")) {
        std::string p;
        try {
            p = j.at("preset").get<std::string>();
        } catch (const json::exception&) {
            throw ConfigError("preset", "wrong type");
        }
        if (p == "desk") base = desk_preset();
        else if (p != "paper") throw ConfigError("preset", "must be 'desk' or 'paper'");
    }

    const json known = to_json_obj(base);
    for (auto it = j.begin(); it != j.end(); ++it)
        if (it.key() != "preset" && !known.contains(it.key()))
            throw ConfigError(it.key(), "unknown key");

    RunConfig c = base;
    get(j, "seed", c.seed);
    get(j, "image_size", c.scene.image_size);
    get(j, "latitude", c.scene.latitude);
    get(j, "longitude", c.scene.longitude);
    get(j, "year", c.scene.year);
    get(j, "start_day_of_year", c.scene.start_day_of_year);
    get(j, "sun_radius_px", c.scene.sun_radius_px);
    get(j, "cloud_octaves", c.scene.cloud_octaves);
    get(j, "cloud_scale", c.scene.cloud_scale);
    get(j, "cloud_threshold", c.scene.cloud_threshold);
    get(j, "cloud_density", c.scene.cloud_density);
    get(j, "wind_x", c.scene.wind_x);
    get(j, "wind_y", c.scene.wind_y);
    get(j, "deformation", c.scene.deformation);
    get(j, "occlusion_depth", c.scene.occlusion_depth);
    get(j, "capacity_kw", c.scene.capacity_kw);
    get(j, "noise_level", c.scene.noise_level);
    get(j, "max_daylight_minutes", c.scene.max_daylight_minutes);
    get(j, "n_days", c.n_days);
    get(j, "hist_len", c.hist_len);
    get(j, "horizon", c.horizon);
    get(j, "past_len", c.past_len);
    get(j, "phydnet_latent", c.phydnet_latent);
    get(j, "phydnet_enc_mid", c.phydnet_enc_mid);
    get(j, "phydnet_q", c.phydnet_q);
    get(j, "phydnet_kernel", c.phydnet_kernel);
    get(j, "alpha_frame", c.alpha_frame);
    get(j, "lr_phydnet", c.lr_phydnet);
    get(j, "batch_phydnet", c.batch_phydnet);
    get(j, "epochs_phydnet", c.epochs_phydnet);
    get(j, "diffusion_steps", c.diffusion_steps);
    get(j, "schedule_s", c.schedule_s);
    get(j, "denoiser_base", c.denoiser_base);
    get(j, "denoiser_cond_base", c.denoiser_cond_base);
    get(j, "denoiser_temb", c.denoiser_temb);
    get(j, "lr_diffusion", c.lr_diffusion);
    get(j, "batch_diffusion", c.batch_diffusion);
    get(j, "iters_diffusion", c.iters_diffusion);
    get(j, "pv_frame_dim", c.pv_frame_dim);
    get(j, "pv_d_model", c.pv_d_model);
    get(j, "pv_heads", c.pv_heads);
    get(j, "pv_ff_stack", c.pv_ff_stack);
    get(j, "pv_ff_fusion", c.pv_ff_fusion);
    get(j, "pv_hidden", c.pv_hidden);
    get(j, "omega_p", c.omega_p);
    get(j, "omega_s", c.omega_s);
    get(j, "omega_r", c.omega_r);
    get(j, "alpha_slope", c.alpha_slope);
    get(j, "focal_gamma", c.focal_gamma);
    get(j, "eps_label", c.eps_label);
    get(j, "lr_pv", c.lr_pv);
    get(j, "batch_pv", c.batch_pv);
    get(j, "epochs_pv", c.epochs_pv);
    get(j, "pv_gen_pool", c.pv_gen_pool);
    get(j, "eps_tol", c.eps_tol);
    get(j, "r_th", c.r_th);
    get(j, "eval_max_clips", c.eval_max_clips);
    get(j, "exclude_sun_mask", c.exclude_sun_mask);
    get(j, "skip_diffusion", c.skip_diffusion);
    get(j, "pv_model", c.pv_model);
    c.scene.seed = c.seed;
    c.validate();
    return c;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

std::string to_json(const RunConfig& cfg) { return to_json_obj(cfg).dump(2); }

std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint64_t config_hash(const RunConfig& cfg) {
    const std::string s = to_json(cfg);
    return fnv1a(s.data(), s.size());
}

} // namespace skyramp::cfg
