#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "skyramp/skysim.hpp"

namespace skyramp::cfg {

struct ConfigError : std::runtime_error {
    std::string key;
    ConfigError(std::string k, const std::string& what)
        : std::runtime_error("config key '" + k + "': " + what), key(std::move(k)) {}
};

// Flat, fully defaulted run configuration. Defaults follow the reference
// training regimes; desk_preset() scales them down for a single-workstation
// end-to-end run.
struct RunConfig {
    std::uint64_t seed = 1;

    // simulation
    sim::SceneConfig scene;
    int n_days = 30;

    // shared sequence geometry
    std::size_t hist_len = 16;
    std::size_t horizon = 16;
    std::size_t past_len = 4; // refiner's recent-history stream

    // frame predictor
    std::size_t phydnet_latent = 32;
    std::size_t phydnet_enc_mid = 16;
    int phydnet_q = 2;
    int phydnet_kernel = 5;
    double alpha_frame = 0.5;
    double lr_phydnet = 1e-4;
    std::size_t batch_phydnet = 32;
    int epochs_phydnet = 300;

    // diffusion refiner
    int diffusion_steps = 1000;
    double schedule_s = 0.008;
    std::size_t denoiser_base = 32;
    std::size_t denoiser_cond_base = 16;
    std::size_t denoiser_temb = 64;
    double lr_diffusion = 2e-4;
    std::size_t batch_diffusion = 8;
    int iters_diffusion = 100000;

    // PV forecaster
    std::size_t pv_frame_dim = 128;
    std::size_t pv_d_model = 256;
    std::size_t pv_heads = 4;
    std::size_t pv_ff_stack = 512;
    std::size_t pv_ff_fusion = 1024;
    std::size_t pv_hidden = 64;
    double omega_p = 1.0;
    double omega_s = 0.5;
    double omega_r = 0.5;
    double alpha_slope = 2.0;
    double focal_gamma = 2.0;
    double eps_label = 0.02; // fraction of capacity
    double lr_pv = 1e-4;
    std::size_t batch_pv = 64;
    int epochs_pv = 30;
    std::size_t pv_gen_pool = 64; // clips whose generated futures join the PV training set

    // ramp metrics
    double eps_tol = 0.05;
    double r_th = 0.20;

    // evaluation
    std::size_t eval_max_clips = 0; // 0 = whole split

    // ablations
    bool exclude_sun_mask = false;
    bool skip_diffusion = false;
    std::string pv_model = "rapvformer"; // or "visual_only"

    void validate() const;
};

RunConfig desk_preset();

// JSON (flat object); unknown keys are rejected, missing keys take defaults.
RunConfig parse_config(const std::string& json_text);
RunConfig load_config(const std::string& path);
std::string to_json(const RunConfig& cfg);

// FNV-1a over the canonical JSON form; used in run manifests.
std::uint64_t config_hash(const RunConfig& cfg);
std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t seed = 0xcbf29ce484222325ull);

} // namespace skyramp::cfg
