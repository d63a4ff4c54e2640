#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "skyramp/config.hpp"
#include "skyramp/dataset.hpp"
#include "skyramp/diffrefine.hpp"
#include "skyramp/phydnet.hpp"
#include "skyramp/rampmetrics.hpp"
#include "skyramp/rapvformer.hpp"
#include "skyramp/tensor.hpp"

namespace skyramp::pipe {

// Run provenance: every command directory carries a manifest. `evaluate`
// refuses predictions whose input_hash does not match the truth dataset's
// content hash (or whose seed differs).
struct Manifest {
    std::string kind;
    std::uint64_t config_hash = 0;
    std::uint64_t seed = 0;
    std::uint64_t content_hash = 0; // hash of this directory's payload
    std::uint64_t input_hash = 0;   // hash of the consumed inputs (0 = none)
};

void write_manifest(const std::string& dir, const Manifest& m);
Manifest read_manifest(const std::string& dir);

std::uint64_t hash_file(const std::string& path);
// Order-independent-of-locale hash over sorted relative paths + bytes;
// manifest.json itself is excluded.
std::uint64_t hash_tree(const std::string& dir);

// Worker count: min(SKYRAMP_THREADS, hardware_concurrency), at least 1.
std::size_t worker_count();
// Runs fn(i) for i in [0, n) across worker_count() threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Synthesizes the dataset, writes it under out_dir with a manifest.
void simulate(const cfg::RunConfig& cfg, const std::string& out_dir);

// The three training stages. Each writes <out_dir>/<stage>.ckpt plus a
// manifest and returns the per-step loss trace. Later stages read earlier
// checkpoints from out_dir.
std::vector<double> train_phydnet(const cfg::RunConfig& cfg, const std::string& data_root,
                                  const std::string& out_dir);
std::vector<double> train_diffusion(const cfg::RunConfig& cfg, const std::string& data_root,
                                    const std::string& out_dir);
std::vector<double> train_pv(const cfg::RunConfig& cfg, const std::string& data_root,
                             const std::string& out_dir);

// The full two-stage forecaster with loaded weights.
struct Chain {
    cfg::RunConfig cfg;
    num::ParamStore<float> ps_phy, ps_diff, ps_pv;
    std::unique_ptr<phy::PhyDNet<float>> frame_model;
    std::unique_ptr<diff::DenoiserUNet<float>> refiner;
    std::unique_ptr<pv::RaPVFormer<float>> pv_model;
    std::unique_ptr<pv::VisualOnlyForecaster<float>> pv_visual;
    diff::NoiseSchedule sched;
};

// Fresh (randomly initialized) chain; stage init streams derive from cfg.seed.
Chain build_chain(const cfg::RunConfig& cfg);
// build_chain + weights from <ckpt_dir>/{phydnet,diffusion,pv}.ckpt.
// diffusion.ckpt is not required under skip_diffusion.
Chain load_chain(const cfg::RunConfig& cfg, const std::string& ckpt_dir);

// One clip through coarse prediction -> refinement -> PV forecast. Frames are
// quantized to the on-disk 8-bit grid, so results match a write/read cycle.
struct ClipForecast {
    std::string day, clip_id;
    std::vector<float> blurry;  // (horizon, H, W) coarse frames
    std::vector<float> refined; // (horizon, H, W)
    std::vector<double> pv;     // kW
    std::vector<int> ramp;      // argmax class per step
    std::vector<int> minute_index;
    double capacity_kw = 0.0;
};
ClipForecast forecast_clip(const Chain& chain, const sim::SkyClip& clip, Rng rng);

// Runs the chain over a split (first eval_max_clips clips if capped) and
// writes per-clip predictions + manifest under out_dir.
void predict(const cfg::RunConfig& cfg, const std::string& data_root, const std::string& split,
             const std::string& ckpt_dir, const std::string& out_dir);

struct EvalResult {
    metrics::MetricReport report;
    std::vector<double> rmse_step;     // PV RMSE per horizon step, kW
    std::vector<double> rmse_spm_step; // smart persistence per step
    std::vector<double> fs_step;       // forecast skill per step, %
    std::vector<double> l1_coarse;     // coarse frames vs truth, per step
    std::vector<double> l1_persist;    // last-observed-frame persistence
    double spm_csi = 0.0;
    double sharp_gap_refined = 0.0; // median |lapvar(pred) - lapvar(truth)|
    double sharp_gap_coarse = 0.0;
};

// Scores predictions against the truth split; writes report.json/report.csv
// under out_dir. Throws if the manifests do not line up.
EvalResult evaluate(const cfg::RunConfig& cfg, const std::string& pred_dir,
                    const std::string& truth_root, const std::string& split,
                    const std::string& out_dir);

// Three ablations x three seeds against the full model; writes
// ablation_summary.json and returns it as text.
struct AblationRun {
    std::string name;
    std::vector<double> full_rmse, ablated_rmse; // per seed, kW
    int direction_holds = 0; // seeds where the ablation does not beat the full model
};
std::vector<AblationRun> run_ablations(const cfg::RunConfig& cfg, const std::string& out_dir);

// Fast invariant checks for `skyramp selftest`; prints one line per check.
bool selftest();

} // namespace skyramp::pipe
