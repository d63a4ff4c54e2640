// skyramp: synthetic sky-to-PV forecasting pipeline.
//
// Commands: simulate, train phydnet|diffusion|pv, predict, evaluate, ablate,
// selftest. Exit codes: 0 ok, 1 runtime failure, 2 usage error, 3 config
// validation error.
#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "skyramp/config.hpp"
#include "skyramp/pipeline.hpp"

using skyramp::cfg::RunConfig;

namespace {

RunConfig effective_config(const std::string& config_path, std::int64_t seed_override) {
    RunConfig c = config_path.empty() ? RunConfig{} : skyramp::cfg::load_config(config_path);
    if (seed_override >= 0) {
        c.seed = std::uint64_t(seed_override);
        c.scene.seed = c.seed;
    }
    c.validate();
    std::printf("effective config:\n%s\n", skyramp::cfg::to_json(c).c_str());
    return c;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage sky-image PV forecasting pipeline"};
    app.require_subcommand(1);

    std::string config_path, data_dir, split = "test", ckpt_dir, pred_dir, truth_dir, out_dir;
    std::int64_t seed = -1;

    auto add_common = [&](CLI::App* cmd, bool needs_out = true) {
        cmd->add_option("--config", config_path, "JSON config file");
        cmd->add_option("--seed", seed, "override the config seed");
        if (needs_out) cmd->add_option("--out", out_dir, "output directory")->required();
    };

    auto* sim = app.add_subcommand("simulate", "synthesize a dataset");
    add_common(sim);

    auto* train = app.add_subcommand("train", "train one pipeline stage");
    train->require_subcommand(1);
    for (const char* stage : {"phydnet", "diffusion", "pv"}) {
        auto* t = train->add_subcommand(stage);
        add_common(t);
        t->add_option("--data", data_dir, "dataset root")->required();
    }

    auto* pred = app.add_subcommand("predict", "run the forecast chain over a split");
    add_common(pred);
    pred->add_option("--data", data_dir, "dataset root")->required();
    pred->add_option("--ckpt", ckpt_dir, "checkpoint directory")->required();
    pred->add_option("--split", split, "dataset split (default test)");

    auto* eval = app.add_subcommand("evaluate", "score predictions against the truth split");
    add_common(eval);
    eval->add_option("--pred", pred_dir, "predictions directory")->required();
    eval->add_option("--truth", truth_dir, "truth dataset root")->required();
    eval->add_option("--split", split, "dataset split (default test)");

    auto* abl = app.add_subcommand("ablate", "run the three ablations over three seeds");
    add_common(abl);

    app.add_subcommand("selftest", "run fast invariant checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand("selftest")) return skyramp::pipe::selftest() ? 0 : 1;

        const RunConfig c = effective_config(config_path, seed);
        if (app.got_subcommand(sim)) {
            skyramp::pipe::simulate(c, out_dir);
        } else if (app.got_subcommand(train)) {
            if (train->got_subcommand("phydnet")) skyramp::pipe::train_phydnet(c, data_dir, out_dir);
            else if (train->got_subcommand("diffusion"))
                skyramp::pipe::train_diffusion(c, data_dir, out_dir);
            else skyramp::pipe::train_pv(c, data_dir, out_dir);
        } else if (app.got_subcommand(pred)) {
            skyramp::pipe::predict(c, data_dir, split, ckpt_dir, out_dir);
        } else if (app.got_subcommand(eval)) {
            auto ev = skyramp::pipe::evaluate(c, pred_dir, truth_dir, split, out_dir);
            std::printf("rmse_kw %.4f fs_pct %.2f csi %s\n", ev.report.rmse_kw.value_or(0.0),
                        ev.report.fs_pct.value_or(0.0),
                        ev.report.csi ? std::to_string(*ev.report.csi).c_str() : "n/a");
        } else if (app.got_subcommand(abl)) {
            skyramp::pipe::run_ablations(c, out_dir);
        }
    } catch (const skyramp::cfg::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
