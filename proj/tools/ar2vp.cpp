// Experiment runner for the road-to-vehicle cooperative perception simulator.
//
//   ar2vp run   --preset smoke --out out/smoke
//   ar2vp sweep --preset bandwidth --axis compression_n --values 1,2,4,8,16,32 --out out/bw
//   ar2vp eval  --config out/smoke/config.resolved.json \
//               --checkpoint out/smoke/checkpoints/scene_0.ckpt --out out/eval

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ar2vp/experiment.hpp"

namespace {

struct CommonArgs {
    std::string preset = "default";
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool has_seed = false;

    // flag overrides; -1 keeps the preset value
    int rsu = -1, graph = -1, compensator = -1, replay = -1;
    int compression_n = 0;
    double lambda_c = -2.0;
    int mu = -1;
    std::string dpr_self, dpr_distance;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--preset", args.preset,
                    "configuration preset: smoke, ablation, bandwidth, forgetting or default");
    cmd->add_option("--config", args.config_path, "JSON config file (overrides --preset)");
    cmd->add_option("--out", args.out_dir, "artifacts directory");
    cmd->add_option("--seed", args.seed, "master seed override")->each([&](const std::string&) {
        args.has_seed = true;
    });
    cmd->add_option("--rsu", args.rsu, "override rsu_on (0/1)");
    cmd->add_option("--graph", args.graph, "override graph_on (0/1)");
    cmd->add_option("--compensator", args.compensator, "override compensator_on (0/1)");
    cmd->add_option("--replay", args.replay, "override replay_on (0/1)");
    cmd->add_option("--compression-n", args.compression_n, "override channel compression factor");
    cmd->add_option("--lambda-c", args.lambda_c, "override compensation threshold");
    cmd->add_option("--mu", args.mu, "override replay selection count");
    cmd->add_option("--dpr-self", args.dpr_self, "edge self term: include or exclude");
    cmd->add_option("--dpr-distance", args.dpr_distance, "distance weighting: raw or inverse");
}

ar2vp::ExperimentConfig resolve_config(const CommonArgs& args) {
    ar2vp::ExperimentConfig cfg = args.config_path.empty()
                                      ? ar2vp::preset_by_name(args.preset)
                                      : ar2vp::load_experiment_config(args.config_path);
    if (args.has_seed) cfg.master_seed = args.seed;
    if (args.rsu >= 0) cfg.flags.rsu_on = args.rsu != 0;
    if (args.graph >= 0) cfg.flags.graph_on = args.graph != 0;
    if (args.compensator >= 0) cfg.flags.compensator_on = args.compensator != 0;
    if (args.replay >= 0) cfg.replay_on = args.replay != 0;
    if (args.compression_n > 0) {
        cfg.flags.compression_n = args.compression_n;
        cfg.model.compression_n = args.compression_n;
    }
    if (args.lambda_c >= -1.0) cfg.flags.comp_threshold = args.lambda_c;
    if (args.mu >= 0) cfg.replay_mu = args.mu;
    if (!args.dpr_self.empty())
        cfg.flags.dpr.self =
            args.dpr_self == "exclude" ? ar2vp::DprSelf::exclude : ar2vp::DprSelf::include;
    if (!args.dpr_distance.empty())
        cfg.flags.dpr.distance = args.dpr_distance == "inverse" ? ar2vp::DprDistance::inverse
                                                                : ar2vp::DprDistance::raw;
    cfg.validate();
    return cfg;
}

std::vector<double> parse_values(const std::string& csv) {
    std::vector<double> out;
    std::size_t start = 0;
    while (start <= csv.size()) {
        const std::size_t comma = csv.find(',', start);
        const std::string tok = csv.substr(start, comma == std::string::npos ? comma : comma - start);
        if (!tok.empty()) out.push_back(std::stod(tok));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"AR2VP road-to-vehicle cooperative perception experiments"};
    app.require_subcommand(1);

    CommonArgs run_args;
    CLI::App* run_cmd = app.add_subcommand("run", "train and evaluate one configuration");
    add_common(run_cmd, run_args);

    CommonArgs sweep_args;
    std::string axis_name = "compression_n";
    std::string values_csv = "1,2,4,8,16,32";
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "run one configuration across an axis");
    add_common(sweep_cmd, sweep_args);
    sweep_cmd->add_option("--axis", axis_name, "sweep axis: compression_n, lambda_c or mu");
    sweep_cmd->add_option("--values", values_csv, "comma-separated axis values");

    CommonArgs eval_args;
    std::string checkpoint_path;
    CLI::App* eval_cmd = app.add_subcommand("eval", "re-evaluate a stored checkpoint");
    add_common(eval_cmd, eval_args);
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run_cmd->parsed()) {
            const ar2vp::ExperimentConfig cfg = resolve_config(run_args);
            switch (cfg.mode) {
                case ar2vp::RunMode::single: {
                    const ar2vp::RunArtifacts art = ar2vp::run_experiment(cfg, run_args.out_dir);
                    std::printf("run '%s' complete: final mean mIoU %.4f, artifacts in %s\n",
                                cfg.name.c_str(),
                                ar2vp::final_mean(art.result, &ar2vp::MetricsRow::miou),
                                run_args.out_dir.c_str());
                    break;
                }
                case ar2vp::RunMode::ablation: {
                    ar2vp::run_ablation(cfg, run_args.out_dir);
                    std::printf("ablation complete: see %s/ablation.csv\n", run_args.out_dir.c_str());
                    break;
                }
                case ar2vp::RunMode::forgetting: {
                    const ar2vp::ForgettingResult r = ar2vp::run_forgetting(cfg, run_args.out_dir);
                    std::printf("forgetting complete: Forget(mIoU) %.4f with replay, %.4f without\n",
                                ar2vp::forget(r.with_replay.miou_history),
                                ar2vp::forget(r.without_replay.miou_history));
                    break;
                }
            }
        } else if (sweep_cmd->parsed()) {
            const ar2vp::ExperimentConfig cfg = resolve_config(sweep_args);
            const ar2vp::SweepAxis axis = ar2vp::sweep_axis_by_name(axis_name);
            const std::vector<double> values = parse_values(values_csv);
            const ar2vp::SweepResult r = ar2vp::run_sweep(cfg, axis, values, sweep_args.out_dir);
            for (const auto& p : r.points)
                std::printf("%s=%g: mIoU %.4f, feature payload %llu bytes\n",
                            ar2vp::sweep_axis_name(axis), p.value, p.miou,
                            static_cast<unsigned long long>(p.feature_payload_bytes));
        } else if (eval_cmd->parsed()) {
            const ar2vp::ExperimentConfig cfg = resolve_config(eval_args);
            const auto rows = ar2vp::eval_checkpoint(cfg, checkpoint_path, eval_args.out_dir);
            for (const auto& row : rows)
                std::printf("scene %d: mIoU %.4f AP50 %.4f AP70 %.4f\n", row.split_scene, row.miou,
                            row.ap50, row.ap70);
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
