#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ar2vp/svg.hpp"
#include "ar2vp/training.hpp"

namespace ar2vp {

enum class ScenePlan { themed, corridor };
enum class RunMode { single, ablation, forgetting };

// Full description of one reproducible experiment. The resolved form is
// snapshotted into the artifacts directory so any run can be replayed.
struct ExperimentConfig {
    std::string name = "default";
    std::uint64_t master_seed = 1;
    RunMode mode = RunMode::single;

    // scenes
    ScenePlan plan = ScenePlan::themed;
    int num_scenes = 3;
    int steps_per_scene = 8;
    int num_vehicles = 4;
    double extent_half = 24.0;
    double spawn_radius = 14.0;

    RasterSettings raster;
    ModelConfig model;
    PipelineFlags flags;
    LossConfig loss;
    TrainTask task = TrainTask::joint;

    bool replay_on = true;
    int replay_mu = 20;
    int replay_capacity = 60;
    int replay_draw = 6;

    double objectness_threshold = 0.5;
    double nms_iou = 0.5;

    ExperimentConfig() {
        // benchmark defaults; chosen where the desk-scale runs actually
        // converge (the module-level type defaults are kept as documented)
        loss.learning_rate = 0.7;
        loss.batch_size = 2;
        loss.epochs_per_scene = 80;
        loss.sigma = 2.0;
        flags.comp_threshold = 0.8;
        flags.wire = WirePrecision::f32;
    }

    void validate() const {
        std::vector<std::string> errors;
        auto expect = [&](bool ok, const std::string& field, const std::string& why) {
            if (!ok) errors.push_back(field + ": " + why);
        };
        expect(num_scenes >= 1, "scenes.count", "must be >= 1");
        expect(steps_per_scene >= 1, "scenes.steps", "must be >= 1");
        expect(num_vehicles >= 1, "scenes.vehicles", "must be >= 1");
        expect(extent_half > 0, "scenes.extent_half", "must be positive");
        expect(spawn_radius > 0 && spawn_radius < extent_half, "scenes.spawn_radius",
               "must be positive and inside the extent");
        expect(raster.grid_h >= 4 && raster.grid_w >= 4, "raster.grid", "must be at least 4x4");
        expect(raster.cell_size > 0, "raster.cell_size", "must be positive");
        expect(raster.vehicle_range > 0 && raster.rsu_range > 0, "raster.range",
               "must be positive");
        expect(model.in_channels == 2 * kNumClasses, "model.in_channels",
               "must be twice the class count (raw + pooled channels)");
        expect(model.num_classes == kNumClasses, "model.num_classes", "must match the class set");
        expect(model.feature_channels > 0 && model.decoded_channels > 0, "model.channels",
               "must be positive");
        expect(model.compression_n >= 1 &&
                   model.feature_channels % std::max(model.compression_n, 1) == 0,
               "model.compression_n", "must divide feature_channels");
        expect(flags.compression_n == model.compression_n, "flags.compression_n",
               "must match model.compression_n");
        expect(flags.comp_threshold >= -1.0 && flags.comp_threshold <= 1.0, "flags.lambda_c",
               "must lie in [-1, 1]");
        expect(loss.eta > 0, "loss.eta", "must be positive");
        expect(loss.sigma > 0, "loss.sigma", "must be positive");
        expect(loss.learning_rate > 0, "loss.learning_rate", "must be positive");
        expect(loss.batch_size >= 1, "loss.batch_size", "must be >= 1");
        expect(loss.epochs_per_scene >= 0, "loss.epochs", "must be >= 0");
        expect(replay_mu >= 0, "replay.mu", "must be >= 0");
        expect(replay_capacity >= replay_mu, "replay.capacity", "must be >= replay.mu");
        expect(replay_draw >= 0, "replay.draw", "must be >= 0");
        expect(objectness_threshold > 0 && objectness_threshold < 1, "eval.objectness_threshold",
               "must lie in (0, 1)");
        expect(nms_iou > 0 && nms_iou < 1, "eval.nms_iou", "must lie in (0, 1)");
        if (!errors.empty()) {
            std::string msg = "invalid experiment config:";
            for (const auto& e : errors) msg += "\n  " + e;
            throw std::invalid_argument(msg);
        }
    }
};

// --- config (de)serialization ------------------------------------------------

inline const char* run_mode_name(RunMode m) {
    switch (m) {
        case RunMode::single: return "single";
        case RunMode::ablation: return "ablation";
        case RunMode::forgetting: return "forgetting";
    }
    return "?";
}

inline const char* scene_plan_name(ScenePlan p) {
    return p == ScenePlan::themed ? "themed" : "corridor";
}

inline const char* task_name(TrainTask t) {
    switch (t) {
        case TrainTask::seg: return "seg";
        case TrainTask::det: return "det";
        case TrainTask::joint: return "joint";
    }
    return "?";
}

inline nlohmann::json experiment_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["name"] = c.name;
    j["seed"] = c.master_seed;
    j["mode"] = run_mode_name(c.mode);
    j["scenes"] = {{"plan", scene_plan_name(c.plan)},
                   {"count", c.num_scenes},
                   {"steps", c.steps_per_scene},
                   {"vehicles", c.num_vehicles},
                   {"extent_half", c.extent_half},
                   {"spawn_radius", c.spawn_radius}};
    j["raster"] = {{"grid_h", c.raster.grid_h},
                   {"grid_w", c.raster.grid_w},
                   {"cell_size", c.raster.cell_size},
                   {"vehicle_range", c.raster.vehicle_range},
                   {"rsu_range", c.raster.rsu_range},
                   {"vehicle_occlusion", c.raster.vehicle_occlusion},
                   {"rsu_occlusion", c.raster.rsu_occlusion}};
    j["model"] = {{"in_channels", c.model.in_channels},
                  {"feature_channels", c.model.feature_channels},
                  {"decoded_channels", c.model.decoded_channels},
                  {"num_classes", c.model.num_classes},
                  {"compression_n", c.model.compression_n}};
    j["flags"] = {{"rsu_on", c.flags.rsu_on},
                  {"graph_on", c.flags.graph_on},
                  {"compensator_on", c.flags.compensator_on},
                  {"compression_n", c.flags.compression_n},
                  {"dpr_self", c.flags.dpr.self == DprSelf::include ? "include" : "exclude"},
                  {"dpr_distance", c.flags.dpr.distance == DprDistance::raw ? "raw" : "inverse"},
                  {"lambda_c", c.flags.comp_threshold},
                  {"model_at_rsu", c.flags.model_at_rsu},
                  {"wire", c.flags.wire == WirePrecision::f32 ? "f32" : "f64"}};
    j["loss"] = {{"eta", c.loss.eta},
                 {"sigma", c.loss.sigma},
                 {"learning_rate", c.loss.learning_rate},
                 {"batch_size", c.loss.batch_size},
                 {"epochs_per_scene", c.loss.epochs_per_scene}};
    j["task"] = task_name(c.task);
    j["replay"] = {{"on", c.replay_on},
                   {"mu", c.replay_mu},
                   {"capacity", c.replay_capacity},
                   {"draw", c.replay_draw}};
    j["eval"] = {{"objectness_threshold", c.objectness_threshold}, {"nms_iou", c.nms_iou}};
    return j;
}

inline ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    if (j.at("schema_version").get<int>() != 1)
        throw std::invalid_argument("experiment config: unsupported schema version");
    ExperimentConfig c;
    c.name = j.at("name").get<std::string>();
    c.master_seed = j.at("seed").get<std::uint64_t>();
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "single")
        c.mode = RunMode::single;
    else if (mode == "ablation")
        c.mode = RunMode::ablation;
    else if (mode == "forgetting")
        c.mode = RunMode::forgetting;
    else
        throw std::invalid_argument("experiment config: unknown mode '" + mode + "'");

    const auto& sc = j.at("scenes");
    const std::string plan = sc.at("plan").get<std::string>();
    if (plan == "themed")
        c.plan = ScenePlan::themed;
    else if (plan == "corridor")
        c.plan = ScenePlan::corridor;
    else
        throw std::invalid_argument("experiment config: unknown scene plan '" + plan + "'");
    c.num_scenes = sc.at("count").get<int>();
    c.steps_per_scene = sc.at("steps").get<int>();
    c.num_vehicles = sc.at("vehicles").get<int>();
    c.extent_half = sc.at("extent_half").get<double>();
    c.spawn_radius = sc.at("spawn_radius").get<double>();

    const auto& ra = j.at("raster");
    c.raster.grid_h = ra.at("grid_h").get<int>();
    c.raster.grid_w = ra.at("grid_w").get<int>();
    c.raster.cell_size = ra.at("cell_size").get<double>();
    c.raster.vehicle_range = ra.at("vehicle_range").get<double>();
    c.raster.rsu_range = ra.at("rsu_range").get<double>();
    c.raster.vehicle_occlusion = ra.at("vehicle_occlusion").get<bool>();
    c.raster.rsu_occlusion = ra.at("rsu_occlusion").get<bool>();

    const auto& mo = j.at("model");
    c.model.in_channels = mo.at("in_channels").get<int>();
    c.model.feature_channels = mo.at("feature_channels").get<int>();
    c.model.decoded_channels = mo.at("decoded_channels").get<int>();
    c.model.num_classes = mo.at("num_classes").get<int>();
    c.model.compression_n = mo.at("compression_n").get<int>();

    const auto& fl = j.at("flags");
    c.flags.rsu_on = fl.at("rsu_on").get<bool>();
    c.flags.graph_on = fl.at("graph_on").get<bool>();
    c.flags.compensator_on = fl.at("compensator_on").get<bool>();
    c.flags.compression_n = fl.at("compression_n").get<int>();
    c.flags.dpr.self =
        fl.at("dpr_self").get<std::string>() == "include" ? DprSelf::include : DprSelf::exclude;
    c.flags.dpr.distance =
        fl.at("dpr_distance").get<std::string>() == "raw" ? DprDistance::raw : DprDistance::inverse;
    c.flags.comp_threshold = fl.at("lambda_c").get<double>();
    c.flags.model_at_rsu = fl.at("model_at_rsu").get<bool>();
    c.flags.wire =
        fl.at("wire").get<std::string>() == "f32" ? WirePrecision::f32 : WirePrecision::f64;

    const auto& lo = j.at("loss");
    c.loss.eta = lo.at("eta").get<double>();
    c.loss.sigma = lo.at("sigma").get<double>();
    c.loss.learning_rate = lo.at("learning_rate").get<double>();
    c.loss.batch_size = lo.at("batch_size").get<int>();
    c.loss.epochs_per_scene = lo.at("epochs_per_scene").get<int>();

    const std::string task = j.at("task").get<std::string>();
    if (task == "seg")
        c.task = TrainTask::seg;
    else if (task == "det")
        c.task = TrainTask::det;
    else if (task == "joint")
        c.task = TrainTask::joint;
    else
        throw std::invalid_argument("experiment config: unknown task '" + task + "'");

    const auto& re = j.at("replay");
    c.replay_on = re.at("on").get<bool>();
    c.replay_mu = re.at("mu").get<int>();
    c.replay_capacity = re.at("capacity").get<int>();
    c.replay_draw = re.at("draw").get<int>();

    const auto& ev = j.at("eval");
    c.objectness_threshold = ev.at("objectness_threshold").get<double>();
    c.nms_iou = ev.at("nms_iou").get<double>();
    return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument("config parse error in " + path + ": " + e.what());
    }
    return experiment_from_json(j);
}

// --- presets -------------------------------------------------------------

inline ExperimentConfig preset_default() { return ExperimentConfig{}; }

// tiny end-to-end run that finishes in seconds
inline ExperimentConfig preset_smoke() {
    ExperimentConfig c;
    c.name = "smoke";
    c.num_scenes = 1;
    c.steps_per_scene = 8;
    c.num_vehicles = 2;
    c.extent_half = 14.0;
    c.spawn_radius = 6.0;
    c.raster.grid_h = c.raster.grid_w = 8;
    c.raster.vehicle_range = 4.0;
    c.raster.rsu_range = 12.0;
    c.model.feature_channels = 8;
    c.model.decoded_channels = 4;
    c.loss.epochs_per_scene = 2;
    return c;
}

// Table-4-style intra-scene ablation: replay off so the fusion modules are
// isolated
inline ExperimentConfig preset_ablation() {
    ExperimentConfig c;
    c.name = "ablation";
    c.mode = RunMode::ablation;
    c.replay_on = false;
    return c;
}

// replay on/off comparison over the scene curriculum
inline ExperimentConfig preset_forgetting() {
    ExperimentConfig c;
    c.name = "forgetting";
    c.mode = RunMode::forgetting;
    return c;
}

// single-scene corridor benchmark for the performance-bandwidth sweep;
// segmentation-only, matching the trade-off analysis it feeds
inline ExperimentConfig preset_bandwidth() {
    ExperimentConfig c;
    c.name = "bandwidth";
    c.num_scenes = 1;
    c.plan = ScenePlan::corridor;
    c.extent_half = 20.0;
    c.spawn_radius = 5.0;
    c.task = TrainTask::seg;
    c.replay_on = false;
    c.loss.epochs_per_scene = 200;
    return c;
}

inline ExperimentConfig preset_by_name(const std::string& name) {
    if (name == "default") return preset_default();
    if (name == "smoke") return preset_smoke();
    if (name == "ablation") return preset_ablation();
    if (name == "bandwidth") return preset_bandwidth();
    if (name == "forgetting") return preset_forgetting();
    throw std::invalid_argument("unknown preset '" + name +
                                "' (expected smoke, ablation, bandwidth, forgetting or default)");
}

// --- scene construction ----------------------------------------------------

// Themed composition: consecutive scenes differ strongly in what they
// contain, the inter-scene change the curriculum is about. Each theme carries
// a large signature class the other themes lack.
inline ScenarioConfig themed_scene_config(const ExperimentConfig& c, std::uint64_t scene_seed,
                                          int theme) {
    ScenarioConfig sc;
    sc.extent_half = c.extent_half;
    sc.spawn_radius = c.spawn_radius;
    sc.num_steps = c.steps_per_scene;
    sc.num_vehicles = c.num_vehicles;
    Rng rng(derive_seed(scene_seed, 0xc0ff));
    switch (theme % 3) {
        case 0:  // park: broad vegetation, no buildings
            sc.num_roads = 1;
            sc.num_buildings = 0;
            sc.num_vegetation = 7 + static_cast<int>(rng.next_below(3));
            sc.vegetation_min_side = 7.0;
            sc.vegetation_max_side = 13.0;
            sc.num_npc_vehicles = 4 + static_cast<int>(rng.next_below(2));
            sc.num_pedestrians = 2;
            break;
        case 1:  // downtown: dense blocks, no vegetation
            sc.num_roads = 2;
            sc.num_buildings = 8 + static_cast<int>(rng.next_below(3));
            sc.building_min_side = 6.0;
            sc.building_max_side = 11.0;
            sc.num_vegetation = 0;
            sc.num_npc_vehicles = 4 + static_cast<int>(rng.next_below(2));
            sc.num_pedestrians = 0;
            break;
        default:  // open traffic: many lanes and vehicles
            sc.num_roads = 4;
            sc.num_buildings = 0;
            sc.num_vegetation = 0;
            sc.num_npc_vehicles = 7 + static_cast<int>(rng.next_below(3));
            sc.num_pedestrians = 1;
            break;
    }
    return sc;
}

inline ScenarioConfig corridor_scene_config(const ExperimentConfig& c) {
    ScenarioConfig sc;
    sc.extent_half = c.extent_half;
    sc.spawn_radius = c.spawn_radius;
    sc.num_steps = c.steps_per_scene;
    sc.num_vehicles = c.num_vehicles;
    sc.num_roads = 3;
    sc.num_buildings = 0;
    sc.num_vegetation = 0;
    sc.num_npc_vehicles = 6;
    sc.num_pedestrians = 0;
    return sc;
}

inline std::vector<Scenario> build_scenarios(const ExperimentConfig& c) {
    std::vector<Scenario> out;
    for (int k = 0; k < c.num_scenes; ++k) {
        const std::uint64_t scene_seed = derive_seed(c.master_seed, 0x5ce9e, k);
        const ScenarioConfig sc = c.plan == ScenePlan::themed
                                      ? themed_scene_config(c, scene_seed, k)
                                      : corridor_scene_config(c);
        out.push_back(generate_scenario(scene_seed, sc));
    }
    return out;
}

inline CurriculumConfig to_curriculum_config(const ExperimentConfig& c) {
    CurriculumConfig cc;
    cc.model = c.model;
    cc.loss = c.loss;
    cc.flags = c.flags;
    cc.raster = c.raster;
    cc.task = c.task;
    cc.replay_on = c.replay_on;
    cc.replay_mu = c.replay_mu;
    cc.replay_capacity = c.replay_capacity;
    cc.replay_draw = c.replay_draw;
    cc.objectness_threshold = c.objectness_threshold;
    cc.nms_iou = c.nms_iou;
    cc.master_seed = c.master_seed;
    return cc;
}

// --- artifacts ----------------------------------------------------------------

namespace detail {

inline std::string csv_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace detail

inline constexpr const char* kMetricsCsvHeader =
    "scene_idx,epoch,split_scene,miou,ap50,ap70,loss,cumulative_bytes";

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << kMetricsCsvHeader << "\n";
    for (const auto& r : rows)
        out << r.scene_idx << "," << r.epoch << "," << r.split_scene << ","
            << detail::csv_num(r.miou) << "," << detail::csv_num(r.ap50) << ","
            << detail::csv_num(r.ap70) << "," << detail::csv_num(r.loss) << ","
            << r.cumulative_bytes << "\n";
}

inline double final_mean(const CurriculumResult& r, double MetricsRow::*field) {
    double sum = 0.0;
    int n = 0;
    for (const auto& row : r.rows)
        if (row.scene_idx + 1 == static_cast<int>(r.miou_history.size())) {
            sum += row.*field;
            ++n;
        }
    return n ? sum / n : 0.0;
}

inline nlohmann::json summarize(const CurriculumResult& r) {
    nlohmann::json j;
    j["final_mean_miou"] = final_mean(r, &MetricsRow::miou);
    j["final_mean_ap50"] = final_mean(r, &MetricsRow::ap50);
    j["final_mean_ap70"] = final_mean(r, &MetricsRow::ap70);
    if (r.miou_history.size() >= 2) {
        j["forget_miou"] = forget(r.miou_history);
        j["forget_ap50"] = forget(r.ap50_history);
        j["forget_ap70"] = forget(r.ap70_history);
    }
    const ChannelUsage& u = r.ledger.cumulative;
    j["bytes"] = {{"total", u.total_bytes()},
                  {"feature_payload", u.feature_payload_bytes()},
                  {"pose", u.by_kind[static_cast<int>(PayloadKind::pose)].bytes()},
                  {"feature_messages", u.feature_messages()}};
    return j;
}

inline void write_forgetting_plot(const CurriculumResult& r, const std::string& path) {
    std::vector<PlotSeries> series;
    const std::size_t scenes = r.miou_history.size();
    for (std::size_t split = 0; split < scenes; ++split) {
        PlotSeries s;
        s.label = "scene " + std::to_string(split);
        for (std::size_t t = 0; t < scenes; ++t) {
            s.x.push_back(static_cast<double>(t));
            s.y.push_back(r.miou_history[t][split]);
        }
        series.push_back(std::move(s));
    }
    write_line_plot(path, "mIoU per test scene over the curriculum", "scenes learned", "mIoU",
                    series);
}

struct RunArtifacts {
    std::filesystem::path dir;
    CurriculumResult result;
};

// Trains the configured curriculum and writes the artifact set: resolved
// config snapshot, metric CSV, per-scene checkpoints, summary and plots.
// Identical configs produce byte-identical CSVs.
inline RunArtifacts run_experiment(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    namespace fs = std::filesystem;
    RunArtifacts art;
    art.dir = fs::path(out_dir);
    fs::create_directories(art.dir / "checkpoints");
    fs::create_directories(art.dir / "plots");

    {
        std::ofstream out(art.dir / "config.resolved.json");
        out << experiment_to_json(cfg).dump(2) << "\n";
    }

    const std::vector<Scenario> scenes = build_scenarios(cfg);
    for (std::size_t k = 0; k < scenes.size(); ++k)
        save_scenario(scenes[k], (art.dir / ("scenario_" + std::to_string(k) + ".json")).string());

    art.result = train_curriculum(scenes, to_curriculum_config(cfg));

    write_metrics_csv(art.result.rows, (art.dir / "metrics.csv").string());
    for (std::size_t k = 0; k < art.result.checkpoints.size(); ++k)
        save_checkpoint(art.result.checkpoints[k],
                        (art.dir / "checkpoints" / ("scene_" + std::to_string(k) + ".ckpt")).string());
    {
        std::ofstream out(art.dir / "summary.json");
        out << summarize(art.result).dump(2) << "\n";
    }
    write_forgetting_plot(art.result, (art.dir / "plots" / "forgetting_miou.svg").string());
    return art;
}

// The six flag rows of the intra-scene ablation, in table order.
struct AblationRow {
    bool rsu, graph, compensator;
};

inline constexpr AblationRow kAblationRows[6] = {
    {false, false, true}, {false, true, false}, {false, true, true},
    {true, false, true},  {true, true, false},  {true, true, true},
};

struct AblationResult {
    std::vector<CurriculumResult> runs;  // one per row
};

inline AblationResult run_ablation(const ExperimentConfig& base, const std::string& out_dir) {
    base.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream out(fs::path(out_dir) / "config.resolved.json");
        out << experiment_to_json(base).dump(2) << "\n";
    }
    const std::vector<Scenario> scenes = build_scenarios(base);

    AblationResult result;
    std::ofstream csv(fs::path(out_dir) / "ablation.csv");
    csv << "rsu,graph,compensator,miou,ap50,ap70\n";
    for (const AblationRow& row : kAblationRows) {
        ExperimentConfig cfg = base;
        cfg.flags.rsu_on = row.rsu;
        cfg.flags.graph_on = row.graph;
        cfg.flags.compensator_on = row.compensator;
        CurriculumResult r = train_curriculum(scenes, to_curriculum_config(cfg));
        csv << (row.rsu ? 1 : 0) << "," << (row.graph ? 1 : 0) << "," << (row.compensator ? 1 : 0)
            << "," << detail::csv_num(final_mean(r, &MetricsRow::miou)) << ","
            << detail::csv_num(final_mean(r, &MetricsRow::ap50)) << ","
            << detail::csv_num(final_mean(r, &MetricsRow::ap70)) << "\n";
        result.runs.push_back(std::move(r));
    }
    return result;
}

struct ForgettingResult {
    CurriculumResult with_replay;
    CurriculumResult without_replay;
};

inline ForgettingResult run_forgetting(const ExperimentConfig& base, const std::string& out_dir) {
    base.validate();
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "plots");
    {
        std::ofstream out(fs::path(out_dir) / "config.resolved.json");
        out << experiment_to_json(base).dump(2) << "\n";
    }
    const std::vector<Scenario> scenes = build_scenarios(base);

    ForgettingResult result;
    ExperimentConfig on = base;
    on.replay_on = true;
    result.with_replay = train_curriculum(scenes, to_curriculum_config(on));
    ExperimentConfig off = base;
    off.replay_on = false;
    result.without_replay = train_curriculum(scenes, to_curriculum_config(off));

    write_metrics_csv(result.with_replay.rows, (fs::path(out_dir) / "metrics_replay_on.csv").string());
    write_metrics_csv(result.without_replay.rows,
                      (fs::path(out_dir) / "metrics_replay_off.csv").string());
    std::ofstream csv(fs::path(out_dir) / "forgetting.csv");
    csv << "replay,forget_miou,final_mean_miou\n";
    csv << "on," << detail::csv_num(forget(result.with_replay.miou_history)) << ","
        << detail::csv_num(final_mean(result.with_replay, &MetricsRow::miou)) << "\n";
    csv << "off," << detail::csv_num(forget(result.without_replay.miou_history)) << ","
        << detail::csv_num(final_mean(result.without_replay, &MetricsRow::miou)) << "\n";
    write_forgetting_plot(result.with_replay,
                          (fs::path(out_dir) / "plots" / "forgetting_replay_on.svg").string());
    write_forgetting_plot(result.without_replay,
                          (fs::path(out_dir) / "plots" / "forgetting_replay_off.svg").string());
    return result;
}

// --- sweeps -------------------------------------------------------------------

enum class SweepAxis { compression_n, lambda_c, mu };

inline const char* sweep_axis_name(SweepAxis a) {
    switch (a) {
        case SweepAxis::compression_n: return "compression_n";
        case SweepAxis::lambda_c: return "lambda_c";
        case SweepAxis::mu: return "mu";
    }
    return "?";
}

inline SweepAxis sweep_axis_by_name(const std::string& name) {
    if (name == "compression_n") return SweepAxis::compression_n;
    if (name == "lambda_c") return SweepAxis::lambda_c;
    if (name == "mu") return SweepAxis::mu;
    throw std::invalid_argument("unknown sweep axis '" + name +
                                "' (expected compression_n, lambda_c or mu)");
}

inline ExperimentConfig apply_sweep_value(const ExperimentConfig& base, SweepAxis axis,
                                          double value) {
    ExperimentConfig cfg = base;
    switch (axis) {
        case SweepAxis::compression_n:
            cfg.flags.compression_n = static_cast<int>(value);
            cfg.model.compression_n = static_cast<int>(value);
            break;
        case SweepAxis::lambda_c:
            cfg.flags.comp_threshold = value;
            break;
        case SweepAxis::mu:
            cfg.replay_mu = static_cast<int>(value);
            break;
    }
    return cfg;
}

struct SweepPoint {
    double value = 0.0;
    double miou = 0.0;
    double ap50 = 0.0;
    double ap70 = 0.0;
    std::uint64_t feature_payload_bytes = 0;
    std::uint64_t total_bytes = 0;
};

struct SweepResult {
    SweepAxis axis = SweepAxis::compression_n;
    std::vector<SweepPoint> points;
};

// One run per axis value with a shared master seed; emits the combined CSV
// and trade-off curve.
inline SweepResult run_sweep(const ExperimentConfig& base, SweepAxis axis,
                             const std::vector<double>& values, const std::string& out_dir) {
    base.validate();
    if (values.empty()) throw std::invalid_argument("sweep: no axis values given");
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "plots");
    {
        std::ofstream out(fs::path(out_dir) / "config.resolved.json");
        out << experiment_to_json(base).dump(2) << "\n";
    }

    SweepResult result;
    result.axis = axis;
    for (double v : values) {
        ExperimentConfig cfg = apply_sweep_value(base, axis, v);
        cfg.validate();
        const std::vector<Scenario> scenes = build_scenarios(cfg);
        const CurriculumResult r = train_curriculum(scenes, to_curriculum_config(cfg));
        SweepPoint p;
        p.value = v;
        p.miou = final_mean(r, &MetricsRow::miou);
        p.ap50 = final_mean(r, &MetricsRow::ap50);
        p.ap70 = final_mean(r, &MetricsRow::ap70);
        p.feature_payload_bytes = r.ledger.cumulative.feature_payload_bytes();
        p.total_bytes = r.ledger.cumulative.total_bytes();
        result.points.push_back(p);
    }

    std::ofstream csv(fs::path(out_dir) / "sweep.csv");
    csv << "axis,value,miou,ap50,ap70,feature_payload_bytes,total_bytes\n";
    for (const auto& p : result.points)
        csv << sweep_axis_name(axis) << "," << detail::csv_num(p.value) << ","
            << detail::csv_num(p.miou) << "," << detail::csv_num(p.ap50) << ","
            << detail::csv_num(p.ap70) << "," << p.feature_payload_bytes << "," << p.total_bytes
            << "\n";

    PlotSeries s;
    s.label = "mIoU";
    for (const auto& p : result.points) {
        s.x.push_back(axis == SweepAxis::compression_n
                          ? static_cast<double>(p.feature_payload_bytes)
                          : p.value);
        s.y.push_back(p.miou);
    }
    const std::string xlabel =
        axis == SweepAxis::compression_n ? "feature payload bytes" : sweep_axis_name(axis);
    write_line_plot((fs::path(out_dir) / "plots" / "tradeoff.svg").string(),
                    "performance vs " + xlabel, xlabel, "mIoU", {s});
    return result;
}

// Re-evaluates a stored checkpoint on the configured scenes' test splits.
inline std::vector<MetricsRow> eval_checkpoint(const ExperimentConfig& cfg,
                                               const std::string& checkpoint_path,
                                               const std::string& out_dir) {
    cfg.validate();
    const ModelParams params = load_checkpoint(checkpoint_path);
    const std::vector<Scenario> scenes = build_scenarios(cfg);
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);

    std::vector<MetricsRow> rows;
    BandwidthLedger ledger;
    for (std::size_t k = 0; k < scenes.size(); ++k) {
        const SceneFrames frames = split_scene_frames(scenes[k], cfg.raster);
        ChannelUsage usage;
        const SceneEval ev = evaluate_frames(frames.test, params, cfg.flags,
                                             cfg.objectness_threshold, cfg.nms_iou, &usage);
        ledger.merge(usage);
        ledger.end_step();
        MetricsRow row;
        row.scene_idx = -1;  // evaluation only, no training scene index
        row.epoch = 0;
        row.split_scene = static_cast<int>(k);
        row.miou = ev.miou;
        row.ap50 = ev.ap50;
        row.ap70 = ev.ap70;
        row.cumulative_bytes = ledger.cumulative.total_bytes();
        rows.push_back(row);
    }
    write_metrics_csv(rows, (fs::path(out_dir) / "eval.csv").string());
    return rows;
}

}  // namespace ar2vp
