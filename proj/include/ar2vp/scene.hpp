#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ar2vp/geometry.hpp"
#include "ar2vp/rng.hpp"
#include "ar2vp/tensor.hpp"

namespace ar2vp {

enum class EntityClass : int {
    ground = 0,
    road = 1,
    building = 2,
    vegetation = 3,
    vehicle = 4,
    pedestrian = 5,
};

inline constexpr int kNumClasses = 6;

inline const char* class_name(EntityClass c) {
    switch (c) {
        case EntityClass::ground: return "ground";
        case EntityClass::road: return "road";
        case EntityClass::building: return "building";
        case EntityClass::vegetation: return "vegetation";
        case EntityClass::vehicle: return "vehicle";
        case EntityClass::pedestrian: return "pedestrian";
    }
    return "?";
}

inline bool is_static_class(EntityClass c) {
    return c == EntityClass::ground || c == EntityClass::road || c == EntityClass::building ||
           c == EntityClass::vegetation;
}

struct Rect {
    double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;

    double width() const { return max_x - min_x; }
    double height() const { return max_y - min_y; }
    bool contains(const Vec2& p) const {
        return p.x >= min_x && p.x < max_x && p.y >= min_y && p.y < max_y;
    }
    bool intersects(const Rect& o) const {
        return min_x < o.max_x && o.min_x < max_x && min_y < o.max_y && o.min_y < max_y;
    }
    Vec2 center() const { return {(min_x + max_x) * 0.5, (min_y + max_y) * 0.5}; }
};

struct Entity {
    int id = 0;
    EntityClass cls = EntityClass::ground;
    Rect footprint;
    Vec2 velocity;  // meters per step, zero for static classes
};

inline void validate_entity(const Entity& e) {
    if (e.footprint.width() <= 0.0 || e.footprint.height() <= 0.0)
        throw std::invalid_argument("entity " + std::to_string(e.id) + ": non-positive footprint");
    if (is_static_class(e.cls) && (e.velocity.x != 0.0 || e.velocity.y != 0.0))
        throw std::invalid_argument("entity " + std::to_string(e.id) +
                                    ": static class with nonzero velocity");
}

struct ScenarioConfig {
    double extent_half = 20.0;  // extent is [-extent_half, extent_half]^2
    int num_roads = 2;
    int num_buildings = 5;
    int num_vegetation = 4;
    int num_npc_vehicles = 5;
    int num_pedestrians = 3;
    int num_vehicles = 4;        // perceiving agents
    double spawn_radius = 10.0;  // vehicles spawn within this distance of the RSU
    int num_steps = 12;
    double building_min_side = 4.0;
    double building_max_side = 8.0;
    double vegetation_min_side = 2.0;
    double vegetation_max_side = 4.0;

    void validate() const {
        if (extent_half <= 0.0) throw std::invalid_argument("scenario config: non-positive extent");
        if (num_steps < 1) throw std::invalid_argument("scenario config: num_steps must be >= 1");
        if (num_roads < 0 || num_buildings < 0 || num_vegetation < 0 || num_npc_vehicles < 0 ||
            num_pedestrians < 0 || num_vehicles < 1)
            throw std::invalid_argument("scenario config: negative entity count");
        if (building_min_side <= 0.0 || building_max_side < building_min_side ||
            vegetation_min_side <= 0.0 || vegetation_max_side < vegetation_min_side)
            throw std::invalid_argument("scenario config: bad entity side range");
    }
};

struct Scenario {
    int id = 0;
    Rect extent;
    std::vector<Entity> entities;
    Pose rsu_pose;
    std::vector<Pose> vehicle_spawns;
    int num_steps = 1;
    std::uint64_t seed = 0;
};

class GenerationError : public std::runtime_error {
public:
    explicit GenerationError(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

inline Rect random_rect(Rng& rng, const Rect& extent, double min_side, double max_side) {
    const double w = rng.uniform(min_side, max_side);
    const double h = rng.uniform(min_side, max_side);
    const double x = rng.uniform(extent.min_x, extent.max_x - w);
    const double y = rng.uniform(extent.min_y, extent.max_y - h);
    return {x, y, x + w, y + h};
}

inline bool clear_of(const Rect& r, const std::vector<Entity>& entities, EntityClass cls) {
    for (const auto& e : entities)
        if (e.cls == cls && r.intersects(e.footprint)) return false;
    return true;
}

inline bool point_in_any(const Vec2& p, const std::vector<Entity>& entities, EntityClass cls) {
    for (const auto& e : entities)
        if (e.cls == cls && e.footprint.contains(p)) return true;
    return false;
}

}  // namespace detail

// Deterministic synthetic scenario: crossing road strips, buildings and
// vegetation off-road, moving NPC vehicles on the roads, wandering
// pedestrians. Distinct layout seeds give distinct layouts.
inline Scenario generate_scenario(std::uint64_t layout_seed, const ScenarioConfig& cfg) {
    cfg.validate();
    Rng rng(derive_seed(layout_seed, 0x5ce7e));

    Scenario s;
    s.id = static_cast<int>(layout_seed);
    s.seed = layout_seed;
    s.num_steps = cfg.num_steps;
    s.extent = {-cfg.extent_half, -cfg.extent_half, cfg.extent_half, cfg.extent_half};

    int next_id = 0;
    const double road_w = 6.0;
    const double band = cfg.extent_half - road_w;
    for (int i = 0; i < cfg.num_roads; ++i) {
        Entity road;
        road.id = next_id++;
        road.cls = EntityClass::road;
        const double pos = rng.uniform(-band * 0.6, band * 0.6);
        if (i % 2 == 0)  // horizontal strip
            road.footprint = {s.extent.min_x, pos - road_w / 2, s.extent.max_x, pos + road_w / 2};
        else  // vertical strip
            road.footprint = {pos - road_w / 2, s.extent.min_y, pos + road_w / 2, s.extent.max_y};
        s.entities.push_back(road);
    }

    const int kMaxRetries = 200;
    auto place_off_road = [&](EntityClass cls, double min_side, double max_side) {
        for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
            Rect r = detail::random_rect(rng, s.extent, min_side, max_side);
            if (!detail::clear_of(r, s.entities, EntityClass::road)) continue;
            if (cls == EntityClass::building && !detail::clear_of(r, s.entities, EntityClass::building))
                continue;
            Entity e;
            e.id = next_id++;
            e.cls = cls;
            e.footprint = r;
            s.entities.push_back(e);
            return;
        }
        throw GenerationError(std::string("generate_scenario: could not place ") +
                              class_name(cls) + " clear of roads after " +
                              std::to_string(kMaxRetries) + " retries");
    };

    for (int i = 0; i < cfg.num_buildings; ++i)
        place_off_road(EntityClass::building, cfg.building_min_side, cfg.building_max_side);
    for (int i = 0; i < cfg.num_vegetation; ++i)
        place_off_road(EntityClass::vegetation, cfg.vegetation_min_side, cfg.vegetation_max_side);

    // NPC vehicles travel along a road strip.
    std::vector<Rect> roads;
    for (const auto& e : s.entities)
        if (e.cls == EntityClass::road) roads.push_back(e.footprint);
    for (int i = 0; i < cfg.num_npc_vehicles; ++i) {
        if (roads.empty())
            throw GenerationError("generate_scenario: NPC vehicles require at least one road");
        const Rect road = roads[static_cast<std::size_t>(rng.next_below(roads.size()))];
        const bool horizontal = road.width() >= road.height();
        Entity e;
        e.id = next_id++;
        e.cls = EntityClass::vehicle;
        const double len = 3.0, wid = 2.0;
        const double speed = rng.uniform(0.5, 1.25) * (rng.next_below(2) == 0 ? 1.0 : -1.0);
        if (horizontal) {
            const double cx = rng.uniform(s.extent.min_x + len, s.extent.max_x - len);
            const double cy = rng.uniform(road.min_y + wid / 2, road.max_y - wid / 2);
            e.footprint = {cx - len / 2, cy - wid / 2, cx + len / 2, cy + wid / 2};
            e.velocity = {speed, 0.0};
        } else {
            const double cx = rng.uniform(road.min_x + wid / 2, road.max_x - wid / 2);
            const double cy = rng.uniform(s.extent.min_y + len, s.extent.max_y - len);
            e.footprint = {cx - wid / 2, cy - len / 2, cx + wid / 2, cy + len / 2};
            e.velocity = {0.0, speed};
        }
        s.entities.push_back(e);
    }

    for (int i = 0; i < cfg.num_pedestrians; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
            Rect r = detail::random_rect(rng, s.extent, 1.0, 1.0);
            if (!detail::clear_of(r, s.entities, EntityClass::building)) continue;
            Entity e;
            e.id = next_id++;
            e.cls = EntityClass::pedestrian;
            e.footprint = r;
            const double ang = rng.uniform(0.0, 2.0 * M_PI);
            const double speed = rng.uniform(0.25, 0.75);
            e.velocity = {speed * std::cos(ang), speed * std::sin(ang)};
            s.entities.push_back(e);
            placed = true;
        }
        if (!placed)
            throw GenerationError("generate_scenario: could not place pedestrian clear of buildings");
    }

    s.rsu_pose.position = {rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)};
    s.rsu_pose.rotation = Mat2::rotation(rng.uniform(0.0, 2.0 * M_PI));

    for (int i = 0; i < cfg.num_vehicles; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxRetries && !placed; ++attempt) {
            const double ang = rng.uniform(0.0, 2.0 * M_PI);
            const double rad = rng.uniform(2.0, cfg.spawn_radius);
            Vec2 p = s.rsu_pose.position + Vec2{rad * std::cos(ang), rad * std::sin(ang)};
            if (!s.extent.contains(p)) continue;
            if (detail::point_in_any(p, s.entities, EntityClass::building)) continue;
            Pose pose;
            pose.position = p;
            pose.rotation = Mat2::rotation(rng.uniform(0.0, 2.0 * M_PI));
            s.vehicle_spawns.push_back(pose);
            placed = true;
        }
        if (!placed)
            throw GenerationError("generate_scenario: could not place vehicle spawn inside extent");
    }
    return s;
}

// Entity poses at step t. Dynamic entities advance by velocity each step and
// reflect at the extent boundary; pure function of (s, t).
inline std::vector<Entity> step_scenario(const Scenario& s, int t) {
    if (t < 0 || t >= s.num_steps)
        throw std::out_of_range("step_scenario: t=" + std::to_string(t) + " outside [0, " +
                                std::to_string(s.num_steps) + ")");
    std::vector<Entity> out = s.entities;
    for (Entity& e : out) {
        if (is_static_class(e.cls)) continue;
        Vec2 v = e.velocity;
        Rect f = e.footprint;
        for (int step = 0; step < t; ++step) {
            // per-axis advance with reflection at the extent walls
            auto advance = [](double& lo, double& hi, double& vel, double wall_lo, double wall_hi) {
                lo += vel;
                hi += vel;
                if (lo < wall_lo) {
                    const double over = wall_lo - lo;
                    lo += 2 * over;
                    hi += 2 * over;
                    vel = -vel;
                } else if (hi > wall_hi) {
                    const double over = hi - wall_hi;
                    lo -= 2 * over;
                    hi -= 2 * over;
                    vel = -vel;
                }
            };
            advance(f.min_x, f.max_x, v.x, s.extent.min_x, s.extent.max_x);
            advance(f.min_y, f.max_y, v.y, s.extent.min_y, s.extent.max_y);
        }
        e.footprint = f;
        e.velocity = v;
    }
    return out;
}

// Rasterized bird's-eye-view observation. data is H x W x kNumClasses with
// per-class occupancy in [0, 1]; the grid is centered on origin in origin's
// frame.
struct BevGrid {
    Tensor3 data;
    double cell_size = 1.0;
    Pose origin;
};

// Box in continuous grid coordinates: x along columns, y along rows, cell
// (r, c) spans [c, c+1) x [r, r+1).
struct GtBox {
    int cls = 0;
    double min_x = 0.0, min_y = 0.0, max_x = 0.0, max_y = 0.0;

    double cx() const { return (min_x + max_x) * 0.5; }
    double cy() const { return (min_y + max_y) * 0.5; }
    double w() const { return max_x - min_x; }
    double h() const { return max_y - min_y; }
};

struct GroundTruth {
    int h = 0, w = 0;
    std::vector<int> seg_labels;  // row-major H x W class indices
    std::vector<GtBox> boxes;

    int label(int r, int c) const { return seg_labels[static_cast<std::size_t>(r) * w + c]; }
    int& label(int r, int c) { return seg_labels[static_cast<std::size_t>(r) * w + c]; }
};

struct RasterSettings {
    int grid_h = 32;
    int grid_w = 32;
    double cell_size = 1.0;
    double vehicle_range = 8.0;
    double rsu_range = 22.0;
    bool vehicle_occlusion = true;
    bool rsu_occlusion = false;
};

namespace detail {

// Entry distance of the segment p -> q into rect, or +inf when it misses.
inline double segment_rect_entry(const Vec2& p, const Vec2& q, const Rect& r) {
    const double dx = q.x - p.x, dy = q.y - p.y;
    double t0 = 0.0, t1 = 1.0;
    auto clip = [&](double d, double lo, double hi, double o) {
        if (d == 0.0) return o >= lo && o < hi;
        double ta = (lo - o) / d, tb = (hi - o) / d;
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        return t0 <= t1;
    };
    if (!clip(dx, r.min_x, r.max_x, p.x)) return std::numeric_limits<double>::infinity();
    if (!clip(dy, r.min_y, r.max_y, p.y)) return std::numeric_limits<double>::infinity();
    const double len = std::hypot(dx, dy);
    return t0 * len;
}

}  // namespace detail

// Rasterizes the scenario at step t as seen from `observer`. Cells beyond
// `range` are zeroed; with occlusion on, cells whose sight line passes
// through a building (deeper than 0.75 cells before the cell center) are
// zeroed. GroundTruth is rendered without range or occlusion limits.
inline std::pair<BevGrid, GroundTruth> rasterize(const Scenario& s, int t, const Pose& observer,
                                                 double range, bool occlusion,
                                                 const RasterSettings& rs) {
    validate_pose(observer);
    if (!s.extent.contains(observer.position))
        throw std::invalid_argument("rasterize: observer outside scenario extent");

    const std::vector<Entity> entities = step_scenario(s, t);

    BevGrid grid;
    grid.data = Tensor3(rs.grid_h, rs.grid_w, kNumClasses);
    grid.cell_size = rs.cell_size;
    grid.origin = observer;

    GroundTruth gt;
    gt.h = rs.grid_h;
    gt.w = rs.grid_w;
    gt.seg_labels.assign(static_cast<std::size_t>(rs.grid_h) * rs.grid_w,
                         static_cast<int>(EntityClass::ground));

    std::vector<const Entity*> buildings;
    for (const auto& e : entities)
        if (e.cls == EntityClass::building) buildings.push_back(&e);

    for (int r = 0; r < rs.grid_h; ++r) {
        for (int c = 0; c < rs.grid_w; ++c) {
            const Vec2 local{(c - rs.grid_w / 2 + 0.5) * rs.cell_size,
                             (r - rs.grid_h / 2 + 0.5) * rs.cell_size};
            const Vec2 world = observer.position + observer.rotation.apply(local);

            // entity class at this cell: highest class index wins, ties to
            // smaller id; cells not covered by any entity stay ground and
            // leave the observation empty
            const bool in_extent = s.extent.contains(world);
            if (!in_extent) continue;
            bool occupied = false;
            int cls = static_cast<int>(EntityClass::ground);
            for (const auto& e : entities) {
                if (e.footprint.contains(world) && (!occupied || static_cast<int>(e.cls) > cls)) {
                    occupied = true;
                    cls = static_cast<int>(e.cls);
                }
            }
            gt.label(r, c) = cls;

            if (!occupied) continue;
            const double dist = local.norm();
            if (dist > range) continue;
            if (occlusion) {
                bool blocked = false;
                for (const Entity* b : buildings) {
                    const double entry = detail::segment_rect_entry(observer.position, world, b->footprint);
                    if (entry < dist - 0.75 * rs.cell_size) {
                        blocked = true;
                        break;
                    }
                }
                if (blocked) continue;
            }
            grid.data.at(r, c, cls) = 1.0;
        }
    }

    // Boxes for vehicle-class entities, in continuous grid coordinates.
    const Mat2 inv_rot = observer.rotation.transpose();
    for (const auto& e : entities) {
        if (e.cls != EntityClass::vehicle) continue;
        const Vec2 corners[4] = {{e.footprint.min_x, e.footprint.min_y},
                                 {e.footprint.min_x, e.footprint.max_y},
                                 {e.footprint.max_x, e.footprint.min_y},
                                 {e.footprint.max_x, e.footprint.max_y}};
        double gx0 = 1e18, gy0 = 1e18, gx1 = -1e18, gy1 = -1e18;
        for (const Vec2& w : corners) {
            const Vec2 local = inv_rot.apply(w - observer.position);
            const double gx = local.x / rs.cell_size + rs.grid_w / 2.0;
            const double gy = local.y / rs.cell_size + rs.grid_h / 2.0;
            gx0 = std::min(gx0, gx);
            gy0 = std::min(gy0, gy);
            gx1 = std::max(gx1, gx);
            gy1 = std::max(gy1, gy);
        }
        if (gx1 <= 0 || gy1 <= 0 || gx0 >= rs.grid_w || gy0 >= rs.grid_h) continue;
        GtBox box;
        box.cls = static_cast<int>(EntityClass::vehicle);
        box.min_x = std::max(gx0, 0.0);
        box.min_y = std::max(gy0, 0.0);
        box.max_x = std::min(gx1, static_cast<double>(rs.grid_w));
        box.max_y = std::min(gy1, static_cast<double>(rs.grid_h));
        gt.boxes.push_back(box);
    }
    return {std::move(grid), gt};
}

// One complete multi-agent observation of a scenario step: RSU grid plus all
// vehicle grids and their ground truths.
struct Frame {
    int scenario_id = 0;
    int t = 0;
    Pose rsu_pose;
    BevGrid rsu_grid;
    std::vector<Pose> vehicle_poses;
    std::vector<BevGrid> vehicle_grids;
    std::vector<GroundTruth> vehicle_gts;

    int num_vehicles() const { return static_cast<int>(vehicle_poses.size()); }
};

inline Frame render_frame(const Scenario& s, int t, const RasterSettings& rs) {
    Frame f;
    f.scenario_id = s.id;
    f.t = t;
    f.rsu_pose = s.rsu_pose;
    f.rsu_grid = rasterize(s, t, s.rsu_pose, rs.rsu_range, rs.rsu_occlusion, rs).first;
    for (const Pose& p : s.vehicle_spawns) {
        auto [grid, gt] = rasterize(s, t, p, rs.vehicle_range, rs.vehicle_occlusion, rs);
        f.vehicle_poses.push_back(p);
        f.vehicle_grids.push_back(std::move(grid));
        f.vehicle_gts.push_back(std::move(gt));
    }
    return f;
}

// ---------------------------------------------------------------------------
// Serialization. Scenario files are JSON with an explicit schema version so
// experiments stay replayable.

inline constexpr int kScenarioSchemaVersion = 1;

inline nlohmann::json pose_to_json(const Pose& p) {
    return {{"position", {p.position.x, p.position.y}},
            {"rotation", {p.rotation.a, p.rotation.b, p.rotation.c, p.rotation.d}}};
}

inline Pose pose_from_json(const nlohmann::json& j) {
    Pose p;
    p.position = {j.at("position").at(0).get<double>(), j.at("position").at(1).get<double>()};
    p.rotation = {j.at("rotation").at(0).get<double>(), j.at("rotation").at(1).get<double>(),
                  j.at("rotation").at(2).get<double>(), j.at("rotation").at(3).get<double>()};
    return p;
}

inline nlohmann::json scenario_to_json(const Scenario& s) {
    nlohmann::json j;
    j["schema_version"] = kScenarioSchemaVersion;
    j["id"] = s.id;
    j["seed"] = s.seed;
    j["num_steps"] = s.num_steps;
    j["extent"] = {s.extent.min_x, s.extent.min_y, s.extent.max_x, s.extent.max_y};
    j["rsu_pose"] = pose_to_json(s.rsu_pose);
    j["vehicle_spawns"] = nlohmann::json::array();
    for (const auto& p : s.vehicle_spawns) j["vehicle_spawns"].push_back(pose_to_json(p));
    j["entities"] = nlohmann::json::array();
    for (const auto& e : s.entities) {
        j["entities"].push_back(
            {{"id", e.id},
             {"class", class_name(e.cls)},
             {"footprint", {e.footprint.min_x, e.footprint.min_y, e.footprint.max_x, e.footprint.max_y}},
             {"velocity", {e.velocity.x, e.velocity.y}}});
    }
    return j;
}

inline EntityClass class_from_name(const std::string& name) {
    for (int i = 0; i < kNumClasses; ++i)
        if (name == class_name(static_cast<EntityClass>(i))) return static_cast<EntityClass>(i);
    throw std::invalid_argument("unknown entity class: " + name);
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
    if (j.at("schema_version").get<int>() != kScenarioSchemaVersion)
        throw std::runtime_error("scenario file: unsupported schema version");
    Scenario s;
    s.id = j.at("id").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.num_steps = j.at("num_steps").get<int>();
    const auto& ext = j.at("extent");
    s.extent = {ext.at(0).get<double>(), ext.at(1).get<double>(), ext.at(2).get<double>(),
                ext.at(3).get<double>()};
    s.rsu_pose = pose_from_json(j.at("rsu_pose"));
    for (const auto& p : j.at("vehicle_spawns")) s.vehicle_spawns.push_back(pose_from_json(p));
    for (const auto& ej : j.at("entities")) {
        Entity e;
        e.id = ej.at("id").get<int>();
        e.cls = class_from_name(ej.at("class").get<std::string>());
        const auto& f = ej.at("footprint");
        e.footprint = {f.at(0).get<double>(), f.at(1).get<double>(), f.at(2).get<double>(),
                       f.at(3).get<double>()};
        e.velocity = {ej.at("velocity").at(0).get<double>(), ej.at("velocity").at(1).get<double>()};
        validate_entity(e);
        s.entities.push_back(e);
    }
    return s;
}

inline void save_scenario(const Scenario& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("save_scenario: cannot open " + path);
    out << scenario_to_json(s).dump(2) << "\n";
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_scenario: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return scenario_from_json(j);
}

// Frame schema: full multi-agent observations, used for replay persistence.
inline nlohmann::json grid_to_json(const BevGrid& g) {
    return {{"h", g.data.h},
            {"w", g.data.w},
            {"c", g.data.c},
            {"cell_size", g.cell_size},
            {"origin", pose_to_json(g.origin)},
            {"data", g.data.v}};
}

inline BevGrid grid_from_json(const nlohmann::json& j) {
    BevGrid g;
    g.data = Tensor3(j.at("h").get<int>(), j.at("w").get<int>(), j.at("c").get<int>());
    g.data.v = j.at("data").get<std::vector<double>>();
    if (g.data.v.size() != static_cast<std::size_t>(g.data.h) * g.data.w * g.data.c)
        throw std::runtime_error("frame file: grid data length mismatch");
    g.cell_size = j.at("cell_size").get<double>();
    g.origin = pose_from_json(j.at("origin"));
    return g;
}

inline nlohmann::json frame_to_json(const Frame& f) {
    nlohmann::json j;
    j["schema_version"] = kScenarioSchemaVersion;
    j["scenario_id"] = f.scenario_id;
    j["t"] = f.t;
    j["rsu_pose"] = pose_to_json(f.rsu_pose);
    j["rsu_grid"] = grid_to_json(f.rsu_grid);
    j["vehicles"] = nlohmann::json::array();
    for (int i = 0; i < f.num_vehicles(); ++i) {
        nlohmann::json gtj;
        gtj["h"] = f.vehicle_gts[i].h;
        gtj["w"] = f.vehicle_gts[i].w;
        gtj["seg_labels"] = f.vehicle_gts[i].seg_labels;
        gtj["boxes"] = nlohmann::json::array();
        for (const auto& b : f.vehicle_gts[i].boxes)
            gtj["boxes"].push_back({{"cls", b.cls}, {"rect", {b.min_x, b.min_y, b.max_x, b.max_y}}});
        j["vehicles"].push_back({{"pose", pose_to_json(f.vehicle_poses[i])},
                                 {"grid", grid_to_json(f.vehicle_grids[i])},
                                 {"gt", gtj}});
    }
    return j;
}

inline Frame frame_from_json(const nlohmann::json& j) {
    if (j.at("schema_version").get<int>() != kScenarioSchemaVersion)
        throw std::runtime_error("frame file: unsupported schema version");
    Frame f;
    f.scenario_id = j.at("scenario_id").get<int>();
    f.t = j.at("t").get<int>();
    f.rsu_pose = pose_from_json(j.at("rsu_pose"));
    f.rsu_grid = grid_from_json(j.at("rsu_grid"));
    for (const auto& vj : j.at("vehicles")) {
        f.vehicle_poses.push_back(pose_from_json(vj.at("pose")));
        f.vehicle_grids.push_back(grid_from_json(vj.at("grid")));
        GroundTruth gt;
        gt.h = vj.at("gt").at("h").get<int>();
        gt.w = vj.at("gt").at("w").get<int>();
        gt.seg_labels = vj.at("gt").at("seg_labels").get<std::vector<int>>();
        for (const auto& bj : vj.at("gt").at("boxes")) {
            GtBox b;
            b.cls = bj.at("cls").get<int>();
            const auto& r = bj.at("rect");
            b.min_x = r.at(0).get<double>();
            b.min_y = r.at(1).get<double>();
            b.max_x = r.at(2).get<double>();
            b.max_y = r.at(3).get<double>();
            gt.boxes.push_back(b);
        }
        f.vehicle_gts.push_back(std::move(gt));
    }
    return f;
}

}  // namespace ar2vp
