#include <doctest.h>

#include <cmath>

#include "ar2vp/geometry.hpp"
#include "ar2vp/rng.hpp"

using namespace ar2vp;

namespace {

Pose make_pose(double x, double y, double angle = 0.0) {
    Pose p;
    p.position = {x, y};
    p.rotation = Mat2::rotation(angle);
    return p;
}

}  // namespace

TEST_CASE("transform_to_agent_frame: identity rotations reduce to subtraction") {
    const Vec2 out = transform_to_agent_frame(make_pose(3, 4), make_pose(0, 0));
    CHECK(out.x == doctest::Approx(3.0));
    CHECK(out.y == doctest::Approx(4.0));
}

TEST_CASE("transform_to_agent_frame: coincident positions give zero") {
    const Vec2 out = transform_to_agent_frame(make_pose(2, -1, 0.7), make_pose(2, -1, -1.3));
    CHECK(out.x == doctest::Approx(0.0));
    CHECK(out.y == doctest::Approx(0.0));
}

TEST_CASE("transform_to_agent_frame: 90 degree vehicle rotation") {
    // R_i R_0^T (p_0 - p_i) with R_0 = I, R_i = rot(90deg), p_0 = (1,0):
    // rot90 * (1,0) = (0,1)
    const Vec2 out = transform_to_agent_frame(make_pose(1, 0), make_pose(0, 0, M_PI / 2));
    CHECK(out.x == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(out.y == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("transform_to_agent_frame rejects non-orthonormal rotation") {
    Pose bad = make_pose(0, 0);
    bad.rotation = {1.0, 0.0, 0.0, 2.0};
    CHECK_THROWS_AS(transform_to_agent_frame(bad, make_pose(1, 1)), std::invalid_argument);
    Pose reflection = make_pose(0, 0);
    reflection.rotation = {1.0, 0.0, 0.0, -1.0};  // det = -1
    CHECK_THROWS_AS(transform_to_agent_frame(make_pose(1, 1), reflection), std::invalid_argument);
}

TEST_CASE("rsu_vehicle_distance: 3-4-5 triangle and coincidence") {
    CHECK(rsu_vehicle_distance(make_pose(0, 0), make_pose(3, 4)) == doctest::Approx(5.0));
    CHECK(rsu_vehicle_distance(make_pose(7, 7, 1.0), make_pose(7, 7, 2.0)) == doctest::Approx(0.0));
}

TEST_CASE("rsu_vehicle_distance is rotation-invariant") {
    Rng rng(42);
    for (int k = 0; k < 8; ++k) {
        const Pose rsu = make_pose(1, 2, rng.uniform(0, 2 * M_PI));
        const Pose veh = make_pose(4, 6, rng.uniform(0, 2 * M_PI));
        CHECK(rsu_vehicle_distance(rsu, veh) == doctest::Approx(5.0).epsilon(1e-12));
    }
}

TEST_CASE("transform preserves norm and round-trips") {
    Rng rng(7);
    for (int k = 0; k < 50; ++k) {
        const Pose rsu = make_pose(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(0, 2 * M_PI));
        const Pose veh = make_pose(rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(0, 2 * M_PI));
        const Vec2 out = transform_to_agent_frame(rsu, veh);
        const double direct = (rsu.position - veh.position).norm();
        CHECK(out.norm() == doctest::Approx(direct).epsilon(1e-9));

        // inverse transform: R_0 R_i^T out + p_i recovers p_0
        const Vec2 back = rsu.rotation.mul(veh.rotation.transpose()).apply(out) + veh.position;
        CHECK(back.x == doctest::Approx(rsu.position.x).epsilon(1e-9));
        CHECK(back.y == doctest::Approx(rsu.position.y).epsilon(1e-9));
    }
}

TEST_CASE("distance symmetry and translation invariance") {
    Rng rng(11);
    for (int k = 0; k < 50; ++k) {
        const double ax = rng.uniform(-5, 5), ay = rng.uniform(-5, 5);
        const double bx = rng.uniform(-5, 5), by = rng.uniform(-5, 5);
        const double tx = rng.uniform(-100, 100), ty = rng.uniform(-100, 100);
        const double d1 = rsu_vehicle_distance(make_pose(ax, ay), make_pose(bx, by));
        const double d2 = rsu_vehicle_distance(make_pose(bx, by), make_pose(ax, ay));
        const double d3 = rsu_vehicle_distance(make_pose(ax + tx, ay + ty), make_pose(bx + tx, by + ty));
        CHECK(d1 == doctest::Approx(d2).epsilon(1e-12));
        CHECK(d1 == doctest::Approx(d3).epsilon(1e-9));
    }
}

TEST_CASE("frame_to_frame maps between agent frames consistently") {
    const Pose a = make_pose(2, 3, M_PI / 3);
    const Pose b = make_pose(-1, 5, -M_PI / 5);
    const Vec2 p{0.7, -1.9};
    const Vec2 in_b = frame_to_frame(a, b, p);
    const Vec2 back = frame_to_frame(b, a, in_b);
    CHECK(back.x == doctest::Approx(p.x).epsilon(1e-12));
    CHECK(back.y == doctest::Approx(p.y).epsilon(1e-12));
}
