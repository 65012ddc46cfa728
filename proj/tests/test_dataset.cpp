#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pidtune/dataset.hpp"

using namespace pidtune;

namespace {
// Trajectory with prescribed states on channel 0 (cart position), everything
// else zero; controls are just the step index.
Trajectory traj_from_x(const std::vector<double>& xs, double dt) {
    Trajectory t;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        t.states.emplace_back(xs[k], 0, 0, 0);
        t.times.push_back(dt * static_cast<double>(k));
    }
    for (std::size_t k = 0; k + 1 < xs.size(); ++k)
        t.controls.push_back(static_cast<double>(k));
    return t;
}
} // namespace

TEST_CASE("zero error trajectory gives all-zero features") {
    const Trajectory t = traj_from_x({0.3, 0.3, 0.3, 0.3}, 0.1);
    const auto recs = compute_errors(t, PlantState(0.3, 0, 0, 0), {0, 2}, 0.1);
    REQUIRE(recs.size() == 4);
    for (const ErrorRecord& r : recs) CHECK(r.row().norm() == doctest::Approx(0.0));
}

TEST_CASE("hand telescoping: constant e-series") {
    // e = x_des - x = 1 at every step, dt = 0.1.
    const Trajectory t = traj_from_x({-1, -1, -1}, 0.1);
    const auto recs = compute_errors(t, PlantState(0, 0, 0, 0), {0}, 0.1);
    REQUIRE(recs.size() == 3);
    const double expect_i[] = {0.1, 0.2, 0.3};
    for (int k = 0; k < 3; ++k) {
        CHECK(recs[k].e[0] == doctest::Approx(1.0));
        CHECK(recs[k].i[0] == doctest::Approx(expect_i[k]).epsilon(1e-12));
        CHECK(recs[k].d[0] == doctest::Approx(0.0));
    }
}

TEST_CASE("hand differences: spike e-series") {
    // e-series (0, 1, 0) with dt = 0.5 -> derivatives (0, 2, -2).
    const Trajectory t = traj_from_x({0, -1, 0}, 0.5);
    const auto recs = compute_errors(t, PlantState(0, 0, 0, 0), {0}, 0.5);
    REQUIRE(recs.size() == 3);
    CHECK(recs[0].d[0] == doctest::Approx(0.0));
    CHECK(recs[1].d[0] == doctest::Approx(2.0));
    CHECK(recs[2].d[0] == doctest::Approx(-2.0));
}

TEST_CASE("feature row layout is [e | i | d] across channels") {
    const Trajectory t = traj_from_x({-1, -1}, 0.1);
    const auto recs = compute_errors(t, PlantState(0, 0, 0.2, 0), {0, 2}, 0.1);
    const Eigen::VectorXd row = recs[1].row();
    REQUIRE(row.size() == 6);
    CHECK(row[0] == doctest::Approx(1.0));  // e_x
    CHECK(row[1] == doctest::Approx(0.2));  // e_theta
    CHECK(row[2] == doctest::Approx(0.2));  // i_x after two dt-steps
    CHECK(row[3] == doctest::Approx(0.04)); // i_theta
    CHECK(row[4] == doctest::Approx(0.0));  // d_x
    CHECK(row[5] == doctest::Approx(0.0));  // d_theta
}

TEST_CASE("augment concatenates and resets per trajectory") {
    const Trajectory a = traj_from_x({0, -1, 0, 1}, 0.1);  // 3 controls
    const Trajectory b = traj_from_x({2, 2, 2}, 0.1);      // 2 controls
    const AugmentedDataset data = augment({a, b}, PlantState(0, 0, 0, 0), {0}, 0.1);
    REQUIRE(data.rows() == 5);
    CHECK(data.features.cols() == 3);
    CHECK(data.controls.cols() == 1);
    // Row 3 is the first record of trajectory b: derivative must restart at 0,
    // integral restarts from b's own error.
    CHECK(data.features(3, 0) == doctest::Approx(-2.0));
    CHECK(data.features(3, 1) == doctest::Approx(-0.2));
    CHECK(data.features(3, 2) == doctest::Approx(0.0));
    CHECK(data.source == std::vector<int>{0, 0, 0, 1, 1});
    // Feature row k pairs with control u_k.
    for (int k = 0; k < 3; ++k) CHECK(data.controls(k, 0) == doctest::Approx(k));
}

TEST_CASE("single-step trajectory gives one row with zero derivative") {
    const Trajectory t = traj_from_x({-1, 0}, 0.1);
    const AugmentedDataset data = augment({t}, PlantState(0, 0, 0, 0), {0}, 0.1);
    REQUIRE(data.rows() == 1);
    CHECK(data.features(0, 2) == doctest::Approx(0.0));
}

TEST_CASE("gp_training_pairs counts and round trip") {
    Trajectory t;
    const double dt = 0.05;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.3);
    t.states.emplace_back(0, 0, 0.1, 0);
    t.times.push_back(0);
    for (int k = 0; k < 12; ++k) {
        const Vec4 prev = t.states.back().vec();
        t.states.emplace_back(Vec4(prev + Vec4(n(rng), n(rng), n(rng), n(rng))));
        t.controls.push_back(n(rng));
        t.times.push_back(dt * (k + 1));
    }
    const GpPairs pairs = gp_training_pairs({t, t});
    REQUIRE(pairs.inputs.rows() == 24);
    CHECK(pairs.inputs.cols() == 5);
    CHECK(pairs.targets.cols() == 4);
    for (int k = 0; k < 12; ++k) {
        const Vec4 rebuilt =
            pairs.inputs.row(k).head<4>().transpose() + pairs.targets.row(k).transpose();
        CHECK((rebuilt - t.states[k + 1].vec()).norm() == doctest::Approx(0.0));
        CHECK(pairs.inputs(k, 4) == doctest::Approx(t.controls[k]));
    }

    const Trajectory flat = traj_from_x({1, 1, 1}, dt);
    const GpPairs zero = gp_training_pairs({flat});
    CHECK(zero.targets.cwiseAbs().maxCoeff() == doctest::Approx(0.0));
}
