#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "pidtune/roa.hpp"

using namespace pidtune;

namespace {
Trajectory decay_traj(int n, double dt) {
    // x_tau = (1/2)^tau on the cart channel, everything else at the target.
    Trajectory t;
    for (int k = 0; k < n; ++k) {
        t.states.emplace_back(std::pow(0.5, k), 0, 0, 0);
        t.times.push_back(dt * k);
        if (k + 1 < n) t.controls.push_back(0.0);
    }
    return t;
}
} // namespace

TEST_CASE("lyapunov value: target trajectory and geometric decay") {
    Trajectory flat;
    for (int k = 0; k < 20; ++k) {
        flat.states.emplace_back(0.4, 0, 0, 0);
        flat.times.push_back(0.05 * k);
        if (k < 19) flat.controls.push_back(0.0);
    }
    const auto [v0, conv0] = lyapunov_value(flat, PlantState(0.4, 0, 0, 0), 0.05, 0.05);
    CHECK(v0 == doctest::Approx(0.0));
    CHECK(conv0);

    const Trajectory dec = decay_traj(40, 1.0);
    const auto [v, conv] = lyapunov_value(dec, PlantState(0, 0, 0, 0), 1.0, 0.05);
    // sum over tau of 4^-tau = 4/3; truncation after 40 terms is ~4^-40.
    CHECK(v == doctest::Approx(4.0 / 3.0).epsilon(1e-12));
    CHECK(conv);
}

TEST_CASE("lyapunov value is non-negative and detects non-convergence") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        Trajectory t;
        for (int k = 0; k < 15; ++k) {
            t.states.emplace_back(nd(rng), nd(rng), nd(rng), nd(rng));
            t.times.push_back(0.05 * k);
            if (k < 14) t.controls.push_back(0.0);
        }
        const auto [v, conv] = lyapunov_value(t, PlantState(0, 0, 0, 0), 0.05, 0.05);
        CHECK(v >= 0.0);
        (void)conv;
    }
    // A trajectory ending far from the target must not be flagged converged.
    Trajectory away = decay_traj(10, 0.05);
    for (auto& s : away.states) s.x += 1.0;
    const auto [v, conv] = lyapunov_value(away, PlantState(0, 0, 0, 0), 0.05, 0.05);
    CHECK(!conv);
    CHECK(v > 0.0);
}

TEST_CASE("sample_grid counts and symmetry") {
    const auto four = sample_grid(-0.6, 0.6, -2.0, 2.0, 2);
    CHECK(four.size() == 4);
    const auto grid = sample_grid(-0.6, 0.6, -2.0, 2.0, 41);
    CHECK(grid.size() == 41 * 41);
    // Symmetric ranges: for every point the negation is also on the grid.
    double worst = 1e9;
    for (const auto& p : grid) {
        double best = 1e9;
        for (const auto& q : grid) best = std::min(best, (p + q).norm());
        worst = std::min(worst, best);
        CHECK(best < 1e-12);
    }
    // Extremes included.
    double max_th = 0, max_thd = 0;
    for (const auto& p : grid) {
        max_th = std::max(max_th, std::abs(p[0]));
        max_thd = std::max(max_thd, std::abs(p[1]));
    }
    CHECK(max_th == doctest::Approx(0.6));
    CHECK(max_thd == doctest::Approx(2.0));
}

TEST_CASE("fit_lyapunov recovers an exact quadratic") {
    std::vector<LyapunovSample> samples;
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int k = 0; k < 40; ++k) {
        LyapunovSample s;
        s.theta0 = nd(rng);
        s.theta_dot0 = nd(rng);
        s.V = s.theta0 * s.theta0 + s.theta_dot0 * s.theta_dot0;
        s.converged = true;
        samples.push_back(s);
    }
    const LyapunovFit fit = fit_lyapunov(samples);
    Eigen::Matrix<double, 5, 1> expect;
    expect << 1, 0, 1, 0, 0;
    CHECK((fit.coeffs - expect).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(fit.r_squared > 0.999999);
    CHECK(fit.eval(0.3, -0.4) == doctest::Approx(0.25).epsilon(1e-8));
}

TEST_CASE("fit_lyapunov rejects an indefinite quadratic") {
    std::vector<LyapunovSample> samples;
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int k = 0; k < 40; ++k) {
        LyapunovSample s;
        s.theta0 = nd(rng);
        s.theta_dot0 = nd(rng);
        s.V = s.theta0 * s.theta0 - s.theta_dot0 * s.theta_dot0; // saddle
        s.converged = true;
        samples.push_back(s);
    }
    CHECK_THROWS(fit_lyapunov(samples));
}

TEST_CASE("level_set picks the largest certified level") {
    // V* = th^2 + thd^2; converged exactly inside radius 1.
    std::vector<LyapunovSample> samples;
    for (int i = -10; i <= 10; ++i)
        for (int j = -10; j <= 10; ++j) {
            LyapunovSample s;
            s.theta0 = 0.2 * i;
            s.theta_dot0 = 0.2 * j;
            s.V = s.theta0 * s.theta0 + s.theta_dot0 * s.theta_dot0;
            s.converged = s.V < 1.0;
            samples.push_back(s);
        }
    LyapunovFit fit;
    fit.coeffs << 1, 0, 1, 0, 0;
    fit.r_squared = 1.0;
    const auto [level, boundary] = level_set(fit, samples);

    // Largest converged V inside radius 1 on this grid.
    double expect = 0.0;
    for (const auto& s : samples)
        if (s.converged) expect = std::max(expect, s.V);
    CHECK(level == doctest::Approx(expect).epsilon(1e-12));

    // Maximality: every sample with V* <= level converged, and raising the
    // level to the next non-converged sample's V would break that.
    double next_bad = 1e18;
    for (const auto& s : samples) {
        if (s.V <= level) CHECK(s.converged);
        if (!s.converged) next_bad = std::min(next_bad, s.V);
    }
    CHECK(level < next_bad);

    REQUIRE(!boundary.empty());
    for (const auto& p : boundary)
        CHECK(fit.eval(p[0], p[1]) == doctest::Approx(level).epsilon(1e-6));
}

TEST_CASE("verify_boundary converges for a stabilizing PID on mild points") {
    PlantParams plant;
    PIDGains gains;
    gains.structure = PIDStructure::Coupled;
    gains.K.resize(1, 6);
    // Stabilizing gains on (x, theta) features, derived from an LQR solve of
    // the upright linearization mapped onto the error-feature layout.
    gains.K << -2.24, -24.33, 0.1, 0.05, -3.01, -4.95;
    gains.sigma = Eigen::VectorXd::Constant(1, 0.1);
    const std::vector<Eigen::Vector2d> pts = {{0.05, 0.0}, {-0.05, 0.0}, {0.0, 0.2}};
    const BoundaryReport rep = verify_boundary(plant, gains, PlantState(0, 0, 0, 0), {0, 2},
                                               pts, 200);
    CHECK(rep.converged.size() == pts.size());
    CHECK(rep.fraction_converged == doctest::Approx(1.0));

    // A wildly destabilizing gain flips the report.
    PIDGains bad = gains;
    bad.K << 0, 40.0, 0, 0, 0, 0;
    const BoundaryReport rep2 = verify_boundary(plant, bad, PlantState(0, 0, 0, 0), {0, 2},
                                                pts, 200);
    CHECK(rep2.fraction_converged < 1.0);
}
