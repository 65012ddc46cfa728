#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "pidtune/dataset.hpp"
#include "pidtune/distill.hpp"

using namespace pidtune;

namespace {

AugmentedDataset make_data(const Eigen::MatrixXd& features, const Eigen::MatrixXd& controls) {
    AugmentedDataset d;
    d.features = features;
    d.controls = controls;
    d.channels = std::vector<int>(static_cast<std::size_t>(features.cols() / 3), 0);
    d.dt = 0.05;
    d.source = std::vector<int>(static_cast<std::size_t>(features.rows()), 0);
    return d;
}

AugmentedDataset rand_dataset(int n, int n_channels, int n_inputs, std::mt19937_64& rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::MatrixXd f(n, 3 * n_channels), u(n, n_inputs);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 3 * n_channels; ++j) f(i, j) = nd(rng);
        for (int j = 0; j < n_inputs; ++j) u(i, j) = nd(rng);
    }
    return make_data(f, u);
}

PIDGains coupled_gains(const Eigen::RowVectorXd& k, double sigma) {
    PIDGains g;
    g.structure = PIDStructure::Coupled;
    g.K = k;
    g.sigma = Eigen::VectorXd::Constant(1, sigma);
    return g;
}

} // namespace

TEST_CASE("nll hand dataset: zero residuals give n/2 log(2 pi)") {
    Eigen::MatrixXd f(3, 6);
    f << 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 0, 0, 0;
    Eigen::MatrixXd u(3, 1);
    u << 1, 1, 2;
    const AugmentedDataset d = make_data(f, u);
    Eigen::RowVectorXd k(6);
    k << 1, 1, 0, 0, 0, 0;
    const double nll = pid_nll(d, coupled_gains(k, 1.0));
    CHECK(nll == doctest::Approx(3 * 0.5 * std::log(2 * M_PI)).epsilon(1e-12));
    CHECK(nll == doctest::Approx(2.75682).epsilon(1e-5));
}

TEST_CASE("nll zero-residual case and sigma doubling") {
    std::mt19937_64 rng(3);
    AugmentedDataset d = rand_dataset(40, 2, 1, rng);
    Eigen::RowVectorXd k(6);
    k << 2, -1, 0.5, 0.2, -0.3, 1.5;
    d.controls = d.features * k.transpose();
    const double s = 0.7;
    const double nll = pid_nll(d, coupled_gains(k, s));
    CHECK(nll == doctest::Approx(40 * 0.5 * std::log(2 * M_PI * s * s)).epsilon(1e-12));
    const double nll2 = pid_nll(d, coupled_gains(k, 2 * s));
    CHECK(nll2 - nll == doctest::Approx(40 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("nll rejects non-positive sigma") {
    std::mt19937_64 rng(5);
    const AugmentedDataset d = rand_dataset(5, 2, 1, rng);
    Eigen::RowVectorXd k = Eigen::RowVectorXd::Zero(6);
    CHECK_THROWS(pid_nll(d, coupled_gains(k, 0.0)));
}

TEST_CASE("gradient matches central finite differences") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        const bool decoupled = trial % 2 == 1;
        const bool learn_sigma = trial % 3 == 0;
        const int n_inputs = decoupled ? 2 : 1;
        const AugmentedDataset d = rand_dataset(25, 2, n_inputs, rng);
        PIDGains g = random_gains(decoupled ? PIDStructure::Decoupled : PIDStructure::Coupled,
                                  2, n_inputs, 0.8, rng);
        const Eigen::VectorXd grad = pid_nll_gradient(d, g, learn_sigma);

        // Flatten the free parameters the same way the gradient does.
        std::vector<std::pair<int, int>> free;
        for (Eigen::Index r = 0; r < g.K.rows(); ++r)
            for (Eigen::Index c = 0; c < g.K.cols(); ++c)
                if (g.entry_free(r, c)) free.emplace_back(r, c);
        const std::size_t expect =
            free.size() + (learn_sigma ? static_cast<std::size_t>(n_inputs) : 0);
        REQUIRE(grad.size() == static_cast<Eigen::Index>(expect));

        const double h = 1e-6;
        for (std::size_t p = 0; p < free.size(); ++p) {
            PIDGains gp = g, gm = g;
            gp.K(free[p].first, free[p].second) += h;
            gm.K(free[p].first, free[p].second) -= h;
            const double fd = (pid_nll(d, gp) - pid_nll(d, gm)) / (2 * h);
            CHECK(std::abs(grad[p] - fd) < 1e-6 * (1.0 + std::abs(fd)));
        }
        if (learn_sigma) {
            for (int m = 0; m < n_inputs; ++m) {
                PIDGains gp = g, gm = g;
                gp.sigma[m] *= std::exp(h);
                gm.sigma[m] *= std::exp(-h);
                const double fd = (pid_nll(d, gp) - pid_nll(d, gm)) / (2 * h);
                CHECK(std::abs(grad[free.size() + m] - fd) < 1e-6 * (1.0 + std::abs(fd)));
            }
        }
    }
}

TEST_CASE("gradient vanishes at the closed-form least-squares gains") {
    std::mt19937_64 rng(11);
    for (auto structure : {PIDStructure::Coupled, PIDStructure::Decoupled}) {
        const int n_inputs = structure == PIDStructure::Decoupled ? 2 : 1;
        const AugmentedDataset d = rand_dataset(60, 2, n_inputs, rng);
        const PIDGains ls = closed_form_gains(d, structure);
        const Eigen::VectorXd grad = pid_nll_gradient(d, ls, false);
        CHECK(grad.norm() < 1e-8 * d.features.rows());
    }
}

TEST_CASE("zero dataset gives zero gradient") {
    const AugmentedDataset d =
        make_data(Eigen::MatrixXd::Zero(10, 6), Eigen::MatrixXd::Zero(10, 1));
    std::mt19937_64 rng(13);
    const PIDGains g = random_gains(PIDStructure::Coupled, 2, 1, 1.0, rng);
    CHECK(pid_nll_gradient(d, g, false).norm() == doctest::Approx(0.0));
}

TEST_CASE("closed-form gains: hand scalar case and exact recovery") {
    // u = 2 e with e = (1, 2, 3) -> K_p = 2, everything else 0.
    Eigen::MatrixXd f = Eigen::MatrixXd::Zero(3, 3);
    f.col(0) << 1, 2, 3;
    Eigen::MatrixXd u(3, 1);
    u << 2, 4, 6;
    const PIDGains g = closed_form_gains(make_data(f, u), PIDStructure::Coupled);
    // The two all-zero feature columns make the system rank deficient, so the
    // ridge fallback perturbs the solution at the 1e-9 scale.
    CHECK(g.K(0, 0) == doctest::Approx(2.0).epsilon(1e-6));

    std::mt19937_64 rng(17);
    AugmentedDataset d = rand_dataset(50, 2, 1, rng);
    Eigen::RowVectorXd k(6);
    k << 1.2, -0.7, 0.3, 0.9, -2.0, 0.1;
    d.controls = d.features * k.transpose();
    const PIDGains rec = closed_form_gains(d, PIDStructure::Coupled);
    CHECK((rec.K.row(0).transpose() - k.transpose()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("decoupled structure keeps the zero pattern") {
    std::mt19937_64 rng(19);
    const AugmentedDataset d = rand_dataset(50, 2, 2, rng);
    const PIDGains ls = closed_form_gains(d, PIDStructure::Decoupled);
    const DistillResult res = minimize_kld(d, random_gains(PIDStructure::Decoupled, 2, 2, 0.5,
                                                           rng),
                                           DistillConfig{});
    for (Eigen::Index r = 0; r < 2; ++r)
        for (Eigen::Index c = 0; c < 6; ++c)
            if (!ls.entry_free(r, c)) {
                CHECK(ls.K(r, c) == 0.0);
                CHECK(res.gains.K(r, c) == 0.0);
            }
}

TEST_CASE("minimize_kld matches the least-squares oracle") {
    std::mt19937_64 rng(23);
    std::normal_distribution<double> nd(0.0, 1.0);
    AugmentedDataset d = rand_dataset(120, 2, 1, rng);
    Eigen::RowVectorXd k(6);
    k << 3.0, -12.0, 0.4, 1.1, -0.8, -2.5;
    d.controls = d.features * k.transpose();
    for (int i = 0; i < d.controls.rows(); ++i) d.controls(i, 0) += 0.1 * nd(rng);

    const PIDGains oracle = closed_form_gains(d, PIDStructure::Coupled);
    PIDGains g0 = random_gains(PIDStructure::Coupled, 2, 1, 1.0, rng);
    g0.sigma = oracle.sigma; // sigma held fixed for the comparison
    DistillConfig cfg;
    const DistillResult res = minimize_kld(d, g0, cfg);

    CHECK(res.converged);
    CHECK(res.iterations <= 1000);
    const double rel =
        (res.gains.K - oracle.K).norm() / std::max(1.0, oracle.K.norm());
    CHECK(rel < 1e-3);
    for (std::size_t t = 1; t < res.trace.size(); ++t)
        CHECK(res.trace[t] <= res.trace[t - 1] + 1e-12);
}

TEST_CASE("kde normalization, peak location and analytic-normal oracle") {
    std::mt19937_64 rng(29);
    std::normal_distribution<double> nd(0.0, 1.0);

    GridSpec spec;
    spec.a_min = -4;
    spec.a_max = 4;
    spec.b_min = -4;
    spec.b_max = 4;
    spec.na = 60;
    spec.nb = 60;

    std::vector<double> a, b;
    for (int k = 0; k < 10000; ++k) {
        a.push_back(nd(rng));
        b.push_back(nd(rng));
    }
    const DensityGrid g = kde_joint(a, b, spec);
    CHECK(g.density.sum() * spec.cell_area() == doctest::Approx(1.0).epsilon(1e-6));

    double sup = 0.0;
    for (int i = 0; i < spec.na; ++i)
        for (int j = 0; j < spec.nb; ++j) {
            const double x = spec.a_center(i), y = spec.b_center(j);
            const double pdf = std::exp(-0.5 * (x * x + y * y)) / (2 * M_PI);
            sup = std::max(sup, std::abs(g.density(i, j) - pdf));
        }
    CHECK(sup < 0.05);

    // Identical samples: bandwidth floor applies and the peak sits on them.
    const std::vector<double> ca(50, 1.0), cb(50, -2.0);
    const DensityGrid cl = kde_joint(ca, cb, spec);
    Eigen::Index pi, pj;
    cl.density.maxCoeff(&pi, &pj);
    CHECK(std::abs(cl.spec.a_center(static_cast<int>(pi)) - 1.0) <= 8.0 / 60 + 1e-12);
    CHECK(std::abs(cl.spec.b_center(static_cast<int>(pj)) + 2.0) <= 8.0 / 60 + 1e-12);
}

TEST_CASE("discrete KLD identity, hand value and non-negativity") {
    Eigen::MatrixXd p(1, 2), q(1, 2);
    p << 0.5, 0.5;
    q << 0.25, 0.75;
    CHECK(kld_discrete(p, p) == doctest::Approx(0.0));
    const double expect = 0.5 * std::log(2.0) + 0.5 * std::log(2.0 / 3.0);
    CHECK(kld_discrete(p, q) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(kld_discrete(p, q) == doctest::Approx(0.14384).epsilon(1e-4));

    std::mt19937_64 rng(31);
    std::uniform_real_distribution<double> ud(0.01, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::MatrixXd a(4, 4), b(4, 4);
        for (int i = 0; i < 16; ++i) {
            a(i / 4, i % 4) = ud(rng);
            b(i / 4, i % 4) = ud(rng);
        }
        a /= a.sum();
        b /= b.sum();
        CHECK(kld_discrete(a, b) >= -1e-12);
    }
}

TEST_CASE("pid_control telescoping and zero case") {
    PIDGains g;
    g.structure = PIDStructure::Coupled;
    g.K = Eigen::RowVectorXd::Zero(6);
    g.sigma = Eigen::VectorXd::Constant(1, 0.1);
    PidOptions opts;
    opts.u_max = 100.0;

    PidControllerState st;
    Eigen::VectorXd e = Eigen::VectorXd::Zero(2);
    CHECK(pid_control(g, st, e, 0.05, opts)[0] == doctest::Approx(0.0));

    // K_I-only on channel 0: u after k steps of constant error c is K_I c k dt.
    g.K(0, 2) = 1.7;
    PidControllerState st2;
    e << 0.3, 0.0;
    for (int k = 1; k <= 10; ++k) {
        const double u = pid_control(g, st2, e, 0.05, opts)[0];
        CHECK(u == doctest::Approx(1.7 * 0.3 * k * 0.05).epsilon(1e-12));
    }
}

TEST_CASE("offline features replayed online reproduce the applied controls") {
    PlantParams plant;
    std::mt19937_64 rng(37);
    PIDGains g = random_gains(PIDStructure::Coupled, 2, 1, 0.5, rng);
    g.K << -2.0, -25.0, -0.5, -1.0, -2.0, -3.0;
    const PlantState x_des(0, 0, 0, 0);
    const std::vector<int> channels = {0, 2};
    PidOptions opts;
    opts.u_max = plant.u_max;
    const Controller pid = make_pid_controller(g, x_des, channels, plant.dt, opts);
    const Trajectory traj =
        rollout(pid, PlantState(0.1, 0, 0.1, 0), 60, plant, std::nullopt, 9);

    const AugmentedDataset offline = augment({traj}, x_des, channels, plant.dt);
    REQUIRE(offline.rows() == 60);
    for (int k = 0; k < 60; ++k) {
        const double u = g.K.row(0).dot(offline.features.row(k));
        const double clamped = std::clamp(u, -plant.u_max, plant.u_max);
        CHECK(traj.controls[k] == doctest::Approx(clamped).epsilon(1e-10));
    }
}

TEST_CASE("expert data collection contracts") {
    std::mt19937_64 rng(41);
    std::normal_distribution<double> nd(0.0, 1.0);
    PolicyParams pol;
    pol.centers.resize(6, 4);
    pol.weights.resize(6);
    for (int i = 0; i < 6; ++i) {
        for (int j = 0; j < 4; ++j) pol.centers(i, j) = 0.3 * nd(rng);
        pol.weights[i] = 0.2 * nd(rng);
    }
    pol.lengthscales = Eigen::Vector4d(1, 2, 0.3, 1);
    pol.u_max = 10.0;

    ExpertConfig cfg;
    cfg.horizon = 30;
    cfg.randomize_params = false;
    const ExpertData one = collect_expert_data(cfg, pol, 1, 77);
    CHECK(one.data.rows() == 30);
    const ExpertData again = collect_expert_data(cfg, pol, 1, 77);
    CHECK((one.data.features - again.data.features).cwiseAbs().maxCoeff() ==
          doctest::Approx(0.0));
    const ExpertData many = collect_expert_data(cfg, pol, 5, 78);
    CHECK(many.data.rows() == 150);
}

TEST_CASE("gains save/load round trip with pattern enforcement") {
    std::mt19937_64 rng(43);
    PIDGains g = random_gains(PIDStructure::Decoupled, 2, 2, 0.4, rng);
    g.save("gains_roundtrip.json");
    const PIDGains back = PIDGains::load("gains_roundtrip.json");
    CHECK(back.structure == PIDStructure::Decoupled);
    CHECK((g.K - back.K).cwiseAbs().maxCoeff() == doctest::Approx(0.0));
    CHECK((g.sigma - back.sigma).norm() == doctest::Approx(0.0));
}
