#include "pidtune/dataset.hpp"

#include <fstream>
#include <iomanip>

namespace pidtune {

Eigen::VectorXd ErrorRecord::row() const {
    const Eigen::Index c = e.size();
    Eigen::VectorXd out(3 * c);
    out.segment(0, c) = e;
    out.segment(c, c) = i;
    out.segment(2 * c, c) = d;
    return out;
}

std::vector<ErrorRecord> compute_errors(const Trajectory& traj, const PlantState& x_des,
                                        const std::vector<int>& channels, double dt) {
    if (channels.empty()) throw std::invalid_argument("compute_errors: no channels");
    if (dt <= 0) throw std::invalid_argument("compute_errors: dt must be positive");
    for (int c : channels)
        if (c < 0 || c > 3)
            throw std::invalid_argument("compute_errors: channel index out of range");

    const Eigen::Index C = static_cast<Eigen::Index>(channels.size());
    const Vec4 des = x_des.vec();

    std::vector<ErrorRecord> records;
    records.reserve(traj.states.size());
    Eigen::VectorXd integral = Eigen::VectorXd::Zero(C);
    Eigen::VectorXd prev_e;
    for (const PlantState& s : traj.states) {
        const Vec4 v = s.vec();
        ErrorRecord r;
        r.e.resize(C);
        for (Eigen::Index k = 0; k < C; ++k) r.e[k] = des[channels[k]] - v[channels[k]];
        integral += dt * r.e;
        r.i = integral;
        if (prev_e.size() == 0) prev_e = r.e; // e_{-1} := e_0
        r.d = (r.e - prev_e) / dt;
        prev_e = r.e;
        records.push_back(std::move(r));
    }
    return records;
}

AugmentedDataset augment(const std::vector<Trajectory>& trajectories, const PlantState& x_des,
                         const std::vector<int>& channels, double dt) {
    if (trajectories.empty()) throw std::invalid_argument("augment: no trajectories");

    Eigen::Index total = 0;
    for (const Trajectory& t : trajectories) total += static_cast<Eigen::Index>(t.steps());
    if (total == 0) throw std::invalid_argument("augment: trajectories carry no transitions");

    const Eigen::Index C = static_cast<Eigen::Index>(channels.size());
    AugmentedDataset data;
    data.features.resize(total, 3 * C);
    data.controls.resize(total, 1);
    data.channels = channels;
    data.dt = dt;
    data.source.reserve(total);

    Eigen::Index row = 0;
    for (std::size_t ti = 0; ti < trajectories.size(); ++ti) {
        const Trajectory& traj = trajectories[ti];
        const auto records = compute_errors(traj, x_des, channels, dt);
        // u_tau pairs with the features available when it was chosen.
        for (std::size_t k = 0; k < traj.controls.size(); ++k) {
            data.features.row(row) = records[k].row().transpose();
            data.controls(row, 0) = traj.controls[k];
            data.source.push_back(static_cast<int>(ti));
            ++row;
        }
    }
    if (!data.features.allFinite() || !data.controls.allFinite())
        throw std::runtime_error("augment: non-finite entries in dataset");
    return data;
}

GpPairs gp_training_pairs(const std::vector<Trajectory>& trajectories) {
    Eigen::Index total = 0;
    for (const Trajectory& t : trajectories) total += static_cast<Eigen::Index>(t.steps());
    if (total == 0) throw std::invalid_argument("gp_training_pairs: no transitions");

    GpPairs pairs;
    pairs.inputs.resize(total, 5);
    pairs.targets.resize(total, 4);
    Eigen::Index row = 0;
    for (const Trajectory& traj : trajectories) {
        for (std::size_t k = 0; k < traj.controls.size(); ++k) {
            const Vec4 x = traj.states[k].vec();
            pairs.inputs.row(row) << x[0], x[1], x[2], x[3], traj.controls[k];
            pairs.targets.row(row) = (traj.states[k + 1].vec() - x).transpose();
            ++row;
        }
    }
    return pairs;
}

void write_dataset_csv(const AugmentedDataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << std::setprecision(17);
    out << "e_x,e_theta,i_x,i_theta,d_x,d_theta,u\n";
    for (Eigen::Index r = 0; r < data.rows(); ++r) {
        for (Eigen::Index c = 0; c < data.features.cols(); ++c)
            out << data.features(r, c) << ',';
        for (Eigen::Index c = 0; c < data.controls.cols(); ++c) {
            out << data.controls(r, c);
            if (c + 1 < data.controls.cols()) out << ',';
        }
        out << '\n';
    }
}

} // namespace pidtune
