#pragma once

#include <complex>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace voltctl {

using BusId = int;
using Complex = std::complex<double>;
using Matrix3c = Eigen::Matrix<Complex, 3, 3>;

enum class PhaseModel { single, three };

/// A branch (i, j). Single-phase lines carry (r, x); three-phase lines carry
/// the 3x3 phase impedance matrix z. All values are per-unit.
struct Line {
    BusId from = 0;
    BusId to = 0;
    double r = 0.0;
    double x = 0.0;
    Matrix3c z = Matrix3c::Zero();
};

/// Bounds on the squared voltage magnitude v = |V|^2.
struct VoltageLimits {
    double lower = 0.95;
    double upper = 1.05;
};

struct PowerBase {
    double s_mva = 1.0;
    double v_kv = 1.0;

    double z_base_ohm() const { return v_kv * v_kv / s_mva; }
};

/// Tree-shaped feeder rooted at bus 0 (the substation). Buses are numbered
/// 0..n; `limits` is indexed by bus id (entry 0 is unused).
struct RadialNetwork {
    PhaseModel phase_model = PhaseModel::single;
    PowerBase base;
    double v0 = 1.0;
    std::vector<VoltageLimits> limits;
    std::vector<Line> lines;
    std::vector<BusId> controlled;

    /// Number of non-root buses.
    std::size_t bus_count() const { return limits.empty() ? 0 : limits.size() - 1; }
    std::size_t phases() const { return phase_model == PhaseModel::three ? 3 : 1; }
    /// Length of v, p and q vectors: n (single-phase) or 3n (three-phase), bus-major.
    std::size_t state_size() const { return bus_count() * phases(); }
    std::size_t state_index(BusId bus, int phase = 0) const {
        return static_cast<std::size_t>(bus - 1) * phases() + static_cast<std::size_t>(phase);
    }
};

/// Parent pointers and a root-first ordering of a validated radial network.
struct Topology {
    std::vector<BusId> parent;           // parent[0] == -1
    std::vector<int> parent_line;        // index into RadialNetwork::lines, -1 for the root
    std::vector<BusId> order;            // breadth-first from the root
    std::vector<std::vector<BusId>> children;
};

/// Checks that the lines form a spanning tree rooted at bus 0, that impedances
/// and limits are valid, and that controlled buses exist. Throws
/// StructuralError (topology) or SchemaError (values).
Topology build_topology(const RadialNetwork& net);
void validate(const RadialNetwork& net);

/// For every bus, the indices of the lines on the unique root-to-bus path,
/// ordered from the root outwards. Entry 0 is empty.
std::vector<std::vector<std::size_t>> build_path_sets(const RadialNetwork& net);

struct PdCertificate {
    bool pd = false;
    double min_eig = 0.0;
};

/// Dense LinDistFlow sensitivities: v = R p + X q + v0 1.
struct GridMatrices {
    PhaseModel phase_model = PhaseModel::single;
    Eigen::MatrixXd R;
    Eigen::MatrixXd X;
    Eigen::MatrixXd X_inv;
    PdCertificate x_certificate;

    Eigen::Index size() const { return X.rows(); }
};

/// Builds R and X by summing 2r (2x) over the common path of each bus pair.
/// Three-phase networks use the symmetric part of the rotated impedances
/// diag(alpha^H) Z diag(alpha). Throws CertificateError when X is not
/// positive definite.
GridMatrices build_rx_matrices(const RadialNetwork& net);

/// diag(alpha^H) Z diag(alpha) with alpha = [1, a, a^2], a = exp(-j 2 pi / 3).
Matrix3c hat_impedance(const Matrix3c& z);

/// Minimum eigenvalue test. Throws std::invalid_argument if M is not
/// symmetric to 1e-10.
PdCertificate check_positive_definite(const Eigen::MatrixXd& m);

/// Row-wise strict diagonal dominance of the per-line reactance matrix
///   1/2 [[2x_aa, -x_ab, x_ac], [-x_ab, 2x_bb, x_bc], [-x_ac, -x_bc, 2x_cc]]
/// with a positive diagonal.
bool check_diagonal_dominance(const Line& line);

/// R p + v0 1, the part of the voltage the inverters cannot move.
Eigen::VectorXd environment_voltage(const GridMatrices& gm, const Eigen::VectorXd& p, double v0);
Eigen::VectorXd lindistflow_voltage(const GridMatrices& gm, const Eigen::VectorXd& p,
                                    const Eigen::VectorXd& q, double v0);

struct VoltageState {
    Eigen::VectorXd v;
    Eigen::VectorXd q;
    long t = 0;
};

/// One zero-order-hold step of v' = v + dt X u, q' = q + dt u.
VoltageState step_dynamics(const GridMatrices& gm, const VoltageState& s, const Eigen::VectorXd& u,
                           double dt);

/// Permutation T with v_bus_major = T v_phase_major for a three-phase system
/// of n buses.
Eigen::PermutationMatrix<Eigen::Dynamic> phase_major_permutation(std::size_t n_buses);

/// One controllable scalar: a (bus, phase) pair with an inverter.
struct ControlChannel {
    BusId bus = 0;
    int phase = 0;
    std::size_t state_index = 0;
    VoltageLimits limits;
};

std::vector<ControlChannel> control_channels(const RadialNetwork& net);

/// Principal submatrix M[idx, idx] for the given channels.
Eigen::MatrixXd channel_submatrix(const Eigen::MatrixXd& m, const std::vector<ControlChannel>& ch);
Eigen::VectorXd channel_values(const Eigen::VectorXd& v, const std::vector<ControlChannel>& ch);

}  // namespace voltctl
