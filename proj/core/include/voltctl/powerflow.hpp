#pragma once

#include <json.hpp>

#include "voltctl/grid.hpp"

namespace voltctl {

struct FlowOptions {
    double tol = 1e-8;  // on max |delta v| between sweeps
    int max_iter = 100;
};

/// Converged branch-flow operating point. Bus vectors exclude the substation
/// and follow the bus-major state layout; line vectors follow
/// RadialNetwork::lines (times 3 phases for three-phase networks).
struct FlowSolution {
    Eigen::VectorXd v;
    Eigen::VectorXd P;
    Eigen::VectorXd Q;
    Eigen::VectorXd l;
    int iterations = 0;
    double residual = 0.0;
};

/// Backward/forward sweep on the DistFlow equations with loss terms,
/// flat start from v0. p and q are per-bus injections (generation positive).
FlowSolution solve_distflow(const RadialNetwork& net, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                            const FlowOptions& opts = {});

/// Current-based sweep on complex phase voltages with 3x3 line impedances.
FlowSolution solve_distflow_threephase(const RadialNetwork& net, const Eigen::VectorXd& p,
                                       const Eigen::VectorXd& q, const FlowOptions& opts = {});

/// Dispatches on net.phase_model.
FlowSolution solve_flow(const RadialNetwork& net, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                        const FlowOptions& opts = {});

/// Reusable solver that keeps the topology of one network.
class FlowSolver {
  public:
    explicit FlowSolver(const RadialNetwork& net, FlowOptions opts = {});

    FlowSolution solve(const Eigen::VectorXd& p, const Eigen::VectorXd& q) const;
    const RadialNetwork& network() const { return net_; }
    const FlowOptions& options() const { return opts_; }

  private:
    FlowSolution solve_single(const Eigen::VectorXd& p, const Eigen::VectorXd& q) const;
    FlowSolution solve_three(const Eigen::VectorXd& p, const Eigen::VectorXd& q) const;

    RadialNetwork net_;
    FlowOptions opts_;
    Topology topo_;
};

nlohmann::json to_json(const FlowSolution& sol);

}  // namespace voltctl
