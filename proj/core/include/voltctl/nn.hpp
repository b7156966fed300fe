#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace voltctl {

/// Fully connected network with tanh hidden layers and a linear output.
/// All weights live in one flat vector so optimizers and soft updates are
/// plain vector arithmetic. Batches are column-major: one sample per column.
class Mlp {
  public:
    Mlp() = default;
    /// sizes = {in, hidden..., out}. Glorot-uniform weights, zero biases.
    Mlp(std::vector<std::size_t> sizes, std::mt19937_64& rng);

    struct Tape {
        std::vector<Eigen::MatrixXd> activations;  // per layer, post-nonlinearity; [0] is the input
    };

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, Tape* tape = nullptr) const;
    /// Back-propagates dL/dout through the recorded pass. Adds dL/dtheta into
    /// `grad` (if non-null, sized like parameters()) and returns dL/dx.
    Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& d_out, Eigen::VectorXd* grad) const;

    double operator()(const Eigen::VectorXd& x) const { return forward(x)(0, 0); }

    const Eigen::VectorXd& parameters() const { return theta_; }
    Eigen::VectorXd& parameters() { return theta_; }
    const std::vector<std::size_t>& sizes() const { return sizes_; }
    std::size_t input_size() const { return sizes_.front(); }
    std::size_t output_size() const { return sizes_.back(); }

    bool operator==(const Mlp& o) const { return sizes_ == o.sizes_ && theta_ == o.theta_; }

  private:
    Eigen::Map<const Eigen::MatrixXd> weight(std::size_t layer) const;
    Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

    std::vector<std::size_t> sizes_;
    std::vector<std::size_t> offsets_;  // start of W_k in theta_; b_k follows it
    Eigen::VectorXd theta_;
};

/// theta_target <- tau theta + (1 - tau) theta_target
void soft_update(Eigen::VectorXd& target, const Eigen::VectorXd& source, double tau);

class Adam {
  public:
    Adam() = default;
    Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// Descent step theta -= lr * m_hat / (sqrt(v_hat) + eps).
    void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);
    double learning_rate() const { return lr_; }
    long steps() const { return t_; }

  private:
    double lr_ = 1e-3;
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    long t_ = 0;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
};

nlohmann::json mlp_to_json(const Mlp& net);
Mlp mlp_from_json(const nlohmann::json& doc);

}  // namespace voltctl
