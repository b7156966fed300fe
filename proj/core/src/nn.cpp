#include "voltctl/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "voltctl/errors.hpp"

namespace voltctl {

Mlp::Mlp(std::vector<std::size_t> sizes, std::mt19937_64& rng) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output sizes");
    std::size_t n = 0;
    for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
        if (sizes_[k] == 0 || sizes_[k + 1] == 0) throw std::invalid_argument("Mlp: layer sizes must be > 0");
        offsets_.push_back(n);
        n += sizes_[k] * sizes_[k + 1] + sizes_[k + 1];
    }
    theta_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k + 1 < sizes_.size(); ++k) {
        const double a = std::sqrt(6.0 / static_cast<double>(sizes_[k] + sizes_[k + 1]));
        std::uniform_real_distribution<double> dist(-a, a);
        const std::size_t nw = sizes_[k] * sizes_[k + 1];
        for (std::size_t i = 0; i < nw; ++i) theta_(static_cast<Eigen::Index>(offsets_[k] + i)) = dist(rng);
    }
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(std::size_t k) const {
    return {theta_.data() + offsets_[k], static_cast<Eigen::Index>(sizes_[k + 1]),
            static_cast<Eigen::Index>(sizes_[k])};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(std::size_t k) const {
    return {theta_.data() + offsets_[k] + sizes_[k] * sizes_[k + 1], static_cast<Eigen::Index>(sizes_[k + 1])};
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x, Tape* tape) const {
    if (x.rows() != static_cast<Eigen::Index>(input_size()))
        throw std::invalid_argument("Mlp::forward: input has wrong dimension");
    const std::size_t layers = sizes_.size() - 1;
    if (tape) {
        tape->activations.clear();
        tape->activations.push_back(x);
    }
    Eigen::MatrixXd h = x;
    for (std::size_t k = 0; k < layers; ++k) {
        Eigen::MatrixXd z = weight(k) * h;
        z.colwise() += bias(k);
        if (k + 1 < layers) z = z.array().tanh().matrix();
        h = std::move(z);
        if (tape) tape->activations.push_back(h);
    }
    return h;
}

Eigen::MatrixXd Mlp::backward(const Tape& tape, const Eigen::MatrixXd& d_out, Eigen::VectorXd* grad) const {
    const std::size_t layers = sizes_.size() - 1;
    if (tape.activations.size() != layers + 1) throw std::invalid_argument("Mlp::backward: tape does not match");
    if (grad && grad->size() != theta_.size()) *grad = Eigen::VectorXd::Zero(theta_.size());
    Eigen::MatrixXd delta = d_out;  // dL/dz of the current layer
    for (std::size_t k = layers; k-- > 0;) {
        if (k + 1 < layers) delta = delta.cwiseProduct((1.0 - tape.activations[k + 1].array().square()).matrix());
        if (grad) {
            const Eigen::MatrixXd& a = tape.activations[k];
            Eigen::Map<Eigen::MatrixXd> gw(grad->data() + offsets_[k], static_cast<Eigen::Index>(sizes_[k + 1]),
                                           static_cast<Eigen::Index>(sizes_[k]));
            Eigen::Map<Eigen::VectorXd> gb(grad->data() + offsets_[k] + sizes_[k] * sizes_[k + 1],
                                           static_cast<Eigen::Index>(sizes_[k + 1]));
            gw.noalias() += delta * a.transpose();
            gb.noalias() += delta.rowwise().sum();
        }
        delta = weight(k).transpose() * delta;
    }
    return delta;
}

void soft_update(Eigen::VectorXd& target, const Eigen::VectorXd& source, double tau) {
    if (target.size() != source.size()) throw std::invalid_argument("soft_update: size mismatch");
    target = tau * source + (1.0 - tau) * target;
}

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0.0)) throw std::invalid_argument("Adam: learning rate must be > 0");
    m_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    v_ = m_;
}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
    if (grad.size() != m_.size() || theta.size() != m_.size()) throw std::invalid_argument("Adam::step: size mismatch");
    if (!grad.allFinite()) throw TrainingFault("non-finite gradient");
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    theta.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

nlohmann::json mlp_to_json(const Mlp& net) {
    const auto& th = net.parameters();
    return {{"sizes", net.sizes()}, {"theta", std::vector<double>(th.data(), th.data() + th.size())}};
}

Mlp mlp_from_json(const nlohmann::json& doc) {
    if (!doc.is_object() || !doc.contains("sizes") || !doc.contains("theta"))
        throw SchemaError("mlp", "expected {sizes, theta}");
    std::mt19937_64 rng(0);
    Mlp net(doc["sizes"].get<std::vector<std::size_t>>(), rng);
    const auto theta = doc["theta"].get<std::vector<double>>();
    if (theta.size() != static_cast<std::size_t>(net.parameters().size()))
        throw SchemaError("mlp.theta", "length does not match the layer sizes");
    net.parameters() = Eigen::Map<const Eigen::VectorXd>(theta.data(), static_cast<Eigen::Index>(theta.size()));
    return net;
}

}  // namespace voltctl
