#include "spcuq/optimizer.hpp"

#include <cmath>
#include <string>

#include "spcuq/errors.hpp"

namespace spcuq {

OptimizerState make_optimizer(const Mlp& net, const OptimizerConfig& config) {
    if (!(config.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (config.beta1 < 0.0 || config.beta1 >= 1.0 || config.beta2 < 0.0 || config.beta2 >= 1.0) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(config.epsilon > 0.0)) throw ConfigError("adam epsilon must be positive");
    OptimizerState state;
    state.config = config;
    for (int l = 0; l < net.layer_count(); ++l) {
        state.m_weights.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
        state.v_weights.push_back(Matrix::Zero(net.weights[l].rows(), net.weights[l].cols()));
        state.m_biases.push_back(Vector::Zero(net.biases[l].size()));
        state.v_biases.push_back(Vector::Zero(net.biases[l].size()));
    }
    return state;
}

void optimizer_step(Mlp& net, const Gradients& grads, OptimizerState& state) {
    int layers = net.layer_count();
    if (static_cast<int>(grads.weights.size()) != layers ||
        static_cast<int>(grads.biases.size()) != layers) {
        throw ShapeError("gradient layer count does not match the network");
    }
    for (int l = 0; l < layers; ++l) {
        if (grads.weights[l].rows() != net.weights[l].rows() ||
            grads.weights[l].cols() != net.weights[l].cols() ||
            grads.biases[l].size() != net.biases[l].size()) {
            throw ShapeError("gradient shape mismatch at layer " + std::to_string(l));
        }
        if (!grads.weights[l].allFinite() || !grads.biases[l].allFinite()) {
            throw NumericError("non-finite gradient at layer " + std::to_string(l));
        }
    }
    const OptimizerConfig& cfg = state.config;
    ++state.step_count;
    if (cfg.kind == OptimizerKind::sgd) {
        for (int l = 0; l < layers; ++l) {
            net.weights[l] -= cfg.learning_rate * grads.weights[l];
            net.biases[l] -= cfg.learning_rate * grads.biases[l];
        }
        return;
    }
    double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step_count));
    double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step_count));
    auto adam = [&](auto& param, const auto& grad, auto& m, auto& v) {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * grad;
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
        param.array() -= cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.epsilon);
    };
    for (int l = 0; l < layers; ++l) {
        adam(net.weights[l], grads.weights[l], state.m_weights[l], state.v_weights[l]);
        adam(net.biases[l], grads.biases[l], state.m_biases[l], state.v_biases[l]);
    }
}

}  // namespace spcuq
