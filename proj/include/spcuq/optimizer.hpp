#pragma once

#include "spcuq/mlp.hpp"

namespace spcuq {

enum class OptimizerKind { sgd, adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct OptimizerState {
    OptimizerConfig config;
    long step_count = 0;
    std::vector<Matrix> m_weights, v_weights;
    std::vector<Vector> m_biases, v_biases;
};

OptimizerState make_optimizer(const Mlp& net, const OptimizerConfig& config);

// In-place parameter update; Adam with bias correction. Non-finite gradients
// raise NumericError naming the offending layer.
void optimizer_step(Mlp& net, const Gradients& grads, OptimizerState& state);

}  // namespace spcuq
