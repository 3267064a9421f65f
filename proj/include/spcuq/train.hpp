#pragma once

#include "spcuq/mlp.hpp"
#include "spcuq/optimizer.hpp"

namespace spcuq {

struct TrainConfig {
    int epochs = 1000;
    int batch_size = 0;  // 0 means full batch
    OptimizerConfig optimizer;
    std::uint64_t seed = 0;  // shuffle order
};

// Mean squared error over all output entries; returns the final epoch loss.
double train_mse(Mlp& net, const Matrix& inputs, const Matrix& targets, const TrainConfig& config);

// Deterministic epoch-wise batch order shared by the training loops.
std::vector<std::vector<int>> make_batches(int n_rows, int batch_size, std::uint64_t seed, int epoch);

}  // namespace spcuq
