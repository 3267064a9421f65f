#include "spcuq/train.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "spcuq/errors.hpp"

namespace spcuq {

std::vector<std::vector<int>> make_batches(int n_rows, int batch_size, std::uint64_t seed, int epoch) {
    if (n_rows <= 0) throw InsufficientDataError("no rows to batch");
    std::vector<int> order(n_rows);
    std::iota(order.begin(), order.end(), 0);
    if (batch_size <= 0 || batch_size >= n_rows) return {order};
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(epoch) + 1);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<int>> batches;
    for (int start = 0; start < n_rows; start += batch_size) {
        int stop = std::min(start + batch_size, n_rows);
        batches.emplace_back(order.begin() + start, order.begin() + stop);
    }
    return batches;
}

double train_mse(Mlp& net, const Matrix& inputs, const Matrix& targets, const TrainConfig& config) {
    if (inputs.rows() != targets.rows()) throw ShapeError("inputs and targets disagree on row count");
    if (inputs.cols() != net.input_dim()) throw ShapeError("inputs do not match the network input dim");
    if (targets.cols() != net.output_dim()) throw ShapeError("targets do not match the network output dim");
    if (config.epochs < 0) throw ConfigError("epochs must be non-negative");
    int n = static_cast<int>(inputs.rows());
    int k = static_cast<int>(targets.cols());
    OptimizerState opt = make_optimizer(net, config.optimizer);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (const auto& batch : make_batches(n, config.batch_size, config.seed, epoch)) {
            Matrix xb(batch.size(), inputs.cols());
            Matrix yb(batch.size(), k);
            for (std::size_t i = 0; i < batch.size(); ++i) {
                xb.row(i) = inputs.row(batch[i]);
                yb.row(i) = targets.row(batch[i]);
            }
            ForwardCache cache;
            Matrix pred = forward_cached(net, xb, cache);
            Matrix grad = 2.0 * (pred - yb) / static_cast<double>(batch.size() * k);
            Gradients grads = backward_cached(net, cache, grad);
            optimizer_step(net, grads, opt);
        }
    }
    Matrix pred = forward(net, inputs);
    return (pred - targets).squaredNorm() / static_cast<double>(n * k);
}

}  // namespace spcuq
