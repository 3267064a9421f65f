#include "spcuq/mlp.hpp"

#include <cmath>
#include <random>
#include <string>

#include "spcuq/errors.hpp"

namespace spcuq {

namespace {

void validate_spec(const MlpSpec& spec) {
    if (spec.layer_sizes.size() < 2) {
        throw ConfigError("mlp spec needs an input and an output size");
    }
    for (int s : spec.layer_sizes) {
        if (s <= 0) throw ConfigError("mlp layer sizes must be positive");
    }
}

Matrix apply_hidden(const Matrix& pre, Activation act) {
    if (act == Activation::relu) return pre.cwiseMax(0.0);
    return pre.array().tanh().matrix();
}

Matrix softmax_rows(const Matrix& pre) {
    Matrix out(pre.rows(), pre.cols());
    for (Eigen::Index i = 0; i < pre.rows(); ++i) {
        double m = pre.row(i).maxCoeff();
        Eigen::RowVectorXd e = (pre.row(i).array() - m).exp();
        out.row(i) = e / e.sum();
    }
    return out;
}

Matrix apply_output(const Matrix& pre, OutputActivation act) {
    switch (act) {
        case OutputActivation::identity:
            return pre;
        case OutputActivation::softplus:
            return pre.unaryExpr([](double x) { return softplus(x); });
        case OutputActivation::softmax:
            return softmax_rows(pre);
    }
    throw ConfigError("unknown output activation");
}

void check_batch(const Mlp& net, const Matrix& batch) {
    if (batch.cols() != net.input_dim()) {
        throw ShapeError("batch width " + std::to_string(batch.cols()) + " does not match input dim " +
                         std::to_string(net.input_dim()));
    }
}

}  // namespace

double softplus(double x) {
    // max(x, 0) + log1p(exp(-|x|)) stays exact for large |x|.
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

Mlp mlp_init(const MlpSpec& spec) {
    validate_spec(spec);
    Mlp net;
    net.spec = spec;
    std::mt19937_64 rng(spec.seed);
    const auto& sizes = spec.layer_sizes;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        int fan_in = sizes[l];
        int fan_out = sizes[l + 1];
        double limit = std::sqrt(6.0 / fan_in);
        std::uniform_real_distribution<double> dist(-limit, limit);
        Matrix w(fan_out, fan_in);
        for (int i = 0; i < fan_out; ++i) {
            for (int j = 0; j < fan_in; ++j) w(i, j) = dist(rng);
        }
        net.weights.push_back(std::move(w));
        net.biases.push_back(Vector::Zero(fan_out));
    }
    return net;
}

Matrix forward_cached(const Mlp& net, const Matrix& batch, ForwardCache& cache) {
    check_batch(net, batch);
    int layers = net.layer_count();
    cache.pre.assign(layers, Matrix());
    cache.act.assign(layers + 1, Matrix());
    cache.act[0] = batch;
    for (int l = 0; l < layers; ++l) {
        cache.pre[l] = cache.act[l] * net.weights[l].transpose();
        cache.pre[l].rowwise() += net.biases[l].transpose();
        cache.act[l + 1] = (l + 1 < layers) ? apply_hidden(cache.pre[l], net.spec.activation)
                                            : apply_output(cache.pre[l], net.spec.output_activation);
    }
    return cache.act[layers];
}

Matrix forward(const Mlp& net, const Matrix& batch) {
    ForwardCache cache;
    return forward_cached(net, batch, cache);
}

ForwardResult forward_with_features(const Mlp& net, const Matrix& batch) {
    ForwardCache cache;
    ForwardResult res;
    res.output = forward_cached(net, batch, cache);
    res.features = cache.act[net.layer_count() - 1];
    return res;
}

namespace {

// dL/d(pre) of the output layer from dL/d(output).
Matrix output_delta(const Mlp& net, const ForwardCache& cache, const Matrix& loss_grad) {
    int layers = net.layer_count();
    const Matrix& pre = cache.pre[layers - 1];
    const Matrix& out = cache.act[layers];
    switch (net.spec.output_activation) {
        case OutputActivation::identity:
            return loss_grad;
        case OutputActivation::softplus:
            // softplus'(x) = sigmoid(x)
            return loss_grad.cwiseProduct(
                pre.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); }));
        case OutputActivation::softmax: {
            Matrix delta(out.rows(), out.cols());
            for (Eigen::Index i = 0; i < out.rows(); ++i) {
                double dot = loss_grad.row(i).dot(out.row(i));
                delta.row(i) = out.row(i).cwiseProduct((loss_grad.row(i).array() - dot).matrix());
            }
            return delta;
        }
    }
    throw ConfigError("unknown output activation");
}

Matrix hidden_delta(const Matrix& upstream, const Matrix& pre, const Matrix& post, Activation act) {
    if (act == Activation::relu) {
        return upstream.cwiseProduct(pre.unaryExpr([](double x) { return x > 0.0 ? 1.0 : 0.0; }));
    }
    return upstream.cwiseProduct((1.0 - post.array().square()).matrix());
}

}  // namespace

Gradients backward_cached(const Mlp& net, const ForwardCache& cache, const Matrix& loss_grad,
                          const Matrix* extra_feature_grad, Matrix* input_grad) {
    int layers = net.layer_count();
    if (loss_grad.rows() != cache.act[0].rows() || loss_grad.cols() != net.output_dim()) {
        throw ShapeError("loss gradient shape does not match the forward batch");
    }
    if (extra_feature_grad &&
        (extra_feature_grad->rows() != cache.act[0].rows() ||
         extra_feature_grad->cols() != net.feature_dim())) {
        throw ShapeError("feature gradient shape does not match the penultimate layer");
    }
    Gradients grads;
    grads.weights.resize(layers);
    grads.biases.resize(layers);
    Matrix delta = output_delta(net, cache, loss_grad);
    for (int l = layers - 1; l >= 0; --l) {
        grads.weights[l] = delta.transpose() * cache.act[l];
        grads.biases[l] = delta.colwise().sum().transpose();
        if (l == 0 && !input_grad) break;
        Matrix upstream = delta * net.weights[l];
        // The penultimate activation doubles as the feature output; extra
        // gradient from heads riding on it joins the trunk here.
        if (l == layers - 1 && extra_feature_grad) upstream += *extra_feature_grad;
        if (l == 0) {
            *input_grad = upstream;
            break;
        }
        delta = hidden_delta(upstream, cache.pre[l - 1], cache.act[l], net.spec.activation);
    }
    return grads;
}

Gradients backward(const Mlp& net, const Matrix& batch, const Matrix& loss_grad) {
    ForwardCache cache;
    forward_cached(net, batch, cache);
    return backward_cached(net, cache, loss_grad, nullptr, nullptr);
}

}  // namespace spcuq
