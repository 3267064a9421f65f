#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace spcuq {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { relu, tanh };
enum class OutputActivation { identity, softmax, softplus };

struct MlpSpec {
    std::vector<int> layer_sizes;  // input width, hidden widths..., output width
    Activation activation = Activation::relu;
    OutputActivation output_activation = OutputActivation::identity;
    std::uint64_t seed = 0;
};

// weights[l] is layer_sizes[l+1] x layer_sizes[l]; batches are one sample per row.
struct Mlp {
    MlpSpec spec;
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    int input_dim() const { return spec.layer_sizes.front(); }
    int output_dim() const { return spec.layer_sizes.back(); }
    int feature_dim() const { return spec.layer_sizes[spec.layer_sizes.size() - 2]; }
    int layer_count() const { return static_cast<int>(weights.size()); }
};

struct Gradients {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
};

// He-uniform init keyed by spec.seed; same spec gives identical parameters.
Mlp mlp_init(const MlpSpec& spec);

Matrix forward(const Mlp& net, const Matrix& batch);

struct ForwardResult {
    Matrix output;
    Matrix features;  // penultimate activations, one row per sample
};
ForwardResult forward_with_features(const Mlp& net, const Matrix& batch);

// Pre/post activation values per layer; act[0] is the input batch.
struct ForwardCache {
    std::vector<Matrix> pre;
    std::vector<Matrix> act;
};
Matrix forward_cached(const Mlp& net, const Matrix& batch, ForwardCache& cache);

// loss_grad is dL/d(output) for the same batch, shape n x output_dim.
// extra_feature_grad (n x feature_dim) joins the trunk at the penultimate
// activation; input_grad, when given, receives dL/d(batch).
Gradients backward(const Mlp& net, const Matrix& batch, const Matrix& loss_grad);
Gradients backward_cached(const Mlp& net, const ForwardCache& cache, const Matrix& loss_grad,
                          const Matrix* extra_feature_grad = nullptr, Matrix* input_grad = nullptr);

double softplus(double x);

}  // namespace spcuq
