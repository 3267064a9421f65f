#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "spcuq/errors.hpp"
#include "spcuq/mlp.hpp"
#include "spcuq/optimizer.hpp"
#include "spcuq/train.hpp"
#include "spcuq/weights_io.hpp"

using namespace spcuq;

namespace {

Matrix random_matrix(int rows, int cols, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = dist(rng);
    }
    return m;
}

double mse_loss(const Matrix& out, const Matrix& target) {
    return (out - target).squaredNorm() / static_cast<double>(out.size());
}

Matrix mse_grad(const Matrix& out, const Matrix& target) {
    return 2.0 * (out - target) / static_cast<double>(out.size());
}

// Central difference d(mse)/d(param) for one coordinate of one layer.
double fd_weight_grad(Mlp net, int layer, int r, int c, const Matrix& batch,
                      const Matrix& target, double h = 1e-6) {
    net.weights[layer](r, c) += h;
    double up = mse_loss(forward(net, batch), target);
    net.weights[layer](r, c) -= 2 * h;
    double down = mse_loss(forward(net, batch), target);
    return (up - down) / (2 * h);
}

}  // namespace

TEST_SUITE("mlp") {

TEST_CASE("init is deterministic and He-bounded with zero biases") {
    MlpSpec spec{{3, 16, 8, 2}, Activation::relu, OutputActivation::identity, 99};
    Mlp a = mlp_init(spec);
    Mlp b = mlp_init(spec);
    REQUIRE(a.layer_count() == 3);
    for (int l = 0; l < a.layer_count(); ++l) {
        CHECK(a.weights[l] == b.weights[l]);
        CHECK(a.biases[l].isZero());
        double limit = std::sqrt(6.0 / a.weights[l].cols());
        CHECK(a.weights[l].maxCoeff() <= limit);
        CHECK(a.weights[l].minCoeff() >= -limit);
        // A draw of this size should not be degenerate.
        CHECK(a.weights[l].cwiseAbs().maxCoeff() > 0.0);
    }
    spec.seed = 100;
    Mlp c = mlp_init(spec);
    CHECK(a.weights[0] != c.weights[0]);
}

TEST_CASE("forward matches a hand-computed two-layer net") {
    Mlp net;
    net.spec = {{2, 2, 1}, Activation::relu, OutputActivation::identity, 0};
    net.weights = {Matrix(2, 2), Matrix(1, 2)};
    net.biases = {Vector(2), Vector(1)};
    net.weights[0] << 1.0, -1.0, 0.5, 2.0;
    net.biases[0] << 0.0, -1.0;
    net.weights[1] << 3.0, -2.0;
    net.biases[1] << 0.25;

    Matrix x(1, 2);
    x << 2.0, 1.0;
    // hidden pre: (1, 2), post relu: (1, 2); out: 3*1 - 2*2 + 0.25
    Matrix y = forward(net, x);
    CHECK(y(0, 0) == doctest::Approx(-0.75).epsilon(1e-15));

    x << -2.0, 1.0;
    // hidden pre: (-3, 0), post relu: (0, 0); out: 0.25
    CHECK(forward(net, x)(0, 0) == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("softmax rows sum to one and survive large logits") {
    MlpSpec spec{{4, 8, 3}, Activation::tanh, OutputActivation::softmax, 1};
    Mlp net = mlp_init(spec);
    net.weights[1] *= 300.0;  // force extreme logits
    std::mt19937_64 rng(2);
    Matrix x = random_matrix(9, 4, rng);
    Matrix y = forward(net, x);
    for (int i = 0; i < y.rows(); ++i) {
        CHECK(y.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(y.row(i).minCoeff() >= 0.0);
        for (int j = 0; j < y.cols(); ++j) CHECK(std::isfinite(y(i, j)));
    }
}

TEST_CASE("softplus is exact at the anchors and never negative") {
    CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    CHECK(softplus(50.0) == doctest::Approx(50.0).epsilon(1e-15));
    CHECK(softplus(-50.0) == doctest::Approx(std::exp(-50.0)).epsilon(1e-10));
    CHECK(softplus(-900.0) >= 0.0);
    CHECK(std::isfinite(softplus(900.0)));
}

TEST_CASE("backward matches central finite differences") {
    // tanh trunk keeps the loss smooth at every coordinate.
    for (OutputActivation out_act :
         {OutputActivation::identity, OutputActivation::softplus, OutputActivation::softmax}) {
        CAPTURE(static_cast<int>(out_act));
        MlpSpec spec{{5, 7, 6, 3}, Activation::tanh, out_act, 42};
        Mlp net = mlp_init(spec);
        std::mt19937_64 rng(7);
        Matrix batch = random_matrix(11, 5, rng);
        Matrix target = random_matrix(11, 3, rng).cwiseAbs();

        ForwardCache cache;
        Matrix out = forward_cached(net, batch, cache);
        Gradients grads = backward_cached(net, cache, mse_grad(out, target));

        std::uniform_int_distribution<int> pick_layer(0, net.layer_count() - 1);
        for (int k = 0; k < 40; ++k) {
            int l = pick_layer(rng);
            int r = std::uniform_int_distribution<int>(0, net.weights[l].rows() - 1)(rng);
            int c = std::uniform_int_distribution<int>(0, net.weights[l].cols() - 1)(rng);
            double fd = fd_weight_grad(net, l, r, c, batch, target);
            double an = grads.weights[l](r, c);
            CHECK(std::abs(fd - an) <= 1e-4 * std::max({1.0, std::abs(fd), std::abs(an)}));
        }
    }
}

TEST_CASE("relu backward agrees away from the kinks") {
    MlpSpec spec{{4, 9, 2}, Activation::relu, OutputActivation::identity, 5};
    Mlp net = mlp_init(spec);
    std::mt19937_64 rng(8);
    Matrix batch = random_matrix(6, 4, rng);
    Matrix target = random_matrix(6, 2, rng);

    ForwardCache cache;
    Matrix out = forward_cached(net, batch, cache);
    // Skip coordinates whose perturbation could cross a relu kink.
    if (cache.pre[0].cwiseAbs().minCoeff() < 1e-4) return;
    Gradients grads = backward_cached(net, cache, mse_grad(out, target));
    for (int l = 0; l < net.layer_count(); ++l) {
        for (int r = 0; r < net.weights[l].rows(); ++r) {
            double fd = fd_weight_grad(net, l, r, 0, batch, target);
            CHECK(grads.weights[l](r, 0) == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}

TEST_CASE("backward and backward_cached agree") {
    MlpSpec spec{{3, 5, 4}, Activation::relu, OutputActivation::identity, 11};
    Mlp net = mlp_init(spec);
    std::mt19937_64 rng(12);
    Matrix batch = random_matrix(7, 3, rng);
    Matrix grad_out = random_matrix(7, 4, rng);

    ForwardCache cache;
    forward_cached(net, batch, cache);
    Gradients a = backward(net, batch, grad_out);
    Gradients b = backward_cached(net, cache, grad_out);
    for (int l = 0; l < net.layer_count(); ++l) {
        CHECK(a.weights[l] == b.weights[l]);
        CHECK(a.biases[l] == b.biases[l]);
    }
}

TEST_CASE("extra feature gradient joins the trunk like a second head") {
    // Loss = mse(base) + mse(side net on features). The bridged gradient must
    // equal finite differences through the composite.
    MlpSpec base_spec{{3, 6, 2}, Activation::tanh, OutputActivation::identity, 21};
    MlpSpec side_spec{{6, 4, 1}, Activation::tanh, OutputActivation::identity, 22};
    Mlp base = mlp_init(base_spec);
    Mlp side = mlp_init(side_spec);
    std::mt19937_64 rng(23);
    Matrix batch = random_matrix(5, 3, rng);
    Matrix y_base = random_matrix(5, 2, rng);
    Matrix y_side = random_matrix(5, 1, rng);

    auto total_loss = [&](const Mlp& b) {
        ForwardCache cache;
        Matrix out = forward_cached(b, batch, cache);
        const Matrix& features = cache.act[cache.act.size() - 2];
        return mse_loss(out, y_base) + mse_loss(forward(side, features), y_side);
    };

    ForwardCache cache;
    Matrix out = forward_cached(base, batch, cache);
    const Matrix& features = cache.act[cache.act.size() - 2];
    ForwardCache side_cache;
    Matrix side_out = forward_cached(side, features, side_cache);
    Matrix feature_grad;
    backward_cached(side, side_cache, mse_grad(side_out, y_side), nullptr, &feature_grad);
    Gradients grads = backward_cached(base, cache, mse_grad(out, y_base), &feature_grad);

    for (int l = 0; l < base.layer_count(); ++l) {
        for (int k = 0; k < 5; ++k) {
            int r = std::uniform_int_distribution<int>(0, base.weights[l].rows() - 1)(rng);
            int c = std::uniform_int_distribution<int>(0, base.weights[l].cols() - 1)(rng);
            double h = 1e-6;
            Mlp pert = base;
            pert.weights[l](r, c) += h;
            double up = total_loss(pert);
            pert.weights[l](r, c) -= 2 * h;
            double down = total_loss(pert);
            double fd = (up - down) / (2 * h);
            CHECK(grads.weights[l](r, c) == doctest::Approx(fd).epsilon(1e-4));
        }
    }
}

TEST_CASE("input gradient matches finite differences") {
    MlpSpec spec{{4, 5, 3}, Activation::tanh, OutputActivation::identity, 31};
    Mlp net = mlp_init(spec);
    std::mt19937_64 rng(32);
    Matrix batch = random_matrix(4, 4, rng);
    Matrix target = random_matrix(4, 3, rng);

    ForwardCache cache;
    Matrix out = forward_cached(net, batch, cache);
    Matrix input_grad;
    backward_cached(net, cache, mse_grad(out, target), nullptr, &input_grad);
    REQUIRE(input_grad.rows() == batch.rows());
    REQUIRE(input_grad.cols() == batch.cols());

    for (int i = 0; i < batch.rows(); ++i) {
        for (int j = 0; j < batch.cols(); ++j) {
            double h = 1e-6;
            Matrix pert = batch;
            pert(i, j) += h;
            double up = mse_loss(forward(net, pert), target);
            pert(i, j) -= 2 * h;
            double down = mse_loss(forward(net, pert), target);
            CHECK(input_grad(i, j) == doctest::Approx((up - down) / (2 * h)).epsilon(1e-4));
        }
    }
}

TEST_CASE("sgd and adam first steps are exact") {
    Mlp net;
    net.spec = {{1, 1}, Activation::relu, OutputActivation::identity, 0};
    net.weights = {Matrix::Zero(1, 1)};
    net.biases = {Vector::Zero(1)};
    Gradients g;
    g.weights = {Matrix::Constant(1, 1, 2.0)};
    g.biases = {Vector::Constant(1, -4.0)};

    OptimizerConfig sgd;
    sgd.kind = OptimizerKind::sgd;
    sgd.learning_rate = 0.1;
    OptimizerState st = make_optimizer(net, sgd);
    optimizer_step(net, g, st);
    CHECK(net.weights[0](0, 0) == doctest::Approx(-0.2).epsilon(1e-15));
    CHECK(net.biases[0](0) == doctest::Approx(0.4).epsilon(1e-15));

    // Adam's bias-corrected first step is lr * g / (|g| + eps) elementwise.
    net.weights[0].setZero();
    net.biases[0].setZero();
    OptimizerConfig adam;
    adam.learning_rate = 1e-3;
    OptimizerState st2 = make_optimizer(net, adam);
    optimizer_step(net, g, st2);
    CHECK(net.weights[0](0, 0) == doctest::Approx(-1e-3 * 2.0 / (2.0 + 1e-8)).epsilon(1e-12));
    CHECK(net.biases[0](0) == doctest::Approx(1e-3 * 4.0 / (4.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("optimizer rejects bad gradients") {
    Mlp net = mlp_init({{2, 3, 1}, Activation::relu, OutputActivation::identity, 1});
    OptimizerState st = make_optimizer(net, OptimizerConfig{});

    Gradients wrong_shape;
    wrong_shape.weights = {Matrix::Zero(3, 2)};
    wrong_shape.biases = {Vector::Zero(3)};
    CHECK_THROWS_AS(optimizer_step(net, wrong_shape, st), ShapeError);

    Gradients bad;
    bad.weights = {Matrix::Zero(3, 2), Matrix::Zero(1, 3)};
    bad.biases = {Vector::Zero(3), Vector::Zero(1)};
    bad.weights[1](0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(optimizer_step(net, bad, st), NumericError);

    OptimizerConfig cfg;
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(make_optimizer(net, cfg), ConfigError);
}

TEST_CASE("weight files round-trip exactly") {
    MlpSpec spec{{3, 8, 5, 2}, Activation::tanh, OutputActivation::softmax, 77};
    Mlp net = mlp_init(spec);
    std::string path = (std::filesystem::temp_directory_path() / "spcuq_rt.bin").string();
    save_weights(net, path);
    Mlp back = load_weights(path, Activation::tanh, OutputActivation::softmax);
    REQUIRE(back.spec.layer_sizes == net.spec.layer_sizes);
    for (int l = 0; l < net.layer_count(); ++l) {
        CHECK(back.weights[l] == net.weights[l]);
        CHECK(back.biases[l] == net.biases[l]);
    }
    std::mt19937_64 rng(3);
    Matrix x = random_matrix(4, 3, rng);
    CHECK(forward(net, x) == forward(back, x));
    std::filesystem::remove(path);
}

TEST_CASE("weight loader rejects malformed files") {
    auto tmp = std::filesystem::temp_directory_path();
    std::string good = (tmp / "spcuq_good.bin").string();
    Mlp net = mlp_init({{2, 3, 1}, Activation::relu, OutputActivation::identity, 9});
    save_weights(net, good);

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_weights((tmp / "spcuq_missing.bin").string()), FileError);
    }
    SUBCASE("bad magic") {
        std::string path = (tmp / "spcuq_magic.bin").string();
        std::ofstream out(path, std::ios::binary);
        out << "NOPE" << std::string(64, '\0');
        out.close();
        CHECK_THROWS_AS(load_weights(path), FormatError);
    }
    SUBCASE("truncated payload") {
        std::ifstream in(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::string path = (tmp / "spcuq_trunc.bin").string();
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 9));
        out.close();
        CHECK_THROWS_AS(load_weights(path), FormatError);
    }
    SUBCASE("trailing bytes") {
        std::ifstream in(good, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::string path = (tmp / "spcuq_trail.bin").string();
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out << "xx";
        out.close();
        CHECK_THROWS_AS(load_weights(path), FormatError);
    }
    std::filesystem::remove(good);
}

TEST_CASE("make_batches covers every row exactly once") {
    for (int batch_size : {0, 1, 3, 8, 50}) {
        auto batches = make_batches(10, batch_size, 4, 2);
        std::vector<int> seen;
        for (const auto& b : batches) seen.insert(seen.end(), b.begin(), b.end());
        std::sort(seen.begin(), seen.end());
        std::vector<int> want(10);
        for (int i = 0; i < 10; ++i) want[i] = i;
        CHECK(seen == want);
    }
    // Full-batch mode keeps the natural order; minibatches reshuffle by epoch.
    CHECK(make_batches(5, 0, 1, 3) == make_batches(5, 0, 9, 8));
    CHECK(make_batches(64, 16, 7, 0) != make_batches(64, 16, 7, 1));
    CHECK(make_batches(64, 16, 7, 5) == make_batches(64, 16, 7, 5));
}

TEST_CASE("train_mse fits a linear map") {
    std::mt19937_64 rng(40);
    Matrix x = random_matrix(64, 2, rng);
    Matrix y = Matrix(64, 1);
    for (int i = 0; i < 64; ++i) y(i, 0) = 3.0 * x(i, 0) - 2.0 * x(i, 1) + 0.5;

    Mlp net = mlp_init({{2, 16, 1}, Activation::relu, OutputActivation::identity, 41});
    TrainConfig cfg;
    cfg.epochs = 1500;
    cfg.optimizer.learning_rate = 0.01;
    double final_loss = train_mse(net, x, y, cfg);
    CHECK(final_loss < 1e-2);
    CHECK(final_loss == doctest::Approx(mse_loss(forward(net, x), y)).epsilon(1e-12));
}

}  // TEST_SUITE
