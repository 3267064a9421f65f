#include "spcuq/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "spcuq/errors.hpp"

static_assert(std::endian::native == std::endian::little, "weight files assume a little-endian host");

namespace spcuq {

namespace {

constexpr char kMagic[4] = {'S', 'P', 'C', 'W'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::ifstream& in, const std::string& what) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!in) throw FormatError("weight file truncated while reading " + what);
    return v;
}

}  // namespace

void save_weights(const Mlp& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FileError("cannot open " + path + " for writing");
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(net.layer_count()));
    for (int l = 0; l < net.layer_count(); ++l) {
        write_u32(out, static_cast<std::uint32_t>(net.weights[l].rows()));
        write_u32(out, static_cast<std::uint32_t>(net.weights[l].cols()));
    }
    for (int l = 0; l < net.layer_count(); ++l) {
        const Matrix& w = net.weights[l];
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                double v = w(i, j);
                out.write(reinterpret_cast<const char*>(&v), sizeof(v));
            }
        }
        out.write(reinterpret_cast<const char*>(net.biases[l].data()),
                  static_cast<std::streamsize>(net.biases[l].size() * sizeof(double)));
    }
    if (!out) throw FileError("failed writing " + path);
}

Mlp load_weights(const std::string& path, Activation activation, OutputActivation output_activation) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileError("cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic in " + path);
    std::uint32_t version = read_u32(in, "version");
    if (version != kVersion) throw FormatError("unsupported weight file version " + std::to_string(version));
    std::uint32_t layers = read_u32(in, "layer count");
    if (layers == 0) throw FormatError("weight file declares zero layers");
    std::vector<std::uint32_t> rows(layers), cols(layers);
    for (std::uint32_t l = 0; l < layers; ++l) {
        rows[l] = read_u32(in, "layer rows");
        cols[l] = read_u32(in, "layer cols");
        if (rows[l] == 0 || cols[l] == 0) throw FormatError("zero-sized layer in " + path);
        if (l > 0 && cols[l] != rows[l - 1]) {
            throw FormatError("layer " + std::to_string(l) + " width does not chain with the previous layer");
        }
    }
    Mlp net;
    net.spec.activation = activation;
    net.spec.output_activation = output_activation;
    net.spec.layer_sizes.push_back(static_cast<int>(cols[0]));
    for (std::uint32_t l = 0; l < layers; ++l) net.spec.layer_sizes.push_back(static_cast<int>(rows[l]));
    for (std::uint32_t l = 0; l < layers; ++l) {
        Matrix w(rows[l], cols[l]);
        for (std::uint32_t i = 0; i < rows[l]; ++i) {
            for (std::uint32_t j = 0; j < cols[l]; ++j) {
                double v;
                in.read(reinterpret_cast<char*>(&v), sizeof(v));
                if (!in) throw FormatError("weight file payload shorter than its header claims");
                w(i, j) = v;
            }
        }
        Vector b(rows[l]);
        in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(rows[l] * sizeof(double)));
        if (!in) throw FormatError("weight file payload shorter than its header claims");
        net.weights.push_back(std::move(w));
        net.biases.push_back(std::move(b));
    }
    in.peek();
    if (!in.eof()) throw FormatError("trailing bytes after weight payload in " + path);
    return net;
}

Mlp load_weights(const std::string& path) {
    return load_weights(path, Activation::relu, OutputActivation::identity);
}

}  // namespace spcuq
