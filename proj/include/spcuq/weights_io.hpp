#pragma once

#include <string>

#include "spcuq/mlp.hpp"

namespace spcuq {

// Binary weight file, little endian:
//   magic "SPCW", u32 version = 1, u32 layer count, then u32 rows/cols per
//   layer, then per layer the row-major f64 weights followed by the biases.
void save_weights(const Mlp& net, const std::string& path);

// The file carries shapes and values only; activations default to
// relu/identity unless the caller supplies them.
Mlp load_weights(const std::string& path);
Mlp load_weights(const std::string& path, Activation activation, OutputActivation output_activation);

}  // namespace spcuq
