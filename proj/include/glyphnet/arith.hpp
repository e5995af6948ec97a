#pragma once

#include <cstddef>
#include <cstdint>
#include <string>

#include "glyphnet/errors.hpp"

namespace glyphnet {

// Output feature-map extent of a convolution/pool window:
// M = (N + 2P - F) / S + 1, integral by contract.
inline std::size_t output_dim(std::size_t input, std::size_t kernel, std::size_t stride,
                              std::size_t padding) {
  if (stride < 1) throw ShapeMismatch("stride must be >= 1");
  const std::size_t padded = input + 2 * padding;
  if (kernel > padded) {
    throw KernelTooLarge("kernel " + std::to_string(kernel) + " exceeds padded input " +
                         std::to_string(padded));
  }
  const std::size_t span = padded - kernel;
  if (span % stride != 0) {
    throw Indivisible("window span " + std::to_string(span) + " not divisible by stride " +
                      std::to_string(stride));
  }
  return span / stride + 1;
}

// Weight count of a conv layer without bias: (F*F*FM_prev)*FM_l.
inline std::uint64_t params_nobias(std::uint64_t kernel, std::uint64_t maps_prev,
                                   std::uint64_t maps) {
  return kernel * kernel * maps_prev * maps;
}

enum class BiasRule {
  standard,   // (F*F*FM_prev + 1) * FM_l, one bias per output map
  alternate,  // F*(F+1) * FM_prev * FM_l, an alternate published rule
};

// Weight count of a conv layer with bias. The two rules disagree (540 vs
// 456 for F=5, 3->6 maps); the model builders and the analyzer use
// `standard` everywhere, `alternate` exists for comparison against tables
// computed with it.
inline std::uint64_t params_bias(std::uint64_t kernel, std::uint64_t maps_prev,
                                 std::uint64_t maps, BiasRule rule) {
  switch (rule) {
    case BiasRule::standard:
      return (kernel * kernel * maps_prev + 1) * maps;
    case BiasRule::alternate:
      return kernel * (kernel + 1) * maps_prev * maps;
  }
  return 0;
}

// Connection count between a conv layer and its input: M*M*(F*F+1)*FM_l.
inline std::uint64_t connections(std::uint64_t out_dim, std::uint64_t kernel,
                                 std::uint64_t maps) {
  return out_dim * out_dim * (kernel * kernel + 1) * maps;
}

}  // namespace glyphnet
