#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "glyphnet/errors.hpp"
#include "glyphnet/graph.hpp"
#include "glyphnet/util.hpp"

namespace glyphnet {

namespace detail {

inline std::size_t scaled_channels(std::size_t base, double scale) {
  if (!(scale > 0.0) || scale > 1.0) {
    throw InvalidScale("width scale must be in (0,1], got " + format_double(scale));
  }
  const long long rounded = std::llround(static_cast<double>(base) * scale / 8.0) * 8;
  return rounded < 8 ? 8 : static_cast<std::size_t>(rounded);
}

inline void check_classes(std::size_t k) {
  if (k < 2) throw ValidationError("class count must be >= 2");
}

// Small helper that appends nodes with a linear "previous output" cursor.
struct GraphWriter {
  ArchitectureSpec spec;
  std::string last = "input";

  NodeConfig& push(NodeConfig n) {
    spec.nodes.push_back(std::move(n));
    last = spec.nodes.back().id;
    return spec.nodes.back();
  }

  std::string conv(const std::string& id, const std::string& from, std::size_t out,
                   std::size_t kernel, std::size_t stride, std::size_t pad, bool bias) {
    NodeConfig n;
    n.id = id;
    n.kind = NodeKind::conv;
    n.inputs = {from};
    n.conv_out = out;
    n.conv_kernel = kernel;
    n.conv_stride = stride;
    n.conv_pad = pad;
    n.conv_bias = bias;
    push(std::move(n));
    return id;
  }

  std::string simple(const std::string& id, NodeKind kind, const std::string& from) {
    NodeConfig n;
    n.id = id;
    n.kind = kind;
    n.inputs = {from};
    push(std::move(n));
    return id;
  }

  std::string dense(const std::string& id, const std::string& from, std::size_t units,
                    bool bias) {
    NodeConfig n;
    n.id = id;
    n.kind = NodeKind::dense;
    n.inputs = {from};
    n.dense_units = units;
    n.dense_bias = bias;
    push(std::move(n));
    return id;
  }

  std::string join_mean(const std::string& id, const std::vector<std::string>& from) {
    NodeConfig n;
    n.id = id;
    n.kind = NodeKind::add;
    n.inputs = from;
    n.add_mean = true;
    push(std::move(n));
    return id;
  }

  std::string add(const std::string& id, const std::vector<std::string>& from) {
    NodeConfig n;
    n.id = id;
    n.kind = NodeKind::add;
    n.inputs = from;
    push(std::move(n));
    return id;
  }

  std::string concat(const std::string& id, const std::vector<std::string>& from) {
    NodeConfig n;
    n.id = id;
    n.kind = NodeKind::concat;
    n.inputs = from;
    push(std::move(n));
    return id;
  }
};

}  // namespace detail

// The Table I stack, bias-free throughout: two 3x3 conv + pool twice, then
// 3x3 and 1x1 conv at quadruple width, GAP and a 512->K classifier.
// base_width 128 reproduces the published table; smaller widths keep the
// same shape chain for desk-scale runs.
inline ArchitectureSpec build_allconv(std::size_t class_count, std::size_t base_width = 128) {
  detail::check_classes(class_count);
  if (base_width < 1) throw ValidationError("base width must be >= 1");
  const std::size_t w = base_width;
  detail::GraphWriter g;
  g.spec.name = "allconv";
  g.spec.input_shape = Shape4{1, 3, 32, 32};
  g.spec.class_count = class_count;
  g.conv("c1", "input", w, 3, 1, 0, false);
  g.conv("c2", "c1", w, 3, 1, 0, false);
  g.simple("s1", NodeKind::maxpool, "c2");
  g.conv("c3", "s1", 2 * w, 3, 1, 0, false);
  g.conv("c4", "c3", 2 * w, 3, 1, 0, false);
  g.simple("s2", NodeKind::maxpool, "c4");
  g.conv("c5", "s2", 4 * w, 3, 1, 0, false);
  g.conv("c6", "c5", 4 * w, 1, 1, 0, false);
  g.simple("gap1", NodeKind::gap, "c6");
  g.dense("outputs", "gap1", class_count, false);
  g.simple("softmax", NodeKind::softmax, "outputs");
  g.spec.output_id = "softmax";
  return g.spec;
}

// Thirteen 3x3 same-padded conv layers in five ReLU blocks (2,2,3,3,3)
// with a pool after each block, then three fully connected layers. Block
// widths are (64,128,256,512,512) scaled and rounded to a multiple of 8;
// the default lands the parameter total near 8.4M.
inline ArchitectureSpec build_vgg16_reduced(std::size_t class_count, double width_scale = 0.75) {
  detail::check_classes(class_count);
  const std::size_t base[5] = {64, 128, 256, 512, 512};
  const std::size_t convs_per_block[5] = {2, 2, 3, 3, 3};
  detail::GraphWriter g;
  g.spec.name = "vgg16";
  g.spec.input_shape = Shape4{1, 3, 32, 32};
  g.spec.class_count = class_count;
  std::string prev = "input";
  for (std::size_t b = 0; b < 5; ++b) {
    const std::size_t width = detail::scaled_channels(base[b], width_scale);
    for (std::size_t c = 0; c < convs_per_block[b]; ++c) {
      const std::string tag = "b" + std::to_string(b + 1);
      prev = g.conv(tag + "c" + std::to_string(c + 1), prev, width, 3, 1, 1, true);
      prev = g.simple(tag + "r" + std::to_string(c + 1), NodeKind::relu, prev);
    }
    prev = g.simple("p" + std::to_string(b + 1), NodeKind::maxpool, prev);
  }
  prev = g.dense("fc1", prev, 512, true);
  prev = g.simple("fr1", NodeKind::relu, prev);
  prev = g.dense("fc2", prev, 512, true);
  prev = g.simple("fr2", NodeKind::relu, prev);
  prev = g.dense("fc3", prev, class_count, true);
  g.simple("softmax", NodeKind::softmax, prev);
  g.spec.output_id = "softmax";
  return g.spec;
}

// Three mlpconv blocks (k x k conv + two 1x1 convs, ReLU between), pools
// after blocks 1-2; the last 1x1 emits one channel per class so GAP feeds
// softmax directly. Default widths land near 2.8M parameters.
inline ArchitectureSpec build_nin(std::size_t class_count, double width_scale = 1.0) {
  detail::check_classes(class_count);
  const std::size_t kernels[3] = {5, 5, 3};
  const std::size_t base[3][3] = {{320, 272, 160}, {320, 320, 320}, {320, 320, 0}};
  detail::GraphWriter g;
  g.spec.name = "nin";
  g.spec.input_shape = Shape4{1, 3, 32, 32};
  g.spec.class_count = class_count;
  std::string prev = "input";
  for (std::size_t b = 0; b < 3; ++b) {
    const std::string tag = "b" + std::to_string(b + 1);
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t width =
          base[b][c] == 0 ? class_count : detail::scaled_channels(base[b][c], width_scale);
      const std::size_t kernel = c == 0 ? kernels[b] : 1;
      prev = g.conv(tag + "c" + std::to_string(c + 1), prev, width, kernel, 1, kernel / 2, true);
      prev = g.simple(tag + "r" + std::to_string(c + 1), NodeKind::relu, prev);
    }
    if (b < 2) prev = g.simple("p" + std::to_string(b + 1), NodeKind::maxpool, prev);
  }
  prev = g.simple("gap1", NodeKind::gap, prev);
  g.simple("softmax", NodeKind::softmax, prev);
  g.spec.output_id = "softmax";
  return g.spec;
}

// Stem conv and three stages of basic residual blocks at widths w/2w/4w.
// Downsampling happens in a maxpool between stages (a stride-2 3x3 conv on
// an even extent would violate the output-dimension divisibility rule), so
// projections are 1x1 stride-1 convs where the width changes. Defaults
// (3 blocks per stage, w=72) land near 5.5M parameters.
inline ArchitectureSpec build_resnet(std::size_t class_count, std::size_t blocks_per_stage = 3,
                                     std::size_t base_width = 72) {
  detail::check_classes(class_count);
  if (blocks_per_stage < 1) throw ValidationError("blocks_per_stage must be >= 1");
  if (base_width < 1) throw ValidationError("base width must be >= 1");
  detail::GraphWriter g;
  g.spec.name = "resnet";
  g.spec.input_shape = Shape4{1, 3, 32, 32};
  g.spec.class_count = class_count;
  std::string prev = g.conv("stem", "input", base_width, 3, 1, 1, false);
  std::size_t in_width = base_width;
  for (std::size_t s = 0; s < 3; ++s) {
    const std::size_t width = base_width << s;
    if (s > 0) prev = g.simple("p" + std::to_string(s), NodeKind::maxpool, prev);
    for (std::size_t b = 0; b < blocks_per_stage; ++b) {
      const std::string tag = "s" + std::to_string(s + 1) + "b" + std::to_string(b + 1);
      const std::string block_in = prev;
      std::string t = g.conv(tag + "c1", block_in, width, 3, 1, 1, false);
      t = g.simple(tag + "bn1", NodeKind::batchnorm, t);
      t = g.simple(tag + "r1", NodeKind::relu, t);
      t = g.conv(tag + "c2", t, width, 3, 1, 1, false);
      t = g.simple(tag + "bn2", NodeKind::batchnorm, t);
      std::string shortcut = block_in;
      if (in_width != width) {
        shortcut = g.conv(tag + "proj", block_in, width, 1, 1, 0, false);
      }
      t = g.add(tag + "add", {t, shortcut});
      prev = g.simple(tag + "r2", NodeKind::relu, t);
      in_width = width;
    }
  }
  prev = g.simple("gap1", NodeKind::gap, prev);
  prev = g.dense("fc", prev, class_count, true);
  g.simple("softmax", NodeKind::softmax, prev);
  g.spec.output_id = "softmax";
  return g.spec;
}

namespace detail {

// Emits the fractal expansion f_C into the graph and returns its output
// id. f_1 is conv-BN-ReLU; f_{C+1} joins a fresh conv-BN-ReLU with
// f_C composed twice, the join being the elementwise mean.
inline std::string emit_fractal(GraphWriter& g, const std::string& block_tag, std::size_t depth,
                                const std::string& input, std::size_t width,
                                std::size_t& counter) {
  const std::string tag = block_tag + "n" + std::to_string(++counter);
  std::string direct = g.conv(tag + "c", input, width, 3, 1, 1, false);
  direct = g.simple(tag + "bn", NodeKind::batchnorm, direct);
  direct = g.simple(tag + "r", NodeKind::relu, direct);
  if (depth == 1) return direct;
  const std::string inner = emit_fractal(g, block_tag, depth - 1, input, width, counter);
  const std::string deep = emit_fractal(g, block_tag, depth - 1, inner, width, counter);
  return g.join_mean(block_tag + "j" + std::to_string(++counter), {direct, deep});
}

}  // namespace detail

// Four fractal blocks separated by pools, each expanding conv-BN-ReLU to
// the requested depth with mean joins; GAP head. Defaults (depth 3,
// widths 48/96/208/304) land near 7.7M parameters.
inline ArchitectureSpec build_fractalnet(std::size_t class_count, std::size_t depth = 3,
                                         double width_scale = 1.0) {
  detail::check_classes(class_count);
  if (depth < 1 || depth > 4) {
    throw InvalidDepth("fractal depth must be in [1,4], got " + std::to_string(depth));
  }
  const std::size_t base[4] = {48, 96, 208, 304};
  detail::GraphWriter g;
  g.spec.name = "fractalnet";
  g.spec.input_shape = Shape4{1, 3, 32, 32};
  g.spec.class_count = class_count;
  std::string prev = "input";
  for (std::size_t b = 0; b < 4; ++b) {
    const std::size_t width = detail::scaled_channels(base[b], width_scale);
    std::size_t counter = 0;
    prev = detail::emit_fractal(g, "f" + std::to_string(b + 1), depth, prev, width, counter);
    if (b < 3) prev = g.simple("p" + std::to_string(b + 1), NodeKind::maxpool, prev);
  }
  prev = g.simple("gap1", NodeKind::gap, prev);
  prev = g.dense("fc", prev, class_count, true);
  g.simple("softmax", NodeKind::softmax, prev);
  g.spec.output_id = "softmax";
  return g.spec;
}

// Stem conv, then dense blocks where layer l applies BN-ReLU-3x3conv to
// the concatenation of the block input and all earlier layer outputs and
// adds growth_k channels; transitions are BN + 1x1 conv + 2x2 average
// pool. Defaults (k=24, 12 layers, 3 blocks) land near 4.2M parameters.
inline ArchitectureSpec build_densenet(std::size_t class_count, std::size_t growth_k = 24,
                                       std::size_t layers_per_block = 12,
                                       std::size_t num_blocks = 3,
                                       std::size_t stem_channels = 0) {
  detail::check_classes(class_count);
  if (growth_k < 1) throw ValidationError("growth rate must be >= 1");
  if (num_blocks < 1) throw ValidationError("num_blocks must be >= 1");
  if (stem_channels == 0) stem_channels = 2 * growth_k;
  detail::GraphWriter g;
  g.spec.name = "densenet";
  g.spec.input_shape = Shape4{1, 3, 32, 32};
  g.spec.class_count = class_count;
  std::string prev = g.conv("stem", "input", stem_channels, 3, 1, 1, false);
  for (std::size_t b = 0; b < num_blocks; ++b) {
    const std::string btag = "b" + std::to_string(b + 1);
    const std::string block_in = prev;
    std::vector<std::string> feed{block_in};
    for (std::size_t l = 0; l < layers_per_block; ++l) {
      const std::string tag = btag + "l" + std::to_string(l + 1);
      std::string t = feed.size() == 1 ? feed[0] : g.concat(tag + "cat", feed);
      t = g.simple(tag + "bn", NodeKind::batchnorm, t);
      t = g.simple(tag + "r", NodeKind::relu, t);
      t = g.conv(tag + "c", t, growth_k, 3, 1, 1, false);
      feed.push_back(t);
    }
    prev = feed.size() == 1 ? feed[0] : g.concat(btag + "out", feed);
    if (b + 1 < num_blocks) {
      const std::string ttag = "t" + std::to_string(b + 1);
      const std::size_t channels = stem_channels + (b + 1) * layers_per_block * growth_k;
      std::string t = g.simple(ttag + "bn", NodeKind::batchnorm, prev);
      t = g.conv(ttag + "c", t, channels, 1, 1, 0, false);
      prev = g.simple(ttag + "p", NodeKind::avgpool, t);
    }
  }
  prev = g.simple("gap1", NodeKind::gap, prev);
  prev = g.dense("fc", prev, class_count, true);
  g.simple("softmax", NodeKind::softmax, prev);
  g.spec.output_id = "softmax";
  return g.spec;
}

// Builds an architecture from a name plus optional key=value options, the
// form the CLI accepts as --arch name:key=value,key=value.
inline ArchitectureSpec build_architecture(const std::string& name, std::size_t class_count,
                                           const std::map<std::string, std::string>& opts = {}) {
  auto get_int = [&](const std::string& key, std::size_t fallback) {
    auto it = opts.find(key);
    return it == opts.end() ? fallback
                            : static_cast<std::size_t>(parse_int(it->second, "option " + key));
  };
  auto get_double = [&](const std::string& key, double fallback) {
    auto it = opts.find(key);
    return it == opts.end() ? fallback : parse_double(it->second, "option " + key);
  };
  for (const auto& [key, value] : opts) {
    (void)value;
    if (key != "width" && key != "scale" && key != "blocks" && key != "depth" && key != "k" &&
        key != "layers" && key != "stem") {
      throw ValidationError("unknown architecture option '" + key + "'");
    }
  }
  if (name == "allconv") return build_allconv(class_count, get_int("width", 128));
  if (name == "vgg16") return build_vgg16_reduced(class_count, get_double("scale", 0.75));
  if (name == "nin") return build_nin(class_count, get_double("scale", 1.0));
  if (name == "resnet") {
    return build_resnet(class_count, get_int("blocks", 3), get_int("width", 72));
  }
  if (name == "fractalnet") {
    return build_fractalnet(class_count, get_int("depth", 3), get_double("scale", 1.0));
  }
  if (name == "densenet") {
    return build_densenet(class_count, get_int("k", 24), get_int("layers", 12),
                          get_int("blocks", 3), get_int("stem", 0));
  }
  throw UnknownArchitecture("unknown architecture '" + name + "'");
}

inline const std::vector<std::string>& architecture_names() {
  static const std::vector<std::string> names{"allconv", "vgg16",      "nin",
                                              "resnet",  "fractalnet", "densenet"};
  return names;
}

}  // namespace glyphnet
