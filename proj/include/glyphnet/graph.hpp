#pragma once

#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "glyphnet/arith.hpp"
#include "glyphnet/errors.hpp"
#include "glyphnet/tensor.hpp"
#include "glyphnet/util.hpp"

namespace glyphnet {

enum class NodeKind {
  conv,
  maxpool,
  avgpool,
  gap,
  batchnorm,
  relu,
  dense,
  softmax,
  add,
  concat,
};

inline const char* kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::conv: return "conv";
    case NodeKind::maxpool: return "maxpool";
    case NodeKind::avgpool: return "avgpool";
    case NodeKind::gap: return "gap";
    case NodeKind::batchnorm: return "batchnorm";
    case NodeKind::relu: return "relu";
    case NodeKind::dense: return "dense";
    case NodeKind::softmax: return "softmax";
    case NodeKind::add: return "add";
    case NodeKind::concat: return "concat";
  }
  return "?";
}

inline NodeKind kind_from_name(const std::string& s) {
  if (s == "conv") return NodeKind::conv;
  if (s == "maxpool") return NodeKind::maxpool;
  if (s == "avgpool") return NodeKind::avgpool;
  if (s == "gap") return NodeKind::gap;
  if (s == "batchnorm") return NodeKind::batchnorm;
  if (s == "relu") return NodeKind::relu;
  if (s == "dense") return NodeKind::dense;
  if (s == "softmax") return NodeKind::softmax;
  if (s == "add") return NodeKind::add;
  if (s == "concat") return NodeKind::concat;
  throw ParseError("unknown node kind '" + s + "'");
}

// One layer config in an architecture graph. Kind-specific fields are
// meaningful only for the matching kind.
struct NodeConfig {
  std::string id;
  NodeKind kind = NodeKind::relu;
  std::vector<std::string> inputs;

  std::size_t conv_out = 0;
  std::size_t conv_kernel = 0;
  std::size_t conv_stride = 1;
  std::size_t conv_pad = 0;
  bool conv_bias = false;

  std::size_t dense_units = 0;
  bool dense_bias = false;

  double bn_momentum = 0.9;
  double bn_epsilon = 1e-5;

  bool add_mean = false;  // true: output is the mean of inputs, not the sum

  bool operator==(const NodeConfig&) const = default;
};

// Declarative network description: an ordered DAG of layer configs where
// every input id precedes its consumer.
struct ArchitectureSpec {
  std::string name;
  Shape4 input_shape{1, 3, 32, 32};
  std::size_t class_count = 10;
  std::vector<NodeConfig> nodes;
  std::string output_id;

  bool operator==(const ArchitectureSpec&) const = default;

  const NodeConfig& node(const std::string& id) const {
    for (const NodeConfig& n : nodes) {
      if (n.id == id) return n;
    }
    throw ParseError("no node '" + id + "' in spec " + name);
  }
};

// Inferred value shape at a node: spatial [N,C,H,W] activations or a flat
// [N,dim] matrix after gap/dense. Batch extent stays symbolic.
struct NodeShape {
  bool spatial = true;
  std::size_t c = 0;  // channels (spatial) or feature dim (flat)
  std::size_t h = 0;
  std::size_t w = 0;

  bool operator==(const NodeShape&) const = default;

  std::size_t flat_dim() const { return spatial ? c * h * w : c; }

  std::string to_string() const {
    std::ostringstream os;
    if (spatial) {
      os << c << "x" << h << "x" << w;
    } else {
      os << c;
    }
    return os.str();
  }
};

namespace detail {

[[noreturn]] inline void infer_fail(const std::string& id, const std::string& msg) {
  throw ShapeMismatch("node '" + id + "': " + msg);
}

}  // namespace detail

// Static shape inference over the node list. Validates the graph wiring
// (unique ids, inputs defined before use) and per-node shape rules, and
// returns every node's output shape keyed by id. When
// require_classifier_output is set the output node must produce a flat
// class_count-dim row per sample.
inline std::map<std::string, NodeShape> infer_shapes(const ArchitectureSpec& spec,
                                                     bool require_classifier_output = true) {
  spec.input_shape.validate();
  if (spec.class_count < 2) {
    throw ShapeMismatch("spec '" + spec.name + "' needs class_count >= 2");
  }
  std::map<std::string, NodeShape> shapes;
  shapes["input"] = NodeShape{true, spec.input_shape.c, spec.input_shape.h, spec.input_shape.w};

  for (const NodeConfig& node : spec.nodes) {
    if (node.id == "input" || shapes.count(node.id)) {
      throw ParseError("duplicate node id '" + node.id + "'");
    }
    if (node.inputs.empty()) detail::infer_fail(node.id, "has no inputs");
    std::vector<NodeShape> in;
    for (const std::string& dep : node.inputs) {
      auto it = shapes.find(dep);
      if (it == shapes.end()) {
        throw ParseError("node '" + node.id + "' consumes undefined '" + dep + "'");
      }
      in.push_back(it->second);
    }
    const NodeShape& first = in[0];
    NodeShape out = first;

    auto single_input = [&] {
      if (in.size() != 1) detail::infer_fail(node.id, "expects exactly one input");
    };
    auto spatial_input = [&] {
      if (!first.spatial) detail::infer_fail(node.id, "needs spatial [N,C,H,W] input");
    };

    switch (node.kind) {
      case NodeKind::conv: {
        single_input();
        spatial_input();
        if (node.conv_out < 1 || node.conv_kernel < 1) {
          detail::infer_fail(node.id, "conv needs out>=1 and kernel>=1");
        }
        try {
          out.h = output_dim(first.h, node.conv_kernel, node.conv_stride, node.conv_pad);
          out.w = output_dim(first.w, node.conv_kernel, node.conv_stride, node.conv_pad);
        } catch (const ShapeMismatch& e) {
          detail::infer_fail(node.id, e.what());
        }
        out.c = node.conv_out;
        break;
      }
      case NodeKind::maxpool:
      case NodeKind::avgpool: {
        single_input();
        spatial_input();
        if (first.h % 2 != 0 || first.w % 2 != 0) {
          detail::infer_fail(node.id, "2x2 pool needs even extents, got " + first.to_string());
        }
        out.h = first.h / 2;
        out.w = first.w / 2;
        break;
      }
      case NodeKind::gap: {
        single_input();
        spatial_input();
        out = NodeShape{false, first.c, 0, 0};
        break;
      }
      case NodeKind::batchnorm: {
        single_input();
        spatial_input();
        break;
      }
      case NodeKind::relu: {
        single_input();
        break;
      }
      case NodeKind::dense: {
        single_input();
        if (node.dense_units < 1) detail::infer_fail(node.id, "dense needs units>=1");
        out = NodeShape{false, node.dense_units, 0, 0};
        break;
      }
      case NodeKind::softmax: {
        single_input();
        if (first.spatial) detail::infer_fail(node.id, "softmax needs flat [N,K] input");
        break;
      }
      case NodeKind::add: {
        if (in.size() < 2) detail::infer_fail(node.id, "add needs >= 2 inputs");
        for (const NodeShape& s : in) {
          if (!(s == first)) {
            detail::infer_fail(node.id, "add inputs disagree: " + first.to_string() + " vs " +
                                            s.to_string());
          }
        }
        break;
      }
      case NodeKind::concat: {
        spatial_input();
        std::size_t total_c = 0;
        for (const NodeShape& s : in) {
          if (!s.spatial || s.h != first.h || s.w != first.w) {
            detail::infer_fail(node.id, "concat inputs disagree on H/W");
          }
          total_c += s.c;
        }
        out.c = total_c;
        break;
      }
    }
    shapes[node.id] = out;
  }

  if (spec.output_id.empty()) throw ParseError("spec '" + spec.name + "' has no output id");
  auto it = shapes.find(spec.output_id);
  if (it == shapes.end()) throw ParseError("output id '" + spec.output_id + "' is not a node");
  if (require_classifier_output &&
      (it->second.spatial || it->second.c != spec.class_count)) {
    throw ShapeMismatch("spec '" + spec.name + "' output is " + it->second.to_string() +
                        ", expected flat " + std::to_string(spec.class_count));
  }
  return shapes;
}

// Canonical line-oriented text form; serialize(parse(serialize(s))) is
// byte-identical.
inline std::string serialize_spec(const ArchitectureSpec& spec) {
  std::ostringstream os;
  os << "name " << spec.name << "\n";
  os << "input " << spec.input_shape.n << "x" << spec.input_shape.c << "x" << spec.input_shape.h
     << "x" << spec.input_shape.w << "\n";
  os << "classes " << spec.class_count << "\n";
  for (const NodeConfig& n : spec.nodes) {
    os << "node " << n.id << " " << kind_name(n.kind);
    switch (n.kind) {
      case NodeKind::conv:
        os << " out=" << n.conv_out << " kernel=" << n.conv_kernel << " stride=" << n.conv_stride
           << " pad=" << n.conv_pad << " bias=" << (n.conv_bias ? 1 : 0);
        break;
      case NodeKind::dense:
        os << " units=" << n.dense_units << " bias=" << (n.dense_bias ? 1 : 0);
        break;
      case NodeKind::batchnorm:
        os << " momentum=" << format_double(n.bn_momentum) << " eps=" << format_double(n.bn_epsilon);
        break;
      case NodeKind::add:
        os << " mean=" << (n.add_mean ? 1 : 0);
        break;
      default:
        break;
    }
    os << " inputs=";
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      if (i) os << ",";
      os << n.inputs[i];
    }
    os << "\n";
  }
  os << "output " << spec.output_id << "\n";
  return os.str();
}

namespace detail {

inline std::vector<std::string> tokens_of(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream is{std::string(line)};
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline std::pair<std::string, std::string> key_value(const std::string& tok,
                                                     const std::string& where) {
  const std::size_t eq = tok.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ParseError("expected key=value, got '" + tok + "' in " + where);
  }
  return {tok.substr(0, eq), tok.substr(eq + 1)};
}

}  // namespace detail

inline ArchitectureSpec parse_spec(const std::string& text) {
  ArchitectureSpec spec;
  spec.class_count = 0;
  std::set<std::string> defined{"input"};
  bool saw_name = false, saw_input = false, saw_classes = false;
  std::istringstream is(text);
  std::string raw;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    const std::string_view line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    const std::string where = "line " + std::to_string(lineno);
    const auto toks = detail::tokens_of(line);
    const std::string& head = toks[0];
    if (head == "name") {
      if (toks.size() != 2) throw ParseError("name needs one value, " + where);
      spec.name = toks[1];
      saw_name = true;
    } else if (head == "input") {
      if (toks.size() != 2) throw ParseError("input needs NxCxHxW, " + where);
      const auto parts = split(toks[1], 'x');
      if (parts.size() != 4) throw ParseError("input needs 4 extents, " + where);
      spec.input_shape.n = static_cast<std::size_t>(parse_int(parts[0], where));
      spec.input_shape.c = static_cast<std::size_t>(parse_int(parts[1], where));
      spec.input_shape.h = static_cast<std::size_t>(parse_int(parts[2], where));
      spec.input_shape.w = static_cast<std::size_t>(parse_int(parts[3], where));
      saw_input = true;
    } else if (head == "classes") {
      if (toks.size() != 2) throw ParseError("classes needs one value, " + where);
      spec.class_count = static_cast<std::size_t>(parse_int(toks[1], where));
      saw_classes = true;
    } else if (head == "output") {
      if (toks.size() != 2) throw ParseError("output needs one id, " + where);
      spec.output_id = toks[1];
    } else if (head == "node") {
      if (toks.size() < 4) throw ParseError("node needs id, kind and inputs, " + where);
      NodeConfig n;
      n.id = toks[1];
      n.kind = kind_from_name(toks[2]);
      bool saw_inputs = false;
      for (std::size_t i = 3; i < toks.size(); ++i) {
        const auto [key, value] = detail::key_value(toks[i], where);
        if (key == "inputs") {
          n.inputs = split(value, ',');
          saw_inputs = true;
        } else if (key == "out") {
          n.conv_out = static_cast<std::size_t>(parse_int(value, where));
        } else if (key == "kernel") {
          n.conv_kernel = static_cast<std::size_t>(parse_int(value, where));
        } else if (key == "stride") {
          n.conv_stride = static_cast<std::size_t>(parse_int(value, where));
        } else if (key == "pad") {
          n.conv_pad = static_cast<std::size_t>(parse_int(value, where));
        } else if (key == "bias") {
          const long long b = parse_int(value, where);
          if (n.kind == NodeKind::dense) {
            n.dense_bias = b != 0;
          } else {
            n.conv_bias = b != 0;
          }
        } else if (key == "units") {
          n.dense_units = static_cast<std::size_t>(parse_int(value, where));
        } else if (key == "momentum") {
          n.bn_momentum = parse_double(value, where);
        } else if (key == "eps") {
          n.bn_epsilon = parse_double(value, where);
        } else if (key == "mean") {
          n.add_mean = parse_int(value, where) != 0;
        } else {
          throw ParseError("unknown key '" + key + "', " + where);
        }
      }
      if (!saw_inputs || n.inputs.empty() || n.inputs[0].empty()) {
        throw ParseError("node '" + n.id + "' missing inputs=, " + where);
      }
      if (defined.count(n.id)) throw ParseError("duplicate node id '" + n.id + "', " + where);
      for (const std::string& dep : n.inputs) {
        if (!defined.count(dep)) {
          throw ParseError("node '" + n.id + "' consumes undefined '" + dep + "', " + where);
        }
      }
      defined.insert(n.id);
      spec.nodes.push_back(std::move(n));
    } else {
      throw ParseError("unknown directive '" + head + "', " + where);
    }
  }
  if (!saw_name || !saw_input || !saw_classes) {
    throw ParseError("spec needs name, input and classes headers");
  }
  if (spec.output_id.empty()) throw ParseError("spec needs an output line");
  if (!defined.count(spec.output_id)) {
    throw ParseError("output id '" + spec.output_id + "' is not a node");
  }
  return spec;
}

}  // namespace glyphnet
