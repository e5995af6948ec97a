#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "glyphnet/graph.hpp"
#include "glyphnet/layers.hpp"
#include "glyphnet/rng.hpp"
#include "glyphnet/tensor.hpp"
#include "glyphnet/util.hpp"

namespace glyphnet {

enum class RunMode { train, eval };

// Learnable and running state for one node; only the slot matching the
// node's kind is populated.
struct NodeState {
  ConvParams conv;
  DenseParams dense;
  BatchNormState bn;
};

// A spec instantiated with parameter tensors. He-uniform weights, zero
// biases and beta, unit gamma; every draw comes from a per-node stream
// derived from the model seed, so parameter values do not depend on node
// order elsewhere in the graph.
class Model {
 public:
  Model(ArchitectureSpec spec, std::uint64_t seed)
      : spec_(std::move(spec)), seed_(seed), shapes_(infer_shapes(spec_)) {
    states_.resize(spec_.nodes.size());
    for (std::size_t i = 0; i < spec_.nodes.size(); ++i) {
      const NodeConfig& node = spec_.nodes[i];
      index_[node.id] = i;
      const NodeShape in_shape = shapes_.at(node.inputs[0]);
      NodeState& st = states_[i];
      Rng rng(mix_seed(seed_, fnv1a64(node.id.data(), node.id.size())));
      switch (node.kind) {
        case NodeKind::conv: {
          ConvParams& p = st.conv;
          p.in_channels = in_shape.c;
          p.out_channels = node.conv_out;
          p.kernel = node.conv_kernel;
          p.stride = node.conv_stride;
          p.padding = node.conv_pad;
          p.use_bias = node.conv_bias;
          p.weights = Tensor({p.out_channels, p.in_channels, p.kernel, p.kernel});
          const double limit =
              std::sqrt(6.0 / static_cast<double>(p.in_channels * p.kernel * p.kernel));
          for (std::size_t j = 0; j < p.weights.size(); ++j) {
            p.weights[j] = rng.uniform(-limit, limit);
          }
          if (p.use_bias) p.bias = Tensor({p.out_channels});
          break;
        }
        case NodeKind::dense: {
          DenseParams& p = st.dense;
          p.use_bias = node.dense_bias;
          const std::size_t in_dim = in_shape.flat_dim();
          p.weights = Tensor({in_dim, node.dense_units});
          const double limit = std::sqrt(6.0 / static_cast<double>(in_dim));
          for (std::size_t j = 0; j < p.weights.size(); ++j) {
            p.weights[j] = rng.uniform(-limit, limit);
          }
          if (p.use_bias) p.bias = Tensor({node.dense_units});
          break;
        }
        case NodeKind::batchnorm: {
          st.bn = BatchNormState::make(in_shape.c, node.bn_momentum, node.bn_epsilon);
          break;
        }
        default:
          break;
      }
    }
  }

  const ArchitectureSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  const std::map<std::string, NodeShape>& shapes() const { return shapes_; }

  std::size_t node_index(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ParseError("no node '" + id + "'");
    return it->second;
  }

  NodeState& state(std::size_t i) { return states_[i]; }
  const NodeState& state(std::size_t i) const { return states_[i]; }

  // Visits learnable tensors in node order with a stable per-kind order;
  // the optimizer, checkpoints and tests all rely on this enumeration.
  template <typename Fn>
  void for_each_param(Fn&& fn) {
    for (std::size_t i = 0; i < spec_.nodes.size(); ++i) {
      const NodeConfig& node = spec_.nodes[i];
      NodeState& st = states_[i];
      switch (node.kind) {
        case NodeKind::conv:
          fn(node.id, "weights", st.conv.weights);
          if (st.conv.use_bias) fn(node.id, "bias", st.conv.bias);
          break;
        case NodeKind::dense:
          fn(node.id, "weights", st.dense.weights);
          if (st.dense.use_bias) fn(node.id, "bias", st.dense.bias);
          break;
        case NodeKind::batchnorm:
          fn(node.id, "gamma", st.bn.gamma);
          fn(node.id, "beta", st.bn.beta);
          break;
        default:
          break;
      }
    }
  }

  template <typename Fn>
  void for_each_param(Fn&& fn) const {
    const_cast<Model*>(this)->for_each_param(
        [&](const std::string& id, const char* name, Tensor& t) {
          fn(id, name, static_cast<const Tensor&>(t));
        });
  }

  // Non-trainable running state (batchnorm statistics). Checkpoints must
  // carry these or a reloaded model evaluates with init-value statistics.
  template <typename Fn>
  void for_each_buffer(Fn&& fn) {
    for (std::size_t i = 0; i < spec_.nodes.size(); ++i) {
      if (spec_.nodes[i].kind == NodeKind::batchnorm) {
        fn(spec_.nodes[i].id, "running_mean", states_[i].bn.running_mean);
        fn(spec_.nodes[i].id, "running_var", states_[i].bn.running_var);
      }
    }
  }

  template <typename Fn>
  void for_each_buffer(Fn&& fn) const {
    const_cast<Model*>(this)->for_each_buffer(
        [&](const std::string& id, const char* name, Tensor& t) {
          fn(id, name, static_cast<const Tensor&>(t));
        });
  }

  std::uint64_t trainable_param_count() const {
    std::uint64_t total = 0;
    for_each_param([&](const std::string&, const char*, const Tensor& t) { total += t.size(); });
    return total;
  }

 private:
  ArchitectureSpec spec_;
  std::uint64_t seed_ = 0;
  std::map<std::string, NodeShape> shapes_;
  std::map<std::string, std::size_t> index_;
  std::vector<NodeState> states_;
};

using TensorPtr = std::shared_ptr<const Tensor>;

// One executed node with everything its backward needs.
struct TapeEntry {
  std::size_t node = 0;
  std::vector<TensorPtr> inputs;
  TensorPtr output;
  std::vector<std::size_t> argmax;            // maxpool
  std::vector<std::size_t> pooled_shape;      // maxpool/avgpool/gap input shape
  BatchNormCache bn_cache;                    // batchnorm
  std::vector<std::size_t> unflatten_shape;   // dense consuming 4-D input
};

// Record of one train-mode forward pass in execution order.
struct GradientTape {
  const Model* model = nullptr;
  std::vector<TapeEntry> entries;
};

struct ForwardResult {
  Tensor probs;
  GradientTape tape;
};

// Executes nodes in list order (inputs always precede consumers). Train
// mode records a tape and updates batchnorm running statistics; eval mode
// uses the running statistics and returns an empty tape. Every node output
// is checked finite so a blow-up names its node.
inline ForwardResult forward(Model& model, const Tensor& batch, RunMode mode) {
  const ArchitectureSpec& spec = model.spec();
  const Shape4 in = batch.shape4();
  if (in.c != spec.input_shape.c || in.h != spec.input_shape.h || in.w != spec.input_shape.w) {
    throw ShapeMismatch("batch " + batch.shape_string() + " does not match spec input " +
                        std::to_string(spec.input_shape.c) + "x" +
                        std::to_string(spec.input_shape.h) + "x" +
                        std::to_string(spec.input_shape.w));
  }
  const bool train = mode == RunMode::train;

  std::map<std::string, TensorPtr> values;
  values["input"] = std::make_shared<Tensor>(batch);

  ForwardResult result;
  if (train) result.tape.model = &model;

  for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
    const NodeConfig& node = spec.nodes[i];
    NodeState& st = model.state(i);
    std::vector<TensorPtr> inputs;
    for (const std::string& dep : node.inputs) inputs.push_back(values.at(dep));
    const Tensor& x = *inputs[0];

    TapeEntry entry;
    entry.node = i;
    Tensor out;
    switch (node.kind) {
      case NodeKind::conv:
        out = conv2d_forward(x, st.conv);
        entry.inputs = inputs;
        break;
      case NodeKind::maxpool: {
        MaxPoolResult r = maxpool2x2_forward(x);
        out = std::move(r.y);
        entry.argmax = std::move(r.argmax);
        entry.pooled_shape = x.shape();
        break;
      }
      case NodeKind::avgpool:
        out = avgpool2x2_forward(x);
        entry.pooled_shape = x.shape();
        break;
      case NodeKind::gap:
        out = global_avg_pool_forward(x);
        entry.pooled_shape = x.shape();
        break;
      case NodeKind::batchnorm:
        out = batchnorm_forward(x, st.bn, train, train ? &entry.bn_cache : nullptr);
        break;
      case NodeKind::relu:
        out = relu_forward(x);
        entry.inputs = inputs;
        break;
      case NodeKind::dense: {
        if (x.rank() == 4) {
          const Shape4 s = x.shape4();
          Tensor flat = x.reshape({s.n, s.c * s.h * s.w});
          entry.unflatten_shape = x.shape();
          out = dense_forward(flat, st.dense);
          entry.inputs.push_back(std::make_shared<Tensor>(std::move(flat)));
        } else {
          out = dense_forward(x, st.dense);
          entry.inputs = inputs;
        }
        break;
      }
      case NodeKind::softmax:
        out = softmax_forward(x);
        entry.inputs = inputs;
        break;
      case NodeKind::add: {
        out = *inputs[0];
        for (std::size_t j = 1; j < inputs.size(); ++j) {
          out = elementwise(out, *inputs[j], BinaryOp::add);
        }
        if (node.add_mean) out = scale(out, 1.0 / static_cast<double>(inputs.size()));
        break;
      }
      case NodeKind::concat: {
        std::vector<Tensor> parts;
        parts.reserve(inputs.size());
        for (const TensorPtr& p : inputs) parts.push_back(*p);
        out = concat_channels(parts);
        entry.inputs = inputs;
        break;
      }
    }
    if (!out.all_finite()) {
      throw NonFiniteValue("non-finite activation at node '" + node.id + "'");
    }
    auto out_ptr = std::make_shared<Tensor>(std::move(out));
    values[node.id] = out_ptr;
    if (train) {
      entry.output = out_ptr;
      result.tape.entries.push_back(std::move(entry));
    }
  }

  result.probs = *values.at(spec.output_id);
  return result;
}

// Gradient tensors for every learnable parameter plus the gradient w.r.t.
// the network input.
struct Gradients {
  std::map<std::string, Tensor> grad_w;      // conv/dense weights by node id
  std::map<std::string, Tensor> grad_b;      // conv/dense bias by node id
  std::map<std::string, Tensor> grad_gamma;  // batchnorm by node id
  std::map<std::string, Tensor> grad_beta;
  Tensor input_grad;
};

namespace detail {

// Adds `g` into the accumulator for `id`; nodes with several consumers
// sum their incoming gradients here.
inline void accumulate(std::map<std::string, Tensor>& acc, const std::string& id,
                       Tensor&& g) {
  auto it = acc.find(id);
  if (it == acc.end()) {
    acc.emplace(id, std::move(g));
  } else {
    it->second = elementwise(it->second, g, BinaryOp::add);
  }
}

inline Gradients run_backward(const GradientTape& tape, const Tensor& seed_grad,
                              bool skip_softmax) {
  if (tape.model == nullptr || tape.entries.empty()) {
    throw TapeMismatch("backward needs a tape recorded by a train-mode forward");
  }
  const Model& model = *tape.model;
  const ArchitectureSpec& spec = model.spec();

  std::map<std::string, Tensor> acc;
  std::size_t out_entry = tape.entries.size();
  for (std::size_t e = tape.entries.size(); e-- > 0;) {
    if (spec.nodes[tape.entries[e].node].id == spec.output_id) {
      out_entry = e;
      break;
    }
  }
  if (out_entry == tape.entries.size()) {
    throw TapeMismatch("tape does not contain output node '" + spec.output_id + "'");
  }
  {
    const TapeEntry& out = tape.entries[out_entry];
    const NodeConfig& out_node = spec.nodes[out.node];
    const std::string& seed_id = skip_softmax ? out_node.inputs[0] : out_node.id;
    const Tensor& ref = skip_softmax ? *out.inputs[0] : *out.output;
    if (!seed_grad.same_shape(ref)) {
      throw TapeMismatch("loss gradient " + seed_grad.shape_string() + " does not match " +
                         ref.shape_string());
    }
    acc.emplace(seed_id, seed_grad);
  }

  Gradients grads;
  for (std::size_t e = out_entry + (skip_softmax ? 0 : 1); e-- > 0;) {
    const TapeEntry& entry = tape.entries[e];
    const NodeConfig& node = spec.nodes[entry.node];
    auto it = acc.find(node.id);
    if (it == acc.end()) continue;  // no gradient reached this node
    const Tensor grad_out = std::move(it->second);
    acc.erase(it);
    if (!grad_out.all_finite()) {
      throw NonFiniteValue("non-finite gradient at node '" + node.id + "'");
    }
    const NodeState& st = model.state(entry.node);

    switch (node.kind) {
      case NodeKind::conv: {
        ConvGrads g = conv2d_backward(*entry.inputs[0], st.conv, grad_out);
        grads.grad_w.emplace(node.id, std::move(g.grad_w));
        if (st.conv.use_bias) grads.grad_b.emplace(node.id, std::move(g.grad_b));
        accumulate(acc, node.inputs[0], std::move(g.grad_x));
        break;
      }
      case NodeKind::maxpool:
        accumulate(acc, node.inputs[0],
                   maxpool2x2_backward(entry.argmax, entry.pooled_shape, grad_out));
        break;
      case NodeKind::avgpool:
        accumulate(acc, node.inputs[0], avgpool2x2_backward(entry.pooled_shape, grad_out));
        break;
      case NodeKind::gap:
        accumulate(acc, node.inputs[0], global_avg_pool_backward(entry.pooled_shape, grad_out));
        break;
      case NodeKind::batchnorm: {
        BatchNormGrads g = batchnorm_backward(st.bn, entry.bn_cache, grad_out);
        grads.grad_gamma.emplace(node.id, std::move(g.grad_gamma));
        grads.grad_beta.emplace(node.id, std::move(g.grad_beta));
        accumulate(acc, node.inputs[0], std::move(g.grad_x));
        break;
      }
      case NodeKind::relu:
        accumulate(acc, node.inputs[0], relu_backward(*entry.inputs[0], grad_out));
        break;
      case NodeKind::dense: {
        DenseGrads g = dense_backward(*entry.inputs[0], st.dense, grad_out);
        grads.grad_w.emplace(node.id, std::move(g.grad_w));
        if (st.dense.use_bias) grads.grad_b.emplace(node.id, std::move(g.grad_b));
        Tensor gx = entry.unflatten_shape.empty() ? std::move(g.grad_x)
                                                  : g.grad_x.reshape(entry.unflatten_shape);
        accumulate(acc, node.inputs[0], std::move(gx));
        break;
      }
      case NodeKind::softmax:
        accumulate(acc, node.inputs[0], softmax_backward(*entry.output, grad_out));
        break;
      case NodeKind::add: {
        const double factor = node.add_mean ? 1.0 / static_cast<double>(node.inputs.size()) : 1.0;
        for (const std::string& dep : node.inputs) {
          accumulate(acc, dep, node.add_mean ? scale(grad_out, factor) : Tensor(grad_out));
        }
        break;
      }
      case NodeKind::concat: {
        std::size_t c_off = 0;
        for (std::size_t j = 0; j < node.inputs.size(); ++j) {
          const std::size_t width = entry.inputs[j]->extent(1);
          accumulate(acc, node.inputs[j], slice_channels(grad_out, c_off, c_off + width));
          c_off += width;
        }
        break;
      }
    }
  }

  auto input_it = acc.find("input");
  if (input_it != acc.end()) grads.input_grad = std::move(input_it->second);
  return grads;
}

}  // namespace detail

// Reverse pass seeded with the loss gradient w.r.t. the network output
// (the softmax probabilities).
inline Gradients backward(const GradientTape& tape, const Tensor& loss_grad) {
  return detail::run_backward(tape, loss_grad, false);
}

// Reverse pass seeded at the softmax *input* with the fused
// softmax+cross-entropy gradient (p - onehot)/N; numerically preferable
// for training since it never divides by a vanishing probability.
inline Gradients backward_from_logits(const GradientTape& tape, const Tensor& logit_grad) {
  if (tape.model == nullptr || tape.entries.empty()) {
    throw TapeMismatch("backward needs a tape recorded by a train-mode forward");
  }
  const ArchitectureSpec& spec = tape.model->spec();
  if (spec.node(spec.output_id).kind != NodeKind::softmax) {
    throw TapeMismatch("logit-seeded backward needs a softmax output node");
  }
  return detail::run_backward(tape, logit_grad, true);
}

}  // namespace glyphnet
