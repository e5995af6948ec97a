#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "glyphnet/builders.hpp"
#include "glyphnet/data.hpp"
#include "glyphnet/errors.hpp"
#include "glyphnet/model.hpp"
#include "glyphnet/rng.hpp"
#include "glyphnet/util.hpp"

namespace glyphnet {

struct TrainConfig {
  std::string arch = "allconv";
  std::map<std::string, std::string> arch_opts;
  std::string spec_path;  // when set, overrides arch/arch_opts
  std::string data = "synth:k=10,n=600,seed=1";
  std::size_t epochs = 250;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  double lr_decay_factor = 0.1;
  std::vector<std::size_t> lr_milestones{150, 200};
  std::uint64_t seed = 1;
  // Split of the resolved dataset. Zero counts pick a per-class 3:1
  // train:test split; the validation share is carved from training.
  std::size_t train_count = 0;
  std::size_t test_count = 0;
  double validation_fraction = 0.1;

  void validate() const {
    // zero is allowed so a frozen run can serve as a no-op baseline
    if (!(learning_rate >= 0.0)) throw ValidationError("learning rate must be >= 0");
    if (momentum < 0.0 || momentum >= 1.0) throw ValidationError("momentum must be in [0,1)");
    if (batch_size < 1) throw ValidationError("batch size must be >= 1");
    if (epochs < 1) throw ValidationError("epochs must be >= 1");
  }

  // Learning rate for a 1-based epoch index: decays by the factor at each
  // milestone (epoch >= milestone).
  double lr_at(std::size_t epoch) const {
    double lr = learning_rate;
    for (std::size_t m : lr_milestones) {
      if (epoch >= m) lr *= lr_decay_factor;
    }
    return lr;
  }
};

struct MetricsRow {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_acc = 0.0;
  double epoch_seconds = 0.0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
  double test_acc = 0.0;
  std::uint64_t total_params = 0;
  TrainConfig config;
};

// CSV with one row per epoch, then test_acc and total_params footer rows.
// Losses and accuracies are printed in shortest round-trip form so the log
// parses back to identical doubles; only epoch_seconds is lossy.
inline std::string render_metrics(const MetricsLog& log) {
  std::ostringstream os;
  os << "epoch,train_loss,val_acc,epoch_seconds\n";
  char secbuf[32];
  for (const MetricsRow& r : log.rows) {
    std::snprintf(secbuf, sizeof(secbuf), "%.3f", r.epoch_seconds);
    os << r.epoch << "," << format_double(r.train_loss) << "," << format_double(r.val_acc) << ","
       << secbuf << "\n";
  }
  os << "test_acc," << format_double(log.test_acc) << "\n";
  os << "total_params," << log.total_params << "\n";
  return os.str();
}

inline MetricsLog parse_metrics(const std::string& text) {
  MetricsLog log;
  std::istringstream is(text);
  std::string line;
  bool header = true;
  while (std::getline(is, line)) {
    const std::string_view t = trim(line);
    if (t.empty()) continue;
    if (header) {
      if (t != "epoch,train_loss,val_acc,epoch_seconds") {
        throw ParseError("bad metrics header '" + std::string(t) + "'");
      }
      header = false;
      continue;
    }
    const auto fields = split(t, ',');
    if (fields[0] == "test_acc") {
      log.test_acc = parse_double(fields.at(1), "test_acc");
    } else if (fields[0] == "total_params") {
      log.total_params = static_cast<std::uint64_t>(parse_int(fields.at(1), "total_params"));
    } else {
      if (fields.size() != 4) throw ParseError("bad metrics row '" + std::string(t) + "'");
      MetricsRow r;
      r.epoch = static_cast<std::size_t>(parse_int(fields[0], "epoch"));
      r.train_loss = parse_double(fields[1], "train_loss");
      r.val_acc = parse_double(fields[2], "val_acc");
      r.epoch_seconds = parse_double(fields[3], "epoch_seconds");
      log.rows.push_back(r);
    }
  }
  return log;
}

// SGD with momentum: v <- momentum*v - lr*g; p <- p + v. Velocity buffers
// are keyed by parameter so they survive across steps.
class SgdOptimizer {
 public:
  explicit SgdOptimizer(double momentum) : momentum_(momentum) {}

  void step(Model& model, const Gradients& grads, double lr) {
    model.for_each_param([&](const std::string& id, const char* name, Tensor& param) {
      const std::string key = id + "/" + name;
      const std::map<std::string, Tensor>* table = nullptr;
      if (std::string(name) == "weights") {
        table = &grads.grad_w;
      } else if (std::string(name) == "bias") {
        table = &grads.grad_b;
      } else if (std::string(name) == "gamma") {
        table = &grads.grad_gamma;
      } else {
        table = &grads.grad_beta;
      }
      auto grad_it = table->find(id);
      if (grad_it == table->end()) {
        throw TapeMismatch("no gradient recorded for parameter " + key);
      }
      const Tensor* grad = &grad_it->second;
      if (!grad->same_shape(param)) {
        throw TapeMismatch("gradient " + grad->shape_string() + " for parameter " + key);
      }
      if (!grad->all_finite()) {
        throw NonFiniteValue("non-finite gradient for parameter " + key);
      }
      auto [it, inserted] = velocity_.try_emplace(key, param.shape());
      Tensor& v = it->second;
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = momentum_ * v[i] - lr * (*grad)[i];
        param[i] += v[i];
      }
    });
  }

  // Decays velocities without applying gradients (the zero-gradient step).
  void decay_only(Model& model, double) {
    model.for_each_param([&](const std::string& id, const char* name, Tensor& param) {
      const std::string key = id + "/" + std::string(name);
      auto [it, inserted] = velocity_.try_emplace(key, param.shape());
      Tensor& v = it->second;
      for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = momentum_ * v[i];
        param[i] += v[i];
      }
    });
  }

  const Tensor& velocity(const std::string& key) const { return velocity_.at(key); }

 private:
  double momentum_;
  std::map<std::string, Tensor> velocity_;
};

inline Tensor gather_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                           std::size_t begin, std::size_t end, std::vector<int>& labels_out) {
  const Shape4 s = ds.images.shape4();
  const std::size_t stride = s.c * s.h * s.w;
  Tensor batch({end - begin, s.c, s.h, s.w});
  labels_out.clear();
  for (std::size_t i = begin; i < end; ++i) {
    const std::size_t src = indices[i];
    std::copy(ds.images.data() + src * stride, ds.images.data() + (src + 1) * stride,
              batch.data() + (i - begin) * stride);
    labels_out.push_back(ds.labels[src]);
  }
  return batch;
}

// One pass over the training set: shuffles with an epoch-derived seed,
// walks full batches plus the final partial one, and applies an optimizer
// step per batch. Returns the sample-weighted mean loss.
inline double train_epoch(Model& model, const Dataset& train_set, const TrainConfig& config,
                          SgdOptimizer& optimizer, std::size_t epoch) {
  if (train_set.size() == 0) throw EmptyInput("training set is empty");
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(config.seed, 0x1000 + epoch));
  rng.shuffle(order);

  const double lr = config.lr_at(epoch);
  double loss_sum = 0.0;
  std::vector<int> labels;
  for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
    const std::size_t end = std::min(begin + config.batch_size, order.size());
    Tensor batch = gather_batch(train_set, order, begin, end, labels);
    ForwardResult fwd = forward(model, batch, RunMode::train);
    const double loss = cross_entropy(fwd.probs, labels);
    loss_sum += loss * static_cast<double>(end - begin);
    Gradients grads = backward_from_logits(fwd.tape, cross_entropy_logit_grad(fwd.probs, labels));
    optimizer.step(model, grads, lr);
  }
  return loss_sum / static_cast<double>(order.size());
}

// Eval-mode accuracy: argmax of the probability row against the label.
inline double evaluate(Model& model, const Dataset& ds, std::size_t batch_size = 64) {
  if (ds.size() == 0) throw EmptyInput("evaluation set is empty");
  check_labels(ds.labels, model.spec().class_count, ds.size());
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t correct = 0;
  std::vector<int> labels;
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(begin + batch_size, order.size());
    Tensor batch = gather_batch(ds, order, begin, end, labels);
    ForwardResult fwd = forward(model, batch, RunMode::eval);
    const std::size_t k = fwd.probs.extent(1);
    for (std::size_t i = 0; i < end - begin; ++i) {
      std::size_t arg = 0;
      double best = fwd.probs.at2(i, 0);
      for (std::size_t j = 1; j < k; ++j) {
        if (fwd.probs.at2(i, j) > best) {
          best = fwd.probs.at2(i, j);
          arg = j;
        }
      }
      if (arg == static_cast<std::size_t>(labels[i])) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// Resolves the network description: an explicit spec file wins, otherwise
// the named builder is invoked for the dataset's class count.
inline ArchitectureSpec resolve_architecture(const TrainConfig& config,
                                             std::size_t class_count) {
  if (!config.spec_path.empty()) {
    std::ifstream f(config.spec_path);
    if (!f) throw ValidationError("cannot open spec '" + config.spec_path + "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    ArchitectureSpec spec = parse_spec(text);
    if (spec.class_count != class_count) {
      throw ValidationError("spec '" + config.spec_path + "' classifies " +
                            std::to_string(spec.class_count) + " classes, dataset has " +
                            std::to_string(class_count));
    }
    return spec;
  }
  return build_architecture(config.arch, class_count, config.arch_opts);
}

struct ExperimentResult {
  MetricsLog log;
  Model model;
  DatasetFingerprint data_fingerprint;
};

// End-to-end run: resolve the dataset, split it, build and train the
// network for the configured epochs while logging loss, validation
// accuracy and wall time per epoch, then score the test set. Everything
// except the timing column is a deterministic function of the config.
inline ExperimentResult run_experiment(const TrainConfig& config) {
  config.validate();
  Dataset all = resolve_data_spec(config.data);
  const DatasetFingerprint fingerprint = dataset_fingerprint(all);

  SplitSpec split_spec;
  split_spec.seed = mix_seed(config.seed, 0xda7a);
  split_spec.validation_fraction = config.validation_fraction;
  if (config.train_count == 0 && config.test_count == 0) {
    std::vector<std::size_t> per_class(all.class_count, 0);
    for (int y : all.labels) ++per_class[static_cast<std::size_t>(y)];
    const std::size_t available = *std::min_element(per_class.begin(), per_class.end());
    const std::size_t train_pc = available * 3 / 4;
    split_spec.train_count = train_pc * all.class_count;
    split_spec.test_count = (available - train_pc) * all.class_count;
  } else {
    split_spec.train_count = config.train_count;
    split_spec.test_count = config.test_count;
  }
  SplitResult parts = split(all, split_spec);

  ArchitectureSpec arch = resolve_architecture(config, all.class_count);
  infer_shapes(arch);

  Model model(arch, mix_seed(config.seed, 0x11217));
  SgdOptimizer optimizer(config.momentum);

  ExperimentResult result{MetricsLog{}, std::move(model), fingerprint};
  result.log.config = config;
  result.log.total_params = result.model.trainable_param_count();

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = train_epoch(result.model, parts.train, config, optimizer, epoch);
    row.val_acc = parts.validation.size() > 0 ? evaluate(result.model, parts.validation) : 0.0;
    row.epoch_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                            .count();
    result.log.rows.push_back(row);
  }
  result.log.test_acc = parts.test.size() > 0 ? evaluate(result.model, parts.test) : 0.0;
  return result;
}

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(out, bits);
}

}  // namespace detail

// Checkpoint: "GNCK" magic, a text manifest embedding the architecture
// and model seed, then a flat little-endian float64 blob per parameter
// keyed by node id, closed by an FNV-1a64 content hash.
inline void save_checkpoint(const Model& model, const std::string& path) {
  std::string out;
  out += "GNCK";
  detail::put_u16(out, 1);
  std::string manifest = "seed " + std::to_string(model.seed()) + "\n" +
                         serialize_spec(model.spec());
  detail::put_u32(out, static_cast<std::uint32_t>(manifest.size()));
  out += manifest;

  std::uint32_t count = 0;
  model.for_each_param([&](const std::string&, const char*, const Tensor&) { ++count; });
  model.for_each_buffer([&](const std::string&, const char*, const Tensor&) { ++count; });
  detail::put_u32(out, count);
  auto emit = [&out](const std::string& id, const char* name, const Tensor& t) {
    const std::string key = id + "/" + name;
    detail::put_u16(out, static_cast<std::uint16_t>(key.size()));
    out += key;
    detail::put_u16(out, static_cast<std::uint16_t>(t.rank()));
    for (std::size_t i = 0; i < t.rank(); ++i) {
      detail::put_u32(out, static_cast<std::uint32_t>(t.extent(i)));
    }
    for (std::size_t i = 0; i < t.size(); ++i) detail::put_f64(out, t[i]);
  };
  model.for_each_param(emit);
  model.for_each_buffer(emit);
  detail::put_u64(out, fnv1a64(out.data(), out.size()));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw ValidationError("cannot write checkpoint '" + path + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open checkpoint '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 18 || buf.compare(0, 4, "GNCK") != 0) {
    throw CheckpointMismatch("bad checkpoint magic in '" + path + "'");
  }
  const std::uint64_t stored_hash = [&] {
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(buf[buf.size() - 8 + i]);
    }
    return v;
  }();
  if (fnv1a64(buf.data(), buf.size() - 8) != stored_hash) {
    throw CheckpointMismatch("checkpoint content hash mismatch in '" + path + "'");
  }

  detail::ByteReader r{buf};
  r.pos = 4;
  const std::uint16_t version = r.u16();
  if (version != 1) throw CheckpointMismatch("unsupported checkpoint version");
  const std::uint32_t manifest_len = r.u32();
  r.need(manifest_len);
  const std::string manifest = buf.substr(r.pos, manifest_len);
  r.pos += manifest_len;

  const std::size_t nl = manifest.find('\n');
  if (nl == std::string::npos || manifest.compare(0, 5, "seed ") != 0) {
    throw CheckpointMismatch("checkpoint manifest missing seed line");
  }
  const std::uint64_t seed =
      static_cast<std::uint64_t>(parse_int(trim(manifest.substr(5, nl - 5)), "checkpoint seed"));
  ArchitectureSpec spec = parse_spec(manifest.substr(nl + 1));
  Model model(std::move(spec), seed);

  std::map<std::string, Tensor*> params;
  model.for_each_param([&](const std::string& id, const char* name, Tensor& t) {
    params[id + "/" + name] = &t;
  });
  model.for_each_buffer([&](const std::string& id, const char* name, Tensor& t) {
    params[id + "/" + name] = &t;
  });

  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw CheckpointMismatch("checkpoint has " + std::to_string(count) + " parameters, spec needs " +
                             std::to_string(params.size()));
  }
  for (std::uint32_t p = 0; p < count; ++p) {
    const std::uint16_t key_len = r.u16();
    r.need(key_len);
    const std::string key = buf.substr(r.pos, key_len);
    r.pos += key_len;
    const std::uint16_t rank = r.u16();
    std::vector<std::size_t> shape;
    std::size_t total = 1;
    for (std::uint16_t i = 0; i < rank; ++i) {
      shape.push_back(r.u32());
      total *= shape.back();
    }
    auto it = params.find(key);
    if (it == params.end()) throw CheckpointMismatch("unexpected parameter '" + key + "'");
    if (it->second->shape() != shape) {
      throw CheckpointMismatch("parameter '" + key + "' has shape " +
                               shape_to_string(shape) + ", spec needs " +
                               it->second->shape_string());
    }
    for (std::size_t i = 0; i < total; ++i) {
      const std::uint32_t lo = r.u32();
      const std::uint32_t hi = r.u32();
      const std::uint64_t bits = (static_cast<std::uint64_t>(hi) << 32) | lo;
      double d;
      std::memcpy(&d, &bits, sizeof(d));
      (*it->second)[i] = d;
    }
  }
  return model;
}

}  // namespace glyphnet
