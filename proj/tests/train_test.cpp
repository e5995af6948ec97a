#include "glyphnet/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "glyphnet/builders.hpp"
#include "oracle.hpp"

using namespace glyphnet;
namespace fs = std::filesystem;

namespace {

// Smallest possible model: one dense 1->2 head over a 1x1x1x1 input.
ArchitectureSpec scalar_spec() {
  ArchitectureSpec spec;
  spec.name = "scalar";
  spec.input_shape = Shape4{1, 1, 1, 1};
  spec.class_count = 2;
  spec.nodes.push_back(NodeConfig{.id = "g", .kind = NodeKind::gap, .inputs = {"input"}});
  spec.nodes.push_back(
      NodeConfig{.id = "fc", .kind = NodeKind::dense, .inputs = {"g"}, .dense_units = 2});
  spec.nodes.push_back(NodeConfig{.id = "sm", .kind = NodeKind::softmax, .inputs = {"fc"}});
  spec.output_id = "sm";
  return spec;
}

Gradients fc_gradient(double g0, double g1) {
  Gradients grads;
  grads.grad_w.emplace("fc", Tensor({1, 2}, {g0, g1}));
  return grads;
}

std::vector<Tensor> snapshot(Model& model) {
  std::vector<Tensor> out;
  model.for_each_param([&](const std::string&, const char*, const Tensor& t) {
    out.push_back(t);
  });
  return out;
}

}  // namespace

TEST(Sgd, PlainStepWithoutMomentum) {
  Model model(scalar_spec(), 1);
  model.for_each_param([](const std::string&, const char*, Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
  });
  SgdOptimizer opt(0.0);
  opt.step(model, fc_gradient(1.0, 0.0), 0.1);
  const std::vector<Tensor> p = snapshot(model);
  EXPECT_DOUBLE_EQ(p[0][0], -0.1);
  EXPECT_DOUBLE_EQ(p[0][1], 0.0);
}

TEST(Sgd, ZeroGradientsDecayVelocity) {
  Model model(scalar_spec(), 2);
  SgdOptimizer opt(0.5);
  opt.step(model, fc_gradient(2.0, 0.0), 0.1);  // v = -0.2
  const std::vector<Tensor> before = snapshot(model);
  opt.step(model, fc_gradient(0.0, 0.0), 0.1);  // v = -0.1, param += v
  EXPECT_DOUBLE_EQ(opt.velocity("fc/weights")[0], -0.1);
  const std::vector<Tensor> after = snapshot(model);
  EXPECT_DOUBLE_EQ(after[0][0], before[0][0] - 0.1);
  EXPECT_DOUBLE_EQ(after[0][1], before[0][1]);
}

TEST(Sgd, TwoStepsMatchHandUnrolledRecurrence) {
  Model model(scalar_spec(), 3);
  double p0 = 0.0;
  model.for_each_param([&](const std::string&, const char*, Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
  });
  const double lr = 0.05, m = 0.9, g1 = 0.7, g2 = -1.3;
  SgdOptimizer opt(m);
  opt.step(model, fc_gradient(g1, 0.0), lr);
  opt.step(model, fc_gradient(g2, 0.0), lr);

  // hand-unrolled: v1 = -lr*g1; p1 = p0+v1; v2 = m*v1 - lr*g2; p2 = p1+v2
  const double v1 = -lr * g1;
  const double p1 = p0 + v1;
  const double v2 = m * v1 - lr * g2;
  const double p2 = p1 + v2;
  EXPECT_NEAR(snapshot(model)[0][0], p2, 1e-15);
}

TEST(Sgd, RejectsNonFiniteGradient) {
  Model model(scalar_spec(), 4);
  SgdOptimizer opt(0.9);
  Gradients bad = fc_gradient(std::numeric_limits<double>::quiet_NaN(), 0.0);
  EXPECT_THROW(opt.step(model, bad, 0.1), NonFiniteValue);
  Gradients wrong_shape;
  wrong_shape.grad_w.emplace("fc", Tensor({2, 2}));
  EXPECT_THROW(opt.step(model, wrong_shape, 0.1), TapeMismatch);
  EXPECT_THROW(opt.step(model, Gradients{}, 0.1), TapeMismatch);
}

TEST(Config, LearningRateSchedule) {
  TrainConfig config;
  config.learning_rate = 0.01;
  config.lr_decay_factor = 0.1;
  config.lr_milestones = {150, 200};
  EXPECT_DOUBLE_EQ(config.lr_at(1), 0.01);
  EXPECT_DOUBLE_EQ(config.lr_at(149), 0.01);
  EXPECT_NEAR(config.lr_at(150), 0.001, 1e-15);
  EXPECT_NEAR(config.lr_at(199), 0.001, 1e-15);
  EXPECT_NEAR(config.lr_at(200), 0.0001, 1e-15);
  EXPECT_NEAR(config.lr_at(250), 0.0001, 1e-15);

  TrainConfig bad;
  bad.learning_rate = -1.0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = TrainConfig{};
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = TrainConfig{};
  bad.momentum = 1.0;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(TrainEpoch, ZeroLearningRateKeepsParameters) {
  const Dataset train_set = synth_glyphs(21, 2, 2, 0.0, 0.5);
  Model model(build_allconv(2, 4), 5);
  const std::vector<Tensor> before = snapshot(model);

  TrainConfig config;
  config.learning_rate = 0.0;
  config.batch_size = 2;
  config.seed = 7;
  SgdOptimizer opt(config.momentum);
  const double loss = train_epoch(model, train_set, config, opt, 1);
  const std::vector<Tensor> after = snapshot(model);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(before[i], after[i]);

  // no batchnorm in this stack, so the train loss equals the eval loss of
  // the untouched model
  ForwardResult ev = forward(model, train_set.images, RunMode::eval);
  ASSERT_EQ(ev.probs.extent(0), 4u);
  EXPECT_DOUBLE_EQ(loss, cross_entropy(ev.probs, train_set.labels));
}

TEST(TrainEpoch, DeterministicUnderSeed) {
  const Dataset train_set = synth_glyphs(22, 3, 6, 0.05, 1.0);
  TrainConfig config;
  config.learning_rate = 0.05;
  config.batch_size = 4;
  config.seed = 9;

  auto run = [&] {
    Model model(build_allconv(3, 4), 13);
    SgdOptimizer opt(config.momentum);
    double last = 0.0;
    for (std::size_t e = 1; e <= 3; ++e) last = train_epoch(model, train_set, config, opt, e);
    return last;
  };
  const double a = run();
  const double b = run();
  EXPECT_EQ(a, b);
}

TEST(TrainEpoch, LossDecreasesOnToyMemorization) {
  // 50-sample toy set: the first five epochs show a strict decrease for
  // at least 4 of 5 seeds.
  const Dataset train_set = synth_glyphs(23, 10, 5, 0.02, 0.5);
  int monotone = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    TrainConfig config;
    config.learning_rate = 0.02;
    config.batch_size = 10;
    config.seed = seed;
    Model model(build_allconv(10, 4), seed * 100);
    SgdOptimizer opt(config.momentum);
    std::vector<double> losses;
    for (std::size_t e = 1; e <= 5; ++e) {
      losses.push_back(train_epoch(model, train_set, config, opt, e));
    }
    bool strict = true;
    for (std::size_t i = 1; i < losses.size(); ++i) strict = strict && losses[i] < losses[i - 1];
    monotone += strict;
  }
  EXPECT_GE(monotone, 4);
}

TEST(Evaluate, SelfConsistentLabelsScorePerfectly) {
  const Dataset ds = synth_glyphs(24, 4, 5, 0.05, 1.0);
  Model model(build_allconv(4, 4), 17);
  // label every sample with the model's own argmax
  Dataset relabeled = ds;
  ForwardResult fwd = forward(model, ds.images, RunMode::eval);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    std::size_t arg = 0;
    for (std::size_t j = 1; j < 4; ++j) {
      if (fwd.probs.at2(i, j) > fwd.probs.at2(i, arg)) arg = j;
    }
    relabeled.labels[i] = static_cast<int>(arg);
  }
  EXPECT_DOUBLE_EQ(evaluate(model, relabeled), 1.0);
}

TEST(Evaluate, ZeroedHeadFollowsTieRule) {
  // uniform probabilities everywhere: argmax lands on class 0, so the
  // balanced-set accuracy is exactly 1/K
  const Dataset ds = synth_glyphs(25, 10, 6, 0.05, 1.0);
  Model model(build_allconv(10, 4), 19);
  model.for_each_param([](const std::string& id, const char*, Tensor& t) {
    if (id == "outputs") {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.0;
    }
  });
  EXPECT_DOUBLE_EQ(evaluate(model, ds), 0.1);
}

TEST(Evaluate, InvariantUnderPermutation) {
  const Dataset ds = synth_glyphs(26, 3, 8, 0.05, 1.0);
  Model model(build_allconv(3, 4), 23);
  const double base = evaluate(model, ds);
  std::vector<std::size_t> perm(ds.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = perm.size() - 1 - i;
  const Dataset reversed = ds.subset(perm, "reversed");
  EXPECT_DOUBLE_EQ(evaluate(model, reversed), base);
}

TEST(Evaluate, LabelOutsideModelRange) {
  Dataset ds = synth_glyphs(27, 4, 2, 0.0, 0.0);
  Model model(build_allconv(3, 4), 29);  // 3-way classifier, labels reach 3
  EXPECT_THROW(evaluate(model, ds), LabelOutOfRange);
}

TEST(Metrics, RenderParseRoundTrip) {
  MetricsLog log;
  log.rows.push_back(MetricsRow{1, 2.302585092994046, 0.125, 0.5});
  log.rows.push_back(MetricsRow{2, 1.0 / 3.0, 0.98765432101, 1.25});
  log.test_acc = 0.8125;
  log.total_params = 123456;
  const std::string text = render_metrics(log);
  const MetricsLog back = parse_metrics(text);
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[1].train_loss, log.rows[1].train_loss);  // lossless
  EXPECT_EQ(back.rows[1].val_acc, log.rows[1].val_acc);
  EXPECT_EQ(back.test_acc, log.test_acc);
  EXPECT_EQ(back.total_params, log.total_params);
  EXPECT_EQ(render_metrics(back).substr(0, text.rfind("test_acc")),
            text.substr(0, text.rfind("test_acc")));
}

TEST(RunExperiment, SmokeAndRowContract) {
  TrainConfig config;
  config.arch = "allconv";
  config.arch_opts = {{"width", "4"}};
  config.data = "synth:k=10,n=80,seed=2";
  config.epochs = 1;
  config.batch_size = 16;
  config.seed = 3;
  const ExperimentResult result = run_experiment(config);
  ASSERT_EQ(result.log.rows.size(), 1u);
  const MetricsRow& row = result.log.rows[0];
  EXPECT_EQ(row.epoch, 1u);
  EXPECT_TRUE(std::isfinite(row.train_loss));
  EXPECT_GE(row.train_loss, 0.0);
  EXPECT_GE(row.val_acc, 0.0);
  EXPECT_LE(row.val_acc, 1.0);
  EXPECT_GE(row.epoch_seconds, 0.0);
  EXPECT_GE(result.log.test_acc, 0.0);
  EXPECT_LE(result.log.test_acc, 1.0);
  EXPECT_EQ(result.log.total_params, result.model.trainable_param_count());
  EXPECT_EQ(result.data_fingerprint.count, 80u);
}

TEST(RunExperiment, DeterministicExceptTiming) {
  TrainConfig config;
  config.arch = "allconv";
  config.arch_opts = {{"width", "4"}};
  config.data = "synth:k=4,n=40,seed=5";
  config.epochs = 2;
  config.batch_size = 8;
  config.seed = 11;
  const ExperimentResult a = run_experiment(config);
  const ExperimentResult b = run_experiment(config);
  ASSERT_EQ(a.log.rows.size(), b.log.rows.size());
  for (std::size_t i = 0; i < a.log.rows.size(); ++i) {
    EXPECT_EQ(a.log.rows[i].train_loss, b.log.rows[i].train_loss);
    EXPECT_EQ(a.log.rows[i].val_acc, b.log.rows[i].val_acc);
  }
  EXPECT_EQ(a.log.test_acc, b.log.test_acc);
  bool params_equal = true;
  std::vector<const Tensor*> pa, pb;
  const_cast<Model&>(a.model).for_each_param(
      [&](const std::string&, const char*, const Tensor& t) { pa.push_back(&t); });
  const_cast<Model&>(b.model).for_each_param(
      [&](const std::string&, const char*, const Tensor& t) { pb.push_back(&t); });
  for (std::size_t i = 0; i < pa.size(); ++i) params_equal = params_equal && (*pa[i] == *pb[i]);
  EXPECT_TRUE(params_equal);
}

TEST(RunExperiment, SixArchitectureOrchestration) {
  std::vector<MetricsLog> logs;
  for (const std::string& name : architecture_names()) {
    TrainConfig config;
    config.arch = name;
    config.arch_opts = {{"width", "8"}, {"scale", "0.125"}, {"k", "4"},
                        {"layers", "2"},  {"blocks", "1"},  {"depth", "2"}};
    // builders ignore options they do not take
    std::map<std::string, std::string> opts;
    if (name == "allconv") opts = {{"width", "8"}};
    if (name == "vgg16") opts = {{"scale", "0.125"}};
    if (name == "nin") opts = {{"scale", "0.125"}};
    if (name == "resnet") opts = {{"width", "8"}, {"blocks", "1"}};
    if (name == "fractalnet") opts = {{"depth", "2"}, {"scale", "0.125"}};
    if (name == "densenet") opts = {{"k", "4"}, {"layers", "2"}, {"blocks", "2"}};
    config.arch_opts = opts;
    config.data = "synth:k=5,n=50,seed=8";
    config.epochs = 1;
    config.batch_size = 10;
    config.seed = 21;
    logs.push_back(run_experiment(config).log);
  }
  ASSERT_EQ(logs.size(), 6u);
  for (const MetricsLog& log : logs) {
    EXPECT_EQ(log.rows.size(), 1u);
    EXPECT_TRUE(std::isfinite(log.rows[0].train_loss));
  }
}

TEST(Checkpoint, RoundTripAndTamperDetection) {
  const fs::path dir = fs::temp_directory_path() / "glyphnet_ckpt";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string path = (dir / "model.gnck").string();

  Model model(build_densenet(3, 4, 2, 1), 31);
  save_checkpoint(model, path);
  Model back = load_checkpoint(path);
  EXPECT_EQ(serialize_spec(back.spec()), serialize_spec(model.spec()));
  EXPECT_EQ(back.seed(), model.seed());
  std::vector<const Tensor*> pa, pb;
  model.for_each_param([&](const std::string&, const char*, const Tensor& t) { pa.push_back(&t); });
  back.for_each_param([&](const std::string&, const char*, const Tensor& t) { pb.push_back(&t); });
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i], *pb[i]);

  // flip one payload byte: the content hash must catch it
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(64);
  char byte;
  f.seekg(64);
  f.get(byte);
  f.seekp(64);
  f.put(static_cast<char>(byte ^ 0x40));
  f.close();
  EXPECT_THROW(load_checkpoint(path), CheckpointMismatch);
  fs::remove_all(dir);
}

TEST(Forward, NonFiniteActivationNamesNode) {
  Model model(build_allconv(3, 4), 37);
  model.for_each_param([](const std::string& id, const char*, Tensor& t) {
    if (id == "c3") {
      for (std::size_t i = 0; i < t.size(); ++i) t[i] = 1e308;
    }
  });
  const Dataset ds = synth_glyphs(28, 3, 1, 0.0, 0.0);
  try {
    forward(model, ds.images, RunMode::eval);
    FAIL() << "expected NonFiniteValue";
  } catch (const NonFiniteValue& e) {
    EXPECT_NE(std::string(e.what()).find("c3"), std::string::npos);
  }
}
