// glyphnet command line: static architecture analysis, training runs and
// checkpoint evaluation.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "glyphnet/analyze.hpp"
#include "glyphnet/builders.hpp"
#include "glyphnet/data.hpp"
#include "glyphnet/errors.hpp"
#include "glyphnet/train.hpp"
#include "glyphnet/version.hpp"

namespace {

using nlohmann::json;

std::string read_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw glyphnet::ValidationError("cannot open '" + path + "'");
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw glyphnet::ValidationError("cannot write '" + path + "'");
  f << text;
}

// "name" or "name:key=value,key=value"
std::pair<std::string, std::map<std::string, std::string>> parse_arch_string(
    const std::string& arch) {
  const std::size_t colon = arch.find(':');
  std::pair<std::string, std::map<std::string, std::string>> out;
  out.first = arch.substr(0, colon);
  if (colon == std::string::npos) return out;
  for (const std::string& kv : glyphnet::split(arch.substr(colon + 1), ',')) {
    if (kv.empty()) continue;
    const std::size_t eq = kv.find('=');
    if (eq == std::string::npos) {
      throw glyphnet::ValidationError("bad architecture option '" + kv + "'");
    }
    out.second[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  return out;
}

void apply_config_file(glyphnet::TrainConfig& config, const std::string& path) {
  std::istringstream is(read_file(path));
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string_view t = glyphnet::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string_view::npos) {
      throw glyphnet::ParseError("expected key = value at " + path + ":" +
                                 std::to_string(lineno));
    }
    const std::string key{glyphnet::trim(t.substr(0, eq))};
    const std::string value{glyphnet::trim(t.substr(eq + 1))};
    const std::string where = path + ":" + std::to_string(lineno);
    if (key == "arch") {
      auto [name, opts] = parse_arch_string(value);
      config.arch = name;
      config.arch_opts = opts;
    } else if (key == "spec") {
      config.spec_path = value;
    } else if (key == "data") {
      config.data = value;
    } else if (key == "epochs") {
      config.epochs = static_cast<std::size_t>(glyphnet::parse_int(value, where));
    } else if (key == "lr") {
      config.learning_rate = glyphnet::parse_double(value, where);
    } else if (key == "momentum") {
      config.momentum = glyphnet::parse_double(value, where);
    } else if (key == "batch") {
      config.batch_size = static_cast<std::size_t>(glyphnet::parse_int(value, where));
    } else if (key == "seed") {
      config.seed = static_cast<std::uint64_t>(glyphnet::parse_int(value, where));
    } else if (key == "train_count") {
      config.train_count = static_cast<std::size_t>(glyphnet::parse_int(value, where));
    } else if (key == "test_count") {
      config.test_count = static_cast<std::size_t>(glyphnet::parse_int(value, where));
    } else if (key == "validation_fraction") {
      config.validation_fraction = glyphnet::parse_double(value, where);
    } else if (key == "lr_decay_factor") {
      config.lr_decay_factor = glyphnet::parse_double(value, where);
    } else if (key == "lr_milestones") {
      config.lr_milestones.clear();
      for (const std::string& m : glyphnet::split(value, ',')) {
        if (!m.empty()) {
          config.lr_milestones.push_back(
              static_cast<std::size_t>(glyphnet::parse_int(m, where)));
        }
      }
    } else {
      throw glyphnet::ParseError("unknown config key '" + key + "' at " + where);
    }
  }
}

json config_to_json(const glyphnet::TrainConfig& config) {
  json arch_opts = json::object();
  for (const auto& [k, v] : config.arch_opts) arch_opts[k] = v;
  json milestones = json::array();
  for (std::size_t m : config.lr_milestones) milestones.push_back(m);
  return json{{"arch", config.arch},
              {"arch_opts", arch_opts},
              {"spec", config.spec_path},
              {"data", config.data},
              {"epochs", config.epochs},
              {"lr", config.learning_rate},
              {"momentum", config.momentum},
              {"batch", config.batch_size},
              {"lr_decay_factor", config.lr_decay_factor},
              {"lr_milestones", milestones},
              {"seed", config.seed},
              {"train_count", config.train_count},
              {"test_count", config.test_count},
              {"validation_fraction", config.validation_fraction}};
}

int run_analyze(const std::string& spec_path, const std::string& golden_path,
                const std::string& csv_path) {
  const glyphnet::ArchitectureSpec spec = glyphnet::parse_spec(read_file(spec_path));
  const glyphnet::SummaryReport report = glyphnet::summarize(spec);
  std::cout << glyphnet::render_text(report);
  if (!csv_path.empty()) write_file(csv_path, glyphnet::render_csv(report));
  if (!golden_path.empty()) {
    const auto golden = glyphnet::parse_golden(read_file(golden_path));
    const glyphnet::GoldenCompare cmp = glyphnet::compare_golden(report, golden);
    for (const std::string& w : cmp.waived) std::cout << "waived: " << w << "\n";
    for (const std::string& m : cmp.mismatches) std::cout << "mismatch: " << m << "\n";
    std::cout << "golden total parameters: " << cmp.golden_param_total << " (~"
              << glyphnet::format_millions(cmp.golden_param_total) << ")\n";
    if (!cmp.ok()) {
      std::cout << "golden comparison FAILED\n";
      return 1;
    }
    std::cout << "golden comparison OK (" << cmp.waived.size() << " waived)\n";
  }
  return 0;
}

int run_train(glyphnet::TrainConfig config, std::string out_dir) {
  namespace fs = std::filesystem;
  glyphnet::ExperimentResult result = glyphnet::run_experiment(config);

  if (out_dir.empty()) {
    const std::string stem = config.spec_path.empty()
                                 ? config.arch
                                 : fs::path(config.spec_path).stem().string();
    out_dir = "runs/" + stem + "-e" + std::to_string(config.epochs) + "-s" +
              std::to_string(config.seed);
  }
  fs::create_directories(out_dir);

  write_file(out_dir + "/metrics.csv", glyphnet::render_metrics(result.log));
  glyphnet::save_checkpoint(result.model, out_dir + "/model.gnck");

  const std::string spec_text = glyphnet::serialize_spec(result.model.spec());
  json manifest{{"command", "train"},
                {"config", config_to_json(config)},
                {"dataset",
                 {{"count", result.data_fingerprint.count},
                  {"content_hash", result.data_fingerprint.content_hash}}},
                {"spec_hash", glyphnet::hex64(glyphnet::fnv1a64(spec_text.data(),
                                                                spec_text.size()))},
                {"seed", config.seed},
                {"tool_version", glyphnet::kVersion}};
  write_file(out_dir + "/manifest.json", manifest.dump(2) + "\n");

  std::cout << "run_dir " << out_dir << "\n";
  std::cout << "total_params " << result.log.total_params << "\n";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", result.log.test_acc);
  std::cout << "test_acc " << buf << "\n";
  return 0;
}

int run_eval(const std::string& checkpoint_path, const std::string& data_spec) {
  glyphnet::Model model = glyphnet::load_checkpoint(checkpoint_path);
  const glyphnet::Dataset ds =
      glyphnet::resolve_data_spec(data_spec, model.spec().class_count);
  const double acc = glyphnet::evaluate(model, ds);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", acc);
  std::cout << buf << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"glyphnet: small-image convolutional networks, analyzed and trained"};
  app.require_subcommand(1);
  app.set_version_flag("--version", glyphnet::kVersion);

  auto* analyze = app.add_subcommand("analyze", "static shape and parameter report for a spec");
  std::string spec_path, golden_path, csv_path;
  analyze->add_option("spec", spec_path, "architecture spec file")->required();
  analyze->add_option("--golden", golden_path, "compare against a golden CSV table");
  analyze->add_option("--csv", csv_path, "also write the report as CSV");

  auto* train = app.add_subcommand("train", "train a network and write metrics + checkpoint");
  std::string config_path, arch_string, train_spec, data_spec, out_dir;
  glyphnet::TrainConfig config;
  long long epochs = -1, batch = -1, seed = -1, train_count = -1, test_count = -1;
  double lr = -1.0, momentum = -1.0, val_fraction = -1.0;
  train->add_option("--config", config_path, "key = value config file");
  train->add_option("--arch", arch_string, "architecture name[:key=value,...]");
  train->add_option("--spec", train_spec, "architecture spec file (overrides --arch)");
  train->add_option("--data", data_spec, "dataset: dir path, .chds cache, or synth:k=K,n=N,seed=S");
  train->add_option("--epochs", epochs, "training epochs");
  train->add_option("--lr", lr, "initial learning rate");
  train->add_option("--momentum", momentum, "SGD momentum");
  train->add_option("--batch", batch, "batch size");
  train->add_option("--seed", seed, "experiment seed");
  train->add_option("--out", out_dir, "output directory (default runs/<run-id>)");
  train->add_option("--train-count", train_count, "total training samples across classes");
  train->add_option("--test-count", test_count, "total test samples across classes");
  train->add_option("--val-fraction", val_fraction, "validation share carved from training");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string checkpoint_path, eval_data;
  eval->add_option("checkpoint", checkpoint_path, "model checkpoint file")->required();
  eval->add_option("--data", eval_data, "dataset to score")->required();

  auto* spec_cmd = app.add_subcommand("spec", "emit the canonical spec for a built-in network");
  std::string spec_arch, spec_out;
  long long spec_classes = 10;
  spec_cmd->add_option("arch", spec_arch, "architecture name[:key=value,...]")->required();
  spec_cmd->add_option("--classes", spec_classes, "classifier width");
  spec_cmd->add_option("-o,--out", spec_out, "write to file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (analyze->parsed()) {
      return run_analyze(spec_path, golden_path, csv_path);
    }
    if (train->parsed()) {
      if (!config_path.empty()) apply_config_file(config, config_path);
      if (!arch_string.empty()) {
        auto [name, opts] = parse_arch_string(arch_string);
        config.arch = name;
        config.arch_opts = opts;
      }
      if (!train_spec.empty()) config.spec_path = train_spec;
      if (!data_spec.empty()) config.data = data_spec;
      if (epochs >= 0) config.epochs = static_cast<std::size_t>(epochs);
      if (lr >= 0.0) config.learning_rate = lr;
      if (momentum >= 0.0) config.momentum = momentum;
      if (batch >= 0) config.batch_size = static_cast<std::size_t>(batch);
      if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);
      if (train_count >= 0) config.train_count = static_cast<std::size_t>(train_count);
      if (test_count >= 0) config.test_count = static_cast<std::size_t>(test_count);
      if (val_fraction >= 0.0) config.validation_fraction = val_fraction;
      return run_train(config, out_dir);
    }
    if (eval->parsed()) {
      return run_eval(checkpoint_path, eval_data);
    }
    if (spec_cmd->parsed()) {
      auto [name, opts] = parse_arch_string(spec_arch);
      const std::string text = glyphnet::serialize_spec(
          glyphnet::build_architecture(name, static_cast<std::size_t>(spec_classes), opts));
      if (spec_out.empty()) {
        std::cout << text;
      } else {
        write_file(spec_out, text);
      }
      return 0;
    }
  } catch (const glyphnet::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const glyphnet::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
