#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "decaps_cli/commands.hpp"

namespace {

using namespace decaps;
using namespace decaps::cli;

RunConfig config_from(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detail-oriented capsule network: synthetic data, training, evaluation and HAM visualization"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run config file (key = value lines)");
    sub->add_option("--set", overrides, "Override a config key (key=value), repeatable");
  };

  SynthSpec synth;
  std::string synth_root = "synth";
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic two-class dataset");
  synth_cmd->add_option("--output", synth_root, "Dataset root directory");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--size", synth.size, "Image side in pixels")->check(CLI::Range(32, 4096));
  synth_cmd->add_option("--train-per-class", synth.train_per_class, "Training images per class");
  synth_cmd->add_option("--test-per-class", synth.test_per_class, "Test images per class");

  std::size_t epochs = 0;
  std::string output, routing;
  std::optional<std::uint64_t> seed;
  bool no_peekaboo = false, no_augment = false;
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  add_common(train_cmd);
  train_cmd->add_option("--epochs", epochs, "Number of epochs (overrides the config)");
  train_cmd->add_option("--output", output, "Output directory (overrides the config)");
  train_cmd->add_option("--routing", routing, "Routing algorithm")->check(CLI::IsMember({"idr", "baseline"}));
  train_cmd->add_option("--seed", seed, "Model and training seed");
  train_cmd->add_flag("--no-peekaboo", no_peekaboo, "Train on the whole-image loss only");
  train_cmd->add_flag("--no-augment", no_augment, "Disable flip/rotation/crop augmentation");

  std::string checkpoint, mode = "distilled";
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval_cmd->add_option("--mode", mode, "Prediction source")->check(CLI::IsMember({"coarse", "fine", "distilled"}));
  eval_cmd->add_option("--output", output, "Directory for metrics and ROC files");

  std::vector<std::string> images;
  auto* ham_cmd = app.add_subcommand("ham", "Write head activation map visualizations");
  add_common(ham_cmd);
  ham_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  ham_cmd->add_option("--image", images, "Input P5 image, repeatable")->required();
  ham_cmd->add_option("--output", output, "Directory for the images");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      cmd_synth(synth_root, synth);
      std::cout << "wrote " << 2 * (synth.train_per_class + synth.test_per_class) << " images to " << synth_root
                << '\n';
      return 0;
    }
    RunConfig cfg = config_from(config_path, overrides);
    if (train_cmd->parsed()) {
      if (epochs) cfg.epochs = epochs;
      if (!output.empty()) cfg.output_dir = output;
      if (!routing.empty()) cfg.model.routing = parse_routing_method(routing);
      if (seed) cfg.model.seed = *seed;
      if (no_peekaboo) cfg.peekaboo = false;
      if (no_augment) cfg.augment = false;
      const TrainSummary s = cmd_train(cfg);
      for (const auto& e : s.epochs) {
        std::cout << "epoch " << e.epoch << " margin " << e.margin << " loss " << e.mean_loss << " val_acc "
                  << e.val_accuracy << '\n';
      }
      std::cout << "log: " << s.log_path.string() << "\nfinal checkpoint: " << s.final_checkpoint.string() << '\n';
    } else if (eval_cmd->parsed()) {
      const EvalOutcome o = cmd_eval(cfg, checkpoint, parse_prediction_mode(mode),
                                     output.empty() ? cfg.output_dir : std::filesystem::path(output));
      std::cout << format_report(o.report) << "metrics: " << o.metrics_path.string() << "\nroc: " << o.roc_path.string()
                << '\n';
    } else if (ham_cmd->parsed()) {
      std::vector<std::filesystem::path> paths(images.begin(), images.end());
      const auto outcomes = cmd_ham(cfg, checkpoint, paths, output.empty() ? cfg.output_dir / "ham" : std::filesystem::path(output));
      for (const auto& o : outcomes) std::cout << o.overlay.string() << '\n';
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
