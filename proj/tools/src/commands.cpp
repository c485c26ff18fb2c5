#include "decaps_cli/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "decaps/checkpoint.hpp"

namespace decaps::cli {

namespace fs = std::filesystem;

namespace {

std::string format(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error(dir.string() + ": cannot create directory: " + ec.message());
}

std::vector<Image> images_of(const std::vector<Sample>& samples, std::size_t begin, std::size_t end) {
  std::vector<Image> out;
  out.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) out.push_back(samples[i].image);
  return out;
}

double coarse_accuracy(DecapsModel& model, const std::vector<Sample>& samples, std::size_t batch_size) {
  if (samples.empty()) return 0.0;
  NoGradGuard guard;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    const std::size_t e = std::min(samples.size(), b + batch_size);
    const auto images = images_of(samples, b, e);
    const Tensor act = model.forward(to_tensor(images), Mode::eval).activations;
    const std::size_t C = act.size(1);
    const auto v = act.values();
    for (std::size_t n = 0; n < e - b; ++n) {
      const auto first = v.begin() + static_cast<long>(n * C);
      const auto pred = static_cast<std::size_t>(std::max_element(first, first + static_cast<long>(C)) - first);
      correct += pred == samples[b + n].label ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

}  // namespace

TrainSummary cmd_train(const RunConfig& config) {
  const ModelConfig& mc = config.model;
  if (config.data_root.empty()) throw std::invalid_argument("train needs data_root");
  if (mc.batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(config.val_fraction >= 0.0 && config.val_fraction < 1.0)) {
    throw std::invalid_argument("val_fraction must lie in [0, 1)");
  }

  Dataset data = load_dataset(config.data_root, config.split(), mc.input_size);
  for (const auto& s : data.train) {
    if (s.label >= mc.classes) throw std::invalid_argument("dataset has more classes than the model");
  }
  auto [train, val] = stratified_split(std::move(data.train), 1.0 - config.val_fraction, Rng::derive(mc.seed, 11));
  if (train.empty()) throw std::invalid_argument("training split is empty");

  const fs::path ckpt_dir = config.output_dir / "checkpoints";
  ensure_dir(ckpt_dir);
  {
    std::ofstream snap(config.output_dir / "config.txt", std::ios::trunc);
    snap << config.to_text();
  }

  DecapsModel model(mc);
  std::vector<Tensor> params;
  for (auto& [name, t] : model.parameters()) params.push_back(t);
  Adam optimizer(params, mc.learning_rate, mc.beta1, mc.beta2, mc.adam_eps);
  Rng order_rng(Rng::derive(mc.seed, 1));
  Rng head_rng(Rng::derive(mc.seed, 2));

  TrainSummary summary;
  summary.log_path = config.output_dir / "train_log.csv";
  std::ofstream log(summary.log_path, std::ios::binary | std::ios::trunc);
  if (!log) throw std::runtime_error(summary.log_path.string() + ": cannot open for writing");
  log << "epoch,margin,mean_loss,val_accuracy\n" << std::flush;

  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double margin = mc.margin.at(epoch);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(order_rng.below(i))]);
    }
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += mc.batch_size) {
      const std::size_t e = std::min(order.size(), b + mc.batch_size);
      std::vector<Image> images;
      std::vector<std::size_t> labels;
      for (std::size_t k = b; k < e; ++k) {
        const Sample& s = train[order[k]];
        images.push_back(config.augment ? augment(s.image, mc.seed, s.id, epoch) : s.image);
        labels.push_back(s.label);
      }
      optimizer.zero_grad();
      TrainStepResult step;
      try {
        step = peekaboo_train_step(model, images, labels, {margin, config.peekaboo}, head_rng);
      } catch (const NumericError& err) {
        throw std::runtime_error("non-finite values at epoch " + std::to_string(epoch) + " batch " +
                                 std::to_string(batches) + ": " + err.what());
      }
      optimizer.step();
      loss_sum += step.loss;
      summary.forward_passes += step.forward_passes;
      summary.backward_passes += step.backward_passes;
      ++batches;
    }
    summary.batches += batches;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.margin = margin;
    rec.mean_loss = loss_sum / static_cast<double>(batches);
    rec.val_accuracy = coarse_accuracy(model, val, mc.batch_size);
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03zu.dcaps", epoch);
    rec.checkpoint = ckpt_dir / name;
    save_checkpoint(rec.checkpoint, model, {epoch, head_rng.state()});
    log << epoch << ',' << format(margin) << ',' << format(rec.mean_loss) << ',' << format(rec.val_accuracy) << '\n'
        << std::flush;
    summary.epochs.push_back(rec);
    summary.final_checkpoint = rec.checkpoint;
  }

  summary.best = summary.epochs;
  std::stable_sort(summary.best.begin(), summary.best.end(), [](const EpochRecord& a, const EpochRecord& b) {
    return a.val_accuracy != b.val_accuracy ? a.val_accuracy > b.val_accuracy : a.epoch > b.epoch;
  });
  if (summary.best.size() > config.best_k) summary.best.resize(config.best_k);
  std::ofstream best(config.output_dir / "best_checkpoints.csv", std::ios::binary | std::ios::trunc);
  best << "rank,epoch,val_accuracy,checkpoint\n";
  for (std::size_t r = 0; r < summary.best.size(); ++r) {
    best << r + 1 << ',' << summary.best[r].epoch << ',' << format(summary.best[r].val_accuracy) << ','
         << summary.best[r].checkpoint.string() << '\n';
  }
  return summary;
}

std::vector<PredictionSet> predict(DecapsModel& model, const std::vector<Sample>& samples, std::size_t batch_size) {
  std::vector<PredictionSet> out;
  out.reserve(samples.size());
  for (std::size_t b = 0; b < samples.size(); b += batch_size) {
    const std::size_t e = std::min(samples.size(), b + batch_size);
    for (auto& r : distill_infer(model, images_of(samples, b, e))) out.push_back(std::move(r.predictions));
  }
  return out;
}

EvalOutcome cmd_eval(const RunConfig& config, const fs::path& checkpoint, PredictionMode mode,
                     const fs::path& output_dir) {
  if (config.data_root.empty()) throw std::invalid_argument("eval needs data_root");
  LoadedCheckpoint loaded = load_checkpoint(checkpoint, config.model);
  DecapsModel& model = loaded.model;
  const Dataset data = load_dataset(config.data_root, config.split(), model.config().input_size);
  if (data.test.empty()) throw std::invalid_argument("test split is empty");
  if (config.positive_class >= model.config().classes) throw std::invalid_argument("positive_class out of range");

  EvalOutcome out;
  out.predictions = predict(model, data.test, std::max<std::size_t>(1, model.config().batch_size));
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    out.ids.push_back(data.test[i].id);
    out.labels.push_back(data.test[i].label);
    out.predicted.push_back(out.predictions[i].predicted(mode));
    out.scores.push_back(out.predictions[i].scores(mode)[config.positive_class]);
  }
  const Confusion counts = confusion_from_predictions(out.predicted, out.labels, config.positive_class);
  out.report = make_report(counts, out.scores, out.labels, config.positive_class);

  ensure_dir(output_dir);
  out.metrics_path = output_dir / ("metrics_" + to_string(mode) + ".txt");
  out.roc_path = output_dir / ("roc_" + to_string(mode) + ".csv");
  write_report(out.metrics_path, out.report);
  write_roc_csv(out.roc_path, out.report.roc);
  return out;
}

Image heatmap(const Image& map, std::size_t size) { return resize(normalize_ham(map), size, size); }

RgbImage draw_box(const Image& image, const PixelBox& box) {
  RgbImage out = to_rgb(image);
  auto paint = [&](std::size_t r, std::size_t c) {
    if (r < out.rows && c < out.cols) out.pixels[r * out.cols + c] = {255, 0, 0};
  };
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t c = box.x0; c < box.x1; ++c) {
      if (box.y0 + t < box.y1) paint(box.y0 + t, c);
      if (box.y1 >= box.y0 + t + 1) paint(box.y1 - 1 - t, c);
    }
    for (std::size_t r = box.y0; r < box.y1; ++r) {
      if (box.x0 + t < box.x1) paint(r, box.x0 + t);
      if (box.x1 >= box.x0 + t + 1) paint(r, box.x1 - 1 - t);
    }
  }
  return out;
}

std::vector<HamOutcome> cmd_ham(const RunConfig& config, const fs::path& checkpoint,
                                const std::vector<fs::path>& images, const fs::path& output_dir) {
  if (images.empty()) throw std::invalid_argument("ham needs at least one image");
  LoadedCheckpoint loaded = load_checkpoint(checkpoint, config.model);
  DecapsModel& model = loaded.model;
  const std::size_t S = model.config().input_size;
  ensure_dir(output_dir);

  std::vector<HamOutcome> outcomes;
  for (const auto& path : images) {
    const Image input = resize(read_pgm(path), S, S);
    const std::vector<Image> batch{input};
    const DistillResult r = distill_infer(model, batch).front();
    HamOutcome o;
    o.image = path;
    o.roi = r.roi;
    o.coarse_class = r.coarse_class;
    const std::string stem = path.stem().string();
    o.overlay = output_dir / (stem + "_overlay.ppm");
    o.coarse_heatmap = output_dir / (stem + "_coarse_ham.pgm");
    o.crop = output_dir / (stem + "_crop.pgm");
    o.fine_heatmap = output_dir / (stem + "_fine_ham.pgm");
    if (r.roi) {
      write_ppm(o.overlay, draw_box(input, r.roi->pixels));
    } else {
      std::cerr << path.string() << ": empty region of interest, overlay drawn without a box\n";
      write_ppm(o.overlay, to_rgb(input));
    }
    write_pgm(o.coarse_heatmap, heatmap(r.coarse_map, S));
    write_pgm(o.crop, r.crop);
    write_pgm(o.fine_heatmap, heatmap(r.fine_map, S));
    outcomes.push_back(std::move(o));
  }
  return outcomes;
}

void cmd_synth(const fs::path& root, const SynthSpec& spec) { synth_generate(root, spec); }

}  // namespace decaps::cli
