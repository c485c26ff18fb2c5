#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "decaps/dataio.hpp"
#include "decaps/metrics.hpp"
#include "decaps/peekaboo.hpp"
#include "decaps_cli/run_config.hpp"

namespace decaps::cli {

struct EpochRecord {
  std::size_t epoch = 0;
  double margin = 0.0;
  double mean_loss = 0.0;
  double val_accuracy = 0.0;
  std::filesystem::path checkpoint;
};

struct TrainSummary {
  std::vector<EpochRecord> epochs;
  std::size_t batches = 0;
  std::size_t forward_passes = 0;
  std::size_t backward_passes = 0;
  std::filesystem::path log_path;
  std::filesystem::path final_checkpoint;
  /// Up to best_k epochs ordered by validation accuracy (later epoch first on ties).
  std::vector<EpochRecord> best;
};

/// Trains per `config`, writing output_dir/train_log.csv (one row per epoch),
/// output_dir/checkpoints/epoch_NNN.dcaps and output_dir/best_checkpoints.csv.
TrainSummary cmd_train(const RunConfig& config);

struct EvalOutcome {
  EvalReport report;
  std::vector<std::string> ids;
  std::vector<std::size_t> labels;
  std::vector<std::size_t> predicted;
  std::vector<double> scores;  // positive-class score of the selected mode
  std::vector<PredictionSet> predictions;
  std::filesystem::path metrics_path;
  std::filesystem::path roc_path;
};

/// Distillation inference over the test split with the checkpoint; writes
/// metrics_<mode>.txt and roc_<mode>.csv into `output_dir`.
EvalOutcome cmd_eval(const RunConfig& config, const std::filesystem::path& checkpoint, PredictionMode mode,
                     const std::filesystem::path& output_dir);

/// Scores every sample of an already loaded set with every mode.
std::vector<PredictionSet> predict(DecapsModel& model, const std::vector<Sample>& samples, std::size_t batch_size);

struct HamOutcome {
  std::filesystem::path image;
  std::optional<RoiBox> roi;
  std::size_t coarse_class = 0;
  std::filesystem::path overlay, coarse_heatmap, crop, fine_heatmap;
};

/// For every image writes <stem>_overlay.ppm (red 2-pixel box at the ROI),
/// <stem>_coarse_ham.pgm, <stem>_crop.pgm and <stem>_fine_ham.pgm.
std::vector<HamOutcome> cmd_ham(const RunConfig& config, const std::filesystem::path& checkpoint,
                                const std::vector<std::filesystem::path>& images,
                                const std::filesystem::path& output_dir);

/// Heatmap written by cmd_ham: min-max normalized map upsampled to `size`.
Image heatmap(const Image& map, std::size_t size);
/// Grayscale image with a 2-pixel red rectangle along the inside of `box`.
RgbImage draw_box(const Image& image, const PixelBox& box);

void cmd_synth(const std::filesystem::path& root, const SynthSpec& spec);

}  // namespace decaps::cli
