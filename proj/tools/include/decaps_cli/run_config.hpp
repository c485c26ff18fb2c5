#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "decaps/dataio.hpp"
#include "decaps/model.hpp"
#include "decaps/peekaboo.hpp"

namespace decaps::cli {

/// Everything a command needs: the model config plus data, schedule and
/// output settings. Stored on disk as flat `key = value` lines.
struct RunConfig {
  ModelConfig model;

  std::filesystem::path data_root;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  std::optional<std::filesystem::path> train_list;
  std::optional<std::filesystem::path> test_list;
  double val_fraction = 0.1;

  std::size_t epochs = 30;
  std::filesystem::path output_dir = "run";
  bool peekaboo = true;
  bool augment = true;
  std::size_t best_k = 5;

  std::size_t positive_class = 1;
  PredictionMode eval_mode = PredictionMode::distilled;

  /// Throws std::invalid_argument for unknown keys or unparsable values.
  void set(const std::string& key, const std::string& value);

  /// Split spec for load_dataset. Without explicit lists, train.txt and
  /// test.txt under data_root are used when both exist.
  SplitSpec split() const;

  std::string to_text() const;
};

/// Parses `key = value` lines ('#' starts a comment). A `desk_scale = true`
/// line anywhere in the file applies the desk preset before the other keys.
RunConfig parse_run_config(const std::string& text, const std::string& origin = "<config>");
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace decaps::cli
