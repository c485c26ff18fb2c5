#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "decaps/image.hpp"
#include "decaps/rng.hpp"

namespace decaps {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Sample {
  Image image;
  std::size_t label = 0;
  /// "<class directory>/<file stem>", stable across runs and used in list files.
  std::string id;
};

/// Either a seeded stratified fraction split or explicit id lists.
struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> train_list;
  std::optional<std::filesystem::path> test_list;
};

struct Dataset {
  std::vector<std::string> class_names;  // sorted directory names; index = label
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Reads root/<class>/<id>.pgm, scales to [0, 1], resizes every image to
/// input_size x input_size and splits per `spec`.
Dataset load_dataset(const std::filesystem::path& root, const SplitSpec& spec, std::size_t input_size);

/// Ids listed one per line; blank lines are ignored.
std::vector<std::string> read_id_list(const std::filesystem::path& path);
void write_id_list(const std::filesystem::path& path, std::span<const std::string> ids);

/// Throws DataError naming the first id present in both lists.
void check_disjoint(std::span<const std::string> train_ids, std::span<const std::string> test_ids);

/// Stratified seeded partition: for every label, round(fraction * count)
/// samples (after a seeded shuffle) go to the first part.
std::pair<std::vector<Sample>, std::vector<Sample>> stratified_split(std::vector<Sample> samples, double fraction,
                                                                      std::uint64_t seed);

/// Random flip, rotation and crop applied by `augment`.
struct AugmentParams {
  bool flip = false;
  double degrees = 0.0;
  double area = 1.0;  // fraction of the image area kept by the crop
  std::size_t crop_y = 0;
  std::size_t crop_x = 0;
};

Image flip_horizontal(const Image& image);
/// Bilinear rotation about the image centre with edge replication.
Image rotate(const Image& image, double degrees);
/// flip, rotate, crop and resize back; result clamped to [0, 1].
Image apply_augment(const Image& image, const AugmentParams& params);

/// Draws flip (p = 0.5), rotation in [-10, 10] degrees and a 90-100% area crop
/// from a stream determined by (seed, id, epoch).
AugmentParams draw_augment(std::size_t size, std::uint64_t seed, std::string_view id, std::size_t epoch);
Image augment(const Image& image, std::uint64_t seed, std::string_view id, std::size_t epoch);

struct SynthSpec {
  std::size_t train_per_class = 400;
  std::size_t test_per_class = 100;
  std::size_t size = 96;
  std::uint64_t seed = 0;
};

inline constexpr const char* kSynthClasses[2] = {"blob", "stripes"};

/// A synthetic image and, for class 0, the integer pixel centre of its blob.
struct SynthImage {
  Image image;
  std::size_t blob_row = 0;
  std::size_t blob_col = 0;
};

/// Class 0: uniform noise of amplitude 0.2 with a Gaussian blob (sigma =
/// size / 12, peak 1, combined by maximum) centred in the peripheral band.
/// Class 1: the same noise plus horizontal sinusoidal stripes of period
/// size / 8 and amplitude 0.5.
SynthImage synth_image(std::size_t label, std::size_t size, Rng& rng);

/// True when a (possibly fractional) pixel-centre coordinate lies less than
/// size / 4 from the nearest image edge.
bool in_peripheral_band(double row, double col, std::size_t size);

/// Writes root/<class>/<id>.pgm for both classes plus train.txt, test.txt and
/// blobs.csv (id,row,col of every blob centre).
void synth_generate(const std::filesystem::path& root, const SynthSpec& spec);

}  // namespace decaps
