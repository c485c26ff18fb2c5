#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "decaps/image.hpp"
#include "decaps/model.hpp"
#include "decaps/rng.hpp"

namespace decaps {

/// Min-max normalization to [0, 1]. A constant map becomes all zeros.
Image normalize_ham(const Image& ham);

struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> cells;

  std::uint8_t operator()(std::size_t r, std::size_t c) const { return cells[r * cols + c]; }
  std::size_t count() const;
};

/// 1 where normalized >= theta_c.
Mask crop_mask(const Image& normalized, double theta_c);

/// Inclusive grid indices.
struct GridBox {
  std::size_t row_min = 0, col_min = 0, row_max = 0, col_max = 0;
  bool operator==(const GridBox&) const = default;
};

/// Half-open pixel rectangle [y0, y1) x [x0, x1).
struct PixelBox {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;
  bool operator==(const PixelBox&) const = default;
  double center_y() const { return 0.5 * static_cast<double>(y0 + y1); }
  double center_x() const { return 0.5 * static_cast<double>(x0 + x1); }
};

struct RoiBox {
  GridBox grid;
  PixelBox pixels;
};

/// Tightest box around the ones of `mask`; nullopt for an all-zero mask.
std::optional<GridBox> min_bbox(const Mask& mask);

/// Scales grid cells to pixels, flooring the leading edges and ceiling the
/// trailing ones, then clamps to the image.
PixelBox to_pixels(const GridBox& box, std::size_t map_rows, std::size_t map_cols, std::size_t image_rows,
                   std::size_t image_cols);

/// normalize -> threshold -> box. nullopt when the mask is empty.
std::optional<RoiBox> locate_roi(const Image& ham, double theta_c, std::size_t image_rows, std::size_t image_cols);

/// Cuts `box` out of `image` and resizes it to size x size.
Image patch_crop(const Image& image, const PixelBox& box, std::size_t size);

/// Upsamples the normalized map to the image and zeroes every pixel whose
/// upsampled value is >= theta_d.
Image patch_drop(const Image& image, const Image& normalized, double theta_d);

struct PeekabooOptions {
  double margin = 0.2;
  bool peekaboo = true;
};

struct TrainStepResult {
  double loss = 0.0;
  double loss_coarse = 0.0;
  double loss_crop = 0.0;
  double loss_drop = 0.0;
  std::size_t forward_passes = 0;
  std::size_t backward_passes = 0;
  /// Head whose map guided each sample's crop and drop.
  std::vector<std::size_t> heads;
  std::size_t empty_rois = 0;
};

/// Builds the loss of one batch (coarse pass, plus crop and drop passes
/// guided by a random head's map for the labelled class when `peekaboo` is
/// set) and runs a single backward pass on it. Gradients accumulate into the
/// model parameters; the optimizer step is left to the caller.
TrainStepResult peekaboo_train_step(DecapsModel& model, std::span<const Image> images,
                                    std::span<const std::size_t> labels, const PeekabooOptions& options, Rng& rng);

enum class PredictionMode { coarse, fine, distilled };

std::string to_string(PredictionMode mode);
PredictionMode parse_prediction_mode(const std::string& text);

/// Per-class flattened pose vectors of the whole-image and cropped passes.
struct PredictionSet {
  std::vector<std::vector<double>> coarse;
  std::vector<std::vector<double>> fine;
  std::vector<std::vector<double>> distilled;

  /// distilled = (coarse + fine) / 2 elementwise.
  static PredictionSet combine(std::vector<std::vector<double>> coarse, std::vector<std::vector<double>> fine);

  /// Euclidean norm of each class vector of the selected source.
  std::vector<double> scores(PredictionMode mode = PredictionMode::distilled) const;
  /// Argmax of scores; ties go to the lowest class index.
  std::size_t predicted(PredictionMode mode = PredictionMode::distilled) const;
};

struct DistillResult {
  PredictionSet predictions;
  std::size_t coarse_class = 0;
  std::optional<RoiBox> roi;
  Image coarse_map;  // head-averaged map of the coarse class, raw
  Image crop;        // network input of the fine pass
  Image fine_map;    // head-averaged map of the fine pass for the same class
};

/// Test-time coarse pass, crop of the ROI from the head-averaged map of the
/// coarse winner, fine pass on the crop, and averaging of the two. Images must
/// already be input_size x input_size. An empty ROI makes fine = coarse.
std::vector<DistillResult> distill_infer(DecapsModel& model, std::span<const Image> images);

}  // namespace decaps
