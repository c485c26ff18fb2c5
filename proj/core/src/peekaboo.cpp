#include "decaps/peekaboo.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "decaps/ops.hpp"
#include "decaps/spread_loss.hpp"

namespace decaps {

Image normalize_ham(const Image& ham) {
  Image out(ham.rows, ham.cols, 0.0);
  if (ham.empty()) return out;
  const auto [lo, hi] = std::minmax_element(ham.pixels.begin(), ham.pixels.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < ham.pixels.size(); ++i) out.pixels[i] = (ham.pixels[i] - *lo) / range;
  return out;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

Mask crop_mask(const Image& normalized, double theta_c) {
  Mask m{normalized.rows, normalized.cols, std::vector<std::uint8_t>(normalized.pixels.size())};
  for (std::size_t i = 0; i < m.cells.size(); ++i) m.cells[i] = normalized.pixels[i] >= theta_c ? 1 : 0;
  return m;
}

std::optional<GridBox> min_bbox(const Mask& mask) {
  std::optional<GridBox> box;
  for (std::size_t r = 0; r < mask.rows; ++r) {
    for (std::size_t c = 0; c < mask.cols; ++c) {
      if (!mask(r, c)) continue;
      if (!box) {
        box = GridBox{r, c, r, c};
        continue;
      }
      box->row_min = std::min(box->row_min, r);
      box->row_max = std::max(box->row_max, r);
      box->col_min = std::min(box->col_min, c);
      box->col_max = std::max(box->col_max, c);
    }
  }
  return box;
}

PixelBox to_pixels(const GridBox& box, std::size_t map_rows, std::size_t map_cols, std::size_t image_rows,
                   std::size_t image_cols) {
  if (map_rows == 0 || map_cols == 0) throw ShapeError("to_pixels with an empty map");
  auto lead = [](std::size_t cell, std::size_t image, std::size_t map) { return cell * image / map; };
  auto trail = [](std::size_t cell, std::size_t image, std::size_t map) {
    return ((cell + 1) * image + map - 1) / map;
  };
  PixelBox p;
  p.y0 = std::min(lead(box.row_min, image_rows, map_rows), image_rows - 1);
  p.x0 = std::min(lead(box.col_min, image_cols, map_cols), image_cols - 1);
  p.y1 = std::clamp(trail(box.row_max, image_rows, map_rows), p.y0 + 1, image_rows);
  p.x1 = std::clamp(trail(box.col_max, image_cols, map_cols), p.x0 + 1, image_cols);
  return p;
}

std::optional<RoiBox> locate_roi(const Image& ham, double theta_c, std::size_t image_rows, std::size_t image_cols) {
  const auto grid = min_bbox(crop_mask(normalize_ham(ham), theta_c));
  if (!grid) return std::nullopt;
  return RoiBox{*grid, to_pixels(*grid, ham.rows, ham.cols, image_rows, image_cols)};
}

Image patch_crop(const Image& image, const PixelBox& box, std::size_t size) {
  return resize(crop(image, box.y0, box.x0, box.y1, box.x1), size, size);
}

Image patch_drop(const Image& image, const Image& normalized, double theta_d) {
  const Image up = resize(normalized, image.rows, image.cols);
  Image out = image;
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    if (up.pixels[i] >= theta_d) out.pixels[i] = 0.0;
  }
  return out;
}

namespace {

// Map of head `head`, class `cls` for sample `n` out of a [N, D, C, h, w] tensor.
Image head_map(const Tensor& ham, std::size_t n, std::size_t head, std::size_t cls) {
  const std::size_t D = ham.size(1), C = ham.size(2);
  return image_from(ham, (n * D + head) * C + cls);
}

Image averaged_map(const Tensor& ham, std::size_t n, std::size_t cls) {
  const std::size_t D = ham.size(1);
  Image avg = head_map(ham, n, 0, cls);
  for (std::size_t i = 1; i < D; ++i) {
    const Image m = head_map(ham, n, i, cls);
    for (std::size_t k = 0; k < avg.pixels.size(); ++k) avg.pixels[k] += m.pixels[k];
  }
  for (double& v : avg.pixels) v /= static_cast<double>(D);
  return avg;
}

std::vector<std::vector<double>> class_vectors(const Tensor& poses, std::size_t n) {
  const std::size_t C = poses.size(1), d = poses.size(2);
  const auto v = poses.values();
  std::vector<std::vector<double>> out(C);
  for (std::size_t j = 0; j < C; ++j) {
    const auto first = v.begin() + static_cast<long>((n * C + j) * d);
    out[j].assign(first, first + static_cast<long>(d));
  }
  return out;
}

}  // namespace

TrainStepResult peekaboo_train_step(DecapsModel& model, std::span<const Image> images,
                                    std::span<const std::size_t> labels, const PeekabooOptions& options, Rng& rng) {
  if (images.size() != labels.size()) {
    throw std::invalid_argument("train step got " + std::to_string(images.size()) + " images and " +
                                std::to_string(labels.size()) + " labels");
  }
  const ModelConfig& cfg = model.config();
  TrainStepResult result;

  const ModelOutput coarse = model.forward(to_tensor(images), Mode::train);
  ++result.forward_passes;
  const double margin = options.margin;
  Tensor loss_coarse = spread_loss(coarse.activations, labels, margin);
  result.loss_coarse = loss_coarse.item();

  Tensor total = loss_coarse;
  if (options.peekaboo) {
    const std::size_t heads = coarse.ham.size(1);
    const std::size_t S = cfg.input_size;
    std::vector<Image> crops, drops;
    crops.reserve(images.size());
    drops.reserve(images.size());
    for (std::size_t n = 0; n < images.size(); ++n) {
      const std::size_t head = static_cast<std::size_t>(rng.below(heads));
      result.heads.push_back(head);
      const Image normalized = normalize_ham(head_map(coarse.ham, n, head, labels[n]));
      const auto grid = min_bbox(crop_mask(normalized, cfg.theta_crop));
      if (grid) {
        const PixelBox box = to_pixels(*grid, normalized.rows, normalized.cols, images[n].rows, images[n].cols);
        crops.push_back(patch_crop(images[n], box, S));
      } else {
        ++result.empty_rois;
        crops.push_back(resize(images[n], S, S));
      }
      drops.push_back(patch_drop(images[n], normalized, cfg.theta_drop));
    }
    const ModelOutput fine = model.forward(to_tensor(crops), Mode::train);
    const ModelOutput dropped = model.forward(to_tensor(drops), Mode::train);
    result.forward_passes += 2;
    Tensor loss_crop = spread_loss(fine.activations, labels, margin);
    Tensor loss_drop = spread_loss(dropped.activations, labels, margin);
    result.loss_crop = loss_crop.item();
    result.loss_drop = loss_drop.item();
    const double wsum = cfg.weight_coarse + cfg.weight_crop + cfg.weight_drop;
    if (!(wsum > 0.0)) throw std::invalid_argument("peekaboo loss weights must have a positive sum");
    total = scale(add(add(scale(loss_coarse, cfg.weight_coarse), scale(loss_crop, cfg.weight_crop)),
                      scale(loss_drop, cfg.weight_drop)),
                  1.0 / wsum);
  }
  result.loss = total.item();
  if (!std::isfinite(result.loss)) throw NumericError("non-finite training loss");
  backward(total);
  ++result.backward_passes;
  return result;
}

std::string to_string(PredictionMode mode) {
  switch (mode) {
    case PredictionMode::coarse: return "coarse";
    case PredictionMode::fine: return "fine";
    case PredictionMode::distilled: return "distilled";
  }
  return "distilled";
}

PredictionMode parse_prediction_mode(const std::string& text) {
  if (text == "coarse") return PredictionMode::coarse;
  if (text == "fine") return PredictionMode::fine;
  if (text == "distilled") return PredictionMode::distilled;
  throw std::invalid_argument("unknown prediction mode '" + text + "' (expected coarse, fine or distilled)");
}

PredictionSet PredictionSet::combine(std::vector<std::vector<double>> coarse, std::vector<std::vector<double>> fine) {
  if (coarse.size() != fine.size()) throw ShapeError("coarse and fine predictions differ in class count");
  PredictionSet p;
  p.distilled.resize(coarse.size());
  for (std::size_t j = 0; j < coarse.size(); ++j) {
    if (coarse[j].size() != fine[j].size()) throw ShapeError("coarse and fine pose lengths differ");
    p.distilled[j].resize(coarse[j].size());
    for (std::size_t k = 0; k < coarse[j].size(); ++k) p.distilled[j][k] = 0.5 * (coarse[j][k] + fine[j][k]);
  }
  p.coarse = std::move(coarse);
  p.fine = std::move(fine);
  return p;
}

std::vector<double> PredictionSet::scores(PredictionMode mode) const {
  const auto& src = mode == PredictionMode::coarse ? coarse : mode == PredictionMode::fine ? fine : distilled;
  std::vector<double> s;
  s.reserve(src.size());
  for (const auto& v : src) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    s.push_back(std::sqrt(acc));
  }
  return s;
}

std::size_t PredictionSet::predicted(PredictionMode mode) const {
  const auto s = scores(mode);
  if (s.empty()) throw std::logic_error("prediction over zero classes");
  return static_cast<std::size_t>(std::max_element(s.begin(), s.end()) - s.begin());
}

std::vector<DistillResult> distill_infer(DecapsModel& model, std::span<const Image> images) {
  if (images.empty()) return {};
  NoGradGuard guard;
  const ModelConfig& cfg = model.config();
  const std::size_t S = cfg.input_size;
  const ModelOutput coarse = model.forward(to_tensor(images), Mode::eval);

  std::vector<DistillResult> results(images.size());
  std::vector<Image> crops;
  std::vector<std::size_t> cropped;
  for (std::size_t n = 0; n < images.size(); ++n) {
    DistillResult& r = results[n];
    const auto vectors = class_vectors(coarse.poses, n);
    r.predictions.coarse = vectors;
    r.coarse_class = PredictionSet::combine(vectors, vectors).predicted(PredictionMode::coarse);
    r.coarse_map = averaged_map(coarse.ham, n, r.coarse_class);
    r.roi = locate_roi(r.coarse_map, cfg.theta_crop, images[n].rows, images[n].cols);
    if (r.roi) {
      r.crop = patch_crop(images[n], r.roi->pixels, S);
      crops.push_back(r.crop);
      cropped.push_back(n);
    } else {
      r.crop = images[n];
      r.fine_map = r.coarse_map;
      r.predictions = PredictionSet::combine(vectors, vectors);
    }
  }
  if (!crops.empty()) {
    const ModelOutput fine = model.forward(to_tensor(crops), Mode::eval);
    for (std::size_t k = 0; k < cropped.size(); ++k) {
      DistillResult& r = results[cropped[k]];
      r.predictions = PredictionSet::combine(r.predictions.coarse, class_vectors(fine.poses, k));
      r.fine_map = averaged_map(fine.ham, k, r.coarse_class);
    }
  }
  return results;
}

}  // namespace decaps
