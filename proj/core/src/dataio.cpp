#include "decaps/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <unordered_map>
#include <unordered_set>

namespace decaps {

namespace fs = std::filesystem;

std::vector<std::string> read_id_list(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path.string() + ": cannot open id list");
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos) continue;
    ids.push_back(line.substr(first));
  }
  return ids;
}

void write_id_list(const fs::path& path, std::span<const std::string> ids) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(path.string() + ": cannot open for writing");
  for (const auto& id : ids) out << id << '\n';
  if (!out) throw DataError(path.string() + ": write failed");
}

void check_disjoint(std::span<const std::string> train_ids, std::span<const std::string> test_ids) {
  const std::unordered_set<std::string> train(train_ids.begin(), train_ids.end());
  for (const auto& id : test_ids) {
    if (train.count(id)) throw DataError("split leakage: '" + id + "' is in both the train and test lists");
  }
}

namespace {

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[static_cast<std::size_t>(rng.below(i))]);
}

}  // namespace

std::pair<std::vector<Sample>, std::vector<Sample>> stratified_split(std::vector<Sample> samples, double fraction,
                                                                      std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("split fraction must lie in [0, 1]");
  std::sort(samples.begin(), samples.end(), [](const Sample& a, const Sample& b) {
    return a.label != b.label ? a.label < b.label : a.id < b.id;
  });
  std::pair<std::vector<Sample>, std::vector<Sample>> parts;
  std::size_t begin = 0;
  while (begin < samples.size()) {
    std::size_t end = begin;
    while (end < samples.size() && samples[end].label == samples[begin].label) ++end;
    std::vector<Sample> group(std::make_move_iterator(samples.begin() + static_cast<long>(begin)),
                              std::make_move_iterator(samples.begin() + static_cast<long>(end)));
    Rng rng(Rng::derive(seed, samples[begin].label));
    shuffle(group, rng);
    const auto n_first = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(group.size())));
    for (std::size_t i = 0; i < group.size(); ++i) {
      (i < n_first ? parts.first : parts.second).push_back(std::move(group[i]));
    }
    begin = end;
  }
  return parts;
}

Dataset load_dataset(const fs::path& root, const SplitSpec& spec, std::size_t input_size) {
  if (input_size == 0) throw std::invalid_argument("input size must be positive");
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DataError(root.string() + ": dataset root is not a directory");
  Dataset ds;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) ds.class_names.push_back(entry.path().filename().string());
  }
  std::sort(ds.class_names.begin(), ds.class_names.end());
  if (ds.class_names.size() < 2) throw DataError(root.string() + ": need at least two class directories");

  std::vector<Sample> all;
  for (std::size_t label = 0; label < ds.class_names.size(); ++label) {
    const fs::path dir = root / ds.class_names[label];
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".pgm") files.push_back(entry.path());
    }
    if (files.empty()) throw DataError(dir.string() + ": class directory holds no .pgm images");
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      Image img;
      try {
        img = read_pgm(f);
      } catch (const ImageIoError& e) {
        throw DataError(e.what());
      }
      all.push_back({resize(img, input_size, input_size), label, ds.class_names[label] + "/" + f.stem().string()});
    }
  }

  if (spec.train_list || spec.test_list) {
    if (!spec.train_list || !spec.test_list) throw DataError("explicit splits need both a train and a test list");
    const auto train_ids = read_id_list(*spec.train_list);
    const auto test_ids = read_id_list(*spec.test_list);
    check_disjoint(train_ids, test_ids);
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < all.size(); ++i) index.emplace(all[i].id, i);
    auto take = [&](const std::vector<std::string>& ids, const fs::path& list, std::vector<Sample>& out) {
      for (const auto& id : ids) {
        const auto it = index.find(id);
        if (it == index.end()) throw DataError(list.string() + ": unknown id '" + id + "'");
        out.push_back(all[it->second]);
      }
    };
    take(train_ids, *spec.train_list, ds.train);
    take(test_ids, *spec.test_list, ds.test);
  } else {
    auto [train, test] = stratified_split(std::move(all), spec.train_fraction, spec.seed);
    ds.train = std::move(train);
    ds.test = std::move(test);
  }
  return ds;
}

Image flip_horizontal(const Image& image) {
  Image out(image.rows, image.cols);
  for (std::size_t r = 0; r < image.rows; ++r)
    for (std::size_t c = 0; c < image.cols; ++c) out(r, c) = image(r, image.cols - 1 - c);
  return out;
}

Image rotate(const Image& image, double degrees) {
  if (degrees == 0.0) return image;
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cy = 0.5 * static_cast<double>(image.rows - 1), cx = 0.5 * static_cast<double>(image.cols - 1);
  const double ymax = static_cast<double>(image.rows - 1), xmax = static_cast<double>(image.cols - 1);
  Image out(image.rows, image.cols);
  for (std::size_t r = 0; r < image.rows; ++r) {
    for (std::size_t c = 0; c < image.cols; ++c) {
      const double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
      const double sy = std::clamp(cy + cs * dy - sn * dx, 0.0, ymax);
      const double sx = std::clamp(cx + sn * dy + cs * dx, 0.0, xmax);
      const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
      const std::size_t y1 = std::min(y0 + 1, image.rows - 1), x1 = std::min(x0 + 1, image.cols - 1);
      const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
      out(r, c) = (1 - fy) * ((1 - fx) * image(y0, x0) + fx * image(y0, x1)) +
                  fy * ((1 - fx) * image(y1, x0) + fx * image(y1, x1));
    }
  }
  return out;
}

namespace {

std::size_t crop_side(std::size_t size, double area) {
  const auto side = static_cast<std::size_t>(std::llround(static_cast<double>(size) * std::sqrt(area)));
  return std::clamp<std::size_t>(side, 1, size);
}

}  // namespace

Image apply_augment(const Image& image, const AugmentParams& p) {
  Image out = p.flip ? flip_horizontal(image) : image;
  out = rotate(out, p.degrees);
  const std::size_t h = crop_side(image.rows, p.area), w = crop_side(image.cols, p.area);
  const std::size_t y0 = std::min(p.crop_y, image.rows - h), x0 = std::min(p.crop_x, image.cols - w);
  if (h != image.rows || w != image.cols) out = resize(crop(out, y0, x0, y0 + h, x0 + w), image.rows, image.cols);
  for (double& v : out.pixels) v = std::clamp(v, 0.0, 1.0);
  return out;
}

AugmentParams draw_augment(std::size_t size, std::uint64_t seed, std::string_view id, std::size_t epoch) {
  Rng rng(Rng::derive(seed, Rng::hash(id), epoch));
  AugmentParams p;
  p.flip = rng.bernoulli(0.5);
  p.degrees = rng.uniform(-10.0, 10.0);
  p.area = rng.uniform(0.9, 1.0);
  const std::size_t side = crop_side(size, p.area);
  p.crop_y = static_cast<std::size_t>(rng.below(size - side + 1));
  p.crop_x = static_cast<std::size_t>(rng.below(size - side + 1));
  return p;
}

Image augment(const Image& image, std::uint64_t seed, std::string_view id, std::size_t epoch) {
  if (image.rows != image.cols) throw ShapeError("augment expects a square image");
  return apply_augment(image, draw_augment(image.rows, seed, id, epoch));
}

bool in_peripheral_band(double row, double col, std::size_t size) {
  const double last = static_cast<double>(size) - 1.0;
  const double edge = std::min({row, col, last - row, last - col});
  return edge < static_cast<double>(size) / 4.0;
}

SynthImage synth_image(std::size_t label, std::size_t size, Rng& rng) {
  if (size < 32) throw std::invalid_argument("synthetic images need size >= 32");
  if (label > 1) throw std::invalid_argument("synthetic data has two classes");
  SynthImage s{Image(size, size), 0, 0};
  for (double& v : s.image.pixels) v = 0.2 * rng.uniform();
  const double S = static_cast<double>(size);
  if (label == 0) {
    do {
      s.blob_row = static_cast<std::size_t>(rng.below(size));
      s.blob_col = static_cast<std::size_t>(rng.below(size));
    } while (!in_peripheral_band(static_cast<double>(s.blob_row), static_cast<double>(s.blob_col), size));
    const double sigma = S / 12.0;
    for (std::size_t r = 0; r < size; ++r) {
      for (std::size_t c = 0; c < size; ++c) {
        const double dy = static_cast<double>(r) - static_cast<double>(s.blob_row);
        const double dx = static_cast<double>(c) - static_cast<double>(s.blob_col);
        const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
        s.image(r, c) = std::max(s.image(r, c), g);
      }
    }
  } else {
    const double period = S / 8.0;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    for (std::size_t r = 0; r < size; ++r) {
      const double stripe = 0.5 * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * static_cast<double>(r) / period + phase));
      for (std::size_t c = 0; c < size; ++c) s.image(r, c) += stripe;
    }
  }
  return s;
}

void synth_generate(const fs::path& root, const SynthSpec& spec) {
  if (spec.size < 32) throw std::invalid_argument("synthetic images need size >= 32");
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw DataError(root.string() + ": cannot create directory: " + ec.message());
  std::vector<std::string> train_ids, test_ids;
  std::ofstream blobs(root / "blobs.csv", std::ios::binary | std::ios::trunc);
  if (!blobs) throw DataError((root / "blobs.csv").string() + ": cannot open for writing");
  blobs << "id,row,col\n";
  const std::size_t per_class = spec.train_per_class + spec.test_per_class;
  for (std::size_t label = 0; label < 2; ++label) {
    const fs::path dir = root / kSynthClasses[label];
    fs::create_directories(dir, ec);
    if (ec) throw DataError(dir.string() + ": cannot create directory: " + ec.message());
    for (std::size_t i = 0; i < per_class; ++i) {
      const bool train = i < spec.train_per_class;
      const std::size_t k = train ? i : i - spec.train_per_class;
      char stem[32];
      std::snprintf(stem, sizeof stem, "%s_%04zu", train ? "train" : "test", k);
      const std::string id = std::string(kSynthClasses[label]) + "/" + stem;
      Rng rng(Rng::derive(spec.seed, label, i));
      const SynthImage s = synth_image(label, spec.size, rng);
      try {
        write_pgm(dir / (std::string(stem) + ".pgm"), s.image);
      } catch (const ImageIoError& e) {
        throw DataError(e.what());
      }
      (train ? train_ids : test_ids).push_back(id);
      if (label == 0) blobs << id << ',' << s.blob_row << ',' << s.blob_col << '\n';
    }
  }
  if (!blobs) throw DataError((root / "blobs.csv").string() + ": write failed");
  write_id_list(root / "train.txt", train_ids);
  write_id_list(root / "test.txt", test_ids);
}

}  // namespace decaps
