#include "decaps/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "decaps/ops.hpp"

namespace decaps {

Image resize(const Image& image, std::size_t rows, std::size_t cols) {
  if (image.empty()) throw ShapeError("resize of an empty image");
  if (image.rows == rows && image.cols == cols) return image;
  NoGradGuard guard;
  Tensor t = resize_bilinear(Tensor::from({image.rows, image.cols}, image.pixels), rows, cols);
  Image out(rows, cols);
  std::copy(t.values().begin(), t.values().end(), out.pixels.begin());
  return out;
}

Image crop(const Image& image, std::size_t y0, std::size_t x0, std::size_t y1, std::size_t x1) {
  if (y0 >= y1 || x0 >= x1 || y1 > image.rows || x1 > image.cols) {
    throw ShapeError("crop box [" + std::to_string(y0) + ", " + std::to_string(x0) + ", " +
                     std::to_string(y1) + ", " + std::to_string(x1) + ") outside " +
                     std::to_string(image.rows) + "x" + std::to_string(image.cols) + " image");
  }
  Image out(y1 - y0, x1 - x0);
  for (std::size_t r = y0; r < y1; ++r)
    std::copy_n(image.pixels.begin() + static_cast<long>(r * image.cols + x0), x1 - x0,
                out.pixels.begin() + static_cast<long>((r - y0) * out.cols));
  return out;
}

Tensor to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ShapeError("to_tensor of an empty batch");
  const std::size_t R = images[0].rows, C = images[0].cols;
  std::vector<double> v;
  v.reserve(images.size() * R * C);
  for (const auto& im : images) {
    if (im.rows != R || im.cols != C) throw ShapeError("batch images differ in size");
    v.insert(v.end(), im.pixels.begin(), im.pixels.end());
  }
  return Tensor::from({images.size(), 1, R, C}, std::move(v));
}

Image image_from(const Tensor& maps, std::size_t index) {
  if (maps.dim() < 2) throw ShapeError("image_from needs rank >= 2");
  const std::size_t R = maps.size(-2), C = maps.size(-1);
  if ((index + 1) * R * C > maps.numel()) throw ShapeError("image_from index out of range");
  Image out(R, C);
  auto v = maps.values();
  std::copy_n(v.begin() + static_cast<long>(index * R * C), R * C, out.pixels.begin());
  return out;
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_token(const std::string& data, std::size_t& pos, const std::filesystem::path& path) {
  while (pos < data.size()) {
    const char c = data[pos];
    if (c == '#') {
      while (pos < data.size() && data[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < data.size() && !std::isspace(static_cast<unsigned char>(data[pos])) && data[pos] != '#') ++pos;
  if (start == pos) throw ImageIoError(path.string() + ": truncated header");
  return data.substr(start, pos - start);
}

std::size_t header_number(const std::string& data, std::size_t& pos, const std::filesystem::path& path,
                          const char* what) {
  const std::string tok = next_token(data, pos, path);
  if (tok.empty() || !std::all_of(tok.begin(), tok.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
      tok.size() > 9) {
    throw ImageIoError(path.string() + ": malformed " + what + " '" + tok + "'");
  }
  return std::stoul(tok);
}

std::uint8_t quantize(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageIoError(path.string() + ": cannot open");
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  if (data.size() < 2 || data.compare(0, 2, "P5") != 0) throw ImageIoError(path.string() + ": not a binary PGM (P5)");
  pos = 2;
  const std::size_t cols = header_number(data, pos, path, "width");
  const std::size_t rows = header_number(data, pos, path, "height");
  const std::size_t maxval = header_number(data, pos, path, "maxval");
  if (cols == 0 || rows == 0) throw ImageIoError(path.string() + ": zero image extent");
  if (maxval == 0 || maxval > 65535) throw ImageIoError(path.string() + ": maxval out of range");
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos]))) {
    throw ImageIoError(path.string() + ": malformed header terminator");
  }
  ++pos;
  const std::size_t bytes = maxval < 256 ? 1 : 2;
  if (data.size() - pos < rows * cols * bytes) throw ImageIoError(path.string() + ": truncated pixel data");
  Image img(rows, cols);
  const auto* p = reinterpret_cast<const unsigned char*>(data.data() + pos);
  for (std::size_t i = 0; i < rows * cols; ++i) {
    const std::size_t raw = bytes == 1 ? p[i] : (static_cast<std::size_t>(p[2 * i]) << 8) | p[2 * i + 1];
    if (raw > maxval) throw ImageIoError(path.string() + ": pixel exceeds maxval");
    img.pixels[i] = static_cast<double>(raw) / static_cast<double>(maxval);
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError(path.string() + ": cannot open for writing");
  out << "P5\n" << image.cols << ' ' << image.rows << "\n255\n";
  std::vector<char> buf(image.pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<char>(quantize(image.pixels[i]));
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ImageIoError(path.string() + ": write failed");
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageIoError(path.string() + ": cannot open for writing");
  out << "P6\n" << image.cols << ' ' << image.rows << "\n255\n";
  for (const auto& px : image.pixels) out.write(reinterpret_cast<const char*>(px.data()), 3);
  if (!out) throw ImageIoError(path.string() + ": write failed");
}

RgbImage to_rgb(const Image& image) {
  RgbImage out{image.rows, image.cols, {}};
  out.pixels.reserve(image.pixels.size());
  for (double v : image.pixels) {
    const auto q = quantize(v);
    out.pixels.push_back({q, q, q});
  }
  return out;
}

}  // namespace decaps
