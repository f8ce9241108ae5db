// SPDX-License-Identifier: Apache-2.0
#include "gformer/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "gformer/errors.hpp"

namespace gformer {

std::uint8_t quantize(float v) {
  const float c = std::clamp(std::isnan(v) ? 0.0f : v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(255.0f * c));
}

ImageFile quantize(const Image& image) {
  ImageFile f{image.width, image.height, image.channels, {}};
  f.samples.resize(image.data.size());
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < image.channels; ++c)
        f.samples[(y * image.width + x) * image.channels + c] = quantize(image.at(c, y, x));
  return f;
}

Image dequantize(const ImageFile& file) {
  Image image(file.channels, file.height, file.width);
  for (std::size_t y = 0; y < file.height; ++y)
    for (std::size_t x = 0; x < file.width; ++x)
      for (std::size_t c = 0; c < file.channels; ++c)
        image.at(c, y, x) = static_cast<float>(file.samples[(y * file.width + x) * file.channels + c]) / 255.0f;
  return image;
}

std::string encode_pnm(const ImageFile& file, PnmKind kind) {
  const std::size_t want = kind == PnmKind::P5 ? 1 : 3;
  if (file.channels != want) {
    throw FormatError(std::string(kind == PnmKind::P5 ? "P5" : "P6") + " cannot hold a " +
                      std::to_string(file.channels) + "-channel image");
  }
  if (file.samples.size() != file.width * file.height * file.channels) {
    throw FormatError("image payload does not match its dimensions");
  }
  std::string out = (kind == PnmKind::P5 ? "P5\n" : "P6\n") + std::to_string(file.width) + " " +
                    std::to_string(file.height) + "\n255\n";
  out.append(file.samples.begin(), file.samples.end());
  return out;
}

std::string encode_pnm(const ImageFile& file) {
  if (file.channels == 1) return encode_pnm(file, PnmKind::P5);
  if (file.channels == 3) return encode_pnm(file, PnmKind::P6);
  throw FormatError("PNM holds 1 or 3 channels, not " + std::to_string(file.channels));
}

namespace {

// Reads one header integer, skipping whitespace and '#' comments before it.
std::size_t header_number(const std::string& bytes, std::size_t& pos, const char* what) {
  for (;;) {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (pos < bytes.size() && bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  const std::size_t start = pos;
  std::size_t value = 0;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
    value = value * 10 + static_cast<std::size_t>(bytes[pos] - '0');
    if (value > (1u << 24)) throw FormatError(std::string("PNM ") + what + " is too large");
    ++pos;
  }
  if (pos == start) throw FormatError(std::string("PNM header: missing ") + what);
  return value;
}

}  // namespace

ImageFile decode_pnm(const std::string& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError("not a binary PGM/PPM file");
  }
  ImageFile f;
  f.channels = bytes[1] == '5' ? 1 : 3;
  std::size_t pos = 2;
  f.width = header_number(bytes, pos, "width");
  f.height = header_number(bytes, pos, "height");
  const std::size_t maxval = header_number(bytes, pos, "maxval");
  if (maxval != 255) throw FormatError("unsupported PNM maxval " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("PNM header must end with a single whitespace byte");
  }
  ++pos;
  if (f.width == 0 || f.height == 0) throw FormatError("PNM image has no pixels");
  const std::size_t expected = f.width * f.height * f.channels;
  if (bytes.size() - pos != expected) {
    throw FormatError("PNM payload has " + std::to_string(bytes.size() - pos) + " bytes, header declares " +
                      std::to_string(expected));
  }
  f.samples.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return f;
}

void write_image(const std::filesystem::path& path, const ImageFile& file) {
  const std::string bytes = encode_pnm(file);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

ImageFile read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return decode_pnm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_image(const std::filesystem::path& path, const Image& image) { write_image(path, quantize(image)); }

Image read_image_float(const std::filesystem::path& path) { return dequantize(read_image(path)); }

Image upsample_nearest(const Image& image, std::size_t factor) {
  if (factor == 0) throw DimensionError("upsample factor must be positive");
  Image out(image.channels, image.height * factor, image.width * factor);
  for (std::size_t c = 0; c < image.channels; ++c)
    for (std::size_t y = 0; y < out.height; ++y)
      for (std::size_t x = 0; x < out.width; ++x) out.at(c, y, x) = image.at(c, y / factor, x / factor);
  return out;
}

Image to_rgb(const Image& image) {
  if (image.channels == 3) return image;
  if (image.channels != 1) throw DimensionError("expected 1 or 3 channels, got " + std::to_string(image.channels));
  Image out(3, image.height, image.width);
  for (std::size_t c = 0; c < 3; ++c) std::copy(image.data.begin(), image.data.end(), out.data.begin() + c * image.pixels());
  return out;
}

Tensor<float> to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw DimensionError("to_tensor: no images");
  const Image& first = images.front();
  std::vector<float> values;
  values.reserve(images.size() * first.data.size());
  for (const auto& im : images) {
    if (im.channels != first.channels || im.height != first.height || im.width != first.width) {
      throw DimensionError("to_tensor: images differ in size");
    }
    values.insert(values.end(), im.data.begin(), im.data.end());
  }
  return Tensor<float>({images.size(), first.channels, first.height, first.width}, std::move(values));
}

Image image_from_tensor(const Tensor<float>& batch, std::size_t index) {
  if (batch.rank() != 4 || index >= batch.dim(0)) throw DimensionError("image_from_tensor: bad batch or index");
  Image im(batch.dim(1), batch.dim(2), batch.dim(3));
  const auto v = batch.values();
  std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(index * im.data.size()), im.data.size(), im.data.begin());
  return im;
}

}  // namespace gformer
