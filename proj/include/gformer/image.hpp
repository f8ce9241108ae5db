// SPDX-License-Identifier: Apache-2.0
//
// Float images and their 8-bit binary PGM/PPM form.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "gformer/tensor.hpp"

namespace gformer {

/// Planar (channel-major) float image, nominally in [0, 1].
struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  std::size_t pixels() const { return height * width; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// 8-bit samples as stored in the file, interleaved per pixel.
struct ImageFile {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> samples;

  friend bool operator==(const ImageFile&, const ImageFile&) = default;
};

enum class PnmKind { P5, P6 };

/// round(255 * clamp(v, 0, 1)) per sample.
std::uint8_t quantize(float v);
ImageFile quantize(const Image& image);
Image dequantize(const ImageFile& file);

/// P5 for one channel, P6 for three. Throws FormatError when `kind` does not
/// fit the channel count.
std::string encode_pnm(const ImageFile& file, PnmKind kind);
std::string encode_pnm(const ImageFile& file);
/// Throws FormatError on a bad magic number, malformed header, maxval other
/// than 255, or a payload that is shorter or longer than declared.
ImageFile decode_pnm(const std::string& bytes);

void write_image(const std::filesystem::path& path, const ImageFile& file);
ImageFile read_image(const std::filesystem::path& path);
void write_image(const std::filesystem::path& path, const Image& image);
Image read_image_float(const std::filesystem::path& path);

/// Each pixel repeated into a factor x factor block.
Image upsample_nearest(const Image& image, std::size_t factor);
/// Gray images are replicated to three channels; RGB passes through.
Image to_rgb(const Image& image);

/// Stacks same-sized images into a B x C x H x W tensor.
Tensor<float> to_tensor(const std::vector<Image>& images);
Image image_from_tensor(const Tensor<float>& batch, std::size_t index);

}  // namespace gformer
