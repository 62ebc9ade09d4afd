#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "asxai/tensor.hpp"

namespace asxai {

/// RGB image, interleaved HWC floats in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(std::size_t h, std::size_t w, float fill = 0.0f) : height(h), width(w), rgb(h * w * 3, fill) {}

  float& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  float at(std::size_t y, std::size_t x, std::size_t c) const { return rgb[(y * width + x) * 3 + c]; }

  bool operator==(const Image&) const = default;
};

/// ImageNet channel statistics used for input normalization.
inline constexpr float kChannelMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kChannelStd[3] = {0.229f, 0.224f, 0.225f};

/// Normalized [N, 3, H, W] batch. All images must share one size.
Tensor images_to_tensor(std::span<const Image> images);

/// [3, H, W] tensor in [0, 1] (no normalization) back to an Image, clamped.
Image tensor_to_image(const Tensor& chw);

/// Bilinear resize (half-pixel centers).
Image resize_bilinear(const Image& src, std::size_t height, std::size_t width);

// HSV with all channels in [0, 1]; hue wraps.
void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v);
void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b);

}  // namespace asxai
