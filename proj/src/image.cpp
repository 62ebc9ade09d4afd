#include "asxai/image.hpp"

#include <algorithm>
#include <cmath>

#include "asxai/errors.hpp"

namespace asxai {

Tensor images_to_tensor(std::span<const Image> images) {
  if (images.empty()) throw ValidationError("images_to_tensor: empty batch");
  const std::size_t h = images[0].height, w = images[0].width;
  Tensor out({images.size(), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& img = images[n];
    if (img.height != h || img.width != w || img.rgb.size() != h * w * 3) {
      throw DimensionError("images_to_tensor: images differ in size");
    }
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          out(n, c, y, x) = (static_cast<double>(img.at(y, x, c)) - kChannelMean[c]) / kChannelStd[c];
        }
      }
    }
  }
  return out;
}

Image tensor_to_image(const Tensor& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3) throw DimensionError("tensor_to_image: expected [3, H, W]");
  Image img(chw.dim(1), chw.dim(2));
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < img.height; ++y) {
      for (std::size_t x = 0; x < img.width; ++x) {
        img.at(y, x, c) = static_cast<float>(std::clamp(chw(c, y, x), 0.0, 1.0));
      }
    }
  }
  return img;
}

Image resize_bilinear(const Image& src, std::size_t height, std::size_t width) {
  if (src.height == 0 || src.width == 0) throw ValidationError("resize_bilinear: empty image");
  if (src.height == height && src.width == width) return src;
  Image dst(height, width);
  const double sy = static_cast<double>(src.height) / static_cast<double>(height);
  const double sx = static_cast<double>(src.width) / static_cast<double>(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0,
                                 static_cast<double>(src.height - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0,
                                   static_cast<double>(src.width - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = (1 - tx) * src.at(y0, x0, c) + tx * src.at(y0, x1, c);
        const double bottom = (1 - tx) * src.at(y1, x0, c) + tx * src.at(y1, x1, c);
        dst.at(y, x, c) = static_cast<float>((1 - ty) * top + ty * bottom);
      }
    }
  }
  return dst;
}

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx > 0.0f ? d / mx : 0.0f;
  if (d <= 0.0f) {
    h = 0.0f;
    return;
  }
  float hh;
  if (mx == r) {
    hh = (g - b) / d;
  } else if (mx == g) {
    hh = 2.0f + (b - r) / d;
  } else {
    hh = 4.0f + (r - g) / d;
  }
  hh /= 6.0f;
  if (hh < 0.0f) hh += 1.0f;
  h = hh;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  h = h - std::floor(h);
  const float hh = h * 6.0f;
  const int sector = static_cast<int>(hh) % 6;
  const float f = hh - std::floor(hh);
  const float p = v * (1.0f - s);
  const float q = v * (1.0f - s * f);
  const float t = v * (1.0f - s * (1.0f - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace asxai
