#include "suppress/core.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace suppress {

Image::Image(int w, int h) : width(w), height(h) {
  if (w < 1 || h < 1) throw std::invalid_argument("Image: dims must be >= 1");
  pixels.assign(3 * static_cast<std::size_t>(w) * h, 0);
}

double iou(const BBox& a, const BBox& b) {
  const double ix =
      std::min(a.x + a.w, b.x + b.w) - std::max(a.x, b.x);
  const double iy =
      std::min(a.y + a.h, b.y + b.h) - std::max(a.y, b.y);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

Image crop(const Image& img, const BBox& box) {
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y)));
  const int x1 = std::min(img.width, static_cast<int>(std::ceil(box.x + box.w)));
  const int y1 = std::min(img.height, static_cast<int>(std::ceil(box.y + box.h)));
  if (x1 <= x0 || y1 <= y0)
    throw NoOverlap("crop: box does not overlap image");

  Image out(x1 - x0, y1 - y0);
  for (int y = y0; y < y1; ++y) {
    std::memcpy(out.at(0, y - y0), img.at(x0, y),
                3 * static_cast<std::size_t>(out.width));
  }
  return out;
}

Image resize_bilinear(const Image& img, int out_w, int out_h) {
  if (out_w < 1 || out_h < 1)
    throw std::invalid_argument("resize_bilinear: output dims must be >= 1");

  const double sx = out_w > 1 ? static_cast<double>(img.width - 1) / (out_w - 1) : 0.0;
  const double sy = out_h > 1 ? static_cast<double>(img.height - 1) / (out_h - 1) : 0.0;

  Image out(out_w, out_h);
  for (int oy = 0; oy < out_h; ++oy) {
    const double fy = oy * sy;
    const int y0 = std::min(static_cast<int>(fy), img.height - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int ox = 0; ox < out_w; ++ox) {
      const double fx = ox * sx;
      const int x0 = std::min(static_cast<int>(fx), img.width - 1);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      const std::uint8_t* p00 = img.at(x0, y0);
      const std::uint8_t* p10 = img.at(x1, y0);
      const std::uint8_t* p01 = img.at(x0, y1);
      const std::uint8_t* p11 = img.at(x1, y1);
      std::uint8_t* dst = out.at(ox, oy);
      for (int c = 0; c < 3; ++c) {
        const double top = (1.0 - wx) * p00[c] + wx * p10[c];
        const double bot = (1.0 - wx) * p01[c] + wx * p11[c];
        dst[c] = static_cast<std::uint8_t>(
            std::lround((1.0 - wy) * top + wy * bot));
      }
    }
  }
  return out;
}

}  // namespace suppress
