#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace suppress {

/// 8-bit RGB raster, row-major, origin at the top-left corner.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // 3 bytes per pixel: r, g, b

  Image() = default;
  Image(int w, int h);  // zero-filled; throws on non-positive dims

  std::uint8_t* at(int x, int y) {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + 3 * (static_cast<std::size_t>(y) * width + x);
  }

  bool operator==(const Image&) const = default;
};

/// Axis-aligned box, (x, y) top-left, in image coordinates. Boxes may extend
/// past image borders; cropping clamps.
struct BBox {
  double x = 0;
  double y = 0;
  double w = 0;
  double h = 0;

  double area() const { return w * h; }
  bool valid() const { return w > 0 && h > 0 && x >= 0 && y >= 0; }

  bool operator==(const BBox&) const = default;
};

/// One scored box from the upstream detector.
struct Detection {
  std::string image_id;
  BBox box;
  double score = 0;  // upstream confidence, the quantity th1 thresholds

  bool operator==(const Detection&) const = default;
};

/// One ground-truth box. Tags are flat "key=value" strings (variety,
/// lighting condition, ...) kept sorted and unique.
struct Annotation {
  std::string image_id;
  BBox box;
  std::vector<std::string> tags;

  bool operator==(const Annotation&) const = default;
};

struct NoOverlap : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Intersection over union; symmetric, in [0, 1].
double iou(const BBox& a, const BBox& b);

/// Sub-image of `box` clamped to image bounds. The region covers every pixel
/// the box touches (floor/ceil snapping). Throws NoOverlap when the clamped
/// region is empty.
Image crop(const Image& img, const BBox& box);

/// Bilinear resize with corner-aligned sampling.
Image resize_bilinear(const Image& img, int out_w, int out_h);

}  // namespace suppress
