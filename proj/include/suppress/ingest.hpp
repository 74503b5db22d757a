#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "suppress/core.hpp"

namespace suppress {

struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedShape : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ScoreOutOfRange : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownImageId : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Split { train, val, test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// One split of a dataset: image paths keyed by image id, plus the ground
/// truth and upstream detections that reference them. Immutable after
/// assembly; make_dataset rejects ids missing from the image map.
struct Dataset {
  Split split = Split::train;
  std::map<std::string, std::filesystem::path> images;
  std::vector<Annotation> annotations;
  std::vector<Detection> detections;
};

/// Parse a VGG Image Annotator project export. Accepts either the flat
/// file-keyed object or the `_via_img_metadata` wrapper; each entry needs
/// `filename` (used as image id) and a `regions` array whose
/// `shape_attributes` are of type `rect`. String-valued file and region
/// attributes become "key=value" tags.
std::vector<Annotation> parse_via(const std::string& json_text);

/// Inverse of parse_via for round-tripping: tags are written back as region
/// attributes, so they must be in "key=value" form.
std::string serialize_via(std::span<const Annotation> annotations);

/// Parse the flat detection interchange format:
/// [{"image_id": str, "bbox": [x, y, w, h], "score": float}, ...].
/// Unknown keys are ignored.
std::vector<Detection> parse_detections(const std::string& json_text);

std::string serialize_detections(std::span<const Detection> detections);

/// Decode binary PPM (P6, maxval 255). `#` comments are allowed between
/// header tokens.
Image decode_ppm(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_ppm(const Image& img);

Image load_image_ppm(const std::filesystem::path& path);
void save_image_ppm(const Image& img, const std::filesystem::path& path);

/// Validates that every annotation and detection references a known image.
Dataset make_dataset(Split split,
                     std::map<std::string, std::filesystem::path> images,
                     std::vector<Annotation> annotations,
                     std::vector<Detection> detections);

/// Load a dataset manifest:
/// {"split": "train|val|test", "images": {id: path},
///  "annotations_file": path, "detections_file": path?}.
/// Relative paths are resolved against the manifest's directory.
Dataset load_manifest(const std::filesystem::path& manifest_path);

/// Decode every image of the dataset, optionally across threads.
std::map<std::string, Image> load_images(const Dataset& ds, int threads = 1);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace suppress
