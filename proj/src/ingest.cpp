#include "suppress/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include <json.hpp>
#include "suppress/parallel.hpp"

namespace suppress {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ParseError("unknown split '" + s + "' (expected train|val|test)");
}

namespace {

double require_number(const json& j, const std::string& context) {
  if (!j.is_number()) throw ParseError(context + ": expected a number");
  return j.get<double>();
}

void collect_string_attrs(const json& attrs, std::vector<std::string>& tags) {
  if (!attrs.is_object()) return;
  for (auto it = attrs.begin(); it != attrs.end(); ++it) {
    if (it.value().is_string())
      tags.push_back(it.key() + "=" + it.value().get<std::string>());
  }
}

Annotation parse_region(const json& region, const std::string& image_id,
                        const std::vector<std::string>& file_tags,
                        std::size_t region_index) {
  const std::string where =
      "file '" + image_id + "' region " + std::to_string(region_index);
  if (!region.is_object() || !region.contains("shape_attributes"))
    throw ParseError(where + ": missing shape_attributes");
  const json& sa = region["shape_attributes"];
  const std::string shape = sa.value("name", std::string());
  if (shape != "rect")
    throw UnsupportedShape(where + ": unsupported shape '" + shape + "'");

  Annotation ann;
  ann.image_id = image_id;
  for (const char* field : {"x", "y", "width", "height"})
    if (!sa.contains(field))
      throw ParseError(where + ": rect missing '" + std::string(field) + "'");
  ann.box.x = require_number(sa["x"], where);
  ann.box.y = require_number(sa["y"], where);
  ann.box.w = require_number(sa["width"], where);
  ann.box.h = require_number(sa["height"], where);
  if (!(ann.box.w > 0 && ann.box.h > 0))
    throw ParseError(where + ": degenerate rect (zero width or height)");

  ann.tags = file_tags;
  if (region.contains("region_attributes"))
    collect_string_attrs(region["region_attributes"], ann.tags);
  std::sort(ann.tags.begin(), ann.tags.end());
  ann.tags.erase(std::unique(ann.tags.begin(), ann.tags.end()),
                 ann.tags.end());
  return ann;
}

}  // namespace

std::vector<Annotation> parse_via(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("VIA JSON: ") + e.what());
  }
  if (root.is_object() && root.contains("_via_img_metadata"))
    root = root["_via_img_metadata"];
  if (!root.is_object())
    throw ParseError("VIA JSON: top level must be an object of file entries");

  std::vector<Annotation> out;
  for (auto it = root.begin(); it != root.end(); ++it) {
    const json& entry = it.value();
    if (!entry.is_object())
      throw ParseError("VIA JSON: entry '" + it.key() + "' is not an object");
    const std::string image_id =
        entry.contains("filename") && entry["filename"].is_string()
            ? entry["filename"].get<std::string>()
            : it.key();
    if (!entry.contains("regions") || !entry["regions"].is_array())
      throw ParseError("VIA JSON: file '" + image_id +
                       "' missing regions array");

    std::vector<std::string> file_tags;
    if (entry.contains("file_attributes"))
      collect_string_attrs(entry["file_attributes"], file_tags);

    const json& regions = entry["regions"];
    for (std::size_t i = 0; i < regions.size(); ++i)
      out.push_back(parse_region(regions[i], image_id, file_tags, i));
  }
  return out;
}

std::string serialize_via(std::span<const Annotation> annotations) {
  json root = json::object();
  for (const Annotation& ann : annotations) {
    json& entry = root[ann.image_id];
    if (entry.is_null()) {
      entry["filename"] = ann.image_id;
      entry["file_attributes"] = json::object();
      entry["regions"] = json::array();
    }
    json region;
    region["shape_attributes"] = {{"name", "rect"},
                                  {"x", ann.box.x},
                                  {"y", ann.box.y},
                                  {"width", ann.box.w},
                                  {"height", ann.box.h}};
    json attrs = json::object();
    for (const std::string& tag : ann.tags) {
      const auto eq = tag.find('=');
      if (eq == std::string::npos)
        throw ParseError("serialize_via: tag '" + tag +
                         "' is not in key=value form");
      attrs[tag.substr(0, eq)] = tag.substr(eq + 1);
    }
    region["region_attributes"] = attrs;
    entry["regions"].push_back(region);
  }
  return root.dump(2);
}

std::vector<Detection> parse_detections(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("detection JSON: ") + e.what());
  }
  if (!root.is_array())
    throw ParseError("detection JSON: top level must be an array");

  std::vector<Detection> out;
  out.reserve(root.size());
  for (std::size_t i = 0; i < root.size(); ++i) {
    const json& item = root[i];
    const std::string where = "detection " + std::to_string(i);
    if (!item.is_object() || !item.contains("image_id") ||
        !item.contains("bbox") || !item.contains("score"))
      throw ParseError(where + ": need image_id, bbox, score");
    if (!item["image_id"].is_string())
      throw ParseError(where + ": image_id must be a string");
    const json& bbox = item["bbox"];
    if (!bbox.is_array() || bbox.size() != 4)
      throw ParseError(where + ": bbox must be [x, y, w, h]");

    Detection det;
    det.image_id = item["image_id"].get<std::string>();
    det.box.x = require_number(bbox[0], where);
    det.box.y = require_number(bbox[1], where);
    det.box.w = require_number(bbox[2], where);
    det.box.h = require_number(bbox[3], where);
    if (!(det.box.w > 0 && det.box.h > 0))
      throw ParseError(where + ": degenerate bbox");
    det.score = require_number(item["score"], where);
    if (det.score < 0.0 || det.score > 1.0)
      throw ScoreOutOfRange(where + ": score " + std::to_string(det.score) +
                            " outside [0, 1]");
    out.push_back(std::move(det));
  }
  return out;
}

std::string serialize_detections(std::span<const Detection> detections) {
  json root = json::array();
  for (const Detection& det : detections) {
    root.push_back({{"image_id", det.image_id},
                    {"bbox", {det.box.x, det.box.y, det.box.w, det.box.h}},
                    {"score", det.score}});
  }
  return root.dump(2);
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string next_ppm_token(std::span<const std::uint8_t> bytes,
                           std::size_t& pos) {
  while (pos < bytes.size()) {
    const char c = static_cast<char>(bytes[pos]);
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      ++pos;
    } else {
      break;
    }
  }
  std::string token;
  while (pos < bytes.size() &&
         !std::isspace(static_cast<unsigned char>(bytes[pos])) &&
         bytes[pos] != '#') {
    token.push_back(static_cast<char>(bytes[pos]));
    ++pos;
  }
  if (token.empty()) throw FormatError("PPM: truncated header");
  return token;
}

int parse_ppm_int(const std::string& token, const char* what) {
  for (char c : token)
    if (!std::isdigit(static_cast<unsigned char>(c)))
      throw FormatError(std::string("PPM: bad ") + what + " '" + token + "'");
  return std::stoi(token);
}

}  // namespace

Image decode_ppm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  if (next_ppm_token(bytes, pos) != "P6")
    throw FormatError("PPM: expected magic P6");
  const int width = parse_ppm_int(next_ppm_token(bytes, pos), "width");
  const int height = parse_ppm_int(next_ppm_token(bytes, pos), "height");
  const int maxval = parse_ppm_int(next_ppm_token(bytes, pos), "maxval");
  if (width < 1 || height < 1)
    throw FormatError("PPM: non-positive dimensions");
  if (maxval != 255)
    throw FormatError("PPM: maxval must be 255, got " + std::to_string(maxval));
  if (pos >= bytes.size() ||
      !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw FormatError("PPM: missing whitespace before payload");
  ++pos;  // exactly one whitespace byte separates header and payload

  const std::size_t need = 3 * static_cast<std::size_t>(width) * height;
  if (bytes.size() - pos < need) throw FormatError("PPM: truncated payload");

  Image img(width, height);
  std::copy_n(bytes.data() + pos, need, img.pixels.data());
  return img;
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  std::string header = "P6\n" + std::to_string(img.width) + " " +
                       std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in.good() && !in.eof()) throw IoError("read failed for " + path.string());
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
  if (!out.good()) throw IoError("write failed for " + path.string());
}

Image load_image_ppm(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  return decode_ppm(std::span(
      reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

void save_image_ppm(const Image& img, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_ppm(img);
  write_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()),
                                    bytes.size()));
}

Dataset make_dataset(Split split,
                     std::map<std::string, std::filesystem::path> images,
                     std::vector<Annotation> annotations,
                     std::vector<Detection> detections) {
  Dataset ds;
  ds.split = split;
  ds.images = std::move(images);
  for (const Annotation& ann : annotations)
    if (!ds.images.count(ann.image_id))
      throw UnknownImageId("annotation references unknown image '" +
                           ann.image_id + "'");
  for (const Detection& det : detections)
    if (!ds.images.count(det.image_id))
      throw UnknownImageId("detection references unknown image '" +
                           det.image_id + "'");
  ds.annotations = std::move(annotations);
  ds.detections = std::move(detections);
  return ds;
}

Dataset load_manifest(const std::filesystem::path& manifest_path) {
  json root;
  try {
    root = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw ParseError("manifest: " + std::string(e.what()));
  }
  if (!root.is_object() || !root.contains("split") ||
      !root.contains("images") || !root.contains("annotations_file"))
    throw ParseError("manifest: need split, images, annotations_file");

  const std::filesystem::path base = manifest_path.parent_path();
  auto resolve = [&base](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  const Split split = split_from_string(root["split"].get<std::string>());

  std::map<std::string, std::filesystem::path> images;
  for (auto it = root["images"].begin(); it != root["images"].end(); ++it) {
    if (!it.value().is_string())
      throw ParseError("manifest: image path for '" + it.key() +
                       "' must be a string");
    images[it.key()] = resolve(it.value().get<std::string>());
  }

  std::vector<Annotation> annotations =
      parse_via(read_file(resolve(root["annotations_file"].get<std::string>())));

  std::vector<Detection> detections;
  if (root.contains("detections_file") && !root["detections_file"].is_null())
    detections = parse_detections(
        read_file(resolve(root["detections_file"].get<std::string>())));

  return make_dataset(split, std::move(images), std::move(annotations),
                      std::move(detections));
}

std::map<std::string, Image> load_images(const Dataset& ds, int threads) {
  std::vector<const std::pair<const std::string, std::filesystem::path>*> items;
  items.reserve(ds.images.size());
  for (const auto& kv : ds.images) items.push_back(&kv);

  std::vector<Image> decoded(items.size());
  parallel_for(static_cast<int>(items.size()), threads,
               [&](int i) { decoded[i] = load_image_ppm(items[i]->second); });

  std::map<std::string, Image> out;
  for (std::size_t i = 0; i < items.size(); ++i)
    out.emplace(items[i]->first, std::move(decoded[i]));
  return out;
}

}  // namespace suppress
