#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "suppress/core.hpp"
#include "suppress/ingest.hpp"

namespace suppress {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Lighting { overcast, direct, back };

std::string to_string(Lighting l);
Lighting lighting_from_string(const std::string& s);

struct ColorRange {
  std::array<int, 3> lo{0, 0, 0};
  std::array<int, 3> hi{0, 0, 0};
};

/// A variety's look: `base` is the dominant skin color, `accent` the
/// underlying tint shading toward the shadow side (red-over-yellow for the
/// gala-like entry, yellow-on-yellow for the blondee-like one).
struct PaletteEntry {
  std::string name;
  ColorRange base;
  ColorRange accent;
};

std::vector<PaletteEntry> default_palette();

struct SceneConfig {
  std::uint64_t seed = 0;
  int image_w = 320;
  int image_h = 240;
  int n_apples_min = 3;
  int n_apples_max = 8;
  int radius_min = 12;
  int radius_max = 26;
  std::vector<PaletteEntry> palette = default_palette();
  double occlusion_min = 0.0;
  double occlusion_max = 0.3;
  // Fixed lighting for every scene, or (default) drawn per scene so one
  // dataset carries all three strata.
  std::optional<Lighting> lighting;
  double fp_rate = 2.0;          // expected spurious proposals per image
  double localization_noise = 2.0;  // stddev of proposal jitter, pixels
};

enum class Provenance { from_truth, spurious };

struct DetectionProvenance {
  Provenance kind = Provenance::spurious;
  int annotation = -1;  // source annotation index for from_truth
};

struct SyntheticScene {
  std::string image_id;
  Image image{1, 1};
  std::vector<Annotation> annotations;  // tagged variety=... and lighting=...
  std::vector<Detection> detections;    // truth-derived first, then spurious
  std::vector<DetectionProvenance> provenance;  // parallel to detections
  Lighting lighting = Lighting::overcast;
  std::string variety;
};

/// Renders n_scenes deterministic scenes; scene i draws everything from the
/// stream (cfg.seed, i), so parallel generation equals sequential.
std::vector<SyntheticScene> generate(const SceneConfig& cfg, int n_scenes,
                                     int threads = 1);

/// Writes images/, annotations.json, detections.json, provenance.json and a
/// manifest.json consumable by the ingest loader; returns the manifest path.
std::filesystem::path export_scenes(std::span<const SyntheticScene> scenes,
                                    const std::filesystem::path& dir,
                                    Split split = Split::train);

std::map<std::string, std::vector<DetectionProvenance>> load_provenance(
    const std::filesystem::path& path);

}  // namespace suppress
