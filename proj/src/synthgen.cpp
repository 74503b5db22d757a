#include "suppress/synthgen.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "suppress/parallel.hpp"
#include "suppress/rng.hpp"

namespace suppress {

using nlohmann::json;

std::string to_string(Lighting l) {
  switch (l) {
    case Lighting::overcast: return "overcast";
    case Lighting::direct: return "direct";
    case Lighting::back: return "back";
  }
  throw std::logic_error("bad Lighting value");
}

Lighting lighting_from_string(const std::string& s) {
  if (s == "overcast") return Lighting::overcast;
  if (s == "direct") return Lighting::direct;
  if (s == "back") return Lighting::back;
  throw ConfigError("unknown lighting '" + s +
                    "' (want overcast, direct or back)");
}

std::vector<PaletteEntry> default_palette() {
  return {
      {"gala", {{150, 30, 25}, {205, 60, 50}}, {{200, 165, 55}, {230, 200, 90}}},
      {"blondee",
       {{205, 185, 75}, {235, 215, 110}},
       {{185, 165, 55}, {215, 190, 90}}},
  };
}

namespace {

constexpr double kPi = 3.14159265358979323846;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Cheap order-independent per-pixel noise in [0, 1).
double hash01(std::uint64_t salt, int x, int y, int lane) {
  const std::uint64_t key = salt ^
                            (static_cast<std::uint64_t>(x) * 0x9e3779b97f4a7c15ull +
                             static_cast<std::uint64_t>(y) * 0xc2b2ae3d27d4eb4full +
                             static_cast<std::uint64_t>(lane) * 0x165667b19e3779f9ull);
  return static_cast<double>(mix64(key) >> 11) * 0x1.0p-53;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

std::array<int, 3> draw_color(Rng& rng, const ColorRange& range) {
  std::array<int, 3> c;
  for (int i = 0; i < 3; ++i) c[i] = rng.uniform_int(range.lo[i], range.hi[i]);
  return c;
}

struct AppleSpec {
  int cx = 0, cy = 0, r = 0;
  std::array<int, 3> base{}, accent{};
};

struct EllipseSpec {
  double cx = 0, cy = 0, a = 0, b = 0, cos_t = 1, sin_t = 0;
  std::array<int, 3> color{};
};

struct LightingParams {
  double brightness, contrast;
  std::array<int, 3> cast;
};

LightingParams lighting_params(Lighting l) {
  switch (l) {
    case Lighting::overcast: return {0.92, 0.88, {-2, 2, 2}};
    case Lighting::direct: return {1.12, 1.18, {12, 6, -6}};
    case Lighting::back: return {0.80, 1.06, {-8, -4, 6}};
  }
  throw std::logic_error("bad Lighting value");
}

void validate(const SceneConfig& cfg) {
  if (cfg.image_w < 16 || cfg.image_h < 16)
    throw ConfigError("image size must be at least 16x16");
  if (cfg.n_apples_min < 0 || cfg.n_apples_max < cfg.n_apples_min)
    throw ConfigError("apple count range is not well-ordered");
  if (cfg.radius_min < 2 || cfg.radius_max < cfg.radius_min)
    throw ConfigError("apple radius range is not well-ordered (min 2)");
  if (2 * cfg.radius_max + 8 > std::min(cfg.image_w, cfg.image_h))
    throw ConfigError("apple radius " + std::to_string(cfg.radius_max) +
                      " is too large for a " + std::to_string(cfg.image_w) +
                      "x" + std::to_string(cfg.image_h) + " image");
  if (!(cfg.occlusion_min >= 0.0 && cfg.occlusion_max >= cfg.occlusion_min &&
        cfg.occlusion_max <= 1.0))
    throw ConfigError("occlusion fraction range must sit inside [0, 1]");
  if (cfg.fp_rate < 0.0) throw ConfigError("fp_rate must be >= 0");
  if (cfg.localization_noise < 0.0)
    throw ConfigError("localization_noise must be >= 0");
  if (cfg.palette.empty()) throw ConfigError("palette must not be empty");
  for (const PaletteEntry& p : cfg.palette) {
    if (p.name.empty()) throw ConfigError("palette entry without a name");
    for (const ColorRange* range : {&p.base, &p.accent})
      for (int i = 0; i < 3; ++i)
        if (range->lo[i] < 0 || range->hi[i] > 255 ||
            range->lo[i] > range->hi[i])
          throw ConfigError("palette color range for '" + p.name +
                            "' is not well-ordered within [0, 255]");
  }
}

SyntheticScene make_scene(const SceneConfig& cfg, int index) {
  // One stream per scene; the draw order below is part of the determinism
  // contract and must not be reordered.
  Rng rng(cfg.seed, static_cast<std::uint64_t>(index));
  SyntheticScene scene;
  char name[48];
  std::snprintf(name, sizeof(name), "scene_%04d.ppm", index);
  scene.image_id = name;

  scene.lighting = cfg.lighting
                       ? *cfg.lighting
                       : static_cast<Lighting>(rng.uniform_index(3));
  const PaletteEntry& pal = cfg.palette[rng.uniform_index(cfg.palette.size())];
  scene.variety = pal.name;
  const std::uint64_t pixel_salt = rng.next_u64();

  const double light_angle = rng.uniform(0.0, 2.0 * kPi);
  const double lx = 0.6 * std::cos(light_angle);
  const double ly = 0.6 * std::sin(light_angle);
  const double lz = 0.8;

  LightingParams lp = lighting_params(scene.lighting);
  for (int i = 0; i < 3; ++i) lp.cast[i] += rng.uniform_int(-5, 5);

  const int w = cfg.image_w, h = cfg.image_h;
  const int cell = 32;
  const int nx = w / cell + 2, ny = h / cell + 2;
  std::vector<double> lattice(static_cast<std::size_t>(nx) * ny);
  for (double& v : lattice) v = rng.uniform();

  const int n_apples = rng.uniform_int(cfg.n_apples_min, cfg.n_apples_max);
  std::vector<AppleSpec> apples;
  for (int k = 0; k < n_apples; ++k) {
    AppleSpec a;
    a.r = rng.uniform_int(cfg.radius_min, cfg.radius_max);
    a.cx = rng.uniform_int(a.r, w - 1 - a.r);
    a.cy = rng.uniform_int(a.r, h - 1 - a.r);
    a.base = draw_color(rng, pal.base);
    a.accent = draw_color(rng, pal.accent);
    apples.push_back(a);
  }

  std::vector<EllipseSpec> occluders;
  for (const AppleSpec& a : apples) {
    const double occ = rng.uniform(cfg.occlusion_min, cfg.occlusion_max);
    if (occ <= 1e-9) continue;
    const int count = rng.uniform_int(1, 2);
    const double area_each = occ * kPi * a.r * a.r / count;
    for (int j = 0; j < count; ++j) {
      EllipseSpec e;
      const double rho = rng.uniform(1.5, 3.0);
      e.b = std::sqrt(area_each / (kPi * rho));
      e.a = rho * e.b;
      const double ang = rng.uniform(0.0, kPi);
      e.cos_t = std::cos(ang);
      e.sin_t = std::sin(ang);
      const double off_r = rng.uniform(0.0, 0.7 * a.r);
      const double off_t = rng.uniform(0.0, 2.0 * kPi);
      e.cx = a.cx + off_r * std::cos(off_t);
      e.cy = a.cy + off_r * std::sin(off_t);
      e.color = draw_color(rng, {{38, 88, 30}, {70, 130, 62}});
      occluders.push_back(e);
    }
  }

  // truth boxes + jittered proposals
  const double noise = cfg.localization_noise;
  for (int k = 0; k < n_apples; ++k) {
    const AppleSpec& a = apples[k];
    const BBox truth{static_cast<double>(a.cx - a.r),
                     static_cast<double>(a.cy - a.r),
                     static_cast<double>(2 * a.r),
                     static_cast<double>(2 * a.r)};
    Annotation ann;
    ann.image_id = scene.image_id;
    ann.box = truth;
    ann.tags = {"lighting=" + to_string(scene.lighting),
                "variety=" + scene.variety};
    scene.annotations.push_back(std::move(ann));

    const double dx = std::clamp(rng.normal(0.0, noise), -1.5 * noise,
                                 1.5 * noise);
    const double dy = std::clamp(rng.normal(0.0, noise), -1.5 * noise,
                                 1.5 * noise);
    const double dw = std::clamp(rng.normal(0.0, noise / 2.0), -0.75 * noise,
                                 0.75 * noise);
    const double dh = std::clamp(rng.normal(0.0, noise / 2.0), -0.75 * noise,
                                 0.75 * noise);
    Detection det;
    det.image_id = scene.image_id;
    det.box = {truth.x + dx, truth.y + dy, truth.w + dw, truth.h + dh};
    det.score = std::clamp(rng.normal(0.85, 0.08), 0.0, 1.0);
    if (noise <= a.r / 4.0 && iou(det.box, truth) < 0.3)
      throw std::logic_error(
          "synthgen: jittered proposal drifted below IoU 0.3 despite bounded "
          "noise");
    scene.detections.push_back(std::move(det));
    scene.provenance.push_back({Provenance::from_truth, k});
  }

  // spurious proposals over foliage/background
  const int n_spurious = rng.poisson(cfg.fp_rate);
  for (int j = 0; j < n_spurious; ++j) {
    const int lo = std::max(8, 2 * cfg.radius_min - 6);
    const int hi = 2 * cfg.radius_max + 6;
    const int bw = rng.uniform_int(lo, hi);
    const int bh = rng.uniform_int(lo, hi);
    int bx = 0, by = 0;
    for (int attempt = 0; attempt < 10; ++attempt) {
      bx = rng.uniform_int(0, w - bw);
      by = rng.uniform_int(0, h - bh);
      const double ccx = bx + bw / 2.0, ccy = by + bh / 2.0;
      bool on_apple = false;
      for (const AppleSpec& a : apples) {
        const double ddx = ccx - a.cx, ddy = ccy - a.cy;
        if (ddx * ddx + ddy * ddy <= static_cast<double>(a.r) * a.r)
          on_apple = true;
      }
      if (!on_apple) break;
    }
    Detection det;
    det.image_id = scene.image_id;
    det.box = {static_cast<double>(bx), static_cast<double>(by),
               static_cast<double>(bw), static_cast<double>(bh)};
    det.score = std::clamp(rng.normal(0.55, 0.15), 0.0, 1.0);
    scene.detections.push_back(std::move(det));
    scene.provenance.push_back({Provenance::spurious, -1});
  }

  // ---- rendering (no rng draws past this point) ----
  scene.image = Image(w, h);
  const std::array<double, 3> green{62, 112, 48}, brown{105, 82, 48};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double fx = static_cast<double>(x) / cell;
      const double fy = static_cast<double>(y) / cell;
      const int ix = static_cast<int>(fx), iy = static_cast<int>(fy);
      const double tx = fx - ix, ty = fy - iy;
      auto lat = [&](int gx, int gy) {
        return lattice[static_cast<std::size_t>(gy) * nx + gx];
      };
      const double v = (lat(ix, iy) * (1 - tx) + lat(ix + 1, iy) * tx) *
                           (1 - ty) +
                       (lat(ix, iy + 1) * (1 - tx) + lat(ix + 1, iy + 1) * tx) *
                           ty;
      std::uint8_t* px = scene.image.at(x, y);
      for (int ch = 0; ch < 3; ++ch) {
        const double jitter = hash01(pixel_salt, x, y, ch) * 12.0 - 6.0;
        px[ch] = to_byte(green[ch] + v * (brown[ch] - green[ch]) + jitter);
      }
    }
  }

  for (const AppleSpec& a : apples) {
    for (int y = std::max(0, a.cy - a.r); y <= std::min(h - 1, a.cy + a.r);
         ++y) {
      for (int x = std::max(0, a.cx - a.r); x <= std::min(w - 1, a.cx + a.r);
           ++x) {
        const double ddx = (x - a.cx) / static_cast<double>(a.r);
        const double ddy = (y - a.cy) / static_cast<double>(a.r);
        const double d2 = ddx * ddx + ddy * ddy;
        if (d2 > 1.0) continue;
        const double nz = std::sqrt(std::max(0.0, 1.0 - d2));
        const double shade =
            std::clamp(0.55 + 0.45 * (ddx * lx + ddy * ly + nz * lz), 0.0, 1.0);
        std::uint8_t* px = scene.image.at(x, y);
        for (int ch = 0; ch < 3; ++ch) {
          const double col =
              a.accent[ch] + shade * (a.base[ch] - a.accent[ch]);
          const double jitter = hash01(pixel_salt, x, y, ch + 3) * 8.0 - 4.0;
          px[ch] = to_byte(col * (0.65 + 0.35 * shade) + jitter);
        }
      }
    }
  }

  for (const EllipseSpec& e : occluders) {
    const double reach = std::max(e.a, e.b);
    const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - reach)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(e.cx + reach)));
    const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - reach)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(e.cy + reach)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double ddx = x - e.cx, ddy = y - e.cy;
        const double u = ddx * e.cos_t + ddy * e.sin_t;
        const double v = -ddx * e.sin_t + ddy * e.cos_t;
        if ((u / e.a) * (u / e.a) + (v / e.b) * (v / e.b) > 1.0) continue;
        std::uint8_t* px = scene.image.at(x, y);
        for (int ch = 0; ch < 3; ++ch) {
          const double jitter = hash01(pixel_salt, x, y, ch + 6) * 16.0 - 8.0;
          px[ch] = to_byte(e.color[ch] + jitter);
        }
      }
    }
  }

  for (std::uint8_t& v : scene.image.pixels) {
    const int ch = static_cast<int>((&v - scene.image.pixels.data()) % 3);
    const double out =
        ((v - 128.0) * lp.contrast + 128.0) * lp.brightness + lp.cast[ch];
    v = to_byte(out);
  }
  return scene;
}

}  // namespace

std::vector<SyntheticScene> generate(const SceneConfig& cfg, int n_scenes,
                                     int threads) {
  validate(cfg);
  if (n_scenes < 1) throw ConfigError("n_scenes must be >= 1");
  std::vector<SyntheticScene> out(n_scenes);
  parallel_for(static_cast<std::size_t>(n_scenes), threads,
               [&](std::size_t i) {
                 out[i] = make_scene(cfg, static_cast<int>(i));
               });
  return out;
}

std::filesystem::path export_scenes(std::span<const SyntheticScene> scenes,
                                    const std::filesystem::path& dir,
                                    Split split) {
  if (scenes.empty())
    throw ConfigError("export_scenes: refusing to write an empty dataset");
  std::error_code ec;
  std::filesystem::create_directories(dir / "images", ec);
  if (ec)
    throw IoError("cannot create " + (dir / "images").string() + ": " +
                  ec.message());

  std::vector<Annotation> annotations;
  std::vector<Detection> detections;
  json provenance = json::array();
  json images = json::object();
  for (const SyntheticScene& scene : scenes) {
    save_image_ppm(scene.image, dir / "images" / scene.image_id);
    images[scene.image_id] = "images/" + scene.image_id;
    annotations.insert(annotations.end(), scene.annotations.begin(),
                       scene.annotations.end());
    detections.insert(detections.end(), scene.detections.begin(),
                      scene.detections.end());
    json entries = json::array();
    for (const DetectionProvenance& p : scene.provenance) {
      json e = {{"kind", p.kind == Provenance::from_truth ? "from_truth"
                                                          : "spurious"}};
      if (p.kind == Provenance::from_truth) e["annotation"] = p.annotation;
      entries.push_back(std::move(e));
    }
    provenance.push_back(
        {{"image_id", scene.image_id}, {"detections", std::move(entries)}});
  }

  write_file(dir / "annotations.json", serialize_via(annotations));
  write_file(dir / "detections.json", serialize_detections(detections));
  write_file(dir / "provenance.json", provenance.dump(2) + "\n");

  const json manifest = {{"split", to_string(split)},
                         {"images", std::move(images)},
                         {"annotations_file", "annotations.json"},
                         {"detections_file", "detections.json"}};
  const std::filesystem::path manifest_path = dir / "manifest.json";
  write_file(manifest_path, manifest.dump(2) + "\n");
  return manifest_path;
}

std::map<std::string, std::vector<DetectionProvenance>> load_provenance(
    const std::filesystem::path& path) {
  json root;
  try {
    root = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("provenance: invalid JSON: ") + e.what());
  }
  std::map<std::string, std::vector<DetectionProvenance>> out;
  for (const json& entry : root) {
    std::vector<DetectionProvenance> list;
    for (const json& e : entry.at("detections")) {
      DetectionProvenance p;
      if (e.at("kind") == "from_truth") {
        p.kind = Provenance::from_truth;
        p.annotation = e.at("annotation").get<int>();
      }
      list.push_back(p);
    }
    out[entry.at("image_id").get<std::string>()] = std::move(list);
  }
  return out;
}

}  // namespace suppress
