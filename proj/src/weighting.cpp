#include "suppress/weighting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "suppress/rng.hpp"

namespace suppress {

namespace {

double dist2(const Rgb& p, const std::array<double, 3>& c) {
  const double dr = p[0] - c[0];
  const double dg = p[1] - c[1];
  const double db = p[2] - c[2];
  return dr * dr + dg * dg + db * db;
}

// k-means++: first center uniform, the rest sampled proportionally to the
// squared distance from the nearest chosen center.
std::vector<std::array<double, 3>> seed_centers(std::span<const Rgb> pixels,
                                                int k, Rng& rng) {
  std::vector<std::array<double, 3>> centers;
  centers.reserve(k);
  auto as_center = [](const Rgb& p) {
    return std::array<double, 3>{static_cast<double>(p[0]),
                                 static_cast<double>(p[1]),
                                 static_cast<double>(p[2])};
  };
  centers.push_back(as_center(pixels[rng.uniform_index(pixels.size())]));

  std::vector<double> d2(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i)
    d2[i] = dist2(pixels[i], centers[0]);

  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (double d : d2) total += d;
    std::size_t pick;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      pick = pixels.size() - 1;
      for (std::size_t i = 0; i < pixels.size(); ++i) {
        acc += d2[i];
        if (acc > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_index(pixels.size());
    }
    centers.push_back(as_center(pixels[pick]));
    for (std::size_t i = 0; i < pixels.size(); ++i)
      d2[i] = std::min(d2[i], dist2(pixels[i], centers.back()));
  }
  return centers;
}

void assign_labels(std::span<const Rgb> pixels,
                   const std::vector<std::array<double, 3>>& centers,
                   std::vector<int>& labels) {
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    int best = 0;
    double best_d = dist2(pixels[i], centers[0]);
    for (int c = 1; c < static_cast<int>(centers.size()); ++c) {
      const double d = dist2(pixels[i], centers[c]);
      if (d < best_d) {  // ties keep the lowest cluster index
        best_d = d;
        best = c;
      }
    }
    labels[i] = best;
  }
}

// Reseed each empty cluster to the point farthest from its assigned center.
// When every point already sits on its center there is nothing to gain and
// the cluster is left empty (keeps degenerate inputs stable).
void repair_empty_clusters(std::span<const Rgb> pixels,
                           std::vector<std::array<double, 3>>& centers,
                           std::vector<int>& labels) {
  std::vector<int> counts(centers.size(), 0);
  for (int l : labels) ++counts[l];
  for (int c = 0; c < static_cast<int>(centers.size()); ++c) {
    if (counts[c] > 0) continue;
    std::size_t worst = 0;
    double worst_d = -1.0;
    for (std::size_t i = 0; i < pixels.size(); ++i) {
      const double d = dist2(pixels[i], centers[labels[i]]);
      if (d > worst_d) {
        worst_d = d;
        worst = i;
      }
    }
    if (worst_d <= 0.0) return;
    --counts[labels[worst]];
    labels[worst] = c;
    counts[c] = 1;
    centers[c] = {static_cast<double>(pixels[worst][0]),
                  static_cast<double>(pixels[worst][1]),
                  static_cast<double>(pixels[worst][2])};
  }
}

void update_centers(std::span<const Rgb> pixels,
                    const std::vector<int>& labels,
                    std::vector<std::array<double, 3>>& centers) {
  std::vector<std::array<double, 3>> sums(centers.size(), {0, 0, 0});
  std::vector<int> counts(centers.size(), 0);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const int l = labels[i];
    sums[l][0] += pixels[i][0];
    sums[l][1] += pixels[i][1];
    sums[l][2] += pixels[i][2];
    ++counts[l];
  }
  for (std::size_t c = 0; c < centers.size(); ++c) {
    if (counts[c] == 0) continue;  // empty clusters keep their center
    centers[c] = {sums[c][0] / counts[c], sums[c][1] / counts[c],
                  sums[c][2] / counts[c]};
  }
}

double total_inertia(std::span<const Rgb> pixels,
                     const std::vector<std::array<double, 3>>& centers,
                     const std::vector<int>& labels) {
  double sum = 0.0;
  for (std::size_t i = 0; i < pixels.size(); ++i)
    sum += dist2(pixels[i], centers[labels[i]]);
  return sum;
}

}  // namespace

KMeansResult kmeans_colors(std::span<const Rgb> pixels,
                           const WeightingConfig& cfg, std::uint64_t stream) {
  if (cfg.n_clusters < 2)
    throw std::invalid_argument("kmeans_colors: n_clusters must be >= 2");
  if (cfg.max_iters < 1)
    throw std::invalid_argument("kmeans_colors: max_iters must be >= 1");
  if (pixels.size() < static_cast<std::size_t>(cfg.n_clusters))
    throw TooFewPixels("kmeans_colors: " + std::to_string(pixels.size()) +
                       " pixels for " + std::to_string(cfg.n_clusters) +
                       " clusters");

  Rng rng(cfg.seed, stream);
  KMeansResult res;
  res.centers = seed_centers(pixels, cfg.n_clusters, rng);
  res.labels.assign(pixels.size(), 0);
  assign_labels(pixels, res.centers, res.labels);
  repair_empty_clusters(pixels, res.centers, res.labels);

  double prev = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < cfg.max_iters; ++iter) {
    update_centers(pixels, res.labels, res.centers);
    assign_labels(pixels, res.centers, res.labels);
    repair_empty_clusters(pixels, res.centers, res.labels);
    res.inertia = total_inertia(pixels, res.centers, res.labels);
    if (!res.inertia_history.empty() &&
        res.inertia > res.inertia_history.back() * (1.0 + 1e-12) + 1e-9)
      throw std::logic_error("kmeans_colors: inertia increased");
    res.inertia_history.push_back(res.inertia);
    if (prev - res.inertia < cfg.convergence_eps) break;
    prev = res.inertia;
  }
  return res;
}

WeightedPatch weight_patch(const Image& patch, const WeightingConfig& cfg,
                           std::uint64_t stream) {
  if (patch.width != kPatchSize || patch.height != kPatchSize)
    throw std::invalid_argument("weight_patch: patch must be 36x36");

  std::vector<Rgb> pixels(static_cast<std::size_t>(kPatchSize) * kPatchSize);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = {patch.pixels[3 * i], patch.pixels[3 * i + 1],
                 patch.pixels[3 * i + 2]};
  }

  const KMeansResult km = kmeans_colors(pixels, cfg, stream);

  std::vector<int> counts(cfg.n_clusters, 0);
  for (int l : km.labels) ++counts[l];
  const int apple = static_cast<int>(
      std::max_element(counts.begin(), counts.end()) - counts.begin());

  WeightedPatch out;
  out.masked = patch;
  out.mask.assign(pixels.size(), 0);
  for (int y = 0; y < kPatchSize; ++y) {
    for (int x = 0; x < kPatchSize; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * kPatchSize + x;
      if (km.labels[i] == apple) {
        out.mask[i] = 1;
        const int cell = (y < kGridCell ? 0 : 2) + (x < kGridCell ? 0 : 1);
        ++out.cell_counts[cell];
      } else {
        std::uint8_t* px = out.masked.at(x, y);
        px[0] = px[1] = px[2] = 0;
      }
    }
  }
  return out;
}

}  // namespace suppress
