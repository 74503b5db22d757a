#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "suppress/core.hpp"

namespace suppress {

struct TooFewPixels : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Candidate patches are resized to this before weighting and classification.
inline constexpr int kPatchSize = 36;
inline constexpr int kGridCell = kPatchSize / 2;

using Rgb = std::array<std::uint8_t, 3>;

struct WeightingConfig {
  int n_clusters = 3;
  int max_iters = 50;
  std::uint64_t seed = 0;
  double convergence_eps = 1e-6;
};

struct KMeansResult {
  std::vector<int> labels;
  std::vector<std::array<double, 3>> centers;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // one entry per Lloyd iteration
};

/// A 36x36 candidate patch with everything outside the dominant color
/// cluster zeroed out, plus the per-cell pixel counts of that cluster over
/// the 2x2 grid (a top-left, b top-right, c bottom-left, d bottom-right).
struct WeightedPatch {
  Image masked;
  std::vector<std::uint8_t> mask;  // kPatchSize*kPatchSize, 0/1, row-major
  std::array<int, 4> cell_counts{};

  bool operator==(const WeightedPatch&) const = default;
};

/// Lloyd's algorithm in raw RGB space with k-means++ seeding. Deterministic
/// for a given (cfg.seed, stream) pair; stops after max_iters or when the
/// inertia improvement falls below convergence_eps. Empty clusters are
/// reseeded to the worst-fit point when one exists.
KMeansResult kmeans_colors(std::span<const Rgb> pixels,
                           const WeightingConfig& cfg,
                           std::uint64_t stream = 0);

/// Clusters all patch pixels, keeps the largest cluster (ties to the lowest
/// cluster index) as the fruit region, zeroes the rest, and counts kept
/// pixels per 18x18 grid cell. The patch must be exactly 36x36.
WeightedPatch weight_patch(const Image& patch, const WeightingConfig& cfg,
                           std::uint64_t stream = 0);

}  // namespace suppress
