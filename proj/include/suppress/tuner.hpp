#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "suppress/evaluation.hpp"
#include "suppress/net.hpp"

namespace suppress {

struct EmptyGrid : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// th1 gates the upstream detector score, th2 the suppressor output.
struct ThresholdConfig {
  double th1 = 0.0;
  double th2 = 0.0;
  bool operator==(const ThresholdConfig&) const = default;
};

struct SweepPoint {
  ThresholdConfig cfg;
  MetricsReport report;
  bool on_front = false;
  bool is_c1 = false;
  bool is_c2 = false;
};

struct SweepResult {
  std::vector<SweepPoint> points;      // th1-major, th2-minor grid order
  std::vector<std::size_t> front;      // indices into points, ascending recall
  std::size_t c1 = 0;                  // front point with max F1
  std::size_t c2 = 0;                  // front point with max recall
};

/// Keeps exactly the detections with score >= th1 and suppressor score >= th2.
std::vector<Detection> apply_thresholds(std::span<const ScoredDetection> scored,
                                        const ThresholdConfig& cfg);

/// Indices of points not dominated in (precision, recall); dominance means
/// weakly better in both and strictly better in one. Sorted by ascending
/// recall (ties by index).
std::vector<std::size_t> front_of(
    std::span<const std::pair<double, double>> points);

/// {0.50, 0.55, ..., 0.95}
std::vector<double> default_grid();

SweepResult sweep(std::span<const ScoredDetection> scored, const Dataset& ds,
                  std::span<const double> th1_grid,
                  std::span<const double> th2_grid, double iou_threshold,
                  int threads = 1);

std::string sweep_json(const SweepResult& result);
std::string sweep_csv(const SweepResult& result);

}  // namespace suppress
