#include "suppress/tuner.hpp"

#include <algorithm>

#include <json.hpp>

#include "suppress/parallel.hpp"

namespace suppress {

using nlohmann::json;

std::vector<Detection> apply_thresholds(std::span<const ScoredDetection> scored,
                                        const ThresholdConfig& cfg) {
  std::vector<Detection> out;
  for (const ScoredDetection& s : scored)
    if (s.detection.score >= cfg.th1 && s.suppressor_score >= cfg.th2)
      out.push_back(s.detection);
  return out;
}

std::vector<std::size_t> front_of(
    std::span<const std::pair<double, double>> points) {
  auto dominates = [](const std::pair<double, double>& a,
                      const std::pair<double, double>& b) {
    return a.first >= b.first && a.second >= b.second &&
           (a.first > b.first || a.second > b.second);
  };
  std::vector<std::size_t> front;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j)
      if (j != i && dominates(points[j], points[i])) dominated = true;
    if (!dominated) front.push_back(i);
  }
  std::stable_sort(front.begin(), front.end(),
                   [&](std::size_t a, std::size_t b) {
                     return points[a].second < points[b].second;
                   });
  return front;
}

std::vector<double> default_grid() {
  std::vector<double> g;
  for (int i = 0; i < 10; ++i) g.push_back(0.50 + 0.05 * i);
  return g;
}

SweepResult sweep(std::span<const ScoredDetection> scored, const Dataset& ds,
                  std::span<const double> th1_grid,
                  std::span<const double> th2_grid, double iou_threshold,
                  int threads) {
  if (th1_grid.empty() || th2_grid.empty())
    throw EmptyGrid("sweep: both threshold grids must be non-empty");
  for (std::span<const double> grid : {th1_grid, th2_grid})
    for (double v : grid)
      if (!(v >= 0.0 && v <= 1.0))
        throw std::invalid_argument("sweep: grid value " + std::to_string(v) +
                                    " outside [0, 1]");

  SweepResult result;
  result.points.resize(th1_grid.size() * th2_grid.size());
  parallel_for(result.points.size(), threads, [&](std::size_t i) {
    const double th1 = th1_grid[i / th2_grid.size()];
    const double th2 = th2_grid[i % th2_grid.size()];
    SweepPoint& pt = result.points[i];
    pt.cfg = {th1, th2};
    pt.report =
        evaluate_detections(ds, apply_thresholds(scored, pt.cfg),
                            iou_threshold);
  });

  std::vector<std::pair<double, double>> pr;
  pr.reserve(result.points.size());
  for (const SweepPoint& pt : result.points)
    pr.emplace_back(pt.report.precision, pt.report.recall);
  result.front = front_of(pr);
  for (std::size_t idx : result.front) result.points[idx].on_front = true;

  // ties: higher recall, then lower th1, then lower th2
  auto better = [&](std::size_t a, std::size_t b, auto key) {
    const SweepPoint& pa = result.points[a];
    const SweepPoint& pb = result.points[b];
    if (key(pa) != key(pb)) return key(pa) > key(pb);
    if (pa.report.recall != pb.report.recall)
      return pa.report.recall > pb.report.recall;
    if (pa.cfg.th1 != pb.cfg.th1) return pa.cfg.th1 < pb.cfg.th1;
    return pa.cfg.th2 < pb.cfg.th2;
  };
  result.c1 = result.front.front();
  result.c2 = result.front.front();
  for (std::size_t idx : result.front) {
    if (better(idx, result.c1, [](const SweepPoint& p) { return p.report.f1; }))
      result.c1 = idx;
    if (better(idx, result.c2,
               [](const SweepPoint& p) { return p.report.recall; }))
      result.c2 = idx;
  }
  result.points[result.c1].is_c1 = true;
  result.points[result.c2].is_c2 = true;
  return result;
}

std::string sweep_json(const SweepResult& result) {
  json arr = json::array();
  for (const SweepPoint& pt : result.points) {
    arr.push_back({{"th1", pt.cfg.th1},
                   {"th2", pt.cfg.th2},
                   {"precision", pt.report.precision},
                   {"recall", pt.report.recall},
                   {"f1", pt.report.f1},
                   {"on_front", pt.on_front},
                   {"is_c1", pt.is_c1},
                   {"is_c2", pt.is_c2}});
  }
  return arr.dump(2) + "\n";
}

std::string sweep_csv(const SweepResult& result) {
  std::string out = "th1,th2,precision,recall,f1,on_front,is_c1,is_c2\n";
  char line[192];
  for (const SweepPoint& pt : result.points) {
    std::snprintf(line, sizeof(line), "%.6f,%.6f,%.9f,%.9f,%.9f,%d,%d,%d\n",
                  pt.cfg.th1, pt.cfg.th2, pt.report.precision,
                  pt.report.recall, pt.report.f1, pt.on_front ? 1 : 0,
                  pt.is_c1 ? 1 : 0, pt.is_c2 ? 1 : 0);
    out += line;
  }
  return out;
}

}  // namespace suppress
