#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "suppress/core.hpp"
#include "suppress/ingest.hpp"

namespace suppress {

struct MixedImages : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnknownTagKey : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Match {
  std::size_t detection = 0;
  std::size_t annotation = 0;
  double iou = 0.0;
  bool operator==(const Match&) const = default;
};

/// tn is fixed at 0: detection has no negative-proposal universe.
struct MatchResult {
  int tp = 0;
  int fp = 0;
  int fn = 0;
  int tn = 0;
  std::vector<Match> matches;
};

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  MatchResult counts;
  std::string stratum;  // empty when unstratified
};

/// Greedy matching: detections in descending score order (stable on ties)
/// each claim the unmatched annotation of highest IoU >= iou_threshold;
/// IoU ties go to the lower annotation index. All inputs must share one
/// image id (MixedImages otherwise); iou_threshold must lie in (0, 1).
MatchResult match(std::span<const Detection> detections,
                  std::span<const Annotation> annotations,
                  double iou_threshold);

/// P = tp/(tp+fp), R = tp/(tp+fn), F1 = 2PR/(P+R); every zero denominator
/// yields 0.
MetricsReport metrics(const MatchResult& result);

double f1_score(double precision, double recall);

/// Per-image matching over the whole dataset, counts summed before the
/// ratios. Detections must reference dataset images.
MetricsReport evaluate_detections(const Dataset& ds,
                                  std::span<const Detection> detections,
                                  double iou_threshold);

/// One report per distinct value of the tag key `group_by` plus a final
/// "total" row. Each image's counts are added to every value its
/// annotations carry for that key (exactly one in practice: scene tags are
/// uniform per image). Throws UnknownTagKey when no annotation carries the
/// key.
std::vector<MetricsReport> evaluate_stratified(
    const Dataset& ds, std::span<const Detection> detections,
    double iou_threshold, const std::string& group_by);

/// Aligned text table, one row per report.
std::string report_table(std::span<const MetricsReport> reports);
/// JSON array of {stratum, tp, fp, fn, precision, recall, f1}.
std::string report_json(std::span<const MetricsReport> reports);

}  // namespace suppress
