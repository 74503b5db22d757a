#include "suppress/evaluation.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include <json.hpp>

namespace suppress {

using nlohmann::json;

MatchResult match(std::span<const Detection> detections,
                  std::span<const Annotation> annotations,
                  double iou_threshold) {
  if (!(iou_threshold > 0.0 && iou_threshold < 1.0))
    throw std::invalid_argument("match: iou_threshold must lie in (0, 1)");
  const std::string* image = nullptr;
  auto check_image = [&](const std::string& id) {
    if (!image)
      image = &id;
    else if (*image != id)
      throw MixedImages("match: inputs mix image '" + *image + "' with '" +
                        id + "'");
  };
  for (const Detection& d : detections) check_image(d.image_id);
  for (const Annotation& a : annotations) check_image(a.image_id);

  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     return detections[a].score > detections[b].score;
                   });

  MatchResult r;
  std::vector<char> claimed(annotations.size(), 0);
  for (const std::size_t di : order) {
    std::ptrdiff_t best = -1;
    double best_iou = 0.0;
    for (std::size_t ai = 0; ai < annotations.size(); ++ai) {
      if (claimed[ai]) continue;
      const double v = iou(detections[di].box, annotations[ai].box);
      if (v >= iou_threshold && (best < 0 || v > best_iou)) {
        best = static_cast<std::ptrdiff_t>(ai);
        best_iou = v;
      }
    }
    if (best >= 0) {
      claimed[best] = 1;
      r.matches.push_back({di, static_cast<std::size_t>(best), best_iou});
    }
  }
  r.tp = static_cast<int>(r.matches.size());
  r.fp = static_cast<int>(detections.size()) - r.tp;
  r.fn = static_cast<int>(annotations.size()) - r.tp;
  r.tn = 0;
  return r;
}

double f1_score(double precision, double recall) {
  const double s = precision + recall;
  return s == 0.0 ? 0.0 : 2.0 * precision * recall / s;
}

MetricsReport metrics(const MatchResult& result) {
  MetricsReport rep;
  rep.counts = result;
  const double dp = static_cast<double>(result.tp + result.fp);
  const double dr = static_cast<double>(result.tp + result.fn);
  rep.precision = dp == 0.0 ? 0.0 : result.tp / dp;
  rep.recall = dr == 0.0 ? 0.0 : result.tp / dr;
  rep.f1 = f1_score(rep.precision, rep.recall);
  return rep;
}

namespace {

struct PerImage {
  std::map<std::string, std::vector<Detection>> dets;
  std::map<std::string, std::vector<Annotation>> anns;
};

PerImage split_by_image(const Dataset& ds,
                        std::span<const Detection> detections) {
  PerImage out;
  for (const Detection& d : detections) {
    if (!ds.images.count(d.image_id))
      throw UnknownImageId("evaluate: detection references unknown image '" +
                           d.image_id + "'");
    out.dets[d.image_id].push_back(d);
  }
  for (const Annotation& a : ds.annotations) out.anns[a.image_id].push_back(a);
  return out;
}

void add_counts(MatchResult& acc, const MatchResult& m) {
  acc.tp += m.tp;
  acc.fp += m.fp;
  acc.fn += m.fn;
}

// values of `key` among "key=value" tags
std::vector<std::string> tag_values(const Annotation& a,
                                    const std::string& key) {
  std::vector<std::string> out;
  for (const std::string& tag : a.tags) {
    const std::size_t eq = tag.find('=');
    if (eq != std::string::npos && tag.compare(0, eq, key) == 0)
      out.push_back(tag.substr(eq + 1));
  }
  return out;
}

}  // namespace

MetricsReport evaluate_detections(const Dataset& ds,
                                  std::span<const Detection> detections,
                                  double iou_threshold) {
  const PerImage by = split_by_image(ds, detections);
  MatchResult total;
  for (const auto& [id, _] : ds.images) {
    static const std::vector<Detection> no_dets;
    static const std::vector<Annotation> no_anns;
    const auto di = by.dets.find(id);
    const auto ai = by.anns.find(id);
    add_counts(total, match(di == by.dets.end() ? no_dets : di->second,
                            ai == by.anns.end() ? no_anns : ai->second,
                            iou_threshold));
  }
  return metrics(total);
}

std::vector<MetricsReport> evaluate_stratified(
    const Dataset& ds, std::span<const Detection> detections,
    double iou_threshold, const std::string& group_by) {
  const PerImage by = split_by_image(ds, detections);
  MatchResult total;
  std::map<std::string, MatchResult> strata;
  bool key_seen = false;
  for (const auto& [id, _] : ds.images) {
    static const std::vector<Detection> no_dets;
    static const std::vector<Annotation> no_anns;
    const auto di = by.dets.find(id);
    const auto ai = by.anns.find(id);
    const std::vector<Annotation>& anns =
        ai == by.anns.end() ? no_anns : ai->second;
    const MatchResult m = match(di == by.dets.end() ? no_dets : di->second,
                                anns, iou_threshold);
    add_counts(total, m);
    std::set<std::string> values;
    for (const Annotation& a : anns)
      for (const std::string& v : tag_values(a, group_by)) values.insert(v);
    if (!values.empty()) key_seen = true;
    for (const std::string& v : values) add_counts(strata[v], m);
  }
  if (!key_seen)
    throw UnknownTagKey("evaluate: no annotation carries tag key '" +
                        group_by + "'");
  std::vector<MetricsReport> out;
  for (const auto& [value, counts] : strata) {
    MetricsReport rep = metrics(counts);
    rep.stratum = value;
    out.push_back(std::move(rep));
  }
  MetricsReport rep = metrics(total);
  rep.stratum = "total";
  out.push_back(std::move(rep));
  return out;
}

std::string report_table(std::span<const MetricsReport> reports) {
  std::size_t name_w = std::string("stratum").size();
  for (const MetricsReport& r : reports)
    name_w = std::max(name_w,
                      (r.stratum.empty() ? std::string("all") : r.stratum)
                          .size());
  char line[256];
  std::string out;
  std::snprintf(line, sizeof(line), "%-*s %6s %6s %6s %9s %9s %9s\n",
                static_cast<int>(name_w), "stratum", "tp", "fp", "fn",
                "precision", "recall", "f1");
  out += line;
  for (const MetricsReport& r : reports) {
    const std::string name = r.stratum.empty() ? "all" : r.stratum;
    std::snprintf(line, sizeof(line), "%-*s %6d %6d %6d %9.3f %9.3f %9.3f\n",
                  static_cast<int>(name_w), name.c_str(), r.counts.tp,
                  r.counts.fp, r.counts.fn, r.precision, r.recall, r.f1);
    out += line;
  }
  return out;
}

std::string report_json(std::span<const MetricsReport> reports) {
  json arr = json::array();
  for (const MetricsReport& r : reports) {
    arr.push_back({{"stratum", r.stratum.empty() ? "all" : r.stratum},
                   {"tp", r.counts.tp},
                   {"fp", r.counts.fp},
                   {"fn", r.counts.fn},
                   {"precision", r.precision},
                   {"recall", r.recall},
                   {"f1", r.f1}});
  }
  return arr.dump(2) + "\n";
}

}  // namespace suppress
