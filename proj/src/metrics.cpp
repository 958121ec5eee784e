#include "osod/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

namespace osod {

namespace {

// Indices of the detections labeled `cls`, stable-sorted by descending score
// (ties keep input order).
std::vector<std::size_t> ranked_indices(const std::vector<Detection>& dets, int cls) {
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].label == cls) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });
  return order;
}

std::map<int, std::vector<std::size_t>> group_by_image(
    const std::vector<GroundTruthObject>& gts, std::optional<int> only_label) {
  std::map<int, std::vector<std::size_t>> by_image;
  for (std::size_t j = 0; j < gts.size(); ++j) {
    if (only_label && gts[j].label != *only_label) continue;
    by_image[gts[j].image_id].push_back(j);
  }
  return by_image;
}

// Highest-IoU candidate among `candidates`, skipping used ones when `used` is
// given; equal IoUs resolve to the first (lowest-index) candidate.
std::pair<std::ptrdiff_t, double> best_match(
    const Box& box, const std::vector<GroundTruthObject>& gts,
    const std::vector<std::size_t>& candidates, const std::vector<bool>* used) {
  std::ptrdiff_t best = -1;
  double best_iou = 0.0;
  for (std::size_t j : candidates) {
    if (used && (*used)[j]) continue;
    const double v = iou(box, gts[j].box);
    if (v > best_iou) {
      best_iou = v;
      best = static_cast<std::ptrdiff_t>(j);
    }
  }
  return {best, best_iou};
}

void check_annotations(const std::vector<Detection>& dets,
                       const std::vector<GroundTruthObject>& gts) {
  for (const Detection& d : dets) {
    if (!(d.score >= 0.0 && d.score <= 1.0)) {
      throw std::invalid_argument("detection score must be in [0,1]");
    }
    if (d.label < kUnknownLabel) {
      throw std::invalid_argument("detection label out of range");
    }
    if (!d.box.valid()) throw std::invalid_argument("detection box is degenerate");
    if (!d.class_probs.empty()) shannon_entropy(d.class_probs);  // validates
  }
  for (const GroundTruthObject& g : gts) {
    if (g.label < kUnknownLabel) {
      throw std::invalid_argument("ground-truth label out of range");
    }
    if (!g.box.valid()) throw std::invalid_argument("ground-truth box is degenerate");
  }
}

}  // namespace

double shannon_entropy(const std::vector<double>& probs) {
  if (probs.empty()) throw std::invalid_argument("probability vector is empty");
  double sum = 0.0;
  double h = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) {
      throw std::invalid_argument("probabilities must be non-negative");
    }
    sum += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw std::invalid_argument("probabilities must sum to 1");
  }
  return h;
}

std::vector<Detection> entropy_threshold(const std::vector<Detection>& dets,
                                         double threshold) {
  if (std::isnan(threshold)) throw std::invalid_argument("threshold must not be NaN");
  std::vector<Detection> out = dets;
  for (Detection& d : out) {
    if (d.class_probs.empty()) {
      throw std::invalid_argument("entropy thresholding requires class_probs on every detection");
    }
    if (shannon_entropy(d.class_probs) > threshold) d.label = kUnknownLabel;
  }
  return out;
}

ClassMatches match_class(const std::vector<Detection>& dets,
                         const std::vector<GroundTruthObject>& gts, int cls,
                         double iou_thresh) {
  if (!(iou_thresh > 0.0 && iou_thresh <= 1.0)) {
    throw std::invalid_argument("iou_thresh must be in (0,1]");
  }
  ClassMatches out;
  out.det_order = ranked_indices(dets, cls);
  const auto gt_by_image = group_by_image(gts, cls);
  for (const auto& [image_id, rows] : gt_by_image) out.gt_count += rows.size();

  std::vector<bool> used(gts.size(), false);
  static const std::vector<std::size_t> kNone;
  out.is_tp.reserve(out.det_order.size());
  out.matched_gt.reserve(out.det_order.size());
  for (std::size_t di : out.det_order) {
    auto it = gt_by_image.find(dets[di].image_id);
    const auto& candidates = (it == gt_by_image.end()) ? kNone : it->second;
    const auto [best, best_iou] = best_match(dets[di].box, gts, candidates, &used);
    if (best >= 0 && best_iou >= iou_thresh) {
      used[static_cast<std::size_t>(best)] = true;
      out.is_tp.push_back(true);
      out.matched_gt.push_back(best);
    } else {
      out.is_tp.push_back(false);
      out.matched_gt.push_back(-1);
    }
  }
  return out;
}

std::optional<double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<GroundTruthObject>& gts,
                                        int cls, double iou_thresh) {
  const ClassMatches m = match_class(dets, gts, cls, iou_thresh);
  if (m.gt_count == 0) return std::nullopt;
  const std::size_t n = m.det_order.size();
  if (n == 0) return 0.0;

  std::vector<double> precision(n);
  std::vector<double> recall(n);
  double tp = 0.0;
  double fp = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    (m.is_tp[i] ? tp : fp) += 1.0;
    precision[i] = tp / (tp + fp);
    recall[i] = tp / static_cast<double>(m.gt_count);
  }
  // Monotone (all-points) interpolation: precision at each rank becomes the
  // maximum precision at any rank at or beyond it.
  for (std::size_t i = n - 1; i-- > 0;) {
    precision[i] = std::max(precision[i], precision[i + 1]);
  }
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (recall[i] > prev_recall) {
      ap += (recall[i] - prev_recall) * precision[i];
      prev_recall = recall[i];
    }
  }
  return ap * 100.0;
}

double map_known(const std::vector<Detection>& dets,
                 const std::vector<GroundTruthObject>& gts, double iou_thresh) {
  std::set<int> classes;
  for (const GroundTruthObject& g : gts) {
    if (g.label != kUnknownLabel) classes.insert(g.label);
  }
  if (classes.empty()) return 0.0;
  double sum = 0.0;
  for (int cls : classes) {
    sum += *average_precision(dets, gts, cls, iou_thresh);
  }
  return sum / static_cast<double>(classes.size());
}

double ap_unknown(const std::vector<Detection>& dets,
                  const std::vector<GroundTruthObject>& gts, double iou_thresh) {
  const bool present = std::any_of(gts.begin(), gts.end(), [](const GroundTruthObject& g) {
    return g.label == kUnknownLabel;
  });
  if (!present) return 0.0;
  return *average_precision(dets, gts, kUnknownLabel, iou_thresh);
}

double wilderness_impact(const std::vector<Detection>& dets,
                         const std::vector<GroundTruthObject>& gts,
                         double recall_level) {
  if (!(recall_level > 0.0 && recall_level <= 1.0)) {
    throw std::invalid_argument("recall_level must be in (0,1]");
  }
  std::set<int> classes;
  for (const GroundTruthObject& g : gts) {
    if (g.label != kUnknownLabel) classes.insert(g.label);
  }
  const auto all_by_image = group_by_image(gts, std::nullopt);
  static const std::vector<std::size_t> kNone;

  double sum_pk = 0.0;
  double sum_pku = 0.0;
  std::size_t included = 0;
  for (int cls : classes) {
    const ClassMatches m = match_class(dets, gts, cls, 0.5);
    double tp = 0.0;
    double fp_k = 0.0;
    double fp_u = 0.0;
    for (std::size_t i = 0; i < m.det_order.size(); ++i) {
      if (m.is_tp[i]) {
        tp += 1.0;
      } else {
        const Detection& d = dets[m.det_order[i]];
        auto it = all_by_image.find(d.image_id);
        const auto& candidates = (it == all_by_image.end()) ? kNone : it->second;
        const auto [best, best_iou] = best_match(d.box, gts, candidates, nullptr);
        const bool unknown_hit = best >= 0 &&
                                 gts[static_cast<std::size_t>(best)].label == kUnknownLabel &&
                                 best_iou >= 0.5;
        (unknown_hit ? fp_u : fp_k) += 1.0;
      }
      if (tp / static_cast<double>(m.gt_count) >= recall_level) {
        sum_pk += tp / (tp + fp_k);
        sum_pku += tp / (tp + fp_k + fp_u);
        ++included;
        break;
      }
    }
  }
  if (included == 0) {
    throw undefined_result("recall level unreachable for every known class");
  }
  const double mean_pk = sum_pk / static_cast<double>(included);
  const double mean_pku = sum_pku / static_cast<double>(included);
  return (mean_pk / mean_pku - 1.0) * 100.0;
}

long long aose(const std::vector<Detection>& dets,
               const std::vector<GroundTruthObject>& gts) {
  const auto unknown_by_image = group_by_image(gts, std::optional<int>(kUnknownLabel));
  if (unknown_by_image.empty()) return 0;

  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].label != kUnknownLabel && dets[i].score >= 0.05) order.push_back(i);
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dets[a].score > dets[b].score;
  });

  std::vector<bool> used(gts.size(), false);
  static const std::vector<std::size_t> kNone;
  long long count = 0;
  for (std::size_t di : order) {
    auto it = unknown_by_image.find(dets[di].image_id);
    const auto& candidates = (it == unknown_by_image.end()) ? kNone : it->second;
    const auto [best, best_iou] = best_match(dets[di].box, gts, candidates, &used);
    if (best >= 0 && best_iou >= 0.5) {
      used[static_cast<std::size_t>(best)] = true;
      ++count;
    }
  }
  return count;
}

double hmp(double map_k, double ap_u) {
  if (!(map_k >= 0.0) || !(ap_u >= 0.0)) {
    throw std::invalid_argument("hmp arguments must be non-negative");
  }
  if (map_k == 0.0 && ap_u == 0.0) return 0.0;
  return 2.0 * map_k * ap_u / (map_k + ap_u);
}

EvalReport evaluate(const std::vector<Detection>& dets,
                    const std::vector<GroundTruthObject>& gts,
                    const EvalOptions& options) {
  if (!(options.iou_thresh > 0.0 && options.iou_thresh <= 1.0)) {
    throw std::invalid_argument("iou_thresh must be in (0,1]");
  }
  if (!(options.recall_level > 0.0 && options.recall_level <= 1.0)) {
    throw std::invalid_argument("recall_level must be in (0,1]");
  }
  check_annotations(dets, gts);

  const std::vector<Detection> work =
      options.entropy_threshold ? entropy_threshold(dets, *options.entropy_threshold)
                                : dets;

  EvalReport report;
  std::set<int> classes;
  for (const GroundTruthObject& g : gts) {
    if (g.label == kUnknownLabel) {
      report.unknown_gt_present = true;
    } else {
      classes.insert(g.label);
    }
  }
  for (int cls : classes) {
    report.per_class_ap[cls] = *average_precision(work, gts, cls, options.iou_thresh);
  }
  if (!report.per_class_ap.empty()) {
    double sum = 0.0;
    for (const auto& [cls, ap] : report.per_class_ap) sum += ap;
    report.map_k = sum / static_cast<double>(report.per_class_ap.size());
  }
  report.ap_u = ap_unknown(work, gts, options.iou_thresh);
  try {
    report.wi = wilderness_impact(work, gts, options.recall_level);
  } catch (const undefined_result&) {
    report.wi = 0.0;
  }
  report.aose = aose(work, gts);
  report.hmp = hmp(report.map_k, report.ap_u);
  return report;
}

}  // namespace osod
