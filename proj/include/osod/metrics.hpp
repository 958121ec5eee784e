#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <vector>

#include "osod/geometry.hpp"

namespace osod {

/// Label value marking the unknown class in detections and ground truth.
inline constexpr int kUnknownLabel = -1;

struct Detection {
  int image_id = 0;
  int label = 0;  // known-class index, or kUnknownLabel
  double score = 0.0;
  Box box;
  // Optional (k+1)-way class distribution (last slot = unknown/background);
  // empty means absent. Required for entropy thresholding.
  std::vector<double> class_probs;
};

struct GroundTruthObject {
  int image_id = 0;
  int label = 0;  // known-class index, or kUnknownLabel
  Box box;
};

struct EvalReport {
  std::map<int, double> per_class_ap;  // known classes with >= 1 GT
  double map_k = 0.0;
  double ap_u = 0.0;
  double wi = 0.0;
  long long aose = 0;
  double hmp = 0.0;
  bool unknown_gt_present = false;
};

struct EvalOptions {
  double iou_thresh = 0.5;
  double recall_level = 0.8;
  std::optional<double> entropy_threshold;  // nullopt = no post-processing
};

/// Thrown when a metric has no defined value on the given inputs (e.g. the
/// recall level is unreachable for every class).
class undefined_result : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Shannon entropy −Σ p ln p (natural log, 0·ln 0 := 0) of a probability
/// vector; validates non-negative entries summing to 1 ± 1e-6.
double shannon_entropy(const std::vector<double>& probs);

/// Relabels every detection whose class-probability entropy exceeds
/// `threshold` to kUnknownLabel, preserving its score. Every detection must
/// carry class_probs.
std::vector<Detection> entropy_threshold(const std::vector<Detection>& dets,
                                         double threshold);

/// Greedy matching outcome for the detections of one class.
struct ClassMatches {
  std::vector<std::size_t> det_order;      // indices into dets, score-descending
  std::vector<bool> is_tp;                 // parallel to det_order
  std::vector<std::ptrdiff_t> matched_gt;  // index into gts, or -1
  std::size_t gt_count = 0;                // GTs of the class
};

/// PASCAL-style greedy matching: detections of `cls` sorted by descending
/// score (stable), each matched to the highest-IoU still-unmatched GT of the
/// class in its image; TP iff that IoU >= iou_thresh; each GT matched at most
/// once. Equal IoUs resolve to the lowest GT index.
ClassMatches match_class(const std::vector<Detection>& dets,
                         const std::vector<GroundTruthObject>& gts, int cls,
                         double iou_thresh = 0.5);

/// Area under the precision–recall curve with monotone (all-points)
/// interpolation, in percent. nullopt when the class has no GT instances.
std::optional<double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<GroundTruthObject>& gts,
                                        int cls, double iou_thresh = 0.5);

/// Mean AP over known classes with at least one GT; 0 when there are none.
double map_known(const std::vector<Detection>& dets,
                 const std::vector<GroundTruthObject>& gts,
                 double iou_thresh = 0.5);

/// AP of the unknown label against unknown GTs; 0 by convention when no
/// unknown GT is present. Known-class detections never count as unknown FPs
/// and vice versa.
double ap_unknown(const std::vector<Detection>& dets,
                  const std::vector<GroundTruthObject>& gts,
                  double iou_thresh = 0.5);

/// Wilderness impact at the given recall level. Per known class, the ranked
/// detection list is swept to the first point where recall >= recall_level;
/// there P_k = TP/(TP+FP_k) and P_{k∪u} = TP/(TP+FP_k+FP_u) are recorded,
/// where FP_u counts false positives whose best-matching GT in their image is
/// UNKNOWN at IoU >= 0.5. WI = (mean P_k / mean P_{k∪u} − 1) × 100. Classes
/// that never reach the recall level are excluded; throws undefined_result
/// when every class is excluded. Matching uses IoU 0.5.
double wilderness_impact(const std::vector<Detection>& dets,
                         const std::vector<GroundTruthObject>& gts,
                         double recall_level = 0.8);

/// Absolute open-set error: the number of UNKNOWN GT objects matched
/// (IoU >= 0.5, greedy by descending score, each GT at most once) by
/// known-labeled detections with score >= 0.05.
long long aose(const std::vector<Detection>& dets,
               const std::vector<GroundTruthObject>& gts);

/// Harmonic mean 2ab/(a+b) of mAP_k and AP_u; 0 when both are 0.
double hmp(double map_k, double ap_u);

/// Full open-set evaluation: optional entropy thresholding, then per-class
/// AP, mAP_k, AP_u, WI (0 when undefined), AOSE and HMP.
EvalReport evaluate(const std::vector<Detection>& dets,
                    const std::vector<GroundTruthObject>& gts,
                    const EvalOptions& options = {});

}  // namespace osod
