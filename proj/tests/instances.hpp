// Deterministic randomized annotation instances for oracle-equivalence
// checks: small scenes with deliberately coarse box grids so IoU ties,
// duplicate scores, sub-floor scores, and unknown/known mixtures all occur.
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "osod/metrics.hpp"

namespace testutil {

struct Instance {
  std::vector<osod::Detection> dets;
  std::vector<osod::GroundTruthObject> gts;
  osod::EvalOptions options;
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : rng_(seed) {}
  std::uint64_t raw() { return rng_(); }
  int below(int n) { return static_cast<int>(rng_() % static_cast<std::uint64_t>(n)); }
  double u01() { return (rng_() >> 11) * 0x1.0p-53; }

 private:
  std::mt19937_64 rng_;
};

inline osod::Box coarse_box(Rng& r) {
  // 4-unit grid on a 20x20 canvas: overlaps and exact IoU ties are common.
  const double x = 4.0 * r.below(4);
  const double y = 4.0 * r.below(4);
  const double w = 4.0 * (1 + r.below(2));
  const double h = 4.0 * (1 + r.below(2));
  return {x, y, x + w, y + h};
}

inline Instance random_instance(std::uint64_t seed) {
  Rng r(seed);
  Instance inst;
  const int images = 1 + r.below(5);
  const int known_classes = 1 + r.below(3);
  const bool with_probs = r.below(2) == 0;

  const int n_gts = r.below(11);
  for (int i = 0; i < n_gts; ++i) {
    osod::GroundTruthObject g;
    g.image_id = r.below(images);
    g.label = r.below(4) == 0 ? osod::kUnknownLabel : r.below(known_classes);
    g.box = coarse_box(r);
    inst.gts.push_back(g);
  }

  const int n_dets = r.below(9);
  for (int i = 0; i < n_dets; ++i) {
    osod::Detection d;
    d.image_id = r.below(images);
    d.label = r.below(5) == 0 ? osod::kUnknownLabel : r.below(known_classes);
    // Discrete score grid: duplicate scores and the 0.05 floor both occur.
    d.score = 0.01 * (1 + r.below(100));
    d.box = coarse_box(r);
    if (with_probs) {
      std::vector<double> p(static_cast<std::size_t>(known_classes) + 1);
      double sum = 0.0;
      for (double& v : p) {
        v = 0.05 + r.u01();
        sum += v;
      }
      for (double& v : p) v /= sum;
      d.class_probs = p;
    }
    inst.dets.push_back(d);
  }

  inst.options.iou_thresh = (r.below(2) == 0) ? 0.5 : 0.25;
  inst.options.recall_level = (r.below(2) == 0) ? 0.8 : 0.5;
  if (with_probs && r.below(2) == 0) {
    inst.options.entropy_threshold = 0.5 + r.u01();
  }
  return inst;
}

}  // namespace testutil
