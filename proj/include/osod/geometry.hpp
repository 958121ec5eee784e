#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>

namespace osod {

/// Axis-aligned box in corner form (x1,y1,x2,y2), x2 > x1 and y2 > y1.
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
           std::isfinite(y2) && x2 > x1 && y2 > y1;
  }
};

/// The same box in center-size form (cx,cy,w,h), w > 0 and h > 0.
struct CenterBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool valid() const {
    return std::isfinite(cx) && std::isfinite(cy) && std::isfinite(w) &&
           std::isfinite(h) && w > 0.0 && h > 0.0;
  }
};

/// Dimensionless center/size offsets between a ground-truth box and a proposal.
struct BoxDeltas {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

inline CenterBox to_center(const Box& b) {
  if (!b.valid()) throw std::invalid_argument("to_center: degenerate box");
  return {(b.x1 + b.x2) / 2.0, (b.y1 + b.y2) / 2.0, b.x2 - b.x1, b.y2 - b.y1};
}

inline Box to_corner(const CenterBox& c) {
  if (!c.valid()) throw std::invalid_argument("to_corner: degenerate box");
  return {c.cx - c.w / 2.0, c.cy - c.h / 2.0, c.cx + c.w / 2.0, c.cy + c.h / 2.0};
}

inline double iou(const Box& a, const Box& b) {
  if (!a.valid() || !b.valid()) throw std::invalid_argument("iou: degenerate box");
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

/// Center offsets normalized by the proposal extents, log-ratio size offsets.
inline BoxDeltas box_deltas(const CenterBox& gt, const CenterBox& p) {
  if (!gt.valid() || !p.valid())
    throw std::invalid_argument("box_deltas: degenerate box");
  return {(gt.cx - p.cx) / p.w, (gt.cy - p.cy) / p.h, std::log(gt.w / p.w),
          std::log(gt.h / p.h)};
}

/// Centerness target in [0,1] from box deltas. Proposals with any negative
/// delta are filtered (absent). Both min/max ratios are eps-smoothed so a
/// perfectly aligned proposal (all deltas zero) scores exactly 1.
inline std::optional<double> centerness_target(const BoxDeltas& d,
                                               double eps = 1e-8) {
  if (!(eps > 0.0)) throw std::invalid_argument("centerness_target: eps <= 0");
  if (d.dx < 0.0 || d.dy < 0.0 || d.dw < 0.0 || d.dh < 0.0) return std::nullopt;
  const double center_ratio =
      (std::min(d.dx, d.dy) + eps) / (std::max(d.dx, d.dy) + eps);
  const double size_ratio =
      (std::min(d.dw, d.dh) + eps) / (std::max(d.dw, d.dh) + eps);
  return std::clamp(std::sqrt(center_ratio * size_ratio), 0.0, 1.0);
}

}  // namespace osod
