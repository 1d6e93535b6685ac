#include "iris/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "iris/error.hpp"

namespace iris {

void AnchorGridConfig::validate() const {
  require(stride > 0.0, "anchor stride must be positive");
  require(base_size > 0.0, "anchor base_size must be positive");
  require(!scales.empty() && !ratios.empty(), "anchor config needs at least one scale and one ratio");
  for (double s : scales) require(s > 0.0, "anchor scales must be positive");
  for (double r : ratios) require(r > 0.0, "anchor ratios must be positive");
}

std::vector<Box> generate_anchors(int grid_h, int grid_w, const AnchorGridConfig& cfg) {
  cfg.validate();
  require(grid_h > 0 && grid_w > 0, "anchor grid extents must be positive");
  std::vector<Box> shapes;
  for (double s : cfg.scales)
    for (double r : cfg.ratios) {
      const double root = std::sqrt(r);
      shapes.push_back(Box::from_center(0.0, 0.0, cfg.base_size * s * root, cfg.base_size * s / root));
    }
  std::vector<Box> anchors;
  anchors.reserve(static_cast<std::size_t>(grid_h) * grid_w * shapes.size());
  for (int i = 0; i < grid_h; ++i)
    for (int j = 0; j < grid_w; ++j) {
      const double cx = (j + 0.5) * cfg.stride;
      const double cy = (i + 0.5) * cfg.stride;
      for (const Box& s : shapes) anchors.push_back(Box{cx + s.x_min, cy + s.y_min, cx + s.x_max, cy + s.y_max});
    }
  return anchors;
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double ih = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  const double inter = iw > 0.0 && ih > 0.0 ? iw * ih : 0.0;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

std::size_t AnchorLabels::count(AnchorLabel l) const {
  return static_cast<std::size_t>(std::count(label.begin(), label.end(), l));
}

AnchorLabels label_anchors(std::span<const Box> anchors, std::span<const Box> gt_boxes, double pos_thresh,
                           double neg_thresh) {
  require(!anchors.empty(), "label_anchors on an empty anchor list");
  require(0.0 <= neg_thresh && neg_thresh <= pos_thresh && pos_thresh <= 1.0,
          "label_anchors needs 0 <= neg_thresh <= pos_thresh <= 1");
  AnchorLabels out;
  out.label.assign(anchors.size(), AnchorLabel::Negative);
  out.matched_gt.assign(anchors.size(), -1);
  if (gt_boxes.empty()) return out;

  for (std::size_t a = 0; a < anchors.size(); ++a) {
    double best = -1.0;
    int arg = -1;
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
      const double v = iou(anchors[a], gt_boxes[g]);
      if (v > best) {
        best = v;
        arg = static_cast<int>(g);
      }
    }
    if (best >= pos_thresh) {
      out.label[a] = AnchorLabel::Positive;
      out.matched_gt[a] = arg;
    } else if (best >= neg_thresh) {
      out.label[a] = AnchorLabel::Ignore;
    }
  }
  // Forced matches: each ground truth claims its best anchor not already claimed by an earlier one.
  std::vector<bool> claimed(anchors.size(), false);
  for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
    double best = -1.0;
    std::size_t arg = anchors.size();
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      if (claimed[a]) continue;
      const double v = iou(anchors[a], gt_boxes[g]);
      if (v > best) {
        best = v;
        arg = a;
      }
    }
    if (arg == anchors.size()) break;
    claimed[arg] = true;
    out.label[arg] = AnchorLabel::Positive;
    out.matched_gt[arg] = static_cast<int>(g);
  }
  return out;
}

Delta4 encode_deltas(const Box& anchor, const Box& gt) {
  const double aw = anchor.width(), ah = anchor.height();
  require(aw > 0.0 && ah > 0.0, "encode_deltas needs an anchor with positive extent");
  require(gt.width() > 0.0 && gt.height() > 0.0, "encode_deltas needs a ground truth with positive extent");
  return Delta4{(gt.cx() - anchor.cx()) / aw, (gt.cy() - anchor.cy()) / ah, std::log(gt.width() / aw),
                std::log(gt.height() / ah)};
}

Box decode_deltas(const Box& anchor, const Delta4& d) {
  const double aw = anchor.width(), ah = anchor.height();
  require(aw > 0.0 && ah > 0.0, "decode_deltas needs an anchor with positive extent");
  const double cx = anchor.cx() + d.dx * aw;
  const double cy = anchor.cy() + d.dy * ah;
  return Box::from_center(cx, cy, aw * std::exp(d.dw), ah * std::exp(d.dh));
}

std::vector<Detection> nms(std::vector<Detection> detections, double iou_thresh) {
  std::vector<std::size_t> order(detections.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detections[a].objectness > detections[b].objectness;
  });
  std::vector<bool> dropped(detections.size(), false);
  std::vector<Detection> kept;
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (dropped[i]) continue;
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!dropped[j] && iou(detections[i].box, detections[j].box) > iou_thresh) dropped[j] = true;
    }
    kept.push_back(std::move(detections[i]));
  }
  return kept;
}

Box clip_box(const Box& b, double width, double height) {
  return Box{std::clamp(b.x_min, 0.0, width), std::clamp(b.y_min, 0.0, height), std::clamp(b.x_max, 0.0, width),
             std::clamp(b.y_max, 0.0, height)};
}

}  // namespace iris
