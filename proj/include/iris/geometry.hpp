#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "iris/tensor.hpp"

namespace iris {

/// Axis-aligned rectangle in pixel coordinates; (x_max, y_max) is the far edge.
struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x_min + x_max); }
  double cy() const { return 0.5 * (y_min + y_max); }
  bool valid() const { return x_min <= x_max && y_min <= y_max; }

  static Box from_center(double cx, double cy, double w, double h) {
    return Box{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }
  friend bool operator==(const Box&, const Box&) = default;
};

struct AnchorGridConfig {
  double stride = 16.0;
  std::vector<double> scales{1.0, 2.0, 4.0};
  std::vector<double> ratios{0.5, 1.0, 2.0};
  double base_size = 16.0;

  int anchors_per_cell() const { return static_cast<int>(scales.size() * ratios.size()); }
  void validate() const;
};

// Row-major over cells, then scale-major, then ratio-major within a cell.
// Width = base*scale*sqrt(ratio), height = base*scale/sqrt(ratio).
std::vector<Box> generate_anchors(int grid_h, int grid_w, const AnchorGridConfig& cfg);

double iou(const Box& a, const Box& b);

enum class AnchorLabel : std::int8_t { Negative = 0, Positive = 1, Ignore = -1 };

struct AnchorLabels {
  std::vector<AnchorLabel> label;
  // Index of the matched ground truth for positives, -1 otherwise.
  std::vector<int> matched_gt;

  std::size_t count(AnchorLabel l) const;
};

// Positive at max IoU >= pos_thresh, negative below neg_thresh, ignored otherwise.
// The best anchor of every ground truth is forced positive.
AnchorLabels label_anchors(std::span<const Box> anchors, std::span<const Box> gt_boxes, double pos_thresh,
                           double neg_thresh);

/// Center/size regression target of a box relative to an anchor.
struct Delta4 {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;
};

Delta4 encode_deltas(const Box& anchor, const Box& gt);
Box decode_deltas(const Box& anchor, const Delta4& d);

struct Detection {
  Box box;
  double objectness = 0.0;
  // M x M probabilities, when a mask branch ran.
  std::optional<Tensor> mask;
};

// Greedy suppression. Survivors keep descending-score order; equal scores keep input order.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_thresh);

Box clip_box(const Box& b, double width, double height);

}  // namespace iris
