#pragma once

#include <utility>

#include "iris/geometry.hpp"
#include "iris/tensor.hpp"

namespace iris {

struct PipelineConfig {
  int side = 299;
  // Final square size fed to the classifier; 0 keeps `side`.
  int classifier_input = 0;
  // Place the crop in the middle of the square instead of the top-left corner.
  bool center = false;

  int output_size() const { return classifier_input > 0 ? classifier_input : side; }
  void validate() const;
};

// Integer crop of the box clamped to the image: floor of the minimum, ceil of the maximum.
Tensor crop_box(const Tensor& image, const Box& box);

// (h', w') after fitting an h x w crop to width `side`, or to height `side` when it would be too tall.
std::pair<int, int> fitted_extent(int h, int w, int side);

Tensor resize_to_width(const Tensor& image, int side);

// Pads with exact zeros up to side x side. The image sits top-left unless `center`.
Tensor zero_pad_square(const Tensor& image, int side, bool center = false);

Tensor grey_to_3ch(const Tensor& image);

// [0,255] -> [0,1].
Tensor pixel_normalize(const Tensor& image);

// crop -> fit width -> zero pad -> grey stacking -> [0,1] -> optional downsample. Returns [3,S,S].
Tensor preprocess_pipeline(const Tensor& image, const Box& box, const PipelineConfig& cfg);

}  // namespace iris
