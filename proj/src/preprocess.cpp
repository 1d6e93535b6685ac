#include "iris/preprocess.hpp"

#include <algorithm>
#include <cmath>

#include "iris/error.hpp"
#include "iris/ops.hpp"

namespace iris {

void PipelineConfig::validate() const {
  require(side > 0, "pipeline side must be positive");
  require(classifier_input >= 0, "classifier_input must be non-negative");
}

Tensor crop_box(const Tensor& image, const Box& box) {
  require(image.rank() == 3, "crop_box expects [C,H,W], got " + shape_str(image.shape()));
  require(box.valid(), "crop_box needs a valid box");
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x_min)));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y_min)));
  const int x1 = std::min(w, static_cast<int>(std::ceil(box.x_max)));
  const int y1 = std::min(h, static_cast<int>(std::ceil(box.y_max)));
  require(x1 > x0 && y1 > y0, "box lies outside the " + std::to_string(h) + "x" + std::to_string(w) +
                                  " image or has no area after clamping");
  Tensor out({c, y1 - y0, x1 - x0});
  std::size_t k = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) out[k++] = image[(static_cast<std::size_t>(ch) * h + y) * w + x];
  return out;
}

std::pair<int, int> fitted_extent(int h, int w, int side) {
  require(h > 0 && w > 0, "cannot fit an empty image");
  require(side > 0, "side must be positive");
  const long fit_h = std::lround(static_cast<double>(h) * side / w);
  if (fit_h <= side) return {static_cast<int>(std::max(1L, fit_h)), side};
  const long fit_w = std::lround(static_cast<double>(w) * side / h);
  return {side, static_cast<int>(std::max(1L, fit_w))};
}

Tensor resize_to_width(const Tensor& image, int side) {
  require(image.rank() == 3 && image.dim(1) > 0 && image.dim(2) > 0,
          "resize_to_width needs a non-empty [C,h,w] image, got " + shape_str(image.shape()));
  const auto [h, w] = fitted_extent(image.dim(1), image.dim(2), side);
  if (h == image.dim(1) && w == image.dim(2)) return image;
  return resize_bilinear(image, h, w);
}

Tensor zero_pad_square(const Tensor& image, int side, bool center) {
  require(image.rank() == 3, "zero_pad_square expects [C,h,w], got " + shape_str(image.shape()));
  const int c = image.dim(0), h = image.dim(1), w = image.dim(2);
  require(h <= side && w <= side, "image " + std::to_string(h) + "x" + std::to_string(w) + " does not fit in " +
                                      std::to_string(side) + "x" + std::to_string(side));
  if (h == side && w == side) return image;
  const int top = center ? (side - h) / 2 : 0;
  const int left = center ? (side - w) / 2 : 0;
  Tensor out({c, side, side}, 0.0f);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      std::copy_n(image.data().data() + (static_cast<std::size_t>(ch) * h + y) * w, w,
                  out.data().data() + (static_cast<std::size_t>(ch) * side + y + top) * side + left);
  return out;
}

Tensor grey_to_3ch(const Tensor& image) {
  require(image.rank() == 3 && image.dim(0) == 1, "grey_to_3ch expects [1,H,W], got " + shape_str(image.shape()));
  Tensor out({3, image.dim(1), image.dim(2)});
  for (int c = 0; c < 3; ++c) std::copy(image.data().begin(), image.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(c * image.size()));
  return out;
}

Tensor pixel_normalize(const Tensor& image) {
  Tensor out(image.shape());
  for (std::size_t i = 0; i < image.size(); ++i) {
    const float v = image[i];
    require(v >= 0.0f && v <= 255.0f, "pixel value " + std::to_string(v) + " outside [0,255]");
    out[i] = v / 255.0f;
  }
  return out;
}

Tensor preprocess_pipeline(const Tensor& image, const Box& box, const PipelineConfig& cfg) {
  cfg.validate();
  require(image.rank() == 3 && (image.dim(0) == 1 || image.dim(0) == 3),
          "pipeline expects a grey or RGB [C,H,W] image, got " + shape_str(image.shape()));
  Tensor t = zero_pad_square(resize_to_width(crop_box(image, box), cfg.side), cfg.side, cfg.center);
  if (t.dim(0) == 1) t = grey_to_3ch(t);
  t = pixel_normalize(t);
  if (cfg.output_size() != cfg.side) t = resize_bilinear(t, cfg.output_size(), cfg.output_size());
  return t;
}

}  // namespace iris
