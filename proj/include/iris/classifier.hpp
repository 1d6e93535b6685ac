#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "iris/autograd.hpp"
#include "iris/params.hpp"

namespace iris {

struct ClassifierConfig {
  int num_classes = 79;
  int input_size = 299;
  // One stride-2 3x3 conv + relu block per entry.
  std::vector<int> widths{16, 32, 64, 128};
  // Two-element stages pool the spatial map; one-element stages pool the flattened per-channel signal.
  std::vector<std::vector<int>> pool_stack{{3, 3}, {2, 2}, {1}};

  // Spatial extent after the backbone.
  int feature_extent() const;
  // Width of the vector fed to the linear layer.
  int feature_width() const;
  void validate() const;
};

// He-style fan-in uniform weights, zero biases.
ParamSet build_classifier(const ClassifierConfig& cfg, std::uint64_t seed);

// features [N,Cf,H,W] -> [N, Cf * final length].
Var stacked_pool(Tape& tape, Var features, const std::vector<std::vector<int>>& stack);

// batch [N,3,S,S] -> logits [N,C].
Var classifier_forward(Tape& tape, ParamSet& params, const ClassifierConfig& cfg, Var batch);

struct Prediction {
  int label = 0;
  double confidence = 0.0;
};

// Argmax with ties to the lowest index; confidence is the softmax probability of that class.
Prediction predict_from_logits(std::span<const float> logits);
// image [3,S,S].
Prediction predict(const Tensor& image, ParamSet& params, const ClassifierConfig& cfg);

}  // namespace iris
