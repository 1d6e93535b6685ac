#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "iris/autograd.hpp"
#include "iris/tensor.hpp"

namespace iris {

enum class PadMode { Valid, Same };

// Output extent of a convolution along one axis.
int conv_out_extent(int in, int kernel, int stride, PadMode pad);

// Half-open input window [begin, end) feeding adaptive-pool output cell `i`.
struct PoolWindow {
  int begin;
  int end;
};
PoolWindow adaptive_window(int i, int in, int out);

// Cross-correlation. input [N,Cin,H,W], kernel [Cout,Cin,kh,kw], bias [Cout].
// SAME pads with zeros so that out = ceil(in / stride), extra padding at the bottom/right.
Var conv2d(Tape& tape, Var input, Var kernel, Var bias, int stride, PadMode pad);

// Mean over adaptive windows of the last two axes.
Var adaptive_avg_pool2d(Tape& tape, Var input, int out_h, int out_w);
// Mean over adaptive windows of the last axis.
Var adaptive_avg_pool1d(Tape& tape, Var input, int out_len);

// input [N,F], weight [C,F], bias [C] -> [N,C]. Identity activation.
Var linear(Tape& tape, Var input, Var weight, Var bias);

// Gradient at exactly 0 is 0.
Var relu(Tape& tape, Var input);

// Row-wise over [N,C].
Var log_softmax(Tape& tape, Var logits);

// Mean negative log-likelihood of log_softmax(logits) at the target indices. Returns shape [1].
Var cross_entropy(Tape& tape, Var logits, std::span<const int> targets);

// Mean Huber loss; gradient flows to `pred` only.
Var smooth_l1(Tape& tape, Var pred, const Tensor& target, float beta = 1.0f);

// Mean per-element sigmoid cross entropy in log-sum-exp form. Targets in [0,1].
Var binary_cross_entropy_with_logits(Tape& tape, Var logits, const Tensor& targets);

Var add(Tape& tape, Var a, Var b);
Var scale(Tape& tape, Var a, float factor);
Var reshape(Tape& tape, Var input, Shape shape);

// out[i] = input[flat_index[i]]; backward scatter-adds.
Var gather(Tape& tape, Var input, std::vector<std::size_t> flat_index, Shape out_shape);

// input [N,C,H,W] -> [1,C,y1-y0,x1-x0] taken from sample n.
Var crop2d(Tape& tape, Var input, int n, int y0, int y1, int x0, int x1);

// Bilinear resampling of the last two axes with half-pixel centers.
Var resize_bilinear(Tape& tape, Var input, int out_h, int out_w);

// Tape-free kernels shared with the preprocessing stage.
Tensor resize_bilinear(const Tensor& input, int out_h, int out_w);
Tensor softmax_rows(const Tensor& logits);
float sigmoid(float x);

}  // namespace iris
