#include "iris/classifier.hpp"

#include <cmath>
#include <string>

#include "iris/error.hpp"
#include "iris/ops.hpp"
#include "iris/rng.hpp"

namespace iris {

namespace {

std::string block_name(std::size_t i) { return "block." + std::to_string(i); }

void check_stack(const std::vector<std::vector<int>>& stack) {
  require(!stack.empty(), "pool stack must have at least one stage");
  bool flat = false;
  for (const auto& s : stack) {
    require(s.size() == 1 || s.size() == 2, "pool stage must have one or two out sizes");
    for (int v : s) require(v > 0, "pool out sizes must be positive");
    if (s.size() == 1) flat = true;
    require(!(flat && s.size() == 2), "2-D pool stages must precede 1-D stages");
  }
}

}  // namespace

int ClassifierConfig::feature_extent() const {
  int e = input_size;
  for (std::size_t i = 0; i < widths.size(); ++i) e = conv_out_extent(e, 3, 2, PadMode::Same);
  return e;
}

int ClassifierConfig::feature_width() const {
  const auto& last = pool_stack.back();
  return widths.back() * (last.size() == 1 ? last[0] : last[0] * last[1]);
}

void ClassifierConfig::validate() const {
  require(num_classes >= 2, "classifier needs at least 2 classes, got " + std::to_string(num_classes));
  require(input_size > 0, "classifier input_size must be positive");
  require(!widths.empty(), "classifier needs at least one backbone block");
  for (int w : widths) require(w > 0, "backbone widths must be positive");
  check_stack(pool_stack);
  const auto& first = pool_stack.front();
  const int e = feature_extent();
  require(first.size() == 1 || (first[0] <= e && first[1] <= e),
          "backbone output " + std::to_string(e) + "x" + std::to_string(e) + " is smaller than the first pool stage");
}

ParamSet build_classifier(const ClassifierConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, {0xc1a5}));
  ParamSet ps;
  auto uniform = [&](Shape shape, int fan_in) {
    const double bound = std::sqrt(6.0 / fan_in);
    Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-bound, bound));
    return t;
  };
  int cin = 3;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i) {
    const int w = cfg.widths[i];
    ps.add(block_name(i) + ".weight", uniform({w, cin, 3, 3}, cin * 9));
    ps.add(block_name(i) + ".bias", Tensor({w}));
    cin = w;
  }
  const int f = cfg.feature_width();
  ps.add("fc.weight", uniform({cfg.num_classes, f}, f));
  ps.add("fc.bias", Tensor({cfg.num_classes}));
  return ps;
}

Var stacked_pool(Tape& tape, Var features, const std::vector<std::vector<int>>& stack) {
  check_stack(stack);
  const Tensor& x = tape.value(features);
  require(x.rank() == 4, "stacked_pool expects [N,C,H,W], got " + shape_str(x.shape()));
  const int n = x.dim(0), c = x.dim(1);
  Var v = features;
  for (const auto& s : stack) {
    const Tensor& cur = tape.value(v);
    if (s.size() == 2) {
      require(s[0] <= cur.dim(-2) && s[1] <= cur.dim(-1),
              "stacked_pool stage " + shape_str({s[0], s[1]}) + " exceeds input " + shape_str(cur.shape()));
      v = adaptive_avg_pool2d(tape, v, s[0], s[1]);
    } else {
      if (cur.rank() == 4) v = reshape(tape, v, {n, c, cur.dim(2) * cur.dim(3)});
      v = adaptive_avg_pool1d(tape, v, s[0]);
    }
  }
  const Tensor& out = tape.value(v);
  return reshape(tape, v, {n, static_cast<int>(out.size()) / n});
}

Var classifier_forward(Tape& tape, ParamSet& params, const ClassifierConfig& cfg, Var batch) {
  const Tensor& x = tape.value(batch);
  require(x.rank() == 4 && x.dim(1) == 3 && x.dim(2) == cfg.input_size && x.dim(3) == cfg.input_size,
          "classifier expects [N,3," + std::to_string(cfg.input_size) + "," + std::to_string(cfg.input_size) +
              "], got " + shape_str(x.shape()));
  Var v = batch;
  for (std::size_t i = 0; i < cfg.widths.size(); ++i)
    v = relu(tape, conv2d(tape, v, tape.param(params.get(block_name(i) + ".weight")),
                          tape.param(params.get(block_name(i) + ".bias")), 2, PadMode::Same));
  v = stacked_pool(tape, v, cfg.pool_stack);
  return linear(tape, v, tape.param(params.get("fc.weight")), tape.param(params.get("fc.bias")));
}

Prediction predict_from_logits(std::span<const float> logits) {
  require(!logits.empty(), "predict needs at least one logit");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  double denom = 0.0;
  for (float l : logits) denom += std::exp(static_cast<double>(l) - logits[best]);
  return Prediction{static_cast<int>(best), 1.0 / denom};
}

Prediction predict(const Tensor& image, ParamSet& params, const ClassifierConfig& cfg) {
  require(image.rank() == 3, "predict expects [3,S,S], got " + shape_str(image.shape()));
  Tape tape(false);
  const Var logits = classifier_forward(tape, params, cfg, tape.constant(image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)})));
  return predict_from_logits(tape.value(logits).data());
}

}  // namespace iris
