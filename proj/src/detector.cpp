#include "iris/detector.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "iris/error.hpp"
#include "iris/image_io.hpp"
#include "iris/ops.hpp"

namespace iris {

namespace {

// Keeps exp() of a regressed log-size finite on badly trained heads.
constexpr double kMaxLogScale = 4.135166556742356;  // log(1000 / 16)

std::string block_name(std::size_t b, int k) { return "backbone." + std::to_string(b) + "." + std::to_string(k); }

void add_conv(ParamSet& ps, const std::string& name, int cout, int cin, int k, Rng& rng) {
  const double bound = std::sqrt(6.0 / (cin * k * k));
  Tensor w({cout, cin, k, k});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(rng.uniform(-bound, bound));
  ps.add(name + ".weight", std::move(w));
  ps.add(name + ".bias", Tensor({cout}));
}

Var conv(Tape& tape, ParamSet& ps, const std::string& name, Var x, int stride) {
  return conv2d(tape, x, tape.param(ps.get(name + ".weight")), tape.param(ps.get(name + ".bias")), stride,
                PadMode::Same);
}

}  // namespace

void DetectorConfig::validate() const {
  require(input_size > 0, "detector input_size must be positive");
  require(in_channels == 1 || in_channels == 3, "detector in_channels must be 1 or 3");
  require(!backbone_widths.empty(), "detector needs at least one backbone block");
  for (int w : backbone_widths) require(w > 0, "backbone widths must be positive");
  require(convs_per_block >= 1, "convs_per_block must be at least 1");
  require(rpn_width > 0 && mask_width > 0, "head widths must be positive");
  require(mask_pool > 0 && mask_size > 0, "mask pool/size must be positive");
  anchors.validate();
  require(0.0 <= neg_iou && neg_iou <= pos_iou && pos_iou <= 1.0, "need 0 <= neg_iou <= pos_iou <= 1");
  require(anchors_per_image > 0, "anchors_per_image must be positive");
  require(positive_fraction > 0.0 && positive_fraction <= 1.0, "positive_fraction must lie in (0,1]");
  require(nms_iou >= 0.0 && nms_iou <= 1.0, "nms_iou must lie in [0,1]");
  require(score_floor >= 0.0 && score_floor <= 1.0, "score_floor must lie in [0,1]");
  require(pre_nms_top_n > 0, "pre_nms_top_n must be positive");
  for (double sd : delta_std) require(sd > 0.0, "delta_std entries must be positive");
}

ParamSet build_detector(const DetectorConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, {0xde7}));
  ParamSet ps;
  int cin = cfg.in_channels;
  for (std::size_t b = 0; b < cfg.backbone_widths.size(); ++b) {
    const int w = cfg.backbone_widths[b];
    for (int k = 0; k < cfg.convs_per_block; ++k) {
      add_conv(ps, block_name(b, k), w, cin, 3, rng);
      cin = w;
    }
  }
  const int f = cfg.feature_channels();
  const int a = cfg.anchors.anchors_per_cell();
  add_conv(ps, "rpn.conv", cfg.rpn_width, f, 3, rng);
  add_conv(ps, "rpn.score", 2 * a, cfg.rpn_width, 1, rng);
  add_conv(ps, "rpn.delta", 4 * a, cfg.rpn_width, 1, rng);
  add_conv(ps, "mask.conv", cfg.mask_width, f, 3, rng);
  add_conv(ps, "mask.out", 1, cfg.mask_width, 1, rng);
  return ps;
}

Var backbone_forward(Tape& tape, ParamSet& params, const DetectorConfig& cfg, Var images) {
  Var x = images;
  for (std::size_t b = 0; b < cfg.backbone_widths.size(); ++b)
    for (int k = 0; k < cfg.convs_per_block; ++k) x = relu(tape, conv(tape, params, block_name(b, k), x, k == 0 ? 2 : 1));
  return x;
}

RpnOutput rpn_forward(Tape& tape, ParamSet& params, const DetectorConfig& cfg, Var features) {
  const int a = cfg.anchors.anchors_per_cell();
  require(params.get("rpn.score.weight").value.dim(0) == 2 * a,
          "rpn score head must have 2A = " + std::to_string(2 * a) + " output channels");
  require(params.get("rpn.delta.weight").value.dim(0) == 4 * a,
          "rpn delta head must have 4A = " + std::to_string(4 * a) + " output channels");
  const Var h = relu(tape, conv(tape, params, "rpn.conv", features, 1));
  return RpnOutput{conv(tape, params, "rpn.score", h, 1), conv(tape, params, "rpn.delta", h, 1)};
}

std::vector<double> foreground_probs(const Tensor& scores, int n) {
  require(scores.rank() == 4 && scores.dim(1) % 2 == 0, "scores must be [N,2A,H,W], got " + shape_str(scores.shape()));
  require(n >= 0 && n < scores.dim(0), "sample index out of range");
  const int a = scores.dim(1) / 2, h = scores.dim(2), w = scores.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const float* base = scores.data().data() + static_cast<std::size_t>(n) * scores.dim(1) * plane;
  std::vector<double> p(plane * a);
  for (std::size_t cell = 0; cell < plane; ++cell)
    for (int k = 0; k < a; ++k) {
      const double bg = base[(2 * static_cast<std::size_t>(k)) * plane + cell];
      const double fg = base[(2 * static_cast<std::size_t>(k) + 1) * plane + cell];
      p[cell * a + k] = 1.0 / (1.0 + std::exp(bg - fg));
    }
  return p;
}

CellRect feature_cells(const Box& box, int stride, int grid_h, int grid_w) {
  auto span = [stride](double lo, double hi, int extent, int& a, int& b) {
    a = std::clamp(static_cast<int>(std::floor(lo / stride)), 0, extent - 1);
    b = std::clamp(static_cast<int>(std::ceil(hi / stride)), a + 1, extent);
  };
  CellRect r{};
  span(box.y_min, box.y_max, grid_h, r.y0, r.y1);
  span(box.x_min, box.x_max, grid_w, r.x0, r.x1);
  return r;
}

Var mask_head_forward(Tape& tape, ParamSet& params, const DetectorConfig& cfg, Var feature_crop) {
  const Tensor& x = tape.value(feature_crop);
  require(x.rank() == 4 && x.dim(0) == 1 && x.dim(2) > 0 && x.dim(3) > 0,
          "mask head needs a non-empty [1,F,h,w] crop, got " + shape_str(x.shape()));
  Var v = feature_crop;
  // Crops smaller than the pooling grid are upsampled first.
  if (x.dim(2) < cfg.mask_pool || x.dim(3) < cfg.mask_pool)
    v = resize_bilinear(tape, v, std::max(x.dim(2), cfg.mask_pool), std::max(x.dim(3), cfg.mask_pool));
  v = adaptive_avg_pool2d(tape, v, cfg.mask_pool, cfg.mask_pool);
  v = relu(tape, conv(tape, params, "mask.conv", v, 1));
  v = conv(tape, params, "mask.out", v, 1);
  return resize_bilinear(tape, v, cfg.mask_size, cfg.mask_size);
}

AnchorTargets sample_anchor_targets(const std::vector<Box>& anchors, const Box& gt, const DetectorConfig& cfg,
                                    Rng& rng) {
  const Box gts[] = {gt};
  const AnchorLabels labels = label_anchors(anchors, gts, cfg.pos_iou, cfg.neg_iou);
  std::vector<int> pos, neg;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (labels.label[i] == AnchorLabel::Positive) pos.push_back(static_cast<int>(i));
    if (labels.label[i] == AnchorLabel::Negative) neg.push_back(static_cast<int>(i));
  }
  rng.shuffle(pos);
  rng.shuffle(neg);
  const auto pos_cap = static_cast<std::size_t>(std::max(1.0, std::floor(cfg.anchors_per_image * cfg.positive_fraction)));
  const auto budget = static_cast<std::size_t>(cfg.anchors_per_image);
  pos.resize(std::min({pos.size(), pos_cap, budget}));
  neg.resize(std::min(neg.size(), budget - pos.size()));
  std::sort(pos.begin(), pos.end());
  std::sort(neg.begin(), neg.end());

  AnchorTargets t;
  std::merge(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(t.cls_anchors));
  for (int i : t.cls_anchors) t.cls_labels.push_back(labels.label[static_cast<std::size_t>(i)] == AnchorLabel::Positive);
  t.box_anchors = pos;
  t.box_targets = Tensor({static_cast<int>(pos.size()), 4});
  for (std::size_t k = 0; k < pos.size(); ++k) {
    const Delta4 d = encode_deltas(anchors[static_cast<std::size_t>(pos[k])], gt);
    t.box_targets[4 * k + 0] = static_cast<float>(d.dx / cfg.delta_std[0]);
    t.box_targets[4 * k + 1] = static_cast<float>(d.dy / cfg.delta_std[1]);
    t.box_targets[4 * k + 2] = static_cast<float>(d.dw / cfg.delta_std[2]);
    t.box_targets[4 * k + 3] = static_cast<float>(d.dh / cfg.delta_std[3]);
  }
  return t;
}

LossBreakdown LossTerms::values(const Tape& tape) const {
  return LossBreakdown{tape.value(cls)[0], tape.value(box)[0], tape.value(mask)[0], tape.value(total)[0]};
}

LossTerms multi_task_loss(Tape& tape, Var scores, Var deltas, const std::vector<AnchorTargets>& targets,
                          const std::vector<Var>& mask_logits, const std::vector<Tensor>& mask_targets) {
  const Tensor& s = tape.value(scores);
  const Tensor& d = tape.value(deltas);
  require(s.rank() == 4 && d.rank() == 4, "scores and deltas must be 4-D");
  const int n = s.dim(0), a = s.dim(1) / 2, h = s.dim(2), w = s.dim(3);
  require(s.dim(1) == 2 * a && d.dim(1) == 4 * a && d.dim(0) == n && d.dim(2) == h && d.dim(3) == w,
          "scores " + shape_str(s.shape()) + " and deltas " + shape_str(d.shape()) + " disagree");
  require(static_cast<int>(targets.size()) == n, "need one AnchorTargets per image: got " +
                                                      std::to_string(targets.size()) + " for batch " + std::to_string(n));
  require(mask_logits.size() == mask_targets.size(), "mask logits and targets differ in count");

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t total_anchors = plane * a;

  std::vector<std::size_t> cls_index, box_index;
  std::vector<int> cls_target;
  std::vector<float> box_target;
  for (int img = 0; img < n; ++img) {
    const AnchorTargets& t = targets[static_cast<std::size_t>(img)];
    require(t.cls_anchors.size() == t.cls_labels.size(), "anchor labels misaligned with sampled anchors");
    require(t.box_targets.size() == 4 * t.box_anchors.size(), "box targets misaligned with positive anchors");
    const std::size_t score_base = static_cast<std::size_t>(img) * 2 * a * plane;
    const std::size_t delta_base = static_cast<std::size_t>(img) * 4 * a * plane;
    for (std::size_t k = 0; k < t.cls_anchors.size(); ++k) {
      const auto idx = static_cast<std::size_t>(t.cls_anchors[k]);
      require(idx < total_anchors, "sampled anchor index out of range");
      const std::size_t cell = idx / a, an = idx % a;
      cls_index.push_back(score_base + (2 * an) * plane + cell);
      cls_index.push_back(score_base + (2 * an + 1) * plane + cell);
      cls_target.push_back(t.cls_labels[k]);
    }
    for (std::size_t k = 0; k < t.box_anchors.size(); ++k) {
      const auto idx = static_cast<std::size_t>(t.box_anchors[k]);
      require(idx < total_anchors, "positive anchor index out of range");
      const std::size_t cell = idx / a, an = idx % a;
      for (std::size_t c = 0; c < 4; ++c) {
        box_index.push_back(delta_base + (4 * an + c) * plane + cell);
        box_target.push_back(t.box_targets[4 * k + c]);
      }
    }
  }

  LossTerms terms;
  const Tensor zero = Tensor::scalar(0.0f);
  if (cls_target.empty()) {
    terms.cls = tape.constant(zero);
  } else {
    const int rows = static_cast<int>(cls_target.size());
    terms.cls = cross_entropy(tape, gather(tape, scores, std::move(cls_index), {rows, 2}), cls_target);
  }
  if (box_target.empty()) {
    terms.box = tape.constant(zero);
  } else {
    const int rows = static_cast<int>(box_target.size() / 4);
    terms.box = smooth_l1(tape, gather(tape, deltas, std::move(box_index), {rows, 4}),
                          Tensor({rows, 4}, std::move(box_target)));
  }
  if (mask_logits.empty()) {
    terms.mask = tape.constant(zero);
  } else {
    Var sum;
    for (std::size_t m = 0; m < mask_logits.size(); ++m) {
      const Tensor& logits = tape.value(mask_logits[m]);
      require(logits.size() == mask_targets[m].size(), "mask logits " + shape_str(logits.shape()) +
                                                           " and targets " + shape_str(mask_targets[m].shape()) +
                                                           " differ in size");
      const Var term = binary_cross_entropy_with_logits(
          tape, reshape(tape, mask_logits[m], mask_targets[m].shape()), mask_targets[m]);
      sum = sum.valid() ? add(tape, sum, term) : term;
    }
    terms.mask = mask_logits.size() == 1 ? sum : scale(tape, sum, 1.0f / static_cast<float>(mask_logits.size()));
  }
  terms.total = add(tape, add(tape, terms.cls, terms.box), terms.mask);
  return terms;
}

Tensor detector_input(const Tensor& image, const DetectorConfig& cfg) {
  require(image.rank() == 3, "detector image must be [C,H,W], got " + shape_str(image.shape()));
  require(image.dim(1) == cfg.input_size && image.dim(2) == cfg.input_size,
          "detector expects " + std::to_string(cfg.input_size) + "x" + std::to_string(cfg.input_size) + " images, got " +
              shape_str(image.shape()));
  const int c = image.dim(0);
  require(c == cfg.in_channels || c == 1 || (c == 3 && cfg.in_channels == 1),
          "cannot map " + std::to_string(c) + " image channels onto " + std::to_string(cfg.in_channels));
  const std::size_t plane = static_cast<std::size_t>(cfg.input_size) * cfg.input_size;
  Tensor out({1, cfg.in_channels, cfg.input_size, cfg.input_size});
  for (int k = 0; k < cfg.in_channels; ++k)
    for (std::size_t p = 0; p < plane; ++p) {
      float v;
      if (c == cfg.in_channels) {
        v = image[static_cast<std::size_t>(k) * plane + p];
      } else if (c == 1) {
        v = image[p];  // grey stacked into every channel
      } else {
        v = (image[p] + image[plane + p] + image[2 * plane + p]) / 3.0f;
      }
      out[static_cast<std::size_t>(k) * plane + p] = v / 255.0f;
    }
  return out;
}

std::optional<Detection> detect_best_region(const Tensor& image, ParamSet& params, const DetectorConfig& cfg) {
  cfg.validate();
  Tape tape(false);
  const Var x = tape.constant(detector_input(image, cfg));
  const Var features = backbone_forward(tape, params, cfg, x);
  const RpnOutput rpn = rpn_forward(tape, params, cfg, features);
  const Tensor& deltas = tape.value(rpn.deltas);
  const int gh = deltas.dim(2), gw = deltas.dim(3);
  const int a = cfg.anchors.anchors_per_cell();
  const std::vector<Box> anchors = generate_anchors(gh, gw, cfg.anchors);
  const std::vector<double> probs = foreground_probs(tape.value(rpn.scores), 0);
  const std::size_t plane = static_cast<std::size_t>(gh) * gw;
  const double side = cfg.input_size;

  // Probabilities saturate at 1.0 in double, so candidates are ranked by logit margin.
  const Tensor& scores = tape.value(rpn.scores);
  struct Candidate {
    double margin;
    Detection det;
  };
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (!(probs[i] > cfg.score_floor)) continue;
    const std::size_t cell = i / a, an = i % a;
    auto at = [&](std::size_t c) { return deltas[(4 * an + c) * plane + cell] * cfg.delta_std[c]; };
    const Delta4 d{at(0), at(1), std::min(at(2), kMaxLogScale), std::min(at(3), kMaxLogScale)};
    const Box b = clip_box(decode_deltas(anchors[i], d), side, side);
    if (!(b.width() > 0.0 && b.height() > 0.0)) continue;
    const double margin = static_cast<double>(scores[(2 * an + 1) * plane + cell]) - scores[2 * an * plane + cell];
    candidates.push_back({margin, Detection{b, probs[i], std::nullopt}});
  }
  if (candidates.empty()) return std::nullopt;
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& l, const Candidate& r) { return l.margin > r.margin; });
  if (candidates.size() > static_cast<std::size_t>(cfg.pre_nms_top_n)) candidates.resize(cfg.pre_nms_top_n);
  std::vector<Detection> ranked;
  ranked.reserve(candidates.size());
  for (auto& c : candidates) ranked.push_back(std::move(c.det));
  std::vector<Detection> kept = nms(std::move(ranked), cfg.nms_iou);
  Detection best = kept.front();

  const CellRect r = feature_cells(best.box, cfg.stride(), gh, gw);
  const Var logits = mask_head_forward(tape, params, cfg, crop2d(tape, features, 0, r.y0, r.y1, r.x0, r.x1));
  Tensor mask({cfg.mask_size, cfg.mask_size});
  const Tensor& l = tape.value(logits);
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = sigmoid(l[i]);
  best.mask = std::move(mask);
  return best;
}

void DetectorTrainConfig::validate() const {
  require(epochs > 0, "detector epochs must be positive");
  require(batch_size > 0, "detector batch_size must be positive");
  optim.validate();
}

namespace {

struct DetectorSample {
  Tensor input;  // [1,C,S,S]
  Box gt;
  Tensor mask_target;  // [M,M]
};

// Ground-truth mask over the pixel span of the ROI's feature cells, resampled to M x M.
Tensor mask_target_for(const Tensor& mask, const Box& gt, const DetectorConfig& cfg) {
  const int g = cfg.grid_size(), s = cfg.stride();
  const CellRect r = feature_cells(gt, s, g, g);
  const int h = mask.dim(0), w = mask.dim(1);
  const int y0 = r.y0 * s, x0 = r.x0 * s;
  const int y1 = std::min(r.y1 * s, h), x1 = std::min(r.x1 * s, w);
  Tensor crop({1, y1 - y0, x1 - x0});
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      crop[static_cast<std::size_t>(y - y0) * (x1 - x0) + (x - x0)] = mask[static_cast<std::size_t>(y) * w + x] != 0.0f;
  Tensor t = resize_bilinear(crop, cfg.mask_size, cfg.mask_size).reshaped({cfg.mask_size, cfg.mask_size});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = std::clamp(t[i], 0.0f, 1.0f);
  return t;
}

DetectorSample load_detector_sample(const DatasetManifest& m, std::size_t index, const DetectorConfig& cfg) {
  require(index < m.samples.size(), "training index " + std::to_string(index) + " out of range");
  const IrisSample& s = m.samples[index];
  require(s.gt_box.has_value(), "sample " + s.image_path + " has no ground-truth box");
  require(!s.mask_path.empty(), "sample " + s.image_path + " has no ground-truth mask");
  const Tensor mask = read_pbm(m.resolve(s.mask_path));
  return DetectorSample{detector_input(read_image(m.resolve(s.image_path)), cfg), *s.gt_box,
                        mask_target_for(mask, *s.gt_box, cfg)};
}

}  // namespace

DetectorTrainResult train_detector(const DatasetManifest& manifest, const std::vector<std::size_t>& train_indices,
                                   const DetectorConfig& cfg, const DetectorTrainConfig& train) {
  cfg.validate();
  train.validate();
  require(!train_indices.empty(), "detector training split is empty");

  std::vector<DetectorSample> samples;
  samples.reserve(train_indices.size());
  for (std::size_t i : train_indices) samples.push_back(load_detector_sample(manifest, i, cfg));

  const int g = cfg.grid_size();
  const std::vector<Box> anchors = generate_anchors(g, g, cfg.anchors);
  const int c = cfg.in_channels, side = cfg.input_size;
  const std::size_t image_numel = static_cast<std::size_t>(c) * side * side;

  DetectorTrainResult result;
  result.params = build_detector(cfg, derive_seed(train.seed, {1}));
  ParamSet& params = result.params;
  OptState state = OptState::for_params(params);
  ParamSet best;
  float best_total = 0.0f;

  std::vector<std::size_t> order(samples.size());
  for (int epoch = 0; epoch < train.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(train.seed, {2, static_cast<std::uint64_t>(epoch)}));
    shuffle_rng.shuffle(order);
    Rng sample_rng(derive_seed(train.seed, {3, static_cast<std::uint64_t>(epoch)}));

    double sum_cls = 0.0, sum_box = 0.0, sum_mask = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(train.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(train.batch_size));
      const int b = static_cast<int>(end - start);
      Tensor batch({b, c, side, side});
      std::vector<AnchorTargets> targets;
      std::vector<Tensor> mask_targets;
      for (std::size_t k = start; k < end; ++k) {
        const DetectorSample& s = samples[order[k]];
        std::copy(s.input.data().begin(), s.input.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>((k - start) * image_numel));
        targets.push_back(sample_anchor_targets(anchors, s.gt, cfg, sample_rng));
        mask_targets.push_back(s.mask_target);
      }

      Tape tape;
      const Var features = backbone_forward(tape, params, cfg, tape.constant(std::move(batch)));
      const RpnOutput rpn = rpn_forward(tape, params, cfg, features);
      std::vector<Var> mask_logits;
      for (int k = 0; k < b; ++k) {
        const CellRect r = feature_cells(samples[order[start + static_cast<std::size_t>(k)]].gt, cfg.stride(), g, g);
        mask_logits.push_back(mask_head_forward(tape, params, cfg, crop2d(tape, features, k, r.y0, r.y1, r.x0, r.x1)));
      }
      const LossTerms loss = multi_task_loss(tape, rpn.scores, rpn.deltas, targets, mask_logits, mask_targets);
      const LossBreakdown v = loss.values(tape);
      if (!std::isfinite(v.total)) throw NumericError("detector loss became non-finite at epoch " + std::to_string(epoch));
      params.zero_grad();
      tape.backward(loss.total);
      optimizer_step(train.optimizer, params, state, train.optim);
      sum_cls += v.l_cls;
      sum_box += v.l_box;
      sum_mask += v.l_mask;
      ++batches;
    }

    LossBreakdown mean;
    mean.l_cls = static_cast<float>(sum_cls / static_cast<double>(batches));
    mean.l_box = static_cast<float>(sum_box / static_cast<double>(batches));
    mean.l_mask = static_cast<float>(sum_mask / static_cast<double>(batches));
    mean.total = mean.l_cls + mean.l_box + mean.l_mask;
    result.trace.push_back(mean);
    if (epoch == 0 || mean.total < best_total) {
      best_total = mean.total;
      best = params;
      result.best_epoch = epoch;
    }
  }
  result.params = std::move(best);
  result.params.zero_grad();
  return result;
}

DetectionEval evaluate_detector(const DatasetManifest& manifest, const std::vector<std::size_t>& indices,
                                ParamSet& params, const DetectorConfig& cfg) {
  DetectionEval e;
  double iou_sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t i : indices) {
    require(i < manifest.samples.size(), "evaluation index out of range");
    const IrisSample& s = manifest.samples[i];
    require(s.gt_box.has_value(), "sample " + s.image_path + " has no ground-truth box");
    const auto det = detect_best_region(read_image(manifest.resolve(s.image_path)), params, cfg);
    const double overlap = det ? iou(det->box, *s.gt_box) : 0.0;
    if (!det) ++e.missed;
    iou_sum += overlap;
    hits += overlap >= 0.5;
    ++e.evaluated;
  }
  if (e.evaluated > 0) {
    e.mean_iou = iou_sum / static_cast<double>(e.evaluated);
    e.success_rate = static_cast<double>(hits) / static_cast<double>(e.evaluated);
  }
  return e;
}

}  // namespace iris
