#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "iris/checkpoint.hpp"
#include "iris/detector.hpp"
#include "iris/error.hpp"
#include "iris/image_io.hpp"
#include "iris/ops.hpp"
#include "test_util.hpp"

using namespace iris;
using iris::testing::bit_equal;
using iris::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

DetectorConfig small_config() {
  DetectorConfig cfg;
  cfg.input_size = 32;
  cfg.backbone_widths = {6, 8};
  cfg.convs_per_block = 1;
  cfg.rpn_width = 8;
  cfg.mask_width = 4;
  return cfg;
}

void zero_params(ParamSet& ps, const std::string& prefix) {
  for (auto& p : ps.items())
    if (p.name.rfind(prefix, 0) == 0) p.value.fill(0.0f);
}

// Log-sum-exp BCE, written out independently of the library kernels.
double bce_scalar(double x, double t) { return std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x))); }

double huber(double d) { return std::abs(d) < 1.0 ? 0.5 * d * d : std::abs(d) - 0.5; }

}  // namespace

TEST(Rpn, OutputShapes) {
  DetectorConfig cfg;
  ParamSet ps = build_detector(cfg, 1);
  Rng rng(2);
  Tape tape;
  const auto out = rpn_forward(tape, ps, cfg, tape.constant(random_tensor({1, cfg.feature_channels(), 8, 8}, rng)));
  EXPECT_EQ(tape.value(out.scores).shape(), (Shape{1, 18, 8, 8}));
  EXPECT_EQ(tape.value(out.deltas).shape(), (Shape{1, 36, 8, 8}));
}

TEST(Rpn, ZeroHeadsGiveHalfProbability) {
  DetectorConfig cfg;
  ParamSet ps = build_detector(cfg, 1);
  zero_params(ps, "rpn.score");
  Rng rng(3);
  Tape tape;
  const auto out = rpn_forward(tape, ps, cfg, tape.constant(random_tensor({2, cfg.feature_channels(), 5, 7}, rng)));
  for (int n = 0; n < 2; ++n)
    for (double p : foreground_probs(tape.value(out.scores), n)) ASSERT_EQ(p, 0.5);
}

TEST(Rpn, DeterministicAndSeeded) {
  DetectorConfig cfg;
  Rng rng(4);
  const Tensor f = random_tensor({1, cfg.feature_channels(), 6, 6}, rng);
  auto run = [&](std::uint64_t seed) {
    ParamSet ps = build_detector(cfg, seed);
    Tape tape;
    const auto out = rpn_forward(tape, ps, cfg, tape.constant(f));
    return std::pair{tape.value(out.scores), tape.value(out.deltas)};
  };
  const auto a = run(9), b = run(9), c = run(10);
  EXPECT_TRUE(bit_equal(a.first, b.first));
  EXPECT_TRUE(bit_equal(a.second, b.second));
  EXPECT_FALSE(bit_equal(a.first, c.first));
}

TEST(Rpn, ChannelMismatchRejected) {
  DetectorConfig cfg;
  ParamSet ps = build_detector(cfg, 1);
  DetectorConfig other = cfg;
  other.anchors.scales = {1.0, 2.0};
  Tape tape;
  EXPECT_THROW(rpn_forward(tape, ps, other, tape.constant(Tensor({1, cfg.feature_channels(), 4, 4}))), ContractViolation);
}

TEST(BuildDetector, HeadChannelCountsAndZeroBiases) {
  DetectorConfig cfg;
  const ParamSet ps = build_detector(cfg, 5);
  EXPECT_EQ(ps.get("rpn.score.weight").value.dim(0), 2 * 9);
  EXPECT_EQ(ps.get("rpn.delta.weight").value.dim(0), 4 * 9);
  for (const auto& p : ps.items())
    if (p.name.ends_with(".bias"))
      for (float v : p.value.data()) ASSERT_EQ(v, 0.0f) << p.name;
}

TEST(MaskHead, ShapeForAnyCrop) {
  DetectorConfig cfg;
  ParamSet ps = build_detector(cfg, 6);
  Rng rng(7);
  for (auto [h, w] : {std::pair{1, 1}, {3, 5}, {7, 7}, {12, 9}, {16, 16}}) {
    Tape tape;
    const Var logits = mask_head_forward(tape, ps, cfg, tape.constant(random_tensor({1, cfg.feature_channels(), h, w}, rng)));
    EXPECT_EQ(tape.value(logits).shape(), (Shape{1, 1, 14, 14}));
  }
}

TEST(MaskHead, ZeroWeightsGiveFinalBias) {
  DetectorConfig cfg;
  ParamSet ps = build_detector(cfg, 6);
  zero_params(ps, "mask.");
  ps.get("mask.out.bias").value[0] = -0.75f;
  Rng rng(8);
  Tape tape;
  const Var logits = mask_head_forward(tape, ps, cfg, tape.constant(random_tensor({1, cfg.feature_channels(), 9, 6}, rng)));
  for (float v : tape.value(logits).data()) ASSERT_EQ(v, -0.75f);
}

TEST(MaskHead, DeterministicAndRejectsEmptyCrop) {
  DetectorConfig cfg;
  ParamSet ps = build_detector(cfg, 6);
  Rng rng(9);
  const Tensor crop = random_tensor({1, cfg.feature_channels(), 8, 5}, rng);
  Tape t1, t2;
  EXPECT_TRUE(bit_equal(t1.value(mask_head_forward(t1, ps, cfg, t1.constant(crop))),
                        t2.value(mask_head_forward(t2, ps, cfg, t2.constant(crop)))));
  Tape t3;
  EXPECT_THROW(mask_head_forward(t3, ps, cfg, t3.constant(Tensor({1, cfg.feature_channels(), 0, 4}))), ContractViolation);
}

TEST(FeatureCells, CoverBoxAndClamp) {
  const CellRect r = feature_cells(Box{5, 9, 21, 30}, 4, 16, 16);
  EXPECT_EQ(r.x0, 1);
  EXPECT_EQ(r.x1, 6);
  EXPECT_EQ(r.y0, 2);
  EXPECT_EQ(r.y1, 8);
  const CellRect edge = feature_cells(Box{62, 63, 64, 64}, 4, 16, 16);
  EXPECT_EQ(edge.x0, 15);
  EXPECT_EQ(edge.x1, 16);
  EXPECT_EQ(edge.y1, 16);
  const CellRect outside = feature_cells(Box{70, 70, 80, 80}, 4, 16, 16);
  EXPECT_EQ(outside.x0, 15);
  EXPECT_EQ(outside.x1, 16);
}

TEST(AnchorSampling, BudgetsAndTargets) {
  DetectorConfig cfg;
  const auto anchors = generate_anchors(cfg.grid_size(), cfg.grid_size(), cfg.anchors);
  Rng rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    const double cx = rng.uniform(16, 48), cy = rng.uniform(16, 48), r = rng.uniform(8, 16);
    const Box gt = Box::from_center(cx, cy, 2 * r, 2 * r * rng.uniform(0.7, 1.0));
    const AnchorTargets t = sample_anchor_targets(anchors, gt, cfg, rng);
    ASSERT_LE(t.cls_anchors.size(), 32u);
    ASSERT_LE(t.box_anchors.size(), 16u);
    ASSERT_GE(t.box_anchors.size(), 1u);
    EXPECT_EQ(t.cls_anchors.size(), 32u);
    std::size_t positives = 0;
    for (std::size_t k = 0; k < t.cls_anchors.size(); ++k) {
      const double o = iou(anchors[static_cast<std::size_t>(t.cls_anchors[k])], gt);
      if (t.cls_labels[k]) {
        ++positives;
      } else {
        EXPECT_LT(o, cfg.neg_iou);
      }
    }
    EXPECT_EQ(positives, t.box_anchors.size());
    for (std::size_t k = 0; k < t.box_anchors.size(); ++k) {
      const Delta4 d{t.box_targets[4 * k] * cfg.delta_std[0], t.box_targets[4 * k + 1] * cfg.delta_std[1],
                     t.box_targets[4 * k + 2] * cfg.delta_std[2], t.box_targets[4 * k + 3] * cfg.delta_std[3]};
      const Box back = decode_deltas(anchors[static_cast<std::size_t>(t.box_anchors[k])], d);
      EXPECT_NEAR(back.x_min, gt.x_min, 1e-4);
      EXPECT_NEAR(back.y_max, gt.y_max, 1e-4);
    }
  }
}

TEST(MultiTaskLoss, MatchesScalarOracle) {
  Rng rng(11);
  const int a = 2, h = 3, w = 4, n = 2;
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor scores = random_tensor({n, 2 * a, h, w}, rng, -3, 3);
    const Tensor deltas = random_tensor({n, 4 * a, h, w}, rng, -2, 2);
    std::vector<AnchorTargets> targets(n);
    for (auto& t : targets) {
      for (int i = 0; i < h * w * a; ++i)
        if (rng.uniform() < 0.4) {
          t.cls_anchors.push_back(i);
          t.cls_labels.push_back(rng.uniform() < 0.5);
          if (t.cls_labels.back()) t.box_anchors.push_back(i);
        }
      t.box_targets = random_tensor({static_cast<int>(t.box_anchors.size()), 4}, rng, -2, 2);
    }
    std::vector<Tensor> mask_logits_v, mask_targets;
    for (int m = 0; m < 2; ++m) {
      mask_logits_v.push_back(random_tensor({1, 1, 3, 3}, rng, -4, 4));
      mask_targets.push_back(random_tensor({3, 3}, rng, 0, 1));
    }

    Tape tape;
    std::vector<Var> mask_logits;
    for (const auto& t : mask_logits_v) mask_logits.push_back(tape.leaf(t));
    const LossTerms terms = multi_task_loss(tape, tape.leaf(scores), tape.leaf(deltas), targets, mask_logits, mask_targets);
    const LossBreakdown v = terms.values(tape);

    double cls = 0.0, box = 0.0, mask = 0.0;
    std::size_t cls_n = 0, box_n = 0, mask_n = 0;
    for (int img = 0; img < n; ++img) {
      const auto& t = targets[static_cast<std::size_t>(img)];
      for (std::size_t k = 0; k < t.cls_anchors.size(); ++k) {
        const int cell = t.cls_anchors[k] / a, an = t.cls_anchors[k] % a;
        const double bg = scores.at({img, 2 * an, cell / w, cell % w});
        const double fg = scores.at({img, 2 * an + 1, cell / w, cell % w});
        const double mx = std::max(bg, fg);
        const double lse = mx + std::log(std::exp(bg - mx) + std::exp(fg - mx));
        cls += lse - (t.cls_labels[k] ? fg : bg);
        ++cls_n;
      }
      for (std::size_t k = 0; k < t.box_anchors.size(); ++k) {
        const int cell = t.box_anchors[k] / a, an = t.box_anchors[k] % a;
        for (int c = 0; c < 4; ++c) {
          box += huber(deltas.at({img, 4 * an + c, cell / w, cell % w}) - t.box_targets[4 * k + static_cast<std::size_t>(c)]);
          ++box_n;
        }
      }
    }
    for (std::size_t m = 0; m < mask_targets.size(); ++m)
      for (std::size_t i = 0; i < 9; ++i) {
        mask += bce_scalar(mask_logits_v[m][i], mask_targets[m][i]);
        ++mask_n;
      }
    EXPECT_NEAR(v.l_cls, cls / static_cast<double>(cls_n), 1e-6);
    EXPECT_NEAR(v.l_box, box / static_cast<double>(box_n), 1e-6);
    EXPECT_NEAR(v.l_mask, mask / static_cast<double>(mask_n), 1e-6);
    EXPECT_EQ(v.total, (v.l_cls + v.l_box) + v.l_mask);
  }
}

TEST(MultiTaskLoss, SaturatedCorrectIsNearZero) {
  const int a = 1, h = 2, w = 2;
  Tensor scores({1, 2 * a, h, w}), deltas({1, 4 * a, h, w});
  AnchorTargets t;
  t.cls_anchors = {0, 1, 2, 3};
  t.cls_labels = {1, 0, 0, 1};
  for (int i = 0; i < 4; ++i) {
    scores.at({0, 0, i / 2, i % 2}) = t.cls_labels[static_cast<std::size_t>(i)] ? -40.0f : 40.0f;
    scores.at({0, 1, i / 2, i % 2}) = t.cls_labels[static_cast<std::size_t>(i)] ? 40.0f : -40.0f;
  }
  t.box_anchors = {0, 3};
  t.box_targets = Tensor({2, 4});
  Tensor mask_logit({1, 1, 2, 2}, std::vector<float>{40, -40, -40, 40});
  Tensor mask_target({2, 2}, std::vector<float>{1, 0, 0, 1});
  Tape tape;
  const auto v = multi_task_loss(tape, tape.constant(scores), tape.constant(deltas), {t}, {tape.constant(mask_logit)}, {mask_target})
                     .values(tape);
  EXPECT_LT(v.total, 1e-5f);
}

TEST(MultiTaskLoss, EmptyTermsContributeZero) {
  Rng rng(12);
  Tape tape;
  const Var s = tape.leaf(random_tensor({1, 2, 2, 2}, rng));
  const Var d = tape.leaf(random_tensor({1, 4, 2, 2}, rng));
  AnchorTargets t;
  t.box_targets = Tensor({0, 4});
  const auto terms = multi_task_loss(tape, s, d, {t}, {}, {});
  const auto v = terms.values(tape);
  EXPECT_EQ(v.l_cls, 0.0f);
  EXPECT_EQ(v.l_box, 0.0f);
  EXPECT_EQ(v.l_mask, 0.0f);
  EXPECT_EQ(v.total, 0.0f);
}

TEST(MultiTaskLoss, MisalignedInputsRejected) {
  Tape tape;
  const Var s = tape.leaf(Tensor({1, 2, 2, 2}));
  const Var d = tape.leaf(Tensor({1, 8, 2, 2}));
  AnchorTargets t;
  t.box_targets = Tensor({0, 4});
  EXPECT_THROW(multi_task_loss(tape, s, d, {t}, {}, {}), ContractViolation);
  const Var d4 = tape.leaf(Tensor({1, 4, 2, 2}));
  EXPECT_THROW(multi_task_loss(tape, s, d4, {t, t}, {}, {}), ContractViolation);
  t.cls_anchors = {0};
  EXPECT_THROW(multi_task_loss(tape, s, d4, {t}, {}, {}), ContractViolation);
}

TEST(DetectBestRegion, BlankImageAtFloorOneFindsNothing) {
  DetectorConfig cfg;
  cfg.score_floor = 1.0;
  ParamSet ps = build_detector(cfg, 13);
  EXPECT_FALSE(detect_best_region(Tensor({3, 64, 64}), ps, cfg).has_value());
}

TEST(DetectBestRegion, DeterministicClippedWithMask) {
  DetectorConfig cfg;
  ParamSet ps = build_detector(cfg, 14);
  SynthSpec spec;
  const auto eye = render_eye(identity_seed(spec, 0), sample_pose(spec, 0, 0), spec);
  const auto a = detect_best_region(eye.image, ps, cfg);
  const auto b = detect_best_region(eye.image, ps, cfg);
  ASSERT_TRUE(a && b);
  EXPECT_EQ(a->box, b->box);
  EXPECT_EQ(a->objectness, b->objectness);
  EXPECT_TRUE(bit_equal(*a->mask, *b->mask));
  EXPECT_GE(a->box.x_min, 0.0);
  EXPECT_LE(a->box.x_max, 64.0);
  EXPECT_GT(a->box.area(), 0.0);
  EXPECT_GE(a->objectness, 0.0);
  EXPECT_LE(a->objectness, 1.0);
  EXPECT_EQ(a->mask->shape(), (Shape{14, 14}));
  for (float v : a->mask->data()) {
    ASSERT_GE(v, 0.0f);
    ASSERT_LE(v, 1.0f);
  }
}

TEST(DetectBestRegion, GreyInputIsStacked) {
  DetectorConfig cfg;
  Rng rng(15);
  const Tensor grey = random_tensor({1, 64, 64}, rng, 0, 255);
  Tensor rgb({3, 64, 64});
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < grey.size(); ++i) rgb[static_cast<std::size_t>(c) * grey.size() + i] = grey[i];
  EXPECT_TRUE(bit_equal(detector_input(grey, cfg), detector_input(rgb, cfg)));
  EXPECT_THROW(detector_input(Tensor({3, 32, 32}), cfg), ContractViolation);
}

class DetectorTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / "iris_detector_train";
    fs::remove_all(dir_);
    SynthSpec spec;
    spec.num_identities = 6;
    spec.images_per_identity = 10;
    spec.image_size = 32;
    spec.seed = 31;
    manifest_ = synth_dataset(spec, dir_);
  }
  static std::vector<std::size_t> all_indices() {
    std::vector<std::size_t> v(manifest_.samples.size());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = i;
    return v;
  }
  static fs::path dir_;
  static DatasetManifest manifest_;
};
fs::path DetectorTraining::dir_;
DatasetManifest DetectorTraining::manifest_;

TEST_F(DetectorTraining, LossFallsAndBestEpochRetained) {
  DetectorConfig cfg = small_config();
  cfg.anchors.scales = {2.0, 3.0, 4.0};
  DetectorTrainConfig tc;
  tc.epochs = 6;
  tc.seed = 3;
  const auto r = train_detector(manifest_, all_indices(), cfg, tc);
  ASSERT_EQ(r.trace.size(), 6u);
  EXPECT_LT(r.trace.back().total, r.trace.front().total);
  int argmin = 0;
  for (std::size_t e = 0; e < r.trace.size(); ++e) {
    EXPECT_EQ(r.trace[e].total, (r.trace[e].l_cls + r.trace[e].l_box) + r.trace[e].l_mask);
    if (r.trace[e].total < r.trace[static_cast<std::size_t>(argmin)].total) argmin = static_cast<int>(e);
  }
  EXPECT_EQ(r.best_epoch, argmin);

  // Same seed reproduces the trace; stopping right after the best epoch reproduces the weights.
  const auto again = train_detector(manifest_, all_indices(), cfg, tc);
  ASSERT_EQ(again.trace.size(), r.trace.size());
  for (std::size_t e = 0; e < r.trace.size(); ++e) EXPECT_EQ(again.trace[e].total, r.trace[e].total);
  EXPECT_TRUE(again.params == r.params);
  tc.epochs = r.best_epoch + 1;
  const auto truncated = train_detector(manifest_, all_indices(), cfg, tc);
  EXPECT_TRUE(truncated.params == r.params);
}

TEST_F(DetectorTraining, FixtureEyeLocalized) {
  DetectorConfig cfg = small_config();
  cfg.anchors.scales = {2.0, 3.0, 4.0};
  DetectorTrainConfig tc;
  tc.epochs = 12;
  tc.seed = 4;
  auto r = train_detector(manifest_, all_indices(), cfg, tc);
  const auto& s = manifest_.samples[7];
  const auto det = detect_best_region(read_image(manifest_.resolve(s.image_path)), r.params, cfg);
  ASSERT_TRUE(det.has_value());
  EXPECT_GE(iou(det->box, *s.gt_box), 0.7);
}

TEST_F(DetectorTraining, RejectsEmptySplitAndMissingTruth) {
  DetectorConfig cfg = small_config();
  EXPECT_THROW(train_detector(manifest_, {}, cfg, DetectorTrainConfig{}), ContractViolation);
  DatasetManifest stripped = manifest_;
  stripped.samples[0].gt_box.reset();
  EXPECT_THROW(train_detector(stripped, {0}, cfg, DetectorTrainConfig{}), ContractViolation);
}

TEST(Checkpoint, BitExactRoundTripWithOptimizerState) {
  DetectorConfig cfg;
  ParamSet ps = build_detector(cfg, 21);
  OptState st = OptState::for_params(ps);
  Rng rng(22);
  for (int step = 0; step < 3; ++step) {
    for (auto& p : ps.items())
      for (std::size_t i = 0; i < p.grad.size(); ++i) p.grad[i] = static_cast<float>(rng.normal());
    amsgrad_step(ps, st, OptimHyper{});
  }
  const fs::path path = fs::temp_directory_path() / "iris_ckpt" / "det.ckpt";
  save_checkpoint(path, ps, &st, {{"kind", "detector"}, {"seed", "21"}});
  const Checkpoint back = load_checkpoint(path);
  EXPECT_TRUE(back.params == ps);
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_EQ(back.params.items()[i].name, ps.items()[i].name);
  ASSERT_TRUE(back.state.has_value());
  EXPECT_EQ(back.state->step, 3);
  ASSERT_EQ(back.state->slots.size(), st.slots.size());
  for (std::size_t i = 0; i < st.slots.size(); ++i) {
    EXPECT_TRUE(bit_equal(back.state->slots[i].m, st.slots[i].m));
    EXPECT_TRUE(bit_equal(back.state->slots[i].v, st.slots[i].v));
    EXPECT_TRUE(bit_equal(back.state->slots[i].v_hat, st.slots[i].v_hat));
  }
  EXPECT_EQ(back.meta.at("kind"), "detector");

  save_checkpoint(path, ps);
  const Checkpoint plain = load_checkpoint(path);
  EXPECT_TRUE(plain.params == ps);
  EXPECT_FALSE(plain.state.has_value());
}

TEST(Checkpoint, CorruptFilesRejected) {
  const fs::path dir = fs::temp_directory_path() / "iris_ckpt";
  fs::create_directories(dir);
  std::ofstream(dir / "junk.ckpt") << "hello world\n";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt"), IoError);
  ParamSet ps;
  ps.add("w", Tensor({2, 2}, std::vector<float>{1, 2, 3, 4}));
  save_checkpoint(dir / "t.ckpt", ps);
  const auto size = fs::file_size(dir / "t.ckpt");
  fs::resize_file(dir / "t.ckpt", size - 3);
  EXPECT_THROW(load_checkpoint(dir / "t.ckpt"), IoError);
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt"), IoError);
}
