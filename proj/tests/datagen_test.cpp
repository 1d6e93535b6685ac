#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <iterator>
#include <set>

#include "iris/datagen.hpp"
#include "iris/error.hpp"
#include "iris/image_io.hpp"
#include "iris/ops.hpp"
#include "test_util.hpp"

using namespace iris;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("iris_datagen_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// Tight bounding box of the non-zero mask cells, in pixel edges.
std::optional<Box> mask_bbox(const Tensor& mask) {
  const int h = mask.dim(0), w = mask.dim(1);
  int x0 = w, y0 = h, x1 = -1, y1 = -1;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (mask[static_cast<std::size_t>(y) * w + x] != 0.0f) {
        x0 = std::min(x0, x), y0 = std::min(y0, y), x1 = std::max(x1, x), y1 = std::max(y1, y);
      }
  if (x1 < 0) return std::nullopt;
  return Box{double(x0), double(y0), double(x1 + 1), double(y1 + 1)};
}

}  // namespace

TEST(RenderEye, Deterministic) {
  SynthSpec spec;
  spec.seed = 3;
  const Pose pose = sample_pose(spec, 4, 7);
  const auto a = render_eye(identity_seed(spec, 4), pose, spec);
  const auto b = render_eye(identity_seed(spec, 4), pose, spec);
  EXPECT_TRUE(iris::testing::bit_equal(a.image, b.image));
  EXPECT_TRUE(iris::testing::bit_equal(a.mask, b.mask));
  EXPECT_EQ(a.gt_box, b.gt_box);
}

TEST(RenderEye, ChannelsFollowSpectrum) {
  SynthSpec spec;
  EXPECT_EQ(render_eye(1, sample_pose(spec, 0, 0), spec).image.shape(), (Shape{3, 64, 64}));
  spec.spectrum = Spectrum::NIR;
  spec.image_size = 48;
  EXPECT_EQ(render_eye(1, sample_pose(spec, 0, 0), spec).image.shape(), (Shape{1, 48, 48}));
}

TEST(RenderEye, MaskBoxIsTightAndInBounds) {
  for (bool partial : {false, true}) {
    SynthSpec spec;
    spec.partial = partial;
    spec.seed = 11;
    for (int id = 0; id < 10; ++id)
      for (int k = 0; k < 20; ++k) {
        const auto eye = render_eye(identity_seed(spec, id), sample_pose(spec, id, k), spec);
        const auto tight = mask_bbox(eye.mask);
        ASSERT_TRUE(tight.has_value());
        EXPECT_EQ(*tight, eye.gt_box);
        EXPECT_GE(eye.gt_box.x_min, 0.0);
        EXPECT_GE(eye.gt_box.y_min, 0.0);
        EXPECT_LE(eye.gt_box.x_max, spec.image_size);
        EXPECT_LE(eye.gt_box.y_max, spec.image_size);
        for (std::size_t i = 0; i < eye.image.size(); ++i) {
          ASSERT_GE(eye.image[i], 0.0f);
          ASSERT_LE(eye.image[i], 255.0f);
          ASSERT_EQ(eye.image[i], std::nearbyint(eye.image[i]));
        }
      }
  }
}

TEST(RenderEye, IdentitiesDifferInsideAnnulus) {
  SynthSpec spec;
  spec.highlight = false;
  spec.eyelid = false;
  Rng rng(99);
  double min_diff = 1e9;
  for (int trial = 0; trial < 100; ++trial) {
    const std::uint64_t s1 = rng.next_u64(), s2 = rng.next_u64();
    const Pose pose = sample_pose(spec, trial, 0);
    const auto a = render_eye(s1, pose, spec);
    const auto b = render_eye(s2, pose, spec);
    double sum = 0.0;
    std::size_t count = 0;
    const std::size_t plane = 64 * 64;
    for (std::size_t p = 0; p < plane; ++p) {
      if (a.mask[p] == 0.0f || b.mask[p] == 0.0f) continue;
      for (int c = 0; c < 3; ++c) sum += std::abs(a.image[c * plane + p] - b.image[c * plane + p]) / 255.0;
      count += 3;
    }
    ASSERT_GT(count, 0u);
    min_diff = std::min(min_diff, sum / static_cast<double>(count));
  }
  EXPECT_GT(min_diff, 0.05);
}

TEST(RenderEye, NearestCentroidSeparatesIdentities) {
  SynthSpec spec;
  spec.num_identities = 10;
  spec.seed = 5;
  constexpr int kTrain = 10, kTest = 10, kSide = 12;
  auto feature = [&](int id, int k) {
    const auto eye = render_eye(identity_seed(spec, id), sample_pose(spec, id, k), spec);
    const Box& b = eye.gt_box;
    Tensor crop({3, static_cast<int>(b.height()), static_cast<int>(b.width())});
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < crop.dim(1); ++y)
        for (int x = 0; x < crop.dim(2); ++x)
          crop.at({c, y, x}) = eye.image.at({c, y + static_cast<int>(b.y_min), x + static_cast<int>(b.x_min)}) / 255.0f;
    return resize_bilinear(crop, kSide, kSide);
  };
  std::vector<std::vector<double>> centroids(10, std::vector<double>(3 * kSide * kSide, 0.0));
  for (int id = 0; id < 10; ++id)
    for (int k = 0; k < kTrain; ++k) {
      const Tensor f = feature(id, k);
      for (std::size_t i = 0; i < f.size(); ++i) centroids[id][i] += f[i] / kTrain;
    }
  int correct = 0;
  for (int id = 0; id < 10; ++id)
    for (int k = kTrain; k < kTrain + kTest; ++k) {
      const Tensor f = feature(id, k);
      int best = -1;
      double best_d = 1e300;
      for (int c = 0; c < 10; ++c) {
        double d = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i) d += (f[i] - centroids[c][i]) * (f[i] - centroids[c][i]);
        if (d < best_d) best_d = d, best = c;
      }
      correct += best == id;
    }
  const double accuracy = correct / 100.0;
  EXPECT_GE(accuracy, 5 * 0.1) << "accuracy " << accuracy;
}

TEST(SynthSpec, RejectsNonPositiveCounts) {
  SynthSpec spec;
  spec.num_identities = 0;
  EXPECT_THROW(spec.validate(), ContractViolation);
  spec = SynthSpec{};
  spec.images_per_identity = -1;
  EXPECT_THROW(sample_pose(spec, 0, 0), ContractViolation);
}

TEST(SynthDataset, ProductCountFilesAndRoundTrip) {
  const fs::path dir = scratch("full");
  SynthSpec spec;
  spec.seed = 7;
  const DatasetManifest m = synth_dataset(spec, dir);
  ASSERT_EQ(m.samples.size(), 800u);
  for (const auto& s : m.samples) {
    EXPECT_TRUE(fs::exists(m.resolve(s.image_path))) << s.image_path;
    EXPECT_TRUE(fs::exists(m.resolve(s.mask_path))) << s.mask_path;
  }
  const DatasetManifest loaded = load_manifest(dir / "manifest.json");
  ASSERT_EQ(loaded.samples.size(), m.samples.size());
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    const auto& a = m.samples[i];
    const auto& b = loaded.samples[i];
    EXPECT_EQ(a.image_path, b.image_path);
    EXPECT_EQ(a.identity, b.identity);
    EXPECT_EQ(a.eye, b.eye);
    EXPECT_EQ(a.spectrum, b.spectrum);
    EXPECT_EQ(a.gt_box, b.gt_box);
    EXPECT_EQ(a.mask_path, b.mask_path);
  }
  const auto counts = class_counts(loaded);
  EXPECT_EQ(counts.identities, 20);
  EXPECT_EQ(counts.eye_classes, 40);
  EXPECT_EQ(counts.images, 800u);

  // Stored files decode back to the rendered sample.
  const auto eye = render_eye(identity_seed(spec, 3), sample_pose(spec, 3, 5), spec);
  const auto& s = loaded.samples[3 * 40 + 5];
  EXPECT_TRUE(iris::testing::bit_equal(read_image(loaded.resolve(s.image_path)), eye.image));
  EXPECT_TRUE(iris::testing::bit_equal(read_pbm(loaded.resolve(s.mask_path)), eye.mask));
}

TEST(SynthDataset, RegenerationIsByteIdentical) {
  SynthSpec spec;
  spec.num_identities = 3;
  spec.images_per_identity = 4;
  spec.seed = 21;
  const fs::path a = scratch("regen_a"), b = scratch("regen_b");
  const auto ma = synth_dataset(spec, a);
  synth_dataset(spec, b);
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  for (const auto& s : ma.samples) {
    EXPECT_EQ(slurp(a / s.image_path), slurp(b / s.image_path));
    EXPECT_EQ(slurp(a / s.mask_path), slurp(b / s.mask_path));
  }
  spec.seed = 22;
  const fs::path c = scratch("regen_c");
  synth_dataset(spec, c);
  EXPECT_NE(slurp(a / ma.samples[0].image_path), slurp(c / ma.samples[0].image_path));
}

TEST(Manifest, MissingFileIsNamed) {
  SynthSpec spec;
  spec.num_identities = 1;
  spec.images_per_identity = 2;
  const fs::path dir = scratch("missing");
  const auto m = synth_dataset(spec, dir);
  fs::remove(dir / m.samples[1].image_path);
  try {
    load_manifest(dir / "manifest.json");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("id000_001.png"), std::string::npos) << e.what();
  }
}

TEST(Manifest, SchemaViolationNamesRecord) {
  const fs::path dir = scratch("schema");
  std::ofstream(dir / "manifest.json")
      << R"({"version":1,"samples":[{"path":"a.png","identity":0,"eye":"left","spectrum":"VW","box":null},)"
      << R"({"path":"b.png","identity":1,"eye":"middle","spectrum":"VW","box":null}]})";
  try {
    load_manifest(dir / "manifest.json");
    FAIL() << "expected ContractViolation";
  } catch (const ContractViolation& e) {
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos) << e.what();
  }
  std::ofstream(dir / "bad.json") << "{not json";
  EXPECT_THROW(load_manifest(dir / "bad.json"), ContractViolation);
  EXPECT_THROW(load_manifest(dir / "absent.json"), IoError);
}

TEST(ClassLabels, IdentityAndEyeLevels) {
  DatasetManifest m;
  for (int id : {5, 2, 5, 9})
    for (Eye e : {Eye::Left, Eye::Right}) m.samples.push_back(IrisSample{"x", id, e, Spectrum::VW, std::nullopt, ""});
  EXPECT_EQ(class_labels(m, LabelLevel::Identity), (std::vector<int>{1, 1, 0, 0, 1, 1, 2, 2}));
  EXPECT_EQ(class_labels(m, LabelLevel::Eye), (std::vector<int>{2, 3, 0, 1, 2, 3, 4, 5}));
}

TEST(ImportUtiris, PersonFirstTreeCounts) {
  const fs::path root = scratch("utiris");
  // 316 eye folders: 276 hold five images, the rest four (1540 total).
  int folder = 0;
  for (int p = 0; p < 79; ++p) {
    char person[16];
    std::snprintf(person, sizeof person, "%03d", p + 1);
    for (const char* session : {"RGB Images", "Infrared Images"})
      for (const char* eye : {"Left", "Right"}) {
        const fs::path d = root / person / session / eye;
        fs::create_directories(d);
        const int n = folder++ < 276 ? 5 : 4;
        for (int k = 0; k < n; ++k) std::ofstream(d / ("img" + std::to_string(k) + ".jpg")) << "x";
      }
  }
  std::ofstream(root / "README.txt") << "ignored";
  const auto m = import_utiris(root);
  const auto counts = class_counts(m);
  EXPECT_EQ(counts.identities, 79);
  EXPECT_EQ(counts.eye_classes, 158);
  EXPECT_EQ(counts.images, 1540u);
  std::set<Spectrum> spectra;
  for (const auto& s : m.samples) {
    spectra.insert(s.spectrum);
    EXPECT_FALSE(s.gt_box.has_value());
  }
  EXPECT_EQ(spectra.size(), 2u);
}

TEST(ImportUtiris, SessionFirstTree) {
  const fs::path root = scratch("utiris_sess");
  for (const char* session : {"VW", "NIR"})
    for (int p = 0; p < 3; ++p)
      for (const char* eye : {"L", "R"}) {
        const fs::path d = root / session / ("person" + std::to_string(p)) / eye;
        fs::create_directories(d);
        std::ofstream(d / "a.bmp") << "x";
      }
  const auto counts = class_counts(import_utiris(root));
  EXPECT_EQ(counts.identities, 3);
  EXPECT_EQ(counts.eye_classes, 6);
  EXPECT_EQ(counts.images, 12u);
  EXPECT_THROW(import_utiris(root / "nope"), IoError);
}

TEST(DetectorSplit, SizesDisjointCoveringDeterministic) {
  const auto s = detector_split(800, 0.2, 7);
  EXPECT_EQ(s.train.size(), 160u);
  EXPECT_EQ(s.test.size(), 640u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (auto i : s.test) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 800u);
  EXPECT_EQ(*all.rbegin(), 799u);
  const auto again = detector_split(800, 0.2, 7);
  EXPECT_EQ(again.train, s.train);
  EXPECT_EQ(again.test, s.test);
  EXPECT_NE(detector_split(800, 0.2, 8).train, s.train);
}

TEST(DetectorSplit, DegenerateSidesRejected) {
  EXPECT_THROW(detector_split(800, 0.0, 1), ContractViolation);
  EXPECT_THROW(detector_split(800, 1.0, 1), ContractViolation);
  EXPECT_THROW(detector_split(2, 0.1, 1), ContractViolation);
}
