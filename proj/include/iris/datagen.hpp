#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "iris/geometry.hpp"
#include "iris/tensor.hpp"

namespace iris {

enum class Spectrum { VW, NIR };
enum class Eye { Left, Right };
enum class LabelLevel { Identity, Eye };

std::string to_string(Spectrum s);
std::string to_string(Eye e);
Spectrum parse_spectrum(const std::string& s);
Eye parse_eye(const std::string& s);

struct IrisSample {
  std::string image_path;  // relative to the manifest directory unless absolute
  int identity = 0;
  Eye eye = Eye::Left;
  Spectrum spectrum = Spectrum::VW;
  std::optional<Box> gt_box;
  std::string mask_path;  // empty when no ground-truth mask exists
};

struct DatasetManifest {
  int version = 1;
  std::vector<IrisSample> samples;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& rel) const;
};

struct ClassCounts {
  int identities = 0;
  int eye_classes = 0;
  std::size_t images = 0;
};

ClassCounts class_counts(const DatasetManifest& m);
// Dense class index: identity rank, or 2*identity rank + eye at eye level.
std::vector<int> class_labels(const DatasetManifest& m, LabelLevel level);

struct SynthSpec {
  int num_identities = 20;
  int images_per_identity = 40;
  int image_size = 64;
  Spectrum spectrum = Spectrum::VW;
  bool eyelid = true;
  bool highlight = true;
  bool partial = false;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-image nuisance parameters, in pixels and radians.
struct Pose {
  double cx = 32.0;
  double cy = 32.0;
  double iris_r = 13.0;
  double pupil_r = 5.0;
  double rotation = 0.0;
  double eyelid = 0.0;  // fraction of the iris radius hidden from the top
  bool highlight = false;
  double highlight_x = 0.0;
  double highlight_y = 0.0;
  double highlight_r = 0.0;
  std::uint64_t noise_seed = 0;
};

struct RenderedEye {
  Tensor image;  // [C,H,W], integer values in [0,255]; C = 3 for VW, 1 for NIR
  Box gt_box;    // tight bounding box of the mask, pixel edges
  Tensor mask;   // [H,W] in {0,1}
};

std::uint64_t identity_seed(const SynthSpec& spec, int identity);
Pose sample_pose(const SynthSpec& spec, int identity, int index);
RenderedEye render_eye(std::uint64_t identity_seed, const Pose& pose, const SynthSpec& spec);

// Renders every sample and writes images/, masks/ and manifest.json under out_dir.
DatasetManifest synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
// Validates the schema and that every referenced file exists.
DatasetManifest load_manifest(const std::filesystem::path& path);

// Indexes a UTiris-style tree: <root>/<person>/<VW|NIR>/<Left|Right>/<image> or
// <root>/<VW|NIR>/<person>/<Left|Right>/<image>. Session folders named "RGB Images" and
// "Infrared Images" are also recognized. No ground truth is attached.
DatasetManifest import_utiris(const std::filesystem::path& root);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle, then the first round(train_fraction * n) samples train.
SplitIndices detector_split(std::size_t n, double train_fraction, std::uint64_t seed);

}  // namespace iris
