#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "iris/datagen.hpp"
#include "iris/detector.hpp"
#include "iris/preprocess.hpp"

namespace iris {

struct ExtractedSample {
  std::string tensor_path;  // .npy holding [3,S,S] in [0,1]
  int identity = 0;
  Eye eye = Eye::Left;
  Spectrum spectrum = Spectrum::VW;
  Box box;                  // crop box in source-image pixels
  bool detected = true;     // false when the detector found nothing and the whole frame was used
  std::string source;       // originating image path
};

struct ExtractedDataset {
  int side = 0;
  std::vector<ExtractedSample> samples;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& rel) const;
};

enum class BoxSource { Detector, GroundTruth };

struct ExtractOptions {
  BoxSource boxes = BoxSource::Detector;
  PipelineConfig pipeline;
};

// Detects (or looks up) the iris box of each sample, runs the normalization pipeline and
// stores one tensor per sample under out_dir along with extracted.json. `detector` may be
// null when boxes come from ground truth. Frames larger or smaller than the detector input
// are resized for detection and the box is mapped back.
ExtractedDataset extract_dataset(const DatasetManifest& manifest, ParamSet* detector, const DetectorConfig& dcfg,
                                 const ExtractOptions& opts, const std::filesystem::path& out_dir);

void save_extracted(const ExtractedDataset& d, const std::filesystem::path& path);
ExtractedDataset load_extracted(const std::filesystem::path& path);

// Best box for a full-resolution frame.
std::optional<Box> locate_iris(const Tensor& image, ParamSet& detector, const DetectorConfig& dcfg);

}  // namespace iris
