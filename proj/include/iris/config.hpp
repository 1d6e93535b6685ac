#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "iris/classifier.hpp"
#include "iris/datagen.hpp"
#include "iris/detector.hpp"
#include "iris/harness.hpp"
#include "iris/preprocess.hpp"

namespace iris {

struct RunPaths {
  std::string data;       // dataset manifest (file or directory holding manifest.json)
  std::string detector;   // detector checkpoint
  std::string extracted;  // extracted dataset directory
  std::string metrics;    // metrics CSV for report
  std::string out;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_root = ".";
  SynthSpec synth;
  DetectorConfig detector;
  DetectorTrainConfig detector_train;
  double detector_split = 0.2;
  PipelineConfig pipeline;
  ClassifierConfig classifier;
  TrainConfig train;
  RunPaths paths;

  // Copies the global seed into every component seed.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Overlays the keys present in `j` onto `base`. Unknown keys are rejected; a top-level
// "command", "argv" or "results" entry (as written in run manifests) is ignored.
RunConfig merge_config(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

nlohmann::json to_json(const DetectorConfig& cfg);
DetectorConfig detector_config_from_json(const nlohmann::json& j, DetectorConfig base = {});
nlohmann::json to_json(const ClassifierConfig& cfg);
ClassifierConfig classifier_config_from_json(const nlohmann::json& j, ClassifierConfig base = {});

}  // namespace iris
