#include "iris/extract.hpp"

#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "iris/error.hpp"
#include "iris/image_io.hpp"
#include "iris/ops.hpp"

namespace iris {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path ExtractedDataset::resolve(const std::string& rel) const {
  const fs::path p(rel);
  return p.is_absolute() ? p : base_dir / p;
}

std::optional<Box> locate_iris(const Tensor& image, ParamSet& detector, const DetectorConfig& dcfg) {
  require(image.rank() == 3, "image must be [C,H,W], got " + shape_str(image.shape()));
  const int h = image.dim(1), w = image.dim(2), s = dcfg.input_size;
  if (h == s && w == s) {
    const auto det = detect_best_region(image, detector, dcfg);
    if (!det) return std::nullopt;
    return det->box;
  }
  Tape tape(false);
  const Var resized = resize_bilinear(tape, tape.constant(image.reshaped({1, image.dim(0), h, w})), s, s);
  const Tensor& r = tape.value(resized);
  const auto det = detect_best_region(r.reshaped({image.dim(0), s, s}), detector, dcfg);
  if (!det) return std::nullopt;
  const double sx = static_cast<double>(w) / s, sy = static_cast<double>(h) / s;
  return clip_box(Box{det->box.x_min * sx, det->box.y_min * sy, det->box.x_max * sx, det->box.y_max * sy}, w, h);
}

ExtractedDataset extract_dataset(const DatasetManifest& manifest, ParamSet* detector, const DetectorConfig& dcfg,
                                 const ExtractOptions& opts, const fs::path& out_dir) {
  opts.pipeline.validate();
  require(opts.boxes == BoxSource::GroundTruth || detector != nullptr, "detector boxes requested without detector weights");
  fs::create_directories(out_dir / "tensors");
  ExtractedDataset out;
  out.side = opts.pipeline.output_size();
  out.base_dir = out_dir;
  for (std::size_t i = 0; i < manifest.samples.size(); ++i) {
    const IrisSample& s = manifest.samples[i];
    const Tensor image = read_image(manifest.resolve(s.image_path));
    ExtractedSample e;
    e.identity = s.identity;
    e.eye = s.eye;
    e.spectrum = s.spectrum;
    e.source = s.image_path;
    if (opts.boxes == BoxSource::GroundTruth) {
      require(s.gt_box.has_value(), "sample " + s.image_path + " has no ground-truth box");
      e.box = *s.gt_box;
    } else if (auto b = locate_iris(image, *detector, dcfg)) {
      e.box = *b;
    } else {
      e.box = Box{0, 0, static_cast<double>(image.dim(2)), static_cast<double>(image.dim(1))};
      e.detected = false;
    }
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.npy", i);
    e.tensor_path = std::string("tensors/") + name;
    write_npy(out.resolve(e.tensor_path), preprocess_pipeline(image, e.box, opts.pipeline));
    out.samples.push_back(std::move(e));
  }
  save_extracted(out, out_dir / "extracted.json");
  return out;
}

void save_extracted(const ExtractedDataset& d, const fs::path& path) {
  json j{{"version", 1}, {"side", d.side}, {"samples", json::array()}};
  for (const auto& s : d.samples)
    j["samples"].push_back({{"path", s.tensor_path},
                            {"identity", s.identity},
                            {"eye", to_string(s.eye)},
                            {"spectrum", to_string(s.spectrum)},
                            {"box", {s.box.x_min, s.box.y_min, s.box.x_max, s.box.y_max}},
                            {"detected", s.detected},
                            {"source", s.source}});
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

ExtractedDataset load_extracted(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  ExtractedDataset d;
  d.base_dir = path.parent_path();
  try {
    json j;
    in >> j;
    d.side = j.at("side").get<int>();
    const json& samples = j.at("samples");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const json& r = samples[i];
      try {
        ExtractedSample s;
        s.tensor_path = r.at("path").get<std::string>();
        s.identity = r.at("identity").get<int>();
        s.eye = parse_eye(r.at("eye").get<std::string>());
        s.spectrum = parse_spectrum(r.at("spectrum").get<std::string>());
        const auto b = r.at("box").get<std::vector<double>>();
        require(b.size() == 4, "box must have 4 entries");
        s.box = Box{b[0], b[1], b[2], b[3]};
        s.detected = r.value("detected", true);
        s.source = r.value("source", "");
        d.samples.push_back(std::move(s));
      } catch (const std::exception& e) {
        throw ContractViolation("extracted record " + std::to_string(i) + ": " + e.what());
      }
    }
  } catch (const json::exception& e) {
    throw ContractViolation(path.string() + ": " + e.what());
  }
  require(d.side > 0, "extracted dataset side must be positive");
  for (const auto& s : d.samples)
    if (!fs::exists(d.resolve(s.tensor_path))) throw IoError("missing extracted tensor " + d.resolve(s.tensor_path).string());
  return d;
}

}  // namespace iris
