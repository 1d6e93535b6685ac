#include "iris/config.hpp"

#include <fstream>
#include <set>

#include "iris/error.hpp"

namespace iris {

using nlohmann::json;

namespace {

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  require(j.is_object(), where + " must be an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    require(allowed.count(k) > 0, "unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
}

template <class T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ContractViolation("config key '" + where + "." + key + "' has the wrong type");
  }
}

std::string optimizer_name(OptimizerKind k) { return k == OptimizerKind::AmsGrad ? "amsgrad" : "adam"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "amsgrad") return OptimizerKind::AmsGrad;
  if (s == "adam") return OptimizerKind::Adam;
  throw ContractViolation("unknown optimizer '" + s + "' (expected amsgrad or adam)");
}

json hyper_json(const OptimHyper& h) {
  return {{"lr", h.lr}, {"beta1", h.beta1}, {"beta2", h.beta2}, {"epsilon", h.epsilon}, {"clip_norm", h.clip_norm}};
}

void read_hyper(const json& j, OptimHyper& h, const std::string& where) {
  read(j, "lr", h.lr, where);
  read(j, "beta1", h.beta1, where);
  read(j, "beta2", h.beta2, where);
  read(j, "epsilon", h.epsilon, where);
  read(j, "clip_norm", h.clip_norm, where);
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t s) {
  seed = s;
  synth.seed = s;
  detector_train.seed = s;
  train.seed = s;
}

void RunConfig::validate() const {
  synth.validate();
  detector.validate();
  detector_train.validate();
  require(detector_split > 0.0 && detector_split < 1.0, "detector split must lie in (0,1)");
  pipeline.validate();
  train.validate();
}

json to_json(const DetectorConfig& c) {
  return {{"input_size", c.input_size},
          {"in_channels", c.in_channels},
          {"backbone_widths", c.backbone_widths},
          {"convs_per_block", c.convs_per_block},
          {"rpn_width", c.rpn_width},
          {"mask_width", c.mask_width},
          {"mask_pool", c.mask_pool},
          {"mask_size", c.mask_size},
          {"anchors",
           {{"stride", c.anchors.stride}, {"scales", c.anchors.scales}, {"ratios", c.anchors.ratios}, {"base_size", c.anchors.base_size}}},
          {"pos_iou", c.pos_iou},
          {"neg_iou", c.neg_iou},
          {"anchors_per_image", c.anchors_per_image},
          {"positive_fraction", c.positive_fraction},
          {"delta_std", c.delta_std},
          {"nms_iou", c.nms_iou},
          {"score_floor", c.score_floor},
          {"pre_nms_top_n", c.pre_nms_top_n}};
}

DetectorConfig detector_config_from_json(const json& j, DetectorConfig c) {
  const std::string w = "detector";
  only_keys(j, w,
            {"input_size", "in_channels", "backbone_widths", "convs_per_block", "rpn_width", "mask_width", "mask_pool",
             "mask_size", "anchors", "pos_iou", "neg_iou", "anchors_per_image", "positive_fraction", "delta_std", "nms_iou",
             "score_floor", "pre_nms_top_n"});
  read(j, "input_size", c.input_size, w);
  read(j, "in_channels", c.in_channels, w);
  read(j, "backbone_widths", c.backbone_widths, w);
  read(j, "convs_per_block", c.convs_per_block, w);
  read(j, "rpn_width", c.rpn_width, w);
  read(j, "mask_width", c.mask_width, w);
  read(j, "mask_pool", c.mask_pool, w);
  read(j, "mask_size", c.mask_size, w);
  if (j.contains("anchors")) {
    const json& a = j.at("anchors");
    only_keys(a, w + ".anchors", {"stride", "scales", "ratios", "base_size"});
    read(a, "stride", c.anchors.stride, w + ".anchors");
    read(a, "scales", c.anchors.scales, w + ".anchors");
    read(a, "ratios", c.anchors.ratios, w + ".anchors");
    read(a, "base_size", c.anchors.base_size, w + ".anchors");
  }
  read(j, "pos_iou", c.pos_iou, w);
  read(j, "neg_iou", c.neg_iou, w);
  read(j, "anchors_per_image", c.anchors_per_image, w);
  read(j, "positive_fraction", c.positive_fraction, w);
  read(j, "delta_std", c.delta_std, w);
  read(j, "nms_iou", c.nms_iou, w);
  read(j, "score_floor", c.score_floor, w);
  read(j, "pre_nms_top_n", c.pre_nms_top_n, w);
  return c;
}

json to_json(const ClassifierConfig& c) {
  return {{"num_classes", c.num_classes}, {"input_size", c.input_size}, {"widths", c.widths}, {"pool_stack", c.pool_stack}};
}

ClassifierConfig classifier_config_from_json(const json& j, ClassifierConfig c) {
  const std::string w = "classifier";
  only_keys(j, w, {"num_classes", "input_size", "widths", "pool_stack"});
  read(j, "num_classes", c.num_classes, w);
  read(j, "input_size", c.input_size, w);
  read(j, "widths", c.widths, w);
  read(j, "pool_stack", c.pool_stack, w);
  return c;
}

json to_json(const RunConfig& c) {
  return {
      {"seed", c.seed},
      {"output_root", c.output_root},
      {"synth",
       {{"ids", c.synth.num_identities},
        {"per_id", c.synth.images_per_identity},
        {"image_size", c.synth.image_size},
        {"spectrum", to_string(c.synth.spectrum)},
        {"eyelid", c.synth.eyelid},
        {"highlight", c.synth.highlight},
        {"partial", c.synth.partial},
        {"seed", c.synth.seed}}},
      {"detector", to_json(c.detector)},
      {"detector_train",
       {{"epochs", c.detector_train.epochs},
        {"batch_size", c.detector_train.batch_size},
        {"optimizer", optimizer_name(c.detector_train.optimizer)},
        {"hyper", hyper_json(c.detector_train.optim)},
        {"seed", c.detector_train.seed},
        {"split", c.detector_split}}},
      {"pipeline", {{"side", c.pipeline.side}, {"classifier_input", c.pipeline.classifier_input}, {"center", c.pipeline.center}}},
      {"classifier", {{"widths", c.classifier.widths}, {"pool_stack", c.classifier.pool_stack}}},
      {"train",
       {{"k", c.train.k},
        {"batch_size", c.train.batch_size},
        {"epochs", c.train.epochs},
        {"optimizer", optimizer_name(c.train.optimizer)},
        {"hyper", hyper_json(c.train.optim)},
        {"patience", c.train.patience},
        {"early_stopping", c.train.early_stopping},
        {"seed", c.train.seed},
        {"session", to_string(c.train.session)},
        {"labels", c.train.labels == LabelLevel::Identity ? "identity" : "eye"}}},
      {"paths",
       {{"data", c.paths.data},
        {"detector", c.paths.detector},
        {"extracted", c.paths.extracted},
        {"metrics", c.paths.metrics},
        {"out", c.paths.out}}},
  };
}

RunConfig merge_config(const json& j, RunConfig c) {
  only_keys(j, "",
            {"seed", "output_root", "synth", "detector", "detector_train", "pipeline", "classifier", "train", "paths",
             "command", "argv", "results"});
  if (j.contains("seed")) c.apply_seed(j.at("seed").get<std::uint64_t>());
  read(j, "output_root", c.output_root, "");

  if (j.contains("synth")) {
    const json& s = j.at("synth");
    only_keys(s, "synth", {"ids", "per_id", "image_size", "spectrum", "eyelid", "highlight", "partial", "seed"});
    read(s, "ids", c.synth.num_identities, "synth");
    read(s, "per_id", c.synth.images_per_identity, "synth");
    read(s, "image_size", c.synth.image_size, "synth");
    if (s.contains("spectrum")) c.synth.spectrum = parse_spectrum(s.at("spectrum").get<std::string>());
    read(s, "eyelid", c.synth.eyelid, "synth");
    read(s, "highlight", c.synth.highlight, "synth");
    read(s, "partial", c.synth.partial, "synth");
    read(s, "seed", c.synth.seed, "synth");
  }
  if (j.contains("detector")) c.detector = detector_config_from_json(j.at("detector"), c.detector);
  if (j.contains("detector_train")) {
    const json& t = j.at("detector_train");
    only_keys(t, "detector_train", {"epochs", "batch_size", "optimizer", "hyper", "seed", "split"});
    read(t, "epochs", c.detector_train.epochs, "detector_train");
    read(t, "batch_size", c.detector_train.batch_size, "detector_train");
    if (t.contains("optimizer")) c.detector_train.optimizer = parse_optimizer(t.at("optimizer").get<std::string>());
    if (t.contains("hyper")) {
      only_keys(t.at("hyper"), "detector_train.hyper", {"lr", "beta1", "beta2", "epsilon", "clip_norm"});
      read_hyper(t.at("hyper"), c.detector_train.optim, "detector_train.hyper");
    }
    read(t, "seed", c.detector_train.seed, "detector_train");
    read(t, "split", c.detector_split, "detector_train");
  }
  if (j.contains("pipeline")) {
    const json& p = j.at("pipeline");
    only_keys(p, "pipeline", {"side", "classifier_input", "center"});
    read(p, "side", c.pipeline.side, "pipeline");
    read(p, "classifier_input", c.pipeline.classifier_input, "pipeline");
    read(p, "center", c.pipeline.center, "pipeline");
  }
  if (j.contains("classifier")) {
    const json& k = j.at("classifier");
    only_keys(k, "classifier", {"widths", "pool_stack"});
    read(k, "widths", c.classifier.widths, "classifier");
    read(k, "pool_stack", c.classifier.pool_stack, "classifier");
  }
  if (j.contains("train")) {
    const json& t = j.at("train");
    only_keys(t, "train",
              {"k", "batch_size", "epochs", "optimizer", "hyper", "patience", "early_stopping", "seed", "session", "labels"});
    read(t, "k", c.train.k, "train");
    read(t, "batch_size", c.train.batch_size, "train");
    read(t, "epochs", c.train.epochs, "train");
    if (t.contains("optimizer")) c.train.optimizer = parse_optimizer(t.at("optimizer").get<std::string>());
    if (t.contains("hyper")) {
      only_keys(t.at("hyper"), "train.hyper", {"lr", "beta1", "beta2", "epsilon", "clip_norm"});
      read_hyper(t.at("hyper"), c.train.optim, "train.hyper");
    }
    read(t, "patience", c.train.patience, "train");
    read(t, "early_stopping", c.train.early_stopping, "train");
    read(t, "seed", c.train.seed, "train");
    if (t.contains("session")) c.train.session = parse_spectrum(t.at("session").get<std::string>());
    if (t.contains("labels")) {
      const std::string l = t.at("labels").get<std::string>();
      require(l == "identity" || l == "eye", "train.labels must be identity or eye, got '" + l + "'");
      c.train.labels = l == "identity" ? LabelLevel::Identity : LabelLevel::Eye;
    }
  }
  if (j.contains("paths")) {
    const json& p = j.at("paths");
    only_keys(p, "paths", {"data", "detector", "extracted", "metrics", "out"});
    read(p, "data", c.paths.data, "paths");
    read(p, "detector", c.paths.detector, "paths");
    read(p, "extracted", c.paths.extracted, "paths");
    read(p, "metrics", c.paths.metrics, "paths");
    read(p, "out", c.paths.out, "paths");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ContractViolation("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return merge_config(j, std::move(base));
}

}  // namespace iris
