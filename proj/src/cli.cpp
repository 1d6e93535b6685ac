#include "iris/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>

#include <CLI11.hpp>

#include "iris/checkpoint.hpp"
#include "iris/config.hpp"
#include "iris/error.hpp"
#include "iris/extract.hpp"
#include "iris/grad_suite.hpp"
#include "iris/harness.hpp"

namespace iris {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flag values that override the config file when given.
struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, output_root, data, detector, metrics, session, labels;
  std::optional<int> ids, per_id, size, epochs, k, batch, side, classifier_input, fold, seeds;
  std::optional<double> lr, split, epsilon, tolerance;
  bool partial = false, no_eyelid = false, no_highlight = false, gt_boxes = false, early_stop = false;
  std::string filter;
};

RunConfig resolve(const Overrides& o) {
  RunConfig cfg;
  if (!o.config.empty()) cfg = load_config(o.config);
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) cfg.output_root = env;
  if (o.output_root) cfg.output_root = *o.output_root;
  if (o.seed) cfg.apply_seed(*o.seed);
  if (o.out) cfg.paths.out = *o.out;
  if (o.data) cfg.paths.data = *o.data;
  if (o.detector) cfg.paths.detector = *o.detector;
  if (o.metrics) cfg.paths.metrics = *o.metrics;
  if (o.ids) cfg.synth.num_identities = *o.ids;
  if (o.per_id) cfg.synth.images_per_identity = *o.per_id;
  if (o.size) cfg.synth.image_size = *o.size;
  if (o.partial) cfg.synth.partial = true;
  if (o.no_eyelid) cfg.synth.eyelid = false;
  if (o.no_highlight) cfg.synth.highlight = false;
  if (o.side) cfg.pipeline.side = *o.side;
  if (o.classifier_input) cfg.pipeline.classifier_input = *o.classifier_input;
  if (o.k) cfg.train.k = *o.k;
  if (o.batch) cfg.train.batch_size = *o.batch;
  if (o.early_stop) cfg.train.early_stopping = true;
  if (o.labels) {
    require(*o.labels == "identity" || *o.labels == "eye", "--labels must be identity or eye");
    cfg.train.labels = *o.labels == "identity" ? LabelLevel::Identity : LabelLevel::Eye;
  }
  return cfg;
}

fs::path under_root(const RunConfig& cfg, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : fs::path(cfg.output_root) / path;
}

fs::path manifest_path(const fs::path& p) { return fs::is_directory(p) ? p / "manifest.json" : p; }

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(1) << '\n';
}

// The run manifest is a config file: `<command> --config <manifest>` repeats the run.
void write_run_manifest(const fs::path& path, const std::string& command, const std::vector<std::string>& argv,
                        const RunConfig& cfg, const json& results) {
  json j = to_json(cfg);
  j["command"] = command;
  j["argv"] = argv;
  j["results"] = results;
  write_json(path, j);
}

std::string pct(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

ClassifierConfig classifier_for(const RunConfig& cfg, const ClassifierDataset& data) {
  ClassifierConfig c = cfg.classifier;
  c.num_classes = data.num_classes;
  c.input_size = data.side;
  return c;
}

int cmd_gen_data(RunConfig cfg, const std::vector<std::string>& argv, std::ostream& out) {
  if (cfg.paths.out.empty()) cfg.paths.out = "data";
  cfg.synth.validate();
  const fs::path dir = under_root(cfg, cfg.paths.out);
  const DatasetManifest m = synth_dataset(cfg.synth, dir);
  const ClassCounts c = class_counts(m);
  write_run_manifest(dir / "run.json", "gen-data", argv, cfg,
                     {{"samples", m.samples.size()}, {"identities", c.identities}, {"eye_classes", c.eye_classes}});
  out << "wrote " << m.samples.size() << " samples (" << c.identities << " identities) to " << dir.string() << "\n";
  return 0;
}

int cmd_train_detector(RunConfig cfg, const std::vector<std::string>& argv, std::ostream& out) {
  require(!cfg.paths.data.empty(), "train-detector needs --data");
  if (cfg.paths.out.empty()) cfg.paths.out = "detector.ckpt";
  cfg.detector.validate();
  cfg.detector_train.validate();
  const DatasetManifest m = load_manifest(manifest_path(under_root(cfg, cfg.paths.data)));
  const SplitIndices split = detector_split(m.samples.size(), cfg.detector_split, cfg.detector_train.seed);
  DetectorTrainResult r = train_detector(m, split.train, cfg.detector, cfg.detector_train);
  const DetectionEval e = evaluate_detector(m, split.test, r.params, cfg.detector);

  const fs::path ckpt = under_root(cfg, cfg.paths.out);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, r.params, nullptr,
                  {{"kind", "detector"}, {"config", to_json(cfg.detector).dump()}, {"best_epoch", std::to_string(r.best_epoch)}});
  json trace = json::array();
  for (const auto& t : r.trace) trace.push_back({{"cls", t.l_cls}, {"box", t.l_box}, {"mask", t.l_mask}, {"total", t.total}});
  write_run_manifest(ckpt.string() + ".run.json", "train-detector", argv, cfg,
                     {{"train", split.train.size()},
                      {"test", split.test.size()},
                      {"best_epoch", r.best_epoch},
                      {"trace", trace},
                      {"mean_iou", e.mean_iou},
                      {"success_rate", e.success_rate},
                      {"missed", e.missed}});
  out << "trained on " << split.train.size() << " images, best epoch " << r.best_epoch + 1 << "\n";
  out << "held-out " << e.evaluated << ": mean IoU " << std::setprecision(4) << e.mean_iou << ", success "
      << pct(100.0 * e.success_rate) << "%, missed " << e.missed << "\n";
  return 0;
}

DetectorConfig detector_from_checkpoint(const Checkpoint& c) {
  const auto it = c.meta.find("config");
  require(it != c.meta.end(), "checkpoint does not record a detector config");
  return detector_config_from_json(json::parse(it->second));
}

int cmd_extract(RunConfig cfg, const std::vector<std::string>& argv, std::ostream& out, bool gt_boxes) {
  require(!cfg.paths.data.empty(), "extract needs --data");
  if (cfg.paths.out.empty()) cfg.paths.out = "extracted";
  const DatasetManifest m = load_manifest(manifest_path(under_root(cfg, cfg.paths.data)));
  ExtractOptions opts;
  opts.pipeline = cfg.pipeline;
  opts.boxes = gt_boxes ? BoxSource::GroundTruth : BoxSource::Detector;
  std::optional<Checkpoint> ckpt;
  if (!gt_boxes) {
    require(!cfg.paths.detector.empty(), "extract needs --detector or --gt-boxes");
    ckpt = load_checkpoint(under_root(cfg, cfg.paths.detector));
    cfg.detector = detector_from_checkpoint(*ckpt);
  }
  const fs::path dir = under_root(cfg, cfg.paths.out);
  const ExtractedDataset d = extract_dataset(m, ckpt ? &ckpt->params : nullptr, cfg.detector, opts, dir);
  std::size_t missed = 0;
  for (const auto& s : d.samples) missed += !s.detected;
  write_run_manifest(dir / "run.json", "extract", argv, cfg,
                     {{"samples", d.samples.size()}, {"side", d.side}, {"undetected", missed}, {"gt_boxes", gt_boxes}});
  out << "extracted " << d.samples.size() << " crops at " << d.side << "x" << d.side << " to " << dir.string();
  if (missed) out << " (" << missed << " without a detection used the full frame)";
  out << "\n";
  return 0;
}

int cmd_train_classifier(RunConfig cfg, const std::vector<std::string>& argv, std::ostream& out, int fold) {
  require(!cfg.paths.data.empty(), "train-classifier needs --data (an extracted dataset)");
  if (cfg.paths.out.empty()) cfg.paths.out = "classifier.ckpt";
  cfg.train.validate();
  const ExtractedDataset ex = load_extracted(under_root(cfg, cfg.paths.data) / "extracted.json");
  const ClassifierDataset data = load_classifier_dataset(ex, cfg.train.session, cfg.train.labels);
  const ClassifierConfig cc = classifier_for(cfg, data);
  const FoldPlan plan = make_folds(data.labels, cfg.train.k, derive_seed(cfg.train.seed, {0xf01d5}));
  require(fold >= 0 && fold < cfg.train.k, "--fold must lie in [0, k)");
  const FoldResult r = train_classifier_fold(data, fold, plan, cc, cfg.train);

  const fs::path ckpt = under_root(cfg, cfg.paths.out);
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  save_checkpoint(ckpt, r.best_params, nullptr,
                  {{"kind", "classifier"}, {"config", to_json(cc).dump()}, {"best_epoch", std::to_string(r.best_epoch)}});
  write_metrics(r.records, ckpt.string() + ".metrics.csv");
  write_run_manifest(ckpt.string() + ".run.json", "train-classifier", argv, cfg,
                     {{"fold", fold}, {"benchmark", r.benchmark}, {"best_epoch", r.best_epoch}, {"epochs_run", r.epochs_run}});
  out << "fold " << fold + 1 << ": best val accuracy " << pct(r.benchmark) << "% at epoch " << r.best_epoch << "\n";
  return 0;
}

void print_summary(std::ostream& out, const CrossvalSummary& s) {
  for (std::size_t f = 0; f < s.benchmarks.size(); ++f)
    out << "  fold " << f + 1 << ": " << pct(s.benchmarks[f]) << "%  loss " << std::setprecision(4) << s.best_losses[f] << "\n";
  out << "  average accuracy " << pct(s.average_accuracy) << "%, mean loss " << std::setprecision(4) << s.mean_loss << "\n";
}

json summary_json(const CrossvalSummary& s) {
  return {{"session", to_string(s.session)},
          {"benchmarks", s.benchmarks},
          {"average_accuracy", s.average_accuracy},
          {"best_losses", s.best_losses},
          {"mean_loss", s.mean_loss}};
}

int cmd_crossval(RunConfig cfg, const std::vector<std::string>& argv, std::ostream& out, const std::string& session) {
  require(!cfg.paths.data.empty(), "crossval needs --data (an extracted dataset)");
  if (cfg.paths.out.empty()) cfg.paths.out = "crossval";
  cfg.train.validate();
  const ExtractedDataset ex = load_extracted(under_root(cfg, cfg.paths.data) / "extracted.json");
  const fs::path dir = under_root(cfg, cfg.paths.out);

  std::vector<Spectrum> sessions;
  if (session == "both") sessions = {Spectrum::VW, Spectrum::NIR};
  else sessions = {session.empty() ? cfg.train.session : parse_spectrum(session)};

  std::vector<CrossvalSummary> summaries;
  json results = json::array();
  for (Spectrum s : sessions) {
    TrainConfig tc = cfg.train;
    tc.session = s;
    const ClassifierDataset data = load_classifier_dataset(ex, s, tc.labels);
    const CrossvalResult r = run_crossval(data, classifier_for(cfg, data), tc);
    const fs::path sub = sessions.size() > 1 ? dir / to_string(s) : dir;
    write_metrics(r.records, sub / "metrics.csv");
    emit_curves(r.records, sub / "curves.svg");
    out << to_string(s) << " session (" << data.images.size() << " images, " << data.num_classes << " classes)\n";
    print_summary(out, r.summary);
    summaries.push_back(r.summary);
    results.push_back(summary_json(r.summary));
  }
  json summary{{"sessions", results}};
  if (summaries.size() > 1) {
    summary["overall_accuracy"] = overall_accuracy(summaries);
    out << "overall accuracy " << pct(overall_accuracy(summaries)) << "%\n";
  }
  write_json(dir / "summary.json", summary);
  write_run_manifest(dir / "run.json", "crossval", argv, cfg, summary);
  return 0;
}

int cmd_report(RunConfig cfg, const std::vector<std::string>& argv, std::ostream& out) {
  require(!cfg.paths.metrics.empty(), "report needs --metrics");
  const fs::path csv = under_root(cfg, cfg.paths.metrics);
  if (cfg.paths.out.empty()) cfg.paths.out = fs::path(csv).replace_extension(".svg").string();
  const auto records = read_metrics(csv);
  const fs::path svg = under_root(cfg, cfg.paths.out);
  emit_curves(records, svg);
  const CrossvalSummary s = summarize(records);
  print_summary(out, s);
  write_run_manifest(svg.string() + ".run.json", "report", argv, cfg, summary_json(s));
  out << "wrote " << svg.string() << "\n";
  return 0;
}

int cmd_gradcheck(RunConfig cfg, const std::vector<std::string>& argv, std::ostream& out, const Overrides& o) {
  const int seeds = o.seeds.value_or(20);
  const double eps = o.epsilon.value_or(1e-3), tol = o.tolerance.value_or(1e-3);
  const auto results = run_gradient_suite(seeds, eps, tol, o.filter);
  require(!results.empty(), "no gradient case matches '" + o.filter + "'");
  bool ok = true;
  json rows = json::array();
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(32) << r.name << " max rel " << std::scientific
        << std::setprecision(2) << r.max_rel_error << std::defaultfloat << "  checked " << r.entries_checked << ", skipped "
        << r.entries_skipped << "\n";
    ok = ok && r.passed;
    rows.push_back({{"name", r.name},
                    {"passed", r.passed},
                    {"max_rel_error", r.max_rel_error},
                    {"checked", r.entries_checked},
                    {"skipped", r.entries_skipped},
                    {"worst", r.worst_entry}});
  }
  if (!cfg.paths.out.empty())
    write_run_manifest(under_root(cfg, cfg.paths.out), "gradcheck", argv, cfg,
                       {{"seeds", seeds}, {"epsilon", eps}, {"tolerance", tol}, {"cases", rows}});
  if (!ok) throw NumericError("gradient check failed");
  return 0;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Iris localization and recognition toolkit", "iris"};
  app.require_subcommand(1, 1);
  Overrides o;
  std::string session;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "JSON run configuration");
    sub->add_option("--seed", o.seed, "seed for every component");
    sub->add_option("--out", o.out, "output path");
    sub->add_option("--output-root", o.output_root, std::string("base for relative paths (env ") + kOutputRootEnv + ")");
  };
  auto* gen = app.add_subcommand("gen-data", "synthesize an iris dataset");
  common(gen);
  gen->add_option("--ids", o.ids, "identities");
  gen->add_option("--per-id", o.per_id, "images per identity");
  gen->add_option("--size", o.size, "image side in pixels");
  gen->add_option("--spectrum", session, "VW or NIR");
  gen->add_flag("--partial", o.partial, "allow partially captured eyes");
  gen->add_flag("--no-eyelid", o.no_eyelid, "disable eyelid occlusion");
  gen->add_flag("--no-highlight", o.no_highlight, "disable specular highlights");

  auto* det = app.add_subcommand("train-detector", "train and evaluate the iris detector");
  common(det);
  det->add_option("--data", o.data, "dataset manifest or directory");
  det->add_option("--epochs", o.epochs, "training epochs");
  det->add_option("--split", o.split, "training fraction");
  det->add_option("--lr", o.lr, "learning rate");

  auto* ext = app.add_subcommand("extract", "detect, crop and normalize every sample");
  common(ext);
  ext->add_option("--data", o.data, "dataset manifest or directory");
  ext->add_option("--detector", o.detector, "detector checkpoint");
  ext->add_flag("--gt-boxes", o.gt_boxes, "crop ground-truth boxes instead of detections");
  ext->add_option("--side", o.side, "square side S");
  ext->add_option("--classifier-input", o.classifier_input, "final resize (0 keeps S)");

  int fold = 0;
  auto* cls = app.add_subcommand("train-classifier", "train one fold of the classifier");
  common(cls);
  cls->add_option("--data", o.data, "extracted dataset directory");
  cls->add_option("--fold", fold, "held-out fold index (0-based)");
  cls->add_option("--epochs", o.epochs, "epochs");
  cls->add_option("--lr", o.lr, "learning rate");
  cls->add_option("--batch", o.batch, "batch size");
  cls->add_option("--k", o.k, "folds");
  cls->add_option("--session", session, "VW or NIR");
  cls->add_option("--labels", o.labels, "identity or eye");
  cls->add_flag("--early-stop", o.early_stop, "stop when validation accuracy plateaus");

  auto* cv = app.add_subcommand("crossval", "k-fold cross validation");
  common(cv);
  cv->add_option("--data", o.data, "extracted dataset directory");
  cv->add_option("--epochs", o.epochs, "epochs");
  cv->add_option("--lr", o.lr, "learning rate");
  cv->add_option("--batch", o.batch, "batch size");
  cv->add_option("--k", o.k, "folds");
  cv->add_option("--session", session, "VW, NIR or both");
  cv->add_option("--labels", o.labels, "identity or eye");
  cv->add_flag("--early-stop", o.early_stop, "stop when validation accuracy plateaus");

  auto* rep = app.add_subcommand("report", "plot a metrics CSV");
  common(rep);
  rep->add_option("--metrics", o.metrics, "metrics CSV")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  common(gc);
  gc->add_option("--seeds", o.seeds, "random seeds per case");
  gc->add_option("--filter", o.filter, "only cases whose name contains this");
  gc->add_option("--epsilon", o.epsilon, "finite-difference step");
  gc->add_option("--tolerance", o.tolerance, "relative error bound");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return 2;
  }

  try {
    RunConfig cfg = resolve(o);
    const std::string name = app.get_subcommands().front()->get_name();
    if (o.epochs) (name == "train-detector" ? cfg.detector_train.epochs : cfg.train.epochs) = *o.epochs;
    if (o.lr) (name == "train-detector" ? cfg.detector_train.optim.lr : cfg.train.optim.lr) = *o.lr;
    if (o.split) cfg.detector_split = *o.split;
    if (name == "gen-data" && !session.empty()) cfg.synth.spectrum = parse_spectrum(session);
    if (name == "train-classifier" && !session.empty()) cfg.train.session = parse_spectrum(session);
    if (name == "crossval" && !session.empty() && session != "both") cfg.train.session = parse_spectrum(session);

    if (name == "gen-data") return cmd_gen_data(cfg, args, out);
    if (name == "train-detector") return cmd_train_detector(cfg, args, out);
    if (name == "extract") return cmd_extract(cfg, args, out, o.gt_boxes);
    if (name == "train-classifier") return cmd_train_classifier(cfg, args, out, fold);
    if (name == "crossval") return cmd_crossval(cfg, args, out, session);
    if (name == "report") return cmd_report(cfg, args, out);
    return cmd_gradcheck(cfg, args, out, o);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace iris
