#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "iris/classifier.hpp"
#include "iris/datagen.hpp"
#include "iris/extract.hpp"
#include "iris/optim.hpp"

namespace iris {

struct FoldPlan {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<std::size_t>> folds;  // sample indices per fold, ascending

  // Indices outside `fold`, ascending.
  std::vector<std::size_t> training_indices(int fold) const;
};

// Per-class seeded shuffle, then round-robin over folds. The fold counter carries over from
// one class to the next so totals also stay balanced.
FoldPlan make_folds(std::span<const int> labels, int k, std::uint64_t seed);

struct TrainConfig {
  int k = 5;
  int batch_size = 8;
  int epochs = 17;
  OptimizerKind optimizer = OptimizerKind::AmsGrad;
  OptimHyper optim{};  // lr 1e-4
  int patience = 3;
  bool early_stopping = false;
  std::uint64_t seed = 0;
  Spectrum session = Spectrum::VW;
  LabelLevel labels = LabelLevel::Identity;

  void validate() const;
};

enum class Split { Train, Val };
std::string to_string(Split s);

struct MetricsRecord {
  int fold = 0;
  int epoch = 0;  // 1-based
  Split split = Split::Train;
  double accuracy = 0.0;  // percent
  double loss = 0.0;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

// Value as it reads back from the metrics CSV (6 decimals). Records hold quantized values.
double quantize_metric(double v);

// Normalized crops [3,S,S] with dense class labels.
struct ClassifierDataset {
  std::vector<Tensor> images;
  std::vector<int> labels;
  int num_classes = 0;
  int side = 0;
};

// Samples of one session, labelled at identity or eye level.
ClassifierDataset load_classifier_dataset(const ExtractedDataset& d, Spectrum session, LabelLevel level);

struct EvalResult {
  double accuracy = 0.0;  // percent
  double loss = 0.0;      // mean cross entropy
};
EvalResult evaluate(ParamSet& params, const ClassifierConfig& cfg, const ClassifierDataset& data,
                    std::span<const std::size_t> indices);

// True when each of the last `patience` accuracies failed to exceed the best one before it.
bool early_stop(std::span<const double> val_accuracy, int patience);

struct FoldResult {
  ParamSet best_params;  // from the best-val-accuracy epoch
  std::vector<MetricsRecord> records;
  double benchmark = 0.0;  // max val accuracy
  double best_loss = 0.0;  // min val loss
  int best_epoch = 0;
  int epochs_run = 0;
};
FoldResult train_classifier_fold(const ClassifierDataset& data, int fold, const FoldPlan& plan,
                                 const ClassifierConfig& ccfg, const TrainConfig& tcfg);

struct CrossvalSummary {
  Spectrum session = Spectrum::VW;
  std::vector<double> benchmarks;
  double average_accuracy = 0.0;
  std::vector<double> best_losses;
  double mean_loss = 0.0;  // unweighted mean over folds
};

struct CrossvalResult {
  std::vector<MetricsRecord> records;  // ordered by fold, epoch, split
  CrossvalSummary summary;
  std::vector<ParamSet> fold_params;
};

// Classifier num_classes is taken from the dataset.
CrossvalResult run_crossval(const ClassifierDataset& data, ClassifierConfig ccfg, const TrainConfig& tcfg);

// Mean of the per-session average accuracies.
double overall_accuracy(std::span<const CrossvalSummary> sessions);

// Benchmark per fold and their mean, recomputed from records.
CrossvalSummary summarize(std::span<const MetricsRecord> records);

void write_metrics(std::span<const MetricsRecord> records, const std::filesystem::path& path);
std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);
// Accuracy and loss panels with one validation polyline per fold in each.
void emit_curves(std::span<const MetricsRecord> records, const std::filesystem::path& path);

}  // namespace iris
