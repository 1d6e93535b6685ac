#include "iris/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "iris/error.hpp"
#include "iris/image_io.hpp"
#include "iris/ops.hpp"
#include "iris/rng.hpp"

namespace iris {

namespace fs = std::filesystem;

std::vector<std::size_t> FoldPlan::training_indices(int fold) const {
  require(fold >= 0 && fold < k, "fold " + std::to_string(fold) + " out of range for k=" + std::to_string(k));
  std::vector<std::size_t> out;
  for (int f = 0; f < k; ++f)
    if (f != fold) out.insert(out.end(), folds[f].begin(), folds[f].end());
  std::sort(out.begin(), out.end());
  return out;
}

FoldPlan make_folds(std::span<const int> labels, int k, std::uint64_t seed) {
  require(k >= 2, "k must be at least 2, got " + std::to_string(k));
  require(static_cast<std::size_t>(k) <= labels.size(),
          "k=" + std::to_string(k) + " exceeds the " + std::to_string(labels.size()) + " samples");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.folds.resize(k);
  std::size_t next = 0;
  for (auto& [label, members] : by_class) {
    Rng rng(derive_seed(seed, {0xf01d, static_cast<std::uint64_t>(static_cast<std::uint32_t>(label))}));
    rng.shuffle(members);
    for (std::size_t i : members) plan.folds[next++ % static_cast<std::size_t>(k)].push_back(i);
  }
  for (auto& f : plan.folds) std::sort(f.begin(), f.end());
  return plan;
}

void TrainConfig::validate() const {
  require(k >= 2, "k must be at least 2");
  require(batch_size > 0, "batch_size must be positive");
  require(epochs > 0, "epochs must be positive");
  require(patience >= 1, "patience must be at least 1");
  optim.validate();
}

std::string to_string(Split s) { return s == Split::Train ? "train" : "val"; }

double quantize_metric(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return std::strtod(buf, nullptr);
}

ClassifierDataset load_classifier_dataset(const ExtractedDataset& d, Spectrum session, LabelLevel level) {
  ClassifierDataset out;
  out.side = d.side;
  std::map<std::pair<int, int>, int> rank;
  std::vector<std::pair<int, int>> keys;
  for (const auto& s : d.samples) {
    if (s.spectrum != session) continue;
    const std::pair<int, int> key{s.identity, level == LabelLevel::Eye ? static_cast<int>(s.eye) : 0};
    rank.emplace(key, 0);
    keys.push_back(key);
    Tensor t = read_npy(d.resolve(s.tensor_path));
    require(t.rank() == 3 && t.dim(0) == 3 && t.dim(1) == d.side && t.dim(2) == d.side,
            "extracted tensor " + s.tensor_path + " has shape " + shape_str(t.shape()));
    out.images.push_back(std::move(t));
  }
  require(!out.images.empty(), "no extracted samples for session " + to_string(session));
  int next = 0;
  for (auto& [key, r] : rank) r = next++;
  out.num_classes = next;
  for (const auto& key : keys) out.labels.push_back(rank.at(key));
  return out;
}

namespace {

Tensor stack_batch(const ClassifierDataset& data, std::span<const std::size_t> idx) {
  const int s = data.side;
  const std::size_t numel = static_cast<std::size_t>(3) * s * s;
  Tensor batch({static_cast<int>(idx.size()), 3, s, s});
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const Tensor& img = data.images.at(idx[k]);
    std::copy(img.data().begin(), img.data().end(), batch.data().begin() + static_cast<std::ptrdiff_t>(k * numel));
  }
  return batch;
}

// Summed cross entropy and correct count over rows of logits [B,C].
std::pair<double, int> score_logits(const Tensor& logits, const std::vector<int>& labels) {
  const int b = logits.dim(0), c = logits.dim(1);
  double loss = 0.0;
  int correct = 0;
  for (int i = 0; i < b; ++i) {
    const std::span<const float> row(logits.data().data() + static_cast<std::size_t>(i) * c, static_cast<std::size_t>(c));
    const double top = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (float v : row) z += std::exp(static_cast<double>(v) - top);
    loss += std::log(z) + top - row[labels[i]];
    correct += predict_from_logits(row).label == labels[i];
  }
  return {loss, correct};
}

constexpr std::size_t kEvalChunk = 32;

}  // namespace

EvalResult evaluate(ParamSet& params, const ClassifierConfig& cfg, const ClassifierDataset& data,
                    std::span<const std::size_t> indices) {
  require(!indices.empty(), "evaluate needs a nonempty sample set");
  double loss = 0.0;
  int correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += kEvalChunk) {
    const auto chunk = indices.subspan(start, std::min(kEvalChunk, indices.size() - start));
    std::vector<int> labels;
    for (std::size_t i : chunk) labels.push_back(data.labels.at(i));
    Tape tape(false);
    const Var logits = classifier_forward(tape, params, cfg, tape.constant(stack_batch(data, chunk)));
    const auto [l, c] = score_logits(tape.value(logits), labels);
    loss += l;
    correct += c;
  }
  const double n = static_cast<double>(indices.size());
  return EvalResult{100.0 * correct / n, loss / n};
}

bool early_stop(std::span<const double> val_accuracy, int patience) {
  require(patience >= 1, "patience must be at least 1");
  const std::size_t p = static_cast<std::size_t>(patience);
  if (val_accuracy.size() <= p) return false;
  const std::size_t split = val_accuracy.size() - p;
  double best = *std::max_element(val_accuracy.begin(), val_accuracy.begin() + static_cast<std::ptrdiff_t>(split));
  for (std::size_t i = split; i < val_accuracy.size(); ++i) {
    if (val_accuracy[i] > best) return false;
    best = std::max(best, val_accuracy[i]);
  }
  return true;
}

FoldResult train_classifier_fold(const ClassifierDataset& data, int fold, const FoldPlan& plan,
                                 const ClassifierConfig& ccfg, const TrainConfig& tcfg) {
  tcfg.validate();
  require(static_cast<int>(plan.folds.size()) == plan.k, "fold plan is malformed");
  const std::vector<std::size_t> train = plan.training_indices(fold);
  const std::vector<std::size_t>& val = plan.folds[fold];
  require(!train.empty(), "fold " + std::to_string(fold) + " has an empty training set");
  require(!val.empty(), "fold " + std::to_string(fold) + " has an empty validation set");
  for (std::size_t i : train) require(i < data.images.size(), "fold plan index out of range for dataset");

  const std::uint64_t fseed = derive_seed(tcfg.seed, {0xf0, static_cast<std::uint64_t>(fold)});
  FoldResult result;
  ParamSet params = build_classifier(ccfg, derive_seed(fseed, {1}));
  OptState state = OptState::for_params(params);
  std::vector<double> val_history;

  std::vector<std::size_t> order = train;
  for (int epoch = 1; epoch <= tcfg.epochs; ++epoch) {
    order = train;
    Rng rng(derive_seed(fseed, {2, static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);

    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tcfg.batch_size)) {
      const std::span<const std::size_t> idx(order.data() + start,
                                             std::min<std::size_t>(tcfg.batch_size, order.size() - start));
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(data.labels[i]);
      Tape tape;
      const Var logits = classifier_forward(tape, params, ccfg, tape.constant(stack_batch(data, idx)));
      const Var loss = cross_entropy(tape, logits, labels);
      const auto [l, c] = score_logits(tape.value(logits), labels);
      if (!std::isfinite(l)) throw NumericError("classifier loss became non-finite in fold " + std::to_string(fold));
      loss_sum += l;
      correct += c;
      params.zero_grad();
      tape.backward(loss);
      optimizer_step(tcfg.optimizer, params, state, tcfg.optim);
    }
    const double n = static_cast<double>(order.size());
    result.records.push_back({fold + 1, epoch, Split::Train, quantize_metric(100.0 * correct / n), quantize_metric(loss_sum / n)});

    const EvalResult v = evaluate(params, ccfg, data, val);
    const MetricsRecord rec{fold + 1, epoch, Split::Val, quantize_metric(v.accuracy), quantize_metric(v.loss)};
    result.records.push_back(rec);
    if (epoch == 1 || rec.accuracy > result.benchmark) {
      result.benchmark = rec.accuracy;
      result.best_epoch = epoch;
      result.best_params = params;
    }
    result.best_loss = epoch == 1 ? rec.loss : std::min(result.best_loss, rec.loss);
    result.epochs_run = epoch;
    val_history.push_back(rec.accuracy);
    if (tcfg.early_stopping && early_stop(val_history, tcfg.patience)) break;
  }
  result.best_params.zero_grad();
  return result;
}

CrossvalSummary summarize(std::span<const MetricsRecord> records) {
  std::map<int, std::pair<double, double>> per_fold;  // fold -> (max acc, min loss)
  for (const auto& r : records) {
    if (r.split != Split::Val) continue;
    auto [it, fresh] = per_fold.try_emplace(r.fold, r.accuracy, r.loss);
    if (!fresh) {
      it->second.first = std::max(it->second.first, r.accuracy);
      it->second.second = std::min(it->second.second, r.loss);
    }
  }
  require(!per_fold.empty(), "no validation records to summarize");
  CrossvalSummary s;
  for (const auto& [fold, v] : per_fold) {
    s.benchmarks.push_back(v.first);
    s.best_losses.push_back(v.second);
  }
  const double k = static_cast<double>(per_fold.size());
  s.average_accuracy = std::accumulate(s.benchmarks.begin(), s.benchmarks.end(), 0.0) / k;
  s.mean_loss = std::accumulate(s.best_losses.begin(), s.best_losses.end(), 0.0) / k;
  return s;
}

CrossvalResult run_crossval(const ClassifierDataset& data, ClassifierConfig ccfg, const TrainConfig& tcfg) {
  tcfg.validate();
  ccfg.num_classes = data.num_classes;
  ccfg.input_size = data.side;
  ccfg.validate();
  const FoldPlan plan = make_folds(data.labels, tcfg.k, derive_seed(tcfg.seed, {0xf01d5}));
  CrossvalResult out;
  for (int f = 0; f < tcfg.k; ++f) {
    FoldResult r = train_classifier_fold(data, f, plan, ccfg, tcfg);
    out.records.insert(out.records.end(), r.records.begin(), r.records.end());
    out.fold_params.push_back(std::move(r.best_params));
  }
  out.summary = summarize(out.records);
  out.summary.session = tcfg.session;
  return out;
}

double overall_accuracy(std::span<const CrossvalSummary> sessions) {
  require(!sessions.empty(), "overall accuracy needs at least one session");
  double s = 0.0;
  for (const auto& x : sessions) s += x.average_accuracy;
  return s / static_cast<double>(sessions.size());
}

void write_metrics(std::span<const MetricsRecord> records, const fs::path& path) {
  require(!records.empty(), "no metrics records to write");
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics " + path.string());
  out << "fold,epoch,split,accuracy,loss\n";
  char line[160];
  for (const auto& r : records) {
    std::snprintf(line, sizeof line, "%d,%d,%s,%.6f,%.6f\n", r.fold, r.epoch, to_string(r.split).c_str(), r.accuracy, r.loss);
    out << line;
  }
  if (!out) throw IoError("failed writing metrics " + path.string());
}

std::vector<MetricsRecord> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "fold,epoch,split,accuracy,loss")
    throw ContractViolation(path.string() + ": unexpected metrics header");
  std::vector<MetricsRecord> out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string fold, epoch, split, acc, loss;
    if (!std::getline(ss, fold, ',') || !std::getline(ss, epoch, ',') || !std::getline(ss, split, ',') ||
        !std::getline(ss, acc, ',') || !std::getline(ss, loss))
      throw ContractViolation(path.string() + " row " + std::to_string(row) + ": expected 5 fields");
    MetricsRecord r;
    try {
      r.fold = std::stoi(fold);
      r.epoch = std::stoi(epoch);
      r.accuracy = std::stod(acc);
      r.loss = std::stod(loss);
    } catch (const std::exception&) {
      throw ContractViolation(path.string() + " row " + std::to_string(row) + ": malformed number");
    }
    if (split == "train") r.split = Split::Train;
    else if (split == "val") r.split = Split::Val;
    else throw ContractViolation(path.string() + " row " + std::to_string(row) + ": split must be train or val");
    require(r.accuracy >= 0.0 && r.accuracy <= 100.0 && r.loss >= 0.0,
            path.string() + " row " + std::to_string(row) + ": metric out of range");
    out.push_back(r);
  }
  return out;
}

namespace {

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                "#8c564b", "#e377c2", "#17becf", "#7f7f7f", "#bcbd22"};

struct Panel {
  double x, y, w, h;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

void axes(std::ostream& out, const Panel& p, const std::string& title, const std::string& ylabel, double ymax, int epochs) {
  out << "  <g>\n";
  out << "    <text x=\"" << fmt(p.x + p.w / 2) << "\" y=\"" << fmt(p.y - 12) << "\" text-anchor=\"middle\">" << title << "</text>\n";
  out << "    <line x1=\"" << fmt(p.x) << "\" y1=\"" << fmt(p.y + p.h) << "\" x2=\"" << fmt(p.x + p.w) << "\" y2=\"" << fmt(p.y + p.h)
      << "\" stroke=\"black\"/>\n";
  out << "    <line x1=\"" << fmt(p.x) << "\" y1=\"" << fmt(p.y) << "\" x2=\"" << fmt(p.x) << "\" y2=\"" << fmt(p.y + p.h)
      << "\" stroke=\"black\"/>\n";
  out << "    <text x=\"" << fmt(p.x + p.w / 2) << "\" y=\"" << fmt(p.y + p.h + 34) << "\" text-anchor=\"middle\">epoch</text>\n";
  out << "    <text x=\"" << fmt(p.x - 40) << "\" y=\"" << fmt(p.y + p.h / 2) << "\" text-anchor=\"middle\" transform=\"rotate(-90 "
      << fmt(p.x - 40) << " " << fmt(p.y + p.h / 2) << ")\">" << ylabel << "</text>\n";
  for (int e = 1; e <= epochs; ++e) {
    const double x = p.x + (epochs == 1 ? p.w / 2 : p.w * (e - 1) / (epochs - 1));
    out << "    <text x=\"" << fmt(x) << "\" y=\"" << fmt(p.y + p.h + 16) << "\" font-size=\"10\" text-anchor=\"middle\">" << e
        << "</text>\n";
  }
  for (int t = 0; t <= 4; ++t) {
    const double y = p.y + p.h - p.h * t / 4.0;
    out << "    <text x=\"" << fmt(p.x - 6) << "\" y=\"" << fmt(y + 4) << "\" font-size=\"10\" text-anchor=\"end\">"
        << fmt(ymax * t / 4.0) << "</text>\n";
  }
  out << "  </g>\n";
}

}  // namespace

void emit_curves(std::span<const MetricsRecord> records, const fs::path& path) {
  require(!records.empty(), "no metrics records to plot");
  std::map<int, std::vector<const MetricsRecord*>> by_fold;
  int epochs = 1;
  double max_loss = 0.0;
  for (const auto& r : records) {
    if (r.split != Split::Val) continue;
    by_fold[r.fold].push_back(&r);
    epochs = std::max(epochs, r.epoch);
    max_loss = std::max(max_loss, r.loss);
  }
  require(!by_fold.empty(), "no validation records to plot");
  if (max_loss <= 0.0) max_loss = 1.0;

  const Panel acc{70, 40, 380, 260}, loss{560, 40, 380, 260};
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write curves " + path.string());
  out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"1000\" height=\"" << 360 + 20 * by_fold.size()
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  axes(out, acc, "validation accuracy", "percent", 100.0, epochs);
  axes(out, loss, "validation loss", "loss", max_loss, epochs);

  auto x_of = [&](const Panel& p, int e) { return p.x + (epochs == 1 ? p.w / 2 : p.w * (e - 1) / (epochs - 1)); };
  std::size_t colour = 0;
  for (const auto& [fold, rows] : by_fold) {
    const char* c = kPalette[colour++ % std::size(kPalette)];
    std::string pa, pl;
    for (const MetricsRecord* r : rows) {
      pa += fmt(x_of(acc, r->epoch)) + "," + fmt(acc.y + acc.h - acc.h * r->accuracy / 100.0) + " ";
      pl += fmt(x_of(loss, r->epoch)) + "," + fmt(loss.y + loss.h - loss.h * r->loss / max_loss) + " ";
    }
    pa.pop_back();
    pl.pop_back();
    out << "  <polyline fill=\"none\" stroke=\"" << c << "\" points=\"" << pa << "\"/>\n";
    out << "  <polyline fill=\"none\" stroke=\"" << c << "\" points=\"" << pl << "\"/>\n";
    const double ly = 350 + 20.0 * (colour - 1);
    out << "  <text x=\"70\" y=\"" << fmt(ly) << "\" fill=\"" << c << "\">fold " << fold << "</text>\n";
  }
  out << "</svg>\n";
  if (!out) throw IoError("failed writing curves " + path.string());
}

}  // namespace iris
