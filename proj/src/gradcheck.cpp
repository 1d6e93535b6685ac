#include "iris/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "iris/error.hpp"
#include "iris/rng.hpp"

namespace iris {

namespace {

struct Probe {
  double value;
  std::uint64_t regime;
};

Tensor reduction_weights(const Shape& shape, std::uint64_t seed) {
  Tensor w(shape);
  if (w.size() == 1) {
    w[0] = 1.0f;
    return w;
  }
  Rng rng(derive_seed(seed, {0x5eed}));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
  return w;
}

double reduce(const Tensor& y, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += static_cast<double>(y[i]) * w[i];
  return s;
}

std::vector<std::size_t> probe_entries(std::size_t n, const GradCheckOptions& opts, std::uint64_t stream) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (opts.max_entries == 0 || n <= opts.max_entries) return idx;
  Rng rng(derive_seed(opts.seed, {stream}));
  rng.shuffle(idx);
  idx.resize(opts.max_entries);
  std::sort(idx.begin(), idx.end());
  return idx;
}

void score(GradCheckReport& report, double analytic, double numeric, const std::string& label) {
  const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
  double err = std::abs(analytic - numeric) / denom;
  if (std::isnan(err)) err = INFINITY;
  ++report.entries_checked;
  if (report.worst_entry.empty() || err > report.max_rel_error) {
    report.max_rel_error = err;
    report.worst_entry = label + " analytic=" + std::to_string(analytic) + " numeric=" + std::to_string(numeric);
  }
}


// Central difference when both sides stay in the base regime, otherwise the one-sided
// difference on the side that does; nullopt when both sides cross a kink.
std::optional<double> difference(const Probe& up, const Probe& down, const Probe& base, float hi, float lo,
                                 float orig, bool skip_kinks) {
  const bool up_ok = !skip_kinks || up.regime == base.regime;
  const bool down_ok = !skip_kinks || down.regime == base.regime;
  if (up_ok && down_ok) return (up.value - down.value) / (static_cast<double>(hi) - lo);
  if (up_ok) return (up.value - base.value) / (static_cast<double>(hi) - orig);
  if (down_ok) return (base.value - down.value) / (static_cast<double>(orig) - lo);
  return std::nullopt;
}

}  // namespace

GradCheckReport finite_difference_check(const LeafGraph& graph, std::vector<Tensor> inputs,
                                        const GradCheckOptions& opts) {
  require(opts.epsilon > 0.0, "finite difference epsilon must be positive");
  GradCheckReport report;
  report.tolerance = opts.tolerance;

  Tape tape;
  std::vector<Var> leaves;
  for (const auto& t : inputs) leaves.push_back(tape.leaf(t));
  const Var out = graph(tape, leaves);
  const Tensor weights = reduction_weights(tape.value(out).shape(), opts.seed);
  tape.backward(out, weights);

  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape t(false);
    t.track_regimes(true);
    std::vector<Var> ls;
    for (const auto& x : xs) ls.push_back(t.leaf(x));
    const double v = reduce(t.value(graph(t, ls)), weights);
    return Probe{v, t.regime_signature()};
  };
  const Probe base = evaluate(inputs);

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor analytic = tape.grad(leaves[k]).empty() ? Tensor::zeros(inputs[k].shape()) : tape.grad(leaves[k]);
    for (std::size_t i : probe_entries(inputs[k].size(), opts, k)) {
      const float orig = inputs[k][i];
      const float hi = static_cast<float>(orig + opts.epsilon);
      const float lo = static_cast<float>(orig - opts.epsilon);
      inputs[k][i] = hi;
      const Probe up = evaluate(inputs);
      inputs[k][i] = lo;
      const Probe down = evaluate(inputs);
      inputs[k][i] = orig;
      const auto numeric = difference(up, down, base, hi, lo, orig, opts.skip_kinks);
      if (!numeric) {
        ++report.entries_skipped;
        continue;
      }
      score(report, analytic[i], *numeric,
            "input " + std::to_string(k) + "[" + std::to_string(i) + "]");
    }
  }
  return report;
}

GradCheckReport finite_difference_check(const ParamGraph& graph, ParamSet& params, const GradCheckOptions& opts) {
  require(opts.epsilon > 0.0, "finite difference epsilon must be positive");
  GradCheckReport report;
  report.tolerance = opts.tolerance;

  params.zero_grad();
  Tape tape;
  const Var out = graph(tape);
  const Tensor weights = reduction_weights(tape.value(out).shape(), opts.seed);
  tape.backward(out, weights);

  auto evaluate = [&]() {
    Tape t(false);
    t.track_regimes(true);
    const double v = reduce(t.value(graph(t)), weights);
    return Probe{v, t.regime_signature()};
  };
  const Probe base = evaluate();

  std::uint64_t stream = 0;
  for (auto& p : params.items()) {
    const Tensor analytic = p.grad;
    for (std::size_t i : probe_entries(p.value.size(), opts, stream++)) {
      const float orig = p.value[i];
      const float hi = static_cast<float>(orig + opts.epsilon);
      const float lo = static_cast<float>(orig - opts.epsilon);
      p.value[i] = hi;
      const Probe up = evaluate();
      p.value[i] = lo;
      const Probe down = evaluate();
      p.value[i] = orig;
      const auto numeric = difference(up, down, base, hi, lo, orig, opts.skip_kinks);
      if (!numeric) {
        ++report.entries_skipped;
        continue;
      }
      score(report, analytic[i], *numeric, p.name + "[" + std::to_string(i) + "]");
    }
  }
  params.zero_grad();
  return report;
}

}  // namespace iris
