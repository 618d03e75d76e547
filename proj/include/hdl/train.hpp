#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include "hdl/backbone.hpp"
#include "hdl/data.hpp"
#include "hdl/gradcheck.hpp"
#include "hdl/head.hpp"
#include "hdl/serialize.hpp"
#include "hdl/taxonomy.hpp"

namespace hdl {

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 0.005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m, v;
  std::int64_t t = 0;

  static AdamState init(const ParamStore<T>& params) {
    AdamState st;
    for (const auto& [name, tensor] : params.entries()) {
      st.m.push_back(Tensor<T>::zeros(tensor.shape));
      st.v.push_back(Tensor<T>::zeros(tensor.shape));
    }
    return st;
  }
};

// Standard Adam with bias correction:
//   m <- b1*m + (1-b1)*g;  v <- b2*v + (1-b2)*g^2
//   theta <- theta - lr * mhat / (sqrt(vhat) + eps)
template <typename T>
void adam_step(ParamStore<T>& params, const std::vector<Tensor<T>>& grads, AdamState<T>& st,
               const AdamConfig& cfg) {
  HDL_CHECK(grads.size() == params.size() && st.m.size() == params.size(),
            "adam_step: state/gradient count mismatch");
  ++st.t;
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(st.t)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(st.t)));
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
  for (std::size_t p = 0; p < grads.size(); ++p) {
    auto& [name, theta] = params.entries()[p];
    HDL_CHECK(grads[p].shape == theta.shape, "adam_step: gradient shape ",
              shape_str(grads[p].shape), " != parameter shape ", shape_str(theta.shape), " for ",
              name);
    Tensor<T>& m = st.m[p];
    Tensor<T>& v = st.v[p];
    for (std::size_t i = 0; i < theta.data.size(); ++i) {
      const T g = grads[p].data[i];
      HDL_CHECK(std::isfinite(static_cast<double>(g)), "adam_step: non-finite gradient in '", name,
                "' at element ", i);
      m.data[i] = b1 * m.data[i] + (T(1) - b1) * g;
      v.data[i] = b2 * v.data[i] + (T(1) - b2) * g * g;
      const T mhat = m.data[i] / c1;
      const T vhat = v.data[i] / c2;
      theta.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <typename T>
struct HdlModel {
  Backbone<T> backbone;
  HdlHead<T> head;
  ParamStore<T> params;
  ParamStore<T> buffers;
  CenterBank<T> centers;

  static HdlModel build(const BackboneConfig& bcfg, const HeadConfig& hcfg, std::uint64_t seed) {
    HDL_CHECK(bcfg.feature_dim() == hcfg.feature_dim,
              "model: backbone feature dim ", bcfg.feature_dim(), " != head feature dim ",
              hcfg.feature_dim);
    HdlModel model{Backbone<T>(bcfg), HdlHead<T>(hcfg), {}, {}, {}};
    Rng prng(stream_seed(seed, 1));
    model.backbone.init(model.params, model.buffers, prng);
    model.head.init(model.params, prng);
    const int clevel = hcfg.resolved_center_level();
    model.centers = CenterBank<T>::init(hcfg.level_sizes[static_cast<std::size_t>(clevel)],
                                        hcfg.feature_dim, clevel, stream_seed(seed, 2));
    return model;
  }

  NamedTensors<T> to_named_tensors() const {
    NamedTensors<T> out;
    for (const auto& e : params.entries()) out.push_back(e);
    for (const auto& e : buffers.entries()) out.emplace_back("buffer." + e.first, e.second);
    out.emplace_back("centers", centers.centers());
    return out;
  }

  void load_named_tensors(const NamedTensors<T>& tensors) {
    std::size_t used = 0;
    for (const auto& [name, tensor] : tensors) {
      if (name == "centers") {
        HDL_CHECK(tensor.shape == centers.centers().shape, "load: centers shape ",
                  shape_str(tensor.shape), " != expected ", shape_str(centers.centers().shape));
        centers.centers() = tensor;
        ++used;
      } else if (name.rfind("buffer.", 0) == 0) {
        const std::string key = name.substr(7);
        HDL_CHECK(buffers.contains(key), "load: unexpected buffer '", key, "'");
        HDL_CHECK(tensor.shape == buffers.at(key).shape, "load: shape mismatch for ", name);
        buffers.at(key) = tensor;
        ++used;
      } else {
        HDL_CHECK(params.contains(name), "load: unexpected parameter '", name,
                  "' (model layout mismatch)");
        HDL_CHECK(tensor.shape == params.at(name).shape, "load: shape mismatch for ", name, ": ",
                  shape_str(tensor.shape), " vs ", shape_str(params.at(name).shape));
        params.at(name) = tensor;
        ++used;
      }
    }
    HDL_CHECK(used == params.size() + buffers.size() + 1,
              "load: file holds ", used, " known tensors but the model needs ",
              params.size() + buffers.size() + 1);
  }
};

// ---------------------------------------------------------------------------
// Training configuration and metrics
// ---------------------------------------------------------------------------

struct TrainConfig {
  double lr = 0.005;
  int batch_size = 64;
  int epochs = 30;
  std::uint64_t seed = 0;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  bool center_alpha_batch = false;  // damped per-batch center updates
  double center_alpha = 0.5;
  int baseline_level = 0;  // 0 = full cascade; 1-based taxonomy level otherwise
  bool fixed_timing = false;  // write 0.000 in the seconds column

  // CLI-facing validation; the loop itself additionally tolerates lr == 0
  // (used by the frozen-parameter property checks).
  void validate() const {
    HDL_CHECK(lr > 0, "learning rate must be > 0, got ", lr);
    HDL_CHECK(epochs >= 1, "epochs must be >= 1, got ", epochs);
    HDL_CHECK(batch_size >= 2, "batch size must be >= 2 (batch-norm constraint), got ",
              batch_size);
  }
};

struct MetricsRecord {
  int epoch = 0;
  double loss_total = 0, loss_center = 0;
  std::vector<double> loss_levels;
  std::vector<double> acc_levels;
  double violation_rate = 0, path_acc = 0, seconds = 0;
};

inline void write_metrics_header(std::ostream& os, std::size_t num_levels) {
  os << "epoch,loss_total,loss_center";
  for (std::size_t l = 1; l <= num_levels; ++l) os << ",loss_l" << l;
  for (std::size_t l = 1; l <= num_levels; ++l) os << ",acc_l" << l;
  os << ",violation_rate,path_acc,seconds\n";
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

inline void write_metrics_row(std::ostream& os, const MetricsRecord& r) {
  os << r.epoch << "," << format_fixed(r.loss_total, 6) << "," << format_fixed(r.loss_center, 6);
  for (double v : r.loss_levels) os << "," << format_fixed(v, 6);
  for (double v : r.acc_levels) os << "," << format_fixed(v, 6);
  os << "," << format_fixed(r.violation_rate, 6) << "," << format_fixed(r.path_acc, 6) << ","
     << format_fixed(r.seconds, 3) << "\n";
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  std::vector<double> acc_levels;
  double violation_rate = 0;
  double path_acc = 0;
};

namespace detail {

template <typename T>
Tensor<T> to_precision(const Tensor<float>& t) {
  if constexpr (std::is_same_v<T, float>)
    return t;
  else
    return t.template cast<T>();
}

// Labels visible to the head: the full per-level set for the cascade, or the
// single target level for a flat baseline.
inline std::vector<std::vector<std::int64_t>> head_labels(
    const std::vector<std::vector<std::int64_t>>& all, int baseline_level) {
  if (baseline_level <= 0) return all;
  return {all[static_cast<std::size_t>(baseline_level - 1)]};
}

}  // namespace detail

// Eval-mode forward (running batch-norm statistics) + argmax predictions.
// For a flat baseline model, accuracies for non-target levels are reported
// as 0 and no hierarchy metrics are computed.
template <typename T>
EvalResult evaluate(HdlModel<T>& model, const std::vector<Sample>& samples,
                    const Taxonomy& tax, int batch_size, int baseline_level = 0) {
  HDL_CHECK(!samples.empty(), "evaluate: empty sample list");
  const std::size_t n_levels = tax.num_levels();
  std::vector<LabelPath> preds, truths;
  Rng dummy(0);
  for (const auto& idxs : epoch_order(samples.size(), static_cast<std::size_t>(batch_size), dummy,
                                      /*shuffle=*/false)) {
    Batch batch = assemble_batch(samples, idxs);
    Graph<T> g;
    BoundParams<T> bound = bind_params(g, model.params, /*requires_grad=*/false);
    Var<T> images = make_leaf(g, detail::to_precision<T>(batch.images), false);
    Var<T> features = model.backbone.forward(bound, model.buffers, images, /*training=*/false);
    std::vector<Var<T>> logits = model.head.forward_cascade(bound, features);
    std::vector<Tensor<T>> logit_values;
    for (const auto& v : logits) logit_values.push_back(v.value());
    std::vector<LabelPath> batch_preds = HdlHead<T>::predict(logit_values);
    for (std::size_t i = 0; i < idxs.size(); ++i) {
      preds.push_back(std::move(batch_preds[i]));
      truths.push_back(samples[idxs[i]].labels);
    }
  }

  EvalResult result;
  if (baseline_level > 0) {
    result.acc_levels.assign(n_levels, 0.0);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (preds[i][0] == truths[i][static_cast<std::size_t>(baseline_level - 1)]) ++hit;
    result.acc_levels[static_cast<std::size_t>(baseline_level - 1)] =
        static_cast<double>(hit) / static_cast<double>(preds.size());
    return result;
  }
  result.acc_levels = per_level_accuracy(preds, truths);
  result.violation_rate = violation_rate(tax, preds);
  result.path_acc = path_accuracy(preds, truths);
  return result;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

// Per epoch: shuffle, iterate batches (forward -> loss -> backward -> Adam,
// feeding the center accumulators), update centers at the epoch boundary,
// evaluate on the test split, append one CSV row (flushed immediately).
// Deterministic given config and seed.
template <typename T>
std::vector<MetricsRecord> train(HdlModel<T>& model, const std::vector<Sample>& train_samples,
                                 const std::vector<Sample>& test_samples, const Taxonomy& tax,
                                 const TrainConfig& cfg, const std::string& metrics_path = "",
                                 std::ostream* progress = nullptr) {
  HDL_CHECK(!train_samples.empty(), "train: empty training set");
  HDL_CHECK(cfg.lr >= 0 && cfg.epochs >= 1 && cfg.batch_size >= 2, "train: invalid config");
  const std::size_t n_levels = tax.num_levels();
  if (cfg.baseline_level > 0) {
    HDL_CHECK(static_cast<std::size_t>(cfg.baseline_level) <= n_levels,
              "train: baseline level ", cfg.baseline_level, " out of range");
    HDL_CHECK(model.head.config().num_levels() == 1,
              "train: flat baseline expects a single-level head");
  } else {
    HDL_CHECK(model.head.config().num_levels() == n_levels,
              "train: head has ", model.head.config().num_levels(), " levels but taxonomy has ",
              n_levels);
    for (std::size_t l = 0; l < n_levels; ++l)
      HDL_CHECK(model.head.config().level_sizes[l] ==
                    static_cast<std::int64_t>(tax.level(l).classes.size()),
                "train: level ", l + 1, " has ", tax.level(l).classes.size(),
                " classes but head expects ", model.head.config().level_sizes[l]);
  }

  const int center_level_tax =
      cfg.baseline_level > 0 ? cfg.baseline_level - 1 : model.centers.level();
  AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps};
  AdamState<T> adam_state = AdamState<T>::init(model.params);
  Rng shuffle_rng(stream_seed(cfg.seed, 3));

  std::ofstream csv;
  if (!metrics_path.empty()) {
    csv.open(metrics_path, std::ios::trunc | std::ios::binary);
    HDL_CHECK(csv.good(), "cannot open metrics file ", metrics_path);
    write_metrics_header(csv, n_levels);
    csv.flush();
  }

  std::vector<MetricsRecord> history;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double sum_total = 0, sum_center = 0;
    std::vector<double> sum_levels(model.head.config().num_levels(), 0.0);
    std::size_t seen = 0;

    for (const auto& idxs :
         epoch_order(train_samples.size(), static_cast<std::size_t>(cfg.batch_size), shuffle_rng)) {
      Batch batch = assemble_batch(train_samples, idxs);
      Graph<T> g;
      BoundParams<T> bound = bind_params(g, model.params, /*requires_grad=*/true);
      Var<T> images = make_leaf(g, detail::to_precision<T>(batch.images), false);
      Var<T> features = model.backbone.forward(bound, model.buffers, images, /*training=*/true);
      std::vector<Var<T>> logits = model.head.forward_cascade(bound, features);

      const std::vector<std::vector<std::int64_t>> labels =
          detail::head_labels(batch.labels, cfg.baseline_level);
      const std::vector<std::int64_t>& center_labels =
          batch.labels[static_cast<std::size_t>(center_level_tax)];
      Var<T> lc = ops::center_loss(features, center_labels, model.centers.centers(),
                                   model.head.config().center_normalize);
      std::vector<Var<T>> level_losses = model.head.per_level_losses(logits, labels);
      auto [total, bd] = model.head.total_loss(lc, level_losses);

      if (!std::isfinite(bd.total)) {
        std::string ids;
        for (std::size_t i = 0; i < std::min<std::size_t>(idxs.size(), 8); ++i)
          ids += (i ? "," : "") + train_samples[idxs[i]].id;
        throw Error(format_msg("train: non-finite loss ", bd.total, " at epoch ", epoch,
                               " (batch samples: ", ids, ")"));
      }

      g.backward(total.id);
      std::vector<Tensor<T>> grads;
      grads.reserve(model.params.size());
      for (auto& [name, tensor] : model.params.entries()) {
        const Var<T> leaf = bound[name];
        grads.push_back(g.has_grad(leaf.id) ? g.grad(leaf.id) : Tensor<T>::zeros(tensor.shape));
      }
      adam_step(model.params, grads, adam_state, adam);

      if (cfg.center_alpha_batch)
        model.centers.update_batch_alpha(features.value(), center_labels,
                                         static_cast<T>(cfg.center_alpha));
      else
        model.centers.accumulate(features.value(), center_labels);

      // Log weighted contributions so loss_total always equals the sum of the
      // logged components, whatever the lambda configuration.
      const double w = static_cast<double>(idxs.size());
      sum_total += bd.total * w;
      sum_center += bd.lambdas[0] * bd.center * w;
      for (std::size_t l = 0; l < bd.per_level.size(); ++l)
        sum_levels[l] += bd.lambdas[l + 1] * bd.per_level[l] * w;
      seen += idxs.size();
    }

    // Center update strictly after the optimizer's last step of the epoch and
    // before evaluation.
    if (!cfg.center_alpha_batch) model.centers.update();

    MetricsRecord rec;
    rec.epoch = epoch;
    rec.loss_total = sum_total / static_cast<double>(seen);
    rec.loss_center = sum_center / static_cast<double>(seen);
    rec.loss_levels.assign(n_levels, 0.0);
    for (std::size_t l = 0; l < sum_levels.size(); ++l) {
      const std::size_t slot =
          cfg.baseline_level > 0 ? static_cast<std::size_t>(cfg.baseline_level - 1) : l;
      rec.loss_levels[slot] = sum_levels[l] / static_cast<double>(seen);
    }
    if (!test_samples.empty()) {
      const EvalResult ev = evaluate(model, test_samples, tax, cfg.batch_size, cfg.baseline_level);
      rec.acc_levels = ev.acc_levels;
      rec.violation_rate = ev.violation_rate;
      rec.path_acc = ev.path_acc;
    } else {
      rec.acc_levels.assign(n_levels, 0.0);
    }
    const auto t1 = std::chrono::steady_clock::now();
    rec.seconds = cfg.fixed_timing
                      ? 0.0
                      : std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count() /
                            1000.0;
    history.push_back(rec);
    if (csv.is_open()) {
      write_metrics_row(csv, rec);
      csv.flush();
    }
    if (progress) {
      *progress << "epoch " << epoch << "/" << cfg.epochs << " loss " << format_fixed(rec.loss_total, 4)
                << " acc";
      for (double a : rec.acc_levels) *progress << " " << format_fixed(a, 4);
      *progress << " (" << format_fixed(rec.seconds, 1) << "s)\n";
      progress->flush();
    }
  }
  return history;
}

// ---------------------------------------------------------------------------
// Whole-model finite-difference check
// ---------------------------------------------------------------------------

// Checks every parameter of a small but complete model (conv backbone,
// cascade head, center loss) against central finite differences of the total
// loss, in 64-bit. Training-mode forward with frozen running statistics so
// repeated evaluations see identical state.
inline GradCheckReport full_model_grad_check(std::uint64_t seed = 7, double eps = 1e-6) {
  using T = double;
  BackboneConfig bcfg;
  bcfg.in_h = bcfg.in_w = 12;
  bcfg.stage_widths = {4};
  HeadConfig hcfg;
  hcfg.level_sizes = {3, 2};
  hcfg.feature_dim = bcfg.feature_dim();
  auto model = HdlModel<T>::build(bcfg, hcfg, seed);

  Rng rng(stream_seed(seed, 99));
  Tensor<T> images({3, 3, 12, 12});
  for (auto& v : images.data) v = rng.uniform(0.0, 1.0);
  const std::vector<std::vector<std::int64_t>> labels = {{0, 1, 2}, {1, 0, 1}};
  const std::vector<std::int64_t>& center_labels =
      labels[static_cast<std::size_t>(model.centers.level())];

  auto build = [&]() {
    return detail::eval_with_grads<T>([&](Graph<T>& g) {
      BoundParams<T> bound = bind_params(g, model.params, /*requires_grad=*/true);
      Var<T> x = make_leaf(g, images, false);
      Var<T> features =
          model.backbone.forward(bound, model.buffers, x, /*training=*/true,
                                 /*update_running=*/false);
      std::vector<Var<T>> logits = model.head.forward_cascade(bound, features);
      Var<T> lc = ops::center_loss(features, center_labels, model.centers.centers(),
                                   model.head.config().center_normalize);
      auto [total, bd] = model.head.total_loss(lc, model.head.per_level_losses(logits, labels));
      std::vector<int> ids;
      for (const auto& [name, tensor] : model.params.entries()) ids.push_back(bound[name].id);
      return std::make_pair(total, ids);
    });
  };
  std::vector<std::pair<std::string, Tensor<T>*>> leaves;
  for (auto& [name, tensor] : model.params.entries()) leaves.emplace_back(name, &tensor);
  return grad_check<T>(build, leaves, eps);
}

}  // namespace hdl
