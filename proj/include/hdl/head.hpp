#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hdl/backbone.hpp"
#include "hdl/ops.hpp"
#include "hdl/random.hpp"
#include "hdl/taxonomy.hpp"
#include "hdl/tensor.hpp"

namespace hdl {

// Cascade-of-classifiers head configuration. level_sizes[l] is the class
// count of level l (>= 2 each). lambdas holds the loss weights
// [center, level1, ..., levelN]; empty means all 1. center_level < 0 selects
// the default: the first level with the largest class count.
struct HeadConfig {
  std::vector<std::int64_t> level_sizes;
  std::int64_t feature_dim = 0;
  std::vector<double> lambdas;
  int center_level = -1;
  bool cascade_softmax = false;   // propagate probabilities instead of raw logits
  bool center_normalize = false;  // divide the center loss by the batch size

  std::size_t num_levels() const { return level_sizes.size(); }

  int resolved_center_level() const {
    if (center_level >= 0) {
      HDL_CHECK(center_level < static_cast<int>(level_sizes.size()),
                "center level ", center_level, " out of range for ", level_sizes.size(),
                " levels");
      return center_level;
    }
    int best = 0;
    for (std::size_t l = 1; l < level_sizes.size(); ++l)
      if (level_sizes[l] > level_sizes[best]) best = static_cast<int>(l);
    return best;
  }

  std::vector<double> resolved_lambdas() const {
    if (lambdas.empty()) return std::vector<double>(level_sizes.size() + 1, 1.0);
    HDL_CHECK(lambdas.size() == level_sizes.size() + 1, "expected ", level_sizes.size() + 1,
              " lambda values (center + one per level), got ", lambdas.size());
    for (double l : lambdas)
      HDL_CHECK(l >= 0 && std::isfinite(l), "lambda values must be nonnegative finite, got ", l);
    return lambdas;
  }

  void validate() const {
    HDL_CHECK(!level_sizes.empty(), "head: at least one level required");
    for (std::int64_t n : level_sizes) HDL_CHECK(n >= 2, "head: every level needs >= 2 classes");
    HDL_CHECK(feature_dim >= 1, "head: feature_dim must be >= 1");
    resolved_lambdas();
    resolved_center_level();
  }
};

// Per-class feature centers with epoch accumulation state. Centers are
// constants during a forward pass; they move only through update() (epoch
// mean) or update_batch_alpha() (damped per-batch compatibility rule).
template <typename T>
class CenterBank {
 public:
  CenterBank() = default;

  // Centers drawn from N(0, 0.01), i.e. stddev 0.1.
  static CenterBank init(std::int64_t num_classes, std::int64_t dim, int level,
                         std::uint64_t seed) {
    HDL_CHECK(num_classes >= 1, "center bank: need at least one class");
    HDL_CHECK(dim >= 1, "center bank: feature dimension must be >= 1");
    CenterBank bank;
    bank.level_ = level;
    bank.centers_ = Tensor<T>({num_classes, dim});
    Rng rng(seed);
    for (T& v : bank.centers_.data) v = static_cast<T>(rng.normal(0.0, 0.1));
    bank.accum_ = Tensor<T>({num_classes, dim});
    bank.counts_.assign(static_cast<std::size_t>(num_classes), 0);
    return bank;
  }

  int level() const { return level_; }
  const Tensor<T>& centers() const { return centers_; }
  Tensor<T>& centers() { return centers_; }
  std::int64_t num_classes() const { return centers_.shape[0]; }
  std::int64_t dim() const { return centers_.shape[1]; }
  const std::vector<std::int64_t>& counts() const { return counts_; }

  // Feeds one batch of pooled features into the epoch accumulators.
  void accumulate(const Tensor<T>& features, const std::vector<std::int64_t>& labels) {
    const std::int64_t d = dim();
    HDL_CHECK(features.rank() == 2 && features.shape[1] == d,
              "center accumulate: features ", shape_str(features.shape), " vs dim ", d);
    HDL_CHECK(static_cast<std::int64_t>(labels.size()) == features.shape[0],
              "center accumulate: label count mismatch");
    for (std::int64_t i = 0; i < features.shape[0]; ++i) {
      const std::int64_t y = labels[static_cast<std::size_t>(i)];
      HDL_CHECK(y >= 0 && y < num_classes(), "center accumulate: label ", y, " out of range");
      T* acc = accum_.data.data() + y * d;
      const T* x = features.data.data() + i * d;
      for (std::int64_t j = 0; j < d; ++j) acc[j] += x[j];
      ++counts_[static_cast<std::size_t>(y)];
    }
  }

  // Epoch-boundary update: every class seen this epoch moves to the plain
  // arithmetic mean of its accumulated features; unseen classes keep their
  // previous center. Accumulators reset.
  void update() {
    const std::int64_t d = dim();
    for (std::int64_t c = 0; c < num_classes(); ++c) {
      const std::int64_t n = counts_[static_cast<std::size_t>(c)];
      if (n > 0) {
        const T* acc = accum_.data.data() + c * d;
        T* ctr = centers_.data.data() + c * d;
        for (std::int64_t j = 0; j < d; ++j) ctr[j] = acc[j] / static_cast<T>(n);
      }
    }
    std::fill(accum_.data.begin(), accum_.data.end(), T(0));
    std::fill(counts_.begin(), counts_.end(), 0);
  }

  // Damped per-batch update (compatibility with the original center-loss
  // rule): c <- c - alpha * sum(c - x_i) / (1 + n_c).
  void update_batch_alpha(const Tensor<T>& features, const std::vector<std::int64_t>& labels,
                          T alpha) {
    const std::int64_t d = dim();
    for (std::int64_t c = 0; c < num_classes(); ++c) {
      std::int64_t n = 0;
      std::vector<T> delta(static_cast<std::size_t>(d), T(0));
      for (std::int64_t i = 0; i < features.shape[0]; ++i) {
        if (labels[static_cast<std::size_t>(i)] != c) continue;
        ++n;
        const T* x = features.data.data() + i * d;
        const T* ctr = centers_.data.data() + c * d;
        for (std::int64_t j = 0; j < d; ++j) delta[static_cast<std::size_t>(j)] += ctr[j] - x[j];
      }
      if (n == 0) continue;
      T* ctr = centers_.data.data() + c * d;
      for (std::int64_t j = 0; j < d; ++j)
        ctr[j] -= alpha * delta[static_cast<std::size_t>(j)] / static_cast<T>(1 + n);
    }
  }

 private:
  int level_ = 0;
  Tensor<T> centers_;
  Tensor<T> accum_;
  std::vector<std::int64_t> counts_;
};

// Loss components of one batch. total always equals
// lambda_0*center + sum_l lambda_l*level_l, accumulated in ascending level
// order.
struct LossBreakdown {
  double center = 0;
  std::vector<double> per_level;
  double total = 0;
  std::vector<double> lambdas;
};

// The cascade head: one linear classifier per level, each consuming the
// previous level's output (raw logits by default, probabilities when
// cascade_softmax is set). Level 1 consumes the pooled features.
template <typename T>
class HdlHead {
 public:
  explicit HdlHead(HeadConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  const HeadConfig& config() const { return cfg_; }

  void init(ParamStore<T>& params, Rng& rng) {
    std::int64_t in_dim = cfg_.feature_dim;
    for (std::size_t l = 0; l < cfg_.level_sizes.size(); ++l) {
      const std::int64_t out_dim = cfg_.level_sizes[l];
      Tensor<T>& w = params.add(level_name(l) + ".w", {out_dim, in_dim});
      const double bound = he_uniform_bound(in_dim);
      for (T& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
      params.add(level_name(l) + ".b", {out_dim});  // zeros
      in_dim = out_dim;
    }
  }

  // features [m,d] -> per-level logits [m,n_l].
  std::vector<Var<T>> forward_cascade(BoundParams<T>& p, Var<T> features) const {
    HDL_CHECK(features.shape().size() == 2 && features.shape()[1] == cfg_.feature_dim,
              "cascade: features ", shape_str(features.shape()), " vs feature_dim ",
              cfg_.feature_dim);
    std::vector<Var<T>> logits;
    Var<T> x = features;
    for (std::size_t l = 0; l < cfg_.level_sizes.size(); ++l) {
      Var<T> z = ops::linear(x, p[level_name(l) + ".w"], p[level_name(l) + ".b"]);
      logits.push_back(z);
      x = cfg_.cascade_softmax ? ops::softmax(z) : z;
    }
    return logits;
  }

  // Per-level cross-entropies against per-level labels.
  std::vector<Var<T>> per_level_losses(const std::vector<Var<T>>& logits,
                                       const std::vector<std::vector<std::int64_t>>& labels) const {
    HDL_CHECK(labels.size() == logits.size(), "per_level_losses: ", logits.size(),
              " logit levels vs ", labels.size(), " label levels");
    std::vector<Var<T>> losses;
    for (std::size_t l = 0; l < logits.size(); ++l)
      losses.push_back(ops::softmax_cross_entropy(logits[l], labels[l]));
    return losses;
  }

  // total = lambda_0 * center + sum_l lambda_l * level_l, ascending order.
  std::pair<Var<T>, LossBreakdown> total_loss(Var<T> center, const std::vector<Var<T>>& levels) const {
    const std::vector<double> lambdas = cfg_.resolved_lambdas();
    LossBreakdown bd;
    bd.lambdas = lambdas;
    bd.center = static_cast<double>(center.value().data[0]);
    Var<T> total = ops::scale(center, static_cast<T>(lambdas[0]));
    for (std::size_t l = 0; l < levels.size(); ++l) {
      bd.per_level.push_back(static_cast<double>(levels[l].value().data[0]));
      total = ops::add(total, ops::scale(levels[l], static_cast<T>(lambdas[l + 1])));
    }
    bd.total = static_cast<double>(total.value().data[0]);
    return {total, bd};
  }

  // Argmax per level; ties break to the lowest index.
  static std::vector<LabelPath> predict(const std::vector<Tensor<T>>& logit_values) {
    HDL_CHECK(!logit_values.empty(), "predict: no logits");
    const std::int64_t m = logit_values[0].shape[0];
    std::vector<LabelPath> out(static_cast<std::size_t>(m),
                               LabelPath(logit_values.size(), 0));
    for (std::size_t l = 0; l < logit_values.size(); ++l) {
      const Tensor<T>& z = logit_values[l];
      HDL_CHECK(z.rank() == 2 && z.shape[0] == m, "predict: inconsistent logit shapes");
      const std::int64_t n = z.shape[1];
      for (std::int64_t i = 0; i < m; ++i) {
        const T* row = z.data.data() + i * n;
        std::int64_t best = 0;
        for (std::int64_t j = 1; j < n; ++j)
          if (row[j] > row[best]) best = j;
        out[static_cast<std::size_t>(i)][l] = best;
      }
    }
    return out;
  }

  static std::string level_name(std::size_t l) { return "head.level" + std::to_string(l + 1); }

 private:
  HeadConfig cfg_;
};

}  // namespace hdl
