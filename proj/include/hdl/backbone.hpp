#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "hdl/ops.hpp"
#include "hdl/random.hpp"
#include "hdl/tensor.hpp"

namespace hdl {

// Ordered named-tensor store. Iteration order is registration order, which
// keeps optimizer state alignment and serialization deterministic.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Shape shape) {
    HDL_CHECK(index_.find(name) == index_.end(), "duplicate parameter name '", name, "'");
    index_[name] = entries_.size();
    entries_.emplace_back(name, Tensor<T>(std::move(shape)));
    return entries_.back().second;
  }

  Tensor<T>& at(const std::string& name) {
    const auto it = index_.find(name);
    HDL_CHECK(it != index_.end(), "unknown parameter '", name, "'");
    return entries_[it->second].second;
  }
  const Tensor<T>& at(const std::string& name) const {
    const auto it = index_.find(name);
    HDL_CHECK(it != index_.end(), "unknown parameter '", name, "'");
    return entries_[it->second].second;
  }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<std::pair<std::string, Tensor<T>>>& entries() { return entries_; }
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Parameters bound into a graph as leaves for one forward/backward pass.
template <typename T>
struct BoundParams {
  Graph<T>* graph = nullptr;
  std::unordered_map<std::string, Var<T>> vars;

  Var<T> operator[](const std::string& name) const {
    const auto it = vars.find(name);
    HDL_CHECK(it != vars.end(), "parameter '", name, "' not bound");
    return it->second;
  }
};

template <typename T>
BoundParams<T> bind_params(Graph<T>& g, ParamStore<T>& store, bool requires_grad) {
  BoundParams<T> bound;
  bound.graph = &g;
  for (auto& [name, tensor] : store.entries())
    bound.vars.emplace(name, make_leaf(g, tensor, requires_grad));
  return bound;
}

// Configurable convolutional feature extractor: 7x7/2 stem -> batch norm ->
// relu -> 3x3/2 max pool -> stages of 3x3 blocks (optionally residual) ->
// global average pool. stage_widths [64,128,256,512] with blocks_per_stage=2
// is the classic 18-layer residual layout; truncated widths give the desk
// variants. The first stage keeps stride 1; later stages downsample by 2.
struct BackboneConfig {
  std::int64_t in_channels = 3;
  std::int64_t in_h = 128;
  std::int64_t in_w = 128;
  std::int64_t stem_kernel = 7;
  std::int64_t stem_stride = 2;
  std::vector<std::int64_t> stage_widths = {64, 128, 256, 512};
  std::int64_t blocks_per_stage = 1;
  bool residual = true;

  std::int64_t feature_dim() const {
    HDL_CHECK(!stage_widths.empty(), "backbone: stage_widths must be nonempty");
    return stage_widths.back();
  }
};

template <typename T>
class Backbone {
 public:
  explicit Backbone(BackboneConfig cfg) : cfg_(std::move(cfg)) {
    HDL_CHECK(!cfg_.stage_widths.empty(), "backbone: stage_widths must be nonempty");
    for (std::int64_t w : cfg_.stage_widths) HDL_CHECK(w >= 1, "backbone: stage width must be >= 1");
    HDL_CHECK(cfg_.blocks_per_stage >= 1, "backbone: blocks_per_stage must be >= 1");
    check_spatial();
  }

  const BackboneConfig& config() const { return cfg_; }

  // Registers parameters/buffers and initializes them deterministically:
  // He-uniform conv weights, zero biases, gamma=1, beta=0, running mean 0 /
  // var 1. Draw order equals registration order.
  void init(ParamStore<T>& params, ParamStore<T>& buffers, Rng& rng) {
    auto conv = [&](const std::string& prefix, std::int64_t cin, std::int64_t cout,
                    std::int64_t k) {
      Tensor<T>& w = params.add(prefix + ".w", {cout, cin, k, k});
      const double bound = he_uniform_bound(cin * k * k);
      for (T& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
      params.add(prefix + ".b", {cout});  // zeros
    };
    auto bn = [&](const std::string& prefix, std::int64_t c) {
      Tensor<T>& gamma = params.add(prefix + ".gamma", {c});
      std::fill(gamma.data.begin(), gamma.data.end(), T(1));
      params.add(prefix + ".beta", {c});  // zeros
      buffers.add(prefix + ".mean", {c});  // zeros
      Tensor<T>& var = buffers.add(prefix + ".var", {c});
      std::fill(var.data.begin(), var.data.end(), T(1));
    };

    conv("stem.conv", cfg_.in_channels, cfg_.stage_widths[0], cfg_.stem_kernel);
    bn("stem.bn", cfg_.stage_widths[0]);
    std::int64_t cin = cfg_.stage_widths[0];
    for (std::size_t s = 0; s < cfg_.stage_widths.size(); ++s) {
      const std::int64_t cout = cfg_.stage_widths[s];
      for (std::int64_t b = 0; b < cfg_.blocks_per_stage; ++b) {
        const std::string p = block_prefix(s, b);
        const std::int64_t stride = block_stride(s, b);
        conv(p + ".conv1", cin, cout, 3);
        bn(p + ".bn1", cout);
        conv(p + ".conv2", cout, cout, 3);
        bn(p + ".bn2", cout);
        if (cfg_.residual && (stride != 1 || cin != cout)) {
          conv(p + ".short.conv", cin, cout, 1);
          bn(p + ".short.bn", cout);
        }
        cin = cout;
      }
    }
  }

  // One 3x3 block: conv-bn-relu-conv-bn (+ shortcut when residual) -> relu.
  Var<T> block_forward(BoundParams<T>& p, ParamStore<T>& buffers, Var<T> x, const std::string& prefix,
                       std::int64_t stride, bool training, bool update_running) const {
    Var<T> y = ops::conv2d(x, p[prefix + ".conv1.w"], p[prefix + ".conv1.b"], stride, 1);
    y = ops::batch_norm(y, p[prefix + ".bn1.gamma"], p[prefix + ".bn1.beta"],
                        buffers.at(prefix + ".bn1.mean"), buffers.at(prefix + ".bn1.var"),
                        training, T(0.1), T(1e-5), update_running);
    y = ops::relu(y);
    y = ops::conv2d(y, p[prefix + ".conv2.w"], p[prefix + ".conv2.b"], 1, 1);
    y = ops::batch_norm(y, p[prefix + ".bn2.gamma"], p[prefix + ".bn2.beta"],
                        buffers.at(prefix + ".bn2.mean"), buffers.at(prefix + ".bn2.var"),
                        training, T(0.1), T(1e-5), update_running);
    if (cfg_.residual) {
      Var<T> shortcut = x;
      if (p.vars.count(prefix + ".short.conv.w")) {
        shortcut = ops::conv2d(x, p[prefix + ".short.conv.w"], p[prefix + ".short.conv.b"], stride, 0);
        shortcut = ops::batch_norm(shortcut, p[prefix + ".short.bn.gamma"],
                                   p[prefix + ".short.bn.beta"],
                                   buffers.at(prefix + ".short.bn.mean"),
                                   buffers.at(prefix + ".short.bn.var"), training, T(0.1), T(1e-5),
                                   update_running);
      }
      y = ops::add(y, shortcut);
    }
    return ops::relu(y);
  }

  // batch [n,c,h,w] -> features [n, feature_dim()].
  Var<T> forward(BoundParams<T>& p, ParamStore<T>& buffers, Var<T> batch, bool training,
                 bool update_running = true) const {
    const Shape& s = batch.shape();
    HDL_CHECK(s.size() == 4 && s[1] == cfg_.in_channels && s[2] == cfg_.in_h && s[3] == cfg_.in_w,
              "backbone: batch shape ", shape_str(s), " does not match configured input ",
              cfg_.in_channels, "x", cfg_.in_h, "x", cfg_.in_w);
    Var<T> x = ops::conv2d(batch, p["stem.conv.w"], p["stem.conv.b"], cfg_.stem_stride,
                           cfg_.stem_kernel / 2);
    x = ops::batch_norm(x, p["stem.bn.gamma"], p["stem.bn.beta"], buffers.at("stem.bn.mean"),
                        buffers.at("stem.bn.var"), training, T(0.1), T(1e-5), update_running);
    x = ops::relu(x);
    x = ops::max_pool2d(x, 3, 2);
    for (std::size_t st = 0; st < cfg_.stage_widths.size(); ++st)
      for (std::int64_t b = 0; b < cfg_.blocks_per_stage; ++b)
        x = block_forward(p, buffers, x, block_prefix(st, b), block_stride(st, b), training,
                          update_running);
    return ops::global_avg_pool(x);
  }

 private:
  static std::string block_prefix(std::size_t stage, std::int64_t block) {
    return "s" + std::to_string(stage) + ".b" + std::to_string(block);
  }
  std::int64_t block_stride(std::size_t stage, std::int64_t block) const {
    return (stage > 0 && block == 0) ? 2 : 1;
  }

  // Feature maps must never collapse below 1x1 (and the pool window needs 3x3).
  void check_spatial() const {
    auto conv_dim = [](std::int64_t in, std::int64_t k, std::int64_t stride, std::int64_t pad) {
      return (in + 2 * pad - k) / stride + 1;
    };
    std::int64_t h = conv_dim(cfg_.in_h, cfg_.stem_kernel, cfg_.stem_stride, cfg_.stem_kernel / 2);
    std::int64_t w = conv_dim(cfg_.in_w, cfg_.stem_kernel, cfg_.stem_stride, cfg_.stem_kernel / 2);
    HDL_CHECK(h >= 3 && w >= 3, "backbone: stem output ", h, "x", w,
              " too small for 3x3 max pool (spatial collapse)");
    h = (h - 3) / 2 + 1;
    w = (w - 3) / 2 + 1;
    for (std::size_t s = 1; s < cfg_.stage_widths.size(); ++s) {
      h = conv_dim(h, 3, 2, 1);
      w = conv_dim(w, 3, 2, 1);
    }
    HDL_CHECK(h >= 1 && w >= 1, "backbone: feature map collapsed below 1x1 before pooling");
  }

  BackboneConfig cfg_;
};

}  // namespace hdl
