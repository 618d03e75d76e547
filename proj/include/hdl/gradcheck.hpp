#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "hdl/ops.hpp"
#include "hdl/random.hpp"
#include "hdl/tensor.hpp"

namespace hdl {

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;

  bool pass(double tolerance) const { return max_rel_err <= tolerance; }
};

// Central-difference gradient verification. `build` reconstructs the graph
// from the current contents of the named parameter tensors and returns the
// scalar loss plus analytic gradients aligned with `params`. The relative
// error denominator is floored at 1 so near-zero gradients are compared
// absolutely instead of amplifying finite-difference noise.
template <typename T, typename BuildFn>
GradCheckReport grad_check(BuildFn build,
                           std::vector<std::pair<std::string, Tensor<T>*>> params,
                           T eps = T(1e-6)) {
  auto [loss0, grads] = build();
  (void)loss0;
  HDL_CHECK(grads.size() == params.size(), "grad_check: build returned ", grads.size(),
            " gradients for ", params.size(), " parameters");
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor<T>& tensor = *params[p].second;
    GradCheckEntry entry{params[p].first, 0.0};
    for (std::size_t i = 0; i < tensor.data.size(); ++i) {
      const T saved = tensor.data[i];
      tensor.data[i] = saved + eps;
      const T lp = build().first;
      tensor.data[i] = saved - eps;
      const T lm = build().first;
      tensor.data[i] = saved;
      const double numeric = (static_cast<double>(lp) - static_cast<double>(lm)) /
                             (2.0 * static_cast<double>(eps));
      const double analytic = static_cast<double>(grads[p].data[i]);
      const double denom = std::max({std::abs(numeric), std::abs(analytic), 1.0});
      entry.max_rel_err = std::max(entry.max_rel_err, std::abs(numeric - analytic) / denom);
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.entries.push_back(std::move(entry));
  }
  return report;
}

namespace detail {

// Build-and-backward helper: runs fn to produce (loss var, checked leaves),
// then extracts the loss and gradients in leaf order.
template <typename T, typename Fn>
std::pair<T, std::vector<Tensor<T>>> eval_with_grads(Fn fn) {
  Graph<T> g;
  auto [loss, leaves] = fn(g);
  g.backward(loss.id);
  std::vector<Tensor<T>> grads;
  grads.reserve(leaves.size());
  for (int id : leaves)
    grads.push_back(g.has_grad(id) ? g.grad(id) : Tensor<T>::zeros(g.value(id).shape));
  return {g.value(loss.id).data[0], std::move(grads)};
}

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

}  // namespace detail

struct OpCheckResult {
  std::string op;
  double max_rel_err;
  double tolerance;
  bool pass;
};

// The standard per-op finite-difference suite (64-bit), one entry per op per
// seed. Used by tests and the `gradcheck` CLI command.
inline std::vector<OpCheckResult> run_gradcheck_suite(int num_seeds = 20,
                                                      std::uint64_t base_seed = 1234) {
  using T = double;
  std::vector<OpCheckResult> results;

  auto record = [&](const std::string& name, const GradCheckReport& rep, double tol) {
    results.push_back({name, rep.max_rel_err, tol, rep.pass(tol)});
  };

  for (int s = 0; s < num_seeds; ++s) {
    const std::uint64_t seed = stream_seed(base_seed, static_cast<std::uint64_t>(s));
    Rng rng(seed);
    const std::string tag = "#" + std::to_string(s);

    {  // matmul 4x3 * 3x5
      Tensor<T> a = detail::random_tensor({4, 3}, rng);
      Tensor<T> b = detail::random_tensor({3, 5}, rng);
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Var<T> va = make_leaf(g, a, true);
          Var<T> vb = make_leaf(g, b, true);
          Var<T> loss = ops::sum(ops::matmul(va, vb));
          return std::make_pair(loss, std::vector<int>{va.id, vb.id});
        });
      };
      record("matmul" + tag, grad_check<T>(build, {{"a", &a}, {"b", &b}}), 1e-5);
    }

    {  // conv2d 2x3x8x8 with 4x3x3x3 kernel, stride 1, pad 1, with bias
      Tensor<T> x = detail::random_tensor({2, 3, 8, 8}, rng);
      Tensor<T> w = detail::random_tensor({4, 3, 3, 3}, rng, 0.5);
      Tensor<T> b = detail::random_tensor({4}, rng, 0.5);
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Var<T> vx = make_leaf(g, x, true);
          Var<T> vw = make_leaf(g, w, true);
          Var<T> vb = make_leaf(g, b, true);
          Var<T> loss = ops::mean(ops::conv2d(vx, vw, vb, 1, 1));
          return std::make_pair(loss, std::vector<int>{vx.id, vw.id, vb.id});
        });
      };
      record("conv2d" + tag, grad_check<T>(build, {{"x", &x}, {"w", &w}, {"b", &b}}), 1e-5);
    }

    {  // conv2d strided, no padding, no bias
      Tensor<T> x = detail::random_tensor({1, 2, 7, 7}, rng);
      Tensor<T> w = detail::random_tensor({3, 2, 3, 3}, rng, 0.5);
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Var<T> vx = make_leaf(g, x, true);
          Var<T> vw = make_leaf(g, w, true);
          Var<T> loss = ops::mean(ops::conv2d(vx, vw, 2, 0));
          return std::make_pair(loss, std::vector<int>{vx.id, vw.id});
        });
      };
      record("conv2d_strided" + tag, grad_check<T>(build, {{"x", &x}, {"w", &w}}), 1e-5);
    }

    {  // relu, inputs nudged away from 0 so central differences stay one-sided
      Tensor<T> x = detail::random_tensor({3, 7}, rng);
      for (double& v : x.data)
        if (std::abs(v) < 1e-3) v = v < 0 ? v - 1e-3 : v + 1e-3;
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Var<T> vx = make_leaf(g, x, true);
          Var<T> loss = ops::sum(ops::relu(vx));
          return std::make_pair(loss, std::vector<int>{vx.id});
        });
      };
      record("relu" + tag, grad_check<T>(build, {{"x", &x}}), 1e-5);
    }

    {  // max_pool2d 3x3 stride 2; scale up so window values stay well separated
      Tensor<T> x = detail::random_tensor({1, 2, 7, 7}, rng, 10.0);
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Var<T> vx = make_leaf(g, x, true);
          Var<T> loss = ops::sum(ops::max_pool2d(vx, 3, 2));
          return std::make_pair(loss, std::vector<int>{vx.id});
        });
      };
      record("max_pool2d" + tag, grad_check<T>(build, {{"x", &x}}), 1e-5);
    }

    {  // global_avg_pool
      Tensor<T> x = detail::random_tensor({2, 3, 4, 5}, rng);
      Tensor<T> w = detail::random_tensor({1, 3}, rng);
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Var<T> vx = make_leaf(g, x, true);
          Var<T> vw = make_leaf(g, w, false);
          Var<T> vb = make_leaf(g, Tensor<T>::zeros({1}), false);
          Var<T> loss = ops::sum(ops::linear(ops::global_avg_pool(vx), vw, vb));
          return std::make_pair(loss, std::vector<int>{vx.id});
        });
      };
      record("global_avg_pool" + tag, grad_check<T>(build, {{"x", &x}}), 1e-5);
    }

    {  // linear
      Tensor<T> x = detail::random_tensor({5, 4}, rng);
      Tensor<T> w = detail::random_tensor({3, 4}, rng);
      Tensor<T> b = detail::random_tensor({3}, rng);
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Var<T> vx = make_leaf(g, x, true);
          Var<T> vw = make_leaf(g, w, true);
          Var<T> vb = make_leaf(g, b, true);
          Var<T> loss = ops::mean(ops::linear(vx, vw, vb));
          return std::make_pair(loss, std::vector<int>{vx.id, vw.id, vb.id});
        });
      };
      record("linear" + tag, grad_check<T>(build, {{"x", &x}, {"w", &w}, {"b", &b}}), 1e-5);
    }

    {  // batch_norm, training mode (running-stat update disabled for purity)
      Tensor<T> x = detail::random_tensor({3, 2, 4, 4}, rng);
      Tensor<T> gamma = detail::random_tensor({2}, rng);
      Tensor<T> beta = detail::random_tensor({2}, rng);
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Tensor<T> rm = Tensor<T>::zeros({2});
          Tensor<T> rv = Tensor<T>::full({2}, 1.0);
          Var<T> vx = make_leaf(g, x, true);
          Var<T> vg = make_leaf(g, gamma, true);
          Var<T> vb = make_leaf(g, beta, true);
          Var<T> y = ops::batch_norm(vx, vg, vb, rm, rv, true, 0.1, 1e-5, false);
          Var<T> loss = ops::mean(ops::relu(y));
          return std::make_pair(loss, std::vector<int>{vx.id, vg.id, vb.id});
        });
      };
      record("batch_norm_train" + tag,
             grad_check<T>(build, {{"x", &x}, {"gamma", &gamma}, {"beta", &beta}}), 1e-4);
    }

    {  // batch_norm, eval mode
      Tensor<T> x = detail::random_tensor({2, 3, 3, 3}, rng);
      Tensor<T> gamma = detail::random_tensor({3}, rng);
      Tensor<T> beta = detail::random_tensor({3}, rng);
      Tensor<T> rm = detail::random_tensor({3}, rng, 0.5);
      Tensor<T> rv = Tensor<T>::full({3}, 1.0);
      for (double& v : rv.data) v = 0.5 + rng.uniform();
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Tensor<T> rm_local = rm, rv_local = rv;
          Var<T> vx = make_leaf(g, x, true);
          Var<T> vg = make_leaf(g, gamma, true);
          Var<T> vb = make_leaf(g, beta, true);
          Var<T> y = ops::batch_norm(vx, vg, vb, rm_local, rv_local, false);
          Var<T> loss = ops::mean(y);
          return std::make_pair(loss, std::vector<int>{vx.id, vg.id, vb.id});
        });
      };
      record("batch_norm_eval" + tag,
             grad_check<T>(build, {{"x", &x}, {"gamma", &gamma}, {"beta", &beta}}), 1e-4);
    }

    {  // softmax (through a fixed projection so the row-sum constraint is broken)
      Tensor<T> x = detail::random_tensor({4, 5}, rng);
      Tensor<T> w = detail::random_tensor({1, 5}, rng);
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Var<T> vx = make_leaf(g, x, true);
          Var<T> vw = make_leaf(g, w, false);
          Var<T> vb = make_leaf(g, Tensor<T>::zeros({1}), false);
          Var<T> loss = ops::sum(ops::linear(ops::softmax(vx), vw, vb));
          return std::make_pair(loss, std::vector<int>{vx.id});
        });
      };
      record("softmax" + tag, grad_check<T>(build, {{"x", &x}}), 1e-5);
    }

    {  // softmax_cross_entropy 8x5
      Tensor<T> x = detail::random_tensor({8, 5}, rng, 2.0);
      std::vector<std::int64_t> labels(8);
      for (auto& l : labels) l = rng.uniform_int(5);
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Var<T> vx = make_leaf(g, x, true);
          Var<T> loss = ops::softmax_cross_entropy(vx, labels);
          return std::make_pair(loss, std::vector<int>{vx.id});
        });
      };
      record("softmax_cross_entropy" + tag, grad_check<T>(build, {{"x", &x}}), 1e-5);
    }

    {  // center_loss
      Tensor<T> x = detail::random_tensor({6, 4}, rng);
      Tensor<T> centers = detail::random_tensor({3, 4}, rng);
      std::vector<std::int64_t> labels(6);
      for (auto& l : labels) l = rng.uniform_int(3);
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Var<T> vx = make_leaf(g, x, true);
          Var<T> loss = ops::center_loss(vx, labels, centers);
          return std::make_pair(loss, std::vector<int>{vx.id});
        });
      };
      record("center_loss" + tag, grad_check<T>(build, {{"x", &x}}), 1e-5);
    }

    {  // composite: conv -> relu -> pool -> linear -> cross-entropy
      Tensor<T> x = detail::random_tensor({2, 1, 8, 8}, rng);
      Tensor<T> w = detail::random_tensor({2, 1, 3, 3}, rng, 0.5);
      Tensor<T> wl = detail::random_tensor({3, 2 * 4 * 4}, rng, 0.5);
      Tensor<T> bl = detail::random_tensor({3}, rng, 0.5);
      std::vector<std::int64_t> labels = {rng.uniform_int(3), rng.uniform_int(3)};
      auto build = [&]() {
        return detail::eval_with_grads<T>([&](Graph<T>& g) {
          Var<T> vx = make_leaf(g, x, true);
          Var<T> vw = make_leaf(g, w, true);
          Var<T> vwl = make_leaf(g, wl, true);
          Var<T> vbl = make_leaf(g, bl, true);
          Var<T> h = ops::max_pool2d(ops::relu(ops::conv2d(vx, vw, 1, 1)), 2, 2);
          // Flatten [2,2,4,4] -> [2,32] through a reshape-free view: pooled
          // activations are contiguous per image, so reinterpret the shape.
          Tensor<T> flat = g.value(h.id);
          flat.shape = {2, 2 * 4 * 4};
          int flat_id = g.add_op(std::move(flat), {h.id}, [hid = h.id](Graph<T>& gr, int self) {
            if (!gr.requires_grad(hid)) return;
            const Tensor<T>& dy = gr.grad(self);
            Tensor<T>& dx = gr.grad(hid);
            for (std::size_t i = 0; i < dy.data.size(); ++i) dx.data[i] += dy.data[i];
          });
          Var<T> vflat{&g, flat_id};
          Var<T> loss = ops::softmax_cross_entropy(ops::linear(vflat, vwl, vbl), labels);
          return std::make_pair(loss, std::vector<int>{vx.id, vw.id, vwl.id, vbl.id});
        });
      };
      record("composite" + tag,
             grad_check<T>(build, {{"x", &x}, {"w", &w}, {"wl", &wl}, {"bl", &bl}}), 1e-4);
    }
  }

  return results;
}

}  // namespace hdl
