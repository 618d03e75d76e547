#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "hdl/train.hpp"

using hdl::AdamConfig;
using hdl::AdamState;
using hdl::ParamStore;
using hdl::Tensor;

namespace {

// Hand-coded reference Adam on a single scalar, kept deliberately separate
// from the library implementation.
struct RefAdam {
  double m = 0, v = 0;
  long t = 0;

  double step(double theta, double g, double lr, double b1 = 0.9, double b2 = 0.999,
              double eps = 1e-8) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    return theta - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace

TEST(Adam, FiftyStepQuadraticTrajectoryMatchesReference) {
  ParamStore<double> params;
  params.add("theta", {1}).data[0] = 1.0;
  AdamState<double> st = AdamState<double>::init(params);
  AdamConfig cfg{0.1, 0.9, 0.999, 1e-8};

  RefAdam ref;
  double theta_ref = 1.0;
  for (int step = 0; step < 50; ++step) {
    Tensor<double> g({1});
    g.data[0] = 2.0 * params.at("theta").data[0];  // d(theta^2)/dtheta
    adam_step(params, {g}, st, cfg);
    theta_ref = ref.step(theta_ref, 2.0 * theta_ref, cfg.lr);
    ASSERT_NEAR(params.at("theta").data[0], theta_ref, 1e-12) << "step " << step;
  }
  EXPECT_LT(std::abs(params.at("theta").data[0]), 0.1);
}

TEST(Adam, FirstStepMovesByApproximatelyLr) {
  ParamStore<double> params;
  params.add("theta", {1}).data[0] = 3.0;
  AdamState<double> st = AdamState<double>::init(params);
  Tensor<double> g({1});
  g.data[0] = 1.0;
  adam_step(params, {g}, st, AdamConfig{0.1});
  // mhat = g, vhat = g^2, so the update is lr*g/(|g|+eps) ~ lr.
  EXPECT_NEAR(params.at("theta").data[0], 3.0 - 0.1, 1e-8);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, ZeroGradientLeavesParametersButIncrementsStep) {
  ParamStore<double> params;
  params.add("w", {2, 2});
  for (int i = 0; i < 4; ++i) params.at("w").data[i] = i + 0.5;
  AdamState<double> st = AdamState<double>::init(params);
  adam_step(params, {Tensor<double>::zeros({2, 2})}, st, AdamConfig{0.5});
  for (int i = 0; i < 4; ++i) EXPECT_EQ(params.at("w").data[i], i + 0.5);
  EXPECT_EQ(st.t, 1);
}

TEST(Adam, MultipleParametersUpdateIndependently) {
  ParamStore<double> joint;
  joint.add("a", {1}).data[0] = 1.0;
  joint.add("b", {1}).data[0] = -2.0;
  AdamState<double> joint_st = AdamState<double>::init(joint);

  ParamStore<double> solo;
  solo.add("b", {1}).data[0] = -2.0;
  AdamState<double> solo_st = AdamState<double>::init(solo);

  AdamConfig cfg{0.01};
  for (int step = 0; step < 10; ++step) {
    Tensor<double> ga({1}), gb({1});
    ga.data[0] = 2.0 * joint.at("a").data[0];
    gb.data[0] = 2.0 * joint.at("b").data[0];
    adam_step(joint, {ga, gb}, joint_st, cfg);
    Tensor<double> gb2({1});
    gb2.data[0] = 2.0 * solo.at("b").data[0];
    adam_step(solo, {gb2}, solo_st, cfg);
  }
  EXPECT_EQ(joint.at("b").data[0], solo.at("b").data[0]);
}

TEST(Adam, ShapeMismatchThrows) {
  ParamStore<double> params;
  params.add("w", {2});
  AdamState<double> st = AdamState<double>::init(params);
  EXPECT_THROW(adam_step(params, {Tensor<double>::zeros({3})}, st, AdamConfig{}), hdl::Error);
}

TEST(Adam, NonFiniteGradientAbortsWithParameterName) {
  ParamStore<double> params;
  params.add("stem.w", {2});
  AdamState<double> st = AdamState<double>::init(params);
  Tensor<double> g({2});
  g.data[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(params, {g}, st, AdamConfig{});
    FAIL() << "expected an error";
  } catch (const hdl::Error& e) {
    EXPECT_NE(std::string(e.what()).find("stem.w"), std::string::npos);
  }
}

TEST(Adam, GradientCountMismatchThrows) {
  ParamStore<double> params;
  params.add("w", {2});
  AdamState<double> st = AdamState<double>::init(params);
  EXPECT_THROW(adam_step(params, {}, st, AdamConfig{}), hdl::Error);
}

TEST(Adam, FloatPrecisionStaysFinite) {
  ParamStore<float> params;
  params.add("w", {4});
  for (int i = 0; i < 4; ++i) params.at("w").data[i] = 0.25f * (i + 1);
  AdamState<float> st = AdamState<float>::init(params);
  for (int step = 0; step < 200; ++step) {
    Tensor<float> g({4});
    for (int i = 0; i < 4; ++i) g.data[i] = 2.0f * params.at("w").data[i];
    adam_step(params, {g}, st, AdamConfig{0.05});
  }
  for (int i = 0; i < 4; ++i) {
    EXPECT_TRUE(std::isfinite(params.at("w").data[i]));
    EXPECT_LT(std::abs(params.at("w").data[i]), 0.25f);
  }
}
