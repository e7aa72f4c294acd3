#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "support/gradcheck.hpp"
#include "seclm/checkpoint.hpp"
#include "seclm/error.hpp"
#include "seclm/optim.hpp"

using namespace seclm;
using namespace seclm::ad;
using seclm::testing::check_gradient;
using seclm::testing::random_tensor;

namespace {

constexpr double kTol = 1e-6;

void expect_grad(const seclm::testing::ScalarFn& f, const Tensor& x, double tol = kTol) {
  const auto r = check_gradient(f, x);
  EXPECT_LT(r.relative(), tol) << "abs error " << r.max_abs_error << " scale " << r.scale;
}

}  // namespace

TEST(Autodiff, ElementwiseOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 3}, rng, 0.2, 1.5);
  const Tensor c = random_tensor({2, 3}, rng, 0.5, 1.0);
  expect_grad([&](Tape& t, const Var& v) { return sum(v * t.constant(c) + v); }, x);
  expect_grad([&](Tape& t, const Var& v) { return sum(div(t.constant(c), v) - v); }, x);
  expect_grad([](Tape&, const Var& v) { return sum(exp(v) + log(v) + tanh(v) + sqrt(v)); }, x);
  expect_grad([](Tape&, const Var& v) { return mean(square(neg(v)) * 3.0); }, x);
  expect_grad([](Tape&, const Var& v) { return sum(relu(add_scalar(v, -0.9))); }, x);
  expect_grad([](Tape&, const Var& v) { return sum(scale_by(slice(v, 0, 1), v)); }, x);
}

TEST(Autodiff, MatrixOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 2}, rng);
  const Tensor r = random_tensor({4}, rng);
  expect_grad([&](Tape& t, const Var& v) { return sum(square(matmul(v, t.constant(b)))); }, a);
  expect_grad([&](Tape& t, const Var& v) { return sum(square(matmul(t.constant(a), v))); }, b);
  expect_grad([&](Tape& t, const Var& v) { return sum(square(matmul(t.constant(a), v))); }, r);
  expect_grad([&](Tape& t, const Var& v) { return sum(square(add_row(v, t.constant(r)))); }, a);
  expect_grad([](Tape&, const Var& v) { return sum(square(transpose(v))) + l2_norm(v); }, a);
  expect_grad([](Tape&, const Var& v) { return sum(square(softmax(v))); }, a);
  expect_grad([](Tape&, const Var& v) { return sum(square(softmax(v))); }, r);
  expect_grad([&](Tape& t, const Var& v) { return dot(v, t.constant(r)) * dot(v, v); }, r);
}

TEST(Autodiff, StructuralOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  const Tensor a = random_tensor({3, 3}, rng);
  const Tensor w = random_tensor({9}, rng);
  expect_grad([&](Tape& t, const Var& v) { return dot(reshape(v, {9}), t.constant(w)); }, a);
  expect_grad([](Tape&, const Var& v) { return sum(square(concat({row(v, 2), slice(v, 1, 4), v}))); }, a);
  expect_grad([](Tape&, const Var& v) { return sum(square(stack_rows({row(v, 1), row(v, 0)}) * 2.0)); }, a);
  expect_grad([](Tape&, const Var& v) { return sum(square(cross(row(v, 0), row(v, 1)))); }, a);
}

TEST(Autodiff, SolveMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  Tensor a = random_tensor({3, 3}, rng);
  for (std::size_t i = 0; i < 3; ++i) a.at(i, i) += 3.0;
  const Tensor b = random_tensor({3}, rng);
  expect_grad([&](Tape& t, const Var& v) { return sum(square(solve(v, t.constant(b)))); }, a);
  expect_grad([&](Tape& t, const Var& v) { return sum(square(solve(t.constant(a), v))); }, b);
}

TEST(Autodiff, Im2colGradientAndLayout) {
  std::mt19937_64 rng(5);
  const Tensor img = random_tensor({4 * 5, 2}, rng);
  expect_grad([](Tape&, const Var& v) { return sum(square(im2col(v, 4, 5, 3, 2, 1))); }, img);
  Tape t;
  const Var cols = im2col(t.constant(img), 4, 5, 3, 2, 1);
  // Output (2·3 positions, 3·3·2); the centre tap of output (0,0) is pixel (0,0).
  ASSERT_EQ(cols.shape(), (Shape{6, 18}));
  EXPECT_EQ(cols.value().at(0, 8), img.at(0, 0));
  EXPECT_EQ(cols.value().at(0, 9), img.at(0, 1));
  EXPECT_EQ(cols.value().at(0, 0), 0.0);  // padding
}

TEST(Autodiff, ReusedNodeAccumulates) {
  Tape t;
  const Var x = t.leaf(Tensor::vector({3.0, -2.0}));
  const Gradients g = t.backward(sum(x * x));
  EXPECT_DOUBLE_EQ(g.of(x)[0], 6.0);
  EXPECT_DOUBLE_EQ(g.of(x)[1], -4.0);
}

TEST(Autodiff, StopGradientDetaches) {
  Tape t;
  const Var x = t.leaf(Tensor::vector({1.0, 2.0}));
  const Var y = t.leaf(Tensor::vector({0.5, 0.5}));
  const Gradients g = t.backward(sum(stop_gradient(x) * y));
  bool detached = false;
  const Tensor gx = g.of(x, &detached);
  EXPECT_TRUE(detached);
  EXPECT_EQ(gx[0], 0.0);
  EXPECT_DOUBLE_EQ(g.of(y)[1], 2.0);
}

TEST(Autodiff, ShapeMismatchThrowsShapeError) {
  Tape t;
  const Var a = t.constant(Tensor({2, 3}));
  const Var b = t.constant(Tensor({3, 2}));
  try {
    (void)add(a, b);
    FAIL() << "expected a shape error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
  EXPECT_THROW((void)matmul(a, a), Error);
}

TEST(Optim, FirstAdamStepMovesByLearningRateTimesSign) {
  ParameterSet p{{"w", Tensor::vector({1.0, -1.0, 0.0})}};
  const ParameterSet g{{"w", Tensor::vector({0.5, -2.0, 0.0})}};
  Adam adam;
  adam.step(p, g, 0.1);
  // m̂ = g, v̂ = g², so the update is lr·g / (|g| + ε).
  EXPECT_NEAR(p["w"][0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  EXPECT_NEAR(p["w"][1], -1.0 + 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
  EXPECT_EQ(p["w"][2], 0.0);
}

TEST(Optim, StepDecayScheduleIsExact) {
  for (std::size_t step : {0u, 1999u, 2000u, 4001u, 10000u}) {
    const double expect = 1e-4 * std::pow(0.8, std::floor(static_cast<double>(step) / 2000.0));
    EXPECT_DOUBLE_EQ(decayed_learning_rate(1e-4, 0.8, 2000, step), expect) << step;
  }
}

TEST(Checkpoint, RoundTripIsLossless) {
  std::mt19937_64 rng(6);
  Checkpoint c;
  c.parameters["a/w"] = random_tensor({3, 2}, rng);
  c.parameters["b"] = Tensor::vector({0.1, 1.0 / 3.0, -1e-300});
  c.metadata = {{"phase", 1}};
  const auto path = std::filesystem::temp_directory_path() / "seclm_ckpt_roundtrip.json";
  save_checkpoint(path, c);
  const Checkpoint r = load_checkpoint(path);
  std::filesystem::remove(path);
  ASSERT_EQ(r.parameters.size(), 2u);
  for (const auto& [k, v] : c.parameters) {
    EXPECT_EQ(r.parameters.at(k).shape(), v.shape());
    for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(r.parameters.at(k)[i], v[i]);
  }
  EXPECT_EQ(r.metadata["phase"], 1);
  EXPECT_EQ(with_prefix(c.parameters, "a/").size(), 1u);
}
