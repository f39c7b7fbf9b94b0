#include <doctest.h>

#include <cmath>

#include "grad_suite.hpp"
#include "oracles.hpp"
#include "rdcnet/errors.hpp"
#include "rdcnet/ops.hpp"

using namespace rdc;
using rdc::testing::random_tensor;

namespace {

double dot(const Tensor& a, const Tensor& b) {
  const auto x = a.to_vector();
  const auto y = b.to_vector();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d: 1x1 identity kernel returns its input") {
  const Tensor x = random_tensor({2, 3, 4, 5}, 1);
  std::vector<double> eye(9, 0.0);
  for (int i = 0; i < 3; ++i) eye[static_cast<std::size_t>(i * 3 + i)] = 1.0;
  DTypeGuard guard(DType::f64);
  const Tensor w = Tensor::from_values({3, 3, 1, 1}, eye);
  const Tensor y = conv2d(x, w, Tensor{});
  CHECK(y.shape() == x.shape());
  CHECK(y.to_vector() == x.to_vector());
}

TEST_CASE("conv2d: 3x3 ones over constant input gives 9c in the interior") {
  DTypeGuard guard(DType::f64);
  const double c = 0.7;
  const Tensor x = Tensor::full({1, 1, 5, 5}, c);
  const Tensor w = Tensor::full({1, 1, 3, 3}, 1.0);
  Conv2dOptions opt;
  opt.padding = {1, 1};
  const Tensor y = conv2d(x, w, Tensor{}, opt);
  CHECK(y.at(2 * 5 + 2) == doctest::Approx(9 * c));
  CHECK(y.at(0) == doctest::Approx(4 * c));
}

TEST_CASE("conv2d: output extent formula including dilation") {
  CHECK(conv_output_extent(9, 3, 1, 0, 2, "H") == 5);
  CHECK(conv_output_extent(10, 3, 2, 1, 1, "H") == 5);
  CHECK_THROWS_AS(conv_output_extent(4, 3, 1, 0, 2, "H"), ConfigError);
  const Tensor x = Tensor::zeros({1, 2, 9, 9});
  Conv2dOptions opt;
  opt.dilation = {2, 2};
  CHECK(conv2d(x, Tensor::zeros({4, 2, 3, 3}), Tensor{}, opt).shape() == Shape{1, 4, 5, 5});
}

TEST_CASE("conv2d: channel and group mismatches are configuration errors") {
  const Tensor x = Tensor::zeros({1, 4, 6, 6});
  Conv2dOptions opt;
  opt.groups = 3;
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 1, 3, 3}), Tensor{}, opt), ConfigError);
  opt.groups = 2;
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({3, 2, 3, 3}), Tensor{}, opt), ConfigError);
  CHECK_THROWS_AS(conv2d(x, Tensor::zeros({4, 3, 3, 3}), Tensor{}, opt), ConfigError);
  try {
    conv2d(x, Tensor::zeros({4, 3, 3, 3}), Tensor{}, opt);
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("in-channel") != std::string::npos);
  }
}

TEST_CASE("conv2d matches a nested-loop oracle (stride, padding, dilation, groups)") {
  struct Case {
    int n, cin, h, w, cout, k, stride, pad, dil, groups;
  };
  const Case cases[] = {{1, 2, 7, 6, 3, 3, 1, 1, 1, 1},
                        {2, 4, 9, 9, 4, 3, 1, 2, 2, 2},
                        {1, 6, 8, 10, 6, 3, 2, 1, 1, 3},
                        {1, 3, 8, 8, 5, 2, 2, 0, 1, 1},
                        {2, 8, 6, 6, 8, 3, 1, 4, 4, 4}};
  std::uint64_t seed = 10;
  for (const auto& c : cases) {
    const Tensor x = random_tensor({c.n, c.cin, c.h, c.w}, seed++);
    const Tensor w = random_tensor({c.cout, c.cin / c.groups, c.k, c.k}, seed++);
    const Tensor b = random_tensor({c.cout}, seed++);
    Conv2dOptions opt;
    opt.stride = {c.stride, c.stride};
    opt.padding = {c.pad, c.pad};
    opt.dilation = {c.dil, c.dil};
    opt.groups = c.groups;
    DTypeGuard guard(DType::f64);
    const Tensor y = conv2d(x, w, b, opt);
    int oh = 0, ow = 0;
    const auto ref = testing::naive_conv2d(x.to_vector(), c.n, c.cin, c.h, c.w, w.to_vector(), c.cout, c.k, c.k,
                                           b.to_vector(), c.stride, c.pad, c.dil, c.groups, oh, ow);
    REQUIRE(y.shape() == Shape{c.n, c.cout, oh, ow});
    const auto got = y.to_vector();
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d in 32-bit agrees with 64-bit") {
  const Tensor x64 = random_tensor({1, 4, 8, 8}, 3);
  const Tensor w64 = random_tensor({4, 2, 3, 3}, 4);
  const Tensor x32 = Tensor::from_values(x64.shape(), x64.to_vector());
  const Tensor w32 = Tensor::from_values(w64.shape(), w64.to_vector());
  Conv2dOptions opt;
  opt.padding = {2, 2};
  opt.dilation = {2, 2};
  opt.groups = 2;
  const auto a = conv2d(x64, w64, Tensor{}, opt).to_vector();
  const auto b = conv2d(x32, w32, Tensor{}, opt).to_vector();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-5));
}

TEST_CASE("conv2d_transpose: shapes and zero weights") {
  const Tensor x = random_tensor({1, 3, 8, 8}, 5);
  DTypeGuard guard(DType::f64);
  ConvTranspose2dOptions opt;
  opt.stride = {2, 2};
  opt.padding = {1, 1};
  const Tensor y = conv2d_transpose(x, Tensor::zeros({3, 2, 4, 4}), Tensor{}, opt);
  CHECK(y.shape() == Shape{1, 2, 16, 16});
  for (double v : y.to_vector()) CHECK(v == 0.0);
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d") {
  struct Case {
    int n, cin, cout, h, k, stride, pad;
  };
  const Case cases[] = {{2, 4, 3, 9, 3, 1, 1}, {1, 2, 4, 8, 4, 2, 1}, {2, 3, 2, 9, 3, 2, 0}, {1, 4, 4, 6, 2, 2, 0}};
  std::uint64_t seed = 50;
  for (const auto& c : cases) {
    const Tensor x = random_tensor({c.n, c.cin, c.h, c.h}, seed++);
    const Tensor w = random_tensor({c.cout, c.cin, c.k, c.k}, seed++);
    Conv2dOptions fwd;
    fwd.stride = {c.stride, c.stride};
    fwd.padding = {c.pad, c.pad};
    DTypeGuard guard(DType::f64);
    const Tensor cx = conv2d(x, w, Tensor{}, fwd);
    const Tensor y = random_tensor(cx.shape(), seed++);
    ConvTranspose2dOptions adj;
    adj.stride = fwd.stride;
    adj.padding = fwd.padding;
    Tensor ty = conv2d_transpose(y, w, Tensor{}, adj);
    // The adjoint may produce a slightly larger extent when stride does not
    // divide evenly; compare over the input's extent.
    ty = narrow(narrow(ty, 2, 0, c.h), 3, 0, c.h);
    const double lhs = dot(cx, y);
    const double rhs = dot(x, ty);
    CHECK(std::abs(lhs - rhs) <= 1e-5 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("leaky_relu values and slope validation") {
  DTypeGuard guard(DType::f64);
  const Tensor x = Tensor::from_values({4}, std::vector<double>{-1.0, -2.0, 0.0, 3.0}, true);
  const Tensor y = leaky_relu(x, 0.01);
  CHECK(y.at(0) == doctest::Approx(-0.01));
  CHECK(y.at(2) == 0.0);
  CHECK(y.at(3) == 3.0);
  sum(y).backward();
  CHECK(x.grad().at(1) == doctest::Approx(0.01));
  CHECK(x.grad().at(3) == 1.0);
  CHECK_THROWS_AS(leaky_relu(x, 1.0), ConfigError);
  CHECK_THROWS_AS(leaky_relu(x, 0.0), ConfigError);
}

TEST_CASE("softmax closed forms and invariants") {
  DTypeGuard guard(DType::f64);
  const Tensor a = Tensor::from_values({2}, std::vector<double>{0.0, std::log(3.0)});
  const Tensor s = softmax(a, 0);
  CHECK(s.at(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s.at(1) == doctest::Approx(0.75).epsilon(1e-12));
  const Tensor u = softmax(Tensor::full({4}, 2.0), 0);
  for (double v : u.to_vector()) CHECK(v == doctest::Approx(0.25));

  const Tensor x = random_tensor({2, 3, 4, 5}, 77, -30.0, 30.0);
  const Tensor sx = softmax(x, 1);
  const auto sv = sx.to_vector();
  for (int n = 0; n < 2; ++n) {
    for (int p = 0; p < 20; ++p) {
      double total = 0.0;
      for (int c = 0; c < 3; ++c) total += sv[static_cast<std::size_t>((n * 3 + c) * 20 + p)];
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
  }
  // Shift invariance along the axis.
  std::vector<double> shifted = x.to_vector();
  for (auto& v : shifted) v += 100.0;
  const auto s2 = softmax(Tensor::from_values(x.shape(), shifted), 1).to_vector();
  for (std::size_t i = 0; i < sv.size(); ++i) CHECK(s2[i] == doctest::Approx(sv[i]).epsilon(1e-9));
}

TEST_CASE("spatial_dropout contract") {
  const Tensor x = random_tensor({2, 5, 3, 3}, 8);
  Rng rng(1);
  CHECK(spatial_dropout(x, 0.0, true, rng).to_vector() == x.to_vector());
  CHECK(spatial_dropout(x, 0.5, false, rng).to_vector() == x.to_vector());
  CHECK_THROWS_AS(spatial_dropout(x, 1.0, true, rng), ConfigError);

  // Whole planes are dropped or scaled by 1/(1-p).
  const Tensor ones = Tensor::full({4, 8, 3, 3}, 1.0);
  const auto d = spatial_dropout(ones, 0.25, true, rng).to_vector();
  for (std::size_t plane = 0; plane < 32; ++plane) {
    const double first = d[plane * 9];
    CHECK((first == 0.0 || std::abs(first - 1.0 / 0.75) < 1e-6));
    for (std::size_t k = 1; k < 9; ++k) CHECK(d[plane * 9 + k] == first);
  }

  // Expectation is preserved.
  const Tensor c = Tensor::full({1, 1, 1, 1}, 2.0);
  double total = 0.0;
  const int trials = 10000;
  for (int t = 0; t < trials; ++t) total += spatial_dropout(c, 0.1, true, rng).item();
  CHECK(std::abs(total / trials - 2.0) / 2.0 < 0.02);
}

TEST_CASE("spatial_dropout is reproducible for a fixed seed") {
  const Tensor x = random_tensor({2, 6, 2, 2}, 4);
  Rng a(11), b(11);
  CHECK(spatial_dropout(x, 0.3, true, a).to_vector() == spatial_dropout(x, 0.3, true, b).to_vector());
}

TEST_CASE("shape ops") {
  DTypeGuard guard(DType::f64);
  const Tensor a = Tensor::from_values({1, 2, 1, 1}, std::vector<double>{1, 2});
  const Tensor b = Tensor::from_values({1, 2, 1, 1}, std::vector<double>{3, 4});
  const std::vector<Tensor> parts{a, b};
  CHECK(concat(parts, 1).to_vector() == std::vector<double>{1, 2, 3, 4});
  CHECK(interleave_groups(parts, 2).to_vector() == std::vector<double>{1, 3, 2, 4});
  CHECK(narrow(concat(parts, 1), 1, 1, 2).to_vector() == std::vector<double>{2, 3});
  CHECK_THROWS_AS(narrow(a, 1, 1, 2), UsageError);
  CHECK(reshape(a, {2}).shape() == Shape{2});
  CHECK_THROWS_AS(reshape(a, {3}), UsageError);
  CHECK(mean(concat(parts, 1)).item() == doctest::Approx(2.5));
}

TEST_CASE("gradient check: every differentiable op") {
  for (const auto& c : testing::op_gradient_cases()) {
    const auto r = c.run();
    INFO(c.name, ": worst ", r.worst, " over ", r.checked, " elements");
    CHECK(r.max_rel_error < c.tolerance);
  }
}
