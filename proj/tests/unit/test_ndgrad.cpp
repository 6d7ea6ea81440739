#include <cmath>
#include <numbers>

#include "doctest.h"
#include "test_util.hpp"

using namespace sdid;
using namespace sdid::nd;
using testutil::probe;
using testutil::random_tensor;
using testutil::TensorD;
using testutil::TensorF;

TEST_CASE("rng: splitmix64 reference stream and normal moments") {
  Rng rng(0);
  CHECK(rng.next_u64() == 0xe220a8397b1dcdafULL);
  CHECK(rng.next_u64() == 0x6e789e6aa1b965f4ULL);
  CHECK(rng.next_u64() == 0x06c45d188009454fULL);

  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());

  Rng n(7);
  double s = 0, s2 = 0;
  const int count = 200000;
  for (int i = 0; i < count; ++i) {
    const double z = n.normal();
    s += z;
    s2 += z * z;
  }
  CHECK(std::abs(s / count) < 0.01);
  CHECK(std::abs(s2 / count - 1.0) < 0.02);
}

TEST_CASE("tensor: shape invariants") {
  CHECK_THROWS_AS(TensorD::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(TensorD::zeros({2, 0}), DimensionError);
  auto t = TensorD::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("matmul: identity, hand case, shape errors") {
  auto eye = TensorD::from({2, 2}, {1, 0, 0, 1});
  auto m = TensorD::from({2, 2}, {3.5, -1, 2, 7});
  auto r = matmul(eye, m);
  CHECK(Buffer<double>(r.data().begin(), r.data().end()) == m.values());

  auto a = TensorD::from({2, 2}, {1, 2, 3, 4});
  auto ones = TensorD::from({2, 1}, {1, 1});
  auto c = matmul(a, ones);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.data()[0] == 3);
  CHECK(c.data()[1] == 7);

  CHECK_THROWS_AS(matmul(a, TensorD::zeros({3, 1})), DimensionError);
}

TEST_CASE("matmul: gradient of sum(A*B) matches central differences") {
  Rng rng(1);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 2}, rng);
  auto rep = grad_check([&] { return sum(matmul(a, b)); }, {a, b}, {.tol = 1e-6});
  CHECK(rep.pass);
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("conv2d: identity 1x1, 3x3 ones, geometry") {
  Rng rng(2);
  auto x = random_tensor({2, 3, 4, 5}, rng, -1, 1, false);
  std::vector<double> w(9, 0.0);
  for (int i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
  auto wid = TensorD::from({3, 3, 1, 1}, w);
  auto bias = TensorD::zeros({3});
  auto y = conv2d(x, wid, &bias, 1, 0);
  CHECK(y.values() == x.values());

  auto img = TensorD::full({1, 1, 3, 3}, 1.0);
  auto k = TensorD::full({1, 1, 3, 3}, 1.0);
  auto s = conv2d(img, k, nullptr, 1, 1);
  CHECK(s.shape() == Shape{1, 1, 3, 3});
  CHECK(s.data()[4] == 9.0);  // centre
  CHECK(s.data()[0] == 4.0);  // corner sees a 2x2 patch
  CHECK(s.data()[1] == 6.0);

  auto big = TensorD::zeros({1, 1, 32, 32});
  auto w3 = TensorD::zeros({4, 1, 3, 3});
  CHECK(conv2d(big, w3, nullptr, 2, 1).shape() == Shape{1, 4, 16, 16});
  CHECK_THROWS_AS(conv2d(big, TensorD::zeros({4, 2, 3, 3}), nullptr, 1, 1), DimensionError);
  CHECK_THROWS_AS(conv2d(TensorD::zeros({1, 1, 1, 1}), w3, nullptr, 1, 0), DimensionError);
}

TEST_CASE("conv2d: gradcheck wrt input, weight and bias") {
  Rng rng(3);
  for (std::size_t k : {1u, 3u})
    for (std::size_t stride : {1u, 2u}) {
      auto x = random_tensor({2, 2, 6, 6}, rng);
      auto w = random_tensor({3, 2, k, k}, rng);
      auto b = random_tensor({3}, rng);
      auto rep = grad_check([&] { return probe(conv2d(x, w, &b, stride, k / 2)); }, {x, w, b}, {.tol = 1e-6});
      CAPTURE(k);
      CAPTURE(stride);
      CHECK(rep.max_rel_err <= 1e-6);
    }
}

TEST_CASE("layer_norm: statistics, degenerate input, closed form") {
  auto ones = TensorD::full({3}, 1.0);
  auto zeros = TensorD::zeros({3});
  auto c = layer_norm(TensorD::full({2, 3}, 5.0), ones, zeros, 1e-5);
  for (double v : c.data()) CHECK(v == 0.0);

  auto y = layer_norm(TensorD::from({1, 3}, {1, 2, 3}), ones, zeros, 1e-5);
  const double denom = std::sqrt(2.0 / 3.0 + 1e-5);
  CHECK(y.data()[0] == doctest::Approx(-1.0 / denom).epsilon(1e-12));
  CHECK(y.data()[1] == doctest::Approx(0.0));
  CHECK(y.data()[2] == doctest::Approx(1.0 / denom).epsilon(1e-12));

  Rng rng(4);
  auto x = random_tensor({5, 8}, rng, -3, 3, false);
  auto g8 = TensorD::full({8}, 1.0), b8 = TensorD::zeros({8});
  auto n = layer_norm(x, g8, b8, 1e-5);
  for (int r = 0; r < 5; ++r) {
    double m = 0, v = 0;
    for (int j = 0; j < 8; ++j) m += n.data()[r * 8 + j];
    m /= 8;
    for (int j = 0; j < 8; ++j) v += (n.data()[r * 8 + j] - m) * (n.data()[r * 8 + j] - m);
    v /= 8;
    CHECK(std::abs(m) <= 1e-6);
    CHECK(std::abs(v - 1.0) <= 1e-4);
  }
}

TEST_CASE("layer_norm: gradcheck") {
  Rng rng(5);
  auto x = random_tensor({4, 6}, rng);
  auto g = random_tensor({6}, rng, 0.5, 1.5);
  auto b = random_tensor({6}, rng);
  auto rep = grad_check([&] { return probe(layer_norm(x, g, b, 1e-5)); }, {x, g, b}, {.tol = 1e-6});
  CHECK(rep.max_rel_err <= 1e-6);
}

TEST_CASE("softmax: symmetry, closed form, shift invariance") {
  auto u = softmax_lastdim(TensorD::zeros({2, 4}));
  for (double v : u.data()) CHECK(v == doctest::Approx(0.25));

  auto p = softmax_lastdim(TensorD::from({1, 2}, {0.0, std::log(3.0)}));
  CHECK(p.data()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(p.data()[1] == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(6);
  auto x = random_tensor({3, 5}, rng, -4, 4, false);
  auto shifted = affine_scalar(x, 1.0, 17.25);
  auto a = softmax_lastdim(x), b = softmax_lastdim(shifted);
  CHECK(testutil::max_abs_diff(a.data(), b.data()) <= 1e-7);
  for (int r = 0; r < 3; ++r) {
    double s = 0;
    for (int j = 0; j < 5; ++j) s += a.data()[r * 5 + j];
    CHECK(std::abs(s - 1.0) <= 1e-6);
  }
}

TEST_CASE("elementwise: definitions") {
  auto r = relu(TensorD::from({2}, {-1.0, 2.0}));
  CHECK(r.data()[0] == 0.0);
  CHECK(r.data()[1] == 2.0);
  CHECK(sigmoid(TensorD::scalar(0.0)).item() == 0.5);
  CHECK(gelu(TensorD::scalar(0.0)).item() == 0.0);
  // tanh-approximation value at 1
  CHECK(gelu(TensorD::scalar(1.0)).item() == doctest::Approx(0.8411919906082768).epsilon(1e-12));
  // saturated sigmoid is exactly 0 or 1, which the mask fusion relies on
  CHECK(sigmoid(TensorD::scalar(1e4)).item() == 1.0);
  CHECK(sigmoid(TensorD::scalar(-1e4)).item() == 0.0);
  CHECK(sigmoid(TensorF::scalar(1e4f)).item() == 1.0f);
  CHECK(sigmoid(TensorF::scalar(-1e4f)).item() == 0.0f);
}

TEST_CASE("broadcast: shapes and errors") {
  auto a = TensorD::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = TensorD::from({3}, {10, 20, 30});
  auto c = add(a, b);
  CHECK(c.values() == Buffer<double>{11, 22, 33, 14, 25, 36});
  auto col = TensorD::from({2, 1}, {2, 3});
  auto m = mul(a, col);
  CHECK(m.values() == Buffer<double>{2, 4, 6, 12, 15, 18});
  CHECK_THROWS_AS(add(a, TensorD::zeros({2})), DimensionError);
}

TEST_CASE("avg_pool2 and upsample_nearest2") {
  auto c = avg_pool2(TensorD::full({1, 2, 4, 4}, 0.3));
  for (double v : c.data()) CHECK(v == doctest::Approx(0.3));
  auto blk = avg_pool2(TensorD::from({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(blk.item() == 2.5);
  CHECK_THROWS_AS(avg_pool2(TensorD::zeros({1, 1, 3, 4})), DimensionError);

  Rng rng(8);
  auto x = random_tensor({2, 3, 6, 4}, rng, -1, 1, false);
  auto pooled = avg_pool2(x);
  double total_in = 0, total_out = 0;
  for (double v : x.data()) total_in += v;
  for (double v : pooled.data()) total_out += v;
  CHECK(std::abs(4 * total_out - total_in) <= 1e-5);

  auto u = upsample_nearest2(TensorD::from({1, 1, 1, 1}, {7}));
  CHECK(u.values() == Buffer<double>{7, 7, 7, 7});
  auto back = avg_pool2(upsample_nearest2(x));
  CHECK(back.values() == x.values());
}

TEST_CASE("backward: linearity, closed form, diamond, misuse") {
  auto x = TensorD::from({3}, {1, 2, 3}, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  auto y = TensorD::from({2}, {1, 2}, true);
  backward(sum(mul(y, y)));
  CHECK(y.grad()[0] == 2.0);
  CHECK(y.grad()[1] == 4.0);

  // f = sum(u * exp-free path): u = 3x, v = x*x, f = sum(u*v) -> df/dx = 9x^2
  auto d = TensorD::from({2}, {1.5, -2.0}, true);
  auto u = scale(d, 3.0);
  auto v = mul(d, d);
  backward(sum(mul(u, v)));
  CHECK(d.grad()[0] == doctest::Approx(9 * 1.5 * 1.5));
  CHECK(d.grad()[1] == doctest::Approx(9 * 4.0));

  auto z = TensorD::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(mul(z, z)), GraphError);  // non-scalar
  CHECK_THROWS_AS(backward(sum(TensorD::from({2}, {1, 2}))), GraphError);  // detached
  auto loss = sum(mul(z, z));
  backward(loss);
  CHECK_THROWS_AS(backward(loss), GraphError);  // repeated

  // leaves accumulate across graphs until reset
  auto w = TensorD::from({1}, {2.0}, true);
  backward(sum(w));
  backward(sum(w));
  CHECK(w.grad()[0] == 2.0);
  w.zero_grad();
  CHECK_FALSE(w.has_grad());
}

TEST_CASE("grad_check: exact linear case and corrupted negative control") {
  Rng rng(9);
  auto x = random_tensor({5}, rng);
  auto lin = grad_check([&] { return probe(x); }, {x});
  CHECK(lin.max_rel_err <= 1e-9);
  CHECK(lin.pass);

  auto q = random_tensor({4}, rng);
  auto bad = grad_check([&] { return sum(mul(scaled_backward_identity(q, 1.01), q)); }, {q});
  CHECK_FALSE(bad.pass);
  auto good = grad_check([&] { return sum(mul(scaled_backward_identity(q, 1.0), q)); }, {q});
  CHECK(good.pass);
}

TEST_CASE("grad_check: coarse step is used only away from kinks") {
  // |x - 3e-5| at x = 0 has slope -1; a 1e-4 central difference straddles the kink
  auto x = TensorD::from({1}, {0.0}, true);
  const auto kink = [&] { return sum(abs(affine_scalar(x, 1.0, -3e-5))); };
  GradCheckOptions opt;
  opt.coarse_step = 1e-4;
  CHECK(grad_check(kink, {x}, opt).pass);
  GradCheckOptions coarse_only;
  coarse_only.step = 1e-4;
  CHECK_FALSE(grad_check(kink, {x}, coarse_only).pass);

  // tiny slope under a large offset: rounding at 1e-5 is visible, 1e-4 is not
  auto y = TensorD::from({1}, {0.3}, true);
  const auto flat = [&] { return add(scale(mul(y, y), 1e-6), TensorD::scalar(1.0)); };
  GradCheckOptions fine;
  CHECK_FALSE(grad_check(flat, {y}, fine).pass);
  CHECK(grad_check(flat, {y}, opt).pass);
}

TEST_CASE("property: every differentiable op passes grad_check over 20 seeds") {
  double worst = 0;
  for (std::uint64_t seed = 100; seed < 120; ++seed) {
    Rng rng(seed);
    const std::size_t b = 1 + rng.below(2), c = 1 + rng.below(3), h = 2 * (1 + rng.below(3)),
                      w = 2 * (1 + rng.below(3)), d = 2 + rng.below(4);
    auto x4 = random_tensor({b, c, h, w}, rng);
    auto x2 = random_tensor({h, d}, rng);
    auto m2 = random_tensor({d, 3}, rng);
    auto bias3 = random_tensor({3}, rng);
    auto g = random_tensor({d}, rng, 0.5, 1.5);
    auto be = random_tensor({d}, rng);
    auto wk = random_tensor({2, c, 3, 3}, rng);
    auto bk = random_tensor({2}, rng);
    auto row = random_tensor({d}, rng);
    auto ba = random_tensor({2, h, d}, rng);
    auto bb = random_tensor({2, d, 3}, rng);
    auto ss = random_tensor({b, c}, rng, 0.5, 1.5);
    auto sb = random_tensor({b, c}, rng);
    // keep |x| away from the kinks of relu/abs
    auto away = random_tensor({h, d}, rng, 0.2, 1.0);
    auto signs = TensorD::from({h, d}, std::vector<double>(h * d, 1.0));
    for (std::size_t i = 0; i < h * d; ++i)
      if (rng.uniform() < 0.5) signs.values()[i] = -1.0;
    auto kinkfree = TensorD::from({h, d}, away.values(), true);
    for (std::size_t i = 0; i < h * d; ++i) kinkfree.values()[i] *= signs.values()[i];

    std::vector<std::pair<const char*, GradCheckReport>> reps;
    reps.emplace_back("matmul", grad_check([&] { return probe(matmul(x2, m2)); }, {x2, m2}));
    reps.emplace_back("bmm", grad_check([&] { return probe(bmm(ba, bb)); }, {ba, bb}));
    reps.emplace_back("bmm_t", grad_check([&] { return probe(bmm(ba, ba, true)); }, {ba}));
    reps.emplace_back("linear", grad_check([&] { return probe(linear(x2, m2, &bias3)); }, {x2, m2, bias3}));
    reps.emplace_back("conv2d", grad_check([&] { return probe(conv2d(x4, wk, &bk, 1, 1)); }, {x4, wk, bk}));
    reps.emplace_back("layer_norm", grad_check([&] { return probe(layer_norm(x2, g, be)); }, {x2, g, be}));
    reps.emplace_back("softmax", grad_check([&] { return probe(softmax_lastdim(x2)); }, {x2}));
    reps.emplace_back("add", grad_check([&] { return probe(add(x2, row)); }, {x2, row}));
    reps.emplace_back("sub", grad_check([&] { return probe(sub(x2, row)); }, {x2, row}));
    reps.emplace_back("mul", grad_check([&] { return probe(mul(x2, row)); }, {x2, row}));
    reps.emplace_back("scale", grad_check([&] { return probe(affine_scalar(x2, -1.7, 0.3)); }, {x2}));
    reps.emplace_back("gelu", grad_check([&] { return probe(gelu(x2)); }, {x2}));
    reps.emplace_back("sigmoid", grad_check([&] { return probe(sigmoid(x2)); }, {x2}));
    reps.emplace_back("relu", grad_check([&] { return probe(relu(kinkfree)); }, {kinkfree}));
    reps.emplace_back("abs", grad_check([&] { return probe(abs(kinkfree)); }, {kinkfree}));
    reps.emplace_back("mean", grad_check([&] { return mean(mul(x2, x2)); }, {x2}));
    reps.emplace_back("avg_pool2", grad_check([&] { return probe(avg_pool2(x4)); }, {x4}));
    reps.emplace_back("upsample", grad_check([&] { return probe(upsample_nearest2(x4)); }, {x4}));
    reps.emplace_back("gap", grad_check([&] { return probe(global_avg_pool(x4)); }, {x4}));
    reps.emplace_back("permute", grad_check([&] { return probe(nchw_to_nhwc(x4)); }, {x4}));
    reps.emplace_back("slice", grad_check([&] { return probe(slice_lastdim(x2, 1, d)); }, {x2}));
    reps.emplace_back("adain", grad_check([&] { return probe(adain(x4, ss, sb)); }, {x4, ss, sb}));
    for (auto& [name, rep] : reps) {
      CAPTURE(name);
      CAPTURE(seed);
      CHECK(rep.max_rel_err <= 1e-5);
      worst = std::max(worst, rep.max_rel_err);
    }
  }
  MESSAGE("worst relative error over all ops and seeds: " << worst);
}

TEST_CASE("adain: inverse normalization, zero variance, closed form") {
  Rng rng(11);
  auto e = random_tensor({2, 3, 4, 4}, rng, -2, 2, false);
  // per (b,c) statistics
  std::vector<double> mu(6), sd(6);
  for (int p = 0; p < 6; ++p) {
    double m = 0, v = 0;
    for (int i = 0; i < 16; ++i) m += e.data()[p * 16 + i];
    m /= 16;
    for (int i = 0; i < 16; ++i) v += (e.data()[p * 16 + i] - m) * (e.data()[p * 16 + i] - m);
    v /= 16;
    mu[p] = m;
    sd[p] = std::sqrt(v + 1e-5);
  }
  auto out = adain(e, TensorD::from({2, 3}, sd), TensorD::from({2, 3}, mu), 1e-5);
  CHECK(testutil::max_abs_diff(out.data(), e.data()) <= 1e-5);

  auto flat = adain(TensorD::full({1, 1, 2, 2}, 4.0), TensorD::from({1}, {3.0}), TensorD::from({1}, {-0.5}));
  for (double v : flat.data()) CHECK(v == doctest::Approx(-0.5));

  auto hand = adain(TensorD::from({1, 1, 2, 2}, {1, 2, 3, 4}), TensorD::from({1}, {2.0}), TensorD::from({1}, {1.0}),
                    1e-5);
  const double sigma = std::sqrt(1.25 + 1e-5);
  const double expect[4] = {1 + 2 * (-1.5) / sigma, 1 + 2 * (-0.5) / sigma, 1 + 2 * 0.5 / sigma,
                            1 + 2 * 1.5 / sigma};
  for (int i = 0; i < 4; ++i) CHECK(hand.data()[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  CHECK(hand.data()[0] == doctest::Approx(-1.683).epsilon(1e-3));
}

TEST_CASE("determinism and finiteness sweep") {
  auto run = [] {
    Rng rng(12);
    std::vector<float> v(2 * 3 * 8 * 8);
    for (auto& x : v) x = static_cast<float>(rng.normal());
    auto x = TensorF::from({2, 3, 8, 8}, v);
    std::vector<float> wv(4 * 3 * 9);
    for (auto& w : wv) w = static_cast<float>(rng.uniform(-0.3, 0.3));
    auto w = TensorF::from({4, 3, 3, 3}, wv);
    auto y = gelu(conv2d(x, w, nullptr, 1, 1));
    auto g = TensorF::full({8}, 1.0f), b = TensorF::zeros({8});
    auto z = softmax_lastdim(layer_norm(y, g, b));
    return sigmoid(upsample_nearest2(avg_pool2(z))).values();
  };
  auto a = run(), b = run();
  CHECK(a == b);
  CHECK(all_finite(std::span<const float>(a)));
}
