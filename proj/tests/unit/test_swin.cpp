#include <cmath>

#include "doctest.h"
#include "sdid/swin/swin.hpp"
#include "test_util.hpp"

using namespace sdid;
using namespace sdid::nd;
using namespace sdid::swin;
using testutil::probe;
using testutil::random_tensor;
using testutil::TensorD;

namespace {

void randomize(SwinBlockParams<double>& p, Rng& rng, double spread = 0.5) {
  for (auto* t : {&p.p_q, &p.p_k, &p.p_v, &p.proj_w, &p.proj_b, &p.bias_table, &p.ln1_b, &p.ln2_b, &p.fc1_w,
                  &p.fc1_b, &p.fc2_w, &p.fc2_b})
    for (auto& v : t->values()) v = rng.uniform(-spread, spread);
  for (auto* t : {&p.ln1_g, &p.ln2_g})
    for (auto& v : t->values()) v = rng.uniform(0.5, 1.5);
}

std::vector<Tensor<double>> block_params(const SwinBlockParams<double>& p) {
  return {p.p_q, p.p_k, p.p_v, p.proj_w, p.proj_b, p.bias_table, p.ln1_g,
          p.ln1_b, p.ln2_g, p.ln2_b, p.fc1_w, p.fc1_b, p.fc2_w, p.fc2_b};
}

// Plain-loop attention over one window list; `allowed(w, a, b)` restricts the
// key set for query a in window w.
template <typename Allowed>
std::vector<double> dense_wmsa(const TensorD& windows, const SwinBlockParams<double>& p, Allowed allowed) {
  const std::size_t n = windows.dim(0), t = windows.dim(1), d = p.dim, heads = p.heads, hd = d / heads;
  const std::size_t m = p.window, span = 2 * m - 1;
  const auto& x = windows.values();
  auto proj = [&](const TensorD& w, std::size_t win, std::size_t tok, std::size_t col) {
    double s = 0;
    for (std::size_t i = 0; i < d; ++i) s += x[(win * t + tok) * d + i] * w.values()[i * d + col];
    return s;
  };
  std::vector<double> merged(n * t * d, 0.0);
  for (std::size_t win = 0; win < n; ++win)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t a = 0; a < t; ++a) {
        std::vector<double> logits(t, -INFINITY);
        for (std::size_t b = 0; b < t; ++b) {
          if (!allowed(win, a, b)) continue;
          double s = 0;
          for (std::size_t j = 0; j < hd; ++j) s += proj(p.p_q, win, a, h * hd + j) * proj(p.p_k, win, b, h * hd + j);
          const std::size_t ra = a / m, ca = a % m, rb = b / m, cb = b % m;
          const std::size_t rel = (ra + m - 1 - rb) * span + (ca + m - 1 - cb);
          logits[b] = s / std::sqrt(double(hd)) + p.bias_table.values()[rel * heads + h];
        }
        double mx = -INFINITY, z = 0;
        for (double l : logits) mx = std::max(mx, l);
        for (auto& l : logits) z += (l = std::exp(l - mx));
        for (std::size_t j = 0; j < hd; ++j) {
          double acc = 0;
          for (std::size_t b = 0; b < t; ++b) acc += logits[b] / z * proj(p.p_v, win, b, h * hd + j);
          merged[(win * t + a) * d + h * hd + j] = acc;
        }
      }
  std::vector<double> out(n * t * d);
  for (std::size_t r = 0; r < n * t; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      double s = p.proj_b.values()[c];
      for (std::size_t i = 0; i < d; ++i) s += merged[r * d + i] * p.proj_w.values()[i * d + c];
      out[r * d + c] = s;
    }
  return out;
}

// Whether the shifted-grid row (or column) `pos` was brought in by the wrap.
bool wrapped(std::size_t pos, std::size_t extent, std::size_t shift) { return pos + shift >= extent; }

TensorD roll_hw(const TensorD& x, std::size_t dy, std::size_t dx) {
  const std::size_t b = x.dim(0), h = x.dim(1), w = x.dim(2), d = x.dim(3);
  std::vector<double> out(x.numel());
  for (std::size_t n = 0; n < b; ++n)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t c = 0; c < d; ++c)
          out[((n * h + (i + dy) % h) * w + (j + dx) % w) * d + c] = x.values()[((n * h + i) * w + j) * d + c];
  return TensorD::from(x.shape(), out);
}

}  // namespace

TEST_CASE("window_partition: index arithmetic and exact roundtrip") {
  std::vector<double> v(64);
  for (std::size_t i = 0; i < 64; ++i) v[i] = double(i);
  auto x = TensorD::from({1, 8, 8, 1}, v);
  auto w = window_partition(x, 4);
  CHECK(w.shape() == Shape{4, 16, 1});
  // pixel (5,6) -> window (1,1) = index 3, local (1,2) = token 6
  CHECK(w.values()[3 * 16 + 1 * 4 + 2] == 5 * 8 + 6);

  auto single = window_partition(x, 8);
  CHECK(single.values() == x.values());

  Rng rng(1);
  for (std::size_t shift : {0u, 2u}) {
    auto r = random_tensor({2, 8, 12, 3}, rng, -1, 1, false);
    auto back = window_reverse(window_partition(r, 4, shift), 2, 8, 12, 4, shift);
    CHECK(back.values() == r.values());
  }
  CHECK_THROWS_AS(window_partition(TensorD::zeros({1, 6, 8, 1}), 4), DimensionError);
}

TEST_CASE("shifted_attention_mask: region-label brute force") {
  const std::size_t m = 4, s = 2;
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{4, 4}, {8, 8}, {8, 12}}) {
    auto mask = shifted_attention_mask<double>(h, w, m);
    const std::size_t nw = w / m, t = m * m;
    for (std::size_t win = 0; win < mask.dim(0); ++win) {
      const std::size_t wy = win / nw, wx = win % nw;
      bool interior = true;
      for (std::size_t a = 0; a < t; ++a)
        for (std::size_t b = 0; b < t; ++b) {
          const bool same = wrapped(wy * m + a / m, h, s) == wrapped(wy * m + b / m, h, s) &&
                            wrapped(wx * m + a % m, w, s) == wrapped(wx * m + b % m, w, s);
          const double got = mask.values()[(win * t + a) * t + b];
          CHECK(got == (same ? 0.0 : -1e9));
          if (got != 0.0) interior = false;
        }
      if (wy + 1 < h / m && wx + 1 < w / m) CHECK(interior);
    }
  }
  // single window with shift: four 2x2 regions, 4 tokens each
  auto one = shifted_attention_mask<double>(4, 4, 4);
  std::size_t zeros = 0;
  for (double v : one.values()) zeros += v == 0.0;
  CHECK(zeros == 4 * 16);
}

TEST_CASE("wmsa: trivial cases") {
  Rng rng(2);
  ParamStore<double> store(3);
  auto p = make_swin_block(store, "b", 4, 2, 2, 2, false);
  randomize(p, rng);
  for (auto* t : {&p.p_q, &p.p_k, &p.bias_table})
    for (auto& v : t->values()) v = 0.0;
  auto x = random_tensor({3, 4, 4}, rng, -1, 1, false);
  auto out = wmsa(x, p, nullptr);
  // uniform attention: every token gets out_proj(mean_b P_V x_b)
  auto oracle = dense_wmsa(x, p, [](auto, auto, auto) { return true; });
  CHECK(testutil::max_abs_diff(out.data(), oracle) <= 1e-12);
  for (std::size_t win = 0; win < 3; ++win)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t a = 1; a < 4; ++a)
        CHECK(out.values()[(win * 4 + a) * 4 + c] == doctest::Approx(out.values()[win * 16 + c]).epsilon(1e-12));

  ParamStore<double> store1(4);
  auto q = make_swin_block(store1, "m1", 4, 2, 1, 2, false);
  randomize(q, rng);
  auto tokens = random_tensor({5, 1, 4}, rng, -1, 1, false);
  auto single = wmsa(tokens, q, nullptr);
  auto expect = linear(linear(tokens, q.p_v), q.proj_w, &q.proj_b);
  CHECK(testutil::max_abs_diff(single.data(), expect.data()) <= 1e-12);
}

TEST_CASE("wmsa: dense-attention oracle") {
  Rng rng(5);
  SUBCASE("hand-set nW=1, M=2, d=2, h=1") {
    ParamStore<double> store(6);
    auto p = make_swin_block(store, "h", 2, 1, 2, 2, false);
    p.p_q.values() = {1.0, 0.5, -0.5, 2.0};
    p.p_k.values() = {0.3, -1.0, 1.5, 0.2};
    p.p_v.values() = {1.0, 0.0, 0.25, -1.0};
    p.proj_w.values() = {0.5, 1.0, -1.0, 0.5};
    p.proj_b.values() = {0.1, -0.2};
    for (std::size_t i = 0; i < 9; ++i) p.bias_table.values()[i] = 0.1 * double(i) - 0.4;
    auto x = TensorD::from({1, 4, 2}, {0.2, -0.7, 1.1, 0.4, -0.3, 0.9, 0.6, 0.05});
    auto out = wmsa(x, p, nullptr);
    auto oracle = dense_wmsa(x, p, [](auto, auto, auto) { return true; });
    CHECK(testutil::max_abs_diff(out.data(), oracle) <= 1e-6);
  }
  SUBCASE("random multi-head") {
    for (int rep = 0; rep < 5; ++rep) {
      ParamStore<double> store(7 + rep);
      auto p = make_swin_block(store, "r", 6, 3, 3, 2, false);
      randomize(p, rng, 1.0);
      auto x = random_tensor({4, 9, 6}, rng, -1, 1, false);
      auto out = wmsa(x, p, nullptr);
      auto oracle = dense_wmsa(x, p, [](auto, auto, auto) { return true; });
      CHECK(testutil::max_abs_diff(out.data(), oracle) <= 1e-10);
    }
  }
}

TEST_CASE("wmsa: masked attention equals per-region attention") {
  Rng rng(8);
  ParamStore<double> store(9);
  const std::size_t h = 8, w = 8, m = 4, s = 2;
  auto p = make_swin_block(store, "s", 4, 2, m, 2, true);
  randomize(p, rng, 1.0);
  auto x = random_tensor({2, h, w, 4}, rng, -1, 1, false);
  auto win = window_partition(x, m, s);
  auto mask = shifted_attention_mask<double>(h, w, m);
  auto out = wmsa(win, p, &mask);
  const std::size_t nwx = w / m, nwin = (h / m) * (w / m);
  auto oracle = dense_wmsa(win, p, [&](std::size_t n, std::size_t a, std::size_t b) {
    const std::size_t wi = n % nwin, wy = wi / nwx, wx = wi % nwx;
    return wrapped(wy * m + a / m, h, s) == wrapped(wy * m + b / m, h, s) &&
           wrapped(wx * m + a % m, w, s) == wrapped(wx * m + b % m, w, s);
  });
  CHECK(testutil::max_abs_diff(out.data(), oracle) <= 1e-10);
}

TEST_CASE("swin_block: zero branches give identity, shape contract") {
  Rng rng(10);
  ParamStore<double> store(11);
  for (bool shifted : {false, true}) {
    auto p = make_swin_block(store, shifted ? "zs" : "zr", 4, 2, 2, 2, shifted);
    randomize(p, rng);
    for (auto* t : {&p.proj_w, &p.proj_b, &p.fc2_w, &p.fc2_b})
      for (auto& v : t->values()) v = 0.0;
    auto z = random_tensor({2, 4, 6, 4}, rng, -1, 1, false);
    auto y = swin_block(z, p);
    CHECK(y.shape() == z.shape());
    CHECK(y.values() == z.values());
  }
}

TEST_CASE("swin_block: regular windows commute with translations by M") {
  Rng rng(12);
  ParamStore<double> store(13);
  auto p = make_swin_block(store, "eq", 4, 2, 2, 2, false);
  randomize(p, rng);
  auto z = random_tensor({1, 6, 8, 4}, rng, -1, 1, false);
  for (auto [dy, dx] : {std::pair<std::size_t, std::size_t>{2, 0}, {0, 4}, {4, 6}}) {
    auto a = swin_block(roll_hw(z, dy, dx), p);
    auto b = roll_hw(swin_block(z, p), dy, dx);
    CHECK(a.values() == b.values());
  }
}

TEST_CASE("swin_block: gradcheck d=4, M=2 on a 4x4 input") {
  for (bool shifted : {false, true}) {
    Rng rng(14 + shifted);
    ParamStore<double> store(15);
    auto p = make_swin_block(store, "g", 4, 2, 2, 2, shifted);
    randomize(p, rng);
    auto z = random_tensor({1, 4, 4, 4}, rng);
    auto params = block_params(p);
    params.push_back(z);
    auto rep = grad_check([&] { return sum(swin_block(z, p)); }, params, {.max_coords = 400});
    CAPTURE(shifted);
    CAPTURE(rep.worst);
    CHECK(rep.max_rel_err <= 1e-5);
    auto rep2 = grad_check([&] { return probe(swin_block(z, p)); }, params, {.max_coords = 400});
    CHECK(rep2.max_rel_err <= 1e-5);
  }
}

TEST_CASE("down/up swin blocks: shapes, gradcheck, float smoke") {
  Rng rng(16);
  ParamStore<double> store(17);
  // d=2 would make LayerNorm map every token to +-(1,-1), leaving attention
  // gradients at the finite-difference noise floor
  auto down = make_down_swin_block(store, "down", 4, 2, 2, 2);
  auto up = make_up_swin_block(store, "up", 8, 2, 2, 2);
  for (auto& e : store.entries())
    for (auto& v : e.tensor.values()) v += rng.uniform(-0.2, 0.2);
  auto x = random_tensor({1, 4, 4, 4}, rng);
  auto mid = down_swin_block(x, down);
  CHECK(mid.shape() == Shape{1, 8, 2, 2});
  CHECK(up_swin_block(mid, up).shape() == x.shape());

  std::vector<Tensor<double>> params{x};
  for (auto& e : store.entries()) params.push_back(e.tensor);
  auto rep = grad_check([&] { return probe(up_swin_block(down_swin_block(x, down), up)); }, params,
                        {.max_coords = 600});
  CAPTURE(rep.worst);
  CHECK(rep.max_rel_err <= 1e-5);

  ParamStore<float> fs(18);
  auto fd = make_down_swin_block(fs, "down", 8, 2, 4, 2);
  auto fu = make_up_swin_block(fs, "up", 16, 2, 4, 2);
  std::vector<float> v(2 * 8 * 8 * 8);
  for (auto& e : v) e = static_cast<float>(rng.normal());
  auto fx = Tensor<float>::from({2, 8, 8, 8}, v);
  auto y = up_swin_block(down_swin_block(fx, fd), fu);
  CHECK(y.shape() == fx.shape());
  backward(mean(mul(y, y)));
  for (auto& e : fs.entries()) {
    CAPTURE(e.name);
    REQUIRE(e.tensor.has_grad());
    CHECK(all_finite(e.tensor.grad()));
  }
}
