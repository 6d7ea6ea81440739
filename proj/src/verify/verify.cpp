#include "sdid/verify/verify.hpp"

#include <chrono>
#include <cmath>
#include <map>
#include <tuple>

#include "sdid/analysis/analysis.hpp"
#include "sdid/errors.hpp"
#include "sdid/ndgrad/gradcheck.hpp"
#include "sdid/swin/swin.hpp"
#include "sdid/train/objective.hpp"

namespace sdid::verify {

namespace {

using TD = nd::Tensor<double>;
using nd::Rng;

TD random_tensor(nd::Shape shape, Rng& rng, double lo = -1, double hi = 1, bool grad = true) {
  nd::Buffer<double> v(nd::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TD::from(std::move(shape), std::move(v), grad);
}

using TL = nd::Tensor<long double>;
using Ts = std::vector<TD>;
using TLs = std::vector<TL>;

TL widen(const TD& t) {
  nd::Buffer<long double> v(t.data().begin(), t.data().end());
  return TL::from(t.shape(), std::move(v), t.requires_grad());
}

TLs widen(const Ts& ts) {
  TLs out;
  for (const auto& t : ts) out.push_back(widen(t));
  return out;
}

// Weighted sum with fixed random weights.
template <typename T>
nd::Tensor<T> probe(const nd::Tensor<T>& y) {
  Rng rng(99);
  nd::Buffer<T> w(y.numel());
  for (auto& v : w) v = static_cast<T>(rng.uniform(-1, 1));
  return nd::sum(nd::mul(y, nd::Tensor<T>::from(y.shape(), std::move(w))));
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

ModelConfig micro_model() {
  ModelConfig mc;
  mc.base_channels = 8;
  mc.num_scales = 2;
  mc.window = 2;
  mc.heads = 2;
  mc.style_dim = 8;
  mc.gen_input_dim = 4;
  mc.sc_blocks = 2;
  mc.gap_dim = 16;
  return mc;
}

template <typename T>
std::vector<nd::Tensor<T>> store_tensors(const nd::ParamStore<T>& store) {
  std::vector<nd::Tensor<T>> out;
  for (const auto& e : store.entries()) out.push_back(e.tensor);
  return out;
}

class Runner {
 public:
  Runner(const Options& o, Report& r) : opt_(o), rep_(r) {}

  void record(std::string suite, std::string name, double value, double limit, std::string detail = {}) {
    CheckResult c{std::move(suite), std::move(name), value <= limit, value, limit, std::move(detail)};
    if (c.suite == "grad") rep_.max_rel_err = std::max(rep_.max_rel_err, value);
    if (opt_.on_check) opt_.on_check(c);
    rep_.checks.push_back(std::move(c));
  }

  // Double objective plus its extended-precision mirror over the same values.
  nd::GradCheckReport check(const std::function<TD()>& f, const Ts& params, const std::function<TL()>& fl,
                            const TLs& wide, nd::GradCheckOptions gopt = {}) {
    const double k = opt_.corrupt_backward;
    const auto objective = [&] { return k == 1.0 ? f() : nd::scaled_backward_identity(f(), k); };
    gopt.tol = kGradTol;
    const nd::ExtendedObjective ext{fl, wide};
    return nd::grad_check(objective, params, gopt, &ext);
  }

  // `f` is generic over the element type and takes the parameter list.
  template <typename F>
  nd::GradCheckReport check_generic(F f, const Ts& params, nd::GradCheckOptions gopt = {}) {
    const TLs wide = widen(params);
    return check([&] { return f(params); }, params, [&] { return f(wide); }, wide, gopt);
  }

  void record_grad(const std::string& name, const nd::GradCheckReport& r) {
    std::string detail = r.worst;
    if (r.extended_coords)
      detail += "; " + std::to_string(r.extended_coords) + " coords re-differenced in extended precision, " +
                std::to_string(r.kink_coords) + " at kinks";
    record("grad", name, r.max_rel_err, kGradTol, detail);
  }

  void grad_suite();
  void props_suite();

 private:
  const Options& opt_;
  Report& rep_;
};

#define SDID_GEN(expr) [&](const auto& p) { return expr; }

void Runner::grad_suite() {
  using namespace nd;
  struct Worst {
    double err = -1;
    std::string detail;
  };
  std::map<std::string, Worst> worst;
  std::vector<std::string> order;
  const auto note = [&](const std::string& name, std::size_t seed, const GradCheckReport& r) {
    if (!worst.count(name)) order.push_back(name);
    auto& w = worst[name];
    if (r.max_rel_err > w.err) w = {r.max_rel_err, "seed " + std::to_string(seed) + ": " + r.worst};
  };
  for (std::size_t s = 0; s < opt_.grad_seeds; ++s) {
    Rng rng(nd::derive_seed(opt_.seed, 0x67726164, s));
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
    // |x| in [0.2, 1] with random signs keeps relu and abs away from their kinks
    auto kinkfree = random_tensor({h, d}, rng, 0.2, 1.0);
    for (auto& v : kinkfree.values())
      if (rng.uniform() < 0.5) v = -v;
    auto l1a = random_tensor({h, d}, rng), l1b = TD::from({h, d}, l1a.values());
    for (auto& v : l1b.values()) v += rng.uniform() < 0.5 ? -0.3 : 0.3;
    const auto l1b_wide = widen(l1b);

    note("matmul", s, check_generic(SDID_GEN(probe(matmul(p[0], p[1]))), {x2, m2}));
    note("bmm", s, check_generic(SDID_GEN(probe(bmm(p[0], p[1]))), {ba, bb}));
    note("bmm_transposed", s, check_generic(SDID_GEN(probe(bmm(p[0], p[0], true))), {ba}));
    note("linear", s, check_generic(SDID_GEN(probe(linear(p[0], p[1], &p[2]))), {x2, m2, bias3}));
    note("conv2d", s, check_generic(SDID_GEN(probe(conv2d(p[0], p[1], &p[2], 1, 1))), {x4, wk, bk}));
    note("conv2d_stride2", s, check_generic(SDID_GEN(probe(conv2d(p[0], p[1], &p[2], 2, 1))), {x4, wk, bk}));
    note("layer_norm", s, check_generic(SDID_GEN(probe(layer_norm(p[0], p[1], p[2]))), {x2, g, be}));
    note("softmax", s, check_generic(SDID_GEN(probe(softmax_lastdim(p[0]))), {x2}));
    note("add", s, check_generic(SDID_GEN(probe(add(p[0], p[1]))), {x2, row}));
    note("sub", s, check_generic(SDID_GEN(probe(sub(p[0], p[1]))), {x2, row}));
    note("mul", s, check_generic(SDID_GEN(probe(mul(p[0], p[1]))), {x2, row}));
    note("affine_scalar", s,
         check_generic(
             [&](const auto& p) {
               using T = typename std::decay_t<decltype(p[0])>::value_type;
               return probe(affine_scalar(p[0], T(-1.7), T(0.3)));
             },
             {x2}));
    note("gelu", s, check_generic(SDID_GEN(probe(gelu(p[0]))), {x2}));
    note("sigmoid", s, check_generic(SDID_GEN(probe(sigmoid(p[0]))), {x2}));
    note("relu", s, check_generic(SDID_GEN(probe(relu(p[0]))), {kinkfree}));
    note("abs", s, check_generic(SDID_GEN(probe(abs(p[0]))), {kinkfree}));
    note("mean", s, check_generic(SDID_GEN(mean(mul(p[0], p[0]))), {x2}));
    note("l1_loss", s, check_generic(
                           [&](const auto& p) {
                             if constexpr (std::is_same_v<std::decay_t<decltype(p)>, Ts>)
                               return l1_loss(p[0], l1b);
                             else
                               return l1_loss(p[0], l1b_wide);
                           },
                           {l1a}));
    note("avg_pool2", s, check_generic(SDID_GEN(probe(avg_pool2(p[0]))), {x4}));
    note("upsample_nearest2", s, check_generic(SDID_GEN(probe(upsample_nearest2(p[0]))), {x4}));
    note("global_avg_pool", s, check_generic(SDID_GEN(probe(global_avg_pool(p[0]))), {x4}));
    note("nchw_to_nhwc", s, check_generic(SDID_GEN(probe(nchw_to_nhwc(p[0]))), {x4}));
    note("slice_lastdim", s, check_generic(SDID_GEN(probe(slice_lastdim(p[0], 1, d))), {x2}));
    note("adain", s, check_generic(SDID_GEN(probe(adain(p[0], p[1], p[2]))), {x4, ss, sb}));
  }
  for (const auto& name : order) record("grad", name, worst[name].err, kGradTol, worst[name].detail);
  Rng rng(nd::derive_seed(opt_.seed, 0x7377696e, 0));
  for (bool shifted : {false, true}) {
    ParamStore<double> store(rng.next_u64());
    ParamStore<long double> wide_store(0);
    const auto p = swin::make_swin_block(store, "g", 4, 2, 2, 2, shifted);
    const auto pl = swin::make_swin_block(wide_store, "g", 4, 2, 2, 2, shifted);
    for (auto& e : store.entries())
      for (auto& v : e.tensor.values()) v += rng.uniform(-0.3, 0.3);
    const auto z = random_tensor({1, 4, 4, 4}, rng);
    const auto zl = widen(z);
    Ts params{z};
    TLs wide{zl};
    for (const auto& t : store_tensors(store)) params.push_back(t);
    for (const auto& t : store_tensors(wide_store)) wide.push_back(t);
    record_grad(shifted ? "swin_block_shifted" : "swin_block",
                check([&] { return probe(swin::swin_block(z, p)); }, params,
                      [&] { return probe(swin::swin_block(zl, pl)); }, wide, {.max_coords = 400}));
  }
  {
    ParamStore<double> store(rng.next_u64());
    ParamStore<long double> wide_store(0);
    const auto down = swin::make_down_swin_block(store, "down", 4, 2, 2, 2);
    const auto up = swin::make_up_swin_block(store, "up", 8, 2, 2, 2);
    const auto downl = swin::make_down_swin_block(wide_store, "down", 4, 2, 2, 2);
    const auto upl = swin::make_up_swin_block(wide_store, "up", 8, 2, 2, 2);
    for (auto& e : store.entries())
      for (auto& v : e.tensor.values()) v += rng.uniform(-0.2, 0.2);
    const auto x = random_tensor({1, 4, 4, 4}, rng);
    const auto xl = widen(x);
    Ts params{x};
    TLs wide{xl};
    for (const auto& t : store_tensors(store)) params.push_back(t);
    for (const auto& t : store_tensors(wide_store)) wide.push_back(t);
    record_grad("down_up_swin",
                check([&] { return probe(swin::up_swin_block(swin::down_swin_block(x, down), up)); }, params,
                      [&] { return probe(swin::up_swin_block(swin::down_swin_block(xl, downl), upl)); }, wide,
                      {.max_coords = 400}));
  }

  const auto mc = micro_model();
  net::Model<double> model(mc, nd::derive_seed(opt_.seed, 0x6d6f646c, 0));
  net::Model<long double> wide_model(mc, 0);
  const auto params = store_tensors(model.params());
  const auto wide = store_tensors(wide_model.params());
  nd::GradCheckOptions gopt;
  gopt.max_coords = 200;
  // some extractor gradients sit near 1e-8, where rounding at step 1e-5 shows
  gopt.coarse_step = 1e-4;
  gopt.seed = nd::derive_seed(opt_.seed, 0x636f6f72, 0);

  {
    // decode(encode(x)) and the style conversion on their own
    const auto x = random_tensor({1, 1, 16, 16}, rng, 0, 1, false);
    const auto xl = widen(x);
    record_grad("decode_encode", check([&] { return probe(model.decode(model.encode(x))); }, params,
                                       [&] { return probe(wide_model.decode(wide_model.encode(xl))); }, wide, gopt));
    const auto fe = random_tensor({1, mc.encoded_channels(), 4, 4}, rng);
    const auto sv = random_tensor({1, mc.style_dim}, rng);
    const auto fel = widen(fe), svl = widen(sv);
    Ts sc_params{fe, sv};
    TLs sc_wide{fel, svl};
    for (std::size_t i = 0; i < params.size(); ++i)
      if (model.params().entries()[i].name.rfind("sc.", 0) == 0) {
        sc_params.push_back(params[i]);
        sc_wide.push_back(wide[i]);
      }
    record_grad("style_convert",
                check([&] { return probe(model.style_convert(fe, {sv})); }, sc_params,
                      [&] { return probe(wide_model.style_convert(fel, {svl})); }, sc_wide, gopt));
  }

  const auto x = random_tensor({1, 1, 16, 16}, rng, 0, 1, false), y = random_tensor({1, 1, 16, 16}, rng, 0, 1, false);
  const auto z = random_tensor({1, 4}, rng, -1, 1, false);
  const auto xl = widen(x), yl = widen(y), zl = widen(z);
  const auto loss = [](const auto& m, const auto& a, const auto& b, const auto& c) {
    return train::full_loss(train::run_branches(m, a, b, c), a, b, train::LossWeights{}).total;
  };
  record_grad("full_loss_micro_model", check([&] { return loss(model, x, y, z); }, params,
                                             [&] { return loss(wide_model, xl, yl, zl); }, wide, gopt));
}

void Runner::props_suite() {
  Rng rng(nd::derive_seed(opt_.seed, 0x70726f70, 0));
  {
    const std::vector<double> a(64, 0.0), b(64, 0.1);
    record("props", "psnr_uniform_0.1_is_20dB", std::abs(analysis::psnr(a, b) - 20.0), 1e-9);
    record("props", "psnr_identical_is_capped", std::abs(analysis::psnr(b, b) - analysis::kPsnrCap), 0);
    record("props", "psnr_symmetric",
           std::abs(analysis::psnr(std::vector<double>{0.1, 0.5}, std::vector<double>{0.3, 0.2}) -
                    analysis::psnr(std::vector<double>{0.3, 0.2}, std::vector<double>{0.1, 0.5})),
           0);
  }
  {
    double dev = 0;
    for (std::uint64_t s = 0; s < 4; ++s) {
      const auto img = data::gen_clean_image(nd::derive_seed(opt_.seed, 0x7373696d, s), data::ImageKind::mixed, 32);
      dev = std::max(dev, std::abs(analysis::ssim(img, img) - 1.0));
    }
    record("props", "ssim_identical_is_1", dev, 1e-12);
  }
  {
    double dev = 0;
    for (int s = 0; s < 5; ++s) {
      const std::size_t b = 1 + rng.below(3), c = 1 + rng.below(4), hw = 2 + rng.below(5);
      auto e = random_tensor({b, c, hw, hw}, rng, -2, 2, false);
      nd::Buffer<double> mu(b * c), sd(b * c);
      const std::size_t n = hw * hw;
      for (std::size_t p = 0; p < b * c; ++p) {
        double m = 0, v = 0;
        for (std::size_t i = 0; i < n; ++i) m += e.data()[p * n + i];
        m /= double(n);
        for (std::size_t i = 0; i < n; ++i) v += (e.data()[p * n + i] - m) * (e.data()[p * n + i] - m);
        mu[p] = m;
        sd[p] = std::sqrt(v / double(n) + 1e-5);
      }
      const auto out = nd::adain(e, TD::from({b, c}, sd), TD::from({b, c}, mu), 1e-5);
      dev = std::max(dev, max_abs_diff(out.data(), e.data()));
    }
    record("props", "adain_inverse_normalization", dev, 1e-5);
  }
  {
    double one = 0, zero = 0;
    for (int s = 0; s < 5; ++s) {
      const nd::Shape sh{1 + rng.below(2), 2 + rng.below(3), 2, 2};
      const auto fe = random_tensor(sh, rng, -3, 3, false), fa = random_tensor(sh, rng, -3, 3, false);
      one = std::max(one, max_abs_diff(net::mask_fuse(TD::full(sh, 1.0), fe, fa).data(), fe.data()));
      zero = std::max(zero, max_abs_diff(net::mask_fuse(TD::full(sh, 0.0), fe, fa).data(), fa.data()));
    }
    record("props", "mask_fusion_mask1_gives_encoder_features", one, 0);
    record("props", "mask_fusion_mask0_gives_adain_features", zero, 0);

    ModelConfig mc;
    mc.base_channels = 4;
    mc.num_scales = 1;
    mc.window = 4;
    mc.heads = 1;
    mc.style_dim = 8;
    mc.gen_input_dim = 4;
    mc.sc_blocks = 2;
    mc.gap_dim = 8;
    net::Model<double> model(mc, rng.next_u64());
    const auto x = random_tensor({2, 1, 8, 8}, rng, 0, 1, false);
    const auto fe = model.encode(x);
    const auto style = model.extract_style(x, net::StyleKind::noise);
    auto mask_w = *model.params().find("sc.mask_w");
    auto mask_b = *model.params().find("sc.mask_b");
    for (auto& v : mask_w.values()) v = 0;
    // sigmoid(+-1000) is exactly 1 or 0 in double
    for (auto& v : mask_b.values()) v = 1000;
    net::ScTrace<double> trace;
    const auto sat1 = model.style_convert(fe, style, &trace);
    record("props", "style_convert_saturated_mask1_is_identity", max_abs_diff(sat1.data(), fe.data()), 0);
    for (auto& v : mask_b.values()) v = -1000;
    const auto sat0 = model.style_convert(fe, style, &trace);
    record("props", "style_convert_saturated_mask0_is_adain", max_abs_diff(sat0.data(), trace.f_adain.data()), 0);
  }
  {
    double dev = 0;
    for (int s = 0; s < 6; ++s) {
      const std::size_t m = 2 << rng.below(2), b = 1 + rng.below(2), h = m * (1 + rng.below(3)),
                        w = m * (1 + rng.below(3)), d = 1 + rng.below(4);
      for (std::size_t shift : {std::size_t(0), m / 2}) {
        const auto x = random_tensor({b, h, w, d}, rng, -1, 1, false);
        const auto back = swin::window_reverse(swin::window_partition(x, m, shift), b, h, w, m, shift);
        dev = std::max(dev, back.values() == x.values() ? 0.0 : 1.0);
      }
    }
    record("props", "window_partition_roundtrip_bit_exact", dev, 0);
  }
  {
    const auto x = random_tensor({2, 1, 4, 4}, rng, 0, 1, false), y = random_tensor({2, 1, 4, 4}, rng, 0, 1, false);
    const auto st = random_tensor({2, 8}, rng, -1, 1, false);
    const auto off = [](const TD& t) {
      auto v = t.values();
      for (auto& e : v) e += 0.1;
      return TD::from(t.shape(), v);
    };
    const train::LossWeights lw;
    train::BranchOutputs<double> perfect{x, y, x, y, y, st, st, st};
    record("props", "loss_perfect_outputs_is_0", std::abs(train::full_loss(perfect, x, y, lw).total.item()), 0);
    train::BranchOutputs<double> shifted{off(x), off(y), off(x), off(y), off(y), st, st, st};
    record("props", "loss_offset_0.1_is_0.09",
           std::abs(train::reconstruction_loss(shifted, x, y, lw).total.item() - 0.09), 1e-7);
  }
  {
    const net::StyleVector<double> nf{TD::from({1, 2}, nd::Buffer<double>{0.0, 2.0}), net::StyleKind::noise_free};
    const net::StyleVector<double> n{TD::from({1, 2}, nd::Buffer<double>{2.0, 0.0}), net::StyleKind::noise};
    const double e1 = max_abs_diff(analysis::mix_styles(nf, n, 1.0).values.data(), nf.values.data());
    const double e0 = max_abs_diff(analysis::mix_styles(nf, n, 0.0).values.data(), n.values.data());
    const double em = max_abs_diff(analysis::mix_styles(nf, n, 0.5).values.data(), std::vector<double>{1.0, 1.0});
    record("props", "mix_styles_endpoints_and_midpoint", std::max({e0, e1, em}), 0);
    const std::vector<double> u{1, 0}, v{1, 1}, w{0, 3};
    const double ec = std::max({std::abs(analysis::cosine_sq(v, v) - 1), std::abs(analysis::cosine_sq(u, w)),
                                std::abs(analysis::cosine_sq(u, v) - 0.5)});
    record("props", "cosine_sq_reference_cases", ec, 1e-15);
  }
}

}  // namespace

bool Report::pass() const {
  if (checks.empty()) return false;
  for (const auto& c : checks)
    if (!c.pass) return false;
  return true;
}

Report run(const std::string& suite, const Options& options) {
  if (suite != "grad" && suite != "props" && suite != "all")
    throw ConfigError("unknown verify suite '" + suite + "' (expected grad, props or all)");
  Report rep;
  const auto t0 = std::chrono::steady_clock::now();
  Runner r(options, rep);
  if (suite != "props") r.grad_suite();
  if (suite != "grad") r.props_suite();
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace sdid::verify
