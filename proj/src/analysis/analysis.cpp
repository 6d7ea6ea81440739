#include "sdid/analysis/analysis.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "sdid/data/batch.hpp"

namespace sdid::analysis {

namespace {

constexpr std::size_t kChunk = 8;

std::vector<double> row(const nd::Tensor<float>& t, std::size_t i) {
  const std::size_t d = t.dim(1);
  const auto s = t.data().subspan(i * d, d);
  return {s.begin(), s.end()};
}

std::vector<double> ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = 0.5 * double(i + j) + 1.0;
    i = j + 1;
  }
  return r;
}

std::vector<double> centroid(const std::vector<std::vector<double>>& pts) {
  std::vector<double> c(pts.front().size(), 0.0);
  for (const auto& p : pts)
    for (std::size_t i = 0; i < c.size(); ++i) c[i] += p[i];
  for (auto& v : c) v /= double(pts.size());
  return c;
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write '" + path + "'");
  f.precision(10);
  return f;
}

}  // namespace

template <typename T>
StyleVector<T> mix_styles(const StyleVector<T>& s_nf, const StyleVector<T>& s_n, double lambda) {
  if (!(lambda >= 0 && lambda <= 1)) throw ConfigError("mixing weight must lie in [0,1]");
  if (s_nf.values.shape() != s_n.values.shape()) throw DimensionError("mix_styles: style shapes differ");
  const T a = T(lambda), b = T(1.0 - lambda);
  return {nd::add(nd::scale(s_nf.values, a), nd::scale(s_n.values, b)), net::StyleKind::mixed};
}

template StyleVector<float> mix_styles(const StyleVector<float>&, const StyleVector<float>&, double);
template StyleVector<double> mix_styles(const StyleVector<double>&, const StyleVector<double>&, double);

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size() || u.empty()) throw DimensionError("cosine needs two vectors of equal length");
  double uv = 0, uu = 0, vv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0 || vv == 0) throw NumericalError("cosine similarity of a zero vector is undefined");
  return std::clamp(uv / std::sqrt(uu * vv), -1.0, 1.0);
}

double cosine_sq(std::span<const double> u, std::span<const double> v) {
  const double c = cosine(u, v);
  return c * c;
}

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw DimensionError("spearman needs two series of equal length >= 2");
  const auto rx = ranks(x), ry = ranks(y);
  const double n = double(x.size()), mean = (n + 1) / 2;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mean) * (ry[i] - mean);
    sxx += (rx[i] - mean) * (rx[i] - mean);
    syy += (ry[i] - mean) * (ry[i] - mean);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

MixSweep mix_sweep(const Model<float>& model, const std::vector<data::TrainSample>& pairs,
                   const std::vector<double>& lambdas) {
  if (pairs.empty() || lambdas.empty()) throw ConfigError("mix sweep needs at least one pair and one lambda");
  nd::NoGradGuard guard;
  MixSweep out;
  out.rows.resize(lambdas.size());
  std::vector<std::vector<double>> cos_per_pair(pairs.size(), std::vector<double>(lambdas.size()));
  std::vector<bool> eligible(pairs.size());
  out.pair_psnr.assign(pairs.size(), std::vector<double>(lambdas.size()));
  for (std::size_t k = 0; k < lambdas.size(); ++k) out.rows[k].lambda = lambdas[k];

  for (std::size_t lo = 0; lo < pairs.size(); lo += kChunk) {
    const std::size_t n = std::min(kChunk, pairs.size() - lo);
    std::vector<const data::Image*> xs, ys;
    for (std::size_t i = 0; i < n; ++i) {
      xs.push_back(&pairs[lo + i].noisy);
      ys.push_back(&pairs[lo + i].clean);
    }
    const auto x = data::stack_images<float>(xs), y = data::stack_images<float>(ys);
    const auto fe = model.encode(x);
    const auto rec = model.decode(fe);
    for (std::size_t i = 0; i < n; ++i) out.identity_band += psnr(data::image_at(rec, i), *xs[i]);
    const auto s_n = model.extract_style(x, net::StyleKind::noise);
    const auto s_nf = model.extract_style(y, net::StyleKind::noise_free);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = row(s_nf.values, i), b = row(s_n.values, i);
      eligible[lo + i] = std::inner_product(a.begin(), a.end(), b.begin(), 0.0) >= 0;
    }
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
      const auto mixed = mix_styles(s_nf, s_n, lambdas[k]);
      const auto yhat = model.decode(model.style_convert(fe, mixed));
      auto& r = out.rows[k];
      for (std::size_t i = 0; i < n; ++i) {
        const auto img = data::image_at(yhat, i);
        const double p = psnr(img, *ys[i]);
        r.psnr += p;
        out.pair_psnr[lo + i][k] = p;
        r.ssim += ssim(img, *ys[i]);
        r.psnr_noisy += psnr(img, *xs[i]);
        const double c = cosine_sq(row(mixed.values, i), row(s_nf.values, i));
        r.cos_sq += c;
        cos_per_pair[lo + i][k] = c;
        if (lo + i == 0) out.first_pair.push_back(img);
      }
    }
  }
  const double np = double(pairs.size());
  out.identity_band /= np;
  for (auto& r : out.rows) {
    r.psnr /= np;
    r.ssim /= np;
    r.psnr_noisy /= np;
    r.cos_sq /= np;
  }
  if (lambdas.size() >= 2) {
    for (const auto& p : out.pair_psnr) out.mean_spearman += spearman(lambdas, p);
    out.mean_spearman /= np;
  }
  std::vector<std::size_t> order(lambdas.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lambdas[a] < lambdas[b]; });
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    if (!eligible[p]) continue;
    ++out.eligible_pairs;
    bool mono = true;
    for (std::size_t k = 1; k < order.size(); ++k)
      mono = mono && cos_per_pair[p][order[k]] >= cos_per_pair[p][order[k - 1]] - 1e-9;
    out.monotone_pairs += mono;
  }
  return out;
}

ChannelDiffStats histogram_fit(std::span<const double> values, std::size_t bins) {
  if (values.empty() || bins == 0) throw DimensionError("histogram_fit needs values and at least one bin");
  ChannelDiffStats s;
  double r = 0, sum = 0;
  for (double v : values) {
    r = std::max(r, std::abs(v));
    sum += v;
  }
  const double n = double(values.size());
  s.mean = sum / n;
  double sq = 0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(sq / n);
  if (r == 0) r = 1.0;  // all-zero channel: any range gives one full bin
  const double width = 2 * r / double(bins);
  for (std::size_t i = 0; i <= bins; ++i) s.edges.push_back(-r + width * double(i));
  s.counts.assign(bins, 0);
  for (double v : values) {
    auto b = static_cast<std::size_t>((v + r) / width);
    ++s.counts[std::min(b, bins - 1)];
  }
  for (std::size_t i = 0; i < bins; ++i) {
    const double p = double(s.counts[i]) / n;
    double q = 0;
    if (s.stddev > 0) {
      const double z = (-r + width * (double(i) + 0.5) - s.mean) / s.stddev;
      q = std::exp(-0.5 * z * z) / (s.stddev * std::sqrt(2 * std::numbers::pi)) * width;
    }
    s.residual += std::abs(p - q);
  }
  return s;
}

std::vector<ChannelDiffStats> feature_diff_stats(const Model<float>& model, const std::vector<data::Image>& images,
                                                 const std::vector<std::vector<float>>& styles, std::size_t bins) {
  if (images.empty()) throw ConfigError("feature statistics need at least one image");
  if (styles.size() != 1 && styles.size() != images.size())
    throw DimensionError("feature_diff_stats needs one style per image or one shared style");
  const std::size_t sd = model.config().style_dim;
  for (const auto& s : styles)
    if (s.size() != sd) throw DimensionError("style vector length does not match the model");
  nd::NoGradGuard guard;
  const std::size_t ce = model.config().encoded_channels();
  std::vector<std::vector<double>> diffs(ce);
  for (std::size_t lo = 0; lo < images.size(); lo += kChunk) {
    const std::size_t n = std::min(kChunk, images.size() - lo);
    std::vector<const data::Image*> xs;
    std::vector<float> sv;
    for (std::size_t i = 0; i < n; ++i) {
      xs.push_back(&images[lo + i]);
      const auto& s = styles.size() == 1 ? styles.front() : styles[lo + i];
      sv.insert(sv.end(), s.begin(), s.end());
    }
    const auto fe = model.encode(data::stack_images<float>(xs));
    const net::StyleVector<float> style{nd::Tensor<float>::from({n, sd}, sv), net::StyleKind::sampled};
    const auto fsc = model.style_convert(fe, style);
    const std::size_t hw = fe.dim(2) * fe.dim(3);
    const auto a = fe.data(), b = fsc.data();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < ce; ++c)
        for (std::size_t p = 0; p < hw; ++p) {
          const std::size_t at = (i * ce + c) * hw + p;
          diffs[c].push_back(double(b[at]) - double(a[at]));
        }
  }
  std::vector<ChannelDiffStats> out;
  for (std::size_t c = 0; c < ce; ++c) {
    out.push_back(histogram_fit(diffs[c], bins));
    out.back().channel = c;
  }
  return out;
}

std::size_t StyleProjection::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < class_names.size(); ++i)
    if (class_names[i] == name) return i;
  throw ConfigError("no style class named '" + name + "'");
}

std::string StyleProjection::report() const {
  std::ostringstream s;
  s.precision(6);
  s << "eigenvalues (top 4):";
  for (std::size_t i = 0; i < std::min<std::size_t>(4, eigenvalues.size()); ++i) s << ' ' << eigenvalues[i];
  s << "\n";
  for (std::size_t i = 0; i < class_names.size(); ++i)
    s << "class " << class_names[i] << ": within-class mean cosine " << within_cos[i] << ", nearest centroid "
      << class_names[nearest[i]] << "\n";
  for (std::size_t i = 0; i < class_names.size(); ++i)
    for (std::size_t j = i + 1; j < class_names.size(); ++j)
      s << "centroids " << class_names[i] << " / " << class_names[j] << ": cosine " << centroid_cos[i][j]
        << ", distance " << centroid_dist[i][j] << "\n";
  return s.str();
}

StyleProjection pca_project_styles(const std::vector<StyleClass>& classes) {
  if (classes.size() < 2) throw ConfigError("style projection needs at least two classes");
  const std::size_t d = classes.front().styles.empty() ? 0 : classes.front().styles.front().size();
  std::size_t total = 0;
  for (const auto& c : classes) {
    if (c.styles.size() < 10) throw ConfigError("style class '" + c.name + "' needs at least 10 styles");
    for (const auto& s : c.styles)
      if (s.size() != d || d == 0) throw DimensionError("style vectors differ in length");
    total += c.styles.size();
  }

  Eigen::MatrixXd x(total, d);
  std::size_t r = 0;
  StyleProjection p;
  for (const auto& c : classes)
    for (const auto& s : c.styles) {
      for (std::size_t j = 0; j < d; ++j) x(Eigen::Index(r), Eigen::Index(j)) = s[j];
      p.labels.push_back(c.name);
      ++r;
    }
  const Eigen::RowVectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd centred = x.rowwise() - mu;
  const Eigen::MatrixXd cov = centred.transpose() * centred / double(total);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericalError("covariance eigendecomposition failed");
  // ascending order from the solver
  for (Eigen::Index i = Eigen::Index(d) - 1; i >= 0; --i) p.eigenvalues.push_back(eig.eigenvalues()(i));
  Eigen::MatrixXd basis(d, std::min<std::size_t>(2, d));
  for (Eigen::Index k = 0; k < basis.cols(); ++k) {
    Eigen::VectorXd v = eig.eigenvectors().col(Eigen::Index(d) - 1 - k);
    // fix the sign so the largest component is positive
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    basis.col(k) = v;
  }
  const Eigen::MatrixXd proj = centred * basis;
  for (Eigen::Index i = 0; i < proj.rows(); ++i)
    p.coords.emplace_back(proj(i, 0), proj.cols() > 1 ? proj(i, 1) : 0.0);

  std::vector<std::vector<double>> cents;
  for (const auto& c : classes) {
    p.class_names.push_back(c.name);
    cents.push_back(centroid(c.styles));
    double acc = 0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < c.styles.size(); ++i)
      for (std::size_t j = i + 1; j < c.styles.size(); ++j, ++pairs) acc += cosine(c.styles[i], c.styles[j]);
    p.within_cos.push_back(acc / double(pairs));
  }
  const std::size_t k = classes.size();
  p.centroid_cos.assign(k, std::vector<double>(k, 1.0));
  p.centroid_dist.assign(k, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      p.centroid_cos[i][j] = cosine(cents[i], cents[j]);
      double sq = 0;
      for (std::size_t t = 0; t < d; ++t) sq += (cents[i][t] - cents[j][t]) * (cents[i][t] - cents[j][t]);
      p.centroid_dist[i][j] = std::sqrt(sq);
    }
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t best = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < k; ++j)
      if (j != i && p.centroid_dist[i][j] < p.centroid_dist[i][best]) best = j;
    p.nearest.push_back(best);
  }
  return p;
}

std::vector<data::TrainSample> validation_samples(const RunConfig& cfg, const std::vector<data::TrainSample>& archive,
                                                  std::size_t count) {
  std::vector<data::TrainSample> out(archive.begin(), archive.begin() + std::ptrdiff_t(std::min(count, archive.size())));
  const auto kind = data::parse_image_kind(cfg.data.kind);
  for (std::size_t j = out.size(); j < count; ++j) {
    const auto seed = data::val_sample_seed(cfg.seed, j);
    out.push_back(data::make_sample(seed, kind, cfg.data.val_size, cfg.model.in_channels,
                                    data::pick_sigma(seed, cfg.train.sigmas)));
  }
  return out;
}

void write_mix_csv(const std::string& path, const MixSweep& sweep) {
  auto f = open_csv(path);
  f << "lambda,cos_sq,psnr,ssim\n";
  for (const auto& r : sweep.rows) f << r.lambda << ',' << r.cos_sq << ',' << r.psnr << ',' << r.ssim << "\n";
  if (!f) throw IoError("write failed for '" + path + "'");
}

void write_projection_csv(const std::string& path, const StyleProjection& proj) {
  auto f = open_csv(path);
  f << "class,x,y\n";
  for (std::size_t i = 0; i < proj.coords.size(); ++i)
    f << proj.labels[i] << ',' << proj.coords[i].first << ',' << proj.coords[i].second << "\n";
  if (!f) throw IoError("write failed for '" + path + "'");
}

void write_feature_csv(const std::string& path, const std::vector<ChannelDiffStats>& stats) {
  auto f = open_csv(path);
  f << "channel,mean,std,residual\n";
  for (const auto& s : stats) f << s.channel << ',' << s.mean << ',' << s.stddev << ',' << s.residual << "\n";
  if (!f) throw IoError("write failed for '" + path + "'");
}

}  // namespace sdid::analysis
