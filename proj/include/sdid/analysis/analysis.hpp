#pragma once

#include <string>
#include <vector>

#include "sdid/analysis/metrics.hpp"
#include "sdid/net/model.hpp"

namespace sdid::analysis {

using net::Model;
using net::StyleVector;

/// lambda * s_nf + (1 - lambda) * s_n, labelled mixed.
template <typename T>
StyleVector<T> mix_styles(const StyleVector<T>& s_nf, const StyleVector<T>& s_n, double lambda);

/// (u.v)^2 / (|u|^2 |v|^2). Throws NumericalError on a zero vector.
double cosine_sq(std::span<const double> u, std::span<const double> v);
double cosine(std::span<const double> u, std::span<const double> v);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> x, std::span<const double> y);

struct MixSweepRow {
  double lambda = 0;
  double cos_sq = 0;      // mean over pairs of Coss^2(s_mixed, s_noise_free)
  double psnr = 0;        // mean PSNR(y_hat, clean)
  double ssim = 0;        // mean SSIM(y_hat, clean)
  double psnr_noisy = 0;  // mean PSNR(y_hat, noisy)
};

struct MixSweep {
  std::vector<MixSweepRow> rows;
  /// Mean PSNR(dec(enc(x)), x): how close the plain autoencoder stays to its input.
  double identity_band = 0;
  /// Denoised first pair, one image per lambda.
  std::vector<data::Image> first_pair;
  /// Per pair: does cos_sq never decrease along lambda where s_nf . s_n >= 0.
  std::size_t monotone_pairs = 0, eligible_pairs = 0;
  /// pair_psnr[p][k]: PSNR(y_hat, clean) of pair p at lambdas[k].
  std::vector<std::vector<double>> pair_psnr;
  /// Mean over pairs of Spearman rho(lambda, PSNR).
  double mean_spearman = 0;
};

MixSweep mix_sweep(const Model<float>& model, const std::vector<data::TrainSample>& pairs,
                   const std::vector<double>& lambdas);

struct ChannelDiffStats {
  std::size_t channel = 0;
  std::vector<double> edges;  // bins + 1
  std::vector<std::size_t> counts;
  double mean = 0, stddev = 0;
  /// sum over bins |count/total - N(center; mean, std) * width|
  double residual = 0;
};

/// Per-channel histogram of F_sc - F_e over all positions of all images.
/// Images go through the encoder in chunks; `style` must hold one vector per
/// image or a single shared vector.
std::vector<ChannelDiffStats> feature_diff_stats(const Model<float>& model, const std::vector<data::Image>& images,
                                                 const std::vector<std::vector<float>>& styles, std::size_t bins);

/// Histogram plus moment-matched Gaussian over a fixed [-r, r], r = max |v|.
ChannelDiffStats histogram_fit(std::span<const double> values, std::size_t bins);

struct StyleClass {
  std::string name;
  std::vector<std::vector<double>> styles;
};

struct StyleProjection {
  std::vector<std::string> labels;  // one per point
  std::vector<std::pair<double, double>> coords;
  std::vector<double> eigenvalues;  // descending
  std::vector<std::string> class_names;
  std::vector<double> within_cos;                  // mean pairwise cosine per class
  std::vector<std::vector<double>> centroid_cos;   // between centroids
  std::vector<std::vector<double>> centroid_dist;  // Euclidean, between centroids
  /// For each class, the nearest other centroid (index into class_names).
  std::vector<std::size_t> nearest;

  std::size_t index_of(const std::string& name) const;
  std::string report() const;
};

/// PCA to 2-D via covariance eigendecomposition, plus separation statistics
/// computed in the original style space. Needs at least 10 styles per class.
StyleProjection pca_project_styles(const std::vector<StyleClass>& classes);

/// Samples 0..count-1 of the validation split, taken from `archive` where it
/// has them and regenerated from their seeds beyond that.
std::vector<data::TrainSample> validation_samples(const RunConfig& cfg, const std::vector<data::TrainSample>& archive,
                                                  std::size_t count);

void write_mix_csv(const std::string& path, const MixSweep& sweep);
void write_projection_csv(const std::string& path, const StyleProjection& proj);
void write_feature_csv(const std::string& path, const std::vector<ChannelDiffStats>& stats);

}  // namespace sdid::analysis
