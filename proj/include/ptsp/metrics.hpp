#ifndef PTSP_METRICS_HPP
#define PTSP_METRICS_HPP

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ptsp/image.hpp"

namespace ptsp {

struct FeatureSet {
  Eigen::MatrixXd features;  // one row per image
  std::string extractor;

  int count() const { return int(features.rows()); }
  int dim() const { return int(features.cols()); }
};

/// Mean intensity of each block x block tile, row-major; ragged edge tiles
/// average over their actual pixels. The framework-free stand-in for a
/// network feature extractor.
std::vector<double> extract_pool_features(const GrayImage& img, int block = 8);

/// Features for every image in dir (sorted by filename). All images must
/// share dimensions. Extractor names: "poolN" for any positive N.
FeatureSet features_from_dir(const std::filesystem::path& dir,
                             const std::string& extractor);

struct MeanCov {
  Eigen::VectorXd mu;
  Eigen::MatrixXd sigma;  // unbiased (N-1) sample covariance
};

MeanCov mean_cov(const FeatureSet& fs);

/// Symmetric PSD square root via eigendecomposition; eigenvalues in
/// [-1e-10, 0) are clamped to zero, lower ones are an error.
Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& sigma);

/// ||mu1-mu2||^2 + tr(sigma1 + sigma2 - 2 (sigma1^1/2 sigma2 sigma1^1/2)^1/2),
/// clamped at 0 against small negative numerical dips.
double frechet_distance(const Eigen::VectorXd& mu1,
                        const Eigen::MatrixXd& sigma1,
                        const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& sigma2);

/// MMD^2 with kernel (scale * a.b + coef)^degree; scale < 0 means 1/F.
/// Biased estimator by default; unbiased excludes the diagonal terms of the
/// within-set sums.
double poly_mmd2(const FeatureSet& x, const FeatureSet& y, int degree = 3,
                 double coef = 1.0, double scale = -1.0,
                 bool unbiased = false);

struct MetricsReport {
  double frechet = 0.0;
  double mmd2 = 0.0;
  int n_a = 0;
  int n_b = 0;
  std::string extractor;
};

/// Loads both directories, extracts features, computes both metrics.
MetricsReport evaluate(const std::filesystem::path& dir_a,
                       const std::filesystem::path& dir_b,
                       const std::string& extractor = "pool8");

}  // namespace ptsp

#endif
