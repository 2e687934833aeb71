#include "ptsp/metrics.hpp"

#include <cmath>

#include <Eigen/Eigenvalues>

namespace ptsp {

namespace {

int pool_block_from(const std::string& extractor) {
  if (extractor.rfind("pool", 0) == 0) {
    try {
      std::size_t used = 0;
      int block = std::stoi(extractor.substr(4), &used);
      if (used == extractor.size() - 4 && block > 0) return block;
    } catch (const std::exception&) {
    }
  }
  throw error("unknown extractor '" + extractor + "' (want poolN, e.g. pool8)");
}

double poly_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                   int degree, double coef, double scale) {
  return std::pow(scale * a.dot(b) + coef, degree);
}

}  // namespace

std::vector<double> extract_pool_features(const GrayImage& img, int block) {
  if (block <= 0) throw error("pool block must be positive");
  if (img.width <= 0 || img.height <= 0) throw error("empty image");
  int by = (img.height + block - 1) / block;
  int bx = (img.width + block - 1) / block;
  std::vector<double> out(std::size_t(by) * bx, 0.0);
  for (int ty = 0; ty < by; ++ty) {
    for (int tx = 0; tx < bx; ++tx) {
      int r0 = ty * block, r1 = std::min(img.height, r0 + block);
      int c0 = tx * block, c1 = std::min(img.width, c0 + block);
      double sum = 0.0;
      for (int r = r0; r < r1; ++r)
        for (int c = c0; c < c1; ++c) sum += img(r, c);
      out[std::size_t(ty) * bx + tx] = sum / double((r1 - r0) * (c1 - c0));
    }
  }
  return out;
}

FeatureSet features_from_dir(const std::filesystem::path& dir,
                             const std::string& extractor) {
  int block = pool_block_from(extractor);
  std::vector<std::string> files = list_image_files(dir.string());
  if (files.size() < 2)
    throw error("need at least 2 images in " + dir.string() + ", found " +
                std::to_string(files.size()));
  FeatureSet fs;
  fs.extractor = extractor;
  int width = -1, height = -1;
  for (std::size_t i = 0; i < files.size(); ++i) {
    GrayImage img = load_pgm(files[i]);
    if (i == 0) {
      width = img.width;
      height = img.height;
    } else if (img.width != width || img.height != height) {
      throw error(files[i] + " is " + std::to_string(img.width) + "x" +
                  std::to_string(img.height) + " but " + files[0] + " is " +
                  std::to_string(width) + "x" + std::to_string(height));
    }
    std::vector<double> row = extract_pool_features(img, block);
    if (i == 0) fs.features.resize(Eigen::Index(files.size()),
                                   Eigen::Index(row.size()));
    for (std::size_t j = 0; j < row.size(); ++j)
      fs.features(Eigen::Index(i), Eigen::Index(j)) = row[j];
  }
  return fs;
}

MeanCov mean_cov(const FeatureSet& fs) {
  if (fs.count() < 2)
    throw error("covariance needs at least 2 samples, got " +
                std::to_string(fs.count()));
  if (!fs.features.allFinite()) throw error("features must be finite");
  MeanCov mc;
  mc.mu = fs.features.colwise().mean();
  Eigen::MatrixXd centered = fs.features.rowwise() - mc.mu.transpose();
  mc.sigma = (centered.transpose() * centered) / double(fs.count() - 1);
  mc.sigma = ((mc.sigma + mc.sigma.transpose()) * 0.5).eval();
  return mc;
}

Eigen::MatrixXd matrix_sqrt_psd(const Eigen::MatrixXd& sigma) {
  if (sigma.rows() != sigma.cols()) throw error("matrix must be square");
  double asym = (sigma - sigma.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-9)
    throw error("matrix is not symmetric (max asymmetry " +
                std::to_string(asym) + ")");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  if (es.info() != Eigen::Success) throw error("eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-10)
      throw error("matrix is not PSD (eigenvalue " + std::to_string(ev[i]) +
                  ")");
    if (ev[i] < 0.0) ev[i] = 0.0;
  }
  Eigen::MatrixXd root = es.eigenvectors() *
                         ev.cwiseSqrt().asDiagonal() *
                         es.eigenvectors().transpose();
  return ((root + root.transpose()) * 0.5).eval();
}

double frechet_distance(const Eigen::VectorXd& mu1,
                        const Eigen::MatrixXd& sigma1,
                        const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& sigma2) {
  if (mu1.size() != mu2.size() || sigma1.rows() != sigma2.rows() ||
      sigma1.rows() != mu1.size() || sigma1.cols() != sigma1.rows() ||
      sigma2.cols() != sigma2.rows())
    throw error("frechet_distance dimension mismatch");
  Eigen::MatrixXd s1h = matrix_sqrt_psd(sigma1);
  // Symmetrize against roundoff before the second root; s1h sigma2 s1h is
  // symmetric PSD in exact arithmetic.
  Eigen::MatrixXd inner = s1h * sigma2 * s1h;
  inner = ((inner + inner.transpose()) * 0.5).eval();
  Eigen::MatrixXd cross = matrix_sqrt_psd(inner);
  double d = (mu1 - mu2).squaredNorm() +
             (sigma1 + sigma2 - 2.0 * cross).trace();
  return std::max(d, 0.0);
}

double poly_mmd2(const FeatureSet& x, const FeatureSet& y, int degree,
                 double coef, double scale, bool unbiased) {
  if (x.dim() != y.dim()) throw error("feature dims differ between sides");
  int nx = x.count(), ny = y.count();
  if (nx < 1 || ny < 1) throw error("poly_mmd2 needs non-empty sets");
  if (unbiased && (nx < 2 || ny < 2))
    throw error("unbiased poly_mmd2 needs at least 2 samples per side");
  if (scale < 0.0) scale = 1.0 / double(x.dim());
  double kxx = 0.0, kyy = 0.0, kxy = 0.0;
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < nx; ++j) {
      if (unbiased && i == j) continue;
      kxx += poly_kernel(x.features.row(i), x.features.row(j), degree, coef,
                         scale);
    }
  for (int i = 0; i < ny; ++i)
    for (int j = 0; j < ny; ++j) {
      if (unbiased && i == j) continue;
      kyy += poly_kernel(y.features.row(i), y.features.row(j), degree, coef,
                         scale);
    }
  for (int i = 0; i < nx; ++i)
    for (int j = 0; j < ny; ++j)
      kxy += poly_kernel(x.features.row(i), y.features.row(j), degree, coef,
                         scale);
  double xx_div = unbiased ? double(nx) * (nx - 1) : double(nx) * nx;
  double yy_div = unbiased ? double(ny) * (ny - 1) : double(ny) * ny;
  return kxx / xx_div + kyy / yy_div - 2.0 * kxy / (double(nx) * ny);
}

MetricsReport evaluate(const std::filesystem::path& dir_a,
                       const std::filesystem::path& dir_b,
                       const std::string& extractor) {
  FeatureSet fa = features_from_dir(dir_a, extractor);
  FeatureSet fb = features_from_dir(dir_b, extractor);
  if (fa.dim() != fb.dim())
    throw error("feature dims differ between sides (" +
                std::to_string(fa.dim()) + " vs " + std::to_string(fb.dim()) +
                ")");
  MeanCov a = mean_cov(fa);
  MeanCov b = mean_cov(fb);
  MetricsReport report;
  report.frechet = frechet_distance(a.mu, a.sigma, b.mu, b.sigma);
  report.mmd2 = poly_mmd2(fa, fb);
  report.n_a = fa.count();
  report.n_b = fb.count();
  report.extractor = extractor;
  return report;
}

}  // namespace ptsp
