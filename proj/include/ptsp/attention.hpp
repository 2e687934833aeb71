#ifndef PTSP_ATTENTION_HPP
#define PTSP_ATTENTION_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ptsp/rng.hpp"

namespace ptsp {

/// Dense H x W x C feature volume, row-major with channels fastest.
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> data;

  static FeatureMap zeros(int height, int width, int channels);
  double& at(int r, int c, int ch) {
    return data[(std::size_t(r) * width + c) * channels + ch];
  }
  double at(int r, int c, int ch) const {
    return data[(std::size_t(r) * width + c) * channels + ch];
  }
  bool same_shape(const FeatureMap& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

/// Non-overlapping M x M windows of a feature map, scanned row-major; each
/// window is flattened to an M^2 x C matrix (row-major within the window).
struct WindowFeatures {
  int window = 0;  // M
  int grid_rows = 0;
  int grid_cols = 0;
  int channels = 0;
  std::vector<Eigen::MatrixXd> windows;

  int count() const { return grid_rows * grid_cols; }
};

enum class AttentionMode { sa, ca };

/// One single-head windowed attention layer. Queries and values are always
/// projected from X; keys come from X in SA mode and from the guide map Y
/// in CA mode. The bias table holds one learnable logit offset per relative
/// (dy, dx) window offset.
struct AttentionParams {
  AttentionMode mode = AttentionMode::ca;
  int window = 8;    // M
  int channels = 0;  // C
  int dim = 0;       // d
  Eigen::MatrixXd p_q, p_k, p_v;  // C x d
  Eigen::VectorXd bias_table;     // (2M-1)^2

  static AttentionParams init(AttentionMode mode, int window, int channels,
                              int dim, Rng& rng);
  void validate() const;
};

struct Qkv {
  Eigen::MatrixXd q, k, v;
};

struct AttentionCache {
  Eigen::MatrixXd x, y;  // window inputs (y equals x in SA mode)
  Eigen::MatrixXd q, k, v;
  Eigen::MatrixXd attn;  // row-stochastic A
};

struct WindowGrads {
  Eigen::MatrixXd d_x, d_y;
  Eigen::MatrixXd d_p_q, d_p_k, d_p_v;
  Eigen::VectorXd d_bias_table;
};

WindowFeatures window_partition(const FeatureMap& f, int window);
FeatureMap window_reverse(const WindowFeatures& w);

Qkv project_qkv(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                const AttentionParams& params);

/// Flat table index of the relative offset from window position i to j, for
/// every (i, j) pair: (dy+M-1)*(2M-1) + (dx+M-1) with (dy,dx) = pos_j-pos_i.
std::vector<int> relative_index_map(int window);
Eigen::MatrixXd build_bias(const AttentionParams& params);

/// Numerically stable row softmax (per-row max subtracted before exp).
Eigen::MatrixXd row_softmax(const Eigen::MatrixXd& logits);

/// out = rowsoftmax(Q K^T / sqrt(d) + bias) V. When cache is given, Q, K, V
/// and the softmax matrix are stored for the backward pass (x/y are filled
/// by the block-level caller).
Eigen::MatrixXd attention_forward(const Eigen::MatrixXd& q,
                                  const Eigen::MatrixXd& k,
                                  const Eigen::MatrixXd& v,
                                  const Eigen::MatrixXd& bias,
                                  AttentionCache* cache = nullptr);

/// Chain-rule gradients of one window given d(loss)/d(out). In SA mode the
/// key-path gradient is folded into d_x and d_y is zero.
WindowGrads attention_backward(const AttentionCache& cache,
                               const AttentionParams& params,
                               const Eigen::MatrixXd& grad_out);

struct BlockCache {
  int height = 0, width = 0;
  std::vector<AttentionCache> windows;
};

/// Whole-map layer: partition, project, attend, reassemble. The output has
/// `dim` channels. y is ignored in SA mode.
FeatureMap attention_block_forward(const FeatureMap& x, const FeatureMap& y,
                                   const AttentionParams& params,
                                   BlockCache* cache = nullptr);

struct BlockGrads {
  FeatureMap d_x, d_y;
  Eigen::MatrixXd d_p_q, d_p_k, d_p_v;
  Eigen::VectorXd d_bias_table;
};

BlockGrads attention_block_backward(const BlockCache& cache,
                                    const AttentionParams& params,
                                    const FeatureMap& grad_out);

struct GradCheckEntry {
  std::string name;
  int index = 0;  // coordinate within the named parameter
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::vector<GradCheckEntry> failures;  // entries above the requested tol
  bool passed(double tol) const {
    return failures.empty() && max_rel_err < tol;
  }
};

/// Central-difference check of an analytic gradient. `spans` names the
/// consecutive segments of theta (parameter name, length). The relative
/// error denominator is floored at 1 so vanishing gradients are compared
/// absolutely instead of amplifying finite-difference noise.
GradCheckReport check_gradients(
    const std::function<double(const Eigen::VectorXd&)>& loss,
    const Eigen::VectorXd& theta, const Eigen::VectorXd& analytic,
    const std::vector<std::pair<std::string, int>>& spans, double h,
    double tol);

/// Scalar-loss CA block instance for gradient checking: loss is the
/// weighted sum of the block output. theta packs p_q, p_k, p_v, bias_table,
/// x, y in that order. With bypass_attention the attention core is replaced
/// by out = Q + K + V (requires d == C), an exactly linear reference path.
struct CaBlockProblem {
  AttentionParams params;
  FeatureMap x, y;
  FeatureMap loss_weights;  // same shape as the block output
  bool bypass_attention = false;

  static CaBlockProblem random(int m, int c, int d, std::uint64_t seed,
                               bool bypass = false);
  Eigen::VectorXd theta() const;
  std::vector<std::pair<std::string, int>> spans() const;
  double loss(const Eigen::VectorXd& theta) const;
  Eigen::VectorXd analytic_grad() const;
};

GradCheckReport grad_check_block(const CaBlockProblem& problem, double h,
                                 double tol);

}  // namespace ptsp

#endif
