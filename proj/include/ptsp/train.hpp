#ifndef PTSP_TRAIN_HPP
#define PTSP_TRAIN_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ptsp/attention.hpp"

namespace ptsp {

struct TrainConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double weight_decay = 1e-4;
  int batch = 32;
  std::vector<int> milestones;  // empty -> {steps/2, 3*steps/4}
  double gamma = 0.5;
  double eps_charb = 1e-3;
  double lambda = 1.0;
  int steps = 2000;
  std::uint64_t seed = 0;

  void validate() const;
  std::vector<int> resolved_milestones() const;
};

/// Mean over pixels of sqrt((pred-target)^2 + eps^2).
double charbonnier(const std::vector<double>& pred,
                   const std::vector<double>& target, double eps);

/// Optional perceptual feature extractor; maps a patch to a feature vector.
using FeatureHook =
    std::function<std::vector<double>(const std::vector<double>&)>;

/// Charbonnier plus lambda times the mean squared distance between hook
/// features of pred and target; the hook term is zero when absent. Value
/// only: training differentiates the Charbonnier term.
double total_loss(const std::vector<double>& pred,
                  const std::vector<double>& target, const TrainConfig& cfg,
                  const FeatureHook& hook = nullptr);

struct AdamState {
  Eigen::VectorXd m, v;
  static AdamState zeros(Eigen::Index n);
};

/// Decoupled-weight-decay Adam update, in place. lr is the effective
/// (scheduled) rate for this step; step_index is 1-based for bias
/// correction. spans, when given, names parameter segments in the
/// non-finite-gradient error.
void adamw_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads,
                AdamState& state, const TrainConfig& cfg, double lr,
                int step_index,
                const std::vector<std::pair<std::string, int>>* spans =
                    nullptr);

/// base_lr * gamma^(number of milestones <= step).
double multistep_lr(double base_lr, const std::vector<int>& milestones,
                    double gamma, int step);

/// One training example, intensities normalized to [0,1].
struct TripletSample {
  std::vector<double> ldct, ncct, ndct;  // each patch*patch long
  int patch = 0;
};

/// Minimal NCCT-guided denoiser: per-pixel linear lift to C channels, one
/// windowed cross-attention block (LDCT queries/values, NCCT keys), a
/// pointwise GELU MLP, and a linear head back to one intensity. All
/// parameters live in one flat vector.
struct ToyDenoiser {
  int patch = 8;
  int window = 8;    // must divide patch
  int channels = 8;  // C = d
  int hidden = 16;
  Eigen::VectorXd theta;

  static ToyDenoiser init(int patch, int window, int channels, int hidden,
                          std::uint64_t seed);
  int param_count() const;
  std::vector<std::pair<std::string, int>> spans() const;
  void validate() const;

  std::vector<double> forward(const std::vector<double>& ldct,
                              const std::vector<double>& ncct) const;
  /// Mean Charbonnier loss over the batch rows; grad gets the mean
  /// gradient. indices select samples.
  double loss_and_grad(const std::vector<TripletSample>& samples,
                       const std::vector<int>& indices, double eps_charb,
                       Eigen::VectorXd& grad) const;
};

struct CurvePoint {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
};

struct TrainResult {
  ToyDenoiser model;
  std::vector<CurvePoint> curve;
};

/// Seeded toy training run: uniform-with-replacement batches, AdamW,
/// MultiStepLR. Bit-deterministic for a given seed.
TrainResult train_toy(const std::vector<TripletSample>& samples,
                      const TrainConfig& cfg, int window = 8, int channels = 8,
                      int hidden = 16);

/// Degraded 8x8 (or patch-sized) triplets from seeded smooth fields: NDCT is
/// the clean field, LDCT its shift/deform/noise degradation, NCCT a mildly
/// noised copy.
std::vector<TripletSample> synth_triplet_samples(int count, int patch,
                                                 std::uint64_t seed);

/// Versioned binary dump: header with the four dims, then the raw 64-bit
/// parameter vector (native byte order).
void save_model(const ToyDenoiser& model, const std::filesystem::path& path);
ToyDenoiser load_model(const std::filesystem::path& path);

void write_curve_csv(const std::vector<CurvePoint>& curve,
                     const std::filesystem::path& path);

}  // namespace ptsp

#endif
