#ifndef PTSP_SIMILARITY_HPP
#define PTSP_SIMILARITY_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ptsp/image.hpp"

namespace ptsp {

/// Intensity quantization used by the similarity masks: separation points
/// T_0=0 < T_1 < ... < T_n=256 split [0,256) into n segments, and weight
/// pi_j in [0,1] scores a level disagreement of j (pi_0=1 down to
/// pi_{n-1}=0, strictly decreasing).
struct DiscretizationScheme {
  std::vector<int> points;
  std::vector<double> weights;

  /// Validates and returns the scheme; throws on any invariant violation.
  static DiscretizationScheme make(std::vector<int> points,
                                   std::vector<double> weights);
  /// Three segments at {0,64,128,256} with weights {1,0.7,0}.
  static DiscretizationScheme defaults();

  int segments() const { return static_cast<int>(weights.size()); }
  /// Segment index of a pixel value: i-1 such that T_{i-1} <= v < T_i.
  int level_of(int pixel) const;
  /// 256-entry pixel->level table for bulk discretization.
  std::array<std::uint8_t, 256> level_lut() const;
  /// Compact identity string, e.g. "0,64,128,256|1,0.7,0".
  std::string fingerprint() const;

  void validate() const;
  bool operator==(const DiscretizationScheme&) const = default;
};

struct DiscretizedPatch {
  int size = 0;
  std::vector<std::uint8_t> levels;  // row-major, values in [0, n-1]
};

struct DifferenceMap {
  int size = 0;
  std::vector<std::uint8_t> values;  // |level_a - level_b|
};

struct SimilarityMask {
  int size = 0;
  std::vector<double> values;  // each one of the scheme's weights
};

DiscretizedPatch discretize(const GrayImage& patch,
                            const DiscretizationScheme& scheme);
DifferenceMap difference_map(const DiscretizedPatch& a,
                             const DiscretizedPatch& b);
SimilarityMask similarity_mask(const DifferenceMap& d,
                               const DiscretizationScheme& scheme);
/// Sum of mask values over the pixel count, in [0,1].
double mask_similarity(const SimilarityMask& mask);
/// discretize -> difference -> weighted mask -> normalized sum.
double patch_similarity(const GrayImage& a, const GrayImage& b,
                        const DiscretizationScheme& scheme);
/// sqrt(mean squared intensity difference).
double rmse(const GrayImage& a, const GrayImage& b);

/// Whole-image discretization; lets patch scoring reuse one pass per image
/// instead of re-discretizing every candidate window.
struct LevelPlane {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> levels;

  static LevelPlane make(const GrayImage& img,
                         const DiscretizationScheme& scheme);
};

/// Mask similarity between the p x p windows of two level planes.
double plane_patch_similarity(const LevelPlane& a, int a_top, int a_left,
                              const LevelPlane& b, int b_top, int b_left,
                              int p, const std::vector<double>& weights);

enum class PurifyMode { ptsp, psp, rmse_topk };

std::string to_string(PurifyMode mode);
PurifyMode purify_mode_from(const std::string& name);

struct PurifyConfig {
  DiscretizationScheme scheme = DiscretizationScheme::defaults();
  double threshold = 0.85;  // s, acceptance is >= s
  int patch = 64;
  int stride = 32;
  int search_radius = 8;  // r
  PurifyMode mode = PurifyMode::ptsp;
  bool flush_edges = false;  // append a flush-to-border row/column of locs
  int workers = 1;

  void validate() const;
};

/// One accepted training sample. In rmse_topk mode the offset locates the
/// matched NDCT patch (ndct is cropped at loc + offset); in the other modes
/// it locates the matched NCCT patch.
struct PatchTriplet {
  PatchLoc loc;
  GrayImage ldct, ndct, ncct;
  int ncct_dy = 0;
  int ncct_dx = 0;
  double sim_ln = 0.0;
  double sim_lg = 0.0;
};

struct NeighborhoodMatch {
  int dy = 0;
  int dx = 0;
  double score = 0.0;
};

/// Exhaustive similarity search over offsets in [-r, r]^2 around center,
/// candidate corners clamped to the image. Best similarity wins; ties go to
/// the smallest |dy|+|dx|, then lexicographic (dy, dx). The returned offset
/// is the effective (post-clamp) one.
NeighborhoodMatch search_best_ncct(const GrayImage& ldct_patch,
                                   const GrayImage& ncct_img, PatchLoc center,
                                   const PurifyConfig& cfg);

enum class RejectStage { none, ndct, ncct };

struct SelectOutcome {
  bool accepted = false;
  RejectStage reason = RejectStage::none;
  PatchTriplet triplet;  // populated only when accepted
};

/// Two-stage gate at one location: LDCT/NDCT similarity at loc must reach
/// the threshold, then the best LDCT/NCCT neighborhood similarity must too.
/// The NCCT search is skipped entirely when stage one fails.
SelectOutcome select_triplet(const GrayImage& ldct, const GrayImage& ndct,
                             const GrayImage& ncct, PatchLoc loc,
                             const PurifyConfig& cfg);

/// Runs the configured selection rule over every enumerated location.
///   ptsp:      the two-stage gate above.
///   psp:       stage one only; the NCCT patch and sim_lg at offset (0,0)
///              are recorded for bookkeeping but not thresholded.
///   rmse_topk: no threshold; pairs each LDCT patch with the NDCT patch of
///              minimal RMSE in the same neighborhood. sim_ln/sim_lg record
///              the mask similarities of the chosen pair and of NCCT at
///              offset (0,0).
/// Results are ordered by (top, left) and independent of cfg.workers.
std::vector<PatchTriplet> purify(const GrayImage& ldct, const GrayImage& ndct,
                                 const GrayImage& ncct,
                                 const PurifyConfig& cfg);

}  // namespace ptsp

#endif
