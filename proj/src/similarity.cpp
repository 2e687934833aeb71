#include "ptsp/similarity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

#include "ptsp/patchset.hpp"

namespace ptsp {

namespace {

std::string format_weight(double w) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", w);
  return buf;
}

void check_window(const LevelPlane& pl, int top, int left, int p,
                  const char* what) {
  if (p <= 0 || top < 0 || left < 0 || top + p > pl.height ||
      left + p > pl.width)
    throw error(std::string(what) + " window (" + std::to_string(top) + "," +
                std::to_string(left) + "," + std::to_string(p) +
                ") out of bounds for " + std::to_string(pl.width) + "x" +
                std::to_string(pl.height) + " plane");
}

}  // namespace

DiscretizationScheme DiscretizationScheme::make(std::vector<int> points,
                                                std::vector<double> weights) {
  DiscretizationScheme s;
  s.points = std::move(points);
  s.weights = std::move(weights);
  s.validate();
  return s;
}

DiscretizationScheme DiscretizationScheme::defaults() {
  return make({0, 64, 128, 256}, {1.0, 0.7, 0.0});
}

void DiscretizationScheme::validate() const {
  if (points.size() < 3)
    throw error("scheme needs at least 3 separation points");
  if (points.front() != 0)
    throw error("first separation point must be 0, got " +
                std::to_string(points.front()));
  if (points.back() != 256)
    throw error("last separation point must be 256, got " +
                std::to_string(points.back()));
  for (std::size_t i = 1; i < points.size(); ++i)
    if (points[i] <= points[i - 1])
      throw error("separation points must be strictly increasing");
  if (weights.size() != points.size() - 1)
    throw error("want " + std::to_string(points.size() - 1) +
                " weights for " + std::to_string(points.size()) +
                " separation points, got " + std::to_string(weights.size()));
  if (weights.front() != 1.0) throw error("first weight must be 1");
  if (weights.back() != 0.0) throw error("last weight must be 0");
  for (std::size_t i = 1; i < weights.size(); ++i)
    if (!(weights[i] < weights[i - 1]))
      throw error("weights must be strictly decreasing");
}

int DiscretizationScheme::level_of(int pixel) const {
  if (pixel < 0 || pixel > 255)
    throw error("pixel value " + std::to_string(pixel) + " outside [0,255]");
  auto it = std::upper_bound(points.begin(), points.end(), pixel);
  return static_cast<int>(it - points.begin()) - 1;
}

std::array<std::uint8_t, 256> DiscretizationScheme::level_lut() const {
  std::array<std::uint8_t, 256> lut{};
  for (int v = 0; v < 256; ++v)
    lut[v] = static_cast<std::uint8_t>(level_of(v));
  return lut;
}

std::string DiscretizationScheme::fingerprint() const {
  std::string out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(points[i]);
  }
  out += '|';
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (i) out += ',';
    out += format_weight(weights[i]);
  }
  return out;
}

DiscretizedPatch discretize(const GrayImage& patch,
                            const DiscretizationScheme& scheme) {
  scheme.validate();
  if (patch.width != patch.height)
    throw error("discretize expects a square patch, got " +
                std::to_string(patch.width) + "x" +
                std::to_string(patch.height));
  auto lut = scheme.level_lut();
  DiscretizedPatch out;
  out.size = patch.width;
  out.levels.resize(patch.data.size());
  for (std::size_t i = 0; i < patch.data.size(); ++i)
    out.levels[i] = lut[patch.data[i]];
  return out;
}

DifferenceMap difference_map(const DiscretizedPatch& a,
                             const DiscretizedPatch& b) {
  if (a.size != b.size || a.levels.size() != b.levels.size())
    throw error("difference_map patch sizes differ");
  DifferenceMap out;
  out.size = a.size;
  out.values.resize(a.levels.size());
  for (std::size_t i = 0; i < a.levels.size(); ++i) {
    int d = int(a.levels[i]) - int(b.levels[i]);
    out.values[i] = static_cast<std::uint8_t>(d < 0 ? -d : d);
  }
  return out;
}

SimilarityMask similarity_mask(const DifferenceMap& d,
                               const DiscretizationScheme& scheme) {
  scheme.validate();
  SimilarityMask out;
  out.size = d.size;
  out.values.resize(d.values.size());
  int n = scheme.segments();
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    if (d.values[i] >= n)
      throw error("difference value " + std::to_string(int(d.values[i])) +
                  " outside scheme with " + std::to_string(n) + " segments");
    out.values[i] = scheme.weights[d.values[i]];
  }
  return out;
}

double mask_similarity(const SimilarityMask& mask) {
  if (mask.values.empty()) throw error("mask_similarity on empty mask");
  double sum = 0.0;
  for (double v : mask.values) sum += v;
  return sum / static_cast<double>(mask.values.size());
}

double patch_similarity(const GrayImage& a, const GrayImage& b,
                        const DiscretizationScheme& scheme) {
  if (!a.same_size(b)) throw error("patch_similarity patch sizes differ");
  if (a.data.empty()) throw error("patch_similarity on empty patch");
  scheme.validate();
  auto lut = scheme.level_lut();
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    int d = int(lut[a.data[i]]) - int(lut[b.data[i]]);
    sum += scheme.weights[d < 0 ? -d : d];
  }
  return sum / static_cast<double>(a.data.size());
}

double rmse(const GrayImage& a, const GrayImage& b) {
  if (!a.same_size(b)) throw error("rmse patch sizes differ");
  if (a.data.empty()) throw error("rmse on empty patch");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    double d = double(a.data[i]) - double(b.data[i]);
    sum += d * d;
  }
  return std::sqrt(sum / static_cast<double>(a.data.size()));
}

LevelPlane LevelPlane::make(const GrayImage& img,
                            const DiscretizationScheme& scheme) {
  scheme.validate();
  auto lut = scheme.level_lut();
  LevelPlane pl;
  pl.width = img.width;
  pl.height = img.height;
  pl.levels.resize(img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i)
    pl.levels[i] = lut[img.data[i]];
  return pl;
}

double plane_patch_similarity(const LevelPlane& a, int a_top, int a_left,
                              const LevelPlane& b, int b_top, int b_left,
                              int p, const std::vector<double>& weights) {
  check_window(a, a_top, a_left, p, "similarity");
  check_window(b, b_top, b_left, p, "similarity");
  double sum = 0.0;
  for (int r = 0; r < p; ++r) {
    const std::uint8_t* ra = a.levels.data() + std::size_t(a_top + r) * a.width + a_left;
    const std::uint8_t* rb = b.levels.data() + std::size_t(b_top + r) * b.width + b_left;
    for (int c = 0; c < p; ++c) {
      int d = int(ra[c]) - int(rb[c]);
      sum += weights[d < 0 ? -d : d];
    }
  }
  return sum / (double(p) * double(p));
}

std::string to_string(PurifyMode mode) {
  switch (mode) {
    case PurifyMode::ptsp: return "ptsp";
    case PurifyMode::psp: return "psp";
    case PurifyMode::rmse_topk: return "rmse";
  }
  throw error("unknown purify mode");
}

PurifyMode purify_mode_from(const std::string& name) {
  if (name == "ptsp") return PurifyMode::ptsp;
  if (name == "psp") return PurifyMode::psp;
  if (name == "rmse") return PurifyMode::rmse_topk;
  throw error("unknown mode '" + name + "' (want ptsp, psp or rmse)");
}

void PurifyConfig::validate() const {
  scheme.validate();
  if (!(threshold > 0.0 && threshold < 1.0))
    throw error("threshold must lie in (0,1)");
  if (patch <= 0) throw error("patch size must be positive");
  if (stride <= 0 || stride > patch)
    throw error("stride must lie in [1, patch]");
  if (search_radius < 0) throw error("search radius must be >= 0");
  if (workers < 1) throw error("workers must be >= 1");
}

namespace {

// Scans the clamped (2r+1)^2 neighborhood of center in plane b against the
// fixed window of plane a. `improves(cand, best)` orders scores; equal
// scores fall back to the smallest |dy|+|dx|, then lexicographic (dy, dx),
// all measured on effective (post-clamp) offsets.
template <typename ScoreFn, typename ImprovesFn>
NeighborhoodMatch scan_neighborhood(PatchLoc center, int height, int width,
                                    int radius, int p, ScoreFn score,
                                    ImprovesFn improves) {
  NeighborhoodMatch best;
  bool have = false;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      int top = std::clamp(center.top + dy, 0, height - p);
      int left = std::clamp(center.left + dx, 0, width - p);
      int edy = top - center.top;
      int edx = left - center.left;
      double v = score(top, left);
      bool take = !have || improves(v, best.score);
      if (!take && v == best.score) {
        int cand_l1 = std::abs(edy) + std::abs(edx);
        int best_l1 = std::abs(best.dy) + std::abs(best.dx);
        take = cand_l1 < best_l1 ||
               (cand_l1 == best_l1 &&
                (edy < best.dy || (edy == best.dy && edx < best.dx)));
      }
      if (take) {
        best = {edy, edx, v};
        have = true;
      }
    }
  }
  return best;
}

struct PurifyContext {
  const GrayImage& ldct;
  const GrayImage& ndct;
  const GrayImage& ncct;
  const PurifyConfig& cfg;
  LevelPlane ldct_pl, ndct_pl, ncct_pl;

  PurifyContext(const GrayImage& l, const GrayImage& n, const GrayImage& g,
                const PurifyConfig& c)
      : ldct(l), ndct(n), ncct(g), cfg(c) {
    cfg.validate();
    if (!ldct.same_size(ndct) || !ldct.same_size(ncct))
      throw error("purify needs equally sized LDCT, NDCT and NCCT images");
    ldct_pl = LevelPlane::make(ldct, cfg.scheme);
    ndct_pl = LevelPlane::make(ndct, cfg.scheme);
    ncct_pl = LevelPlane::make(ncct, cfg.scheme);
  }

  double sim(const LevelPlane& a, PatchLoc at, const LevelPlane& b, int top,
             int left) const {
    return plane_patch_similarity(a, at.top, at.left, b, top, left, at.size,
                                  cfg.scheme.weights);
  }

  NeighborhoodMatch best_ncct(PatchLoc loc) const {
    return scan_neighborhood(
        loc, ncct.height, ncct.width, cfg.search_radius, loc.size,
        [&](int top, int left) { return sim(ldct_pl, loc, ncct_pl, top, left); },
        [](double cand, double best) { return cand > best; });
  }

  NeighborhoodMatch best_rmse_ndct(PatchLoc loc) const {
    GrayImage lp = crop(ldct, loc);
    return scan_neighborhood(
        loc, ndct.height, ndct.width, cfg.search_radius, loc.size,
        [&](int top, int left) {
          return rmse(lp, crop(ndct, {top, left, loc.size}));
        },
        [](double cand, double best) { return cand < best; });
  }

  SelectOutcome select(PatchLoc loc) const {
    if (!loc_in_bounds(loc, ldct.height, ldct.width))
      throw error("patch (" + std::to_string(loc.top) + "," +
                  std::to_string(loc.left) + "," + std::to_string(loc.size) +
                  ") out of bounds");
    SelectOutcome out;
    if (cfg.mode == PurifyMode::rmse_topk) {
      NeighborhoodMatch m = best_rmse_ndct(loc);
      PatchLoc nloc{loc.top + m.dy, loc.left + m.dx, loc.size};
      out.accepted = true;
      out.triplet.loc = loc;
      out.triplet.ldct = crop(ldct, loc);
      out.triplet.ndct = crop(ndct, nloc);
      out.triplet.ncct = crop(ncct, loc);
      out.triplet.ncct_dy = m.dy;
      out.triplet.ncct_dx = m.dx;
      out.triplet.sim_ln = sim(ldct_pl, loc, ndct_pl, nloc.top, nloc.left);
      out.triplet.sim_lg = sim(ldct_pl, loc, ncct_pl, loc.top, loc.left);
      return out;
    }
    double sim_ln = sim(ldct_pl, loc, ndct_pl, loc.top, loc.left);
    if (sim_ln < cfg.threshold) {
      out.reason = RejectStage::ndct;
      return out;
    }
    int dy = 0, dx = 0;
    double sim_lg;
    if (cfg.mode == PurifyMode::ptsp) {
      NeighborhoodMatch m = best_ncct(loc);
      if (m.score < cfg.threshold) {
        out.reason = RejectStage::ncct;
        return out;
      }
      dy = m.dy;
      dx = m.dx;
      sim_lg = m.score;
    } else {
      sim_lg = sim(ldct_pl, loc, ncct_pl, loc.top, loc.left);
    }
    out.accepted = true;
    out.triplet.loc = loc;
    out.triplet.ldct = crop(ldct, loc);
    out.triplet.ndct = crop(ndct, loc);
    out.triplet.ncct = crop(ncct, {loc.top + dy, loc.left + dx, loc.size});
    out.triplet.ncct_dy = dy;
    out.triplet.ncct_dx = dx;
    out.triplet.sim_ln = sim_ln;
    out.triplet.sim_lg = sim_lg;
    return out;
  }
};

}  // namespace

NeighborhoodMatch search_best_ncct(const GrayImage& ldct_patch,
                                   const GrayImage& ncct_img, PatchLoc center,
                                   const PurifyConfig& cfg) {
  cfg.validate();
  if (ldct_patch.width != ldct_patch.height)
    throw error("search_best_ncct expects a square LDCT patch");
  if (ldct_patch.width != center.size)
    throw error("search center size does not match the LDCT patch");
  if (!loc_in_bounds(center, ncct_img.height, ncct_img.width))
    throw error("search center out of bounds");
  LevelPlane patch_pl = LevelPlane::make(ldct_patch, cfg.scheme);
  LevelPlane ncct_pl = LevelPlane::make(ncct_img, cfg.scheme);
  return scan_neighborhood(
      center, ncct_img.height, ncct_img.width, cfg.search_radius, center.size,
      [&](int top, int left) {
        return plane_patch_similarity(patch_pl, 0, 0, ncct_pl, top, left,
                                      center.size, cfg.scheme.weights);
      },
      [](double cand, double best) { return cand > best; });
}

SelectOutcome select_triplet(const GrayImage& ldct, const GrayImage& ndct,
                             const GrayImage& ncct, PatchLoc loc,
                             const PurifyConfig& cfg) {
  PurifyConfig gate = cfg;
  gate.mode = PurifyMode::ptsp;
  return PurifyContext(ldct, ndct, ncct, gate).select(loc);
}

std::vector<PatchTriplet> purify(const GrayImage& ldct, const GrayImage& ndct,
                                 const GrayImage& ncct,
                                 const PurifyConfig& cfg) {
  PurifyContext ctx(ldct, ndct, ncct, cfg);
  std::vector<PatchLoc> locs = enumerate_locs(ldct.height, ldct.width,
                                              cfg.patch, cfg.stride,
                                              cfg.flush_edges);
  int nworkers = static_cast<int>(std::min<std::size_t>(
      cfg.workers, std::max<std::size_t>(locs.size(), 1)));
  std::vector<std::vector<PatchTriplet>> parts(nworkers);
  std::vector<std::thread> threads;
  std::size_t base = locs.size() / nworkers;
  std::size_t rem = locs.size() % nworkers;
  std::size_t begin = 0;
  for (int w = 0; w < nworkers; ++w) {
    std::size_t count = base + (std::size_t(w) < rem ? 1 : 0);
    std::size_t end = begin + count;
    threads.emplace_back([&ctx, &parts, &locs, w, begin, end] {
      for (std::size_t i = begin; i < end; ++i) {
        SelectOutcome out = ctx.select(locs[i]);
        if (out.accepted) parts[w].push_back(std::move(out.triplet));
      }
    });
    begin = end;
  }
  for (auto& t : threads) t.join();
  std::vector<PatchTriplet> result;
  for (auto& part : parts)
    for (auto& t : part) result.push_back(std::move(t));
  return result;
}

}  // namespace ptsp
