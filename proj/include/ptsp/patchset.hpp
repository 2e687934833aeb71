#ifndef PTSP_PATCHSET_HPP
#define PTSP_PATCHSET_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "ptsp/image.hpp"

namespace ptsp {

/// Top-left corners of a p x p sliding window over an H x W image, stride
/// apart, row-major. With flush_edges an extra row/column flush with the
/// bottom/right border is appended when the grid does not already land
/// there. Empty when the window does not fit.
std::vector<PatchLoc> enumerate_locs(int height, int width, int patch,
                                     int stride, bool flush_edges = false);

struct ManifestRecord {
  std::string image_id;
  int top = 0;
  int left = 0;
  int p = 0;
  int ncct_dy = 0;
  int ncct_dx = 0;
  double sim_ln = 0.0;
  double sim_lg = 0.0;
  std::string mode;

  bool operator==(const ManifestRecord&) const = default;
};

struct DatasetManifest {
  std::string scheme;  // discretization fingerprint from the producing run
  std::vector<ManifestRecord> records;

  bool operator==(const DatasetManifest&) const = default;
};

/// JSONL: one header object line, then one record object per line, records
/// sorted by (image_id, top, left).
void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path);
/// Parses and validates; errors carry the 1-based line number and field.
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Crops each record with matching image_id out of the three source images
/// and writes {image_id}_{top}_{left}_{L|N|G}.pgm into out_dir; records for
/// other images are skipped. The record offset is applied to the NDCT crop
/// for rmse-mode records and to the NCCT crop otherwise. Returns the number
/// of records exported.
int export_patches(const DatasetManifest& manifest, const GrayImage& ldct,
                   const GrayImage& ndct, const GrayImage& ncct,
                   const std::string& image_id,
                   const std::filesystem::path& out_dir);

}  // namespace ptsp

#endif
