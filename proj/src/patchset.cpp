#include "ptsp/patchset.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

namespace ptsp {

namespace {

std::vector<int> axis_positions(int extent, int p, int stride, bool flush) {
  std::vector<int> out;
  for (int pos = 0; pos + p <= extent; pos += stride) out.push_back(pos);
  if (flush && !out.empty() && out.back() != extent - p)
    out.push_back(extent - p);
  return out;
}

using ordered_json = nlohmann::ordered_json;

ordered_json record_json(const ManifestRecord& r) {
  ordered_json j;
  j["image_id"] = r.image_id;
  j["top"] = r.top;
  j["left"] = r.left;
  j["p"] = r.p;
  j["ncct_dy"] = r.ncct_dy;
  j["ncct_dx"] = r.ncct_dx;
  j["sim_ln"] = r.sim_ln;
  j["sim_lg"] = r.sim_lg;
  j["mode"] = r.mode;
  return j;
}

[[noreturn]] void line_error(std::size_t line, const std::string& msg) {
  throw error("line " + std::to_string(line) + ": " + msg);
}

const ordered_json& field(const ordered_json& j, const char* name,
                          std::size_t line) {
  auto it = j.find(name);
  if (it == j.end()) line_error(line, std::string("missing field ") + name);
  return *it;
}

int int_field(const ordered_json& j, const char* name, std::size_t line) {
  const auto& v = field(j, name, line);
  if (!v.is_number_integer())
    line_error(line, std::string("field ") + name + " must be an integer");
  return v.get<int>();
}

double num_field(const ordered_json& j, const char* name, std::size_t line) {
  const auto& v = field(j, name, line);
  if (!v.is_number())
    line_error(line, std::string("field ") + name + " must be a number");
  return v.get<double>();
}

std::string str_field(const ordered_json& j, const char* name,
                      std::size_t line) {
  const auto& v = field(j, name, line);
  if (!v.is_string())
    line_error(line, std::string("field ") + name + " must be a string");
  return v.get<std::string>();
}

}  // namespace

std::vector<PatchLoc> enumerate_locs(int height, int width, int patch,
                                     int stride, bool flush_edges) {
  if (patch <= 0) throw error("patch size must be positive");
  if (stride <= 0) throw error("stride must be positive");
  std::vector<int> ys = axis_positions(height, patch, stride, flush_edges);
  std::vector<int> xs = axis_positions(width, patch, stride, flush_edges);
  std::vector<PatchLoc> out;
  out.reserve(ys.size() * xs.size());
  for (int y : ys)
    for (int x : xs) out.push_back({y, x, patch});
  return out;
}

void write_manifest(const DatasetManifest& manifest,
                    const std::filesystem::path& path) {
  std::vector<ManifestRecord> records = manifest.records;
  std::stable_sort(records.begin(), records.end(),
                   [](const ManifestRecord& a, const ManifestRecord& b) {
                     return std::tie(a.image_id, a.top, a.left) <
                            std::tie(b.image_id, b.top, b.left);
                   });
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot open " + path.string() + " for writing");
  ordered_json header;
  header["type"] = "manifest";
  header["version"] = 1;
  header["scheme"] = manifest.scheme;
  out << header.dump() << '\n';
  for (const ManifestRecord& r : records) out << record_json(r).dump() << '\n';
  if (!out) throw error("failed writing " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("cannot open " + path.string());
  DatasetManifest manifest;
  std::string text;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    ordered_json j = ordered_json::parse(text, nullptr, false);
    if (j.is_discarded()) line_error(line_no, "invalid JSON");
    if (!j.is_object()) line_error(line_no, "expected a JSON object");
    if (!saw_header) {
      if (str_field(j, "type", line_no) != "manifest")
        line_error(line_no, "expected manifest header");
      if (int_field(j, "version", line_no) != 1)
        line_error(line_no, "unsupported manifest version");
      manifest.scheme = str_field(j, "scheme", line_no);
      saw_header = true;
      continue;
    }
    ManifestRecord r;
    r.image_id = str_field(j, "image_id", line_no);
    r.top = int_field(j, "top", line_no);
    r.left = int_field(j, "left", line_no);
    r.p = int_field(j, "p", line_no);
    r.ncct_dy = int_field(j, "ncct_dy", line_no);
    r.ncct_dx = int_field(j, "ncct_dx", line_no);
    r.sim_ln = num_field(j, "sim_ln", line_no);
    r.sim_lg = num_field(j, "sim_lg", line_no);
    r.mode = str_field(j, "mode", line_no);
    if (r.p <= 0) line_error(line_no, "field p must be positive");
    if (r.mode != "ptsp" && r.mode != "psp" && r.mode != "rmse")
      line_error(line_no, "unknown mode '" + r.mode + "'");
    manifest.records.push_back(std::move(r));
  }
  if (!saw_header) throw error("empty manifest " + path.string());
  return manifest;
}

int export_patches(const DatasetManifest& manifest, const GrayImage& ldct,
                   const GrayImage& ndct, const GrayImage& ncct,
                   const std::string& image_id,
                   const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  int exported = 0;
  for (const ManifestRecord& r : manifest.records) {
    if (r.image_id != image_id) continue;
    PatchLoc loc{r.top, r.left, r.p};
    PatchLoc off{r.top + r.ncct_dy, r.left + r.ncct_dx, r.p};
    PatchLoc nloc = r.mode == "rmse" ? off : loc;
    PatchLoc gloc = r.mode == "rmse" ? loc : off;
    std::string stem = r.image_id + "_" + std::to_string(r.top) + "_" +
                       std::to_string(r.left) + "_";
    save_pgm(crop(ldct, loc), out_dir / (stem + "L.pgm"));
    save_pgm(crop(ndct, nloc), out_dir / (stem + "N.pgm"));
    save_pgm(crop(ncct, gloc), out_dir / (stem + "G.pgm"));
    ++exported;
  }
  return exported;
}

}  // namespace ptsp
