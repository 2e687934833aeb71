#include "ptsp/image.hpp"

#include <algorithm>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace ptsp {

namespace {

constexpr int kMaxDim = 1 << 20;

void check_dims(int width, int height, const std::string& context) {
  if (width <= 0 || height <= 0 || width > kMaxDim || height > kMaxDim)
    throw error(context + ": invalid dimensions " + std::to_string(width) +
                "x" + std::to_string(height));
}

// Whitespace/comment-aware tokenizer over the PGM header bytes.
struct HeaderScanner {
  const std::string& buf;
  std::size_t pos = 0;

  bool is_space(char c) const {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
           c == '\f';
  }

  void skip_separators() {
    while (pos < buf.size()) {
      if (is_space(buf[pos])) {
        ++pos;
      } else if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  std::string next_token(const std::string& path, const char* what) {
    skip_separators();
    std::size_t start = pos;
    while (pos < buf.size() && !is_space(buf[pos])) ++pos;
    if (pos == start)
      throw error(path + ": truncated header, missing " + what);
    return buf.substr(start, pos - start);
  }

  int next_int(const std::string& path, const char* what) {
    const std::string tok = next_token(path, what);
    std::size_t used = 0;
    int value = 0;
    try {
      value = std::stoi(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != tok.size())
      throw error(path + ": bad " + std::string(what) + " token '" + tok + "'");
    return value;
  }
};

}  // namespace

GrayImage GrayImage::filled(int width, int height, std::uint8_t value) {
  check_dims(width, height, "image");
  GrayImage img;
  img.width = width;
  img.height = height;
  img.data.assign(static_cast<std::size_t>(width) * height, value);
  return img;
}

GrayImage load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error(path + ": cannot open for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();

  HeaderScanner scan{buf};
  const std::string magic = scan.next_token(path, "magic");
  if (magic != "P5")
    throw error(path + ": bad magic token '" + magic + "' (want P5)");
  const int width = scan.next_int(path, "width");
  const int height = scan.next_int(path, "height");
  check_dims(width, height, path);
  const int maxval = scan.next_int(path, "maxval");
  if (maxval != 255)
    throw error(path + ": unsupported maxval " + std::to_string(maxval) +
                " (want 255)");

  // Exactly one whitespace byte separates the maxval from the payload.
  if (scan.pos >= buf.size() || !scan.is_space(buf[scan.pos]))
    throw error(path + ": missing separator after maxval");
  ++scan.pos;

  const std::size_t need = static_cast<std::size_t>(width) * height;
  if (buf.size() - scan.pos < need)
    throw error(path + ": unexpected end of pixel data");

  GrayImage img;
  img.width = width;
  img.height = height;
  img.data.assign(buf.begin() + static_cast<std::ptrdiff_t>(scan.pos),
                  buf.begin() + static_cast<std::ptrdiff_t>(scan.pos + need));
  return img;
}

void save_pgm(const GrayImage& img, const std::string& path) {
  check_dims(img.width, img.height, path);
  if (img.data.size() != img.pixel_count())
    throw error(path + ": image data size does not match dimensions");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw error(path + ": cannot open for writing");
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data.data()),
            static_cast<std::streamsize>(img.data.size()));
  if (!out) throw error(path + ": write failed");
}

GrayImage load_raw(const std::string& path, int width, int height) {
  check_dims(width, height, path);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error(path + ": cannot open for reading");
  GrayImage img = GrayImage::filled(width, height);
  in.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.pixel_count()));
  if (static_cast<std::size_t>(in.gcount()) != img.pixel_count())
    throw error(path + ": raw plane shorter than " +
                std::to_string(img.pixel_count()) + " bytes");
  char extra;
  if (in.read(&extra, 1))
    throw error(path + ": raw plane longer than " +
                std::to_string(img.pixel_count()) + " bytes");
  return img;
}

bool loc_in_bounds(PatchLoc loc, int height, int width) {
  return loc.top >= 0 && loc.left >= 0 && loc.size > 0 &&
         loc.top + loc.size <= height && loc.left + loc.size <= width;
}

GrayImage crop(const GrayImage& img, PatchLoc loc) {
  if (!loc_in_bounds(loc, img.height, img.width))
    throw error("crop (" + std::to_string(loc.top) + "," +
                std::to_string(loc.left) + "," + std::to_string(loc.size) +
                ") out of bounds for " + std::to_string(img.width) + "x" +
                std::to_string(img.height) + " image");
  GrayImage out = GrayImage::filled(loc.size, loc.size);
  for (int r = 0; r < loc.size; ++r)
    std::memcpy(out.row(r), img.row(loc.top + r) + loc.left,
                static_cast<std::size_t>(loc.size));
  return out;
}

std::vector<std::string> list_image_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw error(dir + ": not a directory");
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".raw") files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end(),
            [](const std::string& a, const std::string& b) {
              return fs::path(a).filename().string() <
                     fs::path(b).filename().string();
            });
  return files;
}

std::string image_id_from_path(const std::string& path) {
  return fs::path(path).stem().string();
}

}  // namespace ptsp
