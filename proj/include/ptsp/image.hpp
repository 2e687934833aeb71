#ifndef PTSP_IMAGE_HPP
#define PTSP_IMAGE_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ptsp {

/// Error type for all user-facing failures (bad input, bad files, bounds).
/// The CLI maps this to exit code 1; anything else is an internal error (2).
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 8-bit grayscale raster, row-major. The carrier for CT slices and patches.
struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // width * height bytes, row-major

  static GrayImage filled(int width, int height, std::uint8_t value = 0);

  std::uint8_t operator()(int row, int col) const {
    return data[static_cast<std::size_t>(row) * width + col];
  }
  std::uint8_t& operator()(int row, int col) {
    return data[static_cast<std::size_t>(row) * width + col];
  }
  const std::uint8_t* row(int r) const {
    return data.data() + static_cast<std::size_t>(r) * width;
  }
  std::uint8_t* row(int r) {
    return data.data() + static_cast<std::size_t>(r) * width;
  }
  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * height;
  }
  bool same_size(const GrayImage& other) const {
    return width == other.width && height == other.height;
  }

  bool operator==(const GrayImage&) const = default;
};

/// Square patch location: top-left corner plus side length.
struct PatchLoc {
  int top = 0;
  int left = 0;
  int size = 0;

  bool operator==(const PatchLoc&) const = default;
};

/// Reads a binary PGM ("P5", maxval 255). Header tokens may be separated by
/// arbitrary whitespace and '#' comments; exactly one whitespace byte follows
/// the maxval before the pixel payload.
GrayImage load_pgm(const std::string& path);

/// Writes the canonical form: "P5\n<w> <h>\n255\n" followed by raw bytes.
/// load_pgm(save_pgm(img)) is bit-exact.
void save_pgm(const GrayImage& img, const std::string& path);

/// Reads a headerless plane of exactly width*height bytes.
GrayImage load_raw(const std::string& path, int width, int height);

/// Copies the size x size block at loc. Throws if loc does not fit.
GrayImage crop(const GrayImage& img, PatchLoc loc);

/// True when loc fits inside an image of the given dimensions.
bool loc_in_bounds(PatchLoc loc, int height, int width);

/// Sorted list of image files (.pgm, or .raw when raw dims are in use)
/// directly inside dir. Returns full paths; sort key is the filename.
std::vector<std::string> list_image_files(const std::string& dir);

/// Filename without directory or extension; used as the manifest image id.
std::string image_id_from_path(const std::string& path);

}  // namespace ptsp

#endif
