#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace segrl {

class DimensionMismatch : public std::invalid_argument {
 public:
  DimensionMismatch(const std::string& what, int w1, int h1, int w2, int h2)
      : std::invalid_argument(what + ": " + std::to_string(w1) + "x" + std::to_string(h1) +
                              " vs " + std::to_string(w2) + "x" + std::to_string(h2)) {}
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline void check_dims(int w, int h, std::size_t len, const char* kind) {
  if (w < 1 || h < 1) throw std::invalid_argument(std::string(kind) + ": dimensions must be positive");
  if (len != static_cast<std::size_t>(w) * static_cast<std::size_t>(h))
    throw std::invalid_argument(std::string(kind) + ": buffer length does not match width*height");
}
}  // namespace detail

/// 8-bit grayscale raster, row-major.
class GrayImage {
 public:
  GrayImage(int width, int height, std::uint8_t fill = 0)
      : width_(width), height_(height),
        pixels_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), fill) {
    detail::check_dims(width, height, pixels_.size(), "GrayImage");
  }
  GrayImage(int width, int height, std::vector<std::uint8_t> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    detail::check_dims(width, height, pixels_.size(), "GrayImage");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return pixels_.size(); }
  std::uint8_t at(int x, int y) const { return pixels_[index(x, y)]; }
  void set(int x, int y, std::uint8_t v) { pixels_[index(x, y)] = v; }
  const std::vector<std::uint8_t>& pixels() const { return pixels_; }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> pixels_;
};

/// Dense foreground flags, one byte per pixel holding 0 or 1.
class BinaryMask {
 public:
  BinaryMask(int width, int height, bool fill = false)
      : width_(width), height_(height),
        bits_(static_cast<std::size_t>(std::max(width, 0)) * std::max(height, 0), fill ? 1 : 0) {
    detail::check_dims(width, height, bits_.size(), "BinaryMask");
  }
  BinaryMask(int width, int height, std::vector<std::uint8_t> bits)
      : width_(width), height_(height), bits_(std::move(bits)) {
    detail::check_dims(width, height, bits_.size(), "BinaryMask");
    for (auto& b : bits_) b = b ? 1 : 0;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return bits_.size(); }
  bool at(int x, int y) const { return bits_[index(x, y)] != 0; }
  bool at(std::size_t i) const { return bits_[i] != 0; }
  void set(int x, int y, bool v = true) { bits_[index(x, y)] = v ? 1 : 0; }
  void set(std::size_t i, bool v = true) { bits_[i] = v ? 1 : 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }
  bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width_ && y < height_; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
  }
  bool empty_foreground() const { return count() == 0; }

  BinaryMask complement() const {
    BinaryMask out(*this);
    for (auto& b : out.bits_) b ^= 1;
    return out;
  }

  BinaryMask transposed() const {
    BinaryMask out(height_, width_);
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) out.set(y, x, at(x, y));
    return out;
  }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int width_;
  int height_;
  std::vector<std::uint8_t> bits_;
};

/// Real-valued prediction map in [0, 1]. Binary masks coerce to {0, 1}.
class SoftMap {
 public:
  SoftMap(int width, int height, std::vector<double> values)
      : width_(width), height_(height), values_(std::move(values)) {
    detail::check_dims(width, height, values_.size(), "SoftMap");
    for (double v : values_)
      if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("SoftMap: value outside [0,1]");
  }
  SoftMap(const BinaryMask& m)  // NOLINT(google-explicit-constructor)
      : width_(m.width()), height_(m.height()), values_(m.size()) {
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] = m.at(i) ? 1.0 : 0.0;
  }

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return values_.size(); }
  double at(int x, int y) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  double operator[](std::size_t i) const { return values_[i]; }
  const std::vector<double>& values() const { return values_; }

  SoftMap transposed() const {
    std::vector<double> t(values_.size());
    for (int y = 0; y < height_; ++y)
      for (int x = 0; x < width_; ++x) t[static_cast<std::size_t>(x) * height_ + y] = at(x, y);
    return SoftMap(height_, width_, std::move(t));
  }

 private:
  int width_;
  int height_;
  std::vector<double> values_;
};

template <typename A, typename B>
void require_same_shape(const A& a, const B& b, const char* op) {
  if (a.width() != b.width() || a.height() != b.height())
    throw DimensionMismatch(op, a.width(), a.height(), b.width(), b.height());
}

// Both masks empty counts as a perfect match.
inline constexpr double kEmptyIou = 1.0;

inline double iou(const BinaryMask& a, const BinaryMask& b) {
  require_same_shape(a, b, "iou");
  std::size_t inter = 0;
  std::size_t uni = 0;
  const auto& ab = a.bits();
  const auto& bb = b.bits();
  for (std::size_t i = 0; i < ab.size(); ++i) {
    inter += ab[i] & bb[i];
    uni += ab[i] | bb[i];
  }
  if (uni == 0) return kEmptyIou;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double mae(const SoftMap& pred, const BinaryMask& gt) {
  require_same_shape(pred, gt, "mae");
  double sum = 0.0;
  double comp = 0.0;  // Neumaier
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double term = std::abs(pred[i] - (gt.at(i) ? 1.0 : 0.0));
    const double t = sum + term;
    comp += std::abs(sum) >= std::abs(term) ? (sum - t) + term : (term - t) + sum;
    sum = t;
  }
  return (sum + comp) / static_cast<double>(pred.size());
}

inline double foreground_fraction(const BinaryMask& m) {
  return static_cast<double>(m.count()) / static_cast<double>(m.size());
}

// ---------------------------------------------------------------------------
// Binary PGM (P5): "P5\n<w> <h>\n255\n" followed by raw rows.

namespace detail {

inline void write_p5(const std::filesystem::path& path, int w, int h,
                     const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

struct P5Data {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bytes;
};

inline P5Data read_p5(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < data.size()) {
      if (data[pos] == '#') {
        while (pos < data.size() && data[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(data[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_ws();
    long v = 0;
    std::size_t start = pos;
    while (pos < data.size() && std::isdigit(static_cast<unsigned char>(data[pos])) && pos - start < 9)
      v = v * 10 + (data[pos++] - '0');
    if (pos == start) throw IoError("malformed PGM header: " + path.string());
    return v;
  };
  if (data.size() < 2 || data[0] != 'P' || data[1] != '5') throw IoError("not a P5 PGM: " + path.string());
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w < 1 || h < 1 || maxval != 255) throw IoError("unsupported PGM header: " + path.string());
  if (pos >= data.size() || !std::isspace(static_cast<unsigned char>(data[pos])))
    throw IoError("malformed PGM header: " + path.string());
  ++pos;
  const auto n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (data.size() - pos != n) throw IoError("PGM payload size mismatch: " + path.string());
  P5Data out;
  out.width = static_cast<int>(w);
  out.height = static_cast<int>(h);
  out.bytes.assign(data.begin() + static_cast<std::ptrdiff_t>(pos), data.end());
  return out;
}

}  // namespace detail

inline void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  detail::write_p5(path, img.width(), img.height(), img.pixels());
}

inline void write_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.at(i) ? 255 : 0;
  detail::write_p5(path, mask.width(), mask.height(), bytes);
}

inline GrayImage read_pgm_image(const std::filesystem::path& path) {
  auto d = detail::read_p5(path);
  return GrayImage(d.width, d.height, std::move(d.bytes));
}

// Mask files must hold only 0 and 255.
inline BinaryMask read_pgm_mask(const std::filesystem::path& path) {
  auto d = detail::read_p5(path);
  for (auto v : d.bytes)
    if (v != 0 && v != 255)
      throw IoError("mask value " + std::to_string(v) + " not in {0,255}: " + path.string());
  return BinaryMask(d.width, d.height, std::move(d.bytes));
}

}  // namespace segrl
