#pragma once

// Netpbm, landmark CSV and tensor file I/O.

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "liplab/error.hpp"
#include "liplab/geometry.hpp"

namespace liplab {

/// H x W x C grid, row-major with interleaved channels.
template <class T>
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<T> data;

  Image() = default;
  Image(int h, int w, int c, T fill = T{})
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {
    if (h < 0 || w < 0 || c <= 0) throw ShapeError("invalid image dimensions");
  }

  std::size_t index(int y, int x, int c = 0) const {
    return (static_cast<std::size_t>(y) * width + x) * channels + c;
  }
  T& at(int y, int x, int c = 0) { return data[index(y, x, c)]; }
  const T& at(int y, int x, int c = 0) const { return data[index(y, x, c)]; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }

  friend bool operator==(const Image&, const Image&) = default;
};

using ByteImage = Image<std::uint8_t>;
using FloatImage = Image<float>;

/// H x W grid of {0,1}.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  std::uint8_t& at(int y, int x) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;
};

namespace detail {

inline std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for '" + path + "'");
}

inline bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; }

class HeaderCursor {
 public:
  explicit HeaderCursor(const std::vector<char>& bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (is_space(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  unsigned long next_uint(const char* field) {
    skip_space_and_comments();
    const std::size_t start = token_ = pos_;
    unsigned long value = 0;
    while (pos_ < bytes_.size() && bytes_[pos_] >= '0' && bytes_[pos_] <= '9') {
      value = value * 10 + static_cast<unsigned long>(bytes_[pos_] - '0');
      if (value > 1u << 30) throw FormatError(std::string("header ") + field + " too large", start);
      ++pos_;
    }
    if (pos_ == start) throw FormatError(std::string("malformed header: expected ") + field, start);
    return value;
  }

  std::size_t pos() const { return pos_; }
  /// Offset where the most recent number began.
  std::size_t token() const { return token_; }
  void advance() { ++pos_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t pos_ = 0;
  std::size_t token_ = 0;
};

inline ByteImage read_netpbm(const std::string& path, char kind, int channels) {
  const std::vector<char> bytes = read_file(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != kind) {
    throw FormatError(std::string("malformed header: expected magic P") + kind, 0);
  }
  HeaderCursor cur(bytes);
  cur.advance();
  cur.advance();
  if (cur.pos() >= bytes.size() || !is_space(bytes[cur.pos()])) throw FormatError("malformed header: magic", 2);
  const auto width = cur.next_uint("width");
  const auto height = cur.next_uint("height");
  const auto maxval = cur.next_uint("maxval");
  const std::size_t maxval_at = cur.token();
  if (maxval != 255) throw FormatError("unsupported maxval " + std::to_string(maxval), maxval_at);
  if (cur.pos() >= bytes.size() || !is_space(bytes[cur.pos()])) {
    throw FormatError("malformed header: missing separator after maxval", cur.pos());
  }
  cur.advance();
  if (width == 0 || height == 0) throw FormatError("malformed header: zero dimension", maxval_at);
  ByteImage img(static_cast<int>(height), static_cast<int>(width), channels);
  const std::size_t need = img.data.size();
  const std::size_t have = bytes.size() - cur.pos();
  if (have < need) {
    throw FormatError("truncated payload: need " + std::to_string(need) + " bytes, have " + std::to_string(have),
                      bytes.size());
  }
  std::memcpy(img.data.data(), bytes.data() + cur.pos(), need);
  return img;
}

inline void write_netpbm(const std::string& path, const ByteImage& img, char kind) {
  std::string out = std::string("P") + kind + "\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                    "\n255\n";
  out.append(reinterpret_cast<const char*>(img.data.data()), img.data.size());
  write_file(path, out);
}

inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), end);
}

inline double parse_double(std::string_view s, const std::string& context) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty()) {
    throw DataError("non-numeric value '" + std::string(s) + "' in " + context);
  }
  return v;
}

inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  for (auto& f : out) {
    while (!f.empty() && is_space(f.back())) f.pop_back();
    f.erase(f.begin(), std::find_if(f.begin(), f.end(), [](char c) { return !is_space(c); }));
  }
  return out;
}

/// Non-empty, non-comment lines of a text file, with their 1-based line numbers.
inline std::vector<std::pair<int, std::string>> content_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<std::pair<int, std::string>> lines;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string::npos || line[first] == '#') continue;
    lines.emplace_back(number, line);
  }
  return lines;
}

template <class U>
void put_le(std::string& out, U value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  out.append(reinterpret_cast<const char*>(&value), sizeof(U));
}

}  // namespace detail

inline ByteImage read_pgm(const std::string& path) { return detail::read_netpbm(path, '5', 1); }
inline ByteImage read_ppm(const std::string& path) { return detail::read_netpbm(path, '6', 3); }

inline void write_pgm(const std::string& path, const ByteImage& img) {
  if (img.channels != 1) throw ShapeError("write_pgm needs a 1-channel image");
  detail::write_netpbm(path, img, '5');
}

inline void write_ppm(const std::string& path, const ByteImage& img) {
  if (img.channels != 3) throw ShapeError("write_ppm needs a 3-channel image");
  detail::write_netpbm(path, img, '6');
}

/// Foreground is any byte >= 128.
inline BinaryMask mask_from_image(const ByteImage& img) {
  if (img.channels != 1) throw ShapeError("mask image must have 1 channel");
  BinaryMask m(img.height, img.width);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = img.data[i] >= 128 ? 1 : 0;
  return m;
}

inline ByteImage mask_to_image(const BinaryMask& m) {
  ByteImage img(m.height, m.width, 1);
  for (std::size_t i = 0; i < m.bits.size(); ++i) img.data[i] = m.bits[i] ? 255 : 0;
  return img;
}

inline BinaryMask read_mask(const std::string& path) { return mask_from_image(read_pgm(path)); }
inline void write_mask(const std::string& path, const BinaryMask& m) { write_pgm(path, mask_to_image(m)); }

inline FloatImage to_float(const ByteImage& img) {
  FloatImage out(img.height, img.width, img.channels);
  std::transform(img.data.begin(), img.data.end(), out.data.begin(), [](std::uint8_t v) { return float(v); });
  return out;
}

/// Rounds and clamps to [0,255].
inline ByteImage to_bytes(const FloatImage& img) {
  ByteImage out(img.height, img.width, img.channels);
  std::transform(img.data.begin(), img.data.end(), out.data.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  });
  return out;
}

/// BT.601 luma: 0.299 R + 0.587 G + 0.114 B.
template <class T>
FloatImage to_grayscale(const Image<T>& rgb) {
  if (rgb.channels != 3) throw ShapeError("to_grayscale needs 3 channels, got " + std::to_string(rgb.channels));
  FloatImage gray(rgb.height, rgb.width, 1);
  for (std::size_t p = 0; p < gray.data.size(); ++p) {
    const double r = rgb.data[3 * p], g = rgb.data[3 * p + 1], b = rgb.data[3 * p + 2];
    gray.data[p] = static_cast<float>(0.299 * r + 0.587 * g + 0.114 * b);
  }
  return gray;
}

/// Ordered, uniquely named landmark points.
struct LandmarkSet {
  std::vector<std::string> names;
  std::vector<Point2> points;

  std::size_t size() const { return points.size(); }
  void push_back(std::string name, Point2 p) {
    names.push_back(std::move(name));
    points.push_back(p);
  }
};

inline LandmarkSet read_landmarks(const std::string& path) {
  LandmarkSet set;
  std::set<std::string> seen;
  for (const auto& [number, line] : detail::content_lines(path)) {
    const auto fields = detail::split_csv(line);
    const std::string where = path + ":" + std::to_string(number);
    if (fields.size() != 3) throw DataError("expected name,x,y at " + where);
    if (fields[0].empty()) throw DataError("empty landmark name at " + where);
    if (!seen.insert(fields[0]).second) throw DataError("duplicate landmark name '" + fields[0] + "' at " + where);
    set.push_back(fields[0], {detail::parse_double(fields[1], where), detail::parse_double(fields[2], where)});
  }
  if (set.size() == 0) throw DataError("no landmarks in '" + path + "'");
  return set;
}

inline void write_landmarks(const std::string& path, const LandmarkSet& set) {
  std::string out;
  for (std::size_t i = 0; i < set.size(); ++i) {
    out += set.names[i] + "," + detail::format_double(set.points[i].x) + "," +
           detail::format_double(set.points[i].y) + "\n";
  }
  detail::write_file(path, out);
}

/// Dense f32 tensor of arbitrary rank, as stored in tensor files.
struct FloatTensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
  friend bool operator==(const FloatTensor&, const FloatTensor&) = default;
};

inline constexpr std::string_view kTensorMagic = "LIPLAB01";

inline std::string encode_tensor(const FloatTensor& t) {
  if (t.element_count() != t.data.size()) throw ShapeError("tensor dims do not match data length");
  std::string out(kTensorMagic);
  detail::put_le(out, static_cast<std::uint32_t>(t.dims.size()));
  for (auto d : t.dims) detail::put_le(out, d);
  out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  return out;
}

inline FloatTensor decode_tensor(std::string_view bytes) {
  if (bytes.size() < 12 || bytes.substr(0, 8) != kTensorMagic) throw FormatError("bad magic", 0);
  auto u32_at = [&](std::size_t off) {
    if (off + 4 > bytes.size()) throw FormatError("truncated header", off);
    std::uint32_t v;
    std::memcpy(&v, bytes.data() + off, 4);
    return v;
  };
  FloatTensor t;
  const std::uint32_t ndim = u32_at(8);
  if (ndim > 16) throw FormatError("implausible rank " + std::to_string(ndim), 8);
  std::size_t off = 12;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i, off += 4) {
    t.dims.push_back(u32_at(off));
    count *= t.dims.back();
  }
  const std::size_t payload = bytes.size() - off;
  if (payload != count * sizeof(float)) {
    throw FormatError("payload mismatch: dims need " + std::to_string(count * sizeof(float)) + " bytes, file has " +
                          std::to_string(payload),
                      off);
  }
  t.data.resize(count);
  std::memcpy(t.data.data(), bytes.data() + off, payload);
  return t;
}

inline FloatTensor read_tensor(const std::string& path) {
  const auto bytes = detail::read_file(path);
  return decode_tensor(std::string_view(bytes.data(), bytes.size()));
}

inline void write_tensor(const std::string& path, const FloatTensor& t) { detail::write_file(path, encode_tensor(t)); }

}  // namespace liplab
