#pragma once

// Raster types (class-probability maps, label masks, anomaly score maps) and
// their file formats.
//
// RAST layout: bytes 0-7 "RASTv001", then little-endian u32 H, W, C, then
// H*W*C little-endian f32 values, row-major with the class index varying
// fastest. Masks are binary PGM (P5) with maxval 255.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metaseg/error.hpp"
#include "metaseg/io.hpp"

namespace metaseg {

struct Pixel {
  int row = 0;
  int col = 0;
  auto operator<=>(const Pixel&) const = default;
};

struct Dims {
  int height = 0;
  int width = 0;
  bool operator==(const Dims&) const = default;
  std::size_t area() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
  bool contains(Pixel p) const { return p.row >= 0 && p.col >= 0 && p.row < height && p.col < width; }
};

inline std::string to_string(Dims d) { return std::to_string(d.height) + "x" + std::to_string(d.width); }

inline constexpr double kProbSumTolerance = 1e-5;

/// Per-pixel class probabilities, H x W x C, row-major with class fastest.
/// Every pixel is a distribution: entries in [0,1] summing to 1.
class ProbabilityMap {
 public:
  ProbabilityMap() = default;

  /// Validates `values` and renormalizes each pixel whose sum is within
  /// kProbSumTolerance of 1. Throws DataError otherwise.
  ProbabilityMap(int height, int width, int num_classes, std::vector<double> values)
      : dims_{height, width}, classes_(num_classes), values_(std::move(values)) {
    if (height < 1 || width < 1) throw DataError("probability map must be at least 1x1");
    if (num_classes < 2) throw DataError("probability map needs at least 2 classes");
    if (values_.size() != dims_.area() * static_cast<std::size_t>(classes_))
      throw DataError("probability map payload size does not match dimensions");
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        double* px = values_.data() + offset(r, c);
        double sum = 0;
        for (int k = 0; k < classes_; ++k) {
          const double v = px[k];
          if (!std::isfinite(v))
            throw DataError("non-finite value at (" + std::to_string(r) + "," + std::to_string(c) + "," +
                            std::to_string(k) + ")");
          if (v < 0.0 || v > 1.0 + kProbSumTolerance)
            throw DataError("probability out of [0,1] at (" + std::to_string(r) + "," + std::to_string(c) +
                            "," + std::to_string(k) + ")");
          sum += v;
        }
        if (std::abs(sum - 1.0) > kProbSumTolerance)
          throw DataError("probabilities at (" + std::to_string(r) + "," + std::to_string(c) + ") sum to " +
                          io::format_real(sum));
        if (sum != 1.0)
          for (int k = 0; k < classes_; ++k) px[k] = std::min(1.0, px[k] / sum);
      }
    }
  }

  int height() const { return dims_.height; }
  int width() const { return dims_.width; }
  int num_classes() const { return classes_; }
  Dims dims() const { return dims_; }

  double at(int row, int col, int cls) const { return values_[offset(row, col) + static_cast<std::size_t>(cls)]; }

  std::span<const double> pixel(int row, int col) const {
    return {values_.data() + offset(row, col), static_cast<std::size_t>(classes_)};
  }

  std::span<const double> values() const { return values_; }

 private:
  std::size_t offset(int row, int col) const {
    return (static_cast<std::size_t>(row) * static_cast<std::size_t>(dims_.width) + static_cast<std::size_t>(col)) *
           static_cast<std::size_t>(classes_);
  }

  Dims dims_{};
  int classes_ = 0;
  std::vector<double> values_;
};

/// Ground-truth labels. Class indices are dense from 0; OoD and ignore pixels
/// use the reserved internal codes below regardless of their on-disk values.
class LabelMask {
 public:
  static constexpr std::uint8_t kOod = 254;
  static constexpr std::uint8_t kIgnore = 255;

  LabelMask() = default;
  LabelMask(int height, int width, std::vector<std::uint8_t> labels)
      : dims_{height, width}, labels_(std::move(labels)) {
    if (height < 1 || width < 1) throw DataError("mask must be at least 1x1");
    if (labels_.size() != dims_.area()) throw DataError("mask payload size does not match dimensions");
  }
  LabelMask(int height, int width, std::uint8_t fill)
      : LabelMask(height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, fill)) {}

  int height() const { return dims_.height; }
  int width() const { return dims_.width; }
  Dims dims() const { return dims_; }

  std::uint8_t at(int row, int col) const { return labels_[index(row, col)]; }
  void set(int row, int col, std::uint8_t label) { labels_[index(row, col)] = label; }

  bool is_ood(int row, int col) const { return at(row, col) == kOod; }
  bool is_ignore(int row, int col) const { return at(row, col) == kIgnore; }
  bool is_class(int row, int col) const { return at(row, col) < kOod; }

  std::span<const std::uint8_t> labels() const { return labels_; }

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(dims_.width) + static_cast<std::size_t>(col);
  }

  Dims dims_{};
  std::vector<std::uint8_t> labels_;
};

/// Anomaly scores in [0,1], stored as f32 so the RAST round trip is exact.
class ScoreMap {
 public:
  ScoreMap() = default;
  ScoreMap(int height, int width, std::span<const double> scores) : dims_{height, width} {
    if (height < 1 || width < 1) throw DataError("score map must be at least 1x1");
    if (scores.size() != dims_.area()) throw DataError("score payload size does not match dimensions");
    scores_.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (!std::isfinite(scores[i])) throw DataError("non-finite score at index " + std::to_string(i));
      scores_.push_back(static_cast<float>(std::clamp(scores[i], 0.0, 1.0)));
    }
  }
  ScoreMap(int height, int width, std::vector<float> scores) : dims_{height, width}, scores_(std::move(scores)) {
    if (height < 1 || width < 1) throw DataError("score map must be at least 1x1");
    if (scores_.size() != dims_.area()) throw DataError("score payload size does not match dimensions");
    for (std::size_t i = 0; i < scores_.size(); ++i) {
      if (!std::isfinite(scores_[i])) throw DataError("non-finite score at index " + std::to_string(i));
      scores_[i] = std::clamp(scores_[i], 0.0f, 1.0f);
    }
  }

  int height() const { return dims_.height; }
  int width() const { return dims_.width; }
  Dims dims() const { return dims_; }

  double at(int row, int col) const { return scores_[index(row, col)]; }
  void set(int row, int col, double v) { scores_[index(row, col)] = static_cast<float>(std::clamp(v, 0.0, 1.0)); }

  std::span<const float> scores() const { return scores_; }

  bool operator==(const ScoreMap&) const = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(dims_.width) + static_cast<std::size_t>(col);
  }

  Dims dims_{};
  std::vector<float> scores_;
};

struct Sample {
  std::string id;
  ProbabilityMap probs;
  LabelMask mask;
};

/// Ordered collection of (probabilities, mask) pairs with unique ids.
class SampleSet {
 public:
  void add(Sample sample) {
    if (sample.probs.dims() != sample.mask.dims())
      throw DataError("sample '" + sample.id + "': probability map " + to_string(sample.probs.dims()) +
                      " does not match mask " + to_string(sample.mask.dims()));
    for (const auto& e : entries_)
      if (e.id == sample.id) throw DataError("duplicate sample id '" + sample.id + "'");
    entries_.push_back(std::move(sample));
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const Sample& operator[](std::size_t i) const { return entries_[i]; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<Sample> entries_;
};

// ---------------------------------------------------------------------------
// RAST

inline constexpr std::string_view kRastMagic = "RASTv001";
inline constexpr std::size_t kRastHeaderBytes = 20;

struct RastBlock {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  std::vector<float> values;
};

inline std::string encode_rast(const RastBlock& block) {
  std::string out;
  out.reserve(kRastHeaderBytes + block.values.size() * 4);
  out.append(kRastMagic);
  io::put_u32_le(out, block.height);
  io::put_u32_le(out, block.width);
  io::put_u32_le(out, block.channels);
  for (float v : block.values) io::put_f32_le(out, v);
  return out;
}

/// Parses a RAST byte string. `consumed`, when given, receives the number of
/// bytes used; otherwise trailing bytes are an error.
inline RastBlock decode_rast(std::string_view bytes, std::size_t* consumed = nullptr) {
  if (bytes.size() < kRastHeaderBytes || bytes.substr(0, kRastMagic.size()) != kRastMagic)
    throw DataError("malformed RAST header");
  RastBlock block;
  block.height = io::get_u32_le(bytes, 8);
  block.width = io::get_u32_le(bytes, 12);
  block.channels = io::get_u32_le(bytes, 16);
  const std::uint64_t plane = static_cast<std::uint64_t>(block.height) * block.width;
  const std::uint64_t available = (bytes.size() - kRastHeaderBytes) / 4;
  if ((block.channels != 0 && plane > available / block.channels) ||
      plane * block.channels > static_cast<std::uint64_t>(std::numeric_limits<std::int32_t>::max()))
    throw DataError("RAST dimension overflow: header declares more values than the payload holds");
  const auto n = static_cast<std::size_t>(plane * block.channels);
  if (consumed == nullptr && bytes.size() != kRastHeaderBytes + n * 4)
    throw DataError("RAST payload size does not match header");
  if (consumed != nullptr) *consumed = kRastHeaderBytes + n * 4;
  block.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) block.values[i] = io::get_f32_le(bytes, kRastHeaderBytes + 4 * i);
  return block;
}

inline ProbabilityMap probability_map_from_rast(const RastBlock& block) {
  if (block.height == 0 || block.width == 0) throw DataError("malformed RAST header: zero dimension");
  if (block.height > static_cast<std::uint32_t>(std::numeric_limits<int>::max()) ||
      block.width > static_cast<std::uint32_t>(std::numeric_limits<int>::max()))
    throw DataError("RAST dimension overflow");
  const int h = static_cast<int>(block.height), w = static_cast<int>(block.width),
            c = static_cast<int>(block.channels);
  for (std::size_t i = 0; i < block.values.size(); ++i) {
    if (!std::isfinite(block.values[i])) {
      const std::size_t k = i % block.channels, px = i / block.channels;
      throw DataError("non-finite value at (" + std::to_string(px / block.width) + "," +
                      std::to_string(px % block.width) + "," + std::to_string(k) + ")");
    }
  }
  return ProbabilityMap(h, w, c, std::vector<double>(block.values.begin(), block.values.end()));
}

inline ProbabilityMap load_probability_map(const std::filesystem::path& path) {
  return probability_map_from_rast(decode_rast(io::read_file(path)));
}

inline void save_probability_map(const ProbabilityMap& map, const std::filesystem::path& path) {
  RastBlock block{static_cast<std::uint32_t>(map.height()), static_cast<std::uint32_t>(map.width()),
                  static_cast<std::uint32_t>(map.num_classes()), {}};
  block.values.assign(map.values().begin(), map.values().end());
  io::write_file_atomic(path, encode_rast(block));
}

inline std::string encode_score_map(const ScoreMap& map) {
  RastBlock block{static_cast<std::uint32_t>(map.height()), static_cast<std::uint32_t>(map.width()), 1, {}};
  block.values.assign(map.scores().begin(), map.scores().end());
  return encode_rast(block);
}

inline ScoreMap decode_score_map(std::string_view bytes) {
  RastBlock block = decode_rast(bytes);
  if (block.channels != 1) throw DataError("score map RAST must have C=1");
  if (block.height == 0 || block.width == 0) throw DataError("malformed RAST header: zero dimension");
  return ScoreMap(static_cast<int>(block.height), static_cast<int>(block.width), std::move(block.values));
}

inline void save_score_map(const ScoreMap& map, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_score_map(map));
}

inline ScoreMap load_score_map(const std::filesystem::path& path) { return decode_score_map(io::read_file(path)); }

// ---------------------------------------------------------------------------
// PGM masks

struct MaskLabels {
  int num_classes = 19;
  int ood_label = 254;
  int ignore_label = 255;
};

inline LabelMask decode_mask(std::string_view bytes, const MaskLabels& labels,
                             std::optional<Dims> expected = std::nullopt) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> long {
    skip_space();
    const std::size_t start = pos;
    long v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1L << 30)) throw DataError("malformed PGM header: value too large");
      ++pos;
    }
    if (pos == start) throw DataError("malformed PGM header");
    return v;
  };
  if (bytes.size() < 2 || bytes.substr(0, 2) != "P5") throw DataError("not a binary PGM (P5) file");
  pos = 2;
  const long width = read_uint();
  const long height = read_uint();
  const long maxval = read_uint();
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw DataError("malformed PGM header");
  ++pos;
  if (width < 1 || height < 1) throw DataError("PGM has zero dimension");
  if (maxval < 1 || maxval > 255) throw DataError("PGM maxval must be at most 255");
  const std::size_t n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() - pos != n) throw DataError("PGM payload size does not match header");
  const Dims dims{static_cast<int>(height), static_cast<int>(width)};
  if (expected && *expected != dims)
    throw DataError("mask dimensions " + to_string(dims) + " do not match expected " + to_string(*expected));

  std::vector<std::uint8_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int v = static_cast<unsigned char>(bytes[pos + i]);
    if (v == labels.ood_label) {
      out[i] = LabelMask::kOod;
    } else if (v == labels.ignore_label) {
      out[i] = LabelMask::kIgnore;
    } else if (v < labels.num_classes && v < LabelMask::kOod) {
      out[i] = static_cast<std::uint8_t>(v);
    } else {
      throw DataError("unknown label " + std::to_string(v));
    }
  }
  return LabelMask(dims.height, dims.width, std::move(out));
}

inline LabelMask load_mask(const std::filesystem::path& path, const MaskLabels& labels = {},
                           std::optional<Dims> expected = std::nullopt) {
  return decode_mask(io::read_file(path), labels, expected);
}

inline std::string encode_mask(const LabelMask& mask, const MaskLabels& labels = {}) {
  std::string out = "P5\n" + std::to_string(mask.width()) + " " + std::to_string(mask.height()) + "\n255\n";
  out.reserve(out.size() + mask.labels().size());
  for (std::uint8_t v : mask.labels()) {
    int file_value = v;
    if (v == LabelMask::kOod) file_value = labels.ood_label;
    if (v == LabelMask::kIgnore) file_value = labels.ignore_label;
    out.push_back(static_cast<char>(file_value));
  }
  return out;
}

inline void save_mask(const LabelMask& mask, const std::filesystem::path& path, const MaskLabels& labels = {}) {
  io::write_file_atomic(path, encode_mask(mask, labels));
}

}  // namespace metaseg
