#pragma once

// Deterministic synthetic scenes: low-entropy background regions with
// planted high-entropy blobs, some backed by ground-truth OoD labels (true
// anomalies) and some not (false blobs). Pixel distributions come from the
// family p = w/C + (1 - w) * onehot(k), with w solved by bisection to hit a
// target normalized entropy.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "metaseg/error.hpp"
#include "metaseg/random.hpp"
#include "metaseg/raster.hpp"
#include "metaseg/segments.hpp"

namespace metaseg {

struct SceneSpec {
  int height = 64;
  int width = 64;
  int num_classes = 19;
  int blob_count_min = 1;  // true anomalies per scene
  int blob_count_max = 2;
  int blob_size_min = 12;  // pixels
  int blob_size_max = 160;
  double anomaly_entropy = 0.95;
  double background_entropy = 0.3;
  double false_blob_rate = 1.5;  // expected false blobs per scene (Poisson)
  bool nonlinear_coupling = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (height < 1 || width < 1) throw DataError("scene must be at least 1x1");
    if (num_classes < 2 || num_classes >= LabelMask::kOod) throw DataError("num_classes must be in [2, 253]");
    if (blob_count_min < 0 || blob_count_max < blob_count_min) throw DataError("empty blob count range");
    if (blob_size_min < 1 || blob_size_max < blob_size_min) throw DataError("empty blob size range");
    if (blob_size_max > height * width) throw DataError("blob larger than image");
    if (!(anomaly_entropy > 0.0 && anomaly_entropy <= 1.0)) throw DataError("anomaly_entropy must be in (0,1]");
    if (!(background_entropy >= 0.0 && background_entropy < 1.0))
      throw DataError("background_entropy must be in [0,1)");
    if (!(background_entropy < anomaly_entropy)) throw DataError("background_entropy must be below anomaly_entropy");
    if (!(false_blob_rate >= 0.0)) throw DataError("false_blob_rate must be non-negative");
  }
};

/// Normalized entropy of the mixture w * uniform + (1 - w) * onehot over C classes.
inline double mixture_normalized_entropy(double w, int num_classes) {
  const double c = num_classes;
  const double top = (1.0 - w) + w / c;
  const double rest = w / c;
  double h = 0;
  if (top > 0) h -= top * std::log(top);
  if (rest > 0) h -= (c - 1.0) * rest * std::log(rest);
  return h / std::log(c);
}

/// Mixing weight whose mixture has the target normalized entropy (bisection, 1e-9).
inline double solve_mixture_weight(double target, int num_classes) {
  if (target <= 0.0) return 0.0;
  if (target >= 1.0) return 1.0;
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-9) {
    const double mid = 0.5 * (lo + hi);
    (mixture_normalized_entropy(mid, num_classes) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

namespace detail {

struct Blob {
  std::vector<Pixel> pixels;
  BoundingBox box;
};

inline Blob make_blob(Rng& rng, int size, Dims dims) {
  Blob blob;
  const bool disc = rng.bernoulli(0.5);
  if (disc) {
    const double radius = std::sqrt(static_cast<double>(size) / std::numbers::pi);
    const int r = std::max(0, static_cast<int>(std::ceil(radius)));
    const int span_r = std::min(dims.height, 2 * r + 1), span_c = std::min(dims.width, 2 * r + 1);
    const int top = static_cast<int>(rng.between(0, dims.height - span_r));
    const int left = static_cast<int>(rng.between(0, dims.width - span_c));
    const double cr = top + (span_r - 1) / 2.0, cc = left + (span_c - 1) / 2.0;
    for (int y = top; y < top + span_r; ++y)
      for (int x = left; x < left + span_c; ++x)
        if ((y - cr) * (y - cr) + (x - cc) * (x - cc) <= radius * radius + 0.25) blob.pixels.push_back({y, x});
    if (blob.pixels.empty()) blob.pixels.push_back({static_cast<int>(cr), static_cast<int>(cc)});
  } else {
    const double aspect = rng.uniform(0.6, 1.6);
    int h = std::max(1, static_cast<int>(std::lround(std::sqrt(size * aspect))));
    int w = std::max(1, static_cast<int>(std::lround(static_cast<double>(size) / h)));
    h = std::min(h, dims.height);
    w = std::min(w, dims.width);
    const int top = static_cast<int>(rng.between(0, dims.height - h));
    const int left = static_cast<int>(rng.between(0, dims.width - w));
    for (int y = top; y < top + h; ++y)
      for (int x = left; x < left + w; ++x) blob.pixels.push_back({y, x});
  }
  blob.box = {blob.pixels.front().row, blob.pixels.front().row, blob.pixels.front().col, blob.pixels.front().col};
  for (const Pixel& p : blob.pixels) {
    blob.box.row_min = std::min(blob.box.row_min, p.row);
    blob.box.row_max = std::max(blob.box.row_max, p.row);
    blob.box.col_min = std::min(blob.box.col_min, p.col);
    blob.box.col_max = std::max(blob.box.col_max, p.col);
  }
  return blob;
}

inline bool boxes_clear(const BoundingBox& a, const BoundingBox& b, int margin) {
  return a.row_max + margin < b.row_min || b.row_max + margin < a.row_min || a.col_max + margin < b.col_min ||
         b.col_max + margin < a.col_min;
}

}  // namespace detail

/// One scene from its own seed. See generate() for the content.
inline Sample generate_scene(const SceneSpec& spec, std::uint64_t scene_seed, std::string id) {
  spec.validate();
  Rng rng(scene_seed);
  const Dims dims{spec.height, spec.width};
  const int C = spec.num_classes;

  // Background: vertical class bands.
  std::vector<std::uint8_t> labels(dims.area());
  const int bands = static_cast<int>(rng.between(1, std::min(4, spec.width)));
  std::vector<int> band_class(static_cast<std::size_t>(bands));
  for (auto& k : band_class) k = static_cast<int>(rng.below(static_cast<std::uint64_t>(C)));
  for (int r = 0; r < spec.height; ++r)
    for (int c = 0; c < spec.width; ++c)
      labels[static_cast<std::size_t>(r) * spec.width + c] =
          static_cast<std::uint8_t>(band_class[static_cast<std::size_t>(c * bands / spec.width)]);

  // Per-pixel (target normalized entropy, peak class).
  std::vector<double> target(dims.area());
  std::vector<int> peak(dims.area());
  for (std::size_t i = 0; i < dims.area(); ++i) {
    target[i] = spec.background_entropy * rng.uniform(0.5, 1.0);
    peak[i] = labels[i];
  }

  const int true_count = static_cast<int>(rng.between(spec.blob_count_min, spec.blob_count_max));
  const int false_count = rng.poisson(spec.false_blob_rate);
  std::vector<std::uint8_t> is_false(static_cast<std::size_t>(true_count), 0);
  is_false.resize(is_false.size() + static_cast<std::size_t>(false_count), 1);
  rng.shuffle(std::span<std::uint8_t>(is_false));
  std::vector<BoundingBox> placed;

  const double headroom = 1.0 - spec.anomaly_entropy;
  const double spread = spec.anomaly_entropy - spec.background_entropy;
  const int size_mid = spec.blob_size_min + (spec.blob_size_max - spec.blob_size_min) / 2;

  for (const std::uint8_t fake_flag : is_false) {
    const bool fake = fake_flag != 0;
    // Latent bits: `large` picks the size half, `ring` the entropy profile.
    // With coupling, ring = large XOR fake, so the label is the XOR of two
    // observable properties.
    const bool large = rng.bernoulli(0.5);
    const bool ring = spec.nonlinear_coupling ? (large != fake) : false;
    int size = 0;
    if (spec.nonlinear_coupling) {
      size = large ? static_cast<int>(rng.between(std::min(size_mid + 1, spec.blob_size_max), spec.blob_size_max))
                   : static_cast<int>(rng.between(spec.blob_size_min, size_mid));
    } else {
      size = static_cast<int>(rng.between(spec.blob_size_min, spec.blob_size_max));
    }

    detail::Blob blob;
    bool ok = false;
    for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
      blob = detail::make_blob(rng, size, dims);
      ok = std::all_of(placed.begin(), placed.end(),
                       [&](const BoundingBox& b) { return detail::boxes_clear(blob.box, b, 2); });
    }
    if (!ok) continue;
    placed.push_back(blob.box);

    double level = spec.anomaly_entropy;
    if (fake && !spec.nonlinear_coupling) level -= spread * 0.15 * rng.uniform(0.5, 1.5);
    const int blob_class = static_cast<int>(rng.below(static_cast<std::uint64_t>(C)));
    std::vector<Pixel> sorted = blob.pixels;
    std::sort(sorted.begin(), sorted.end());
    const auto inside = [&](int r, int c) { return std::binary_search(sorted.begin(), sorted.end(), Pixel{r, c}); };
    for (const Pixel& p : blob.pixels) {
      const std::size_t i = static_cast<std::size_t>(p.row) * spec.width + p.col;
      const bool edge = !inside(p.row - 1, p.col) || !inside(p.row + 1, p.col) || !inside(p.row, p.col - 1) ||
                        !inside(p.row, p.col + 1);
      double h = level - 0.8 * headroom * rng.uniform();
      if (ring && !edge) h = level - 0.15 * spread - 0.5 * headroom * rng.uniform();
      target[i] = std::clamp(h, 0.0, 1.0);
      peak[i] = blob_class;
      if (!fake) labels[i] = LabelMask::kOod;
    }
  }

  std::vector<double> probs(dims.area() * static_cast<std::size_t>(C));
  for (std::size_t i = 0; i < dims.area(); ++i) {
    const double w = solve_mixture_weight(target[i], C);
    double* px = probs.data() + i * static_cast<std::size_t>(C);
    for (int k = 0; k < C; ++k) px[k] = w / C;
    px[peak[i]] += 1.0 - w;
  }
  return Sample{std::move(id), ProbabilityMap(spec.height, spec.width, C, std::move(probs)),
                LabelMask(spec.height, spec.width, std::move(labels))};
}

inline std::string scene_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04zu", index);
  return buf;
}

/// `count` scenes; scene i uses seed spec.seed + i.
inline SampleSet generate(const SceneSpec& spec, std::size_t count) {
  spec.validate();
  SampleSet out;
  for (std::size_t i = 0; i < count; ++i) out.add(generate_scene(spec, spec.seed + i, scene_id(i)));
  return out;
}

/// Writes <dir>/<id>.rast and <dir>/<id>.pgm per sample.
inline void save_samples(const SampleSet& samples, const std::filesystem::path& dir, const MaskLabels& labels = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "'");
  for (const auto& s : samples) {
    save_probability_map(s.probs, dir / (s.id + ".rast"));
    save_mask(s.mask, dir / (s.id + ".pgm"), labels);
  }
}

/// Ids of every <id>.rast in `dir`, sorted.
inline std::vector<std::string> list_ids(const std::filesystem::path& dir, const std::string& extension = ".rast") {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: '" + dir.string() + "'");
  std::vector<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == extension) ids.push_back(entry.path().stem().string());
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline SampleSet load_samples(const std::filesystem::path& dir, const MaskLabels& labels = {}) {
  SampleSet out;
  for (const auto& id : list_ids(dir)) {
    ProbabilityMap probs = load_probability_map(dir / (id + ".rast"));
    MaskLabels l = labels;
    l.num_classes = probs.num_classes();
    LabelMask mask = load_mask(dir / (id + ".pgm"), l, probs.dims());
    out.add(Sample{id, std::move(probs), std::move(mask)});
  }
  return out;
}

}  // namespace metaseg
