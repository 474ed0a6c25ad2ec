#pragma once

// Thresholding of score maps into predicted-OoD pixels and their grouping into
// 8-connected components with a 4-neighbourhood interior/boundary split.

#include <algorithm>
#include <deque>
#include <string>
#include <vector>

#include "metaseg/error.hpp"
#include "metaseg/raster.hpp"

namespace metaseg {

struct ThresholdConfig {
  double t = 0.7;

  static ThresholdConfig checked(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw DataError("threshold must lie in [0,1]");
    return ThresholdConfig{t};
  }

  /// a >= t, compared in single precision like the stored scores.
  bool admits(float score) const { return score >= static_cast<float>(t); }
};

struct BoundingBox {
  int row_min = 0;
  int row_max = 0;
  int col_min = 0;
  int col_max = 0;
  int height() const { return row_max - row_min + 1; }
  int width() const { return col_max - col_min + 1; }
};

/// One predicted OoD object. Pixel lists are in raster order.
struct ComponentRecord {
  int id = 0;
  std::vector<Pixel> pixels;
  std::vector<Pixel> boundary;
  std::vector<Pixel> interior;
  BoundingBox bbox;
  Dims image;
  bool is_false_positive = false;
  std::string source_sample;

  std::size_t size() const { return pixels.size(); }
};

/// { i | a_i >= t }, in raster order.
inline std::vector<Pixel> ood_pixel_set(const ScoreMap& score, ThresholdConfig cfg) {
  std::vector<Pixel> out;
  for (int r = 0; r < score.height(); ++r)
    for (int c = 0; c < score.width(); ++c)
      if (cfg.admits(score.at(r, c))) out.push_back({r, c});
  return out;
}

/// Partitions `pixels` into maximal 8-connected components. Ids follow the
/// raster order of each component's first pixel. Components smaller than
/// `min_size` are dropped (the default keeps everything).
inline std::vector<ComponentRecord> connected_components(const std::vector<Pixel>& pixels, Dims dims,
                                                         std::size_t min_size = 1) {
  if (dims.height < 1 || dims.width < 1) throw DataError("image dimensions must be positive");
  const auto idx = [&](int r, int c) { return static_cast<std::size_t>(r) * dims.width + c; };
  // 0 = not in set, 1 = unvisited member, 2 = visited
  std::vector<std::uint8_t> state(dims.area(), 0);
  for (const Pixel& p : pixels) {
    if (!dims.contains(p))
      throw DataError("pixel (" + std::to_string(p.row) + "," + std::to_string(p.col) + ") outside " +
                      to_string(dims));
    state[idx(p.row, p.col)] = 1;
  }
  const auto member = [&](int r, int c) {
    return r >= 0 && c >= 0 && r < dims.height && c < dims.width && state[idx(r, c)] != 0;
  };

  std::vector<ComponentRecord> out;
  std::deque<Pixel> queue;
  for (int r = 0; r < dims.height; ++r) {
    for (int c = 0; c < dims.width; ++c) {
      if (state[idx(r, c)] != 1) continue;
      ComponentRecord comp;
      comp.image = dims;
      state[idx(r, c)] = 2;
      queue.push_back({r, c});
      while (!queue.empty()) {
        const Pixel p = queue.front();
        queue.pop_front();
        comp.pixels.push_back(p);
        for (int dr = -1; dr <= 1; ++dr) {
          for (int dc = -1; dc <= 1; ++dc) {
            const int nr = p.row + dr, nc = p.col + dc;
            if ((dr == 0 && dc == 0) || !member(nr, nc) || state[idx(nr, nc)] != 1) continue;
            state[idx(nr, nc)] = 2;
            queue.push_back({nr, nc});
          }
        }
      }
      if (comp.pixels.size() < min_size) continue;
      std::sort(comp.pixels.begin(), comp.pixels.end());
      comp.bbox = {comp.pixels.front().row, comp.pixels.front().row, comp.pixels.front().col,
                   comp.pixels.front().col};
      for (const Pixel& p : comp.pixels) {
        comp.bbox.row_min = std::min(comp.bbox.row_min, p.row);
        comp.bbox.row_max = std::max(comp.bbox.row_max, p.row);
        comp.bbox.col_min = std::min(comp.bbox.col_min, p.col);
        comp.bbox.col_max = std::max(comp.bbox.col_max, p.col);
        // Every set pixel is part of exactly one component, so membership in
        // the global grid equals membership in this component.
        const bool on_boundary =
            !member(p.row - 1, p.col) || !member(p.row + 1, p.col) || !member(p.row, p.col - 1) ||
            !member(p.row, p.col + 1);
        (on_boundary ? comp.boundary : comp.interior).push_back(p);
      }
      comp.id = static_cast<int>(out.size());
      out.push_back(std::move(comp));
    }
  }
  return out;
}

inline std::vector<ComponentRecord> extract_components(const ScoreMap& score, ThresholdConfig cfg,
                                                       std::size_t min_size = 1) {
  return connected_components(ood_pixel_set(score, cfg), score.dims(), min_size);
}

/// |comp ∩ M_ood| / |comp ∪ M_ood|; ignore pixels count as non-OoD.
inline double component_iou(const ComponentRecord& comp, const LabelMask& mask) {
  if (comp.image != mask.dims())
    throw DataError("dimension mismatch: component image " + to_string(comp.image) + " vs mask " +
                    to_string(mask.dims()));
  std::size_t ood_total = 0;
  for (std::uint8_t v : mask.labels()) ood_total += (v == LabelMask::kOod);
  std::size_t inter = 0;
  for (const Pixel& p : comp.pixels) inter += mask.is_ood(p.row, p.col);
  const std::size_t uni = comp.pixels.size() + ood_total - inter;
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// A component is a false positive iff it does not touch any OoD pixel.
inline std::vector<ComponentRecord> label_components(std::vector<ComponentRecord> comps, const LabelMask& mask) {
  for (auto& comp : comps) {
    if (comp.image != mask.dims())
      throw DataError("dimension mismatch: component image " + to_string(comp.image) + " vs mask " +
                      to_string(mask.dims()));
    bool overlaps = false;
    for (const Pixel& p : comp.pixels) {
      if (mask.is_ood(p.row, p.col)) {
        overlaps = true;
        break;
      }
    }
    comp.is_false_positive = !overlaps;
  }
  return comps;
}

}  // namespace metaseg
