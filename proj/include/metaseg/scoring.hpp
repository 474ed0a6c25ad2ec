#pragma once

// Entropy-based anomaly scores and the entropy-maximization training losses.
// All logarithms are natural; probabilities are clamped at kLogEpsilon before
// every log.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "metaseg/error.hpp"
#include "metaseg/raster.hpp"

namespace metaseg {

inline constexpr double kLogEpsilon = 1e-12;

inline double safe_log(double p) { return std::log(std::max(p, kLogEpsilon)); }

/// Shannon entropy of one pixel's class distribution, in nats.
inline double pixel_entropy(std::span<const double> probs) {
  if (probs.size() < 2) throw DataError("pixel_entropy needs at least 2 classes");
  double h = 0;
  for (double p : probs) h -= p * safe_log(p);
  return h;
}

/// Normalized entropy E / ln C, clamped to [0,1].
inline double normalized_entropy(std::span<const double> probs) {
  return std::clamp(pixel_entropy(probs) / std::log(static_cast<double>(probs.size())), 0.0, 1.0);
}

inline ScoreMap anomaly_score_map(const ProbabilityMap& pmap) {
  std::vector<double> scores;
  scores.reserve(pmap.dims().area());
  for (int r = 0; r < pmap.height(); ++r)
    for (int c = 0; c < pmap.width(); ++c) scores.push_back(normalized_entropy(pmap.pixel(r, c)));
  return ScoreMap(pmap.height(), pmap.width(), scores);
}

namespace detail {
inline void require_same_dims(const ProbabilityMap& pmap, const LabelMask& mask) {
  if (pmap.dims() != mask.dims())
    throw DataError("dimension mismatch: probability map " + to_string(pmap.dims()) + " vs mask " +
                    to_string(mask.dims()));
}
}  // namespace detail

/// Cross-entropy over class-labeled pixels. OoD and ignore pixels are skipped.
inline double loss_in(const ProbabilityMap& pmap, const LabelMask& mask) {
  detail::require_same_dims(pmap, mask);
  double loss = 0;
  for (int r = 0; r < pmap.height(); ++r) {
    for (int c = 0; c < pmap.width(); ++c) {
      if (!mask.is_class(r, c)) continue;
      const int cls = mask.at(r, c);
      if (cls >= pmap.num_classes())
        throw DataError("mask label " + std::to_string(cls) + " exceeds the probability map's class count");
      loss -= safe_log(pmap.at(r, c, cls));
    }
  }
  return loss;
}

/// Uniform-target cross-entropy over OoD pixels. Minimized (value |I_out|·ln C)
/// exactly when every OoD pixel is uniform.
inline double loss_out(const ProbabilityMap& pmap, const LabelMask& mask) {
  detail::require_same_dims(pmap, mask);
  const double inv_c = 1.0 / pmap.num_classes();
  double loss = 0;
  for (int r = 0; r < pmap.height(); ++r) {
    for (int c = 0; c < pmap.width(); ++c) {
      if (!mask.is_ood(r, c)) continue;
      double s = 0;
      for (double p : pmap.pixel(r, c)) s += safe_log(p);
      loss -= inv_c * s;
    }
  }
  return loss;
}

struct LossBreakdown {
  double l_in = 0;
  double l_out = 0;
  double combined = 0;
  double lambda = 0;
};

/// (1 - lambda) * mean l_in + lambda * mean l_out, with the expectations taken
/// per image over each batch.
inline LossBreakdown combined_objective(const SampleSet& in_batch, const SampleSet& out_batch, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DataError("lambda must lie in [0,1]");
  if (lambda < 1.0 && in_batch.empty()) throw DataError("empty in-distribution batch with nonzero weight");
  if (lambda > 0.0 && out_batch.empty()) throw DataError("empty OoD batch with nonzero weight");
  LossBreakdown out;
  out.lambda = lambda;
  for (const auto& s : in_batch) out.l_in += loss_in(s.probs, s.mask);
  if (!in_batch.empty()) out.l_in /= static_cast<double>(in_batch.size());
  for (const auto& s : out_batch) out.l_out += loss_out(s.probs, s.mask);
  if (!out_batch.empty()) out.l_out /= static_cast<double>(out_batch.size());
  out.combined = (1.0 - lambda) * out.l_in + lambda * out.l_out;
  return out;
}

}  // namespace metaseg
