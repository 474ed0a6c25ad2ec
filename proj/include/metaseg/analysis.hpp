#pragma once

// Evaluation of meta classifiers and anomaly scores: ranking metrics,
// leave-one-image-out cross-validation, LARS feature ordering, incremental
// evaluation over LARS prefixes and the OoD-fraction proxy split.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "metaseg/error.hpp"
#include "metaseg/features.hpp"
#include "metaseg/io.hpp"
#include "metaseg/metaclf.hpp"
#include "metaseg/parallel.hpp"
#include "metaseg/raster.hpp"

namespace metaseg {

namespace detail {

struct Tally {
  std::size_t positives = 0;
  std::size_t negatives = 0;
};

inline Tally tally(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw DataError("scores and labels differ in length");
  Tally t;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) throw DataError("non-finite score");
    (labels[i] ? t.positives : t.negatives) += 1;
  }
  return t;
}

/// Score groups in descending order: (positives, negatives) per distinct score.
struct Group {
  double score;
  std::size_t pos;
  std::size_t neg;
};

inline std::vector<Group> descending_groups(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<Group> groups;
  for (std::size_t i : idx) {
    if (groups.empty() || groups.back().score != scores[i]) groups.push_back({scores[i], 0, 0});
    (labels[i] ? groups.back().pos : groups.back().neg) += 1;
  }
  return groups;
}

}  // namespace detail

/// P(random positive outranks random negative), ties counted one half.
inline double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto t = detail::tally(scores, labels);
  if (t.positives == 0 || t.negatives == 0) throw DataError("auroc needs both classes");
  double num = 0;
  std::size_t neg_seen = 0;
  for (const auto& g : detail::descending_groups(scores, labels)) {
    const std::size_t neg_below = t.negatives - neg_seen - g.neg;
    num += static_cast<double>(g.pos) * static_cast<double>(neg_below) +
           0.5 * static_cast<double>(g.pos) * static_cast<double>(g.neg);
    neg_seen += g.neg;
  }
  return num / (static_cast<double>(t.positives) * static_cast<double>(t.negatives));
}

/// Average precision: sum over distinct thresholds of delta-recall x precision.
inline double auprc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto t = detail::tally(scores, labels);
  if (t.positives == 0) throw DataError("auprc needs at least one positive");
  double ap = 0;
  std::size_t tp = 0, fp = 0;
  for (const auto& g : detail::descending_groups(scores, labels)) {
    tp += g.pos;
    fp += g.neg;
    if (g.pos == 0) continue;
    ap += (static_cast<double>(g.pos) / static_cast<double>(t.positives)) *
          (static_cast<double>(tp) / static_cast<double>(tp + fp));
  }
  return ap;
}

/// Smallest FPR among thresholds (observed scores, inclusive) reaching TPR >= 0.95.
inline double fpr_at_95_tpr(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto t = detail::tally(scores, labels);
  if (t.positives == 0 || t.negatives == 0) throw DataError("fpr95 needs both classes");
  std::size_t tp = 0, fp = 0;
  for (const auto& g : detail::descending_groups(scores, labels)) {
    tp += g.pos;
    fp += g.neg;
    if (100 * tp >= 95 * t.positives) return static_cast<double>(fp) / static_cast<double>(t.negatives);
  }
  return 1.0;
}

struct CurvePoint {
  double x;
  double y;
};

/// (FPR, TPR) from (0,0) to (1,1).
inline std::vector<CurvePoint> roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto t = detail::tally(scores, labels);
  if (t.positives == 0 || t.negatives == 0) throw DataError("roc curve needs both classes");
  std::vector<CurvePoint> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (const auto& g : detail::descending_groups(scores, labels)) {
    tp += g.pos;
    fp += g.neg;
    pts.push_back({static_cast<double>(fp) / t.negatives, static_cast<double>(tp) / t.positives});
  }
  return pts;
}

/// (recall, precision) step points, one per distinct threshold.
inline std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto t = detail::tally(scores, labels);
  if (t.positives == 0) throw DataError("pr curve needs at least one positive");
  std::vector<CurvePoint> pts;
  std::size_t tp = 0, fp = 0;
  for (const auto& g : detail::descending_groups(scores, labels)) {
    tp += g.pos;
    fp += g.neg;
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (pts.empty()) pts.push_back({0.0, precision});
    pts.push_back({static_cast<double>(tp) / t.positives, precision});
  }
  return pts;
}

struct EvalReport {
  double auroc = 0;
  double auprc = 0;
  std::optional<double> fpr95;
  std::size_t positives = 0;
  std::size_t negatives = 0;

  /// Positive share of the population: the AUPRC of random guessing.
  double prevalence() const {
    return static_cast<double>(positives) / static_cast<double>(positives + negatives);
  }
};

inline EvalReport evaluate_scores(std::span<const double> scores, std::span<const std::uint8_t> labels,
                                  bool with_fpr95 = true) {
  const auto t = detail::tally(scores, labels);
  EvalReport r;
  r.positives = t.positives;
  r.negatives = t.negatives;
  r.auroc = auroc(scores, labels);
  r.auprc = auprc(scores, labels);
  if (with_fpr95) r.fpr95 = fpr_at_95_tpr(scores, labels);
  return r;
}

/// Positive class = false-positive component (label 1).
inline EvalReport evaluate_components(const MetaModel& model, const MetricsDataset& dataset) {
  dataset.validate();
  if (dataset.size() == 0) throw DataError("empty metrics dataset");
  const Eigen::VectorXd p = predict_raw_batch(model, dataset.rows);
  return evaluate_scores(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), dataset.labels);
}

/// Pooled pixel-level evaluation; OoD pixels are positives, ignore pixels are skipped.
inline EvalReport evaluate_pixels(std::span<const ScoreMap> scores, std::span<const LabelMask> masks) {
  if (scores.size() != masks.size()) throw DataError("score maps and masks differ in count");
  std::vector<double> pooled;
  std::vector<std::uint8_t> labels;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].dims() != masks[i].dims())
      throw DataError("score map " + std::to_string(i) + " does not match its mask");
    const auto s = scores[i].scores();
    const auto m = masks[i].labels();
    for (std::size_t k = 0; k < s.size(); ++k) {
      if (m[k] == LabelMask::kIgnore) continue;
      pooled.push_back(s[k]);
      labels.push_back(m[k] == LabelMask::kOod ? 1 : 0);
    }
  }
  if (std::find(labels.begin(), labels.end(), std::uint8_t{1}) == labels.end())
    throw DataError("no OoD pixels in any mask");
  return evaluate_scores(pooled, labels);
}

// ---------------------------------------------------------------------------
// Leave-one-image-out cross-validation

struct LooResult {
  std::vector<double> scores;  // one per dataset row, in row order
  EvalReport report;
  std::vector<std::string> warnings;
};

/// Trains one model per group (image) on every other group and scores the
/// held-out rows. Folds run in parallel; results land in row order.
inline LooResult leave_one_out(ModelKind kind, const MetricsDataset& dataset, const TrainConfig& cfg,
                               std::size_t threads = 0) {
  dataset.validate();
  const auto groups = dataset.groups();
  if (groups.size() < 2) throw DataError("leave-one-out needs at least 2 samples");
  std::vector<std::vector<std::size_t>> held(groups.size()), rest(groups.size());
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    const auto g = static_cast<std::size_t>(std::find(groups.begin(), groups.end(), dataset.group_ids[r]) -
                                            groups.begin());
    for (std::size_t k = 0; k < groups.size(); ++k) (k == g ? held[k] : rest[k]).push_back(r);
  }

  LooResult out;
  out.scores.assign(dataset.size(), 0.0);
  std::vector<std::vector<std::string>> fold_warnings(groups.size());
  parallel_for(
      groups.size(),
      [&](std::size_t k) {
        if (held[k].empty()) return;
        if (rest[k].empty()) throw DataError("leave-one-out fold without training rows");
        const MetricsDataset train_set = dataset.select_rows(rest[k]);
        TrainResult trained = train(kind, train_set, cfg);
        for (const auto& w : trained.warnings) fold_warnings[k].push_back("fold '" + groups[k] + "': " + w);
        const MetricsDataset test_set = dataset.select_rows(held[k]);
        const Eigen::VectorXd p = predict_raw_batch(trained.model, test_set.rows);
        for (std::size_t i = 0; i < held[k].size(); ++i) out.scores[held[k][i]] = p(static_cast<Eigen::Index>(i));
      },
      threads);
  for (auto& w : fold_warnings) out.warnings.insert(out.warnings.end(), w.begin(), w.end());
  out.report = evaluate_scores(out.scores, dataset.labels);
  return out;
}

inline LooResult leave_one_out(ModelKind kind, const SampleSet& samples, const TrainConfig& cfg,
                               ThresholdConfig threshold, const MetricRegistry& registry, std::size_t threads = 0) {
  if (samples.size() < 2) throw DataError("leave-one-out needs at least 2 samples");
  return leave_one_out(kind, build_metrics_dataset(samples, threshold, registry), cfg, threads);
}

// ---------------------------------------------------------------------------
// Least angle regression, used only for its variable entry order.

struct LarsOrdering {
  std::vector<std::size_t> order;          // permutation of column indices
  std::vector<double> entry_correlations;  // |correlation with residual| at entry
};

/// Classical LARS (no lasso modification) on standardized columns `x` and a
/// centered response `y`. Exact ties enter lowest index first. Columns that
/// never enter are appended: those outside the span of the active set first,
/// then zero or collinear ones, each by descending final |correlation|.
inline LarsOrdering lars_order(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Eigen::Index n = x.rows(), p = x.cols();
  if (y.size() != n) throw DataError("response length does not match rows");
  if (n == 0 || p == 0) throw DataError("lars needs a nonempty design");
  if ((y.array() - y.mean()).square().sum() <= 0.0) throw DataError("zero-variance response");

  const Eigen::VectorXd col_sq = x.colwise().squaredNorm().transpose();
  std::vector<bool> active(static_cast<std::size_t>(p), false);
  std::vector<Eigen::Index> act;
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd c = x.transpose() * y;
  LarsOrdering out;

  const double tiny = 1e-12;
  const auto in_span = [&](Eigen::Index j, const Eigen::MatrixXd& xa, const Eigen::LDLT<Eigen::MatrixXd>& g_raw) {
    if (col_sq(j) <= tiny * static_cast<double>(n)) return true;
    if (act.empty()) return false;
    const Eigen::VectorXd b = xa.transpose() * x.col(j);
    const double resid = col_sq(j) - b.dot(g_raw.solve(b));
    return resid <= 1e-10 * col_sq(j);
  };

  const Eigen::Index max_steps = std::min(p, n - 1 > 0 ? n - 1 : Eigen::Index{1});
  // First entry: maximal |c_j|, ties to the lowest index.
  {
    Eigen::Index best = -1;
    const Eigen::MatrixXd empty;
    const Eigen::LDLT<Eigen::MatrixXd> none;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (in_span(j, empty, none)) continue;
      if (best < 0 || std::abs(c(j)) > std::abs(c(best))) best = j;
    }
    if (best >= 0) {
      active[static_cast<std::size_t>(best)] = true;
      act.push_back(best);
      out.order.push_back(static_cast<std::size_t>(best));
      out.entry_correlations.push_back(std::abs(c(best)));
    }
  }

  while (!act.empty() && static_cast<Eigen::Index>(act.size()) < max_steps) {
    const auto k = static_cast<Eigen::Index>(act.size());
    Eigen::MatrixXd xa(n, k), xs(n, k);
    double big_c = 0;
    for (Eigen::Index i = 0; i < k; ++i) {
      const Eigen::Index j = act[static_cast<std::size_t>(i)];
      xa.col(i) = x.col(j);
      const double s = c(j) >= 0 ? 1.0 : -1.0;
      xs.col(i) = s * x.col(j);
      big_c = std::max(big_c, std::abs(c(j)));
    }
    const Eigen::LDLT<Eigen::MatrixXd> g_raw(xa.transpose() * xa);
    const Eigen::MatrixXd g = xs.transpose() * xs;
    const Eigen::VectorXd g_inv_1 = g.ldlt().solve(Eigen::VectorXd::Ones(k));
    const double norm = g_inv_1.sum();
    if (!(norm > 0.0)) break;
    const double a_a = 1.0 / std::sqrt(norm);
    const Eigen::VectorXd u = xs * (a_a * g_inv_1);
    const Eigen::VectorXd a = x.transpose() * u;

    Eigen::Index best = -1;
    double best_gamma = 0;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (active[static_cast<std::size_t>(j)] || in_span(j, xa, g_raw)) continue;
      double gamma = std::numeric_limits<double>::infinity();
      for (const double cand : {(big_c - c(j)) / (a_a - a(j)), (big_c + c(j)) / (a_a + a(j))})
        if (std::isfinite(cand) && cand > tiny) gamma = std::min(gamma, cand);
      if (!std::isfinite(gamma)) continue;
      if (best < 0 || gamma < best_gamma) {
        best = j;
        best_gamma = gamma;
      }
    }
    if (best < 0) break;
    mu += best_gamma * u;
    c = x.transpose() * (y - mu);
    active[static_cast<std::size_t>(best)] = true;
    act.push_back(best);
    out.order.push_back(static_cast<std::size_t>(best));
    out.entry_correlations.push_back(std::abs(c(best)));
  }

  // Leftovers: columns outside the span of the active set first, each group
  // by descending |c| with numerically-zero correlations tied at 0.
  std::vector<std::size_t> remaining;
  std::vector<int> spanned(static_cast<std::size_t>(p), 0);
  std::vector<double> key(static_cast<std::size_t>(p), 0.0);
  {
    Eigen::MatrixXd xa(n, static_cast<Eigen::Index>(act.size()));
    for (std::size_t i = 0; i < act.size(); ++i) xa.col(static_cast<Eigen::Index>(i)) = x.col(act[i]);
    const Eigen::LDLT<Eigen::MatrixXd> g_raw(xa.transpose() * xa);
    const double scale = std::max((x.transpose() * y).cwiseAbs().maxCoeff(), tiny);
    for (Eigen::Index j = 0; j < p; ++j) {
      if (active[static_cast<std::size_t>(j)]) continue;
      remaining.push_back(static_cast<std::size_t>(j));
      spanned[static_cast<std::size_t>(j)] = in_span(j, xa, g_raw) ? 1 : 0;
      const double cj = std::abs(c(j));
      key[static_cast<std::size_t>(j)] = cj <= 1e-9 * scale ? 0.0 : cj;
    }
  }
  std::stable_sort(remaining.begin(), remaining.end(), [&](std::size_t a, std::size_t b) {
    if (spanned[a] != spanned[b]) return spanned[a] < spanned[b];
    return key[a] > key[b];
  });
  for (std::size_t j : remaining) {
    out.order.push_back(j);
    out.entry_correlations.push_back(std::abs(c(static_cast<Eigen::Index>(j))));
  }
  return out;
}

/// LARS on z-scored metric columns against the centered 0/1 label. Constant
/// columns become zero and are ordered last.
inline LarsOrdering lars_order(const MetricsDataset& dataset) {
  dataset.validate();
  const auto n = static_cast<Eigen::Index>(dataset.size());
  if (n < 2) throw DataError("lars needs at least 2 rows");
  Eigen::MatrixXd x = dataset.rows;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double mean = x.col(j).mean();
    x.col(j).array() -= mean;
    const double sd = std::sqrt(x.col(j).squaredNorm() / static_cast<double>(n));
    if (sd > 0.0) {
      x.col(j) /= sd;
    } else {
      x.col(j).setZero();
    }
  }
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = dataset.labels[static_cast<std::size_t>(i)];
  y.array() -= y.mean();
  return lars_order(x, y);
}

// ---------------------------------------------------------------------------
// Incremental evaluation over LARS prefixes

struct IncrementalResult {
  LarsOrdering ordering;
  std::vector<double> auroc;
  std::vector<double> auprc;
};

/// For i = 1..N_m: fresh model, leave-one-out training and scoring on the
/// first i metrics in LARS order. Selected columns keep their dataset order,
/// so the last entry is exactly the full-feature leave-one-out run.
inline IncrementalResult incremental_evaluation(ModelKind kind, const MetricsDataset& dataset, const TrainConfig& cfg,
                                                std::size_t threads = 0) {
  IncrementalResult out;
  out.ordering = lars_order(dataset);
  for (std::size_t i = 1; i <= out.ordering.order.size(); ++i) {
    std::vector<std::size_t> cols(out.ordering.order.begin(), out.ordering.order.begin() + static_cast<long>(i));
    std::sort(cols.begin(), cols.end());
    const LooResult r = leave_one_out(kind, dataset.select_columns(cols), cfg, threads);
    out.auroc.push_back(r.report.auroc);
    out.auprc.push_back(r.report.auprc);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Proxy informativeness split

/// |OoD pixels| / |non-ignore pixels|.
inline double ood_fraction(const LabelMask& mask) {
  std::size_t ood = 0, valid = 0;
  for (std::uint8_t v : mask.labels()) {
    if (v == LabelMask::kIgnore) continue;
    ++valid;
    ood += (v == LabelMask::kOod);
  }
  if (valid == 0) throw DataError("mask has no non-ignore pixels");
  return static_cast<double>(ood) / static_cast<double>(valid);
}

struct ProxySplit {
  std::vector<std::string> low;   // fraction <= low threshold
  std::vector<std::string> high;  // fraction >= high threshold
  std::vector<std::string> rest;
  std::vector<double> fractions;  // per input mask
};

inline ProxySplit split_by_ood_fraction(std::span<const LabelMask> masks, std::span<const std::string> ids,
                                        double low, double high) {
  if (!(low >= 0.0 && low <= high && high <= 1.0)) throw DataError("need 0 <= low <= high <= 1");
  if (masks.size() != ids.size()) throw DataError("masks and ids differ in count");
  ProxySplit out;
  for (std::size_t i = 0; i < masks.size(); ++i) {
    const double f = ood_fraction(masks[i]);
    out.fractions.push_back(f);
    if (f <= low) {
      out.low.push_back(ids[i]);
    } else if (f >= high) {
      out.high.push_back(ids[i]);
    } else {
      out.rest.push_back(ids[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report CSV

inline std::string encode_report_csv(const EvalReport& r) {
  std::string out = "metric,value\n";
  out += "auroc," + io::format_real(r.auroc) + "\n";
  out += "auprc," + io::format_real(r.auprc) + "\n";
  if (r.fpr95) out += "fpr95," + io::format_real(*r.fpr95) + "\n";
  out += "positives," + std::to_string(r.positives) + "\n";
  out += "negatives," + std::to_string(r.negatives) + "\n";
  out += "prevalence," + io::format_real(r.prevalence()) + "\n";
  return out;
}

}  // namespace metaseg
