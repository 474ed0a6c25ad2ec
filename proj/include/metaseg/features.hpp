#pragma once

// Hand-crafted metrics per predicted OoD component and the labeled metrics
// dataset built from them.
//
// Standard registry layout, 24 + 8 + 2C + 5 columns (75 at C = 19):
//   dispersion   for entropy / variation_ratio / margin: mean, mean_in,
//                mean_bd, var, var_in, var_bd, ratio_bd_in, diff_bd_in
//   geometry     size, size_in, size_bd, size_bd_rel, size_sqrt,
//                center_row, center_col, bbox_fill
//   class probs  prob_mean_c<k>, prob_var_c<k> for every class k
//   neighborhood nbr_entropy_mean, nbr_max_prob_mean, nbr_above_t_frac,
//                nbr_size_rel, nbr_margin_mean

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "metaseg/error.hpp"
#include "metaseg/io.hpp"
#include "metaseg/parallel.hpp"
#include "metaseg/raster.hpp"
#include "metaseg/scoring.hpp"
#include "metaseg/segments.hpp"

namespace metaseg {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

class MetricRegistry {
 public:
  MetricRegistry() = default;

  static MetricRegistry standard(int num_classes) {
    if (num_classes < 2) throw DataError("registry needs at least 2 classes");
    MetricRegistry reg;
    reg.num_classes_ = num_classes;
    for (const char* d : {"entropy", "variation_ratio", "margin"})
      for (const char* s : {"mean", "mean_in", "mean_bd", "var", "var_in", "var_bd", "ratio_bd_in", "diff_bd_in"})
        reg.names_.push_back(std::string(d) + "_" + s);
    for (const char* g :
         {"size", "size_in", "size_bd", "size_bd_rel", "size_sqrt", "center_row", "center_col", "bbox_fill"})
      reg.names_.emplace_back(g);
    for (int k = 0; k < num_classes; ++k) {
      reg.names_.push_back("prob_mean_c" + std::to_string(k));
      reg.names_.push_back("prob_var_c" + std::to_string(k));
    }
    for (const char* n :
         {"nbr_entropy_mean", "nbr_max_prob_mean", "nbr_above_t_frac", "nbr_size_rel", "nbr_margin_mean"})
      reg.names_.emplace_back(n);
    return reg;
  }

  static constexpr std::size_t standard_total(int num_classes) { return 24 + 8 + 2 * num_classes + 5; }

  /// Registry from arbitrary column names; recognised as standard when the
  /// names equal standard(C) for the implied C.
  static MetricRegistry from_names(std::vector<std::string> names) {
    if (names.size() > 37 && (names.size() - 37) % 2 == 0) {
      MetricRegistry std_reg = standard(static_cast<int>((names.size() - 37) / 2));
      if (std_reg.names_ == names) return std_reg;
    }
    std::vector<std::string> sorted = names;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw DataError("duplicate metric names");
    MetricRegistry reg;
    reg.names_ = std::move(names);
    return reg;
  }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t total() const { return names_.size(); }
  /// 0 for custom registries.
  int num_classes() const { return num_classes_; }
  bool is_standard() const { return num_classes_ > 0; }

  MetricRegistry subset(std::span<const std::size_t> columns) const {
    std::vector<std::string> names;
    for (std::size_t c : columns) names.push_back(names_.at(c));
    MetricRegistry reg;
    reg.names_ = std::move(names);
    return reg;
  }

  bool operator==(const MetricRegistry&) const = default;

 private:
  std::vector<std::string> names_;
  int num_classes_ = 0;
};

namespace detail {

struct MeanVar {
  double mean = 0;
  double var = 0;
};

template <typename Get>
MeanVar mean_var(std::span<const Pixel> pixels, Get&& get) {
  MeanVar out;
  if (pixels.empty()) return out;
  for (const Pixel& p : pixels) out.mean += get(p);
  out.mean /= static_cast<double>(pixels.size());
  for (const Pixel& p : pixels) {
    const double d = get(p) - out.mean;
    out.var += d * d;
  }
  out.var /= static_cast<double>(pixels.size());
  return out;
}

inline std::pair<double, double> top_two(std::span<const double> probs) {
  double first = -1, second = -1;
  for (double p : probs) {
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  return {first, second};
}

}  // namespace detail

/// Metric vector for one component, laid out per the standard registry.
/// `cfg` is the threshold used for the neighbourhood above-threshold fraction.
inline std::vector<double> extract_metrics(const ComponentRecord& comp, const ProbabilityMap& pmap,
                                           const ScoreMap& score, const MetricRegistry& registry,
                                           ThresholdConfig cfg = {}) {
  if (comp.pixels.empty()) throw DataError("empty component");
  if (pmap.dims() != score.dims() || comp.image != pmap.dims())
    throw DataError("dimension mismatch between component, probability map and score map");
  if (!registry.is_standard() || registry.num_classes() != pmap.num_classes())
    throw DataError("registry class count does not match the probability map");
  for (const Pixel& p : comp.pixels)
    if (!pmap.dims().contains(p)) throw DataError("component pixel outside the image");

  const double H = pmap.height(), W = pmap.width();
  const auto entropy = [&](const Pixel& p) { return score.at(p.row, p.col); };
  const auto variation = [&](const Pixel& p) { return 1.0 - detail::top_two(pmap.pixel(p.row, p.col)).first; };
  const auto margin = [&](const Pixel& p) {
    const auto [a, b] = detail::top_two(pmap.pixel(p.row, p.col));
    return a - b;
  };

  std::vector<double> out;
  out.reserve(registry.total());
  const std::span<const Pixel> all = comp.pixels;
  const std::span<const Pixel> bd = comp.boundary;
  const std::span<const Pixel> in = comp.interior.empty() ? all : std::span<const Pixel>(comp.interior);

  const auto dispersion = [&](auto&& get) {
    const auto a = detail::mean_var(all, get), i = detail::mean_var(in, get), b = detail::mean_var(bd, get);
    out.insert(out.end(), {a.mean, i.mean, b.mean, a.var, i.var, b.var, b.mean / (i.mean + 1e-9), b.mean - i.mean});
  };
  dispersion(entropy);
  dispersion(variation);
  dispersion(margin);

  const double S = static_cast<double>(all.size());
  const double S_in = static_cast<double>(comp.interior.size());
  const double S_bd = static_cast<double>(bd.size());
  double row_sum = 0, col_sum = 0;
  for (const Pixel& p : all) {
    row_sum += p.row;
    col_sum += p.col;
  }
  const double bbox_area = static_cast<double>(comp.bbox.height()) * comp.bbox.width();
  out.insert(out.end(), {S, S_in, S_bd, S_bd / S, std::sqrt(S), row_sum / S / H, col_sum / S / W, S / bbox_area});

  for (int k = 0; k < pmap.num_classes(); ++k) {
    const auto mv = detail::mean_var(all, [&](const Pixel& p) { return pmap.at(p.row, p.col, k); });
    out.push_back(mv.mean);
    out.push_back(mv.var);
  }

  // 1-pixel ring of the 8-neighbourhood dilation, clipped to the image.
  std::vector<Pixel> ring;
  {
    std::vector<Pixel> sorted_pixels(all.begin(), all.end());
    const auto inside = [&](Pixel p) { return std::binary_search(sorted_pixels.begin(), sorted_pixels.end(), p); };
    for (const Pixel& p : bd)
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
          const Pixel q{p.row + dr, p.col + dc};
          if (pmap.dims().contains(q) && !inside(q)) ring.push_back(q);
        }
    std::sort(ring.begin(), ring.end());
    ring.erase(std::unique(ring.begin(), ring.end()), ring.end());
  }
  if (ring.empty()) {
    out.insert(out.end(), {0.0, 0.0, 0.0, 0.0, 0.0});
  } else {
    const double n = static_cast<double>(ring.size());
    double ent = 0, maxp = 0, above = 0, marg = 0;
    for (const Pixel& q : ring) {
      const float a = score.at(q.row, q.col);
      const auto [p1, p2] = detail::top_two(pmap.pixel(q.row, q.col));
      ent += a;
      maxp += p1;
      above += cfg.admits(a) ? 1.0 : 0.0;
      marg += p1 - p2;
    }
    out.insert(out.end(), {ent / n, maxp / n, above / n, n / S_bd, marg / n});
  }
  return out;
}

/// Labeled metrics dataset: one row per component, label 1 = false positive.
struct MetricsDataset {
  MetricRegistry registry;
  RowMatrix rows;
  std::vector<std::uint8_t> labels;
  std::vector<std::string> group_ids;

  std::size_t size() const { return static_cast<std::size_t>(rows.rows()); }
  std::size_t num_metrics() const { return static_cast<std::size_t>(rows.cols()); }

  std::size_t count_label(std::uint8_t label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }

  void validate() const {
    if (static_cast<std::size_t>(rows.cols()) != registry.total())
      throw DataError("row length does not match registry");
    if (labels.size() != size() || group_ids.size() != size())
      throw DataError("labels / group ids do not match row count");
    if (!rows.allFinite()) throw DataError("metrics dataset contains non-finite values");
  }

  MetricsDataset select_rows(std::span<const std::size_t> idx) const {
    MetricsDataset out;
    out.registry = registry;
    out.rows.resize(static_cast<Eigen::Index>(idx.size()), rows.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.rows.row(static_cast<Eigen::Index>(i)) = rows.row(static_cast<Eigen::Index>(idx[i]));
      out.labels.push_back(labels[idx[i]]);
      out.group_ids.push_back(group_ids[idx[i]]);
    }
    return out;
  }

  MetricsDataset select_columns(std::span<const std::size_t> cols) const {
    MetricsDataset out;
    out.registry = registry.subset(cols);
    out.rows.resize(rows.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j)
      out.rows.col(static_cast<Eigen::Index>(j)) = rows.col(static_cast<Eigen::Index>(cols[j]));
    out.labels = labels;
    out.group_ids = group_ids;
    return out;
  }

  /// Distinct group ids in first-appearance order.
  std::vector<std::string> groups() const {
    std::vector<std::string> out;
    for (const auto& g : group_ids)
      if (std::find(out.begin(), out.end(), g) == out.end()) out.push_back(g);
    return out;
  }
};

/// Components of one sample, labeled against its mask, with their metric rows.
struct SampleComponents {
  ScoreMap score;
  std::vector<ComponentRecord> components;
  std::vector<std::vector<double>> rows;
};

inline SampleComponents analyze_sample(const Sample& sample, ThresholdConfig cfg, const MetricRegistry& registry,
                                       std::size_t min_size = 1) {
  SampleComponents out;
  out.score = anomaly_score_map(sample.probs);
  out.components = label_components(extract_components(out.score, cfg, min_size), sample.mask);
  for (auto& comp : out.components) {
    comp.source_sample = sample.id;
    out.rows.push_back(extract_metrics(comp, sample.probs, out.score, registry, cfg));
  }
  return out;
}

/// Score -> threshold -> components -> labels -> metrics for every sample.
/// Rows follow sample order, then component id.
inline MetricsDataset build_metrics_dataset(const SampleSet& samples, ThresholdConfig cfg,
                                            const MetricRegistry& registry, std::size_t min_size = 1) {
  std::vector<SampleComponents> per_sample(samples.size());
  parallel_for(samples.size(),
               [&](std::size_t i) { per_sample[i] = analyze_sample(samples[i], cfg, registry, min_size); });
  std::size_t total = 0;
  for (const auto& s : per_sample) total += s.rows.size();

  MetricsDataset ds;
  ds.registry = registry;
  ds.rows.resize(static_cast<Eigen::Index>(total), static_cast<Eigen::Index>(registry.total()));
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < per_sample.size(); ++i) {
    for (std::size_t k = 0; k < per_sample[i].rows.size(); ++k, ++r) {
      ds.rows.row(r) = Eigen::Map<const Eigen::RowVectorXd>(per_sample[i].rows[k].data(),
                                                           static_cast<Eigen::Index>(registry.total()));
      ds.labels.push_back(per_sample[i].components[k].is_false_positive ? 1 : 0);
      ds.group_ids.push_back(samples[i].id);
    }
  }
  ds.validate();
  return ds;
}

/// Per-column z-score parameters. Zero-variance columns keep scale 1.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> scale;

  std::size_t size() const { return mean.size(); }

  void apply_inplace(RowMatrix& rows) const {
    if (static_cast<std::size_t>(rows.cols()) != mean.size())
      throw DataError("standardization width does not match rows");
    for (Eigen::Index j = 0; j < rows.cols(); ++j)
      rows.col(j) = (rows.col(j).array() - mean[static_cast<std::size_t>(j)]) / scale[static_cast<std::size_t>(j)];
  }

  std::vector<double> apply(std::span<const double> row) const {
    if (row.size() != mean.size()) throw DataError("feature length does not match standardization");
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j) out[j] = (row[j] - mean[j]) / scale[j];
    return out;
  }

  static Standardization identity(std::size_t n) { return {std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)}; }

  bool operator==(const Standardization&) const = default;
};

/// Population mean / standard deviation per column.
inline Standardization fit_standardization(const RowMatrix& rows) {
  if (rows.rows() < 2) throw DataError("standardization needs at least 2 rows");
  Standardization st;
  const double n = static_cast<double>(rows.rows());
  for (Eigen::Index j = 0; j < rows.cols(); ++j) {
    const double mean = rows.col(j).sum() / n;
    const double var = (rows.col(j).array() - mean).square().sum() / n;
    const double sd = std::sqrt(var);
    if (sd > 0.0 && std::isfinite(sd)) {
      st.mean.push_back(mean);
      st.scale.push_back(sd);
    } else {
      // Passed through unchanged.
      st.mean.push_back(0.0);
      st.scale.push_back(1.0);
    }
  }
  return st;
}

inline std::pair<MetricsDataset, Standardization> standardize(const MetricsDataset& dataset) {
  Standardization st = fit_standardization(dataset.rows);
  MetricsDataset out = dataset;
  st.apply_inplace(out.rows);
  return {std::move(out), std::move(st)};
}

// ---------------------------------------------------------------------------
// CSV: header = metric names, "label", "group_id"; reals with 9 significant
// digits.

inline std::string encode_metrics_csv(const MetricsDataset& ds) {
  ds.validate();
  std::string out;
  for (const auto& n : ds.registry.names()) out += n + ",";
  out += "label,group_id\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (Eigen::Index j = 0; j < ds.rows.cols(); ++j) {
      out += io::format_real(ds.rows(static_cast<Eigen::Index>(i), j));
      out += ',';
    }
    if (ds.group_ids[i].find_first_of(",\n\r") != std::string::npos)
      throw DataError("group id contains a CSV separator: '" + ds.group_ids[i] + "'");
    out += std::to_string(static_cast<int>(ds.labels[i])) + "," + ds.group_ids[i] + "\n";
  }
  return out;
}

inline MetricsDataset decode_metrics_csv(std::string_view text) {
  const auto rows = io::lines(text);
  if (rows.empty()) throw DataError("metrics CSV is empty");
  auto header = io::split(rows[0], ',');
  if (header.size() < 3 || header[header.size() - 2] != "label" || header.back() != "group_id")
    throw DataError("metrics CSV header must end with label,group_id");
  header.resize(header.size() - 2);
  MetricsDataset ds;
  ds.registry = MetricRegistry::from_names(header);
  const std::size_t m = header.size();
  std::vector<std::vector<std::string>> fields;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].empty()) continue;
    fields.push_back(io::split(rows[i], ','));
    if (fields.back().size() != m + 2)
      throw DataError("metrics CSV line " + std::to_string(i + 1) + " has " + std::to_string(fields.back().size()) +
                      " fields, expected " + std::to_string(m + 2));
  }
  ds.rows.resize(static_cast<Eigen::Index>(fields.size()), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < fields.size(); ++i) {
    for (std::size_t j = 0; j < m; ++j)
      ds.rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = io::parse_real(fields[i][j]);
    const auto label = io::parse_int(fields[i][m]);
    if (label != 0 && label != 1) throw DataError("label must be 0 or 1");
    ds.labels.push_back(static_cast<std::uint8_t>(label));
    ds.group_ids.push_back(fields[i][m + 1]);
  }
  ds.validate();
  return ds;
}

inline void save_metrics_csv(const MetricsDataset& ds, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_metrics_csv(ds));
}

inline MetricsDataset load_metrics_csv(const std::filesystem::path& path) {
  return decode_metrics_csv(io::read_file(path));
}

}  // namespace metaseg
