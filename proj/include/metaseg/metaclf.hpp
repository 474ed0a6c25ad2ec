#pragma once

// Meta classifiers deciding whether a predicted OoD component is a false
// positive: logistic regression and a small fully connected network, both
// trained with mini-batch Adam on binary cross-entropy.
//
// Both kinds share one representation, a stack of dense layers. Logistic
// regression is the single layer [N_m -> 1]; the network is
// [N_m -> 75 -> 75 -> 75 -> 1] with rectifier hidden units. The output unit
// is always a sigmoid giving p(false positive).

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "metaseg/error.hpp"
#include "metaseg/features.hpp"
#include "metaseg/io.hpp"
#include "metaseg/random.hpp"
#include "metaseg/raster.hpp"
#include "metaseg/segments.hpp"

namespace metaseg {

enum class ModelKind { logistic, mlp };

inline std::string to_string(ModelKind kind) { return kind == ModelKind::logistic ? "logistic" : "mlp"; }

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "logistic") return ModelKind::logistic;
  if (s == "mlp") return ModelKind::mlp;
  throw DataError("unknown model kind '" + s + "'");
}

inline constexpr int kHiddenWidth = 75;
inline constexpr int kHiddenLayers = 3;

struct TrainConfig {
  double learning_rate = 1e-3;
  double weight_decay = 5e-3;
  int epochs = 50;
  int batch_size = 128;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const {
    if (!(learning_rate >= 0.0) || !(weight_decay >= 0.0)) throw DataError("rates must be non-negative");
    if (epochs < 0) throw DataError("epochs must be non-negative");
    if (batch_size < 1) throw DataError("batch size must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0) || !(adam_eps > 0.0))
      throw DataError("invalid Adam hyper-parameters");
  }
};

struct DenseLayer {
  Eigen::MatrixXd weight;  // fan_out x fan_in
  Eigen::VectorXd bias;    // fan_out

  Eigen::Index fan_in() const { return weight.cols(); }
  Eigen::Index fan_out() const { return weight.rows(); }
  std::size_t parameter_count() const { return static_cast<std::size_t>(weight.size() + bias.size()); }
};

struct MetaModel {
  ModelKind kind = ModelKind::logistic;
  std::vector<DenseLayer> layers;
  Standardization standardization;
  std::vector<std::string> feature_names;
  TrainConfig config;

  std::size_t num_features() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().fan_in()); }

  std::vector<int> layer_dims() const {
    std::vector<int> dims;
    if (layers.empty()) return dims;
    dims.push_back(static_cast<int>(layers.front().fan_in()));
    for (const auto& l : layers) dims.push_back(static_cast<int>(l.fan_out()));
    return dims;
  }

  /// All-zero parameters for the given layer widths.
  static MetaModel zeros(ModelKind kind, std::span<const int> dims) {
    if (dims.size() < 2 || dims.back() != 1) throw DataError("layer dims must end in a single output unit");
    if (kind == ModelKind::logistic && dims.size() != 2) throw DataError("logistic model has exactly one layer");
    MetaModel m;
    m.kind = kind;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      if (dims[i] < 1 || dims[i + 1] < 1) throw DataError("layer widths must be positive");
      m.layers.push_back({Eigen::MatrixXd::Zero(dims[i + 1], dims[i]), Eigen::VectorXd::Zero(dims[i + 1])});
    }
    m.standardization = Standardization::identity(static_cast<std::size_t>(dims.front()));
    return m;
  }

  static std::vector<int> default_dims(ModelKind kind, int num_features) {
    if (kind == ModelKind::logistic) return {num_features, 1};
    std::vector<int> dims{num_features};
    for (int i = 0; i < kHiddenLayers; ++i) dims.push_back(kHiddenWidth);
    dims.push_back(1);
    return dims;
  }

  static MetaModel zeros(ModelKind kind, int num_features) {
    const auto dims = default_dims(kind, num_features);
    return zeros(kind, dims);
  }

  /// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  static MetaModel initialized(ModelKind kind, std::span<const int> dims, std::uint64_t seed) {
    MetaModel m = zeros(kind, dims);
    Rng rng(seed);
    for (auto& layer : m.layers) {
      const double bound = std::sqrt(6.0 / static_cast<double>(layer.fan_in() + layer.fan_out()));
      for (Eigen::Index i = 0; i < layer.weight.rows(); ++i)
        for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) layer.weight(i, j) = rng.uniform(-bound, bound);
    }
    return m;
  }

  bool operator==(const MetaModel& o) const {
    if (kind != o.kind || layers.size() != o.layers.size() || !(standardization == o.standardization) ||
        feature_names != o.feature_names)
      return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].weight.rows() != o.layers[i].weight.rows() || layers[i].weight.cols() != o.layers[i].weight.cols())
        return false;
      if (layers[i].weight != o.layers[i].weight || layers[i].bias != o.layers[i].bias) return false;
    }
    return true;
  }
};

inline std::size_t count_parameters(const MetaModel& model) {
  std::size_t n = 0;
  for (const auto& l : model.layers) n += l.parameter_count();
  return n;
}

inline std::vector<std::size_t> layer_parameter_counts(const MetaModel& model) {
  std::vector<std::size_t> out;
  for (const auto& l : model.layers) out.push_back(l.parameter_count());
  return out;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace detail {

/// Forward pass keeping every pre-activation; `acts[0]` is the input.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> acts;  // n x width, one per layer input plus output
  std::vector<Eigen::MatrixXd> pre;   // n x width pre-activations
};

inline ForwardCache forward(const MetaModel& model, const Eigen::MatrixXd& x) {
  ForwardCache cache;
  cache.acts.reserve(model.layers.size() + 1);
  cache.pre.reserve(model.layers.size());
  cache.acts.push_back(x);
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& layer = model.layers[l];
    Eigen::MatrixXd z = cache.acts.back() * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    const bool last = l + 1 == model.layers.size();
    Eigen::MatrixXd a = last ? Eigen::MatrixXd(z.unaryExpr([](double v) { return sigmoid(v); }))
                             : Eigen::MatrixXd(z.cwiseMax(0.0));
    cache.pre.push_back(std::move(z));
    cache.acts.push_back(std::move(a));
  }
  return cache;
}

inline void require_width(const MetaModel& model, Eigen::Index cols) {
  if (static_cast<std::size_t>(cols) != model.num_features())
    throw DataError("feature length " + std::to_string(cols) + " does not match model input " +
                    std::to_string(model.num_features()));
}

}  // namespace detail

/// p(false positive) for each row of already standardized features.
inline Eigen::VectorXd predict_batch(const MetaModel& model, const Eigen::MatrixXd& standardized) {
  detail::require_width(model, standardized.cols());
  if (standardized.rows() == 0) return Eigen::VectorXd();
  return detail::forward(model, standardized).acts.back().col(0);
}

inline double predict(const MetaModel& model, std::span<const double> standardized) {
  detail::require_width(model, static_cast<Eigen::Index>(standardized.size()));
  Eigen::MatrixXd x = Eigen::Map<const Eigen::RowVectorXd>(standardized.data(),
                                                          static_cast<Eigen::Index>(standardized.size()));
  return predict_batch(model, x)(0);
}

/// Applies the model's stored standardization first.
inline double predict_raw(const MetaModel& model, std::span<const double> raw) {
  const auto z = model.standardization.apply(raw);
  return predict(model, z);
}

inline Eigen::VectorXd predict_raw_batch(const MetaModel& model, const RowMatrix& raw) {
  RowMatrix z = raw;
  model.standardization.apply_inplace(z);
  return predict_batch(model, z);
}

inline constexpr double kBceEpsilon = 1e-12;

/// Summed binary cross-entropy, label 1 = false positive.
inline double bce_loss(std::span<const double> predictions, std::span<const std::uint8_t> labels) {
  if (predictions.size() != labels.size()) throw DataError("predictions and labels differ in length");
  if (predictions.empty()) throw DataError("bce_loss needs at least one prediction");
  double loss = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double p = labels[i] ? predictions[i] : 1.0 - predictions[i];
    loss -= std::log(std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon));
  }
  return loss;
}

inline double mean_bce(const MetaModel& model, const Eigen::MatrixXd& standardized,
                       std::span<const std::uint8_t> labels) {
  const Eigen::VectorXd p = predict_batch(model, standardized);
  return bce_loss(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())), labels) /
         static_cast<double>(labels.size());
}

/// Same shapes as the model's layers.
struct ParameterGradient {
  std::vector<Eigen::MatrixXd> weight;
  std::vector<Eigen::VectorXd> bias;
};

/// Analytic gradient of the batch-mean BCE with respect to every parameter.
/// `mean_loss`, when given, receives the batch-mean BCE from the same forward pass.
inline ParameterGradient gradient(const MetaModel& model, const Eigen::MatrixXd& standardized,
                                  std::span<const std::uint8_t> labels, double* mean_loss = nullptr) {
  detail::require_width(model, standardized.cols());
  if (standardized.rows() == 0) throw DataError("gradient needs a nonempty batch");
  if (static_cast<std::size_t>(standardized.rows()) != labels.size())
    throw DataError("batch rows and labels differ in length");
  const auto cache = detail::forward(model, standardized);
  const auto n = static_cast<double>(labels.size());
  const std::size_t L = model.layers.size();

  ParameterGradient g;
  g.weight.resize(L);
  g.bias.resize(L);
  Eigen::MatrixXd delta = cache.acts.back();
  if (mean_loss != nullptr)
    *mean_loss = bce_loss(std::span<const double>(delta.data(), labels.size()), labels) / n;
  for (Eigen::Index i = 0; i < delta.rows(); ++i) delta(i, 0) = (delta(i, 0) - labels[static_cast<std::size_t>(i)]) / n;
  for (std::size_t l = L; l-- > 0;) {
    g.weight[l] = delta.transpose() * cache.acts[l];
    g.bias[l] = delta.colwise().sum().transpose();
    if (l == 0) break;
    Eigen::MatrixXd back = delta * model.layers[l].weight;
    delta = back.cwiseProduct((cache.pre[l - 1].array() > 0.0).cast<double>().matrix());
  }
  return g;
}

/// Parameters in file order: per layer, the weight matrix row-major, then the bias.
inline std::vector<double> flatten_parameters(const MetaModel& model) {
  std::vector<double> out;
  out.reserve(count_parameters(model));
  for (const auto& l : model.layers) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) out.push_back(l.weight(i, j));
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) out.push_back(l.bias(i));
  }
  return out;
}

inline void assign_parameters(MetaModel& model, std::span<const double> flat) {
  if (flat.size() != count_parameters(model)) throw DataError("parameter count mismatch");
  std::size_t k = 0;
  for (auto& l : model.layers) {
    for (Eigen::Index i = 0; i < l.weight.rows(); ++i)
      for (Eigen::Index j = 0; j < l.weight.cols(); ++j) l.weight(i, j) = flat[k++];
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias(i) = flat[k++];
  }
}

inline std::vector<double> flatten_gradient(const ParameterGradient& g) {
  std::vector<double> out;
  for (std::size_t l = 0; l < g.weight.size(); ++l) {
    for (Eigen::Index i = 0; i < g.weight[l].rows(); ++i)
      for (Eigen::Index j = 0; j < g.weight[l].cols(); ++j) out.push_back(g.weight[l](i, j));
    for (Eigen::Index i = 0; i < g.bias[l].size(); ++i) out.push_back(g.bias[l](i));
  }
  return out;
}

struct TrainResult {
  MetaModel model;
  std::vector<double> epoch_loss;  // mean per-row BCE over each epoch
  std::vector<std::string> warnings;
};

/// Mini-batch Adam on the batch-mean BCE. Decoupled weight decay
/// (w -= lr * decay * w) follows every Adam step and skips biases. Rows are
/// reshuffled each epoch by a seeded Fisher-Yates; the final short batch is
/// kept. Standardization statistics come from `raw` and are stored in the model.
inline TrainResult train(ModelKind kind, const RowMatrix& raw, std::span<const std::uint8_t> labels,
                         const TrainConfig& cfg, std::vector<std::string> feature_names = {}) {
  cfg.validate();
  const auto n = static_cast<std::size_t>(raw.rows());
  if (n == 0) throw DataError("cannot train on an empty dataset");
  if (labels.size() != n) throw DataError("rows and labels differ in length");

  TrainResult result;
  const auto positives = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), std::uint8_t{1}));
  if (positives == 0 || positives == n) result.warnings.push_back("training data contains a single class");

  const auto dims = MetaModel::default_dims(kind, static_cast<int>(raw.cols()));
  MetaModel model = MetaModel::initialized(kind, dims, cfg.seed);
  model.config = cfg;
  model.feature_names = std::move(feature_names);
  if (n >= 2) {
    model.standardization = fit_standardization(raw);
  } else {
    result.warnings.push_back("single training row: features left unstandardized");
    model.standardization = Standardization::identity(static_cast<std::size_t>(raw.cols()));
  }
  RowMatrix x = raw;
  model.standardization.apply_inplace(x);

  const std::size_t L = model.layers.size();
  std::vector<Eigen::MatrixXd> mw(L), vw(L);
  std::vector<Eigen::VectorXd> mb(L), vb(L);
  for (std::size_t l = 0; l < L; ++l) {
    mw[l] = vw[l] = Eigen::MatrixXd::Zero(model.layers[l].fan_out(), model.layers[l].fan_in());
    mb[l] = vb[l] = Eigen::VectorXd::Zero(model.layers[l].fan_out());
  }

  Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  long step = 0;
  Eigen::MatrixXd xb;
  std::vector<std::uint8_t> yb;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double epoch_sum = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t len = std::min(batch, n - start);
      xb.resize(static_cast<Eigen::Index>(len), x.cols());
      yb.resize(len);
      for (std::size_t i = 0; i < len; ++i) {
        xb.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(order[start + i]));
        yb[i] = labels[order[start + i]];
      }
      double batch_loss = 0;
      const ParameterGradient g = gradient(model, xb, yb, &batch_loss);
      epoch_sum += batch_loss * static_cast<double>(len);

      ++step;
      const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step));
      const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2, lr = cfg.learning_rate, eps = cfg.adam_eps;
      for (std::size_t l = 0; l < L; ++l) {
        auto& layer = model.layers[l];
        mw[l] = b1 * mw[l] + (1.0 - b1) * g.weight[l];
        vw[l] = b2 * vw[l] + (1.0 - b2) * g.weight[l].cwiseAbs2();
        layer.weight.array() -= lr * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + eps);
        mb[l] = b1 * mb[l] + (1.0 - b1) * g.bias[l];
        vb[l] = b2 * vb[l] + (1.0 - b2) * g.bias[l].cwiseAbs2();
        layer.bias.array() -= lr * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + eps);
        layer.weight *= 1.0 - lr * cfg.weight_decay;
      }
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(n));
  }
  result.model = std::move(model);
  return result;
}

inline TrainResult train(ModelKind kind, const MetricsDataset& dataset, const TrainConfig& cfg) {
  dataset.validate();
  return train(kind, dataset.rows, dataset.labels, cfg, dataset.registry.names());
}

struct FilterResult {
  ScoreMap score;
  std::vector<ComponentRecord> kept;
  std::vector<double> fp_probability;  // per input component
};

/// Zeroes the scores of every component the model flags as a false positive
/// (p >= decision_threshold). `raw_rows[k]` are the unstandardized metrics of
/// `comps[k]`.
inline FilterResult remove_false_positives(const ScoreMap& score, std::span<const ComponentRecord> comps,
                                           const MetaModel& model, std::span<const std::vector<double>> raw_rows,
                                           double decision_threshold = 0.5) {
  if (raw_rows.size() != comps.size()) throw DataError("mismatched provenance: one metric row per component");
  FilterResult out{score, {}, {}};
  for (std::size_t k = 0; k < comps.size(); ++k) {
    const auto& comp = comps[k];
    if (comp.image != score.dims()) throw DataError("mismatched provenance: component from a different image size");
    const double p = predict_raw(model, raw_rows[k]);
    out.fp_probability.push_back(p);
    if (p >= decision_threshold) {
      for (const Pixel& px : comp.pixels) out.score.set(px.row, px.col, 0.0);
    } else {
      out.kept.push_back(comp);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model file: "key=value" descriptor lines up to "end", then one RAST block
// (H=1, W=#parameters, C=1) holding the f32 parameters in flatten order.

inline constexpr std::string_view kModelMagic = "metaseg-model v1";

namespace detail {
inline std::string join_reals(std::span<const double> v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + io::format_exact(v[i]);
  return s;
}
}  // namespace detail

inline std::string encode_model(const MetaModel& model) {
  std::string out(kModelMagic);
  out += "\n";
  auto kv = [&](const std::string& k, const std::string& v) { out += k + "=" + v + "\n"; };
  kv("kind", to_string(model.kind));
  std::string dims;
  for (int d : model.layer_dims()) dims += (dims.empty() ? "" : ",") + std::to_string(d);
  kv("layer_dims", dims);
  kv("hidden_activation", model.kind == ModelKind::mlp ? "relu" : "none");
  kv("output_activation", "sigmoid");
  kv("weight_init", "uniform_glorot");
  kv("weight_decay_mode", "decoupled_weights_only");
  kv("seed", std::to_string(model.config.seed));
  kv("learning_rate", io::format_exact(model.config.learning_rate));
  kv("weight_decay", io::format_exact(model.config.weight_decay));
  kv("epochs", std::to_string(model.config.epochs));
  kv("batch_size", std::to_string(model.config.batch_size));
  kv("adam_beta1", io::format_exact(model.config.adam_beta1));
  kv("adam_beta2", io::format_exact(model.config.adam_beta2));
  kv("adam_eps", io::format_exact(model.config.adam_eps));
  std::string names;
  for (std::size_t i = 0; i < model.feature_names.size(); ++i) names += (i ? "," : "") + model.feature_names[i];
  kv("feature_names", names);
  kv("standardization_mean", detail::join_reals(model.standardization.mean));
  kv("standardization_scale", detail::join_reals(model.standardization.scale));
  kv("parameters", std::to_string(count_parameters(model)));
  out += "end\n";
  RastBlock block{1, static_cast<std::uint32_t>(count_parameters(model)), 1, {}};
  for (double v : flatten_parameters(model)) block.values.push_back(static_cast<float>(v));
  out += encode_rast(block);
  return out;
}

inline MetaModel decode_model(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t end = bytes.find('\n', pos);
    if (end == std::string_view::npos) throw DataError("truncated model descriptor");
    std::string line(bytes.substr(pos, end - pos));
    pos = end + 1;
    return line;
  };
  if (next_line() != kModelMagic) throw DataError("not a metaseg model file");
  std::map<std::string, std::string> kv;
  for (std::string line = next_line(); line != "end"; line = next_line()) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed descriptor line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto get = [&](const std::string& k) -> const std::string& {
    const auto it = kv.find(k);
    if (it == kv.end()) throw DataError("model descriptor lacks '" + k + "'");
    return it->second;
  };
  auto reals = [&](const std::string& k) {
    std::vector<double> v;
    if (get(k).empty()) return v;
    for (const auto& s : io::split(get(k), ',')) v.push_back(io::parse_real(s));
    return v;
  };

  const ModelKind kind = parse_model_kind(get("kind"));
  std::vector<int> dims;
  for (const auto& s : io::split(get("layer_dims"), ',')) dims.push_back(static_cast<int>(io::parse_int(s)));
  MetaModel model = MetaModel::zeros(kind, dims);
  model.config.seed = static_cast<std::uint64_t>(io::parse_int(get("seed")));
  model.config.learning_rate = io::parse_real(get("learning_rate"));
  model.config.weight_decay = io::parse_real(get("weight_decay"));
  model.config.epochs = static_cast<int>(io::parse_int(get("epochs")));
  model.config.batch_size = static_cast<int>(io::parse_int(get("batch_size")));
  model.config.adam_beta1 = io::parse_real(get("adam_beta1"));
  model.config.adam_beta2 = io::parse_real(get("adam_beta2"));
  model.config.adam_eps = io::parse_real(get("adam_eps"));
  if (!get("feature_names").empty()) model.feature_names = io::split(get("feature_names"), ',');
  model.standardization.mean = reals("standardization_mean");
  model.standardization.scale = reals("standardization_scale");
  if (model.standardization.size() != model.num_features() ||
      model.standardization.scale.size() != model.num_features())
    throw DataError("standardization statistics do not match the input width");
  if (!model.feature_names.empty() && model.feature_names.size() != model.num_features())
    throw DataError("feature names do not match the input width");
  if (static_cast<std::size_t>(io::parse_int(get("parameters"))) != count_parameters(model))
    throw DataError("parameter count in descriptor does not match layer dims");

  const RastBlock block = decode_rast(bytes.substr(pos));
  if (block.height != 1 || block.channels != 1 || block.values.size() != count_parameters(model))
    throw DataError("parameter block does not match layer dims");
  std::vector<double> flat(block.values.begin(), block.values.end());
  for (double v : flat)
    if (!std::isfinite(v)) throw DataError("non-finite model parameter");
  assign_parameters(model, flat);
  return model;
}

inline void save_model(const MetaModel& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_model(model));
}

inline MetaModel load_model(const std::filesystem::path& path) { return decode_model(io::read_file(path)); }

}  // namespace metaseg
