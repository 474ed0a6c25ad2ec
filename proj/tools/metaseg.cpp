// metaseg command line front end.
//
// Exit codes: 0 success, 1 usage error, 2 data or I/O error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "metaseg/metaseg.hpp"

namespace fs = std::filesystem;
using namespace metaseg;

namespace {

struct LabelFlags {
  int num_classes = 19;
  int ood_label = 254;
  int ignore_label = 255;

  void add(CLI::App* cmd, bool with_classes) {
    if (with_classes)
      cmd->add_option("--num-classes", num_classes, "number of in-distribution classes in the masks")
          ->capture_default_str()
          ->check(CLI::Range(2, 253));
    cmd->add_option("--ood-label", ood_label, "mask value marking OoD pixels")
        ->capture_default_str()
        ->check(CLI::Range(0, 255));
    cmd->add_option("--ignore-label", ignore_label, "mask value marking ignored pixels")
        ->capture_default_str()
        ->check(CLI::Range(0, 255));
  }

  MaskLabels labels() const {
    return MaskLabels{num_classes, static_cast<std::uint8_t>(ood_label), static_cast<std::uint8_t>(ignore_label)};
  }
};

struct TrainFlags {
  std::string kind = "logistic";
  TrainConfig cfg;

  void add(CLI::App* cmd) {
    cmd->add_option("--kind", kind, "meta classifier: logistic or mlp")
        ->capture_default_str()
        ->check(CLI::IsMember({"logistic", "mlp"}));
    cmd->add_option("--seed", cfg.seed, "seed for initialization and shuffling")->capture_default_str();
    cmd->add_option("--lr", cfg.learning_rate, "Adam learning rate")->capture_default_str()->check(CLI::NonNegativeNumber);
    cmd->add_option("--wd", cfg.weight_decay, "decoupled weight decay")->capture_default_str()->check(CLI::NonNegativeNumber);
    cmd->add_option("--epochs", cfg.epochs, "training epochs")->capture_default_str()->check(CLI::NonNegativeNumber);
    cmd->add_option("--batch", cfg.batch_size, "mini-batch size")->capture_default_str()->check(CLI::PositiveNumber);
  }
};

std::vector<std::string> ids_with(const fs::path& dir, const std::string& ext) {
  auto ids = list_ids(dir, ext);
  if (ids.empty()) throw DataError("no " + ext + " files in '" + dir.string() + "'");
  return ids;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "'");
}

void print_report(const EvalReport& r) { std::cout << encode_report_csv(r); }

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Meta classification of predicted OoD components in anomaly segmentation"};
  app.require_subcommand(1);
  app.fallthrough(false);

  // synth
  auto* synth = app.add_subcommand("synth", "generate synthetic probability maps and masks");
  SceneSpec spec;
  std::size_t count = 0;
  fs::path synth_out;
  synth->add_option("--count", count, "number of scenes")->required()->check(CLI::PositiveNumber);
  synth->add_option("--seed", spec.seed, "base seed; scene i uses seed + i")->capture_default_str();
  synth->add_option("--out", synth_out, "output directory for <id>.rast / <id>.pgm")->required();
  synth->add_option("--height", spec.height, "scene height")->capture_default_str();
  synth->add_option("--width", spec.width, "scene width")->capture_default_str();
  synth->add_option("--classes", spec.num_classes, "number of classes")->capture_default_str();
  synth->add_option("--blobs-min", spec.blob_count_min, "minimum true anomalies per scene")->capture_default_str();
  synth->add_option("--blobs-max", spec.blob_count_max, "maximum true anomalies per scene")->capture_default_str();
  synth->add_option("--blob-size-min", spec.blob_size_min, "minimum blob area in pixels")->capture_default_str();
  synth->add_option("--blob-size-max", spec.blob_size_max, "maximum blob area in pixels")->capture_default_str();
  synth->add_option("--anomaly-entropy", spec.anomaly_entropy, "normalized entropy of anomalies")->capture_default_str();
  synth->add_option("--background-entropy", spec.background_entropy, "upper normalized entropy of the background")
      ->capture_default_str();
  synth->add_option("--false-rate", spec.false_blob_rate, "expected false blobs per scene")->capture_default_str();
  synth->add_flag("--coupling", spec.nonlinear_coupling, "make the false-positive label a nonlinear function of metrics");
  LabelFlags synth_labels;
  synth_labels.add(synth, false);

  // score
  auto* score = app.add_subcommand("score", "probability maps -> anomaly score maps");
  fs::path score_in, score_out;
  score->add_option("--in", score_in, "directory of <id>.rast probability maps")->required()->check(CLI::ExistingDirectory);
  score->add_option("--out", score_out, "output directory for <id>.rast score maps")->required();

  // segments
  auto* segments = app.add_subcommand("segments", "score maps + masks -> component CSV");
  fs::path seg_scores, seg_masks, seg_out;
  double seg_t = 0.7;
  std::size_t seg_min = 1;
  LabelFlags seg_labels;
  segments->add_option("--scores", seg_scores, "directory of <id>.rast score maps")
      ->required()
      ->check(CLI::ExistingDirectory);
  segments->add_option("--masks", seg_masks, "directory of <id>.pgm masks")->required()->check(CLI::ExistingDirectory);
  segments->add_option("--t", seg_t, "anomaly threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  segments->add_option("--min-size", seg_min, "drop components with fewer pixels")->capture_default_str();
  segments->add_option("--out", seg_out, "component CSV")->required();
  seg_labels.add(segments, true);

  // metrics
  auto* metrics = app.add_subcommand("metrics", "samples -> metrics CSV");
  fs::path met_in, met_out;
  double met_t = 0.7;
  std::size_t met_min = 1;
  LabelFlags met_labels;
  metrics->add_option("--in", met_in, "directory of <id>.rast / <id>.pgm pairs")->required()->check(CLI::ExistingDirectory);
  metrics->add_option("--t", met_t, "anomaly threshold")->capture_default_str()->check(CLI::Range(0.0, 1.0));
  metrics->add_option("--min-size", met_min, "drop components with fewer pixels")->capture_default_str();
  metrics->add_option("--out", met_out, "metrics CSV")->required();
  met_labels.add(metrics, false);

  // train-meta
  auto* train_meta = app.add_subcommand("train-meta", "train a meta classifier on a metrics CSV");
  fs::path tm_mu, tm_out, tm_history;
  TrainFlags tm;
  train_meta->add_option("--mu", tm_mu, "metrics CSV")->required()->check(CLI::ExistingFile);
  train_meta->add_option("--out", tm_out, "model file")->required();
  train_meta->add_option("--history", tm_history, "optional CSV of mean loss per epoch");
  tm.add(train_meta);

  // eval-meta
  auto* eval_meta = app.add_subcommand("eval-meta", "evaluate a trained meta classifier");
  fs::path em_model, em_mu, em_out, em_plot;
  eval_meta->add_option("--model", em_model, "model file")->required()->check(CLI::ExistingFile);
  eval_meta->add_option("--mu", em_mu, "metrics CSV")->required()->check(CLI::ExistingFile);
  eval_meta->add_option("--out", em_out, "optional report CSV");
  eval_meta->add_option("--plot", em_plot, "optional ROC/PR SVG");

  // loo
  auto* loo = app.add_subcommand("loo", "leave-one-image-out evaluation");
  fs::path loo_mu, loo_out, loo_scores, loo_plot;
  TrainFlags loo_train;
  loo->add_option("--mu", loo_mu, "metrics CSV")->required()->check(CLI::ExistingFile);
  loo->add_option("--out", loo_out, "optional report CSV");
  loo->add_option("--scores-out", loo_scores, "optional CSV of held-out predictions");
  loo->add_option("--plot", loo_plot, "optional ROC/PR SVG");
  loo_train.add(loo);

  // lars
  auto* lars = app.add_subcommand("lars", "LARS entry order of the metrics");
  fs::path lars_mu, lars_out;
  lars->add_option("--mu", lars_mu, "metrics CSV")->required()->check(CLI::ExistingFile);
  lars->add_option("--out", lars_out, "ranking CSV")->required();

  // incremental
  auto* incremental = app.add_subcommand("incremental", "leave-one-out over growing LARS prefixes");
  fs::path inc_mu, inc_out, inc_plot;
  TrainFlags inc_train;
  incremental->add_option("--mu", inc_mu, "metrics CSV")->required()->check(CLI::ExistingFile);
  incremental->add_option("--out", inc_out, "curve CSV")->required();
  incremental->add_option("--plot", inc_plot, "optional SVG");
  inc_train.add(incremental);

  // filter-proxy
  auto* filter_proxy = app.add_subcommand("filter-proxy", "split OoD proxy images by OoD pixel fraction");
  fs::path fp_masks, fp_out;
  double fp_low = 0.2, fp_high = 0.8;
  LabelFlags fp_labels;
  filter_proxy->add_option("--masks", fp_masks, "directory of <id>.pgm masks")->required()->check(CLI::ExistingDirectory);
  filter_proxy->add_option("--low", fp_low, "fractions at or below go to 'low'")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  filter_proxy->add_option("--high", fp_high, "fractions at or above go to 'high'")
      ->capture_default_str()
      ->check(CLI::Range(0.0, 1.0));
  filter_proxy->add_option("--out", fp_out, "split CSV")->required();
  fp_labels.add(filter_proxy, true);

  // eval-pixel
  auto* eval_pixel = app.add_subcommand("eval-pixel", "pixel-level evaluation of score maps");
  fs::path ep_scores, ep_masks, ep_out, ep_plot;
  LabelFlags ep_labels;
  eval_pixel->add_option("--scores", ep_scores, "directory of <id>.rast score maps")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval_pixel->add_option("--masks", ep_masks, "directory of <id>.pgm masks")->required()->check(CLI::ExistingDirectory);
  eval_pixel->add_option("--out", ep_out, "optional report CSV");
  eval_pixel->add_option("--plot", ep_plot, "optional ROC/PR SVG");
  ep_labels.add(eval_pixel, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n";
    const CLI::App* failed = &app;
    for (const auto* sub : app.get_subcommands()) failed = sub;
    std::cerr << failed->help();
    return 1;
  }

  try {
    if (synth->parsed()) {
      save_samples(generate(spec, count), synth_out, synth_labels.labels());

    } else if (score->parsed()) {
      const auto ids = ids_with(score_in, ".rast");
      ensure_dir(score_out);
      parallel_for(ids.size(), [&](std::size_t i) {
        save_score_map(anomaly_score_map(load_probability_map(score_in / (ids[i] + ".rast"))),
                       score_out / (ids[i] + ".rast"));
      });

    } else if (segments->parsed()) {
      const auto ids = ids_with(seg_scores, ".rast");
      const auto cfg = ThresholdConfig::checked(seg_t);
      std::vector<std::string> rows(ids.size());
      parallel_for(ids.size(), [&](std::size_t i) {
        const ScoreMap s = load_score_map(seg_scores / (ids[i] + ".rast"));
        const LabelMask m = load_mask(seg_masks / (ids[i] + ".pgm"), seg_labels.labels(), s.dims());
        for (const auto& c : label_components(extract_components(s, cfg, seg_min), m)) {
          rows[i] += ids[i] + "," + std::to_string(c.id) + "," + std::to_string(c.size()) + "," +
                     std::to_string(c.interior.size()) + "," + std::to_string(c.boundary.size()) + "," +
                     std::to_string(c.bbox.row_min) + "," + std::to_string(c.bbox.row_max) + "," +
                     std::to_string(c.bbox.col_min) + "," + std::to_string(c.bbox.col_max) + "," +
                     io::format_real(component_iou(c, m)) + "," + (c.is_false_positive ? "1" : "0") + "\n";
        }
      });
      std::string out = "sample,component,size,size_in,size_bd,row_min,row_max,col_min,col_max,iou,false_positive\n";
      for (const auto& r : rows) out += r;
      io::write_file_atomic(seg_out, out);

    } else if (metrics->parsed()) {
      const SampleSet samples = load_samples(met_in, met_labels.labels());
      if (samples.size() == 0) throw DataError("no samples in '" + met_in.string() + "'");
      const int c = samples[0].probs.num_classes();
      for (const auto& s : samples)
        if (s.probs.num_classes() != c) throw DataError("samples disagree on the number of classes");
      save_metrics_csv(build_metrics_dataset(samples, ThresholdConfig::checked(met_t), MetricRegistry::standard(c), met_min),
                       met_out);

    } else if (train_meta->parsed()) {
      const auto r = train(parse_model_kind(tm.kind), load_metrics_csv(tm_mu), tm.cfg);
      print_warnings(r.warnings);
      save_model(r.model, tm_out);
      if (!tm_history.empty()) {
        std::string h = "epoch,loss\n";
        for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
          h += std::to_string(e + 1) + "," + io::format_real(r.epoch_loss[e]) + "\n";
        io::write_file_atomic(tm_history, h);
      }

    } else if (eval_meta->parsed()) {
      const MetaModel model = load_model(em_model);
      const MetricsDataset ds = load_metrics_csv(em_mu);
      if (!model.feature_names.empty() && model.feature_names != ds.registry.names())
        throw DataError("metrics CSV columns do not match the model's features");
      const EvalReport r = evaluate_components(model, ds);
      print_report(r);
      if (!em_out.empty()) io::write_file_atomic(em_out, encode_report_csv(r));
      if (!em_plot.empty()) {
        const Eigen::VectorXd p = predict_raw_batch(model, ds.rows);
        io::write_file_atomic(em_plot, svg::roc_pr_plot(std::span<const double>(p.data(), static_cast<std::size_t>(p.size())),
                                                        ds.labels, to_string(model.kind)));
      }

    } else if (loo->parsed()) {
      const MetricsDataset ds = load_metrics_csv(loo_mu);
      const LooResult r = leave_one_out(parse_model_kind(loo_train.kind), ds, loo_train.cfg);
      print_warnings(r.warnings);
      print_report(r.report);
      if (!loo_out.empty()) io::write_file_atomic(loo_out, encode_report_csv(r.report));
      if (!loo_scores.empty()) {
        std::string s = "row,group_id,label,fp_probability\n";
        for (std::size_t i = 0; i < ds.size(); ++i)
          s += std::to_string(i) + "," + ds.group_ids[i] + "," + std::to_string(static_cast<int>(ds.labels[i])) + "," +
               io::format_real(r.scores[i]) + "\n";
        io::write_file_atomic(loo_scores, s);
      }
      if (!loo_plot.empty()) io::write_file_atomic(loo_plot, svg::roc_pr_plot(r.scores, ds.labels, loo_train.kind));

    } else if (lars->parsed()) {
      const MetricsDataset ds = load_metrics_csv(lars_mu);
      const LarsOrdering ord = lars_order(ds);
      std::string out = "rank,metric,column,abs_correlation\n";
      for (std::size_t k = 0; k < ord.order.size(); ++k)
        out += std::to_string(k + 1) + "," + ds.registry.names()[ord.order[k]] + "," + std::to_string(ord.order[k]) +
               "," + io::format_real(ord.entry_correlations[k]) + "\n";
      io::write_file_atomic(lars_out, out);

    } else if (incremental->parsed()) {
      const MetricsDataset ds = load_metrics_csv(inc_mu);
      const IncrementalResult r = incremental_evaluation(parse_model_kind(inc_train.kind), ds, inc_train.cfg);
      std::string out = "num_metrics,added_metric,auroc,auprc\n";
      for (std::size_t i = 0; i < r.auroc.size(); ++i)
        out += std::to_string(i + 1) + "," + ds.registry.names()[r.ordering.order[i]] + "," + io::format_real(r.auroc[i]) +
               "," + io::format_real(r.auprc[i]) + "\n";
      io::write_file_atomic(inc_out, out);
      if (!inc_plot.empty()) io::write_file_atomic(inc_plot, svg::incremental_plot(r.auroc, r.auprc, inc_train.kind));

    } else if (filter_proxy->parsed()) {
      if (fp_low > fp_high) throw CLI::ValidationError("--low", "must not exceed --high");
      const auto ids = ids_with(fp_masks, ".pgm");
      std::vector<LabelMask> masks;
      for (const auto& id : ids) masks.push_back(load_mask(fp_masks / (id + ".pgm"), fp_labels.labels()));
      const ProxySplit split = split_by_ood_fraction(masks, ids, fp_low, fp_high);
      std::string out = "id,ood_fraction,group\n";
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const double f = split.fractions[i];
        out += ids[i] + "," + io::format_real(f) + "," + (f <= fp_low ? "low" : f >= fp_high ? "high" : "rest") + "\n";
      }
      io::write_file_atomic(fp_out, out);

    } else if (eval_pixel->parsed()) {
      const auto ids = ids_with(ep_scores, ".rast");
      std::vector<ScoreMap> scores(ids.size());
      std::vector<LabelMask> masks(ids.size());
      parallel_for(ids.size(), [&](std::size_t i) {
        scores[i] = load_score_map(ep_scores / (ids[i] + ".rast"));
        masks[i] = load_mask(ep_masks / (ids[i] + ".pgm"), ep_labels.labels(), scores[i].dims());
      });
      const EvalReport r = evaluate_pixels(scores, masks);
      print_report(r);
      if (!ep_out.empty()) io::write_file_atomic(ep_out, encode_report_csv(r));
      if (!ep_plot.empty()) {
        std::vector<double> pooled;
        std::vector<std::uint8_t> labels;
        for (std::size_t i = 0; i < ids.size(); ++i) {
          const auto s = scores[i].scores();
          const auto m = masks[i].labels();
          for (std::size_t k = 0; k < s.size(); ++k) {
            if (m[k] == LabelMask::kIgnore) continue;
            pooled.push_back(s[k]);
            labels.push_back(m[k] == LabelMask::kOod ? 1 : 0);
          }
        }
        io::write_file_atomic(ep_plot, svg::roc_pr_plot(pooled, labels, "entropy"));
      }
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
