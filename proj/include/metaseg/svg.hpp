#pragma once

// Minimal standalone SVG line plots for ROC / PR / incremental curves.

#include <algorithm>
#include <cstdio>
#include <string>
#include <vector>

#include "metaseg/analysis.hpp"

namespace metaseg::svg {

struct Series {
  std::string name;
  std::vector<CurvePoint> points;
  std::string color = "#1f77b4";
  bool dashed = false;
};

struct Axes {
  std::string title;
  std::string x_label;
  std::string y_label;
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
};

namespace detail {
inline std::string fixed6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline std::string escape(const std::string& s) {
  std::string out;
  for (char ch : s) {
    switch (ch) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += ch;
    }
  }
  return out;
}
}  // namespace detail

inline constexpr double kWidth = 480, kHeight = 360, kLeft = 60, kRight = 20, kTop = 36, kBottom = 48;

/// One panel; polyline coordinates carry 6 decimals.
inline std::string panel(const Axes& axes, const std::vector<Series>& series, double x_offset = 0) {
  const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
  const double dx = axes.x_max > axes.x_min ? axes.x_max - axes.x_min : 1.0;
  const double dy = axes.y_max > axes.y_min ? axes.y_max - axes.y_min : 1.0;
  auto px = [&](double x) { return x_offset + kLeft + (std::clamp(x, axes.x_min, axes.x_max) - axes.x_min) / dx * pw; };
  auto py = [&](double y) { return kTop + ph - (std::clamp(y, axes.y_min, axes.y_max) - axes.y_min) / dy * ph; };
  using detail::fixed6;
  std::string out;
  out += "<g>\n";
  out += "<rect x=\"" + fixed6(x_offset + kLeft) + "\" y=\"" + fixed6(kTop) + "\" width=\"" + fixed6(pw) +
         "\" height=\"" + fixed6(ph) + "\" fill=\"none\" stroke=\"#333\"/>\n";
  out += "<text x=\"" + fixed6(x_offset + kWidth / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         detail::escape(axes.title) + "</text>\n";
  out += "<text x=\"" + fixed6(x_offset + kLeft + pw / 2) + "\" y=\"" + fixed6(kHeight - 12) +
         "\" text-anchor=\"middle\" font-size=\"12\">" + detail::escape(axes.x_label) + "</text>\n";
  out += "<text x=\"14\" y=\"" + fixed6(kTop + ph / 2) + "\" font-size=\"12\" transform=\"rotate(-90 " +
         fixed6(x_offset + 14) + " " + fixed6(kTop + ph / 2) + ")\">" + detail::escape(axes.y_label) + "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double fx = axes.x_min + dx * i / 4, fy = axes.y_min + dy * i / 4;
    char lab[32];
    std::snprintf(lab, sizeof lab, "%g", fx);
    out += "<text x=\"" + fixed6(px(fx)) + "\" y=\"" + fixed6(kTop + ph + 16) +
           "\" text-anchor=\"middle\" font-size=\"10\">" + lab + "</text>\n";
    std::snprintf(lab, sizeof lab, "%g", fy);
    out += "<text x=\"" + fixed6(x_offset + kLeft - 6) + "\" y=\"" + fixed6(py(fy) + 3) +
           "\" text-anchor=\"end\" font-size=\"10\">" + lab + "</text>\n";
  }
  double legend_y = kTop + 14;
  for (const auto& s : series) {
    out += "<polyline fill=\"none\" stroke=\"" + s.color + "\" stroke-width=\"1.5\"" +
           (s.dashed ? " stroke-dasharray=\"6,4\"" : "") + " points=\"";
    for (std::size_t i = 0; i < s.points.size(); ++i)
      out += (i ? " " : "") + fixed6(px(s.points[i].x)) + "," + fixed6(py(s.points[i].y));
    out += "\"/>\n";
    out += "<text x=\"" + fixed6(x_offset + kLeft + pw - 6) + "\" y=\"" + fixed6(legend_y) +
           "\" text-anchor=\"end\" font-size=\"11\" fill=\"" + s.color + "\">" + detail::escape(s.name) + "</text>\n";
    legend_y += 14;
  }
  out += "</g>\n";
  return out;
}

/// Side-by-side panels in one document.
inline std::string document(const std::vector<std::pair<Axes, std::vector<Series>>>& panels) {
  const double total_w = kWidth * static_cast<double>(std::max<std::size_t>(1, panels.size()));
  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fixed6(total_w) +
                    "\" height=\"" + detail::fixed6(kHeight) + "\" viewBox=\"0 0 " + detail::fixed6(total_w) + " " +
                    detail::fixed6(kHeight) + "\">\n";
  out += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (std::size_t i = 0; i < panels.size(); ++i)
    out += panel(panels[i].first, panels[i].second, kWidth * static_cast<double>(i));
  out += "</svg>\n";
  return out;
}

/// ROC and PR panels; the PR panel carries the prevalence baseline dashed.
inline std::string roc_pr_plot(std::span<const double> scores, std::span<const std::uint8_t> labels,
                               const std::string& name) {
  const auto roc = roc_curve(scores, labels);
  const auto pr = pr_curve(scores, labels);
  const auto r = evaluate_scores(scores, labels, false);
  const double base = r.prevalence();
  return document({
      {{"ROC", "false positive rate", "true positive rate"},
       {{name, roc}, {"random", {{0, 0}, {1, 1}}, "#d62728", true}}},
      {{"Precision-recall", "recall", "precision"},
       {{name, pr}, {"random", {{0, base}, {1, base}}, "#d62728", true}}},
  });
}

/// AUROC and AUPRC against the number of leading LARS metrics.
inline std::string incremental_plot(const std::vector<double>& auroc, const std::vector<double>& auprc,
                                    const std::string& name) {
  std::vector<CurvePoint> a, b;
  for (std::size_t i = 0; i < auroc.size(); ++i) a.push_back({static_cast<double>(i + 1), auroc[i]});
  for (std::size_t i = 0; i < auprc.size(); ++i) b.push_back({static_cast<double>(i + 1), auprc[i]});
  const double n = static_cast<double>(std::max<std::size_t>(2, auroc.size()));
  return document({
      {{"AUROC", "number of metrics", "AUROC", 1, n, 0, 1}, {{name, a}}},
      {{"AUPRC", "number of metrics", "AUPRC", 1, n, 0, 1}, {{name, b}}},
  });
}

}  // namespace metaseg::svg
