#pragma once

// Run reports: per-epoch records, cross-validated summary, baselines, and
// their CSV / SVG renderings. All text output is byte-deterministic for a
// given report.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pbmr/error.hpp"

namespace pbmr {

struct EpochRecord {
  std::size_t fold = 0;
  std::size_t epoch = 0; ///< 1-based
  double train_loss = 0;
  double val_mae = 0;
  double val_rmse = 0;
  double val_r2 = 0; ///< NaN when the validation targets are constant
};

struct FoldSummary {
  std::size_t fold = 0;
  std::size_t best_epoch = 0;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  double mae = 0;
  double rmse = 0;
  double r2 = 0;
};

struct Baselines {
  double mean_predictor_mae = 0;
  double linreg_mae = 0;
  double linreg_rmse = 0;
  double linreg_r2 = 0;
};

struct SummaryMetrics {
  double mae = 0;
  double rmse = 0;
  double r2 = 0;
};

struct MetricsReport {
  std::vector<EpochRecord> records;
  std::vector<FoldSummary> folds;
  SummaryMetrics summary;
  std::optional<Baselines> baselines;
};

namespace detail {

inline nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double number_or_nan(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline std::string fmt_num(double v, const char* spec = "%.9g") {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

} // namespace detail

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& e : r.records) {
    records.push_back({{"fold", e.fold},
                       {"epoch", e.epoch},
                       {"train_loss", detail::finite_or_null(e.train_loss)},
                       {"val_mae", detail::finite_or_null(e.val_mae)},
                       {"val_rmse", detail::finite_or_null(e.val_rmse)},
                       {"val_r2", detail::finite_or_null(e.val_r2)}});
  }
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    folds.push_back({{"fold", f.fold},
                     {"best_epoch", f.best_epoch},
                     {"train_size", f.train_size},
                     {"val_size", f.val_size},
                     {"mae", detail::finite_or_null(f.mae)},
                     {"rmse", detail::finite_or_null(f.rmse)},
                     {"r2", detail::finite_or_null(f.r2)}});
  }
  nlohmann::json j = {{"records", records},
                      {"folds", folds},
                      {"summary",
                       {{"mae", detail::finite_or_null(r.summary.mae)},
                        {"rmse", detail::finite_or_null(r.summary.rmse)},
                        {"r2", detail::finite_or_null(r.summary.r2)},
                        {"aggregation", "mean over folds of each fold's best-validation-MAE epoch (cross-validated)"}}}};
  if (r.baselines) {
    const auto& b = *r.baselines;
    j["baselines"] = {{"mean_predictor_mae", detail::finite_or_null(b.mean_predictor_mae)},
                      {"linreg_mae", detail::finite_or_null(b.linreg_mae)},
                      {"linreg_rmse", detail::finite_or_null(b.linreg_rmse)},
                      {"linreg_r2", detail::finite_or_null(b.linreg_r2)}};
  }
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  try {
    for (const auto& e : j.at("records")) {
      r.records.push_back({e.at("fold").get<std::size_t>(), e.at("epoch").get<std::size_t>(),
                           detail::number_or_nan(e.at("train_loss")), detail::number_or_nan(e.at("val_mae")),
                           detail::number_or_nan(e.at("val_rmse")), detail::number_or_nan(e.at("val_r2"))});
    }
    if (j.contains("folds")) {
      for (const auto& f : j.at("folds")) {
        r.folds.push_back({f.at("fold").get<std::size_t>(), f.at("best_epoch").get<std::size_t>(),
                           f.at("train_size").get<std::size_t>(), f.at("val_size").get<std::size_t>(),
                           detail::number_or_nan(f.at("mae")), detail::number_or_nan(f.at("rmse")),
                           detail::number_or_nan(f.at("r2"))});
      }
    }
    const auto& s = j.at("summary");
    r.summary = {detail::number_or_nan(s.at("mae")), detail::number_or_nan(s.at("rmse")),
                 detail::number_or_nan(s.at("r2"))};
    if (j.contains("baselines")) {
      const auto& b = j.at("baselines");
      r.baselines = Baselines{detail::number_or_nan(b.at("mean_predictor_mae")), detail::number_or_nan(b.at("linreg_mae")),
                              detail::number_or_nan(b.at("linreg_rmse")), detail::number_or_nan(b.at("linreg_r2"))};
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report: ") + e.what());
  }
  return r;
}

inline std::string metrics_csv(const MetricsReport& r) {
  std::ostringstream os;
  os << "fold,epoch,train_loss,val_mae,val_rmse,val_r2\n";
  for (const auto& e : r.records) {
    os << e.fold << ',' << e.epoch << ',' << detail::fmt_num(e.train_loss) << ',' << detail::fmt_num(e.val_mae) << ','
       << detail::fmt_num(e.val_rmse) << ',' << detail::fmt_num(e.val_r2) << '\n';
  }
  return os.str();
}

/// One polyline on a chart.
struct CurveSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '&': out += "&amp;"; break;
    case '<': out += "&lt;"; break;
    case '>': out += "&gt;"; break;
    case '"': out += "&quot;"; break;
    default: out += c;
    }
  }
  return out;
}

inline const char* series_color(std::size_t i) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return palette[i % std::size(palette)];
}

} // namespace detail

/// Line chart with axes, five ticks per axis, and a legend.
inline std::string render_svg(const std::string& title, const std::string& x_label, const std::string& y_label,
                              const std::vector<CurveSeries>& series) {
  constexpr double width = 720, height = 420, left = 70, right = 150, top = 40, bottom = 50;
  const double plot_w = width - left - right, plot_h = height - top - bottom;
  double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
    }
  }
  if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y0 -= 0.5, y1 += 0.5;
  auto sx = [&](double x) { return left + (x - x0) / (x1 - x0) * plot_w; };
  auto sy = [&](double y) { return top + (1.0 - (y - y0) / (y1 - y0)) * plot_h; };
  using detail::fmt_num;

  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">" << detail::xml_escape(title)
     << "</text>\n";
  os << "<g stroke=\"black\" stroke-width=\"1\">\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + plot_h << "\" x2=\"" << left + plot_w << "\" y2=\"" << top + plot_h
     << "\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + plot_h << "\"/>\n";
  os << "</g>\n";
  for (int t = 0; t <= 4; ++t) {
    const double fx = x0 + (x1 - x0) * t / 4.0, fy = y0 + (y1 - y0) * t / 4.0;
    os << "<text x=\"" << fmt_num(sx(fx), "%.2f") << "\" y=\"" << fmt_num(top + plot_h + 18, "%.2f")
       << "\" text-anchor=\"middle\">" << fmt_num(fx, "%.4g") << "</text>\n";
    os << "<text x=\"" << fmt_num(left - 6, "%.2f") << "\" y=\"" << fmt_num(sy(fy) + 4, "%.2f")
       << "\" text-anchor=\"end\">" << fmt_num(fy, "%.4g") << "</text>\n";
  }
  os << "<text x=\"" << left + plot_w / 2 << "\" y=\"" << height - 10 << "\" text-anchor=\"middle\">"
     << detail::xml_escape(x_label) << "</text>\n";
  os << "<text x=\"16\" y=\"" << top + plot_h / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
     << top + plot_h / 2 << ")\">" << detail::xml_escape(y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    os << "<polyline fill=\"none\" stroke=\"" << detail::series_color(i) << "\" stroke-width=\"1.5\" points=\"";
    bool first = true;
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      os << (first ? "" : " ") << fmt_num(sx(x), "%.2f") << ',' << fmt_num(sy(y), "%.2f");
      first = false;
    }
    os << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(i);
    os << "<line x1=\"" << left + plot_w + 10 << "\" y1=\"" << fmt_num(ly, "%.2f") << "\" x2=\"" << left + plot_w + 30
       << "\" y2=\"" << fmt_num(ly, "%.2f") << "\" stroke=\"" << detail::series_color(i) << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + plot_w + 34 << "\" y=\"" << fmt_num(ly + 4, "%.2f") << "\">"
       << detail::xml_escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << text;
  if (!out) throw RuntimeFailure("failed writing " + path.string());
}

inline void prepare_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (!std::filesystem::is_directory(dir)) throw RuntimeFailure("cannot create directory " + dir.string());
}

struct MetricAxis {
  const char* file;
  const char* title;
  double EpochRecord::*field;
};

inline constexpr MetricAxis kMetricAxes[] = {
    {"mae.svg", "Validation MAE", &EpochRecord::val_mae},
    {"rmse.svg", "Validation RMSE", &EpochRecord::val_rmse},
    {"r2.svg", "Validation R^2", &EpochRecord::val_r2},
};

} // namespace detail

/// mae.svg, rmse.svg and r2.svg (one polyline per fold) plus metrics.csv.
inline void render_curves(const MetricsReport& report, const std::filesystem::path& out_dir) {
  if (report.records.empty()) throw ValidationError("render_curves: report has no epoch records");
  detail::prepare_dir(out_dir);
  std::size_t folds = 0;
  for (const auto& e : report.records) folds = std::max(folds, e.fold + 1);
  for (const auto& axis : detail::kMetricAxes) {
    std::vector<CurveSeries> series(folds);
    for (std::size_t f = 0; f < folds; ++f) series[f].label = "fold " + std::to_string(f);
    for (const auto& e : report.records)
      series[e.fold].points.emplace_back(static_cast<double>(e.epoch), e.*(axis.field));
    std::erase_if(series, [](const CurveSeries& s) { return s.points.empty(); });
    detail::write_text(out_dir / axis.file, render_svg(axis.title, "epoch", axis.title, series));
  }
  detail::write_text(out_dir / "metrics.csv", metrics_csv(report));
}

/// Several runs on one chart: each run is a single polyline with its folds
/// laid end to end, so the curve restarts at every fold boundary.
inline void render_comparison(const std::vector<std::pair<std::string, MetricsReport>>& runs,
                              const std::filesystem::path& out_dir) {
  if (runs.empty()) throw ValidationError("render_comparison: no runs");
  for (const auto& [label, r] : runs)
    if (r.records.empty()) throw ValidationError("render_comparison: run '" + label + "' has no epoch records");
  detail::prepare_dir(out_dir);
  for (const auto& axis : detail::kMetricAxes) {
    std::vector<CurveSeries> series;
    for (const auto& [label, r] : runs) {
      std::size_t epochs = 0;
      for (const auto& e : r.records) epochs = std::max(epochs, e.epoch);
      CurveSeries s{label, {}};
      for (const auto& e : r.records)
        s.points.emplace_back(static_cast<double>(e.fold * epochs + e.epoch), e.*(axis.field));
      series.push_back(std::move(s));
    }
    detail::write_text(out_dir / axis.file, render_svg(axis.title, "epoch (folds concatenated)", axis.title, series));
  }
}

} // namespace pbmr
