#include "interopt/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace interopt {

namespace {

std::string xml_escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
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

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string short_value(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

nlohmann::json plan_json(const WellPlan& plan, const std::vector<std::string>& names) {
  nlohmann::json before = nlohmann::json::object();
  nlohmann::json after = nlohmann::json::object();
  nlohmann::json rounded = nlohmann::json::object();
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto idx = static_cast<Eigen::Index>(i);
    before[names[i]] = plan.before_adjustable(idx);
    after[names[i]] = plan.after_adjustable(idx);
    rounded[names[i]] = plan.after_rounded(idx);
  }
  return {{"before_target", plan.before_target},
          {"after_target", plan.after_target},
          {"improvement_rate", plan.improvement_rate},
          {"before", before},
          {"after", after},
          {"after_rounded", rounded}};
}

std::vector<std::string> adjustable_names(const FeatureSchema& schema) {
  std::vector<std::string> names;
  for (std::size_t pos : schema.adjustable_inputs()) {
    names.push_back(schema.input(pos).name);
  }
  return names;
}

std::vector<std::string> input_names(const FeatureSchema& schema) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < schema.input_count(); ++i) {
    names.push_back(schema.input(i).name);
  }
  return names;
}

}  // namespace

GlobalImportance campaign_importance(const CampaignReport& report,
                                     const FeatureSchema& schema) {
  return global_shapley(report.attributions, input_names(schema));
}

std::string campaign_json(const CampaignReport& report, const FeatureSchema& schema) {
  const std::vector<std::string> names = adjustable_names(schema);
  const std::vector<std::string> labels = improvement_bucket_labels();

  nlohmann::json distribution = nlohmann::json::array();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    distribution.push_back(
        {{"bucket", labels[i]}, {"count", report.summary.histogram[i]}});
  }

  const GlobalImportance importance = campaign_importance(report, schema);
  nlohmann::json importance_json = nlohmann::json::array();
  for (std::size_t rank : importance.descending_order) {
    importance_json.push_back(
        {{"feature", importance.names[rank]},
         {"mean_abs_shap", importance.mean_abs_phi(static_cast<Eigen::Index>(rank))}});
  }

  nlohmann::json wells = nlohmann::json::array();
  for (const WellResult& well : report.wells) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const BlockSummary& b : well.trace.blocks) {
      blocks.push_back({{"block", b.block},
                        {"entry_objective", b.entry_objective},
                        {"exit_objective", b.exit_objective},
                        {"best_objective", b.best_objective},
                        {"committed", b.committed},
                        {"aborted", b.aborted},
                        {"best_so_far", b.best_so_far}});
    }
    wells.push_back({{"id", well.converged.id},
                     {"outcome", to_string(well.outcome)},
                     {"initial_objective", well.trace.initial_objective},
                     {"initial_predicted_target", well.trace.initial_predicted_target},
                     {"converged", plan_json(well.converged, names)},
                     {"in_process", plan_json(well.in_process, names)},
                     {"blocks", blocks},
                     {"iteration_count", well.trace.iterations.size()}});
  }

  nlohmann::json doc = {
      {"format", "interopt-campaign-v1"},
      {"direction", to_string(schema.objective_direction())},
      {"adjustable_features", names},
      {"summary",
       {{"n_wells", report.summary.n_wells},
        {"n_improved", report.summary.n_improved},
        {"n_no_improvement", report.summary.n_no_improvement},
        {"n_not_converged", report.summary.n_not_converged},
        {"mean_improvement_rate", report.summary.mean_improvement_rate}}},
      {"distribution", distribution},
      {"global_importance", importance_json},
      {"wells", wells}};
  return doc.dump(2) + "\n";
}

std::string wells_csv(const CampaignReport& report, const FeatureSchema& schema) {
  const std::vector<std::string> names = adjustable_names(schema);
  std::ostringstream out;
  out << "id,outcome,before_target,after_target,improvement_rate,"
         "in_process_target,in_process_improvement_rate";
  for (const std::string& n : names) out << ",before_" << n;
  for (const std::string& n : names) out << ",after_" << n;
  out << "\n";
  for (const WellResult& well : report.wells) {
    const WellPlan& plan = well.converged;
    out << plan.id << ',' << to_string(well.outcome) << ','
        << format_double(plan.before_target) << ',' << format_double(plan.after_target)
        << ',' << format_double(plan.improvement_rate) << ','
        << format_double(well.in_process.after_target) << ','
        << format_double(well.in_process.improvement_rate);
    for (Eigen::Index i = 0; i < plan.before_adjustable.size(); ++i) {
      out << ',' << format_double(plan.before_adjustable(i));
    }
    for (Eigen::Index i = 0; i < plan.after_rounded.size(); ++i) {
      out << ',' << format_double(plan.after_rounded(i));
    }
    out << "\n";
  }
  return out.str();
}

std::string distribution_csv(const CampaignSummary& summary) {
  const std::vector<std::string> labels = improvement_bucket_labels();
  std::ostringstream out;
  out << "bucket,count\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out << labels[i] << ',' << summary.histogram[i] << "\n";
  }
  return out.str();
}

std::string importance_csv(const GlobalImportance& importance) {
  std::ostringstream out;
  out << "rank,feature,mean_abs_shap\n";
  std::size_t rank = 1;
  for (std::size_t idx : importance.descending_order) {
    out << rank++ << ',' << importance.names[idx] << ','
        << format_double(importance.mean_abs_phi(static_cast<Eigen::Index>(idx)))
        << "\n";
  }
  return out.str();
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "block_optimization,adaptive_step,not_converged,no_improvement,"
         "mean_improvement_rate\n";
  for (const AblationRow& row : rows) {
    out << (row.block_optimization ? 1 : 0) << ',' << (row.adaptive_step ? 1 : 0) << ','
        << row.not_converged << ',' << row.no_improvement << ','
        << format_double(row.mean_improvement_rate) << "\n";
  }
  return out.str();
}

std::string attributions_csv(const std::vector<std::string>& ids,
                             const std::vector<double>& predictions,
                             const std::vector<ShapleyAttribution>& attributions,
                             const FeatureSchema& schema) {
  if (ids.size() != attributions.size() || ids.size() != predictions.size()) {
    fail(ErrorKind::shape_mismatch, "attribution table rows are misaligned");
  }
  const std::vector<std::string> names = input_names(schema);
  std::ostringstream out;
  out << "id,prediction,base_value";
  for (const std::string& n : names) out << ",phi_" << n;
  for (const std::string& n : names) out << ",se_" << n;
  out << "\n";
  for (std::size_t r = 0; r < ids.size(); ++r) {
    const ShapleyAttribution& a = attributions[r];
    if (a.phi.size() != static_cast<Eigen::Index>(names.size())) {
      fail(ErrorKind::shape_mismatch, "attribution width does not match the schema");
    }
    out << ids[r] << ',' << format_double(predictions[r]) << ','
        << format_double(a.base_value);
    for (Eigen::Index i = 0; i < a.phi.size(); ++i) {
      out << ',' << format_double(a.phi(i));
    }
    for (Eigen::Index i = 0; i < a.phi.size(); ++i) {
      out << ',' << format_double(a.std_error.size() == a.phi.size() ? a.std_error(i) : 0.0);
    }
    out << "\n";
  }
  return out.str();
}

std::string well_trace_csv(const OptimizationTrace& trace) {
  std::ostringstream out;
  out << "block,iteration,predicted_target,objective,step,accepted\n";
  out << "0,0," << format_double(trace.initial_predicted_target) << ','
      << format_double(trace.initial_objective) << ",0,1\n";
  for (const IterationPoint& pt : trace.iterations) {
    out << pt.block << ',' << pt.iteration << ',' << format_double(pt.predicted_target)
        << ',' << format_double(pt.objective) << ',' << format_double(pt.step) << ','
        << (pt.accepted ? 1 : 0) << "\n";
  }
  return out.str();
}

std::string campaign_traces_csv(const CampaignReport& report) {
  std::ostringstream out;
  out << "id,block,iteration,predicted_target,objective,step,accepted\n";
  for (const WellResult& well : report.wells) {
    out << well.converged.id << ",0,0,"
        << format_double(well.trace.initial_predicted_target) << ','
        << format_double(well.trace.initial_objective) << ",0,1\n";
    for (const IterationPoint& pt : well.trace.iterations) {
      out << well.converged.id << ',' << pt.block << ',' << pt.iteration << ','
          << format_double(pt.predicted_target) << ',' << format_double(pt.objective)
          << ',' << format_double(pt.step) << ',' << (pt.accepted ? 1 : 0) << "\n";
    }
  }
  return out.str();
}

namespace {

const char* kPalette[] = {"#4878a8", "#d0605e", "#5ba053", "#a675a1",
                          "#e49444", "#85b6b2", "#6a6a6a", "#c9b14a"};

std::string svg_open(double width, double height) {
  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << coord(width)
      << "\" height=\"" << coord(height) << "\" viewBox=\"0 0 " << coord(width) << ' '
      << coord(height) << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"#ffffff\"/>\n";
  return out.str();
}

std::string svg_title(const std::string& title, double width) {
  std::ostringstream out;
  out << "<text x=\"" << coord(width / 2)
      << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"16\" fill=\"#222\">"
      << xml_escape(title) << "</text>\n";
  return out.str();
}

}  // namespace

std::string svg_bar_chart(const std::string& title,
                          const std::vector<std::string>& labels,
                          const std::vector<double>& values) {
  if (labels.size() != values.size()) {
    fail(ErrorKind::shape_mismatch, "bar chart labels and values differ in length");
  }
  const double bar_h = 22.0, gap = 8.0, left = 190.0, right = 70.0, top = 44.0;
  const double width = 640.0;
  const double height = top + labels.size() * (bar_h + gap) + 16.0;
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, std::abs(v));
  if (vmax <= 0.0) vmax = 1.0;

  std::ostringstream out;
  out << svg_open(width, height) << svg_title(title, width);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double y = top + i * (bar_h + gap);
    const double w = (width - left - right) * std::abs(values[i]) / vmax;
    out << "<text x=\"" << coord(left - 8) << "\" y=\"" << coord(y + bar_h - 6)
        << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"12\" "
           "fill=\"#222\">"
        << xml_escape(labels[i]) << "</text>\n";
    out << "<rect x=\"" << coord(left) << "\" y=\"" << coord(y) << "\" width=\""
        << coord(w) << "\" height=\"" << coord(bar_h) << "\" fill=\"" << kPalette[0]
        << "\"/>\n";
    out << "<text x=\"" << coord(left + w + 6) << "\" y=\"" << coord(y + bar_h - 6)
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#444\">"
        << short_value(values[i]) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string svg_histogram(const std::string& title,
                          const std::vector<std::string>& labels,
                          const std::vector<std::size_t>& counts) {
  if (labels.size() != counts.size()) {
    fail(ErrorKind::shape_mismatch, "histogram labels and counts differ in length");
  }
  const double width = 560.0, height = 340.0;
  const double left = 50.0, bottom = 50.0, top = 48.0, right = 20.0;
  std::size_t cmax = 1;
  for (std::size_t c : counts) cmax = std::max(cmax, c);
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;
  const double slot = plot_w / static_cast<double>(labels.size());
  const double bar_w = slot * 0.7;

  std::ostringstream out;
  out << svg_open(width, height) << svg_title(title, width);
  out << "<line x1=\"" << coord(left) << "\" y1=\"" << coord(height - bottom)
      << "\" x2=\"" << coord(width - right) << "\" y2=\"" << coord(height - bottom)
      << "\" stroke=\"#888\"/>\n";
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double h = plot_h * static_cast<double>(counts[i]) / static_cast<double>(cmax);
    const double x = left + i * slot + (slot - bar_w) / 2.0;
    const double y = height - bottom - h;
    out << "<rect x=\"" << coord(x) << "\" y=\"" << coord(y) << "\" width=\""
        << coord(bar_w) << "\" height=\"" << coord(h) << "\" fill=\"" << kPalette[0]
        << "\"/>\n";
    out << "<text x=\"" << coord(x + bar_w / 2) << "\" y=\"" << coord(y - 5)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
           "fill=\"#222\">"
        << counts[i] << "</text>\n";
    out << "<text x=\"" << coord(x + bar_w / 2) << "\" y=\""
        << coord(height - bottom + 18)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" "
           "fill=\"#222\">"
        << xml_escape(labels[i]) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

std::string svg_lines(const std::string& title, const std::string& y_label,
                      const std::vector<LineSeries>& series) {
  const double width = 680.0, height = 380.0;
  const double left = 64.0, bottom = 44.0, top = 48.0, right = 150.0;
  const double plot_w = width - left - right;
  const double plot_h = height - top - bottom;

  double vmin = std::numeric_limits<double>::infinity();
  double vmax = -std::numeric_limits<double>::infinity();
  std::size_t n_max = 2;
  for (const LineSeries& s : series) {
    n_max = std::max(n_max, s.values.size());
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      vmin = std::min(vmin, v);
      vmax = std::max(vmax, v);
    }
  }
  if (!std::isfinite(vmin) || !std::isfinite(vmax)) {
    vmin = 0.0;
    vmax = 1.0;
  }
  double span = vmax - vmin;
  if (span <= 0.0) span = std::max(1e-12, std::abs(vmax));
  vmin -= 0.05 * span;
  vmax += 0.05 * span;
  span = vmax - vmin;

  auto x_at = [&](std::size_t i) {
    return left + plot_w * static_cast<double>(i) / static_cast<double>(n_max - 1);
  };
  auto y_at = [&](double v) { return height - bottom - plot_h * (v - vmin) / span; };

  std::ostringstream out;
  out << svg_open(width, height) << svg_title(title, width);
  out << "<line x1=\"" << coord(left) << "\" y1=\"" << coord(top) << "\" x2=\""
      << coord(left) << "\" y2=\"" << coord(height - bottom) << "\" stroke=\"#888\"/>\n";
  out << "<line x1=\"" << coord(left) << "\" y1=\"" << coord(height - bottom)
      << "\" x2=\"" << coord(width - right) << "\" y2=\"" << coord(height - bottom)
      << "\" stroke=\"#888\"/>\n";
  out << "<text x=\"16\" y=\"" << coord(top + plot_h / 2)
      << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"#222\" "
         "transform=\"rotate(-90 16 "
      << coord(top + plot_h / 2) << ")\" text-anchor=\"middle\">" << xml_escape(y_label)
      << "</text>\n";
  out << "<text x=\"" << coord(vmax >= 1e4 ? left + 4 : left - 6) << "\" y=\""
      << coord(top + 4) << "\" font-family=\"sans-serif\" font-size=\"10\" "
      << "fill=\"#666\" text-anchor=\"start\">" << short_value(vmax) << "</text>\n";
  out << "<text x=\"" << coord(left + 4) << "\" y=\"" << coord(height - bottom - 4)
      << "\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#666\" "
         "text-anchor=\"start\">"
      << short_value(vmin) << "</text>\n";

  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % (sizeof(kPalette) / sizeof(kPalette[0]))];
    std::ostringstream points;
    for (std::size_t i = 0; i < series[s].values.size(); ++i) {
      if (!std::isfinite(series[s].values[i])) continue;
      points << coord(x_at(i)) << ',' << coord(y_at(series[s].values[i])) << ' ';
    }
    out << "<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"1.5\" points=\"" << points.str() << "\"/>\n";
    const double ly = top + 14.0 * static_cast<double>(s);
    out << "<line x1=\"" << coord(width - right + 10) << "\" y1=\"" << coord(ly)
        << "\" x2=\"" << coord(width - right + 28) << "\" y2=\"" << coord(ly)
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << coord(width - right + 34) << "\" y=\"" << coord(ly + 4)
        << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#222\">"
        << xml_escape(series[s].name) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

nlohmann::json RunManifest::to_json() const {
  nlohmann::json in_files = nlohmann::json::array();
  for (const auto& [path, digest] : inputs) {
    in_files.push_back({{"path", path}, {"sha256", digest}});
  }
  nlohmann::json files = nlohmann::json::array();
  for (const auto& [name, digest] : artifacts) {
    files.push_back({{"name", name}, {"sha256", digest}});
  }
  return {{"format", "interopt-manifest-v1"},
          {"command", command},
          {"out_dir", out_dir},
          {"seed", seed},
          {"duration_seconds", duration_seconds},
          {"config", config},
          {"inputs", in_files},
          {"artifacts", files}};
}

ReportWriter::ReportWriter(std::string dir) : dir_(std::move(dir)) {
  if (dir_.empty()) fail(ErrorKind::precondition, "report directory must be named");
  if (dir_.back() == '/') dir_.pop_back();
}

void ReportWriter::note_input(const std::string& path) {
  inputs_.emplace_back(path, sha256_hex(read_file(path)));
}

void ReportWriter::write_text(const std::string& name, const std::string& content) {
  write_file_atomic(dir_ + "/" + name, content);
  artifacts_.emplace_back(name, sha256_hex(content));
}

RunManifest ReportWriter::finish(const std::string& command,
                                 const nlohmann::json& config, std::uint64_t seed,
                                 double duration_seconds) {
  RunManifest manifest;
  manifest.command = command;
  manifest.out_dir = dir_;
  manifest.seed = seed;
  manifest.duration_seconds = duration_seconds;
  manifest.config = config;
  manifest.inputs = inputs_;
  manifest.artifacts = artifacts_;
  write_file_atomic(dir_ + "/manifest.json", manifest.to_json().dump(2) + "\n");
  return manifest;
}

RunManifest write_campaign_bundle(const std::string& dir, const CampaignReport& report,
                                  const FeatureSchema& schema,
                                  const nlohmann::json& effective_config,
                                  std::uint64_t seed, double duration_seconds,
                                  const std::vector<std::string>& input_paths) {
  ReportWriter writer(dir);
  for (const std::string& path : input_paths) writer.note_input(path);
  writer.write_text("campaign.json", campaign_json(report, schema));
  writer.write_text("wells.csv", wells_csv(report, schema));
  writer.write_text("traces.csv", campaign_traces_csv(report));
  writer.write_text("distribution.csv", distribution_csv(report.summary));

  const GlobalImportance importance = campaign_importance(report, schema);
  writer.write_text("importance.csv", importance_csv(importance));

  std::vector<std::string> imp_labels;
  std::vector<double> imp_values;
  for (std::size_t idx : importance.descending_order) {
    imp_labels.push_back(importance.names[idx]);
    imp_values.push_back(importance.mean_abs_phi(static_cast<Eigen::Index>(idx)));
  }
  writer.write_text("importance.svg",
                    svg_bar_chart("Mean |attribution| by feature", imp_labels, imp_values));
  writer.write_text(
      "improvement_histogram.svg",
      svg_histogram("Predicted improvement distribution", improvement_bucket_labels(),
                    report.summary.histogram));

  std::vector<LineSeries> curves;
  const std::size_t curve_cap = 12;
  for (const WellResult& well : report.wells) {
    if (curves.size() >= curve_cap) break;
    LineSeries s;
    s.name = well.converged.id;
    s.values.push_back(well.trace.initial_objective);
    for (const IterationPoint& pt : well.trace.iterations) {
      s.values.push_back(pt.objective);
    }
    curves.push_back(std::move(s));
  }
  writer.write_text("objective_curves.svg",
                    svg_lines("Ensemble objective per iteration", "objective", curves));

  return writer.finish("optimize", effective_config, seed, duration_seconds);
}

}  // namespace interopt
