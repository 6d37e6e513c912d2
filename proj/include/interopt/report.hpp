#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "interopt/interopt.hpp"

namespace interopt {

// Text emitters keep every output deterministic: no timestamps, no locale,
// shortest round-trip doubles. Wall-clock time lives only in the manifest.

std::string campaign_json(const CampaignReport& report, const FeatureSchema& schema);
std::string wells_csv(const CampaignReport& report, const FeatureSchema& schema);
std::string distribution_csv(const CampaignSummary& summary);
std::string importance_csv(const GlobalImportance& importance);
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string attributions_csv(const std::vector<std::string>& ids,
                             const std::vector<double>& predictions,
                             const std::vector<ShapleyAttribution>& attributions,
                             const FeatureSchema& schema);
std::string well_trace_csv(const OptimizationTrace& trace);
std::string campaign_traces_csv(const CampaignReport& report);

GlobalImportance campaign_importance(const CampaignReport& report,
                                     const FeatureSchema& schema);

// Minimal standalone SVGs, enough for a quick look in a browser.
struct LineSeries {
  std::string name;
  std::vector<double> values;  // drawn against 0..n-1
};

std::string svg_bar_chart(const std::string& title,
                          const std::vector<std::string>& labels,
                          const std::vector<double>& values);
std::string svg_histogram(const std::string& title,
                          const std::vector<std::string>& labels,
                          const std::vector<std::size_t>& counts);
std::string svg_lines(const std::string& title, const std::string& y_label,
                      const std::vector<LineSeries>& series);

struct RunManifest {
  std::string command;
  std::string out_dir;
  std::uint64_t seed = 0;
  double duration_seconds = 0.0;
  nlohmann::json config;
  std::vector<std::pair<std::string, std::string>> inputs;     // path, sha256
  std::vector<std::pair<std::string, std::string>> artifacts;  // name, sha256

  nlohmann::json to_json() const;
};

// Collects artifacts for one output directory; every write is atomic and the
// file's digest lands in the manifest.
class ReportWriter {
 public:
  explicit ReportWriter(std::string dir);

  void note_input(const std::string& path);  // records the path and content hash
  void write_text(const std::string& name, const std::string& content);
  // writes manifest.json and returns the manifest that was written
  RunManifest finish(const std::string& command, const nlohmann::json& config,
                     std::uint64_t seed, double duration_seconds);

  const std::string& dir() const { return dir_; }

 private:
  std::string dir_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::vector<std::pair<std::string, std::string>> artifacts_;
};

// Convenience: write the standard campaign bundle (json, csv tables, svg
// charts, manifest) into dir.
RunManifest write_campaign_bundle(const std::string& dir, const CampaignReport& report,
                                  const FeatureSchema& schema,
                                  const nlohmann::json& effective_config,
                                  std::uint64_t seed, double duration_seconds,
                                  const std::vector<std::string>& input_paths = {});

}  // namespace interopt
