#include "interopt/cli.hpp"

#include <chrono>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "interopt/dataset.hpp"
#include "interopt/emulator.hpp"
#include "interopt/interopt.hpp"
#include "interopt/jsonio.hpp"
#include "interopt/report.hpp"
#include "interopt/shapley.hpp"

namespace interopt {

namespace {

const char* kind_label(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::schema_mismatch: return "schema-mismatch";
    case ErrorKind::duplicate_key: return "duplicate-key";
    case ErrorKind::degenerate_feature: return "degenerate-feature";
    case ErrorKind::bounds: return "bounds";
    case ErrorKind::shape_mismatch: return "shape-mismatch";
    case ErrorKind::divergence: return "divergence";
    case ErrorKind::numerical_failure: return "numerical-failure";
    case ErrorKind::precondition: return "precondition";
    case ErrorKind::io: return "io";
    case ErrorKind::integrity: return "integrity";
  }
  return "error";
}

int usage_error(const std::string& message) {
  std::cerr << "usage error: " << message << "\n";
  return 2;
}

double elapsed_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
      .count();
}

// non-finite doubles have no JSON representation; fall back to strings
nlohmann::json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

struct SynthArgs {
  std::string schema_path;
  std::string out_dir;
  long long count = -1;
  std::uint64_t seed = 0;
  double noise = 0.05;
  bool write_default_schema = false;
  bool quiet = false;
};

int run_synth(const SynthArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  ReportWriter writer(a.out_dir);

  if (a.write_default_schema && a.count < 0) {
    const FeatureSchema schema = default_schema();
    writer.write_text("schema.json", schema.to_json().dump(2) + "\n");
    writer.finish("synth",
                  {{"write_default_schema", true}}, a.seed, elapsed_since(start));
    if (!a.quiet) std::cout << "wrote default schema\n";
    return 0;
  }
  if (a.count <= 0) return usage_error("--count must be a positive integer");

  FeatureSchema schema = default_schema();
  SyntheticGroundTruth truth;
  if (a.schema_path.empty()) {
    truth = SyntheticGroundTruth::default_case(a.noise, a.seed);
  } else {
    writer.note_input(a.schema_path);
    schema = FeatureSchema::from_json(load_json_file(a.schema_path));
    truth = SyntheticGroundTruth::for_schema(schema, a.seed, a.noise);
  }

  const Dataset dataset =
      generate_synthetic(static_cast<std::size_t>(a.count), schema, truth);
  writer.write_text("data.csv", to_csv(dataset));
  writer.write_text("schema.json", schema.to_json().dump(2) + "\n");
  writer.write_text("truth.json", truth.to_json().dump(2) + "\n");
  writer.finish("synth",
                {{"count", a.count},
                 {"noise", a.noise},
                 {"schema", a.schema_path.empty() ? "default" : a.schema_path}},
                a.seed, elapsed_since(start));
  if (!a.quiet) std::cout << "records " << dataset.size() << "\n";
  return 0;
}

struct TrainArgs {
  std::string data_path;
  std::string schema_path;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  bool quiet = false;
};

TrainConfig load_train_config(const std::string& config_path,
                              const std::optional<std::uint64_t>& seed,
                              const std::optional<int>& epochs,
                              const std::optional<double>& lr) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = TrainConfig::from_json(load_json_file(config_path));
  if (seed) cfg.seed = *seed;
  if (epochs) cfg.max_epochs = *epochs;
  if (lr) cfg.learning_rate = *lr;
  return cfg;
}

int run_train(const TrainArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  ReportWriter writer(a.out_dir);
  writer.note_input(a.data_path);
  writer.note_input(a.schema_path);
  if (!a.config_path.empty()) writer.note_input(a.config_path);

  const FeatureSchema schema = FeatureSchema::from_json(load_json_file(a.schema_path));
  const Dataset dataset = load_csv(a.data_path, schema, TargetPolicy::required);
  const TrainConfig cfg =
      load_train_config(a.config_path, a.seed, a.epochs, a.learning_rate);

  const EmulatorModel model = train(dataset, cfg);
  const double fit_r2 =
      r_squared(model.predict_batch(dataset.input_matrix()), dataset.target_vector());

  writer.write_text("model.json", model.to_json().dump(2) + "\n");
  writer.write_text("fit.json", nlohmann::json{{"fit_r2", json_number(fit_r2)},
                                               {"n_records", dataset.size()}}
                                        .dump(2) +
                                    "\n");
  writer.finish("train", cfg.to_json(), cfg.seed, elapsed_since(start));
  if (!a.quiet) std::cout << "fit_r2 " << format_double(fit_r2) << "\n";
  return 0;
}

struct CvArgs {
  std::string data_path;
  std::string schema_path;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<double> learning_rate;
  bool quiet = false;
};

int run_cv(const CvArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  ReportWriter writer(a.out_dir);
  writer.note_input(a.data_path);
  writer.note_input(a.schema_path);
  if (!a.config_path.empty()) writer.note_input(a.config_path);

  const FeatureSchema schema = FeatureSchema::from_json(load_json_file(a.schema_path));
  const Dataset dataset = load_csv(a.data_path, schema, TargetPolicy::required);
  const TrainConfig cfg =
      load_train_config(a.config_path, a.seed, a.epochs, a.learning_rate);

  const LooCvResult cv = loo_cv(dataset, cfg);
  const Eigen::VectorXd observed = dataset.target_vector();

  std::ostringstream preds;
  preds << "id,observed,predicted\n";
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    preds << dataset.records()[i].id << ','
          << format_double(observed(static_cast<Eigen::Index>(i))) << ','
          << format_double(cv.oof_predictions(static_cast<Eigen::Index>(i))) << "\n";
  }
  writer.write_text("predictions.csv", preds.str());
  writer.write_text("cv.json", nlohmann::json{{"cv_r2", json_number(cv.cv_r2)},
                                              {"fit_r2", json_number(cv.fit_r2)},
                                              {"n_folds", dataset.size()}}
                                       .dump(2) +
                                   "\n");
  writer.finish("cv", cfg.to_json(), cfg.seed, elapsed_since(start));
  if (!a.quiet) {
    std::cout << "cv_r2 " << format_double(cv.cv_r2) << "\n"
              << "fit_r2 " << format_double(cv.fit_r2) << "\n";
  }
  return 0;
}

struct ExplainArgs {
  std::string model_path;
  std::string data_path;
  std::string schema_path;
  std::string out_dir;
  bool exact = false;
  long long sampled = 0;  // permutation count when > 0
  long long background = 128;
  std::uint64_t seed = 0;
  std::size_t exact_cap = 16;
  bool quiet = false;
};

int run_explain(const ExplainArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  if (a.exact && a.sampled > 0) {
    return usage_error("--exact and --sampled are mutually exclusive");
  }
  if (a.background <= 0) return usage_error("--background must be positive");

  ReportWriter writer(a.out_dir);
  writer.note_input(a.model_path);
  writer.note_input(a.data_path);
  writer.note_input(a.schema_path);

  const FeatureSchema schema = FeatureSchema::from_json(load_json_file(a.schema_path));
  const EmulatorModel model = EmulatorModel::from_json(load_json_file(a.model_path));
  model.require_schema(schema);
  const Dataset dataset = load_csv(a.data_path, schema, TargetPolicy::optional);
  if (dataset.size() == 0) return usage_error("dataset has no records to explain");

  const bool use_sampled = a.sampled > 0;
  if (!use_sampled && schema.input_count() > a.exact_cap) {
    return usage_error("exact attribution is capped at " +
                       std::to_string(a.exact_cap) +
                       " features; rerun with --sampled <permutations>");
  }

  const BackgroundSet background =
      BackgroundSet::from_dataset(dataset, model.stats(),
                                  static_cast<std::size_t>(a.background),
                                  derive_seed(a.seed, "background"));
  const RowEvaluator evaluator = evaluator_from(model);

  std::vector<std::string> ids;
  std::vector<double> predictions;  // evaluator units, matches phi and base
  std::vector<ShapleyAttribution> attributions;
  for (const WellRecord& record : dataset.records()) {
    const Eigen::VectorXd z = model.stats().normalize_inputs(record.inputs);
    Eigen::MatrixXd row(1, z.size());
    row.row(0) = z.transpose();
    ids.push_back(record.id);
    predictions.push_back(evaluator(row)(0));
    attributions.push_back(
        use_sampled
            ? shapley_sampled(evaluator, background, z,
                              static_cast<std::size_t>(a.sampled),
                              derive_seed(a.seed, "shapley:" + record.id))
            : shapley_exact(evaluator, background, z, a.exact_cap));
  }

  std::vector<std::string> names;
  for (std::size_t i = 0; i < schema.input_count(); ++i) {
    names.push_back(schema.input(i).name);
  }
  const GlobalImportance importance = global_shapley(attributions, names);

  nlohmann::json global = nlohmann::json::array();
  std::vector<std::string> labels;
  std::vector<double> values;
  for (std::size_t idx : importance.descending_order) {
    const double v = importance.mean_abs_phi(static_cast<Eigen::Index>(idx));
    global.push_back({{"feature", importance.names[idx]}, {"mean_abs_shap", v}});
    labels.push_back(importance.names[idx]);
    values.push_back(v);
  }

  writer.write_text("attributions.csv",
                    attributions_csv(ids, predictions, attributions, schema));
  writer.write_text("global.json",
                    nlohmann::json{{"format", "interopt-importance-v1"},
                                   {"features", global}}
                            .dump(2) +
                        "\n");
  writer.write_text("importance.svg",
                    svg_bar_chart("Mean |attribution| by feature", labels, values));
  writer.finish("explain",
                {{"mode", use_sampled ? "sampled" : "exact"},
                 {"permutations", a.sampled},
                 {"background", a.background}},
                a.seed, elapsed_since(start));
  if (!a.quiet) {
    std::cout << "records " << ids.size() << " mode "
              << (use_sampled ? "sampled" : "exact") << "\n";
  }
  return 0;
}

struct OptimizeArgs {
  std::string model_path;
  std::string data_path;
  std::string schema_path;
  std::string config_path;
  std::string out_dir;
  std::string well_id;
  bool all = false;
  bool ablation = false;
  std::optional<std::uint64_t> seed;
  bool quiet = false;
};

int run_optimize(const OptimizeArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  if (a.well_id.empty() && !a.all) {
    return usage_error("choose --well <id> or --all");
  }
  if (!a.well_id.empty() && a.all) {
    return usage_error("--well and --all are mutually exclusive");
  }

  const FeatureSchema schema = FeatureSchema::from_json(load_json_file(a.schema_path));
  const EmulatorModel model = EmulatorModel::from_json(load_json_file(a.model_path));
  model.require_schema(schema);
  Dataset dataset = load_csv(a.data_path, schema, TargetPolicy::optional);

  if (!a.well_id.empty()) {
    const WellRecord* found = nullptr;
    for (const WellRecord& record : dataset.records()) {
      if (record.id == a.well_id) {
        found = &record;
        break;
      }
    }
    if (found == nullptr) return usage_error("unknown well id '" + a.well_id + "'");
    dataset = Dataset(schema, {*found});
  }

  InterOptConfig cfg;
  if (!a.config_path.empty()) {
    cfg = InterOptConfig::from_json(load_json_file(a.config_path));
  }
  if (a.seed) cfg.seed = *a.seed;

  std::vector<std::string> inputs = {a.model_path, a.data_path, a.schema_path};
  if (!a.config_path.empty()) inputs.push_back(a.config_path);

  if (a.ablation) {
    const std::vector<AblationRow> rows = run_ablation(model, dataset, cfg);
    ReportWriter writer(a.out_dir);
    for (const std::string& p : inputs) writer.note_input(p);
    writer.write_text("ablation.csv", ablation_csv(rows));
    nlohmann::json config = cfg.to_json();
    config["mode"] = "ablation";
    writer.finish("optimize", config, cfg.seed, elapsed_since(start));
    if (!a.quiet) {
      for (const AblationRow& row : rows) {
        std::cout << "block=" << row.block_optimization
                  << " adaptive=" << row.adaptive_step
                  << " not_converged=" << row.not_converged
                  << " no_improvement=" << row.no_improvement << " mean_rate="
                  << format_double(row.mean_improvement_rate) << "\n";
      }
    }
    return 0;
  }

  const CampaignReport report = optimize_campaign(model, dataset, cfg);
  nlohmann::json config = cfg.to_json();
  config["mode"] = a.well_id.empty() ? "all" : ("well:" + a.well_id);
  write_campaign_bundle(a.out_dir, report, schema, config, cfg.seed,
                        elapsed_since(start), inputs);
  if (!a.quiet) {
    std::cout << "wells " << report.summary.n_wells << " improved "
              << report.summary.n_improved << " mean_rate "
              << format_double(report.summary.mean_improvement_rate) << "\n";
  }
  return 0;
}

struct ReportArgs {
  std::string campaign_dir;
  std::string out_dir;
  bool quiet = false;
};

int run_report(const ReportArgs& a) {
  const auto start = std::chrono::steady_clock::now();
  const std::string campaign_path = a.campaign_dir + "/campaign.json";
  const std::string traces_path = a.campaign_dir + "/traces.csv";

  const nlohmann::json doc = load_json_file(campaign_path);
  if (!doc.contains("summary") || !doc.contains("distribution")) {
    return usage_error("not a campaign report: " + campaign_path);
  }
  const std::size_t n_wells = doc["summary"].value("n_wells", std::size_t{0});
  if (n_wells == 0) return usage_error("campaign report contains no wells");

  std::vector<std::string> labels;
  std::vector<std::size_t> counts;
  CampaignSummary summary;
  for (const auto& bucket : doc["distribution"]) {
    labels.push_back(bucket.at("bucket").get<std::string>());
    counts.push_back(bucket.at("count").get<std::size_t>());
  }
  summary.histogram = counts;

  // one objective curve per well, grouped by the id column of traces.csv
  std::vector<LineSeries> curves;
  const std::string traces = read_file(traces_path);
  std::istringstream lines(traces);
  std::string line;
  std::getline(lines, line);  // header
  const std::size_t curve_cap = 12;
  while (std::getline(lines, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) {
        cells.push_back(line.substr(pos));
        break;
      }
      cells.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    if (cells.size() != 7) {
      fail(ErrorKind::parse, "traces.csv row has " + std::to_string(cells.size()) +
                                 " cells, expected 7");
    }
    if (curves.empty() || curves.back().name != cells[0]) {
      if (curves.size() >= curve_cap) break;
      curves.push_back({cells[0], {}});
    }
    curves.back().values.push_back(parse_double(cells[4], "traces.csv objective"));
  }

  ReportWriter writer(a.out_dir);
  writer.note_input(campaign_path);
  writer.note_input(traces_path);
  writer.write_text("distribution.csv", distribution_csv(summary));
  writer.write_text(
      "improvement_histogram.svg",
      svg_histogram("Predicted improvement distribution", labels, counts));
  writer.write_text("objective_curves.svg",
                    svg_lines("Ensemble objective per iteration", "objective", curves));
  writer.finish("report", {{"campaign", a.campaign_dir}}, 0, elapsed_since(start));
  if (!a.quiet) std::cout << "wells " << n_wells << "\n";
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"InterOpt: emulator-backed per-well completion design optimization"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
  synth_cmd->add_option("--schema", synth.schema_path, "feature schema JSON");
  synth_cmd->add_option("--count", synth.count, "number of records");
  synth_cmd->add_option("--seed", synth.seed, "generator seed");
  synth_cmd->add_option("--noise", synth.noise, "target noise std");
  synth_cmd->add_flag("--write-default-schema", synth.write_default_schema,
                      "write the built-in schema and exit");
  synth_cmd->add_option("--out", synth.out_dir, "output directory")->required();
  synth_cmd->add_flag("--quiet", synth.quiet, "suppress stdout");

  TrainArgs train_args;
  CLI::App* train_cmd = app.add_subcommand("train", "fit the emulator");
  train_cmd->add_option("--data", train_args.data_path, "dataset CSV")->required();
  train_cmd->add_option("--schema", train_args.schema_path, "feature schema JSON")
      ->required();
  train_cmd->add_option("--config", train_args.config_path, "training config JSON");
  train_cmd->add_option("--seed", train_args.seed, "training seed override");
  train_cmd->add_option("--epochs", train_args.epochs, "max epoch override");
  train_cmd->add_option("--lr", train_args.learning_rate, "learning rate override");
  train_cmd->add_option("--out", train_args.out_dir, "output directory")->required();
  train_cmd->add_flag("--quiet", train_args.quiet, "suppress stdout");

  CvArgs cv_args;
  CLI::App* cv_cmd = app.add_subcommand("cv", "leave-one-out cross validation");
  cv_cmd->add_option("--data", cv_args.data_path, "dataset CSV")->required();
  cv_cmd->add_option("--schema", cv_args.schema_path, "feature schema JSON")->required();
  cv_cmd->add_option("--config", cv_args.config_path, "training config JSON");
  cv_cmd->add_option("--seed", cv_args.seed, "training seed override");
  cv_cmd->add_option("--epochs", cv_args.epochs, "max epoch override");
  cv_cmd->add_option("--lr", cv_args.learning_rate, "learning rate override");
  cv_cmd->add_option("--out", cv_args.out_dir, "output directory")->required();
  cv_cmd->add_flag("--quiet", cv_args.quiet, "suppress stdout");

  ExplainArgs explain_args;
  CLI::App* explain_cmd =
      app.add_subcommand("explain", "per-record feature attribution");
  explain_cmd->add_option("--model", explain_args.model_path, "model artifact JSON")
      ->required();
  explain_cmd->add_option("--data", explain_args.data_path, "dataset CSV")->required();
  explain_cmd->add_option("--schema", explain_args.schema_path, "feature schema JSON")
      ->required();
  explain_cmd->add_flag("--exact", explain_args.exact, "exact attribution");
  explain_cmd->add_option("--sampled", explain_args.sampled,
                          "permutation count for sampled attribution");
  explain_cmd->add_option("--background", explain_args.background,
                          "background sample cap");
  explain_cmd->add_option("--seed", explain_args.seed, "sampling seed");
  explain_cmd->add_option("--out", explain_args.out_dir, "output directory")
      ->required();
  explain_cmd->add_flag("--quiet", explain_args.quiet, "suppress stdout");

  OptimizeArgs optimize_args;
  CLI::App* optimize_cmd =
      app.add_subcommand("optimize", "optimize adjustable features per well");
  optimize_cmd->add_option("--model", optimize_args.model_path, "model artifact JSON")
      ->required();
  optimize_cmd->add_option("--data", optimize_args.data_path, "dataset CSV")
      ->required();
  optimize_cmd
      ->add_option("--schema", optimize_args.schema_path, "feature schema JSON")
      ->required();
  optimize_cmd->add_option("--config", optimize_args.config_path,
                           "optimizer config JSON");
  optimize_cmd->add_option("--well", optimize_args.well_id, "optimize one well id");
  optimize_cmd->add_flag("--all", optimize_args.all, "optimize every record");
  optimize_cmd->add_flag("--ablation", optimize_args.ablation,
                         "run the 4-way toggle grid");
  optimize_cmd->add_option("--seed", optimize_args.seed, "seed override");
  optimize_cmd->add_option("--out", optimize_args.out_dir, "output directory")
      ->required();
  optimize_cmd->add_flag("--quiet", optimize_args.quiet, "suppress stdout");

  ReportArgs report_args;
  CLI::App* report_cmd =
      app.add_subcommand("report", "regenerate figures from a campaign report");
  report_cmd
      ->add_option("--campaign", report_args.campaign_dir,
                   "directory written by optimize")
      ->required();
  report_cmd->add_option("--out", report_args.out_dir, "output directory")->required();
  report_cmd->add_flag("--quiet", report_args.quiet, "suppress stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (train_cmd->parsed()) return run_train(train_args);
    if (cv_cmd->parsed()) return run_cv(cv_args);
    if (explain_cmd->parsed()) return run_explain(explain_args);
    if (optimize_cmd->parsed()) return run_optimize(optimize_args);
    if (report_cmd->parsed()) return run_report(report_args);
  } catch (const Error& e) {
    std::cerr << "error (" << kind_label(e.kind()) << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace interopt
