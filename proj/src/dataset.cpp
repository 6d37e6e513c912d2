#include "interopt/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace interopt {

std::string to_string(FeatureRole role) {
  switch (role) {
    case FeatureRole::adjustable: return "adjustable";
    case FeatureRole::fixed: return "fixed";
    case FeatureRole::target: return "target";
  }
  return "?";
}

std::string to_string(ObjectiveDirection direction) {
  return direction == ObjectiveDirection::minimize ? "minimize" : "maximize";
}

FeatureRole feature_role_from_string(const std::string& text) {
  if (text == "adjustable") return FeatureRole::adjustable;
  if (text == "fixed") return FeatureRole::fixed;
  if (text == "target") return FeatureRole::target;
  fail(ErrorKind::parse, "unknown feature role '" + text + "'");
}

ObjectiveDirection objective_direction_from_string(const std::string& text) {
  if (text == "minimize") return ObjectiveDirection::minimize;
  if (text == "maximize") return ObjectiveDirection::maximize;
  fail(ErrorKind::parse, "unknown objective direction '" + text + "'");
}

FeatureSchema::FeatureSchema(std::vector<FeatureSpec> features,
                             ObjectiveDirection direction)
    : features_(std::move(features)), direction_(direction) {
  std::unordered_set<std::string> seen;
  std::size_t target_count = 0;
  for (std::size_t i = 0; i < features_.size(); ++i) {
    const FeatureSpec& spec = features_[i];
    if (spec.name.empty()) {
      fail(ErrorKind::schema_mismatch, "feature " + std::to_string(i) + " has an empty name");
    }
    if (!seen.insert(spec.name).second) {
      fail(ErrorKind::duplicate_key, "duplicate feature name '" + spec.name + "'");
    }
    if (spec.role == FeatureRole::target) {
      ++target_count;
      target_ = i;
    } else {
      if (spec.role == FeatureRole::adjustable) adjustable_.push_back(inputs_.size());
      else fixed_.push_back(inputs_.size());
      inputs_.push_back(i);
    }
  }
  if (target_count != 1) {
    fail(ErrorKind::schema_mismatch, "schema needs exactly one target feature, found " +
                                         std::to_string(target_count));
  }
  if (adjustable_.empty()) {
    fail(ErrorKind::schema_mismatch, "schema needs at least one adjustable feature");
  }
}

std::size_t FeatureSchema::input_index(const std::string& name) const {
  for (std::size_t i = 0; i < inputs_.size(); ++i) {
    if (features_[inputs_[i]].name == name) return i;
  }
  fail(ErrorKind::schema_mismatch, "no input feature named '" + name + "'");
}

bool FeatureSchema::has_input(const std::string& name) const {
  for (std::size_t idx : inputs_) {
    if (features_[idx].name == name) return true;
  }
  return false;
}

std::string FeatureSchema::fingerprint() const {
  std::ostringstream canon;
  canon << to_string(direction_);
  for (const FeatureSpec& spec : features_) {
    canon << '|' << spec.name << ':' << to_string(spec.role) << ':' << spec.unit
          << ':' << (spec.integer_valued ? 1 : 0);
  }
  std::ostringstream hex;
  hex << std::hex << fnv1a64(canon.str());
  return hex.str();
}

nlohmann::json FeatureSchema::to_json() const {
  nlohmann::json features = nlohmann::json::array();
  for (const FeatureSpec& spec : features_) {
    features.push_back({{"name", spec.name},
                        {"role", to_string(spec.role)},
                        {"unit", spec.unit},
                        {"integer_valued", spec.integer_valued}});
  }
  return {{"objective_direction", to_string(direction_)}, {"features", features}};
}

FeatureSchema FeatureSchema::from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("features") || !j.contains("objective_direction")) {
    fail(ErrorKind::parse, "schema JSON needs 'features' and 'objective_direction'");
  }
  std::vector<FeatureSpec> specs;
  for (const auto& f : j.at("features")) {
    FeatureSpec spec;
    spec.name = f.at("name").get<std::string>();
    spec.role = feature_role_from_string(f.at("role").get<std::string>());
    spec.unit = f.value("unit", std::string());
    spec.integer_valued = f.value("integer_valued", false);
    specs.push_back(std::move(spec));
  }
  return FeatureSchema(std::move(specs),
                       objective_direction_from_string(
                           j.at("objective_direction").get<std::string>()));
}

Dataset::Dataset(FeatureSchema schema, std::vector<WellRecord> records)
    : schema_(std::move(schema)), records_(std::move(records)) {
  const auto n_inputs = static_cast<Eigen::Index>(schema_.input_count());
  std::unordered_set<std::string> ids;
  for (const WellRecord& rec : records_) {
    if (rec.inputs.size() != n_inputs) {
      fail(ErrorKind::shape_mismatch, "record '" + rec.id + "' has " +
                                          std::to_string(rec.inputs.size()) +
                                          " inputs, schema expects " +
                                          std::to_string(n_inputs));
    }
    if (!ids.insert(rec.id).second) {
      fail(ErrorKind::duplicate_key, "duplicate record id '" + rec.id + "'");
    }
  }
}

Eigen::MatrixXd Dataset::input_matrix() const {
  Eigen::MatrixXd x(records_.size(), schema_.input_count());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = records_[i].inputs.transpose();
  }
  return x;
}

Eigen::VectorXd Dataset::target_vector() const {
  Eigen::VectorXd y(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!records_[i].target) {
      fail(ErrorKind::precondition, "record '" + records_[i].id + "' has no target value");
    }
    y(static_cast<Eigen::Index>(i)) = *records_[i].target;
  }
  return y;
}

bool Dataset::all_targets_present() const {
  return std::all_of(records_.begin(), records_.end(),
                     [](const WellRecord& r) { return r.target.has_value(); });
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cell);
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(cell);
  return cells;
}

}  // namespace

Dataset load_csv(const std::string& path, const FeatureSchema& schema,
                 TargetPolicy policy) {
  const std::string text = read_file(path);
  std::vector<std::string> lines;
  {
    std::string line;
    std::istringstream in(text);
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) fail(ErrorKind::parse, path + ": empty file, expected a header row");

  const std::vector<std::string> header = split_csv_line(lines[0]);
  std::unordered_map<std::string, std::size_t> column;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (!column.emplace(header[c], c).second) {
      fail(ErrorKind::schema_mismatch, path + ": duplicate column '" + header[c] + "'");
    }
  }

  const auto id_it = column.find("id");
  if (id_it == column.end()) fail(ErrorKind::schema_mismatch, path + ": missing 'id' column");
  const std::size_t id_col = id_it->second;

  std::vector<std::size_t> input_cols(schema.input_count());
  for (std::size_t i = 0; i < schema.input_count(); ++i) {
    const std::string& name = schema.input(i).name;
    const auto it = column.find(name);
    if (it == column.end()) {
      fail(ErrorKind::schema_mismatch, path + ": missing column '" + name + "'");
    }
    input_cols[i] = it->second;
  }

  const auto target_it = column.find(schema.target_name());
  if (target_it == column.end() && policy == TargetPolicy::required) {
    fail(ErrorKind::schema_mismatch,
         path + ": missing target column '" + schema.target_name() + "'");
  }
  const bool has_target_col = target_it != column.end();

  // reject columns the schema knows nothing about; silent extras usually mean
  // the caller grabbed the wrong file
  for (const auto& [name, col] : column) {
    (void)col;
    if (name == "id" || name == schema.target_name() || schema.has_input(name)) continue;
    fail(ErrorKind::schema_mismatch, path + ": unexpected column '" + name + "'");
  }

  std::vector<WellRecord> records;
  records.reserve(lines.size() - 1);
  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::vector<std::string> cells = split_csv_line(lines[r]);
    if (cells.size() != header.size()) {
      fail(ErrorKind::parse, path + ": row " + std::to_string(r + 1) + " has " +
                                 std::to_string(cells.size()) + " cells, header has " +
                                 std::to_string(header.size()));
    }
    WellRecord rec;
    rec.id = cells[id_col];
    if (rec.id.empty()) {
      fail(ErrorKind::parse, path + ": row " + std::to_string(r + 1) + " has an empty id");
    }
    rec.inputs.resize(static_cast<Eigen::Index>(schema.input_count()));
    for (std::size_t i = 0; i < schema.input_count(); ++i) {
      rec.inputs(static_cast<Eigen::Index>(i)) =
          parse_double(cells[input_cols[i]],
                       path + " row " + std::to_string(r + 1) + " column '" +
                           schema.input(i).name + "'");
    }
    if (has_target_col) {
      const std::string& cell = cells[target_it->second];
      if (cell.empty()) {
        if (policy == TargetPolicy::required) {
          fail(ErrorKind::parse, path + ": row " + std::to_string(r + 1) +
                                     " has an empty target cell");
        }
      } else {
        rec.target = parse_double(cell, path + " row " + std::to_string(r + 1) +
                                            " target column");
      }
    }
    records.push_back(std::move(rec));
  }
  return Dataset(schema, std::move(records));
}

std::string to_csv(const Dataset& dataset) {
  const FeatureSchema& schema = dataset.schema();
  std::ostringstream out;
  out << "id";
  for (std::size_t i = 0; i < schema.input_count(); ++i) out << ',' << schema.input(i).name;
  out << ',' << schema.target_name() << '\n';
  for (const WellRecord& rec : dataset.records()) {
    out << rec.id;
    for (Eigen::Index i = 0; i < rec.inputs.size(); ++i) {
      out << ',' << format_double(rec.inputs(i));
    }
    out << ',';
    if (rec.target) out << format_double(*rec.target);
    out << '\n';
  }
  return out.str();
}

void save_csv(const Dataset& dataset, const std::string& path) {
  write_file_atomic(path, to_csv(dataset));
}

Eigen::VectorXd NormStats::normalize_inputs(const Eigen::VectorXd& x) const {
  return (x - input_mean).cwiseQuotient(input_std);
}

Eigen::MatrixXd NormStats::normalize_inputs(const Eigen::MatrixXd& x) const {
  return ((x.rowwise() - input_mean.transpose()).array().rowwise() /
          input_std.transpose().array())
      .matrix();
}

Eigen::VectorXd NormStats::denormalize_inputs(const Eigen::VectorXd& z) const {
  return z.cwiseProduct(input_std) + input_mean;
}

nlohmann::json NormStats::to_json() const {
  nlohmann::json j;
  j["input_mean"] = std::vector<double>(input_mean.begin(), input_mean.end());
  j["input_std"] = std::vector<double>(input_std.begin(), input_std.end());
  j["target_mean"] = target_mean;
  j["target_std"] = target_std;
  return j;
}

NormStats NormStats::from_json(const nlohmann::json& j) {
  NormStats stats;
  const auto mean = j.at("input_mean").get<std::vector<double>>();
  const auto sd = j.at("input_std").get<std::vector<double>>();
  if (mean.size() != sd.size()) {
    fail(ErrorKind::parse, "normalizer JSON has mismatched mean/std lengths");
  }
  stats.input_mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), mean.size());
  stats.input_std = Eigen::Map<const Eigen::VectorXd>(sd.data(), sd.size());
  stats.target_mean = j.at("target_mean").get<double>();
  stats.target_std = j.at("target_std").get<double>();
  for (double s : sd) {
    if (!(s > 0.0)) fail(ErrorKind::parse, "normalizer JSON has a non-positive std");
  }
  if (!(stats.target_std > 0.0)) {
    fail(ErrorKind::parse, "normalizer JSON has a non-positive target std");
  }
  return stats;
}

NormStats fit_normalizer(const Dataset& dataset) {
  if (dataset.size() < 2) {
    fail(ErrorKind::precondition, "normalizer needs at least 2 records, got " +
                                      std::to_string(dataset.size()));
  }
  if (!dataset.all_targets_present()) {
    fail(ErrorKind::precondition, "normalizer needs target values on every record");
  }
  const Eigen::MatrixXd x = dataset.input_matrix();
  const Eigen::VectorXd y = dataset.target_vector();
  const auto n = static_cast<double>(dataset.size());

  NormStats stats;
  stats.input_mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - stats.input_mean.transpose();
  stats.input_std = (centered.array().square().colwise().sum() / n).sqrt();
  for (Eigen::Index i = 0; i < stats.input_std.size(); ++i) {
    const double floor = 1e-12 * std::max(1.0, std::abs(stats.input_mean(i)));
    if (stats.input_std(i) <= floor) {
      fail(ErrorKind::degenerate_feature,
           "feature '" + dataset.schema().input(static_cast<std::size_t>(i)).name +
               "' has zero variance");
    }
  }
  stats.target_mean = y.mean();
  const double tvar = (y.array() - stats.target_mean).square().sum() / n;
  const double tstd = std::sqrt(tvar);
  // a constant target is legal (degenerate fits are reported through R^2, not
  // rejected here), so fall back to unit scale instead of dividing by zero
  stats.target_std =
      tstd <= 1e-12 * std::max(1.0, std::abs(stats.target_mean)) ? 1.0 : tstd;
  return stats;
}

LooSplit split_loo(const Dataset& dataset, std::size_t index) {
  if (index >= dataset.size()) {
    fail(ErrorKind::bounds, "leave-one-out index " + std::to_string(index) +
                                " out of range for " + std::to_string(dataset.size()) +
                                " records");
  }
  if (dataset.size() < 2) {
    fail(ErrorKind::precondition, "leave-one-out on " + std::to_string(dataset.size()) +
                                      " record(s) would leave an empty training set");
  }
  std::vector<WellRecord> train;
  train.reserve(dataset.size() - 1);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    if (i != index) train.push_back(dataset.records()[i]);
  }
  return LooSplit{Dataset(dataset.schema(), std::move(train)), dataset.records()[index]};
}

double SyntheticGroundTruth::evaluate(const Eigen::VectorXd& inputs) const {
  if (inputs.size() != linear.size()) {
    fail(ErrorKind::shape_mismatch, "ground truth expects " +
                                        std::to_string(linear.size()) + " inputs, got " +
                                        std::to_string(inputs.size()));
  }
  double value = base + linear.dot(inputs);
  value += interact_coeff * inputs(static_cast<Eigen::Index>(interact_a)) *
           inputs(static_cast<Eigen::Index>(interact_b));
  const double s = inputs(static_cast<Eigen::Index>(saturating_input));
  value += sat_gain * (1.0 - std::exp(-s / sat_scale));
  return value;
}

nlohmann::json SyntheticGroundTruth::to_json() const {
  nlohmann::json j;
  j["base"] = base;
  j["linear"] = std::vector<double>(linear.begin(), linear.end());
  j["interaction"] = {{"a", interact_a}, {"b", interact_b}, {"coeff", interact_coeff}};
  j["saturating"] = {{"input", saturating_input}, {"gain", sat_gain}, {"scale", sat_scale}};
  j["range_lo"] = std::vector<double>(range_lo.begin(), range_lo.end());
  j["range_hi"] = std::vector<double>(range_hi.begin(), range_hi.end());
  j["noise_std"] = noise_std;
  j["seed"] = seed;
  return j;
}

SyntheticGroundTruth SyntheticGroundTruth::from_json(const nlohmann::json& j) {
  SyntheticGroundTruth t;
  t.base = j.at("base").get<double>();
  const auto lin = j.at("linear").get<std::vector<double>>();
  t.linear = Eigen::Map<const Eigen::VectorXd>(lin.data(), lin.size());
  t.interact_a = j.at("interaction").at("a").get<std::size_t>();
  t.interact_b = j.at("interaction").at("b").get<std::size_t>();
  t.interact_coeff = j.at("interaction").at("coeff").get<double>();
  t.saturating_input = j.at("saturating").at("input").get<std::size_t>();
  t.sat_gain = j.at("saturating").at("gain").get<double>();
  t.sat_scale = j.at("saturating").at("scale").get<double>();
  const auto lo = j.at("range_lo").get<std::vector<double>>();
  const auto hi = j.at("range_hi").get<std::vector<double>>();
  t.range_lo = Eigen::Map<const Eigen::VectorXd>(lo.data(), lo.size());
  t.range_hi = Eigen::Map<const Eigen::VectorXd>(hi.data(), hi.size());
  t.noise_std = j.at("noise_std").get<double>();
  t.seed = j.at("seed").get<std::uint64_t>();
  if (t.linear.size() != t.range_lo.size() || t.linear.size() != t.range_hi.size()) {
    fail(ErrorKind::parse, "ground truth JSON has mismatched coefficient/range lengths");
  }
  return t;
}

FeatureSchema default_schema() {
  std::vector<FeatureSpec> specs = {
      {"stage_count", FeatureRole::adjustable, "stages", true},
      {"fluid_volume", FeatureRole::adjustable, "1e3 m3", false},
      {"proppant_mass", FeatureRole::adjustable, "1e2 t", false},
      {"lateral_length", FeatureRole::adjustable, "km", false},
      {"reservoir_thickness", FeatureRole::fixed, "m", false},
      {"pressure_coeff", FeatureRole::fixed, "", false},
      {"depth", FeatureRole::fixed, "km", false},
      {"initial_production", FeatureRole::fixed, "1e4 m3/d", false},
      {"unit_cost", FeatureRole::target, "USD/m3", false},
  };
  return FeatureSchema(std::move(specs), ObjectiveDirection::minimize);
}

SyntheticGroundTruth SyntheticGroundTruth::default_case(double noise_std,
                                                        std::uint64_t seed) {
  SyntheticGroundTruth t;
  t.base = 1.5;
  t.linear.resize(8);
  //          stage  fluid  prop   lateral thick  pcoef  depth  iprod
  t.linear << 0.012, 0.004, 0.003, -0.06, -0.02, -0.15, 0.08, -0.012;
  t.interact_a = 4;  // reservoir_thickness
  t.interact_b = 1;  // fluid_volume
  t.interact_coeff = -0.0006;
  t.saturating_input = 0;  // stage_count
  t.sat_gain = -0.55;
  t.sat_scale = 10.0;
  t.range_lo.resize(8);
  t.range_hi.resize(8);
  t.range_lo << 8, 20, 10, 1.0, 3, 1.0, 2.0, 5;
  t.range_hi << 36, 60, 40, 3.0, 12, 2.2, 4.5, 30;
  t.noise_std = noise_std;
  t.seed = seed;
  return t;
}

SyntheticGroundTruth SyntheticGroundTruth::for_schema(const FeatureSchema& schema,
                                                      std::uint64_t seed,
                                                      double noise_std) {
  const std::size_t n = schema.input_count();
  Rng rng(derive_seed(seed, "synthetic-truth"));
  SyntheticGroundTruth t;
  t.base = 5.0;
  t.linear.resize(static_cast<Eigen::Index>(n));
  t.range_lo = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 1.0);
  t.range_hi = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(n), 10.0);
  for (std::size_t i = 0; i < n; ++i) {
    t.linear(static_cast<Eigen::Index>(i)) = rng.uniform(-0.5, 0.5);
  }

  // saturating term rides on the first adjustable feature, with its linear
  // slope forced positive so the combined curve has an interior optimum
  t.saturating_input = schema.adjustable_inputs().front();
  const auto sat = static_cast<Eigen::Index>(t.saturating_input);
  t.linear(sat) = rng.uniform(0.1, 0.3);
  t.sat_scale = rng.uniform(2.5, 4.0);
  t.sat_gain = -t.linear(sat) * t.sat_scale * std::exp(rng.uniform(1.0, 2.0));

  if (!schema.fixed_inputs().empty()) {
    t.interact_a = schema.fixed_inputs().front();
  } else {
    t.interact_a = n - 1;
  }
  if (schema.adjustable_inputs().size() > 1) {
    t.interact_b = schema.adjustable_inputs()[1];
  } else {
    t.interact_b = t.interact_a == 0 ? (n > 1 ? 1 : 0) : 0;
  }
  t.interact_coeff = rng.uniform(-0.04, 0.04);
  t.noise_std = noise_std;
  t.seed = seed;
  return t;
}

Dataset generate_synthetic(std::size_t count, const FeatureSchema& schema,
                           const SyntheticGroundTruth& truth) {
  const std::size_t n = schema.input_count();
  if (static_cast<std::size_t>(truth.linear.size()) != n) {
    fail(ErrorKind::shape_mismatch, "ground truth covers " +
                                        std::to_string(truth.linear.size()) +
                                        " inputs, schema has " + std::to_string(n));
  }
  Rng rng(truth.seed);
  std::vector<WellRecord> records;
  records.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    WellRecord rec;
    {
      std::ostringstream id;
      id << 'W';
      id.width(5);
      id.fill('0');
      id << (r + 1);
      rec.id = id.str();
    }
    rec.inputs.resize(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const auto idx = static_cast<Eigen::Index>(i);
      if (schema.input(i).integer_valued) {
        rec.inputs(idx) = static_cast<double>(rng.uniform_int(
            std::lround(truth.range_lo(idx)), std::lround(truth.range_hi(idx))));
      } else {
        rec.inputs(idx) = rng.uniform(truth.range_lo(idx), truth.range_hi(idx));
      }
    }
    double y = truth.evaluate(rec.inputs);
    if (truth.noise_std > 0.0) y += rng.normal(0.0, truth.noise_std);
    rec.target = y;
    records.push_back(std::move(rec));
  }
  return Dataset(schema, std::move(records));
}

}  // namespace interopt
