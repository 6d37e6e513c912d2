#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "interopt/common.hpp"
#include "json.hpp"

namespace interopt {

enum class FeatureRole { adjustable, fixed, target };
enum class ObjectiveDirection { minimize, maximize };

std::string to_string(FeatureRole role);
std::string to_string(ObjectiveDirection direction);
FeatureRole feature_role_from_string(const std::string& text);
ObjectiveDirection objective_direction_from_string(const std::string& text);

struct FeatureSpec {
  std::string name;
  FeatureRole role = FeatureRole::fixed;
  std::string unit;
  bool integer_valued = false;
};

// Feature list plus optimization direction. Exactly one target feature, at
// least one adjustable feature, unique names. Inputs keep schema order.
class FeatureSchema {
 public:
  FeatureSchema(std::vector<FeatureSpec> features, ObjectiveDirection direction);

  const std::vector<FeatureSpec>& features() const { return features_; }
  ObjectiveDirection objective_direction() const { return direction_; }

  std::size_t input_count() const { return inputs_.size(); }
  const FeatureSpec& input(std::size_t i) const { return features_[inputs_.at(i)]; }
  const std::string& target_name() const { return features_[target_].name; }

  // positions within the input vector, in schema order
  const std::vector<std::size_t>& adjustable_inputs() const { return adjustable_; }
  const std::vector<std::size_t>& fixed_inputs() const { return fixed_; }

  std::size_t input_index(const std::string& name) const;
  bool has_input(const std::string& name) const;

  // stable content hash; model artifacts store it to refuse mismatched schemas
  std::string fingerprint() const;

  nlohmann::json to_json() const;
  static FeatureSchema from_json(const nlohmann::json& j);

 private:
  std::vector<FeatureSpec> features_;
  ObjectiveDirection direction_;
  std::vector<std::size_t> inputs_;  // indices into features_ (non-target)
  std::size_t target_ = 0;
  std::vector<std::size_t> adjustable_;  // indices into inputs_
  std::vector<std::size_t> fixed_;
};

struct WellRecord {
  std::string id;
  Eigen::VectorXd inputs;  // physical units, schema input order
  std::optional<double> target;
};

class Dataset {
 public:
  explicit Dataset(FeatureSchema schema, std::vector<WellRecord> records = {});

  const FeatureSchema& schema() const { return schema_; }
  const std::vector<WellRecord>& records() const { return records_; }
  std::size_t size() const { return records_.size(); }

  Eigen::MatrixXd input_matrix() const;   // one row per record
  Eigen::VectorXd target_vector() const;  // requires every target present
  bool all_targets_present() const;

 private:
  FeatureSchema schema_;
  std::vector<WellRecord> records_;
};

enum class TargetPolicy { required, optional };

// Strict dialect: comma separated, UTF-8, single header row, '.' decimal
// point. Columns are matched to the schema by name, so permuted files load
// to the same Dataset.
Dataset load_csv(const std::string& path, const FeatureSchema& schema,
                 TargetPolicy policy = TargetPolicy::required);
std::string to_csv(const Dataset& dataset);
void save_csv(const Dataset& dataset, const std::string& path);

// z-score statistics, population std (divide by N)
struct NormStats {
  Eigen::VectorXd input_mean;
  Eigen::VectorXd input_std;
  double target_mean = 0.0;
  double target_std = 1.0;

  Eigen::VectorXd normalize_inputs(const Eigen::VectorXd& x) const;
  Eigen::MatrixXd normalize_inputs(const Eigen::MatrixXd& x) const;
  Eigen::VectorXd denormalize_inputs(const Eigen::VectorXd& z) const;
  double normalize_target(double y) const { return (y - target_mean) / target_std; }
  double denormalize_target(double z) const { return z * target_std + target_mean; }

  nlohmann::json to_json() const;
  static NormStats from_json(const nlohmann::json& j);
};

NormStats fit_normalizer(const Dataset& dataset);

struct LooSplit {
  Dataset train;
  WellRecord held_out;
};

LooSplit split_loo(const Dataset& dataset, std::size_t index);

// Analytic cost surface used to manufacture test campaigns: linear part,
// one pairwise interaction, and one saturating diminishing-returns term.
struct SyntheticGroundTruth {
  double base = 0.0;
  Eigen::VectorXd linear;  // one coefficient per input feature
  std::size_t interact_a = 0;
  std::size_t interact_b = 0;
  double interact_coeff = 0.0;
  std::size_t saturating_input = 0;
  double sat_gain = 0.0;  // multiplies 1 - exp(-x / sat_scale)
  double sat_scale = 1.0;
  Eigen::VectorXd range_lo;  // sampling range per input, physical units
  Eigen::VectorXd range_hi;
  double noise_std = 0.0;
  std::uint64_t seed = 0;

  double evaluate(const Eigen::VectorXd& inputs) const;  // noiseless

  nlohmann::json to_json() const;
  static SyntheticGroundTruth from_json(const nlohmann::json& j);

  // hand-tuned coefficients for default_schema()
  static SyntheticGroundTruth default_case(double noise_std, std::uint64_t seed);
  // seed-derived coefficients for an arbitrary schema
  static SyntheticGroundTruth for_schema(const FeatureSchema& schema,
                                         std::uint64_t seed, double noise_std);
};

// 8 input features (4 adjustable, 4 fixed) plus a unit-cost target
FeatureSchema default_schema();

Dataset generate_synthetic(std::size_t count, const FeatureSchema& schema,
                           const SyntheticGroundTruth& truth);

}  // namespace interopt
