#include "doctest.h"

#include <cmath>
#include <fstream>
#include <sstream>

#include "interopt/dataset.hpp"
#include "test_support.hpp"

using namespace interopt;

namespace {

FeatureSchema tiny_schema() {
  return FeatureSchema({{"a", FeatureRole::adjustable, "", false},
                        {"b", FeatureRole::fixed, "", false},
                        {"y", FeatureRole::target, "", false}},
                       ObjectiveDirection::minimize);
}

WellRecord rec(const std::string& id, double a, double b, double y) {
  WellRecord r;
  r.id = id;
  r.inputs = Eigen::Vector2d(a, b);
  r.target = y;
  return r;
}

std::string write_temp(const std::string& name, const std::string& content) {
  const auto path = testsup::fresh_dir("dataset") / name;
  std::ofstream out(path);
  out << content;
  return path.string();
}

}  // namespace

TEST_CASE("schema validation") {
  CHECK(tiny_schema().input_count() == 2);
  CHECK(tiny_schema().target_name() == "y");
  CHECK(tiny_schema().adjustable_inputs() == std::vector<std::size_t>{0});
  CHECK(tiny_schema().fixed_inputs() == std::vector<std::size_t>{1});

  // no target
  CHECK(testsup::kind_of([] {
          FeatureSchema({{"a", FeatureRole::adjustable, "", false}},
                        ObjectiveDirection::minimize);
        }) == ErrorKind::schema_mismatch);
  // two targets
  CHECK(testsup::kind_of([] {
          FeatureSchema({{"a", FeatureRole::adjustable, "", false},
                         {"y", FeatureRole::target, "", false},
                         {"z", FeatureRole::target, "", false}},
                        ObjectiveDirection::minimize);
        }) == ErrorKind::schema_mismatch);
  // no adjustable
  CHECK(testsup::kind_of([] {
          FeatureSchema({{"b", FeatureRole::fixed, "", false},
                         {"y", FeatureRole::target, "", false}},
                        ObjectiveDirection::minimize);
        }) == ErrorKind::schema_mismatch);
  // duplicate name
  CHECK(testsup::kind_of([] {
          FeatureSchema({{"a", FeatureRole::adjustable, "", false},
                         {"a", FeatureRole::fixed, "", false},
                         {"y", FeatureRole::target, "", false}},
                        ObjectiveDirection::minimize);
        }) == ErrorKind::duplicate_key);
}

TEST_CASE("schema fingerprint and json round trip") {
  const FeatureSchema schema = tiny_schema();
  const FeatureSchema back = FeatureSchema::from_json(schema.to_json());
  CHECK(back.fingerprint() == schema.fingerprint());
  CHECK(back.objective_direction() == ObjectiveDirection::minimize);

  FeatureSchema renamed({{"a2", FeatureRole::adjustable, "", false},
                         {"b", FeatureRole::fixed, "", false},
                         {"y", FeatureRole::target, "", false}},
                        ObjectiveDirection::minimize);
  CHECK(renamed.fingerprint() != schema.fingerprint());

  FeatureSchema flipped({{"a", FeatureRole::adjustable, "", false},
                         {"b", FeatureRole::fixed, "", false},
                         {"y", FeatureRole::target, "", false}},
                        ObjectiveDirection::maximize);
  CHECK(flipped.fingerprint() != schema.fingerprint());
}

TEST_CASE("csv round trip preserves records bit for bit") {
  const FeatureSchema schema = default_schema();
  const auto truth = SyntheticGroundTruth::default_case(0.02, 99);
  const Dataset data = generate_synthetic(25, schema, truth);

  const std::string path = write_temp("roundtrip.csv", to_csv(data));
  const Dataset back = load_csv(path, schema);

  REQUIRE(back.size() == data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    CHECK(back.records()[i].id == data.records()[i].id);
    CHECK(back.records()[i].inputs == data.records()[i].inputs);
    REQUIRE(back.records()[i].target.has_value());
    CHECK(*back.records()[i].target == *data.records()[i].target);
  }
}

TEST_CASE("csv columns are matched by name, not position") {
  const std::string path = write_temp("permuted.csv",
                                      "y,b,id,a\n"
                                      "3.5,2,W1,1\n"
                                      "7.25,4.5,W2,-2\n");
  const Dataset data = load_csv(path, tiny_schema());
  REQUIRE(data.size() == 2);
  CHECK(data.records()[0].inputs == Eigen::Vector2d(1, 2));
  CHECK(*data.records()[0].target == 3.5);
  CHECK(data.records()[1].inputs == Eigen::Vector2d(-2, 4.5));
  CHECK(*data.records()[1].target == 7.25);
}

TEST_CASE("csv loader rejects malformed input") {
  const FeatureSchema schema = tiny_schema();
  auto load = [&](const std::string& body, TargetPolicy policy = TargetPolicy::required) {
    return [&schema, body, policy] {
      load_csv(write_temp("bad.csv", body), schema, policy);
    };
  };

  CHECK(testsup::kind_of(load("id,a,y\nW1,1,2\n")) == ErrorKind::schema_mismatch);
  CHECK(testsup::kind_of(load("id,a,b,y,extra\nW1,1,2,3,4\n")) ==
        ErrorKind::schema_mismatch);
  CHECK(testsup::kind_of(load("id,a,a,b,y\nW1,1,1,2,3\n")) ==
        ErrorKind::schema_mismatch);
  CHECK(testsup::kind_of(load("a,b,y\n1,2,3\n")) == ErrorKind::schema_mismatch);
  CHECK(testsup::kind_of(load("id,a,b\nW1,1,2\n")) == ErrorKind::schema_mismatch);
  CHECK(testsup::kind_of(load("id,a,b,y\nW1,1,2\n")) == ErrorKind::parse);
  CHECK(testsup::kind_of(load("id,a,b,y\nW1,one,2,3\n")) == ErrorKind::parse);
  CHECK(testsup::kind_of(load("id,a,b,y\nW1,1,2,3\nW1,4,5,6\n")) ==
        ErrorKind::duplicate_key);
  CHECK(testsup::kind_of(load("id,a,b,y\n,1,2,3\n")) == ErrorKind::parse);
  CHECK(testsup::kind_of(load("id,a,b,y\nW1,1,2,\n")) == ErrorKind::parse);
  CHECK(testsup::kind_of([&] { load_csv("/nonexistent/nope.csv", schema); }) ==
        ErrorKind::io);
}

TEST_CASE("csv loader accepts absent targets when optional") {
  const std::string path = write_temp("opt.csv", "id,a,b,y\nW1,1,2,\nW2,3,4,9\n");
  const Dataset data = load_csv(path, tiny_schema(), TargetPolicy::optional);
  CHECK_FALSE(data.records()[0].target.has_value());
  CHECK(*data.records()[1].target == 9.0);
  CHECK_FALSE(data.all_targets_present());

  // the target column may be missing entirely in optional mode
  const std::string no_target = write_temp("nt.csv", "id,a,b\nW1,1,2\n");
  const Dataset data2 = load_csv(no_target, tiny_schema(), TargetPolicy::optional);
  CHECK_FALSE(data2.records()[0].target.has_value());
}

TEST_CASE("normalizer matches a two-pass reference computation") {
  const FeatureSchema schema = tiny_schema();
  std::vector<WellRecord> records;
  Rng rng(42);
  for (int i = 0; i < 37; ++i) {
    records.push_back(rec("W" + std::to_string(i), rng.uniform(-3, 5),
                          rng.uniform(10, 11), rng.uniform(100, 140)));
  }
  const Dataset data(schema, records);
  const NormStats stats = fit_normalizer(data);

  // reference: naive accumulation, population variance
  for (int col = 0; col < 2; ++col) {
    double sum = 0.0;
    for (const auto& r : records) sum += r.inputs(col);
    const double mean = sum / static_cast<double>(records.size());
    double ss = 0.0;
    for (const auto& r : records) ss += (r.inputs(col) - mean) * (r.inputs(col) - mean);
    const double std_dev = std::sqrt(ss / static_cast<double>(records.size()));
    CHECK(stats.input_mean(col) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(stats.input_std(col) == doctest::Approx(std_dev).epsilon(1e-12));
  }
  double tsum = 0.0;
  for (const auto& r : records) tsum += *r.target;
  const double tmean = tsum / static_cast<double>(records.size());
  double tss = 0.0;
  for (const auto& r : records) tss += (*r.target - tmean) * (*r.target - tmean);
  CHECK(stats.target_mean == doctest::Approx(tmean).epsilon(1e-12));
  CHECK(stats.target_std ==
        doctest::Approx(std::sqrt(tss / static_cast<double>(records.size())))
            .epsilon(1e-12));

  // normalized columns come out centered and unit-spread
  const Eigen::MatrixXd z = stats.normalize_inputs(data.input_matrix());
  for (int col = 0; col < 2; ++col) {
    CHECK(z.col(col).mean() == doctest::Approx(0.0).epsilon(1e-10));
    const double var = z.col(col).squaredNorm() / static_cast<double>(z.rows());
    CHECK(var == doctest::Approx(1.0).epsilon(1e-10));
  }

  // normalize and denormalize are inverses
  const Eigen::VectorXd x = records[3].inputs;
  const Eigen::VectorXd round = stats.denormalize_inputs(stats.normalize_inputs(x));
  CHECK((round - x).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(stats.denormalize_target(stats.normalize_target(123.0)) ==
        doctest::Approx(123.0).epsilon(1e-12));
}

TEST_CASE("normalizer degenerate cases") {
  const FeatureSchema schema = tiny_schema();

  // zero-variance input is an error that names the feature
  std::vector<WellRecord> flat = {rec("W1", 1, 7, 10), rec("W2", 2, 7, 11),
                                  rec("W3", 3, 7, 12)};
  try {
    fit_normalizer(Dataset(schema, flat));
    FAIL("expected degenerate_feature");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::degenerate_feature);
    CHECK(std::string(e.what()).find("b") != std::string::npos);
  }

  // constant target is allowed; the fallback spread is 1
  std::vector<WellRecord> const_y = {rec("W1", 1, 7, 5), rec("W2", 2, 8, 5),
                                     rec("W3", 3, 9, 5)};
  const NormStats stats = fit_normalizer(Dataset(schema, const_y));
  CHECK(stats.target_std == 1.0);

  // fewer than two records cannot be normalized
  CHECK(testsup::kind_of([&] {
          fit_normalizer(Dataset(schema, {rec("W1", 1, 2, 3)}));
        }) == ErrorKind::precondition);

  // a missing target blocks normalization
  std::vector<WellRecord> missing = {rec("W1", 1, 7, 5), rec("W2", 2, 8, 6)};
  missing[1].target.reset();
  CHECK(testsup::kind_of([&] { fit_normalizer(Dataset(schema, missing)); }) ==
        ErrorKind::precondition);
}

TEST_CASE("leave-one-out splits") {
  const FeatureSchema schema = tiny_schema();
  const Dataset data(schema, {rec("W1", 1, 2, 3), rec("W2", 4, 5, 6),
                              rec("W3", 7, 8, 9)});
  const LooSplit split = split_loo(data, 1);
  CHECK(split.train.size() == 2);
  CHECK(split.held_out.id == "W2");
  CHECK(split.train.records()[0].id == "W1");
  CHECK(split.train.records()[1].id == "W3");

  CHECK(testsup::kind_of([&] { split_loo(data, 3); }) == ErrorKind::bounds);
  CHECK(testsup::kind_of([&] {
          split_loo(Dataset(schema, {rec("W1", 1, 2, 3)}), 0);
        }) == ErrorKind::precondition);
}

TEST_CASE("synthetic generation is deterministic and in range") {
  const FeatureSchema schema = default_schema();
  const auto truth = SyntheticGroundTruth::default_case(0.05, 1234);
  const Dataset a = generate_synthetic(60, schema, truth);
  const Dataset b = generate_synthetic(60, schema, truth);
  REQUIRE(a.size() == 60);
  CHECK(to_csv(a) == to_csv(b));

  for (const WellRecord& r : a.records()) {
    for (Eigen::Index i = 0; i < r.inputs.size(); ++i) {
      CHECK(r.inputs(i) >= truth.range_lo(i));
      CHECK(r.inputs(i) <= truth.range_hi(i));
      if (schema.input(static_cast<std::size_t>(i)).integer_valued) {
        CHECK(r.inputs(i) == std::round(r.inputs(i)));
      }
    }
  }

  // noiseless generation reproduces the surface exactly
  auto clean = truth;
  clean.noise_std = 0.0;
  const Dataset c = generate_synthetic(10, schema, clean);
  for (const WellRecord& r : c.records()) {
    CHECK(*r.target == clean.evaluate(r.inputs));
  }

  // ids are stable, zero-padded, unique
  CHECK(a.records()[0].id == "W00001");
  CHECK(a.records()[59].id == "W00060");
}

TEST_CASE("synthetic truth serializes") {
  const auto truth = SyntheticGroundTruth::default_case(0.05, 7);
  const auto back = SyntheticGroundTruth::from_json(truth.to_json());
  Rng rng(5);
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd x(truth.linear.size());
    for (Eigen::Index k = 0; k < x.size(); ++k) {
      x(k) = rng.uniform(truth.range_lo(k), truth.range_hi(k));
    }
    CHECK(back.evaluate(x) == truth.evaluate(x));
  }
}

TEST_CASE("default synthetic case yields positive well-behaved targets") {
  const FeatureSchema schema = default_schema();
  const auto truth = SyntheticGroundTruth::default_case(0.05, 31);
  const Dataset data = generate_synthetic(300, schema, truth);
  double lo = 1e300, hi = -1e300;
  for (const WellRecord& r : data.records()) {
    lo = std::min(lo, *r.target);
    hi = std::max(hi, *r.target);
  }
  CHECK(lo > 0.0);
  CHECK(hi < 3.0);
}

TEST_CASE("schema-derived truth works for custom schemas") {
  const FeatureSchema schema = tiny_schema();
  const auto truth = SyntheticGroundTruth::for_schema(schema, 11, 0.0);
  const Dataset data = generate_synthetic(20, schema, truth);
  CHECK(data.size() == 20);
  CHECK(data.all_targets_present());
  // the saturating term must act on an adjustable input so optimization has
  // an interior trade-off to find
  const auto& adj = schema.adjustable_inputs();
  CHECK(std::find(adj.begin(), adj.end(), truth.saturating_input) != adj.end());
}

TEST_CASE("dataset accessors") {
  const FeatureSchema schema = tiny_schema();
  const Dataset data(schema, {rec("W1", 1, 2, 3), rec("W2", 4, 5, 6)});
  const Eigen::MatrixXd x = data.input_matrix();
  CHECK(x.rows() == 2);
  CHECK(x.cols() == 2);
  CHECK(x(1, 0) == 4.0);
  const Eigen::VectorXd y = data.target_vector();
  CHECK(y(0) == 3.0);
  CHECK(y(1) == 6.0);

  CHECK(testsup::kind_of([&] {
          Dataset(schema, {rec("W1", 1, 2, 3), rec("W1", 4, 5, 6)});
        }) == ErrorKind::duplicate_key);
}
