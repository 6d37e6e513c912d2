#include "doctest.h"

#include <cmath>
#include <limits>

#include "interopt/enrml.hpp"
#include "test_support.hpp"

using namespace interopt;

namespace {

Eigen::MatrixXd random_matrix(int rows, int cols, Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
  }
  return m;
}

// Sample covariance written as plain loops, 1/(N-1) denominator.
Eigen::MatrixXd loop_covariance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::Index ne = a.cols();
  Eigen::VectorXd mean_a = Eigen::VectorXd::Zero(a.rows());
  Eigen::VectorXd mean_b = Eigen::VectorXd::Zero(b.rows());
  for (Eigen::Index j = 0; j < ne; ++j) {
    mean_a += a.col(j);
    mean_b += b.col(j);
  }
  mean_a /= static_cast<double>(ne);
  mean_b /= static_cast<double>(ne);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index k = 0; k < b.rows(); ++k) {
      double acc = 0.0;
      for (Eigen::Index j = 0; j < ne; ++j) {
        acc += (a(i, j) - mean_a(i)) * (b(k, j) - mean_b(k));
      }
      cov(i, k) = acc / static_cast<double>(ne - 1);
    }
  }
  return cov;
}

}  // namespace

TEST_CASE("noise model rejects empty and non-positive variances") {
  NoiseModel noise;
  CHECK(testsup::kind_of([&] { noise.validate(); }) == ErrorKind::precondition);
  noise.obs_var = Eigen::VectorXd::Constant(1, 1.0);
  noise.param_var = Eigen::VectorXd::Constant(2, 1.0);
  noise.validate();
  noise.param_var(1) = 0.0;
  CHECK(testsup::kind_of([&] { noise.validate(); }) == ErrorKind::precondition);
  noise.param_var(1) = std::numeric_limits<double>::infinity();
  CHECK(testsup::kind_of([&] { noise.validate(); }) == ErrorKind::precondition);
}

TEST_CASE("ensemble draws follow a documented member-major order") {
  NoiseModel noise;
  noise.obs_var = Eigen::Vector2d(0.25, 4.0);
  noise.param_var = Eigen::Vector3d(1.0, 0.04, 9.0);
  const Eigen::VectorXd m_prior = Eigen::Vector3d(1.0, -2.0, 0.5);
  const Eigen::VectorXd d_obs = Eigen::Vector2d(3.0, -1.0);

  const Eigen::MatrixXd draws = init_realizations(m_prior, noise, 5, 42);
  REQUIRE(draws.rows() == 3);
  REQUIRE(draws.cols() == 5);
  Eigen::MatrixXd expect(3, 5);
  Rng rng(42);
  for (Eigen::Index j = 0; j < 5; ++j) {
    for (Eigen::Index i = 0; i < 3; ++i) {
      expect(i, j) = m_prior(i) + std::sqrt(noise.param_var(i)) * rng.normal();
    }
  }
  CHECK(draws == expect);

  const Eigen::MatrixXd obs = perturb_observations(d_obs, noise, 4, 43);
  Eigen::MatrixXd expect_obs(2, 4);
  Rng rng2(43);
  for (Eigen::Index j = 0; j < 4; ++j) {
    for (Eigen::Index i = 0; i < 2; ++i) {
      expect_obs(i, j) = d_obs(i) + std::sqrt(noise.obs_var(i)) * rng2.normal();
    }
  }
  CHECK(obs == expect_obs);

  CHECK(init_realizations(m_prior, noise, 5, 42) == draws);
  CHECK(init_realizations(m_prior, noise, 5, 44) != draws);

  CHECK(testsup::kind_of([&] {
          perturb_observations(m_prior, noise, 4, 1);
        }) == ErrorKind::shape_mismatch);
  CHECK(testsup::kind_of([&] {
          init_realizations(m_prior, noise, 1, 1);
        }) == ErrorKind::precondition);
}

TEST_CASE("ensemble draws carry the requested moments") {
  NoiseModel noise;
  noise.obs_var = Eigen::VectorXd::Constant(1, 1.0);
  noise.param_var = Eigen::Vector2d(4.0, 0.25);
  const Eigen::VectorXd m_prior = Eigen::Vector2d(1.0, -2.0);

  const Eigen::MatrixXd draws = init_realizations(m_prior, noise, 20000, 7);
  for (Eigen::Index i = 0; i < 2; ++i) {
    const double mean = draws.row(i).mean();
    const double var =
        (draws.row(i).array() - mean).square().sum() / (draws.cols() - 1.0);
    CHECK(std::abs(mean - m_prior(i)) < 4.0 * std::sqrt(noise.param_var(i) / 20000.0));
    CHECK(var == doctest::Approx(noise.param_var(i)).epsilon(0.05));
  }
}

TEST_CASE("sample covariances match naive loops") {
  Rng rng(5);
  const Eigen::MatrixXd params = random_matrix(3, 12, rng, -2.0, 2.0);
  const Eigen::MatrixXd preds = random_matrix(4, 12, rng, -3.0, 3.0);

  const EnsembleCovariances cov = ensemble_covariances(params, preds);
  CHECK((cov.c_mm - loop_covariance(params, params)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((cov.c_md - loop_covariance(params, preds)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((cov.c_dd - loop_covariance(preds, preds)).cwiseAbs().maxCoeff() < 1e-12);

  CHECK(testsup::kind_of([&] {
          ensemble_covariances(params, random_matrix(4, 11, rng));
        }) == ErrorKind::shape_mismatch);
  CHECK(testsup::kind_of([&] {
          ensemble_covariances(params.leftCols(1), preds.leftCols(1));
        }) == ErrorKind::precondition);
}

TEST_CASE("objective is the half sum of weighted squared mismatches") {
  NoiseModel noise;
  noise.obs_var = Eigen::VectorXd::Constant(1, 4.0);
  noise.param_var = Eigen::Vector2d(1.0, 4.0);
  const double j = objective(Eigen::Vector2d(1.0, 2.0), Eigen::VectorXd::Constant(1, 3.0),
                             Eigen::VectorXd::Constant(1, 1.0), Eigen::Vector2d(0.0, 1.0),
                             noise);
  // data half: 0.5 * (3-1)^2 / 4 = 0.5; model half: 0.5 * (1 + 0.25) = 0.625
  CHECK(j == doctest::Approx(1.125).epsilon(1e-15));

  CHECK(testsup::kind_of([&] {
          objective(Eigen::Vector3d(1, 2, 3), Eigen::VectorXd::Constant(1, 3.0),
                    Eigen::VectorXd::Constant(1, 1.0), Eigen::Vector2d(0.0, 1.0), noise);
        }) == ErrorKind::shape_mismatch);
}

TEST_CASE("update terms reproduce a hand-worked scalar case") {
  // one parameter, one observation, three members; every quantity below was
  // worked out by hand with fractions
  Eigen::MatrixXd params(1, 3);
  params << 1.0, 2.0, 4.0;
  Eigen::MatrixXd prior(1, 3);
  prior << 0.5, 1.5, 3.5;
  const Eigen::MatrixXd predictions = 2.0 * params;
  const Eigen::MatrixXd obs = Eigen::MatrixXd::Ones(1, 3);
  NoiseModel noise;
  noise.obs_var = Eigen::VectorXd::Constant(1, 0.5);
  noise.param_var = Eigen::VectorXd::Constant(1, 2.0);

  // c_mm = 7/3, c_md = 14/3, c_dd = 28/3, solve matrix = 28/3 + 2*0.5 = 31/3,
  // gain = 14/31, bracket = 7/3 - (14/31)(14/3) = 7/31, prior residual 0.25
  const UpdateTerms terms = update_terms(params, predictions, prior, obs, noise, 1.0);
  for (int j = 0; j < 3; ++j) {
    CHECK(std::abs(terms.delta_model(0, j) - 7.0 / 248.0) < 1e-15);
  }
  CHECK(std::abs(terms.delta_data(0, 0) - 14.0 / 31.0) < 1e-14);
  CHECK(std::abs(terms.delta_data(0, 1) - 42.0 / 31.0) < 1e-14);
  CHECK(std::abs(terms.delta_data(0, 2) - 98.0 / 31.0) < 1e-14);

  EnsembleState state{params, prior, obs, 0};
  const Eigen::MatrixXd updated = enrml_update(state, predictions, noise, 1.0);
  CHECK(std::abs(updated(0, 0) - 129.0 / 248.0) < 1e-14);
  CHECK(std::abs(updated(0, 1) - 153.0 / 248.0) < 1e-14);
  CHECK(std::abs(updated(0, 2) - 201.0 / 248.0) < 1e-14);
}

TEST_CASE("update terms validate shapes and lambda") {
  Rng rng(8);
  const Eigen::MatrixXd params = random_matrix(2, 6, rng);
  const Eigen::MatrixXd preds = random_matrix(3, 6, rng);
  NoiseModel noise;
  noise.obs_var = Eigen::VectorXd::Constant(3, 1.0);
  noise.param_var = Eigen::VectorXd::Constant(2, 1.0);

  CHECK(testsup::kind_of([&] {
          update_terms(params, preds, random_matrix(2, 5, rng), preds, noise, 1.0);
        }) == ErrorKind::shape_mismatch);
  CHECK(testsup::kind_of([&] {
          update_terms(params, preds, params, random_matrix(3, 5, rng), noise, 1.0);
        }) == ErrorKind::shape_mismatch);
  NoiseModel narrow = noise;
  narrow.param_var = Eigen::VectorXd::Constant(1, 1.0);
  CHECK(testsup::kind_of([&] {
          update_terms(params, preds, params, preds, narrow, 1.0);
        }) == ErrorKind::shape_mismatch);
  CHECK(testsup::kind_of([&] {
          update_terms(params, preds, params, preds, noise, -0.5);
        }) == ErrorKind::precondition);
  CHECK(testsup::kind_of([&] {
          update_terms(params, preds, params, preds, noise, std::nan(""));
        }) == ErrorKind::precondition);
}

TEST_CASE("ensemble update agrees with the explicit-sensitivity form for linear models") {
  // when predictions are an exact linear map G m, the cross and data
  // covariances factor through G, so the covariance-built step must match the
  // textbook expression assembled from G and the parameter covariance alone
  for (int inst = 0; inst < 10; ++inst) {
    Rng rng(200 + inst);
    const int nm = 2 + inst % 3;
    const int nd = 2 + (inst / 2) % 3;
    const int ne = 25;
    const double lambda = rng.uniform(0.0, 3.0);

    const Eigen::MatrixXd g = random_matrix(nd, nm, rng, -1.5, 1.5);
    const Eigen::MatrixXd prior = random_matrix(nm, ne, rng, -1.0, 1.0);
    const Eigen::MatrixXd params = prior + 0.4 * random_matrix(nm, ne, rng, -1.0, 1.0);
    const Eigen::MatrixXd predictions = g * params;
    const Eigen::MatrixXd obs = random_matrix(nd, ne, rng, -1.0, 1.0);
    NoiseModel noise;
    noise.obs_var = random_matrix(nd, 1, rng, 0.5, 2.0).col(0);
    noise.param_var = random_matrix(nm, 1, rng, 0.5, 2.0).col(0);

    EnsembleState state{params, prior, obs, 0};
    const Eigen::MatrixXd updated = enrml_update(state, predictions, noise, lambda);

    const Eigen::MatrixXd c = loop_covariance(params, params);
    Eigen::MatrixXd a = g * c * g.transpose();
    a += ((1.0 + lambda) * noise.obs_var).asDiagonal();
    const Eigen::MatrixXd gain = c * g.transpose() * a.inverse();
    const Eigen::MatrixXd bracket = c - gain * g * c;
    Eigen::MatrixXd expect(nm, ne);
    for (int j = 0; j < ne; ++j) {
      const Eigen::VectorXd residual =
          (params.col(j) - prior.col(j)).cwiseQuotient(noise.param_var);
      expect.col(j) = params.col(j) - bracket * residual / (1.0 + lambda) -
                      gain * (predictions.col(j) - obs.col(j));
    }
    CHECK((updated - expect).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("iterating a linear problem reaches the regularized least squares fit") {
  Eigen::MatrixXd g(3, 2);
  g << 1.0, 0.5, -0.7, 1.2, 0.3, 0.3;
  const Eigen::Vector2d m_true(0.8, -0.5);
  const Eigen::VectorXd d_obs = g * m_true;
  NoiseModel noise;
  noise.obs_var = Eigen::VectorXd::Constant(3, 0.04);
  noise.param_var = Eigen::VectorXd::Constant(2, 1.0);
  const Eigen::Vector2d m_pr(0.0, 0.0);

  EnrmlOptions options;
  options.n_ensemble = 200;
  options.max_iters = 50;
  options.seed = 3;
  const ForwardModel forward = [&](const Eigen::VectorXd& m) { return (g * m).eval(); };
  const EnrmlResult result = run_enrml(forward, m_pr, d_obs, noise, options);

  // analytic minimizer of the regularized least squares objective
  const Eigen::MatrixXd hess = g.transpose() * (25.0 * g) + Eigen::MatrixXd::Identity(2, 2);
  const Eigen::VectorXd rhs = g.transpose() * (25.0 * d_obs) + m_pr;
  const Eigen::VectorXd m_star = hess.ldlt().solve(rhs);

  CHECK(result.converged);
  const Eigen::VectorXd mean = result.state.params.rowwise().mean();
  CHECK((mean - m_star).cwiseAbs().maxCoeff() < 0.06);
  CHECK(result.trace.back().mean_objective < result.trace.front().mean_objective);

  // trace bookkeeping: row 0 is the starting point, accepted steps halve lambda
  REQUIRE(result.trace.size() >= 3);
  CHECK(result.trace[0].iteration == 0);
  CHECK(result.trace[0].accepted);
  bool all_accepted = true;
  for (const IterationRecord& row : result.trace) all_accepted &= row.accepted;
  if (all_accepted) {
    CHECK(result.trace[1].lambda == options.lambda.initial);
    for (std::size_t i = 1; i + 1 < result.trace.size(); ++i) {
      CHECK(result.trace[i + 1].lambda ==
            doctest::Approx(0.5 * result.trace[i].lambda).epsilon(1e-15));
    }
  }
  for (const IterationRecord& row : result.trace) {
    CHECK(row.mean_objective ==
          doctest::Approx(row.mean_data_mismatch + row.mean_model_mismatch)
              .epsilon(1e-12));
  }

  const EnrmlResult again = run_enrml(forward, m_pr, d_obs, noise, options);
  CHECK(again.state.params == result.state.params);
  CHECK(again.trace.size() == result.trace.size());
}

TEST_CASE("runner surfaces bad forward models as typed errors") {
  NoiseModel noise;
  noise.obs_var = Eigen::VectorXd::Constant(1, 1.0);
  noise.param_var = Eigen::VectorXd::Constant(1, 1.0);
  const Eigen::VectorXd m_pr = Eigen::VectorXd::Constant(1, 0.0);
  const Eigen::VectorXd d_obs = Eigen::VectorXd::Constant(1, 1.0);
  EnrmlOptions options;
  options.n_ensemble = 4;
  options.max_iters = 3;

  CHECK(testsup::kind_of([&] {
          run_enrml([](const Eigen::VectorXd&) { return Eigen::Vector2d(1, 2).eval(); },
                    m_pr, d_obs, noise, options);
        }) == ErrorKind::shape_mismatch);
  CHECK(testsup::kind_of([&] {
          run_enrml(
              [](const Eigen::VectorXd&) {
                return Eigen::VectorXd::Constant(1,
                                                 std::numeric_limits<double>::infinity())
                    .eval();
              },
              m_pr, d_obs, noise, options);
        }) == ErrorKind::divergence);
  CHECK(testsup::kind_of([&] {
          EnrmlOptions bad = options;
          bad.max_iters = 0;
          run_enrml([](const Eigen::VectorXd& m) { return m; }, m_pr, d_obs, noise, bad);
        }) == ErrorKind::precondition);
}

TEST_CASE("trace serializes to a stable csv") {
  const std::vector<IterationRecord> rows = {
      {0, 1.0, 2.5, 1.5, 1.0, true},
      {1, 0.5, 2.25, 1.5, 0.75, false},
  };
  CHECK(trace_to_csv(rows) ==
        "iteration,lambda,mean_objective,mean_data_mismatch,mean_model_mismatch,accepted\n"
        "0,1,2.5,1.5,1,1\n"
        "1,0.5,2.25,1.5,0.75,0\n");
}
