#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cismvmr/errors.hpp"
#include "cismvmr/simulation.hpp"
#include "support.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

using namespace cismvmr;

namespace {

ScenarioConfig small_scenario() {
  ScenarioConfig cfg;
  cfg.name = "small";
  cfg.n_variants = 30;
  cfg.n_exposure_sample = 3000;
  cfg.n_outcome_sample = 3000;
  cfg.seed = 99;
  return cfg;
}

std::string csv(const MetricsTable& t) {
  std::ostringstream out;
  write_metrics_csv(out, t, 17);
  return out.str();
}

ScenarioConfig parse(const std::string& text) {
  std::istringstream in(text);
  return parse_scenario(in);
}

}  // namespace

TEST_CASE("association summaries") {
  SUBCASE("exact fit") {
    MatrixXd g(5, 1);
    g << 0, 1, 2, 1, 0;
    const auto r = summarize_associations(g, 2.0 * VectorXd(g.col(0)));
    CHECK(r.beta(0) == doctest::Approx(2.0));
    CHECK(r.se(0) == 0.0);
    CHECK(r.exact_fit == std::vector<Eigen::Index>{0});
  }
  SUBCASE("five-point closed form") {
    MatrixXd g(5, 2);
    g << 0, 1, 1, 0, 2, 2, 1, 1, 2, 0;
    const VectorXd y = (VectorXd(5) << 0.1, 0.9, 2.3, 1.2, 1.8).finished();
    const auto r = summarize_associations(g, y);
    for (int j = 0; j < 2; ++j) {
      const double mx = g.col(j).mean(), my = y.mean();
      double sxx = 0, sxy = 0;
      for (int i = 0; i < 5; ++i) {
        sxx += (g(i, j) - mx) * (g(i, j) - mx);
        sxy += (g(i, j) - mx) * (y(i) - my);
      }
      const double b = sxy / sxx, a = my - b * mx;
      double rss = 0;
      for (int i = 0; i < 5; ++i) rss += std::pow(y(i) - a - b * g(i, j), 2);
      CHECK(r.beta(j) == doctest::Approx(b).epsilon(1e-12));
      CHECK(r.se(j) == doctest::Approx(std::sqrt(rss / 3.0 / sxx)).epsilon(1e-12));
    }
    CHECK(r.exact_fit.empty());
  }
  SUBCASE("independent noise") {
    Rng rng(81);
    const MatrixXd g = rng.normal_matrix(20000, 3);
    const VectorXd y = rng.normal_matrix(20000, 1);
    const auto r = summarize_associations(g, y);
    for (int j = 0; j < 3; ++j) CHECK(std::abs(r.beta(j)) < 4.0 * r.se(j));
  }
  SUBCASE("large single-variant sample recovers the effect") {
    Rng rng(82);
    const MatrixXd g = rng.normal_matrix(50000, 1);
    const VectorXd y = 0.08 * g.col(0) + VectorXd(rng.normal_matrix(50000, 1));
    const auto r = summarize_associations(g, y);
    CHECK(std::abs(r.beta(0) - 0.08) < 3.0 * r.se(0));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(summarize_associations(MatrixXd::Ones(2, 1), VectorXd::Ones(2)), std::invalid_argument);
    MatrixXd flat = MatrixXd::Ones(5, 2);
    flat(0, 0) = 2;
    CHECK_THROWS_AS(summarize_associations(flat, VectorXd::Ones(5)), std::invalid_argument);
  }
}

TEST_CASE("simulated datasets") {
  const ScenarioConfig cfg;
  double r2 = 0;
  int count = 0;
  for (std::uint64_t rep = 0; rep < 5; ++rep) {
    const auto sim = simulate_dataset(cfg, rep);
    CHECK(sim.data.num_variants() == 100);
    CHECK(sim.data.num_exposures() == 3);
    CHECK(validate(sim.data).ok());
    CHECK(sim.truth.causal_variants.size() == 15);
    CHECK(sim.truth.causal_by_exposure[1] == std::vector<Eigen::Index>{5, 6, 7, 8, 9});
    CHECK(sim.truth.alpha.size() == 15);
    CHECK_FALSE(sim.individuals.has_value());
    for (const auto& s : sim.truth.strength) {
      r2 += s.r_squared;
      ++count;
      CHECK(s.df1 == 5);
      CHECK(s.df2 == 19994);
    }
  }
  r2 /= count;
  CHECK(r2 >= 0.025);
  CHECK(r2 <= 0.045);

  const auto a = simulate_dataset(cfg, 3);
  const auto b = simulate_dataset(cfg, 3);
  CHECK(a.data.beta_x == b.data.beta_x);
  CHECK(a.data.rho == b.data.rho);
  CHECK(a.data.beta_y != simulate_dataset(cfg, 4).data.beta_y);

  const auto kept = simulate_dataset(small_scenario(), 0, true);
  REQUIRE(kept.individuals.has_value());
  CHECK(kept.individuals->genotypes.rows() == 6000);
  CHECK(kept.individuals->n_exposure_sample == 3000);
}

TEST_CASE("null model gives centred outcome associations") {
  ScenarioConfig cfg = small_scenario();
  cfg.theta_true = VectorXd::Zero(3);
  cfg.confounding = false;
  int inside = 0, total = 0;
  for (std::uint64_t rep = 0; rep < 10; ++rep) {
    const auto sim = simulate_dataset(cfg, rep);
    for (Eigen::Index j = 0; j < sim.data.num_variants(); ++j) {
      inside += std::abs(sim.data.beta_y(j)) < 5.0 * sim.data.se_y(j);
      ++total;
    }
  }
  CHECK(inside >= 0.99 * total);
}

TEST_CASE("correlation sources and rounding") {
  ScenarioConfig cfg = small_scenario();
  cfg.corr_source.independent = true;
  cfg.corr_source.n = 500;
  const auto ind = simulate_dataset(cfg, 0);
  CHECK(validate(ind.data).ok());
  CHECK(ind.data.rho != simulate_dataset(small_scenario(), 0).data.rho);

  cfg = small_scenario();
  cfg.rounding_decimals = 3;
  const auto r = simulate_dataset(cfg, 0);
  const auto u = simulate_dataset(small_scenario(), 0);
  CHECK((r.data.beta_x - u.data.beta_x).cwiseAbs().maxCoeff() <= 0.0005 + 1e-12);
  CHECK(r.data.beta_y(0) == std::round(r.data.beta_y(0) * 1000) / 1000);

  for (auto kind : {CorrGenerator::CVine, CorrGenerator::Onion}) {
    cfg = small_scenario();
    cfg.corr.kind = kind;
    CHECK(validate(simulate_dataset(cfg, 0).data).ok());
  }
}

TEST_CASE("generated correlation matrices pass validation") {
  for (auto kind : {CorrGenerator::UniformGram, CorrGenerator::CVine, CorrGenerator::Onion}) {
    CorrelationSpec spec;
    spec.kind = kind;
    for (std::uint64_t rep = 0; rep < 5; ++rep) {
      Rng rng(5, rep, 1);
      testing::Rng probe_rng(1);
      auto d = testing::random_dataset(40, 2, probe_rng);
      d.rho = generate_correlation(spec, 40, rng);
      CHECK(validate(d).ok());
    }
  }
}

TEST_CASE("method specifications") {
  CHECK(parse_method_spec("mv-ivw").label() == "mv-ivw");
  CHECK(parse_method_spec("mv-liml@oracle").set == InstrumentSet::Oracle);
  const auto p = parse_method_spec("mv-ivw@0.6");
  CHECK(p.set == InstrumentSet::Pruned);
  CHECK(p.threshold == 0.6);
  CHECK(p.label() == "mv-ivw@0.6");
  CHECK(p.display_method() == "MV-IVW");
  CHECK(p.display_pruning() == "0.6");
  CHECK(parse_method_spec("mv-ivw-pca").display_pruning() == "-");
  CHECK_THROWS_AS(parse_method_spec("ivw"), ParseError);
  CHECK_THROWS_AS(parse_method_spec("mv-ivw@1.5"), ParseError);
  CHECK_THROWS_AS(parse_method_spec("mv-ivw@abc"), ParseError);
  CHECK(parse_method_list("mv-ivw, mv-liml-pca").size() == 2);
  CHECK(default_methods().size() == 10);
}

TEST_CASE("Monte Carlo determinism") {
  auto cfg = small_scenario();
  MonteCarloOptions opts;
  opts.n_reps = 6;
  opts.methods = parse_method_list("mv-ivw@oracle,mv-ivw@0.6,mv-ivw-pca,mv-liml@0.6,mv-liml-pca");
  opts.threads = 1;
  const auto one = run_monte_carlo(cfg, opts);
  opts.threads = 4;
  const auto four = run_monte_carlo(cfg, opts);
  CHECK(csv(one) == csv(four));
  CHECK(csv(run_monte_carlo(cfg, opts)) == csv(four));

  SUBCASE("method order does not matter") {
    auto reversed = opts;
    std::reverse(reversed.methods.begin(), reversed.methods.end());
    const auto r = run_monte_carlo(cfg, reversed);
    for (const auto& spec : opts.methods) {
      const auto& a = one.find(spec.label());
      const auto& b = r.find(spec.label());
      for (std::size_t k = 0; k < a.params.size(); ++k) {
        CHECK(a.params[k].mean == b.params[k].mean);
        CHECK(a.params[k].sd == b.params[k].sd);
        CHECK(a.params[k].power == b.params[k].power);
      }
    }
  }
  SUBCASE("table invariants") {
    for (const auto& m : one.methods) {
      CHECK(m.successes + m.failures == 6);
      for (const auto& p : m.params) {
        CHECK(p.sd >= 0.0);
        CHECK(p.power >= 0.0);
        CHECK(p.power <= 100.0);
      }
    }
    CHECK(one.find("mv-ivw@oracle").mean_instruments == 15.0);
    CHECK_THROWS_AS(one.find("mv-ivw@0.3"), std::out_of_range);
  }
}

TEST_CASE("single replication is degenerate") {
  MonteCarloOptions opts;
  opts.n_reps = 1;
  opts.methods = parse_method_list("mv-ivw@oracle,mv-ivw-pca");
  const auto t = run_monte_carlo(small_scenario(), opts);
  for (const auto& m : t.methods) {
    CHECK(m.degenerate);
    for (const auto& p : m.params) CHECK(p.sd == 0.0);
  }
  const auto text = csv(t);
  CHECK(text.rfind("Parameter,Method,Pruning,Mean,SD,Mean SE,Power,Reps,Successes,Failures,", 0) == 0);
  CHECK(text.find("theta1,MV-IVW,Oracle,") != std::string::npos);
  CHECK(text.find("theta3,MV-IVW-PCA,-,") != std::string::npos);
  opts.n_reps = 0;
  CHECK_THROWS_AS(run_monte_carlo(small_scenario(), opts), std::invalid_argument);
}

TEST_CASE("aggregation counts failures and excludes them") {
  MonteCarloOptions opts;
  opts.methods = parse_method_list("mv-ivw");
  Estimate e;
  e.theta = (VectorXd(1) << 1.0).finished();
  e.se = (VectorXd(1) << 0.1).finished();
  e.condition_number = 3.0;
  e.n_instruments_used = 4;
  Estimate f = e;
  f.theta(0) = 0.1;
  std::vector<std::vector<MethodOutcome>> reps{{{e, true, ""}}, {{f, false, ""}}, {{std::nullopt, true, "singular"}}};
  const auto t = aggregate(reps, opts, VectorXd::Zero(1));
  const auto& m = t.methods.front();
  CHECK(m.successes == 2);
  CHECK(m.failures == 1);
  CHECK(m.nonconverged == 1);
  CHECK(m.params[0].mean == doctest::Approx(0.55));
  CHECK(m.params[0].sd == doctest::Approx(std::sqrt(2 * 0.45 * 0.45)));
  CHECK(m.params[0].power == doctest::Approx(50.0));
  CHECK(m.median_condition == 3.0);
  CHECK_FALSE(m.degenerate);
}

TEST_CASE("scenario files") {
  SUBCASE("defaults and round trip") {
    const auto cfg = parse("name = x\nseed = 4\n# comment\n\nrounding_decimals = 3\n");
    CHECK(cfg.name == "x");
    CHECK(cfg.seed == 4);
    CHECK(cfg.rounding_decimals == 3);
    CHECK(cfg.n_variants == 100);
    std::istringstream back(to_text(cfg));
    const auto again = parse_scenario(back);
    CHECK(to_text(again) == to_text(cfg));
    CHECK(again.theta_true == cfg.theta_true);
  }
  SUBCASE("generators and sources") {
    const auto cfg = parse("corr_generator = c_vine(2)\ncorr_source = independent_sample(500)\n");
    CHECK(cfg.corr.kind == CorrGenerator::CVine);
    CHECK(cfg.corr.eta == 2.0);
    CHECK(cfg.corr_source.independent);
    CHECK(cfg.corr_source.n == 500);
    const auto u = parse("corr_generator = uniform_gram(0.1, 1)\n");
    CHECK(u.corr.lo == 0.1);
    CHECK(parse("corr_generator = onion\n").corr.kind == CorrGenerator::Onion);
  }
  SUBCASE("external matrix") {
    const auto dir = testing::temp_dir("scenario_external");
    testing::write_text(dir / "b.csv", "1,0.2,0\n0.2,1,0.1\n0,0.1,1\n");
    testing::write_text(dir / "s.scenario",
                        "n_variants = 3\ncausal_per_exposure = 1\ncorr_generator = external_matrix(b.csv)\n");
    const auto cfg = load_scenario(dir / "s.scenario");
    CHECK(cfg.corr.kind == CorrGenerator::External);
    CHECK(cfg.corr.external(0, 1) == 0.2);
    testing::write_text(dir / "bad.scenario",
                        "n_variants = 4\ncausal_per_exposure = 1\ncorr_generator = external_matrix(b.csv)\n");
    CHECK_THROWS_AS(load_scenario(dir / "bad.scenario"), ValidationError);
  }
  SUBCASE("parse errors") {
    CHECK_THROWS_AS(parse("unknown = 1\n"), ParseError);
    CHECK_THROWS_AS(parse("n_variants = ten\n"), ParseError);
    CHECK_THROWS_AS(parse("n_variants 10\n"), ParseError);
    CHECK_THROWS_AS(parse("corr_generator = wishart\n"), ParseError);
    CHECK_THROWS_AS(parse("confounding = maybe\n"), ParseError);
    CHECK_THROWS_AS(parse("n_exposures = 2\n"), ParseError);
    CHECK_THROWS_AS(load_scenario("/nonexistent/x.scenario"), ParseError);
  }
  SUBCASE("validation errors") {
    CHECK_THROWS_AS(parse("n_variants = 10\n"), ValidationError);  // 15 causal variants
    CHECK_THROWS_AS(parse("theta_true = 1, 2\n"), ValidationError);
    CHECK_THROWS_AS(parse("n_exposure_sample = 2\n"), ValidationError);
    CHECK_THROWS_AS(parse("corr_generator = uniform_gram(1, 0)\n"), ValidationError);
    CHECK_THROWS_AS(parse("corr_generator = c_vine(0)\n"), ValidationError);
  }
  SUBCASE("bundled scenarios load") {
    for (const char* name : {"main", "weak", "strong_corr", "strong_effects", "cvine", "onion",
                             "independent_corr", "independent_corr_1000", "rounded", "null"}) {
      CAPTURE(name);
      CHECK_NOTHROW(load_scenario(std::filesystem::path(CISMVMR_SCENARIO_DIR) / (std::string(name) + ".scenario")));
    }
    const auto main = load_scenario(std::filesystem::path(CISMVMR_SCENARIO_DIR) / "main.scenario");
    CHECK(to_text(main) == to_text(ScenarioConfig{}));
  }
}
