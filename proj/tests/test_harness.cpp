#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "qmmm/harness.hpp"

using namespace qmmm;

TEST_CASE("slope fit recovers exact power laws") {
  std::vector<double> xs = {2, 3, 5, 8, 13}, y3, y2;
  for (double x : xs) {
    y3.push_back(std::pow(x, -3.0));
    y2.push_back(4.2 * std::pow(x, -2.0));
  }
  const FitResult f3 = fit_slope(xs, y3);
  CHECK(std::abs(f3.slope + 3.0) < 1e-12);
  CHECK(f3.r2 == doctest::Approx(1.0));
  const FitResult f2 = fit_slope(xs, y2);
  CHECK(std::abs(f2.slope + 2.0) < 1e-12);
  CHECK(f2.intercept == doctest::Approx(std::log(4.2)).epsilon(1e-12));
}

TEST_CASE("slope fit tolerates multiplicative noise") {
  std::mt19937 rng(123);
  std::uniform_real_distribution<double> ud(-0.05, 0.05);
  std::vector<double> xs, ys;
  for (double x = 2; x < 40; x *= 1.4) {
    xs.push_back(x);
    ys.push_back(std::pow(x, -2.5) * std::exp(ud(rng)));
  }
  CHECK(std::abs(fit_slope(xs, ys).slope + 2.5) < 0.1);
}

TEST_CASE("slope fit rejects bad input") {
  CHECK_THROWS_AS((void)fit_slope({1, 2}, {1, 2}), InvalidParameter);
  CHECK_THROWS_AS((void)fit_slope({1, 2, 3}, {1, -2, 3}), InvalidParameter);
  CHECK_THROWS_AS((void)fit_slope({1, 2, 3}, {1, 2}), InvalidParameter);
  CHECK_THROWS_AS((void)fit_slope({2, 2, 2}, {1, 2, 3}), InvalidParameter);
}

TEST_CASE("radius schedules match the documented formulas to 12 digits") {
  for (double rq : {2.5, 3.5, 4.5, 5.5, 6.5, 9.0}) {
    CHECK(std::abs(schedule_r_buf(rq) - (1.0 + 0.6 * std::log(rq))) < 1e-12);
    const double rb = schedule_r_buf(rq);
    CHECK(std::abs(schedule_r_mm(rq, rb) - (0.5 * std::pow(rq, 3) + 2 * rb)) <
          1e-12);
  }
}

TEST_CASE("TOML subset parser handles the config grammar") {
  const std::string text = R"(
# experiment
case = "P"         # point defect
scheme = "both"
r_qm = [2.5, 3.5, 4.5]
tol = 1e-8
exclude_last = true

[tb]
beta = 0.25
r_cut = 2.5

[tb.h_hop]
family = "exp"
amp = -1.0
rate = 2.0
)";
  const auto j = toml_subset_parse(text);
  CHECK(j.at("case") == "P");
  CHECK(j.at("scheme") == "both");
  CHECK(j.at("r_qm").size() == 3);
  CHECK(j.at("r_qm")[1] == doctest::Approx(3.5));
  CHECK(j.at("tol") == doctest::Approx(1e-8));
  CHECK(j.at("exclude_last") == true);
  CHECK(j.at("tb").at("beta") == doctest::Approx(0.25));
  CHECK(j.at("tb").at("h_hop").at("rate") == doctest::Approx(2.0));
}

TEST_CASE("TOML subset parser reports malformed lines") {
  CHECK_THROWS_AS((void)toml_subset_parse("key value\n"), ConfigError);
  CHECK_THROWS_AS((void)toml_subset_parse("[sec\nk = 1\n"), ConfigError);
  CHECK_THROWS_AS((void)toml_subset_parse("k = \"open\n"), ConfigError);
  CHECK_THROWS_AS((void)toml_subset_parse("k = [1, 2\n"), ConfigError);
  CHECK_THROWS_AS((void)toml_subset_parse("k = wat\n"), ConfigError);
}

TEST_CASE("experiment config validates its fields by name") {
  nlohmann::json j;
  j["case"] = "X";
  try {
    (void)ExperimentConfig::from_json(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("case") != std::string::npos);
  }
  j["case"] = "P";
  j["scheme"] = "banana";
  try {
    (void)ExperimentConfig::from_json(j);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("scheme") != std::string::npos);
  }
  j["scheme"] = "energy";
  j["r_qm"] = {3.0, 2.0};
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(j), ConfigError);
  j["r_qm"] = {2.0, 3.0};
  j["gamma"] = -1.0;
  CHECK_THROWS_AS((void)ExperimentConfig::from_json(j), ConfigError);
}

TEST_CASE("experiment config round-trips and loads both file formats") {
  ExperimentConfig c;
  c.scheme = "both";
  c.r_qm = {2.5, 3.5, 4.5};
  c.params.beta = 0.25;
  c.exclude_last = true;
  const ExperimentConfig c2 = ExperimentConfig::from_json(c.to_json());
  CHECK(c2.scheme == c.scheme);
  CHECK(c2.r_qm == c.r_qm);
  CHECK(c2.params.beta == c.params.beta);
  CHECK(c2.exclude_last == c.exclude_last);

  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "harness_cfg_test";
  fs::create_directories(dir);
  {
    std::ofstream((dir / "a.json").string()) << c.to_json().dump(2);
    const ExperimentConfig got = ExperimentConfig::load((dir / "a.json").string());
    CHECK(got.r_qm == c.r_qm);
    CHECK(got.params.beta == c.params.beta);
  }
  {
    std::ofstream((dir / "a.toml").string()) << R"(
scheme = "force"
r_qm = [2.5, 3.5, 4.5]
[tb]
beta = 0.5
)";
    const ExperimentConfig got = ExperimentConfig::load((dir / "a.toml").string());
    CHECK(got.scheme == "force");
    CHECK(got.params.beta == doctest::Approx(0.5));
  }
  CHECK_THROWS_AS((void)ExperimentConfig::load((dir / "missing.toml").string()),
                  ConfigError);
  fs::remove_all(dir);
}

TEST_CASE("displacement transfer matches sites and zero-extends") {
  const auto spec = LatticeSpec::triangular();
  const auto small = build_reference(spec, 4.0, DefectKind::none, 0.0);
  const auto big = build_reference(spec, 6.0, DefectKind::none, 0.0);
  std::mt19937 rng(9);
  std::uniform_real_distribution<double> ud(-1, 1);
  Displacement u(small.size(), 2);
  for (int i = 0; i < u.data.size(); ++i) u.data[i] = ud(rng);
  const Displacement v = transfer_displacement(u, small, big);
  REQUIRE(v.n_sites() == big.size());
  for (int id = 0; id < big.size(); ++id) {
    const auto sid = small.id_at(big.site(id));
    if (sid) {
      CHECK((v.at(id) - u.at(*sid)).cwiseAbs().maxCoeff() == 0.0);
    } else {
      CHECK(v.at(id).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  // round trip back to the small geometry is lossless
  const Displacement w = transfer_displacement(v, big, small);
  CHECK((w.data - u.data).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decay profile and shell averaging reproduce a planted power law") {
  const auto spec = LatticeSpec::triangular();
  const auto cfg = build_reference(spec, 30.0, DefectKind::none, 0.0);
  // plant u(x) = |x|^{-1} radially; then |Du| ~ |x|^{-2}
  Displacement u(cfg.size(), 2);
  for (int id = 0; id < cfg.size(); ++id) {
    const double r = cfg.site(id).norm();
    if (r > 0.5) {
      u.site(id)[0] = cfg.site(id).x() / (r * r);
      u.site(id)[1] = cfg.site(id).y() / (r * r);
    }
  }
  const auto prof = du_decay_profile(cfg, u, 1.0);
  REQUIRE(prof.size() == std::size_t(cfg.size()));
  const auto shells = shell_average(prof, 4.0, 25.0, 8);
  REQUIRE(shells.size() >= 4);
  std::vector<double> xs, ys;
  for (const auto& [r, v] : shells) {
    xs.push_back(r);
    ys.push_back(v);
  }
  CHECK(std::abs(fit_slope(xs, ys).slope + 2.0) < 0.25);
}

TEST_CASE("convergence study produces records, fits, and output files") {
  // deliberately small: stable nearest-neighbour model, short ladder with
  // growing buffers, matched free sets between hybrid and reference
  ExperimentConfig cfg;
  cfg.params.r_cut = 1.5;
  cfg.params.taper_margin = 0.3;
  cfg.params.ons_coeff = 0.8;
  cfg.params.beta = 1.0;
  cfg.scheme = "energy";
  cfg.defect = DefectKind::vacancy;
  cfg.r_qm = {2.8, 3.4, 4.2};
  cfg.r_buf = {1.6, 2.2, 3.0};
  cfg.r_mm = {7.0, 7.0, 7.0};
  cfg.tol = 1e-6;
  cfg.reference_tol = 1e-6;
  cfg.reference_r_domain = 13.5;
  cfg.reference_free_radius = 7.0;
  cfg.warm_start = true;
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "harness_study_test";
  fs::remove_all(dir);
  cfg.out_dir = dir.string();

  const StudyResult study = run_convergence_study(cfg);
  REQUIRE(study.records.size() == 3);
  for (const auto& r : study.records) {
    CHECK(r.ok);
    CHECK(r.geom_error > 0);
    CHECK(r.n_qm > 0);
  }
  REQUIRE(study.geom_fits.count("energy") == 1);
  CHECK(study.geom_fits.at("energy").slope < 0);  // errors shrink with R_QM
  CHECK(study.all_ok);

  REQUIRE(study.csv_paths.size() == 1);
  std::ifstream csv(study.csv_paths[0]);
  REQUIRE(csv.good());
  std::string header;
  std::getline(csv, header);
  CHECK(header ==
        "R_QM,R_MM,R_BUF,n_qm,geom_error,energy_error,resid,iters,wall_s");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows == 3);
  CHECK(fs::exists(study.json_path));
  fs::remove_all(dir);
}

TEST_CASE("single run emits a per-site diagnostics table") {
  ExperimentConfig cfg;
  cfg.params.r_cut = 1.5;
  cfg.params.taper_margin = 0.3;
  cfg.params.ons_coeff = 0.8;
  cfg.params.beta = 1.0;
  cfg.scheme = "energy";
  cfg.defect = DefectKind::vacancy;
  cfg.r_qm = {3.0};
  cfg.r_buf = {1.6};
  cfg.r_mm = {6.0};
  cfg.tol = 1e-6;
  namespace fs = std::filesystem;
  const fs::path dump = fs::temp_directory_path() / "harness_single_test.csv";
  fs::remove(dump);
  const SolverResult r = run_single(cfg, 3.0, dump.string());
  CHECK(r.converged);
  std::ifstream csv(dump.string());
  REQUIRE(csv.good());
  std::string header;
  std::getline(csv, header);
  CHECK(header == "id,x1,x2,region,u_norm,resid_norm,ghost_norm");
  int rows = 0;
  for (std::string line; std::getline(csv, line);) ++rows;
  CHECK(rows > 100);
  fs::remove(dump);
}
