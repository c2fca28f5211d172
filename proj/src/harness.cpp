#include "qmmm/harness.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace qmmm {

FitResult fit_slope(const std::vector<double>& xs,
                    const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 3)
    throw InvalidParameter("slope fit needs at least 3 matched points");
  const int n = int(xs.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    if (!(xs[i] > 0) || !(ys[i] > 0))
      throw InvalidParameter("slope fit requires positive data");
    const double lx = std::log(xs[i]), ly = std::log(ys[i]);
    sx += lx; sy += ly; sxx += lx * lx; sxy += lx * ly; syy += ly * ly;
  }
  FitResult f;
  const double den = n * sxx - sx * sx;
  if (std::abs(den) < 1e-14 * (std::abs(sxx) + 1))
    throw InvalidParameter("slope fit: degenerate abscissae");
  f.slope = (n * sxy - sx * sy) / den;
  f.intercept = (sy - f.slope * sx) / n;
  const double sst = syy - sy * sy / n;
  const double ssr = f.slope * (sxy - sx * sy / n);
  f.r2 = sst > 0 ? ssr / sst : 1.0;
  return f;
}

double schedule_r_buf(double r_qm) { return 1.0 + 0.6 * std::log(r_qm); }
double schedule_r_mm(double r_qm, double r_buf) {
  return 0.5 * r_qm * r_qm * r_qm + 2.0 * r_buf;
}

// --------------------------------------------------------------------------
// minimal TOML subset: [section.sub] headers, key = value, strings, bools,
// numbers, single-line arrays, # comments
namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

nlohmann::json parse_scalar(const std::string& tok) {
  const std::string t = trim(tok);
  if (t.empty()) throw ConfigError("empty value in config");
  if (t.front() == '"') {
    if (t.size() < 2 || t.back() != '"')
      throw ConfigError("unterminated string: " + t);
    return t.substr(1, t.size() - 2);
  }
  if (t == "true") return true;
  if (t == "false") return false;
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size()) throw ConfigError("bad number: " + t);
    if (t.find_first_of(".eE") == std::string::npos &&
        std::abs(v) < 9.0e15 && v == std::floor(v))
      return std::int64_t(v);
    return v;
  } catch (const std::invalid_argument&) {
    throw ConfigError("unrecognized value: " + t);
  }
}

nlohmann::json parse_value(const std::string& tok) {
  const std::string t = trim(tok);
  if (!t.empty() && t.front() == '[') {
    if (t.back() != ']') throw ConfigError("unterminated array: " + t);
    nlohmann::json arr = nlohmann::json::array();
    std::string inner = t.substr(1, t.size() - 2);
    std::string cur;
    bool quoted = false;
    for (char c : inner) {
      if (c == '"') quoted = !quoted;
      if (c == ',' && !quoted) {
        if (!trim(cur).empty()) arr.push_back(parse_scalar(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (!trim(cur).empty()) arr.push_back(parse_scalar(cur));
    return arr;
  }
  return parse_scalar(t);
}

nlohmann::json* descend(nlohmann::json& root, const std::string& dotted) {
  nlohmann::json* cur = &root;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) {
    part = trim(part);
    if (part.empty()) throw ConfigError("empty section name component");
    cur = &(*cur)[part];
  }
  return cur;
}

}  // namespace

nlohmann::json toml_subset_parse(const std::string& text) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* section = &root;
  std::stringstream ss(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(ss, raw)) {
    ++lineno;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) +
                          ": malformed section header");
      section = descend(root, line.substr(1, line.size() - 2));
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    (*section)[key] = parse_value(line.substr(eq + 1));
  }
  return root;
}

// --------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  if (j.contains("case")) {
    const std::string s = j.at("case").get<std::string>();
    if (s == "P" || s == "p") c.kind = CaseKind::P;
    else if (s == "D" || s == "d") c.kind = CaseKind::D;
    else throw ConfigError("field 'case': expected \"P\" or \"D\"");
  }
  if (j.contains("defect"))
    c.defect = defect_from_string(j.at("defect").get<std::string>());
  c.r_def = j.value("r_def", c.r_def);
  if (j.contains("tb")) c.params = TBParams::from_json(j.at("tb"));
  if (j.contains("scheme")) {
    c.scheme = j.at("scheme").get<std::string>();
    if (c.scheme != "energy" && c.scheme != "force" && c.scheme != "both")
      throw ConfigError("field 'scheme': expected energy|force|both");
  }
  c.k_e = j.value("k_e", c.k_e);
  c.k_f = j.value("k_f", c.k_f);
  if (j.contains("r_qm")) c.r_qm = j.at("r_qm").get<std::vector<double>>();
  c.auto_schedule = j.value("auto_schedule", c.auto_schedule);
  if (j.contains("r_buf")) c.r_buf = j.at("r_buf").get<std::vector<double>>();
  if (j.contains("r_mm")) c.r_mm = j.at("r_mm").get<std::vector<double>>();
  c.r_buf_max = j.value("r_buf_max", c.r_buf_max);
  c.r_mm_cap = j.value("r_mm_cap", c.r_mm_cap);
  c.gamma = j.value("gamma", c.gamma);
  c.tol = j.value("tol", c.tol);
  c.reference_tol = j.value("reference_tol", c.reference_tol);
  c.max_iter = j.value("max_iter", c.max_iter);
  c.reference_r_domain = j.value("reference_r_domain", c.reference_r_domain);
  c.reference_free_radius =
      j.value("reference_free_radius", c.reference_free_radius);
  c.reference_continuation =
      j.value("reference_continuation", c.reference_continuation);
  c.warm_start = j.value("warm_start", c.warm_start);
  c.exclude_last = j.value("exclude_last", c.exclude_last);
  c.fd_step = j.value("fd_step", c.fd_step);
  c.drop_tol = j.value("drop_tol", c.drop_tol);
  c.b3 = j.value("b3", c.b3);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.cache_dir = j.value("cache_dir", c.cache_dir);
  c.seed = j.value("seed", c.seed);
  c.assert_geom_slope_max =
      j.value("assert_geom_slope_max", c.assert_geom_slope_max);
  c.assert_energy_slope_max =
      j.value("assert_energy_slope_max", c.assert_energy_slope_max);

  if (c.kind == CaseKind::D) {
    if (c.defect != DefectKind::screw)
      throw ConfigError("case D requires defect = \"screw\"");
    if (c.params.z_period <= 0) c.params.z_period = c.b3;
  }
  if (c.gamma <= 0) throw ConfigError("field 'gamma' must be positive");
  if (c.k_e < 2) throw ConfigError("field 'k_e' must be >= 2");
  if (c.k_f < 1) throw ConfigError("field 'k_f' must be >= 1");
  for (std::size_t i = 1; i < c.r_qm.size(); ++i)
    if (c.r_qm[i] <= c.r_qm[i - 1])
      throw ConfigError("field 'r_qm' must be strictly ascending");
  if (!c.r_buf.empty() && c.r_buf.size() != c.r_qm.size())
    throw ConfigError("field 'r_buf' must match the length of 'r_qm'");
  if (!c.r_mm.empty() && c.r_mm.size() != c.r_qm.size())
    throw ConfigError("field 'r_mm' must match the length of 'r_qm'");
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  nlohmann::json j;
  if (path.size() > 5 && path.substr(path.size() - 5) == ".json") {
    j = nlohmann::json::parse(text);
  } else if (path.size() > 5 && path.substr(path.size() - 5) == ".toml") {
    j = toml_subset_parse(text);
  } else {
    // sniff: JSON starts with '{'
    const std::string t = trim(text);
    j = (!t.empty() && t.front() == '{') ? nlohmann::json::parse(text)
                                         : toml_subset_parse(text);
  }
  return from_json(j);
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["case"] = kind == CaseKind::P ? "P" : "D";
  j["defect"] = to_string(defect);
  j["r_def"] = r_def;
  j["tb"] = params.to_json();
  j["scheme"] = scheme;
  j["k_e"] = k_e;
  j["k_f"] = k_f;
  j["r_qm"] = r_qm;
  j["auto_schedule"] = auto_schedule;
  if (!r_buf.empty()) j["r_buf"] = r_buf;
  if (!r_mm.empty()) j["r_mm"] = r_mm;
  j["r_buf_max"] = r_buf_max;
  j["r_mm_cap"] = r_mm_cap;
  j["gamma"] = gamma;
  j["tol"] = tol;
  j["reference_tol"] = reference_tol;
  j["max_iter"] = max_iter;
  j["reference_r_domain"] = reference_r_domain;
  j["reference_free_radius"] = reference_free_radius;
  j["reference_continuation"] = reference_continuation;
  j["warm_start"] = warm_start;
  j["exclude_last"] = exclude_last;
  j["fd_step"] = fd_step;
  j["drop_tol"] = drop_tol;
  j["b3"] = b3;
  j["out_dir"] = out_dir;
  j["cache_dir"] = cache_dir;
  j["seed"] = seed;
  return j;
}

// --------------------------------------------------------------------------

Displacement transfer_displacement(const Displacement& u,
                                   const ReferenceConfig& src,
                                   const ReferenceConfig& dst) {
  if (u.n_sites() != src.size())
    throw InvalidParameter("displacement does not match source geometry");
  Displacement out(dst.size(), u.comps);
  for (int id = 0; id < dst.size(); ++id) {
    const auto sid = src.id_at(dst.site(id));
    if (sid)
      for (int k = 0; k < u.comps; ++k) out.site(id)[k] = u.site(*sid)[k];
  }
  return out;
}

std::vector<std::pair<double, double>> du_decay_profile(
    const ReferenceConfig& config, const Displacement& u, double gamma) {
  const double r_trunc = stencil_truncation_radius(gamma);
  std::vector<std::pair<double, double>> out;
  out.reserve(config.size());
  for (int id = 0; id < config.size(); ++id) {
    double acc = 0;
    for (const auto& [off, nb] : config.neighbors(id, r_trunc)) {
      double d2 = 0;
      for (int k = 0; k < u.comps; ++k) {
        const double d = u.site(nb)[k] - u.site(id)[k];
        d2 += d * d;
      }
      acc += std::exp(-2.0 * gamma * off.norm()) * d2;
    }
    out.emplace_back(config.site(id).norm(), std::sqrt(acc));
  }
  return out;
}

std::vector<std::pair<double, double>> shell_average(
    const std::vector<std::pair<double, double>>& profile, double r_min,
    double r_max, int bins) {
  if (bins < 1 || r_min <= 0 || r_max <= r_min)
    throw InvalidParameter("bad shell averaging window");
  const double lmin = std::log(r_min), lmax = std::log(r_max);
  std::vector<double> sum(bins, 0.0);
  std::vector<int> cnt(bins, 0);
  for (const auto& [r, v] : profile) {
    if (r < r_min || r > r_max) continue;
    int b = int((std::log(r) - lmin) / (lmax - lmin) * bins);
    b = std::clamp(b, 0, bins - 1);
    sum[b] += v;
    cnt[b] += 1;
  }
  std::vector<std::pair<double, double>> out;
  for (int b = 0; b < bins; ++b) {
    if (cnt[b] == 0) continue;
    const double mid = std::exp(lmin + (b + 0.5) * (lmax - lmin) / bins);
    const double avg = sum[b] / cnt[b];
    if (avg > 0) out.emplace_back(mid, avg);
  }
  return out;
}

// --------------------------------------------------------------------------

namespace {

struct LadderPoint {
  double r_qm, r_buf, r_mm, domain;
};

std::vector<LadderPoint> resolve_ladder(const ExperimentConfig& cfg) {
  std::vector<LadderPoint> pts;
  for (std::size_t i = 0; i < cfg.r_qm.size(); ++i) {
    LadderPoint p;
    p.r_qm = cfg.r_qm[i];
    p.r_buf = !cfg.r_buf.empty() ? cfg.r_buf[i] : schedule_r_buf(p.r_qm);
    if (cfg.r_buf_max > 0) p.r_buf = std::min(p.r_buf, cfg.r_buf_max);
    p.r_mm = !cfg.r_mm.empty() ? cfg.r_mm[i] : schedule_r_mm(p.r_qm, p.r_buf);
    if (cfg.r_mm_cap > 0) p.r_mm = std::min(p.r_mm, cfg.r_mm_cap);
    p.domain = p.r_mm + 2 * p.r_buf + 0.5;
    pts.push_back(p);
  }
  return pts;
}

std::optional<ScrewPredictor> make_predictor(const ExperimentConfig& cfg) {
  if (cfg.kind != CaseKind::D) return std::nullopt;
  ScrewPredictor p = ScrewPredictor::standard(LatticeSpec::triangular());
  p.b3 = cfg.b3;
  return p;
}

SolverResult solve_reference(const ExperimentConfig& cfg, double r_domain,
                             ReferenceConfig& out_cfg, std::ostream* log) {
  const auto spec = LatticeSpec::triangular();
  const auto pred = make_predictor(cfg);
  std::vector<double> stages;
  // with an explicit free radius the relaxing region is small regardless of
  // the domain size, so domain continuation buys nothing
  if (cfg.reference_continuation && cfg.reference_free_radius <= 0 &&
      r_domain > 12.0) {
    for (double r = std::max(8.0, r_domain / 2); r < r_domain - 1.0;
         r *= 1.45)
      stages.push_back(r);
  }
  stages.push_back(r_domain);

  SolverResult res;
  ReferenceConfig prev_cfg;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    ReferenceConfig rc =
        build_reference(spec, stages[s], cfg.defect, cfg.r_def);
    std::optional<Displacement> warm;
    if (s > 0) warm = transfer_displacement(res.u_star, prev_cfg, rc);
    const double tol = (s + 1 == stages.size()) ? cfg.reference_tol
                                                : 10 * cfg.reference_tol;
    const double r_clamp = cfg.reference_free_radius > 0
                               ? stages[s] - cfg.reference_free_radius
                               : -1.0;
    res = reference_solve_atm(rc, cfg.params, cfg.kind, stages[s], tol,
                              cfg.max_iter, r_clamp, warm ? &*warm : nullptr,
                              log, pred);
    if (log)
      (*log) << "# reference stage R=" << stages[s] << " iters="
             << res.iterations << " res=" << res.residual_norm << "\n";
    prev_cfg = std::move(rc);
  }
  out_cfg = std::move(prev_cfg);
  return res;
}

void write_csv(const std::string& path,
               const std::vector<ExperimentRecord>& rows) {
  std::ofstream out(path);
  out << "R_QM,R_MM,R_BUF,n_qm,geom_error,energy_error,resid,iters,wall_s\n";
  out.precision(12);
  for (const auto& r : rows) {
    out << r.r_qm << ',' << r.r_mm << ',' << r.r_buf << ',' << r.n_qm << ','
        << r.geom_error << ',';
    if (std::isnan(r.energy_error)) out << "";
    else out << r.energy_error;
    out << ',' << r.resid << ',' << r.iters << ',' << r.wall_s << '\n';
  }
}

nlohmann::json record_json(const ExperimentRecord& r) {
  nlohmann::json j;
  j["scheme"] = r.scheme;
  j["R_QM"] = r.r_qm;
  j["R_MM"] = r.r_mm;
  j["R_BUF"] = r.r_buf;
  j["n_qm"] = r.n_qm;
  j["geom_error"] = r.geom_error;
  if (!std::isnan(r.energy_error)) j["energy_error"] = r.energy_error;
  j["resid"] = r.resid;
  j["iters"] = r.iters;
  j["wall_s"] = r.wall_s;
  j["ok"] = r.ok;
  if (!r.note.empty()) j["note"] = r.note;
  return j;
}

}  // namespace

StudyResult run_convergence_study(const ExperimentConfig& cfg,
                                  std::ostream* log) {
  if (cfg.r_qm.size() < 3)
    throw ConfigError("convergence study needs an R_QM ladder of >= 3 values");
  const auto spec = LatticeSpec::triangular();
  const auto ladder = resolve_ladder(cfg);
  const auto pred = make_predictor(cfg);
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);

  StudyResult study;
  double max_r_mm = 0;
  for (const auto& p : ladder) max_r_mm = std::max(max_r_mm, p.r_mm);
  study.reference_r_domain = cfg.reference_r_domain > 0
                                 ? cfg.reference_r_domain
                                 : 2.0 * max_r_mm;

  ReferenceConfig ref_cfg;
  study.reference = solve_reference(cfg, study.reference_r_domain, ref_cfg, log);
  if (!study.reference.converged)
    throw InvalidParameter("reference solve did not converge: " +
                           study.reference.message);

  std::vector<std::string> schemes;
  if (cfg.scheme == "both") schemes = {"energy", "force"};
  else schemes = {cfg.scheme};

  std::optional<std::string> cache =
      cfg.cache_dir.empty() ? std::nullopt
                            : std::optional<std::string>(cfg.cache_dir);

  for (const auto& p : ladder) {
    ReferenceConfig rc = build_reference(spec, p.domain, cfg.defect, cfg.r_def);
    const auto dec = decompose(rc, p.r_qm, p.r_mm, p.r_buf);
    for (const auto& sname : schemes) {
      ExperimentRecord rec;
      rec.scheme = sname;
      rec.r_qm = p.r_qm;
      rec.r_mm = p.r_mm;
      rec.r_buf = p.r_buf;
      rec.n_qm = int(dec.qm_ids.size());
      try {
        const Scheme sc = sname == "energy" ? Scheme::energy : Scheme::force;
        const auto model =
            build_hybrid_model(rc, dec, cfg.params, cfg.k_e, cfg.k_f, cfg.kind,
                               sc, cfg.fd_step, cfg.drop_tol, cache, pred);
        Displacement u0(rc.size(), model.comps());
        if (cfg.warm_start) {
          u0 = transfer_displacement(study.reference.u_star, ref_cfg, rc);
          for (int id = 0; id < rc.size(); ++id)
            if (dec.labels[id] == Region::FF)
              for (int k = 0; k < model.comps(); ++k) u0.site(id)[k] = 0.0;
        }
        const SolverResult sol =
            sc == Scheme::energy
                ? minimize_energy(model, u0, cfg.tol, cfg.max_iter, log)
                : solve_force_balance(model, u0, cfg.tol, cfg.max_iter, log);
        rec.resid = sol.residual_norm;
        rec.iters = sol.iterations;
        rec.wall_s = sol.wall_time;
        if (!sol.converged) {
          rec.note = "solver: " + sol.message;
        } else {
          rec.geom_error = weighted_seminorm_difference(
              study.reference.u_star, ref_cfg, sol.u_star, rc, cfg.gamma);
          if (sc == Scheme::energy)
            rec.energy_error =
                std::abs(study.reference.energy - hybrid_energy(model, sol.u_star));
          rec.ok = true;
        }
      } catch (const std::exception& e) {
        rec.note = e.what();
      }
      if (log)
        (*log) << "# " << sname << " R_QM=" << p.r_qm
               << (rec.ok ? " geom_error=" + std::to_string(rec.geom_error)
                          : " FAILED: " + rec.note)
               << "\n";
      study.records.push_back(std::move(rec));
    }
  }

  // slope fits per scheme (optionally excluding the final ladder point)
  for (const auto& sname : schemes) {
    std::vector<double> xs, ys, es_x, es_y;
    for (const auto& r : study.records) {
      if (r.scheme != sname || !r.ok) continue;
      if (cfg.exclude_last && r.r_qm == ladder.back().r_qm) continue;
      if (r.geom_error > 0) {
        xs.push_back(r.r_qm);
        ys.push_back(r.geom_error);
      }
      if (!std::isnan(r.energy_error) && r.energy_error > 0) {
        es_x.push_back(r.r_qm);
        es_y.push_back(r.energy_error);
      }
    }
    if (xs.size() >= 3) study.geom_fits[sname] = fit_slope(xs, ys);
    if (es_x.size() >= 3) study.energy_fits[sname] = fit_slope(es_x, es_y);
  }

  // outputs
  for (const auto& sname : schemes) {
    std::vector<ExperimentRecord> rows;
    for (const auto& r : study.records)
      if (r.scheme == sname) rows.push_back(r);
    const std::string path =
        (fs::path(cfg.out_dir) / ("study_" + sname + ".csv")).string();
    write_csv(path, rows);
    study.csv_paths.push_back(path);
  }

  nlohmann::json summary;
  summary["config"] = cfg.to_json();
  summary["reference"] = {{"r_domain", study.reference_r_domain},
                          {"converged", study.reference.converged},
                          {"iterations", study.reference.iterations},
                          {"residual", study.reference.residual_norm},
                          {"energy", study.reference.energy},
                          {"wall_s", study.reference.wall_time}};
  summary["exclude_last"] = cfg.exclude_last;
  summary["records"] = nlohmann::json::array();
  for (const auto& r : study.records) summary["records"].push_back(record_json(r));
  for (const auto& [s, f] : study.geom_fits)
    summary["geom_fit"][s] = {{"slope", f.slope},
                              {"intercept", f.intercept},
                              {"r2", f.r2}};
  for (const auto& [s, f] : study.energy_fits)
    summary["energy_fit"][s] = {{"slope", f.slope},
                                {"intercept", f.intercept},
                                {"r2", f.r2}};

  study.all_ok = true;
  for (const auto& r : study.records) study.all_ok = study.all_ok && r.ok;
  if (!std::isnan(cfg.assert_geom_slope_max))
    for (const auto& [s, f] : study.geom_fits) {
      const bool pass = f.slope <= cfg.assert_geom_slope_max;
      summary["assert"]["geom_slope"][s] = pass;
      study.all_ok = study.all_ok && pass;
    }
  if (!std::isnan(cfg.assert_energy_slope_max))
    for (const auto& [s, f] : study.energy_fits) {
      const bool pass = f.slope <= cfg.assert_energy_slope_max;
      summary["assert"]["energy_slope"][s] = pass;
      study.all_ok = study.all_ok && pass;
    }

  // geometry snapshot: radii + region counts per ladder point
  nlohmann::json geo = nlohmann::json::array();
  for (const auto& p : ladder) {
    ReferenceConfig rc = build_reference(spec, p.domain, cfg.defect, cfg.r_def);
    const auto dec = decompose(rc, p.r_qm, p.r_mm, p.r_buf);
    geo.push_back({{"R_QM", p.r_qm},
                   {"R_MM", p.r_mm},
                   {"R_BUF", p.r_buf},
                   {"domain", p.domain},
                   {"n_sites", rc.size()},
                   {"n_qm", dec.qm_ids.size()},
                   {"n_mm", dec.mm_ids.size()},
                   {"n_buffer", dec.buffer_ids.size()},
                   {"n_ff", dec.n_ff}});
  }
  summary["geometry"] = geo;

  study.json_path = (fs::path(cfg.out_dir) / "summary.json").string();
  std::ofstream(study.json_path) << summary.dump(2) << "\n";
  return study;
}

SolverResult run_single(const ExperimentConfig& cfg, double r_qm,
                        const std::string& dump_csv, std::ostream* log) {
  const auto spec = LatticeSpec::triangular();
  ExperimentConfig one = cfg;
  one.r_qm = {r_qm};
  const auto ladder = resolve_ladder(one);
  const auto& p = ladder.front();
  const auto pred = make_predictor(cfg);

  ReferenceConfig rc = build_reference(spec, p.domain, cfg.defect, cfg.r_def);
  const auto dec = decompose(rc, p.r_qm, p.r_mm, p.r_buf);
  const Scheme sc = cfg.scheme == "force" ? Scheme::force : Scheme::energy;
  std::optional<std::string> cache =
      cfg.cache_dir.empty() ? std::nullopt
                            : std::optional<std::string>(cfg.cache_dir);
  const auto model =
      build_hybrid_model(rc, dec, cfg.params, cfg.k_e, cfg.k_f, cfg.kind, sc,
                         cfg.fd_step, cfg.drop_tol, cache, pred);
  const Displacement u0(rc.size(), model.comps());
  const SolverResult sol =
      sc == Scheme::energy
          ? minimize_energy(model, u0, cfg.tol, cfg.max_iter, log)
          : solve_force_balance(model, u0, cfg.tol, cfg.max_iter, log);

  if (!dump_csv.empty()) {
    // per-site diagnostics: residual rows at the solution and the
    // reference-state interface (ghost) rows
    const Displacement res_rows = sc == Scheme::energy
                                      ? hybrid_energy_gradient(model, sol.u_star)
                                      : hybrid_force(model, sol.u_star);
    const Displacement ghost_rows = sc == Scheme::energy
                                        ? hybrid_energy_gradient(model, u0)
                                        : hybrid_force(model, u0);
    std::ofstream out(dump_csv);
    out << "id,x1,x2,region,u_norm,resid_norm,ghost_norm\n";
    out.precision(12);
    const int c = model.comps();
    for (int id = 0; id < rc.size(); ++id) {
      double un = 0, rn = 0, gn = 0;
      for (int k = 0; k < c; ++k) {
        un += sol.u_star.site(id)[k] * sol.u_star.site(id)[k];
        rn += res_rows.site(id)[k] * res_rows.site(id)[k];
        gn += ghost_rows.site(id)[k] * ghost_rows.site(id)[k];
      }
      const char* reg = dec.labels[id] == Region::QM   ? "QM"
                        : dec.labels[id] == Region::MM ? "MM"
                                                       : "FF";
      out << id << ',' << rc.site(id).x() << ',' << rc.site(id).y() << ','
          << reg << ',' << std::sqrt(un) << ',' << std::sqrt(rn) << ','
          << std::sqrt(gn) << '\n';
    }
  }
  return sol;
}

}  // namespace qmmm
