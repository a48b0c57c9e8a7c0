#pragma once

// Run orchestration behind the command-line tool: single runs with their
// oracle checks, parameter sweeps, and oracle curve export.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "config.hpp"
#include "diagnostics.hpp"
#include "io.hpp"
#include "model.hpp"
#include "oracles.hpp"
#include "solver.hpp"

namespace sbm {

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config_error = 2;
inline constexpr int numerical_abort = 3;
inline constexpr int check_failed = 4;
}  // namespace exit_code

/// Outcome of one named check: "pass", "fail" or "skipped", with details.
struct CheckStatus {
  std::string status = "skipped";
  Json detail = Json::object();

  bool failed() const { return status == "fail"; }
  Json to_json() const {
    Json j = detail;
    j["status"] = status;
    return j;
  }
};

struct RunChecks {
  CheckStatus positivity, gamma_bound, f_comparison, omega_consistency, warmup_g;

  bool any_failed() const {
    return positivity.failed() || gamma_bound.failed() || f_comparison.failed() ||
           omega_consistency.failed() || warmup_g.failed();
  }
};

struct RunReport {
  ModelParams params;
  RunResult run;
  BlowupReport blowup;
  RunChecks checks;
  std::optional<double> tau0;
  std::optional<double> gamma_tstar;  // t*(L4): first probe blow-up time
  std::optional<double> T_G;
};

/// Labels spread evenly over the support of rho0 in the z frame.
inline std::vector<double> gamma_probe_labels(const InitialDataSpec& spec, std::size_t n) {
  std::vector<double> out;
  if (n == 1) return {spec.support_hi()};
  for (std::size_t k = 0; k < n; ++k)
    out.push_back(spec.support_lo() +
                  (spec.support_hi() - spec.support_lo()) * static_cast<double>(k) / static_cast<double>(n - 1));
  return out;
}

namespace detail {

/// Piecewise-linear reading of a monotone oracle curve; nullopt past its end.
inline std::optional<double> curve_at(const OracleCurve& c, double t) {
  if (t < c.grid.front() || t > c.grid.back()) return std::nullopt;
  auto it = std::upper_bound(c.grid.begin(), c.grid.end(), t);
  if (it == c.grid.end()) return c.values.back();
  const std::size_t i = static_cast<std::size_t>(it - c.grid.begin()) - 1;
  const double w = (t - c.grid[i]) / (c.grid[i + 1] - c.grid[i]);
  return c.values[i] + w * (c.values[i + 1] - c.values[i]);
}

}  // namespace detail

/// Runs the configured simulation and evaluates every applicable check
/// frame by frame. Throws ConfigError for invalid configurations only.
inline RunReport simulate_with_checks(const RunConfig& cfg) {
  cfg.validate();
  RunReport rep;
  rep.params = cfg.params();
  const ModelParams& p = rep.params;
  const InitialDataSpec& spec = cfg.spec;
  const bool zf = spec.frame == Frame::z_model;

  RunOptions opts;
  RunChecks& ck = rep.checks;

  // Positivity window and deformation bound: z frame, blow-up range, t <= tau0.
  if (zf && p.blow_up_range && spec.amplitude > 0.0) {
    try {
      rep.tau0 = solve_tau0(p, spec).tau0;
      for (int k = 1; k <= 8; ++k) opts.frame_times.push_back(*rep.tau0 * k / 8.0);
      ck.positivity.status = "pass";
      ck.positivity.detail = {{"frames", 0}, {"min_K", nullptr}, {"min_bound_slack", nullptr}};
    } catch (const OracleFailure& e) {
      ck.positivity.detail["reason"] = e.what();
    }
  } else {
    ck.positivity.detail["reason"] = zf ? "parameters outside the blow-up range or zero data"
                                        : "defined in the z frame";
  }

  std::vector<GammaProbe<GammaOracle>> probes;
  if (zf) {
    for (double z : gamma_probe_labels(spec, cfg.checks.gamma_probes)) probes.push_back({z, GammaOracle(z)});
    rep.gamma_tstar = GammaOracle(spec.support_hi()).blowup_time();
    ck.gamma_bound.status = "pass";
    ck.gamma_bound.detail = {{"probes", probes.size()}, {"checked", 0}, {"worst_ratio", 0.0}};
  } else {
    ck.gamma_bound.detail["reason"] = "defined in the z frame";
  }

  std::optional<FField> f_field;
  if (zf && p.blow_up_range) {
    try {
      auto fr = solve_f_picard(p.growth_constant(), spec.L2, spec.L3, cfg.t_end, cfg.checks.f_nz, 1e-12,
                               cfg.checks.f_nt);
      f_field = std::move(fr.field);
      ck.f_comparison.status = "pass";
      ck.f_comparison.detail = {{"checked", 0}, {"worst_ratio", nullptr}};
    } catch (const OracleFailure& e) {
      ck.f_comparison.detail["reason"] = e.what();
    }
  } else {
    ck.f_comparison.detail["reason"] = zf ? "parameters outside the blow-up range" : "defined in the z frame";
  }

  // G lower bound on 1/Phi(plateau_lo, t): sign-definite warm-up only.
  std::optional<OracleCurve> g_curve;
  if (!zf && p.beta1 == 1.0 && p.beta2 == 1.0 && spec.amplitude == 1.0) {
    rep.T_G = warmup_blowup_time_quadrature();
    g_curve = solve_warmup_g();
    ck.warmup_g.status = "pass";
    ck.warmup_g.detail = {{"T_G", *rep.T_G}, {"checked", 0}, {"worst_ratio", nullptr}};
  } else {
    ck.warmup_g.detail["reason"] = "sign-definite warm-up data only";
  }

  ck.omega_consistency.status = "pass";
  double worst_resid = 0.0;
  double min_K = 0.0, min_slack = 0.0, gamma_worst = 0.0, f_worst = 0.0, g_worst = 0.0;
  std::size_t pos_frames = 0, gamma_checked = 0, f_checked = 0, g_checked = 0;

  opts.observer = [&](const LagrangianState& s, const DiagnosticsFrame& f) {
    worst_resid = std::max(worst_resid, f.omega_residual);
    if (f.omega_residual > 1e-8) ck.omega_consistency.status = "fail";

    if (rep.tau0 && s.t <= *rep.tau0) {
      const auto r = check_positivity_window(s, p, spec);
      min_K = pos_frames == 0 ? r.min_K : std::min(min_K, r.min_K);
      min_slack = pos_frames == 0 ? r.min_bound_slack : std::min(min_slack, r.min_bound_slack);
      ++pos_frames;
      if (!r.pass || !r.bound_pass) ck.positivity.status = "fail";
    }
    if (!probes.empty()) {
      const auto r = check_gamma_bound(s, probes);
      gamma_checked += r.checked;
      gamma_worst = std::max(gamma_worst, r.worst_ratio);
      if (!r.pass) ck.gamma_bound.status = "fail";
    }
    if (f_field) {
      const auto r = check_f_comparison(s, *f_field, spec.L2, spec.L3);
      if (r.checked > 0) {
        f_worst = f_checked == 0 ? r.worst_ratio : std::min(f_worst, r.worst_ratio);
        f_checked += r.checked;
      }
      if (!r.pass) ck.f_comparison.status = "fail";
    }
    if (g_curve) {
      if (const auto G = detail::curve_at(*g_curve, s.t)) {
        const double y = 1.0 / detail::phi_at_label(s, spec.plateau_lo);
        g_worst = g_checked == 0 ? y / *G : std::min(g_worst, y / *G);
        ++g_checked;
        if (!(y >= *G * (1.0 - 1e-2))) ck.warmup_g.status = "fail";
      }
    }
  };

  rep.run = run_simulation(p, spec, cfg.ctrl, cfg.t_end, opts);
  rep.blowup = detect_blowup(rep.run.frames, rep.run.cause);

  ck.omega_consistency.detail = {{"max_residual", worst_resid}, {"tolerance", 1e-8}};
  if (rep.tau0) {
    ck.positivity.detail = {{"tau0", *rep.tau0},
                            {"frames", pos_frames},
                            {"min_K", pos_frames ? Json(min_K) : Json(nullptr)},
                            {"min_bound_slack", pos_frames ? Json(min_slack) : Json(nullptr)}};
  }
  if (!probes.empty()) {
    ck.gamma_bound.detail["checked"] = gamma_checked;
    ck.gamma_bound.detail["worst_ratio"] = gamma_worst;
  }
  if (f_field) {
    ck.f_comparison.detail["checked"] = f_checked;
    ck.f_comparison.detail["worst_ratio"] = f_checked ? Json(f_worst) : Json(nullptr);
  }
  if (g_curve) {
    ck.warmup_g.detail["checked"] = g_checked;
    ck.warmup_g.detail["worst_ratio"] = g_checked ? Json(g_worst) : Json(nullptr);
    const double t_stop = rep.run.final_state.t;
    ck.warmup_g.detail["t_stop"] = t_stop;
    const bool in_time = rep.run.cause == Termination::omega_cap && t_stop <= 1.1 * *rep.T_G;
    ck.warmup_g.detail["stop_within_1.1_T_G"] = in_time;
    if (!in_time) ck.warmup_g.status = "fail";
  }
  return rep;
}

inline Json summary_json(const RunConfig& cfg, const RunReport& rep) {
  Json j;
  j["params"] = to_json(rep.params);
  j["spec"] = to_json(cfg.spec);
  j["classification"] = to_string(rep.blowup.classification);
  j["T_est"] = json_number(rep.blowup.T_est);
  j["tau0"] = json_number(rep.tau0);
  j["gamma_tstar"] = json_number(rep.gamma_tstar);
  j["cause"] = to_string(rep.run.cause);
  j["checks"] = {{"positivity", rep.checks.positivity.to_json()},
                 {"gamma_bound", rep.checks.gamma_bound.to_json()},
                 {"f_comparison", rep.checks.f_comparison.to_json()},
                 {"omega_consistency", rep.checks.omega_consistency.to_json()},
                 {"warmup_g", rep.checks.warmup_g.to_json()}};
  j["message"] = rep.run.message;
  j["t_final"] = rep.run.final_state.t;
  j["t_end"] = cfg.t_end;
  j["steps"] = rep.run.steps;
  j["rejected"] = rep.run.rejected;
  j["frames"] = rep.run.frames.size();
  j["markers_final"] = rep.run.final_state.size();
  j["report"] = {{"reason", rep.blowup.reason},
                 {"loglog_slope", json_number(rep.blowup.loglog_slope)},
                 {"fit_points", rep.blowup.fit_points},
                 {"final_sup_omega", json_number(rep.blowup.final_sup_omega)},
                 {"final_I_omega", json_number(rep.blowup.final_I_omega)},
                 {"final_I_drho", json_number(rep.blowup.final_I_drho)},
                 {"final_I_dxu", json_number(rep.blowup.final_I_dxu)}};
  const auto& c = cfg.ctrl;
  j["solver"] = {{"dt_init", c.dt_init},       {"dt_min", c.dt_min},
                 {"dt_safety", c.dt_safety},   {"rk_tol", c.rk_tol},
                 {"omega_cap", c.omega_cap},   {"h_max", c.resolved_h_max(cfg.spec)},
                 {"refine_tol", c.refine_tol}, {"max_markers", c.resolved_max_markers(cfg.spec)},
                 {"frame_stride", c.frame_stride}};
  if (rep.T_G) j["T_G"] = *rep.T_G;
  return j;
}

/// OUTPUT_DIR from the environment wins over the config's [output] dir.
inline std::string resolve_output_dir(const RunConfig& cfg) {
  if (const char* env = std::getenv("OUTPUT_DIR"); env && *env) return env;
  return cfg.output.dir;
}

/// Single run: frames.csv, summary.json and optionally profile.csv.
/// With enforce_checks a failed check turns into exit code 4.
inline int execute_run(const RunConfig& cfg, const std::string& out_dir, bool enforce_checks,
                       std::ostream& err) {
  RunReport rep;
  try {
    rep = simulate_with_checks(cfg);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_code::config_error;
  }
  const auto dir = ensure_dir(out_dir);
  write_file(dir / "frames.csv", [&](std::ostream& o) { write_frames_csv(o, rep.run.frames); });
  write_file(dir / "summary.json", [&](std::ostream& o) { o << summary_json(cfg, rep).dump(2) << '\n'; });
  if (cfg.output.emit_profile)
    write_file(dir / "profile.csv", [&](std::ostream& o) { write_profile_csv(o, rep.run.final_state); });

  if (rep.blowup.classification == Classification::aborted) {
    err << "numerical abort: " << rep.run.message << " (" << rep.blowup.reason << ")\n";
    return exit_code::numerical_abort;
  }
  if (enforce_checks && rep.checks.any_failed()) {
    const std::pair<const char*, const CheckStatus*> all[] = {
        {"positivity", &rep.checks.positivity},
        {"gamma_bound", &rep.checks.gamma_bound},
        {"f_comparison", &rep.checks.f_comparison},
        {"omega_consistency", &rep.checks.omega_consistency},
        {"warmup_g", &rep.checks.warmup_g}};
    for (const auto& [name, c] : all)
      if (c->failed()) err << "check failed: " << name << ' ' << c->detail.dump() << '\n';
    return exit_code::check_failed;
  }
  return exit_code::ok;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepRow {
  double beta1 = 0.0, beta2 = 0.0;
  bool blow_up_range = false;
  std::string classification = "aborted";
  std::optional<double> T_est;
  std::optional<double> min_K;  // minimum of the per-frame min_K over the run
  std::size_t steps = 0;
  std::string cause = "none";
  std::string error;
  double wall_seconds = 0.0;
};

inline SweepRow run_sweep_cell(const RunConfig& base, double beta1, double beta2) {
  SweepRow row;
  row.beta1 = beta1;
  row.beta2 = beta2;
  row.blow_up_range = beta1 < 2.0 * beta2;
  const auto start = std::chrono::steady_clock::now();
  try {
    RunConfig cfg = base;
    cfg.beta1 = beta1;
    cfg.beta2 = beta2;
    cfg.epsilon.reset();
    const ModelParams p = cfg.params();
    cfg.spec.validate(p);
    const RunResult r = run_simulation(p, cfg.spec, cfg.ctrl, cfg.t_end);
    const BlowupReport b = detect_blowup(r.frames, r.cause);
    row.classification = to_string(b.classification);
    row.T_est = b.T_est;
    for (const auto& f : r.frames) row.min_K = row.min_K ? std::min(*row.min_K, f.min_K) : f.min_K;
    row.steps = r.steps;
    row.cause = to_string(r.cause);
  } catch (const std::exception& e) {
    row.classification = "aborted";
    row.error = e.what();
  }
  row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return row;
}

/// All cells in beta1-outer, beta2-inner order, whatever the scheduling.
inline std::vector<SweepRow> run_sweep(const RunConfig& cfg, std::size_t workers) {
  const SweepGrid& g = *cfg.sweep;
  const std::size_t n2 = g.beta2.size();
  const std::size_t cells = g.beta1.size() * n2;
  std::vector<SweepRow> rows(cells);
  std::atomic<std::size_t> next{0};
  auto work = [&]() {
    for (std::size_t i; (i = next.fetch_add(1)) < cells;)
      rows[i] = run_sweep_cell(cfg, g.beta1[i / n2], g.beta2[i % n2]);
  };
  workers = std::clamp<std::size_t>(workers, 1, cells);
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  return rows;
}

/// Deterministic columns only; the step count stands in for runtime.
inline void write_sweep_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  CsvWriter w(out);
  w.header({"beta1", "beta2", "blow_up_range", "classification", "T_est", "min_K", "runtime_steps", "cause"});
  for (const auto& r : rows) {
    w.cell(r.beta1).cell(r.beta2).cell(r.blow_up_range ? "true" : "false").cell(r.classification);
    w.cell(r.T_est ? format_double(*r.T_est) : std::string());
    w.cell(r.min_K ? format_double(*r.min_K) : std::string());
    w.cell(static_cast<std::uint64_t>(r.steps)).cell(r.cause);
    w.end_row();
  }
}

inline void write_sweep_timing_csv(std::ostream& out, const std::vector<SweepRow>& rows) {
  CsvWriter w(out);
  w.header({"beta1", "beta2", "wall_seconds", "error"});
  for (const auto& r : rows) {
    w.cell(r.beta1).cell(r.beta2).cell(r.wall_seconds).cell(r.error.empty() ? std::string() : '"' + r.error + '"');
    w.end_row();
  }
}

inline int execute_sweep(const RunConfig& cfg, const std::string& out_dir, std::optional<std::size_t> workers,
                         std::ostream& err) {
  if (!cfg.sweep) {
    err << "config error: sweep needs a [sweep] section with beta1 and beta2 lists\n";
    return exit_code::config_error;
  }
  const auto rows = run_sweep(cfg, workers.value_or(cfg.sweep->workers));
  const auto dir = ensure_dir(out_dir);
  write_file(dir / "sweep.csv", [&](std::ostream& o) { write_sweep_csv(o, rows); });
  write_file(dir / "sweep_timing.csv", [&](std::ostream& o) { write_sweep_timing_csv(o, rows); });
  for (const auto& r : rows)
    if (!r.error.empty()) err << "cell beta1=" << r.beta1 << " beta2=" << r.beta2 << ": " << r.error << '\n';
  return exit_code::ok;
}

// ---------------------------------------------------------------------------
// Oracle export

inline int execute_oracles(const RunConfig& cfg, const std::string& out_dir, std::ostream& err) {
  const ModelParams p = cfg.params();
  const InitialDataSpec& spec = cfg.spec;
  const auto dir = ensure_dir(out_dir);
  Json j;

  // Gamma along the probe labels: ODE and closed form side by side.
  Json gj = Json::array();
  write_file(dir / "oracle_gamma.csv", [&](std::ostream& o) {
    CsvWriter w(o);
    w.header({"label", "t", "gamma_ode", "gamma_closed"});
    for (double z : gamma_probe_labels(spec.frame == Frame::z_model ? spec : InitialDataSpec{},
                                       cfg.checks.gamma_probes)) {
      const OracleCurve c = solve_gamma(z, 1e-12, 64, 0.9);
      const GammaOracle closed(z);
      for (std::size_t k = 0; k < c.grid.size(); ++k) {
        w.cell(z).cell(c.grid[k]).cell(c.values[k]).cell(closed.value(c.grid[k]));
        w.end_row();
      }
      gj.push_back({{"label", z}, {"tstar", *c.blowup_time}});
    }
  });
  j["gamma"] = gj;

  const OracleCurve g = solve_warmup_g();
  write_file(dir / "oracle_g.csv", [&](std::ostream& o) {
    CsvWriter w(o);
    w.header({"t", "G", "v"});
    for (std::size_t k = 0; k < g.grid.size(); ++k) {
      w.cell(g.grid[k]).cell(g.values[k]).cell(g.derivative[k]);
      w.end_row();
    }
  });
  j["T_G_quadrature"] = warmup_blowup_time_quadrature();
  j["T_G_ode"] = json_number(g.blowup_time);

  if (p.blow_up_range && spec.frame == Frame::z_model) {
    const double c = p.growth_constant();
    try {
      const Tau0Result t0 = solve_tau0(p, spec);
      j["tau0"] = {{"tau0", t0.tau0}, {"root", t0.root}, {"residual", t0.residual},
                   {"rhs_scale", t0.rhs_scale}, {"capped", t0.capped}};
      const auto f = solve_f_picard(c, spec.L2, spec.L3, cfg.t_end, cfg.checks.f_nz, 1e-12, cfg.checks.f_nt);
      write_file(dir / "oracle_f.csv", [&](std::ostream& o) {
        CsvWriter w(o);
        w.header({"z", "t", "f"});
        const std::size_t stride = std::max<std::size_t>(1, (f.field.n_t - 1) / 64);
        for (std::size_t jz = 0; jz < f.field.n_z; ++jz)
          for (std::size_t k = 0; k < f.field.n_t; k += stride) {
            w.cell(f.field.z(jz)).cell(f.field.t(k)).cell(f.field.at(jz, k));
            w.end_row();
          }
      });
      j["f"] = {{"c", c}, {"iterations", f.iterations}, {"converged", f.converged},
                {"blowup_time", json_number(f.blowup_time)}};

      const double Delta = 1.1 * ladder_threshold(c, t0.tau0);
      const auto lf = solve_f_picard(c, spec.L3 - Delta, spec.L3, t0.tau0, 257, 1e-12, 1025);
      const LadderResult lr = verify_induction_ladder(lf.field, c, t0.tau0, Delta);
      Json rungs = Json::array();
      for (const auto& r : lr.rungs)
        rungs.push_back({{"n", r.n}, {"t", r.t}, {"level", r.level}, {"min_f", json_number(r.min_f)},
                         {"pass", r.pass}});
      j["ladder"] = {{"Delta", Delta}, {"base_value", lr.base_value}, {"pass", lr.pass}, {"rungs", rungs}};
    } catch (const OracleFailure& e) {
      err << "oracle failure: " << e.what() << '\n';
      j["error"] = e.what();
      write_file(dir / "oracles.json", [&](std::ostream& o) { o << j.dump(2) << '\n'; });
      return exit_code::numerical_abort;
    }
  }
  write_file(dir / "oracles.json", [&](std::ostream& o) { o << j.dump(2) << '\n'; });
  return exit_code::ok;
}

}  // namespace sbm
