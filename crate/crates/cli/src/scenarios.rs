//! Initial data, solver runs and checks of every scenario.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fastdiff_core::diagnostics::{
    aronson_benilan_check, check_trapped, claim_i_check, contraction_series, convergence_series, decay_check, laplacian_weight_sign,
    potential_decay_check, sample_radii, sandwich_bounds_check, weighted_contraction_series, Axis, CheckResult, DiagnosticsReport,
    Location, Series, SeriesRow,
};
use fastdiff_core::grid::{fit_tail_exponent, l1_distance, make_grid, sup_distance, volume_integral, weighted_l1_distance};
use fastdiff_core::profiles::{find_k0, pde_residual, Profile};
use fastdiff_core::rescaling::{
    from_rescaled, rescale_trajectory, rescaled_residual_with, second_kind_rescale, tau_ladder, to_rescaled, RescaledField,
};
use fastdiff_core::selfsimilar::{find_anomalous_theta, profile_ode_residual, YamabeProfile};
use fastdiff_core::solver::{estimate_extinction_time, evolve, init_state, BoundaryMode, SolverConfig, StopRule, Trajectory};
use fastdiff_core::{derive_params, Barenblatt, Error, ProblemParams, RadialField, RadialGrid, RescaledBarenblatt};

use crate::config::{ScenarioConfig, ScenarioKind};
use crate::CliError;

/// `(N, m)` pairs of the closed-form self-test, covering both regimes.
pub const SELFTEST_PAIRS: [(usize, f64); 5] = [(3, 0.2), (3, 0.25), (4, 0.3), (6, 0.4), (8, 0.5)];

/// Stencil width for the differenced stationarity check.
const STATIONARY_STENCIL: usize = 9;

/// Snapshot cadence required by the potential and contraction checks.
const MIN_SNAPSHOTS: usize = 50;

type Res<T> = std::result::Result<T, CliError>;

fn grid_of(cfg: &ScenarioConfig) -> Res<Arc<RadialGrid>> {
    Ok(make_grid(cfg.grid.rmax, cfg.grid.intervals, cfg.grid.r_lin, cfg.params.dim)?)
}

fn solver_config(cfg: &ScenarioConfig, boundary: BoundaryMode, stop: StopRule) -> SolverConfig {
    let mut s = SolverConfig::new(cfg.params, boundary, stop);
    s.dt_init = cfg.solver.dt_init;
    s.dt_max = cfg.solver.dt_max;
    s.newton_tol = cfg.solver.newton_tol;
    s.newton_max_iter = cfg.solver.newton_max_iter;
    s.adapt_target = cfg.solver.adapt_target;
    s
}

/// Source times of the configured τ ladder.
fn ladder_times(cfg: &ScenarioConfig) -> Vec<f64> {
    let count = (cfg.tau_span / cfg.tau_spacing).round() as usize + 1;
    tau_ladder(&cfg.params, cfg.tau_start, cfg.tau_spacing, count)
}

/// Fixed-step copy of `scfg` for runs that are compared pointwise.
fn paired(scfg: &SolverConfig, cfg: &ScenarioConfig) -> SolverConfig {
    let mut out = *scfg;
    out.adaptive = false;
    out.dt_init = cfg.solver.paired_dt * cfg.params.horizon;
    out
}

fn solve(u0: RadialField, scfg: &SolverConfig, times: &[f64]) -> Res<Trajectory> {
    let positive: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
    Ok(evolve(init_state(u0, scfg)?, scfg, &positive)?)
}

/// Run until `max u` falls below the configured fraction of `max u0`.
fn run_to_extinction(cfg: &ScenarioConfig, u0: RadialField, boundary: BoundaryMode, times: &[f64], t_max: f64) -> Res<Trajectory> {
    let threshold = cfg.solver.extinction_threshold * u0.max_value();
    let scfg = solver_config(cfg, boundary, StopRule::AtExtinction { threshold, t_max });
    solve(u0, &scfg, times)
}

fn uniform_times(step: f64, end: f64) -> Vec<f64> {
    let n = (end / step).round() as usize;
    (1..=n).map(|i| step * i as f64).collect()
}

/// `B_{k}(r, 0) (1 + a (e^{-r²} - c e^{-r²/4}))` with `c` making the bump mass-neutral.
fn mass_neutral_data(p: &ProblemParams, grid: &Arc<RadialGrid>, k: f64, amplitude: f64) -> Res<RadialField> {
    let b = Barenblatt::new(k, p.horizon)?;
    let base = b.sample(p, grid, 0.0);
    let narrow = RadialField::from_fn(grid.clone(), |r| b.eval(p, r, 0.0) * (-r * r).exp(), None)?;
    let wide = RadialField::from_fn(grid.clone(), |r| b.eval(p, r, 0.0) * (-r * r / 4.0).exp(), None)?;
    let c = volume_integral(&narrow, None).expect_finite("narrow bump")? / volume_integral(&wide, None).expect_finite("wide bump")?;
    let values = grid
        .nodes()
        .iter()
        .zip(base.values())
        .map(|(&r, &v)| v * (1.0 + amplitude * ((-r * r).exp() - c * (-r * r / 4.0).exp())))
        .collect();
    Ok(RadialField::new(grid.clone(), values, base.tail())?)
}

/// `B_k(r, 0) (1 + a e^{-r²})`, which keeps the Barenblatt tail.
fn gaussian_data(p: &ProblemParams, grid: &Arc<RadialGrid>, k: f64, amplitude: f64) -> Res<RadialField> {
    let base = Barenblatt::new(k, p.horizon)?.sample(p, grid, 0.0);
    let values = grid.nodes().iter().zip(base.values()).map(|(&r, &v)| v * (1.0 + amplitude * (-r * r).exp())).collect();
    Ok(RadialField::new(grid.clone(), values, base.tail())?)
}

/// `(1 + r²)^{-(N-2)/(2m)}`, an integrable bump with the fast tail.
fn fast_bump(p: &ProblemParams, grid: &Arc<RadialGrid>, amplitude: f64) -> Res<RadialField> {
    let e = p.fast_tail_exponent();
    Ok(RadialField::from_fn(grid.clone(), |r| amplitude * (1.0 + r * r).powf(-0.5 * e), Some(e))?)
}

/// Amplitude `A` for which the bump alone vanishes at `longer_factor × T`.
///
/// `A u(x, A^{m-1} t)` solves the equation whenever `u` does, so a pilot run
/// at unit amplitude fixes `A = (longer_factor T / T_bump)^{1/(1-m)}`.
fn calibrate_bump(cfg: &ScenarioConfig, grid: &Arc<RadialGrid>) -> Res<(f64, f64)> {
    let p = &cfg.params;
    let pilot = fast_bump(p, grid, 1.0)?;
    let traj = run_to_extinction(cfg, pilot, BoundaryMode::TailExtrapolation, &uniform_times(0.01, 100.0), 100.0)?;
    if !traj.extinct {
        return Err(CliError::Run(Error::NotDecaying("the pilot bump did not vanish by t = 100".into())));
    }
    let t_bump = estimate_extinction_time(&traj)?;
    Ok(((cfg.longer_factor * p.horizon / t_bump).powf(1.0 / (1.0 - p.m)), t_bump))
}

/// Initial data of a scenario on its configured grid.
pub fn build_initial_data(cfg: &ScenarioConfig) -> Res<RadialField> {
    let grid = grid_of(cfg)?;
    let p = &cfg.params;
    match cfg.kind {
        ScenarioKind::ThmIntegrable => mass_neutral_data(p, &grid, cfg.k0, cfg.amplitude),
        ScenarioKind::ThmNonintegrable => gaussian_data(p, &grid, cfg.k0, cfg.amplitude),
        ScenarioKind::ExampleLonger | ScenarioKind::Yamabe => {
            let (a, _) = calibrate_bump(cfg, &grid)?;
            longer_data(p, &grid, cfg.k0, a)
        }
        ScenarioKind::AppendixOnesided => gaussian_data(p, &grid, cfg.k0, -cfg.amplitude),
        ScenarioKind::BarenblattSelftest => Ok(Barenblatt::new(cfg.k0, p.horizon)?.sample(p, &grid, 0.0)),
    }
}

fn longer_data(p: &ProblemParams, grid: &Arc<RadialGrid>, k: f64, a: f64) -> Res<RadialField> {
    let b = Barenblatt::new(k, p.horizon)?;
    let e = p.fast_tail_exponent();
    let f = |r: f64| b.eval(p, r, 0.0) + a * (1.0 + r * r).powf(-0.5 * e);
    Ok(RadialField::from_fn(grid.clone(), f, Some(p.barenblatt_tail_exponent()))?)
}

/// Report under construction plus the output directory.
struct Run<'a> {
    cfg: &'a ScenarioConfig,
    report: DiagnosticsReport,
}

impl Run<'_> {
    fn push(&mut self, c: CheckResult) -> Res<()> {
        Ok(self.report.push(c)?)
    }

    fn series(&mut self, name: &str, s: Series) {
        self.report.series.insert(name.to_string(), s);
    }

    fn dir(&self, name: &str) -> Option<PathBuf> {
        self.cfg.out_dir.as_ref().map(|d| d.join(name))
    }

    fn write_trajectory(&self, name: &str, traj: &Trajectory, scfg: Option<&SolverConfig>) -> Res<()> {
        if let Some(dir) = self.dir(name) {
            traj.write_dir(&dir, scfg, "t")?;
        }
        Ok(())
    }

    fn write_rescaled(&self, name: &str, series: &[RescaledField]) -> Res<()> {
        if let Some(dir) = self.dir(name) {
            fastdiff_core::rescaling::write_rescaled_dir(series, &dir)?;
        }
        Ok(())
    }
}

/// Turn a refusal of a check into a not-applicable result; other errors propagate.
fn or_not_applicable(name: &str, r: fastdiff_core::Result<CheckResult>) -> Res<CheckResult> {
    match r {
        Ok(c) => Ok(c),
        Err(Error::NotApplicable(why)) | Err(Error::Regime(why)) | Err(Error::Divergent(why)) => Ok(CheckResult::not_applicable(name, why)),
        Err(e) => Err(e.into()),
    }
}

fn relative_check(name: &str, value: f64, expected: f64, rtol: f64) -> CheckResult {
    CheckResult::measured(name, (value / expected - 1.0).abs(), rtol, None)
        .with_constant("value", value)
        .with_constant("expected", expected)
}

/// Rescaled snapshots from `τ_start` on.
fn rescaled_from(traj: &Trajectory, p: &ProblemParams, tau_start: f64) -> Res<Vec<RescaledField>> {
    Ok(rescale_trajectory(traj, p)?.into_iter().filter(|g| g.tau >= tau_start - 1e-9).collect())
}

/// Run `cfg` and return its report; files go to `cfg.out_dir` when set.
pub fn run_scenario(cfg: &ScenarioConfig, timestamp: &str) -> Res<DiagnosticsReport> {
    let mut run = Run { cfg, report: DiagnosticsReport::new(cfg.kind.id(), timestamp) };
    if let Some(dir) = &cfg.out_dir {
        fs::create_dir_all(dir)?;
    }
    match cfg.kind {
        ScenarioKind::ThmIntegrable => thm_integrable(&mut run)?,
        ScenarioKind::ThmNonintegrable => thm_nonintegrable(&mut run)?,
        ScenarioKind::ExampleLonger => longer_living(&mut run, false)?,
        ScenarioKind::Yamabe => longer_living(&mut run, true)?,
        ScenarioKind::AppendixOnesided => appendix_onesided(&mut run)?,
        ScenarioKind::BarenblattSelftest => barenblatt_selftest(&mut run)?,
    }
    if let Some(dir) = &cfg.out_dir {
        write_report(&run.report, dir)?;
    }
    Ok(run.report)
}

/// `report.json`, `report.txt` and one `series_<name>.csv` per table.
pub fn write_report(report: &DiagnosticsReport, dir: &Path) -> Res<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), report.to_json()?)?;
    fs::write(dir.join("report.txt"), report.to_text())?;
    for (name, s) in &report.series {
        let f = fs::File::create(dir.join(format!("series_{name}.csv")))?;
        s.write_csv(std::io::BufWriter::new(f))?;
    }
    Ok(())
}

fn final_sup(s: &Series) -> f64 {
    s.rows.last().and_then(|r| r.sup).unwrap_or(f64::NAN)
}

fn thm_integrable(run: &mut Run) -> Res<()> {
    let cfg = run.cfg;
    let p = cfg.params;
    let tol = cfg.diagnostics;
    let grid = grid_of(cfg)?;

    let exact = Barenblatt::new(cfg.k0, p.horizon)?.sample(&p, &grid, 0.0);
    let k_exact = find_k0(&exact, &p, cfg.k1, cfg.k2)?;
    run.push(relative_check("find_k0_exact", k_exact, cfg.k0, cfg.tolerances.find_k0_rtol))?;

    let u0 = mass_neutral_data(&p, &grid, cfg.k0, cfg.amplitude)?;
    let k0 = find_k0(&u0, &p, cfg.k1, cfg.k2)?;
    run.push(relative_check("find_k0_perturbed", k0, cfg.k0, cfg.tolerances.find_k0_rtol))?;

    let times = ladder_times(cfg);
    let t_end = *times.last().expect("nonempty ladder");
    let envelope = Barenblatt::new(cfg.k0, p.horizon)?;
    let scfg = solver_config(cfg, BoundaryMode::DirichletAnalytic(envelope), StopRule::AtTime(t_end));
    let traj = solve(u0, &scfg, &times)?;
    run.push(check_trapped(&traj, &p, cfg.k1, cfg.k2, tol.trapped)?)?;

    let rescaled = rescaled_from(&traj, &p, cfg.tau_start)?;
    let (series, checks) = convergence_series(&rescaled, &p, k0, &tol)?;
    for c in checks {
        run.push(c)?;
    }
    let converged = final_sup(&series);
    run.series("convergence", series);

    // the same run measured against the wrong stationary profile must stall
    for (name, factor) in [("control_k0_high", 1.5), ("control_k0_low", 0.5)] {
        let (s, _) = convergence_series(&rescaled, &p, factor * k0, &tol)?;
        let stalled = final_sup(&s);
        let c = CheckResult::measured(name, converged / stalled, 1.0 / cfg.tolerances.control_factor, None)
            .with_constant("k", factor * k0)
            .with_constant("final_sup", stalled)
            .with_constant("final_sup_k0", converged)
            .with_detail("final sup distance at k0 over final sup distance at the control k");
        run.push(c)?;
        run.series(name, s);
    }

    // a second trapped run from k-shifted data; both runs share one fixed step
    // sequence, since backward Euler contracts in L1 only for equal steps
    let k_shift = cfg.k0 + 0.25 * (cfg.k1 - cfg.k0);
    let pcfg = paired(&scfg, cfg);
    let pair_u = solve(mass_neutral_data(&p, &grid, cfg.k0, cfg.amplitude)?, &pcfg, &times)?;
    let pair_v = solve(mass_neutral_data(&p, &grid, k_shift, cfg.amplitude)?, &pcfg, &times)?;
    let (s, c) = contraction_series(&pair_u, &pair_v, tol.contraction_slack)?;
    let c = if pair_u.len() < MIN_SNAPSHOTS {
        CheckResult::not_applicable("contraction", format!("{} snapshots, at least {MIN_SNAPSHOTS} needed", pair_u.len()))
    } else {
        c.with_constant("k_shift", k_shift).with_constant("dt", pcfg.dt_init)
    };
    run.push(c)?;
    run.series("contraction", s);

    // exact Barenblatt data through the same solver: the discrete floor of the distances
    let ref_traj = solve(exact, &scfg, &times)?;
    let ref_rescaled = rescaled_from(&ref_traj, &p, cfg.tau_start)?;
    let (s, _) = convergence_series(&ref_rescaled, &p, cfg.k0, &tol)?;
    let floor = final_sup(&s);
    run.series("reference", s);
    let s = pairwise_series(&rescaled, &ref_rescaled, |a, b| Ok(l1_distance(a, b)?.value()))?;
    let xs = s.xs();
    let sup = s.sup().unwrap_or_default();
    run.push(
        decay_check("distance_to_reference_sup_decay", Axis::Tau, &xs, &sup, tol.convergence_ratio)
            .with_constant("reference_final_sup", floor)
            .informational(),
    )?;
    if let Some(l1) = s.l1() {
        run.push(decay_check("distance_to_reference_l1_decay", Axis::Tau, &xs, &l1, tol.convergence_ratio).informational())?;
    }
    run.series("distance_to_reference", s);

    run.write_trajectory("trajectory", &traj, Some(&scfg))?;
    run.write_trajectory("pair_shifted", &pair_v, Some(&pcfg))?;
    run.write_rescaled("rescaled", &rescaled)?;
    Ok(())
}

/// Sup and one integral distance between two rescaled series on common grids.
fn pairwise_series(
    u: &[RescaledField],
    v: &[RescaledField],
    integral: impl Fn(&RadialField, &RadialField) -> fastdiff_core::Result<Option<f64>>,
) -> Res<Series> {
    let mut s = Series::default();
    for (a, b) in u.iter().zip(v) {
        s.rows.push(SeriesRow {
            x: a.tau,
            sup: Some(sup_distance(&a.field, &b.field)?),
            l1: integral(&a.field, &b.field)?,
            weighted_l1: None,
        });
    }
    Ok(s)
}

fn thm_nonintegrable(run: &mut Run) -> Res<()> {
    let cfg = run.cfg;
    let p = cfg.params;
    let tol = cfg.diagnostics;
    let grid = grid_of(cfg)?;

    // the pair B̃_1, B̃_2 on a grid wide enough for the tails to be modelled
    let pair_grid = make_grid(1e4, 800, 5.0, p.dim)?;
    let b1 = RescaledBarenblatt::new(&p, 1.0)?.sample(&pair_grid);
    let b2 = RescaledBarenblatt::new(&p, 2.0)?.sample(&pair_grid);
    let plain = l1_distance(&b1, &b2)?;
    run.push(
        CheckResult::measured("pair_l1_divergent", if plain.is_divergent() { 0.0 } else { 1.0 }, 0.0, None)
            .with_detail(format!("plain L1 distance of the profiles k = 1, 2: {plain:?}")),
    )?;
    let weighted = weighted_l1_distance(&b1, &b2, &p, cfg.k2)?;
    run.push(
        CheckResult::measured("pair_weighted_l1_finite", if weighted.is_divergent() { 1.0 } else { 0.0 }, 0.0, None)
            .with_detail(format!("weighted L1 distance of the profiles k = 1, 2: {weighted:?}")),
    )?;

    let radii = sample_radii(1000, 100.0);
    run.push(or_not_applicable("claim_i_identity", claim_i_check(&p, cfg.k2, &radii, tol.claim_i_rtol))?)?;
    run.push(laplacian_weight_sign(&p, cfg.k2, tol.laplacian_sign)?)?;

    let u0 = gaussian_data(&p, &grid, cfg.k0, cfg.amplitude)?;
    let times = ladder_times(cfg);
    let t_end = *times.last().expect("nonempty ladder");
    let scfg = solver_config(cfg, BoundaryMode::DirichletAnalytic(Barenblatt::new(cfg.k0, p.horizon)?), StopRule::AtTime(t_end));
    let traj = solve(u0, &scfg, &times)?;
    run.push(check_trapped(&traj, &p, cfg.k1, cfg.k2, tol.trapped)?)?;

    let rescaled = rescaled_from(&traj, &p, cfg.tau_start)?;
    let (series, checks) = convergence_series(&rescaled, &p, cfg.k0, &tol)?;
    for c in checks {
        run.push(c)?;
    }
    run.series("convergence", series);

    // weighted contraction against the run started from B_{k0} itself, on a
    // shared fixed step sequence
    let pcfg = paired(&scfg, cfg);
    let pair_u = rescaled_from(&solve(gaussian_data(&p, &grid, cfg.k0, cfg.amplitude)?, &pcfg, &times)?, &p, cfg.tau_start)?;
    let reference = Barenblatt::new(cfg.k0, p.horizon)?.sample(&p, &grid, 0.0);
    let pair_ref = rescaled_from(&solve(reference, &pcfg, &times)?, &p, cfg.tau_start)?;
    let (s, c) = weighted_contraction_series(&pair_u, &pair_ref, &p, cfg.k2, tol.contraction_slack)?;
    run.push(c.with_constant("dt", pcfg.dt_init))?;
    run.series("weighted_contraction", s);
    let (s, _) = convergence_series(&pair_ref, &p, cfg.k0, &tol)?;
    run.push(
        CheckResult::measured("reference_final_sup", final_sup(&s), f64::INFINITY, None)
            .informational()
            .with_detail("sup distance of the run from B_{k0} data to its own profile at the end"),
    )?;
    run.series("reference", s);

    run.write_trajectory("trajectory", &traj, Some(&scfg))?;
    run.write_rescaled("rescaled", &rescaled)?;
    Ok(())
}

/// Least-squares `λ` of the Yamabe profile against `g` on nodes with `η ≤ eta_max`.
fn fit_yamabe_lambda(g: &RadialField, dim: usize, eta_max: f64) -> f64 {
    let pts: Vec<(f64, f64)> = g.grid().nodes().iter().copied().zip(g.values().iter().copied()).filter(|(e, _)| *e <= eta_max).collect();
    let misfit = |log_l: f64| -> f64 {
        let y = YamabeProfile::new(dim, log_l.exp());
        pts.iter().map(|(e, v)| (v - y.value(*e)).powi(2)).sum()
    };
    // coarse scan then golden section in log λ
    let grid: Vec<f64> = (0..=200).map(|i| -6.0 + 12.0 * i as f64 / 200.0).collect();
    let best = grid.iter().copied().min_by(|a, b| misfit(*a).total_cmp(&misfit(*b))).expect("nonempty scan");
    let (mut a, mut b) = (best - 0.06, best + 0.06);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c = b - ratio * (b - a);
        let d = a + ratio * (b - a);
        if misfit(c) < misfit(d) {
            b = d;
        } else {
            a = c;
        }
    }
    (0.5 * (a + b)).exp()
}

fn longer_living(run: &mut Run, yamabe: bool) -> Res<()> {
    let cfg = run.cfg;
    let p = cfg.params;
    let tols = cfg.tolerances;
    let grid = grid_of(cfg)?;

    let (a, t_bump) = calibrate_bump(cfg, &grid)?;
    let u0 = longer_data(&p, &grid, cfg.k0, a)?;
    let horizon = p.horizon;

    // pass 1: extinction time
    let probe = run_to_extinction(cfg, u0.clone(), BoundaryMode::TailExtrapolation, &uniform_times(0.005 * horizon, 100.0 * horizon), 100.0 * horizon)?;
    if !probe.extinct {
        return Err(CliError::Run(Error::NotDecaying("the solution did not vanish by t = 100 T".into())));
    }
    let t_star = estimate_extinction_time(&probe)?;
    run.push(
        CheckResult::measured("longer_lived", (1.0 + tols.longer_margin) * horizon - t_star, 0.0, Some(Location { axis: Axis::T, value: t_star }))
            .with_constant("t_star", t_star)
            .with_constant("amplitude", a)
            .with_constant("t_bump", t_bump)
            .with_detail("(1 + margin) T - T*"),
    )?;

    // pass 2: snapshots at the requested times
    let t_before = 0.5 * horizon;
    let t_after = horizon + 0.3 * (t_star - horizon);
    let t_near = t_star - 0.1 * (t_star - horizon);
    let mut times = vec![t_before, t_after];
    if yamabe {
        times.push(t_near);
    }
    let scfg = solver_config(cfg, BoundaryMode::TailExtrapolation, StopRule::AtTime(*times.last().expect("times")));
    let traj = solve(u0, &scfg, &times)?;
    let at = |t: f64| traj.snapshots.iter().find(|s| (s.t - t).abs() <= 1e-12 * t.max(1.0)).map(|s| &s.field);
    let r_min = 100.0;

    let before = at(t_before).ok_or_else(|| CliError::Run(Error::Precondition("missing snapshot before T".into())))?;
    let slow = p.barenblatt_tail_exponent();
    let e = fit_tail_exponent(before, r_min)?;
    run.push(relative_check("tail_before_t", e, slow, tols.tail_rtol).with_constant("t", t_before))?;

    let after = at(t_after).ok_or_else(|| CliError::Run(Error::Precondition("missing snapshot after T".into())))?;
    let fast = p.fast_tail_exponent();
    let e = fit_tail_exponent(after, r_min)?;
    run.push(
        CheckResult::measured("tail_after_t", tols.fast_tail_fraction * fast - e, 0.0, None)
            .with_constant("exponent", e)
            .with_constant("expected", fast)
            .with_constant("t", t_after)
            .with_detail("fraction × (N-2)/m minus the fitted exponent"),
    )?;

    if yamabe {
        let theta = find_anomalous_theta(&p, 1.0)?;
        run.push(CheckResult::measured("anomalous_theta", theta.abs(), tols.theta_abs, None).with_constant("theta", theta))?;

        let profile = YamabeProfile::new(p.dim, 1.0);
        let (mut worst, mut where_) = (0.0f64, 0.0);
        for eta in sample_radii(200, 100.0) {
            let r = profile_ode_residual(&profile, &p, 0.0, eta).abs();
            if r > worst {
                worst = r;
                where_ = eta;
            }
        }
        run.push(CheckResult::measured("yamabe_profile_residual", worst, tols.profile_residual, Some(Location { axis: Axis::R, value: where_ })))?;

        let near = at(t_near).ok_or_else(|| CliError::Run(Error::Precondition("missing snapshot near T*".into())))?;
        let alpha = 1.0 / (1.0 - p.m);
        let g = second_kind_rescale(near, t_near, t_star, 0.0, alpha, &p)?;
        let eta_max = 20.0;
        let lambda = fit_yamabe_lambda(&g, p.dim, eta_max);
        let y = YamabeProfile::new(p.dim, lambda);
        let (mut err, mut scale, mut where_) = (0.0f64, 0.0f64, 0.0);
        for (&eta, &v) in g.grid().nodes().iter().zip(g.values()) {
            if eta > eta_max {
                break;
            }
            let d = (v - y.value(eta)).abs();
            if d > err {
                err = d;
                where_ = eta;
            }
            scale = scale.max(y.value(eta));
        }
        run.push(
            CheckResult::measured("yamabe_profile_match", err / scale, tols.profile_match_rtol, Some(Location { axis: Axis::R, value: where_ }))
                .with_constant("lambda", lambda)
                .with_constant("t", t_near)
                .with_constant("t_star", t_star),
        )?;
        if let Some(dir) = run.dir("profile") {
            fs::create_dir_all(&dir)?;
            let f = fs::File::create(dir.join("rescaled_near_extinction.csv"))?;
            g.write_csv(std::io::BufWriter::new(f), &[("t", format!("{t_near:e}")), ("t_star", format!("{t_star:e}")), ("lambda", format!("{lambda:e}"))])?;
        }
    }

    run.write_trajectory("trajectory", &traj, Some(&scfg))?;
    run.write_trajectory("extinction_probe", &probe, None)?;
    Ok(())
}

fn appendix_onesided(run: &mut Run) -> Res<()> {
    let cfg = run.cfg;
    let p = cfg.params;
    let tol = cfg.diagnostics;
    let grid = grid_of(cfg)?;
    let envelope = Barenblatt::new(cfg.k0, p.horizon)?;

    let u0 = gaussian_data(&p, &grid, cfg.k0, -cfg.amplitude)?;
    let times = ladder_times(cfg);
    let t_end = *times.last().expect("nonempty ladder");
    let scfg = solver_config(cfg, BoundaryMode::DirichletAnalytic(envelope), StopRule::AtTime(t_end));
    let traj = solve(u0, &scfg, &times)?;

    let t_est = estimate_extinction_time(&traj)?;
    run.push(relative_check("extinction_time", t_est, p.horizon, cfg.tolerances.extinction_rtol))?;

    let rescaled = rescaled_from(&traj, &p, cfg.tau_start)?;
    let tau0 = -p.horizon.ln() + 1.0;
    run.push(or_not_applicable("sandwich_bounds", sandwich_bounds_check(&rescaled, &p, cfg.k0, 5.0, tau0))?)?;
    run.push(aronson_benilan_check(&traj, &p, tol.aronson_benilan_slack)?)?;

    run.write_trajectory("trajectory", &traj, Some(&scfg))?;
    run.write_rescaled("rescaled", &rescaled)?;
    Ok(())
}

/// Worst over pairs of a per-pair measurement, keeping the location of the worst.
struct Worst {
    value: f64,
    at: Option<Location>,
    pair: (usize, f64),
}

impl Worst {
    fn new() -> Self {
        Self { value: f64::NEG_INFINITY, at: None, pair: (0, 0.0) }
    }

    fn update(&mut self, value: f64, at: Option<Location>, pair: (usize, f64)) {
        if value > self.value || value.is_nan() {
            self.value = value;
            self.at = at;
            self.pair = pair;
        }
    }

    fn check(&self, name: &str, tol: f64) -> CheckResult {
        CheckResult::measured(name, self.value, tol, self.at)
            .with_constant("dim", self.pair.0 as f64)
            .with_constant("m", self.pair.1)
    }
}

fn barenblatt_selftest(run: &mut Run) -> Res<()> {
    let cfg = run.cfg;
    let tols = cfg.tolerances;
    let horizon = cfg.params.horizon;
    let k = cfg.k0;

    let mut residual = Worst::new();
    let mut stationary = Worst::new();
    let mut exactness = Worst::new();
    let mut round_trip = Worst::new();
    for (dim, m) in SELFTEST_PAIRS {
        let p = derive_params(dim, m, horizon)?;
        let b = Barenblatt::new(k, horizon)?;
        let profile = b.profile(&p);
        for i in 0..10 {
            let t = 0.9 * horizon * i as f64 / 9.0;
            for r in sample_radii(10, 10.0) {
                let v = pde_residual(&profile, &p, r, t).abs();
                residual.update(v, Some(Location { axis: Axis::R, value: r }), (dim, m));
            }
        }

        let grid = make_grid(cfg.grid.rmax, cfg.grid.intervals, cfg.grid.r_lin, dim)?;
        let bt = RescaledBarenblatt::new(&p, k)?;
        let field = RescaledField { tau: 0.0, field: bt.sample(&grid) };
        // relative to the size of the cancelling terms, |γ| N B̃(0)
        let scale = p.gamma.abs() * dim as f64 * bt.value(0.0);
        for (i, v) in rescaled_residual_with(&field, &p, STATIONARY_STENCIL)?.iter().enumerate() {
            stationary.update(v.abs() / scale, Some(Location { axis: Axis::R, value: grid.nodes()[i] }), (dim, m));
        }

        for frac in [0.1, 0.5, 0.99] {
            let t = frac * horizon;
            let f = b.sample(&p, &grid, t);
            let g = to_rescaled(&f, t, &p)?;
            for (&y, &v) in g.field.grid().nodes().iter().zip(g.field.values()) {
                let exact = bt.value(y);
                exactness.update((v / exact - 1.0).abs(), Some(Location { axis: Axis::T, value: t }), (dim, m));
            }
            let (back, t_back) = from_rescaled(&g, &p);
            round_trip.update((t_back - t).abs() / horizon, Some(Location { axis: Axis::T, value: t }), (dim, m));
            for ((a, b), (ra, rb)) in back.values().iter().zip(f.values()).zip(back.grid().nodes().iter().zip(f.grid().nodes())) {
                round_trip.update((a / b - 1.0).abs(), Some(Location { axis: Axis::T, value: t }), (dim, m));
                round_trip.update((ra - rb).abs() / rb.max(1.0), Some(Location { axis: Axis::T, value: t }), (dim, m));
            }
        }
    }
    run.push(residual.check("barenblatt_pde_residual", tols.pde_residual))?;
    run.push(stationary.check("stationary_residual", tols.stationary_residual))?;
    run.push(exactness.check("rescaling_exact", tols.rescaling_rtol))?;
    run.push(round_trip.check("rescaling_round_trip", tols.rescaling_rtol))?;

    solver_fidelity(run)?;
    Ok(())
}

/// Closed-form comparisons of the solver in the configured `(N, m)`.
fn solver_fidelity(run: &mut Run) -> Res<()> {
    let cfg = run.cfg;
    let p = cfg.params;
    let tols = cfg.tolerances;
    let grid = grid_of(cfg)?;
    let horizon = p.horizon;
    let b1 = Barenblatt::new(cfg.k0, horizon)?;

    // sup error up to 0.9 T, with 90 snapshots for the potential check below
    let times = uniform_times(0.01 * horizon, 0.9 * horizon);
    let scfg = solver_config(cfg, BoundaryMode::DirichletAnalytic(b1), StopRule::AtTime(0.9 * horizon));
    let traj = solve(b1.sample(&p, &grid, 0.0), &scfg, &times)?;
    let (mut worst, mut at) = (0.0f64, 0.0);
    let mut s = Series::default();
    for snap in &traj.snapshots {
        let exact = b1.sample(&p, &grid, snap.t);
        let err = sup_distance(&snap.field, &exact)? / exact.max_value();
        if err > worst {
            worst = err;
            at = snap.t;
        }
        s.rows.push(SeriesRow { x: snap.t, sup: Some(err), l1: None, weighted_l1: None });
    }
    run.push(CheckResult::measured("solver_sup_error", worst, tols.solver_sup_rtol, Some(Location { axis: Axis::T, value: at })))?;
    run.series("solver_error", s);

    // fixed steps dt, dt/2, dt/4: successive differences shrink by 2 at first order
    let t_cmp = 0.5 * horizon;
    let mut finals = Vec::new();
    for dt in [0.01, 0.005, 0.0025] {
        let mut fixed = solver_config(cfg, BoundaryMode::DirichletAnalytic(b1), StopRule::AtTime(t_cmp));
        fixed.adaptive = false;
        fixed.dt_init = dt * horizon;
        let tr = solve(b1.sample(&p, &grid, 0.0), &fixed, &[t_cmp])?;
        finals.push(tr.last().expect("final snapshot").field.clone());
    }
    let e1 = sup_distance(&finals[0], &finals[1])?;
    let e2 = sup_distance(&finals[1], &finals[2])?;
    let ratio = e1 / e2;
    let mid = 0.5 * (tols.dt_ratio_lo + tols.dt_ratio_hi);
    run.push(
        CheckResult::measured("dt_halving_ratio", (ratio - mid).abs(), 0.5 * (tols.dt_ratio_hi - tols.dt_ratio_lo), None)
            .with_constant("ratio", ratio)
            .with_detail("|ratio - centre| against the half width of the accepted band"),
    )?;

    let ext = run_to_extinction(cfg, b1.sample(&p, &grid, 0.0), BoundaryMode::DirichletAnalytic(b1), &uniform_times(0.01 * horizon, 2.0 * horizon), 2.0 * horizon)?;
    let t_est = estimate_extinction_time(&ext)?;
    run.push(relative_check("extinction_time", t_est, horizon, tols.extinction_rtol))?;

    // potential of the pair k0, 2 k0
    let b2 = Barenblatt::new(2.0 * cfg.k0, horizon)?;
    let cfg2 = solver_config(cfg, BoundaryMode::DirichletAnalytic(b2), StopRule::AtTime(0.9 * horizon));
    let traj2 = solve(b2.sample(&p, &grid, 0.0), &cfg2, &times)?;
    run.push(or_not_applicable("potential_decay", potential_decay_check(&traj, &traj2, &p, cfg.diagnostics.potential_slack))?)?;

    run.write_trajectory("trajectory", &traj, Some(&scfg))?;
    Ok(())
}
