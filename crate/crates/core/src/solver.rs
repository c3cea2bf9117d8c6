//! Backward-Euler finite-volume solver for radial `u_t = Δu^m`.
//!
//! The unknown inside Newton is `w = u^m`. Control volumes are bounded by the
//! midpoints between nodes; the flux through a face is `A (w_{i+1} - w_i)/Δr`.
//! The Jacobian is tridiagonal and strictly diagonally dominant.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{least_squares_slope, RadialField, RadialGrid};
use crate::profiles::{Barenblatt, ProblemParams};

/// Smallest value `u` takes internally so that `w^{1/m}` stays defined.
pub const U_FLOOR_INTERNAL: f64 = 1e-300;
const MAX_HALVINGS: usize = 20;
const TAIL_FIT_NODES: usize = 5;

/// Outer boundary treatment at `r = Rmax`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundaryMode {
    /// Pin `u(Rmax, t)` to a Barenblatt envelope.
    DirichletAnalytic(Barenblatt),
    /// Robin condition `(u^m)_r = -p m u^m / r` with `p` fitted from the outer nodes.
    TailExtrapolation,
}

/// When the evolution ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StopRule {
    AtTime(f64),
    /// Stop once `max u` drops below `threshold`, or at `t_max` at the latest.
    AtExtinction { threshold: f64, t_max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub params: ProblemParams,
    pub dt_init: f64,
    pub dt_max: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Target for the largest relative change of `u` over one step.
    pub adapt_target: f64,
    /// When false every step uses `dt_init` (clipped at output times).
    pub adaptive: bool,
    pub boundary: BoundaryMode,
    pub stop: StopRule,
}

impl SolverConfig {
    pub fn new(params: ProblemParams, boundary: BoundaryMode, stop: StopRule) -> Self {
        Self {
            params,
            dt_init: 1e-6,
            dt_max: 1e-2,
            newton_tol: 1e-10,
            newton_max_iter: 30,
            adapt_target: 2e-3,
            adaptive: true,
            boundary,
            stop,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt_init", self.dt_init),
            ("dt_max", self.dt_max),
            ("newton_tol", self.newton_tol),
            ("adapt_target", self.adapt_target),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("solver.{name} must be positive, got {v}")));
            }
        }
        if self.adapt_target > 0.5 {
            return Err(Error::Config(format!("solver.adapt_target must be at most 0.5, got {}", self.adapt_target)));
        }
        if self.newton_max_iter == 0 {
            return Err(Error::Config("solver.newton_max_iter must be positive".into()));
        }
        if let StopRule::AtExtinction { threshold, t_max } = self.stop {
            if !(threshold > 0.0) || !(t_max > 0.0) {
                return Err(Error::Config("extinction stop needs a positive threshold and t_max".into()));
            }
        }
        Ok(())
    }

    fn stop_time(&self) -> f64 {
        match self.stop {
            StopRule::AtTime(t) => t,
            StopRule::AtExtinction { t_max, .. } => t_max,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stats {
    pub steps: usize,
    pub newton_iterations: usize,
    pub rejected_steps: usize,
}

/// Control volumes and face coefficients of a grid.
#[derive(Debug, Clone)]
struct Geometry {
    volume: Vec<f64>,
    /// `A_{i+1/2} / (r_{i+1} - r_i)` for the face between `i` and `i + 1`.
    conductance: Vec<f64>,
    outer_area: f64,
}

impl Geometry {
    fn new(grid: &RadialGrid) -> Self {
        let r = grid.nodes();
        let n = grid.dim() as i32;
        let omega = grid.sphere_area();
        // faces at arithmetic midpoints on the uniform core and at geometric means
        // on the stretched part, so every cell is centred on its node in the local spacing
        let r_lin = grid.r_lin();
        let mid: Vec<f64> = r
            .windows(2)
            .map(|w| if w[0] >= r_lin * (1.0 - 1e-12) { (w[0] * w[1]).sqrt() } else { 0.5 * (w[0] + w[1]) })
            .collect();
        let ball = |x: f64| omega * x.powi(n) / n as f64;
        let last = r.len() - 1;
        let volume = (0..=last)
            .map(|i| {
                let hi = if i == last { ball(r[last]) } else { ball(mid[i]) };
                let lo = if i == 0 { 0.0 } else { ball(mid[i - 1]) };
                hi - lo
            })
            .collect();
        let conductance = mid
            .iter()
            .enumerate()
            .map(|(i, &x)| omega * x.powi(n - 1) / (r[i + 1] - r[i]))
            .collect();
        Self {
            volume,
            conductance,
            outer_area: omega * r[last].powi(n - 1),
        }
    }

    /// `Σ V_i u_i`, the mass the scheme conserves up to boundary flux.
    fn mass(&self, u: &[f64]) -> f64 {
        self.volume.iter().zip(u).map(|(v, u)| v * u).sum()
    }
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub t: f64,
    pub field: RadialField,
    pub stats: Stats,
    geometry: Arc<Geometry>,
}

impl SolverState {
    /// Finite-volume mass `Σ V_i u_i` of the current field.
    pub fn discrete_mass(&self) -> f64 {
        self.geometry.mass(self.field.values())
    }

    /// Outward flux `-A (u^m)_r` through `r = Rmax` for the current field.
    pub fn boundary_outflow(&self, cfg: &SolverConfig) -> f64 {
        let u = self.field.values();
        let m = cfg.params.m;
        let last = u.len() - 1;
        match cfg.boundary {
            BoundaryMode::DirichletAnalytic(_) => {
                -self.geometry.conductance[last - 1] * (u[last].powf(m) - u[last - 1].powf(m))
            }
            BoundaryMode::TailExtrapolation => {
                let p = fitted_exponent(self.field.grid().nodes(), u);
                self.geometry.outer_area * p * m * u[last].powf(m) / self.field.grid().rmax()
            }
        }
    }
}

/// Start an evolution at `t = 0` from `u0`.
pub fn init_state(u0: RadialField, cfg: &SolverConfig) -> Result<SolverState> {
    cfg.validate()?;
    let grid = u0.grid().clone();
    if grid.dim() != cfg.params.dim {
        return Err(Error::Config(format!(
            "grid dimension {} does not match N = {}",
            grid.dim(),
            cfg.params.dim
        )));
    }
    if let BoundaryMode::DirichletAnalytic(env) = cfg.boundary {
        let pinned = env.eval(&cfg.params, grid.rmax(), 0.0);
        let last = *u0.values().last().unwrap();
        if (pinned - last).abs() > 1e-6 * pinned.max(last) {
            return Err(Error::Config(format!(
                "boundary envelope gives {pinned:e} at Rmax but the initial data has {last:e}"
            )));
        }
    }
    Ok(SolverState {
        t: 0.0,
        field: u0,
        stats: Stats::default(),
        geometry: Arc::new(Geometry::new(&grid)),
    })
}

/// Decay exponent `-d log u / d log r` over the outermost nodes.
fn fitted_exponent(nodes: &[f64], u: &[f64]) -> f64 {
    let n = nodes.len();
    let pts: Vec<(f64, f64)> = (n - TAIL_FIT_NODES..n)
        .filter(|&i| u[i] > U_FLOOR_INTERNAL)
        .map(|i| (nodes[i].ln(), u[i].ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    (-least_squares_slope(&pts)).clamp(0.0, 100.0)
}

/// Solve `A x = d` for tridiagonal `A` (sub `a`, diagonal `b`, super `c`).
fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &mut [f64]) {
    let n = b.len();
    let mut cp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    d[0] /= b[0];
    for i in 1..n {
        let denom = b[i] - a[i] * cp[i - 1];
        cp[i] = if i + 1 < n { c[i] / denom } else { 0.0 };
        d[i] = (d[i] - a[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= cp[i] * d[i + 1];
    }
}

/// One backward-Euler step of length `dt`.
pub fn step(s: &SolverState, cfg: &SolverConfig, dt: f64) -> Result<SolverState> {
    let m = cfg.params.m;
    let inv_m = 1.0 / m;
    let grid = s.field.grid().clone();
    let nodes = grid.nodes();
    let u_old = s.field.values();
    let n = u_old.len();
    let last = n - 1;
    let geo = &s.geometry;
    let t_new = s.t + dt;

    if let Some(v) = u_old.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Precondition(format!("negative value {v} in solver input")));
    }

    let w_floor = U_FLOOR_INTERNAL.powf(m);
    let (dirichlet, robin_p) = match cfg.boundary {
        BoundaryMode::DirichletAnalytic(env) => (Some(env.eval(&cfg.params, grid.rmax(), t_new).powf(m)), 0.0),
        BoundaryMode::TailExtrapolation => (None, fitted_exponent(nodes, u_old)),
    };
    let robin = geo.outer_area * robin_p * m / grid.rmax();

    let mut stats = s.stats;
    let all_zero = u_old.iter().all(|&v| v == 0.0) && dirichlet.map_or(true, |w| w == 0.0);
    let u_new = if all_zero {
        u_old.to_vec()
    } else {
        let mut w: Vec<f64> = u_old.iter().map(|&v| v.max(U_FLOOR_INTERNAL).powf(m)).collect();
        if let Some(wb) = dirichlet {
            w[last] = wb.max(w_floor);
        }
        let (mut sub, mut diag, mut sup, mut rhs) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut converged = false;
        let mut residual = f64::INFINITY;
        for _ in 0..cfg.newton_max_iter {
            stats.newton_iterations += 1;
            for i in 0..n {
                if i == last && dirichlet.is_some() {
                    sub[i] = 0.0;
                    diag[i] = 1.0;
                    sup[i] = 0.0;
                    rhs[i] = 0.0;
                    continue;
                }
                let a_minus = if i > 0 { geo.conductance[i - 1] } else { 0.0 };
                let a_plus = if i < last { geo.conductance[i] } else { 0.0 };
                let mut flux = 0.0;
                if i > 0 {
                    flux -= a_minus * (w[i] - w[i - 1]);
                }
                if i < last {
                    flux += a_plus * (w[i + 1] - w[i]);
                }
                let mut dflux_dwi = a_minus + a_plus;
                if i == last {
                    flux -= robin * w[i];
                    dflux_dwi += robin;
                }
                let u_i = w[i].powf(inv_m);
                rhs[i] = -(geo.volume[i] * (u_i - u_old[i]) - dt * flux);
                diag[i] = geo.volume[i] * inv_m * u_i / w[i] + dt * dflux_dwi;
                sub[i] = -dt * a_minus;
                sup[i] = -dt * a_plus;
            }
            thomas(&sub, &diag, &sup, &mut rhs);
            residual = 0.0;
            for i in 0..n {
                let trial = w[i] + rhs[i];
                // positivity-preserving truncation of the Newton update
                let next = trial.max(0.2 * w[i]).max(w_floor);
                residual = f64::max(residual, (next - w[i]).abs() / w[i]);
                w[i] = next;
            }
            if residual <= cfg.newton_tol {
                converged = true;
                break;
            }
        }
        if !converged || !residual.is_finite() {
            return Err(Error::NewtonDiverged { t: s.t, dt, residual });
        }
        w.iter().map(|&x| x.powf(inv_m)).collect()
    };
    stats.steps += 1;

    let field = attach_tail(&grid, u_new, cfg, t_new)?;
    Ok(SolverState { t: t_new, field, stats, geometry: s.geometry.clone() })
}

fn attach_tail(grid: &Arc<RadialGrid>, values: Vec<f64>, cfg: &SolverConfig, t: f64) -> Result<RadialField> {
    match cfg.boundary {
        BoundaryMode::DirichletAnalytic(env) => match env.tail(&cfg.params, t) {
            Some(tail) if *values.last().unwrap() > 0.0 => {
                RadialField::with_matched_tail(grid.clone(), values, tail.exponent, tail.correction_ratio())
            }
            _ => RadialField::new(grid.clone(), values, None),
        },
        BoundaryMode::TailExtrapolation => {
            let p = fitted_exponent(grid.nodes(), &values);
            if *values.last().unwrap() > 0.0 && p > 0.0 {
                RadialField::with_matched_tail(grid.clone(), values, p, 0.0)
            } else {
                RadialField::new(grid.clone(), values, None)
            }
        }
    }
}

/// A field at a recorded time.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub field: RadialField,
}

/// Snapshots in strictly increasing time.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub stats: Stats,
    /// Time at which the evolution stopped.
    pub final_time: f64,
    /// True if an extinction stop fired.
    pub extinct: bool,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }

    /// Write `field_NNNN.csv` per snapshot and an `index.json`.
    pub fn write_dir(&self, dir: &Path, cfg: Option<&SolverConfig>, time_label: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for (i, s) in self.snapshots.iter().enumerate() {
            let name = format!("field_{i:04}.csv");
            let f = fs::File::create(dir.join(&name))?;
            s.field.write_csv(std::io::BufWriter::new(f), &[(time_label, format!("{:e}", s.t))])?;
            files.push(name);
        }
        let index = serde_json::json!({
            "time_label": time_label,
            "times": self.times(),
            "files": files,
            "stats": self.stats,
            "final_time": self.final_time,
            "extinct": self.extinct,
            "config": cfg,
        });
        let text = serde_json::to_string_pretty(&index).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(dir.join("index.json"), text)?;
        Ok(())
    }

    /// Read a directory written by [`Trajectory::write_dir`].
    pub fn read_dir(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("index.json"))?;
        let index: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Io(e.to_string()))?;
        let times: Vec<f64> = serde_json::from_value(index["times"].clone()).map_err(|e| Error::Io(e.to_string()))?;
        let files: Vec<String> = serde_json::from_value(index["files"].clone()).map_err(|e| Error::Io(e.to_string()))?;
        let stats: Stats = serde_json::from_value(index["stats"].clone()).map_err(|e| Error::Io(e.to_string()))?;
        let mut snapshots = Vec::with_capacity(files.len());
        let mut grid: Option<Arc<RadialGrid>> = None;
        for (t, name) in times.iter().zip(&files) {
            let f = fs::File::open(dir.join(name))?;
            let (field, _) = RadialField::read_csv(std::io::BufReader::new(f))?;
            // share one grid between snapshots
            let field = match &grid {
                Some(g) if g.nodes() == field.grid().nodes() => RadialField::new(g.clone(), field.values().to_vec(), field.tail())?,
                _ => {
                    grid = Some(field.grid().clone());
                    field
                }
            };
            snapshots.push(Snapshot { t: *t, field });
        }
        Ok(Self {
            snapshots,
            stats,
            final_time: index["final_time"].as_f64().unwrap_or(f64::NAN),
            extinct: index["extinct"].as_bool().unwrap_or(false),
        })
    }
}

/// Interpolate between two states linearly in `u^{1-m}`.
fn blend(a: &SolverState, b: &SolverState, t: f64, cfg: &SolverConfig) -> Result<RadialField> {
    let m = cfg.params.m;
    let theta = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 1.0 };
    let values: Vec<f64> = a
        .field
        .values()
        .iter()
        .zip(b.field.values())
        .map(|(&x, &y)| {
            let v = (1.0 - theta) * x.powf(1.0 - m) + theta * y.powf(1.0 - m);
            v.max(0.0).powf(1.0 / (1.0 - m))
        })
        .collect();
    attach_tail(a.field.grid(), values, cfg, t)
}

/// Advance with adaptive steps, recording snapshots at `output_times`.
///
/// The initial state is always the first snapshot. With an extinction stop the
/// state at the stopping time is appended as the last snapshot.
pub fn evolve(s: SolverState, cfg: &SolverConfig, output_times: &[f64]) -> Result<Trajectory> {
    cfg.validate()?;
    if output_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("output times must be strictly increasing".into()));
    }
    let t_stop = cfg.stop_time();
    let mut snapshots = vec![Snapshot { t: s.t, field: s.field.clone() }];
    let t0 = s.t;
    let mut pending = output_times.iter().copied().filter(|&t| t > t0 && t <= t_stop).peekable();
    let mut state = s;
    let mut dt = cfg.dt_init;
    let mut extinct = false;

    let is_extinct = |st: &SolverState| match cfg.stop {
        StopRule::AtExtinction { threshold, .. } => st.field.max_value() < threshold,
        StopRule::AtTime(_) => false,
    };
    if is_extinct(&state) {
        return Ok(Trajectory { snapshots, stats: state.stats, final_time: state.t, extinct: true });
    }

    while state.t < t_stop {
        // land exactly on the next output time or the stop time
        let horizon = pending.peek().copied().unwrap_or(t_stop).min(t_stop);
        let mut h = if cfg.adaptive { dt.min(cfg.dt_max) } else { cfg.dt_init };
        let clipped = state.t + h >= horizon;
        if clipped {
            h = horizon - state.t;
        }
        let mut halvings = 0;
        let next = loop {
            match step(&state, cfg, h) {
                Ok(next) => {
                    let change = relative_change(state.field.values(), next.field.values());
                    if cfg.adaptive && change > 2.0 * cfg.adapt_target && halvings < MAX_HALVINGS {
                        h *= 0.5;
                        halvings += 1;
                        state.stats.rejected_steps += 1;
                        continue;
                    }
                    if cfg.adaptive {
                        let factor = if change > 0.0 { (cfg.adapt_target / change).clamp(0.5, 1.5) } else { 1.5 };
                        // a clipped step says nothing about the natural step size
                        if !(clipped && h < dt) || factor < 1.0 {
                            dt = (h * factor).min(cfg.dt_max);
                        }
                    }
                    break next;
                }
                Err(Error::NewtonDiverged { .. }) if halvings < MAX_HALVINGS => {
                    h *= 0.5;
                    halvings += 1;
                    state.stats.rejected_steps += 1;
                }
                Err(e) => {
                    return Err(Error::StepFailed { t: state.t, reason: e.to_string() });
                }
            }
        };

        while let Some(&t_out) = pending.peek() {
            if t_out > next.t {
                break;
            }
            let field = if t_out == next.t { next.field.clone() } else { blend(&state, &next, t_out, cfg)? };
            snapshots.push(Snapshot { t: t_out, field });
            pending.next();
        }
        state = next;
        if is_extinct(&state) {
            extinct = true;
            if snapshots.last().map_or(true, |s| s.t < state.t) {
                snapshots.push(Snapshot { t: state.t, field: state.field.clone() });
            }
            break;
        }
    }
    Ok(Trajectory { snapshots, stats: state.stats, final_time: state.t, extinct })
}

/// Largest `|u_new - u_old| / u_old` over nodes where `u_old` is positive.
fn relative_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .filter(|(o, _)| **o > 1e3 * U_FLOOR_INTERNAL)
        .map(|(o, n)| (n - o).abs() / o)
        .fold(0.0, f64::max)
}

/// Extinction time from the decay of `max_r u` over the last ten snapshots.
///
/// Fits `max_r u = A (T - t)^e` with both `T` and `e` free: for each candidate
/// `T` the log-log regression is linear, and `T` minimizes the residual.
pub fn estimate_extinction_time(traj: &Trajectory) -> Result<f64> {
    const WINDOW: usize = 10;
    let usable: Vec<(f64, f64)> = traj
        .snapshots
        .iter()
        .map(|s| (s.t, s.field.max_value()))
        .filter(|(_, v)| *v > 0.0)
        .collect();
    if usable.len() < WINDOW {
        return Err(Error::Precondition(format!(
            "extinction fit needs {WINDOW} snapshots with positive maximum, got {}",
            usable.len()
        )));
    }
    let pts = &usable[usable.len() - WINDOW..];
    if pts.windows(2).any(|w| !(w[1].1 < w[0].1)) {
        return Err(Error::NotDecaying("max u is not decreasing over the fit window".into()));
    }
    let t_last = pts[WINDOW - 1].0;
    let span = t_last - pts[0].0;
    let misfit = |x: f64| -> f64 {
        let horizon = t_last + span * x.exp();
        let logs: Vec<(f64, f64)> = pts.iter().map(|(t, v)| ((horizon - t).ln(), v.ln())).collect();
        let slope = least_squares_slope(&logs);
        let n = logs.len() as f64;
        let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
        let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
        logs.iter().map(|(x, y)| (y - my - slope * (x - mx)).powi(2)).sum()
    };
    // coarse scan of log((T - t_last)/span), then golden-section refinement
    let (lo, hi, samples) = (-16.0f64, 8.0f64, 241);
    let grid: Vec<f64> = (0..samples).map(|i| lo + (hi - lo) * i as f64 / (samples - 1) as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&x| misfit(x)).collect();
    let best = values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(samples - 1)]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (misfit(c), misfit(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-12 {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = misfit(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = misfit(d);
        }
    }
    Ok(t_last + span * (0.5 * (a + b)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::profiles::derive_params;

    fn barenblatt_setup() -> (ProblemParams, Barenblatt, Arc<RadialGrid>) {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let b = Barenblatt::new(1.0, 1.0).unwrap();
        (p, b, make_grid(1000.0, 400, 5.0, 3).unwrap())
    }

    #[test]
    fn thomas_solves_small_system() {
        let (a, b, c) = ([0.0, 1.0, 1.0], [4.0, 4.0, 4.0], [1.0, 1.0, 0.0]);
        let mut d = [5.0, 6.0, 5.0];
        thomas(&a, &b, &c, &mut d);
        for x in d {
            assert!((x - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn geometry_volumes_sum_to_ball() {
        let g = make_grid(10.0, 64, 1.0, 4).unwrap();
        let geo = Geometry::new(&g);
        let total: f64 = geo.volume.iter().sum();
        let ball = g.sphere_area() * 10f64.powi(4) / 4.0;
        assert!((total / ball - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_step_tracks_barenblatt() {
        let (p, b, g) = barenblatt_setup();
        let cfg = SolverConfig::new(p, BoundaryMode::DirichletAnalytic(b), StopRule::AtTime(1e-4));
        let s = init_state(b.sample(&p, &g, 0.0), &cfg).unwrap();
        let next = step(&s, &cfg, 1e-4).unwrap();
        let worst = g
            .nodes()
            .iter()
            .zip(next.field.values())
            .map(|(&r, &v)| (v / b.eval(&p, r, 1e-4) - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn zero_field_stays_zero() {
        let (p, _, g) = barenblatt_setup();
        let cfg = SolverConfig::new(p, BoundaryMode::TailExtrapolation, StopRule::AtTime(1.0));
        let s = init_state(RadialField::zeros(g), &cfg).unwrap();
        let next = step(&s, &cfg, 1e-3).unwrap();
        assert!(next.field.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mass_balance_with_robin_boundary() {
        let (p, _, g) = barenblatt_setup();
        let cfg = SolverConfig::new(p, BoundaryMode::TailExtrapolation, StopRule::AtTime(1.0));
        let u0 = RadialField::from_fn(g, |r| (1.0 + r * r).powf(-1.25), Some(2.5)).unwrap();
        let s = init_state(u0, &cfg).unwrap();
        let dt = 1e-4;
        let next = step(&s, &cfg, dt).unwrap();
        let change = next.discrete_mass() - s.discrete_mass();
        let flux = -dt * next.boundary_outflow(&cfg);
        assert!((change - flux).abs() <= 1e-8 * s.discrete_mass(), "{change} vs {flux}");
    }

    #[test]
    fn mismatched_envelope_is_rejected() {
        let (p, b, g) = barenblatt_setup();
        let other = Barenblatt::new(3.0, 1.0).unwrap();
        let cfg = SolverConfig::new(p, BoundaryMode::DirichletAnalytic(other), StopRule::AtTime(1.0));
        assert!(matches!(init_state(b.sample(&p, &g, 0.0), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn extinction_fit_on_exact_snapshots() {
        let p = derive_params(3, 0.2, 0.5).unwrap();
        let b = Barenblatt::new(1.0, 0.5).unwrap();
        let g = make_grid(1000.0, 400, 5.0, 3).unwrap();
        let snapshots = (0..20)
            .map(|i| {
                let t = 0.02 * i as f64;
                Snapshot { t, field: b.sample(&p, &g, t) }
            })
            .collect();
        let traj = Trajectory { snapshots, stats: Stats::default(), final_time: 0.38, extinct: false };
        let est = estimate_extinction_time(&traj).unwrap();
        assert!((est / 0.5 - 1.0).abs() < 5e-3, "{est}");
    }
}
