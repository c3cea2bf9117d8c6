//! Numerical checks of the inequalities and identities satisfied by solutions.
//!
//! Every check returns a [`CheckResult`] whose `worst_value` is a violation
//! measure: the check passes exactly when `worst_value <= tolerance`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{l1_distance, sup_distance, weighted_l1_distance, Integral, RadialField};
use crate::profiles::{radial_laplacian, Barenblatt, ProblemParams, Profile, RadialDerivs, Regime, RescaledBarenblatt};
use crate::rescaling::RescaledField;
use crate::solver::Trajectory;

/// Values below this are treated as zero by the ratio checks.
const RATIO_FLOOR: f64 = 1e-250;

/// Tolerances of every check, with the defaults used by the scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Violation of the Barenblatt envelopes relative to the sup scale.
    pub trapped: f64,
    /// Increase of a contraction series relative to its initial value.
    pub contraction_slack: f64,
    /// Relative excess over the integrated Aronson–Bénilan ratio.
    pub aronson_benilan_slack: f64,
    /// Relative excess of the potential over the Newtonian bound.
    pub potential_slack: f64,
    pub claim_i_rtol: f64,
    pub laplacian_sign: f64,
    /// Final over initial distance to the stationary profile.
    pub convergence_ratio: f64,
    /// Minimal length of the τ window for convergence checks.
    pub convergence_window: f64,
    /// Increase of a convergence series relative to its initial value.
    pub monotone_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            trapped: 1e-3,
            contraction_slack: 1e-4,
            aronson_benilan_slack: 1e-3,
            potential_slack: 0.05,
            claim_i_rtol: 1e-10,
            laplacian_sign: 1e-14,
            convergence_ratio: 0.2,
            convergence_window: 3.0,
            monotone_slack: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    R,
    Tau,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub axis: Axis,
    pub value: f64,
}

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub passed: bool,
    /// Violation measure; `NaN` when not applicable.
    pub worst_value: f64,
    pub location: Option<Location>,
    pub tolerance: f64,
    /// Mandatory checks decide the exit status of a scenario.
    pub mandatory: bool,
    /// Fitted constants and other numbers worth reporting.
    pub constants: BTreeMap<String, f64>,
    pub detail: String,
}

impl CheckResult {
    pub fn measured(name: &str, worst_value: f64, tolerance: f64, location: Option<Location>) -> Self {
        let passed = worst_value <= tolerance;
        Self {
            name: name.to_string(),
            status: if passed { Status::Pass } else { Status::Fail },
            passed,
            worst_value,
            location,
            tolerance,
            mandatory: true,
            constants: BTreeMap::new(),
            detail: String::new(),
        }
    }

    pub fn not_applicable(name: &str, reason: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            status: Status::NotApplicable,
            passed: false,
            worst_value: f64::NAN,
            location: None,
            tolerance: f64::NAN,
            mandatory: true,
            constants: BTreeMap::new(),
            detail: reason.into(),
        }
    }

    pub fn informational(mut self) -> Self {
        self.mandatory = false;
        self
    }

    pub fn renamed(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn with_constant(mut self, key: &str, value: f64) -> Self {
        self.constants.insert(key.to_string(), value);
        self
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

/// One row of a distance table; `None` marks a metric that was not computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub x: f64,
    pub sup: Option<f64>,
    pub l1: Option<f64>,
    pub weighted_l1: Option<f64>,
}

/// Distances against time or rescaled time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub rows: Vec<SeriesRow>,
}

impl Series {
    pub fn xs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.x).collect()
    }

    pub fn sup(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.sup).collect()
    }

    pub fn l1(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.l1).collect()
    }

    pub fn weighted_l1(&self) -> Option<Vec<f64>> {
        self.rows.iter().map(|r| r.weighted_l1).collect()
    }

    /// Columns `tau_or_t,sup,l1,weighted_l1`; missing values are empty cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.17e}"));
        writeln!(w, "tau_or_t,sup,l1,weighted_l1")?;
        for r in &self.rows {
            writeln!(w, "{:.17e},{},{},{}", r.x, cell(r.sup), cell(r.l1), cell(r.weighted_l1))?;
        }
        Ok(())
    }
}

/// All checks of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub scenario: String,
    pub timestamp: String,
    pub checks: Vec<CheckResult>,
    pub series: BTreeMap<String, Series>,
}

impl DiagnosticsReport {
    pub fn new(scenario: &str, timestamp: &str) -> Self {
        Self {
            scenario: scenario.to_string(),
            timestamp: timestamp.to_string(),
            checks: Vec::new(),
            series: BTreeMap::new(),
        }
    }

    /// Adds a check; a second check with the same name is an error.
    pub fn push(&mut self, check: CheckResult) -> Result<()> {
        if self.checks.iter().any(|c| c.name == check.name) {
            return Err(Error::Precondition(format!("check {} reported twice", check.name)));
        }
        self.checks.push(check);
        Ok(())
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_mandatory_passed(&self) -> bool {
        self.checks.iter().filter(|c| c.mandatory).all(|c| c.passed)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// One aligned line per check.
    pub fn to_text(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = format!("scenario {}\n", self.scenario);
        for c in &self.checks {
            let status = match c.status {
                Status::Pass => "PASS",
                Status::Fail => "FAIL",
                Status::NotApplicable => "N/A ",
            };
            let kind = if c.mandatory { "" } else { " (info)" };
            let at = c.location.map_or(String::new(), |l| {
                let axis = match l.axis {
                    Axis::R => "r",
                    Axis::Tau => "tau",
                    Axis::T => "t",
                };
                format!(" at {axis}={:.4e}", l.value)
            });
            out.push_str(&format!(
                "{status} {:width$}  worst={:.4e} tol={:.4e}{at}{kind}",
                c.name, c.worst_value, c.tolerance
            ));
            if !c.detail.is_empty() {
                out.push_str(&format!("  {}", c.detail));
            }
            out.push('\n');
        }
        out
    }
}

/// `count` radii: zero, then geometric from `1e-3` to `r_max`.
pub fn sample_radii(count: usize, r_max: f64) -> Vec<f64> {
    let mut out = vec![0.0];
    let (a, b) = (1e-3f64.ln(), r_max.ln());
    let n = count.saturating_sub(1).max(2);
    out.extend((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()));
    out.truncate(count.max(1));
    out
}

/// Largest rise of `values` above its running minimum, relative to the first value.
fn worst_rise(xs: &[f64], values: &[f64]) -> (f64, Option<f64>) {
    let scale = values.first().copied().unwrap_or(0.0);
    let mut low = f64::INFINITY;
    let (mut worst, mut at) = (0.0, None);
    for (&x, &v) in xs.iter().zip(values) {
        let rise = v - low;
        if rise > worst {
            worst = rise;
            at = Some(x);
        }
        low = low.min(v);
    }
    if scale > 0.0 {
        worst /= scale;
    }
    (worst, at)
}

/// Check that a series never rises above its running minimum by more than `slack × initial`.
pub fn monotone_check(name: &str, axis: Axis, xs: &[f64], values: &[f64], slack: f64) -> CheckResult {
    let (worst, at) = worst_rise(xs, values);
    CheckResult::measured(name, worst, slack, at.map(|value| Location { axis, value }))
}

/// Check that the last value is at most `ratio × first`.
pub fn decay_check(name: &str, axis: Axis, xs: &[f64], values: &[f64], ratio: f64) -> CheckResult {
    let (first, last) = (values[0], values[values.len() - 1]);
    let worst = if first > 0.0 { last / first } else if last == 0.0 { 0.0 } else { f64::INFINITY };
    CheckResult::measured(name, worst, ratio, Some(Location { axis, value: xs[xs.len() - 1] }))
        .with_constant("initial", first)
        .with_constant("final", last)
}

/// `B_{k1} ≤ u ≤ B_{k2}` at every node of every snapshot before `T`.
///
/// The violation is measured relative to the sup scale `B_{k2}(0, t)`.
pub fn check_trapped(traj: &Trajectory, p: &ProblemParams, k1: f64, k2: f64, tol: f64) -> Result<CheckResult> {
    if traj.is_empty() {
        return Err(Error::Precondition("trapping check on an empty trajectory".into()));
    }
    if !(k1 >= k2) || !(k2 > 0.0) {
        return Err(Error::Precondition(format!("trapping needs k1 ≥ k2 > 0, got k1 = {k1}, k2 = {k2}")));
    }
    let lower = Barenblatt::new(k1, p.horizon)?;
    let upper = Barenblatt::new(k2, p.horizon)?;
    let (mut worst, mut at) = (f64::NEG_INFINITY, None);
    for snap in traj.snapshots.iter().filter(|s| s.t < p.horizon) {
        let scale = upper.eval(p, 0.0, snap.t);
        if !(scale > 0.0) {
            continue;
        }
        for (&r, &u) in snap.field.grid().nodes().iter().zip(snap.field.values()) {
            let (lo, hi) = (lower.eval(p, r, snap.t), upper.eval(p, r, snap.t));
            let v = (lo - u).max(u - hi) / scale;
            if v > worst {
                worst = v;
                at = Some((r, snap.t));
            }
        }
    }
    let mut c = CheckResult::measured("trapped", worst, tol, at.map(|(r, _)| Location { axis: Axis::R, value: r }));
    if let Some((_, t)) = at {
        c = c.with_constant("t_worst", t);
    }
    Ok(c)
}

fn same_times(a: &[f64], b: &[f64]) -> Result<()> {
    let ok = a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1.0));
    if ok {
        Ok(())
    } else {
        Err(Error::Precondition("series need common snapshot times".into()))
    }
}

/// `∫|u - v| dx` at every common snapshot; nonincreasing within `slack × initial`.
pub fn contraction_series(u: &Trajectory, v: &Trajectory, slack: f64) -> Result<(Series, CheckResult)> {
    let ts = u.times();
    same_times(&ts, &v.times())?;
    let mut series = Series::default();
    for (a, b) in u.snapshots.iter().zip(&v.snapshots) {
        match l1_distance(&a.field, &b.field)? {
            Integral::Finite(d) => series.rows.push(SeriesRow { x: a.t, sup: Some(sup_distance(&a.field, &b.field)?), l1: Some(d), weighted_l1: None }),
            Integral::Divergent => {
                return Ok((Series::default(), CheckResult::not_applicable("contraction", format!("L1 distance diverges at t = {}", a.t))));
            }
        }
    }
    let values = series.l1().unwrap_or_default();
    let check = monotone_check("contraction", Axis::T, &ts, &values, slack).with_constant("snapshots", ts.len() as f64);
    Ok((series, check))
}

/// `∫|ũ - ṽ| B̃_{k2}^{α_w} dy` at every common rescaled time.
///
/// Informational outside the nonintegrable regime.
pub fn weighted_contraction_series(u: &[RescaledField], v: &[RescaledField], p: &ProblemParams, k2: f64, slack: f64) -> Result<(Series, CheckResult)> {
    let taus: Vec<f64> = u.iter().map(|g| g.tau).collect();
    same_times(&taus, &v.iter().map(|g| g.tau).collect::<Vec<_>>())?;
    let mut series = Series::default();
    for (a, b) in u.iter().zip(v) {
        match weighted_l1_distance(&a.field, &b.field, p, k2)? {
            Integral::Finite(d) => series.rows.push(SeriesRow { x: a.tau, sup: Some(sup_distance(&a.field, &b.field)?), l1: None, weighted_l1: Some(d) }),
            Integral::Divergent => {
                return Ok((
                    Series::default(),
                    CheckResult::not_applicable("weighted_contraction", format!("weighted distance diverges at tau = {}", a.tau)),
                ));
            }
        }
    }
    let values = series.weighted_l1().unwrap_or_default();
    let mut check = monotone_check("weighted_contraction", Axis::Tau, &taus, &values, slack);
    if p.regime != Regime::NonIntegrable {
        check = check.informational();
    }
    Ok((series, check))
}

fn powered_weight(p: &ProblemParams, k2: f64, alpha: f64) -> Result<RescaledBarenblatt> {
    Ok(RescaledBarenblatt::new(p, k2)?.powered(alpha))
}

fn radial_laplacian_of(d: RadialDerivs, dim: usize, r: f64) -> f64 {
    radial_laplacian(d.d1, d.d2, dim, r)
}

/// `θ(m, N, k2) = k2 N (N - 4 - m(N-2)) / (2(N(1-m) - 2))`.
pub fn claim_i_theta(p: &ProblemParams, k2: f64) -> f64 {
    let n = p.dim as f64;
    k2 * n * (n - 4.0 - p.m * (n - 2.0)) / (2.0 * (n * (1.0 - p.m) - 2.0))
}

/// Both sides of the weight identity at radius `r`:
/// `(m(k2+r²)/C*) ΔW - |γ| r W'` from analytic derivatives of `W = B̃_{k2}^{α_w}`, and
/// `-θ C*^{α_w/(1-m)} / (k2+r²)^{N/2 - 1/(1-m)}`.
pub fn claim_i_sides(p: &ProblemParams, k2: f64, r: f64) -> Result<(f64, f64)> {
    if p.regime != Regime::NonIntegrable {
        return Err(Error::NotApplicable(format!(
            "the weight identity has a sign only for m ≤ (N-4)/(N-2); N = {}, m = {}",
            p.dim, p.m
        )));
    }
    let w = powered_weight(p, k2, p.weight_alpha)?;
    let d = w.derivs(r);
    let lhs = p.m * (k2 + r * r) / p.c_star * radial_laplacian_of(d, p.dim, r) - p.gamma.abs() * r * d.d1;
    let s = p.weight_alpha / (1.0 - p.m);
    let e = p.dim as f64 / 2.0 - 1.0 / (1.0 - p.m);
    let rhs = -claim_i_theta(p, k2) * p.c_star.powf(s) / (k2 + r * r).powf(e);
    Ok((lhs, rhs))
}

/// [`claim_i_sides`] at one radius with its check.
pub fn claim_i_identity(p: &ProblemParams, k2: f64, r: f64, rtol: f64) -> Result<(f64, f64, CheckResult)> {
    let (lhs, rhs) = claim_i_sides(p, k2, r)?;
    let c = claim_i_check(p, k2, &[r], rtol)?;
    Ok((lhs, rhs, c))
}

/// Relative agreement and strict negativity of the weight identity over `radii`.
///
/// The two terms of the left side cancel to relative order `r^{-2}`, so rounding
/// is amplified by `r²`; radii up to about `100 sqrt(k2)` keep 1e-10 meaningful.
pub fn claim_i_check(p: &ProblemParams, k2: f64, radii: &[f64], rtol: f64) -> Result<CheckResult> {
    let (mut worst, mut at, mut largest) = (0.0f64, None, f64::NEG_INFINITY);
    for &r in radii {
        let (lhs, rhs) = claim_i_sides(p, k2, r)?;
        let err = if lhs < 0.0 && rhs < 0.0 { ((lhs - rhs) / rhs).abs() } else { f64::INFINITY };
        if err > worst || at.is_none() {
            worst = worst.max(err);
            at = Some(r);
        }
        largest = largest.max(lhs);
    }
    Ok(CheckResult::measured("claim_i_identity", worst, rtol, at.map(|value| Location { axis: Axis::R, value }))
        .with_constant("theta", claim_i_theta(p, k2))
        .with_constant("max_lhs", largest)
        .with_constant("radii", radii.len() as f64))
}

/// `ΔB̃_{k2}^{α} ≤ tol` at `radii`; the default exponent is `α_w`.
pub fn laplacian_weight_sign_with(p: &ProblemParams, k2: f64, alpha: f64, radii: &[f64], tol: f64) -> Result<CheckResult> {
    let w = powered_weight(p, k2, alpha)?;
    let (mut worst, mut at) = (f64::NEG_INFINITY, None);
    for &r in radii {
        let v = radial_laplacian_of(w.derivs(r), p.dim, r);
        if v > worst {
            worst = v;
            at = Some(r);
        }
    }
    Ok(CheckResult::measured("laplacian_weight_sign", worst, tol, at.map(|value| Location { axis: Axis::R, value })).with_constant("alpha", alpha))
}

pub fn laplacian_weight_sign(p: &ProblemParams, k2: f64, tol: f64) -> Result<CheckResult> {
    laplacian_weight_sign_with(p, k2, p.weight_alpha, &sample_radii(1000, 1e4), tol)
}

/// `w(r) = ∫_0^t |u^m - v^m| ds` by the trapezoid rule over snapshots.
pub fn potential_of_pair(u: &Trajectory, v: &Trajectory, m: f64) -> Result<RadialField> {
    let ts = u.times();
    same_times(&ts, &v.times())?;
    let first = &u.snapshots[0].field;
    let g = |i: usize| -> Result<Vec<f64>> {
        let (a, b) = (&u.snapshots[i].field, &v.snapshots[i].field);
        if !a.same_grid(b) || !a.same_grid(first) {
            return Err(Error::Precondition("potential needs one grid for all snapshots".into()));
        }
        Ok(a.values().iter().zip(b.values()).map(|(x, y)| (x.powf(m) - y.powf(m)).abs()).collect())
    };
    let mut w = vec![0.0; first.values().len()];
    let mut prev = g(0)?;
    for i in 1..ts.len() {
        let cur = g(i)?;
        let dt = ts[i] - ts[i - 1];
        for ((acc, a), b) in w.iter_mut().zip(&prev).zip(&cur) {
            *acc += 0.5 * dt * (a + b);
        }
        prev = cur;
    }
    RadialField::new(first.grid().clone(), w, None)
}

/// `w(r) ≤ (1 + slack) M / (ω (N-2) r^{N-2})` for `r ≥ 1`, `M = ∫|u_0 - v_0|`.
pub fn potential_decay_check(u: &Trajectory, v: &Trajectory, p: &ProblemParams, slack: f64) -> Result<CheckResult> {
    if u.len() < 50 {
        return Err(Error::Precondition(format!("potential check needs at least 50 snapshots, got {}", u.len())));
    }
    if p.dim < 3 {
        return Err(Error::Precondition("potential bound needs N ≥ 3".into()));
    }
    let mass = l1_distance(&u.snapshots[0].field, &v.snapshots[0].field)?.expect_finite("initial difference for the potential bound")?;
    let w = potential_of_pair(u, v, p.m)?;
    let n = p.dim as f64;
    let omega = w.grid().sphere_area();
    let (mut worst, mut at) = (f64::NEG_INFINITY, None);
    for (&r, &wr) in w.grid().nodes().iter().zip(w.values()) {
        if r < 1.0 {
            continue;
        }
        let bound = mass / (omega * (n - 2.0) * r.powf(n - 2.0));
        let excess = wr / bound - 1.0;
        if excess > worst {
            worst = excess;
            at = Some(r);
        }
    }
    Ok(CheckResult::measured("potential_decay", worst, slack, at.map(|value| Location { axis: Axis::R, value })).with_constant("mass", mass))
}

/// `u(t2)/u(t1) ≤ (t2/t1)^{1/(1-m)}` over consecutive snapshots with `t1 > 0`.
pub fn aronson_benilan_check(traj: &Trajectory, p: &ProblemParams, slack: f64) -> Result<CheckResult> {
    let pairs: Vec<_> = traj.snapshots.windows(2).filter(|w| w[0].t > 0.0 && w[1].t > w[0].t).collect();
    if pairs.is_empty() {
        return Err(Error::Precondition("Aronson-Bénilan check needs two snapshots after t = 0".into()));
    }
    let q = 1.0 / (1.0 - p.m);
    let (mut worst, mut at) = (f64::NEG_INFINITY, None);
    for w in pairs {
        let (a, b) = (&w[0].field, &w[1].field);
        if !a.same_grid(b) {
            return Err(Error::Precondition("Aronson-Bénilan check needs one grid".into()));
        }
        let bound = (w[1].t / w[0].t).powf(q);
        for (&u1, &u2) in a.values().iter().zip(b.values()) {
            if u1 <= RATIO_FLOOR {
                continue;
            }
            let excess = u2 / u1 / bound - 1.0;
            if excess > worst {
                worst = excess;
                at = Some(w[1].t);
            }
        }
    }
    Ok(CheckResult::measured("aronson_benilan", worst, slack, at.map(|value| Location { axis: Axis::T, value })))
}

/// Tightest `C1, C2` with `C1 ≤ ũ (y² + 1)^{1/(1-m)} ≤ C2` for `y ≥ r0`, `τ ≥ tau0`.
///
/// Refuses data whose first snapshot exceeds `B̃_{k}`; passes when `C1 > 0`.
pub fn sandwich_bounds_check(series: &[RescaledField], p: &ProblemParams, k: f64, r0: f64, tau0: f64) -> Result<CheckResult> {
    let first = series.first().ok_or_else(|| Error::Precondition("sandwich check on an empty series".into()))?;
    let envelope = RescaledBarenblatt::new(p, k)?;
    for (&y, &v) in first.field.grid().nodes().iter().zip(first.field.values()) {
        let b = envelope.value(y);
        if v > b * (1.0 + 1e-9) {
            return Err(Error::NotApplicable(format!("initial data exceeds the Barenblatt envelope at y = {y}")));
        }
    }
    let q = 1.0 / (1.0 - p.m);
    let (mut c1, mut c2, mut at) = (f64::INFINITY, 0.0f64, None);
    for g in series.iter().filter(|g| g.tau >= tau0) {
        for (&y, &v) in g.field.grid().nodes().iter().zip(g.field.values()) {
            if y < r0 {
                continue;
            }
            let c = v * (y * y + 1.0).powf(q);
            if c < c1 {
                c1 = c;
                at = Some(g.tau);
            }
            c2 = c2.max(c);
        }
    }
    if at.is_none() {
        return Err(Error::Precondition(format!("no rescaled nodes with y ≥ {r0} and τ ≥ {tau0}")));
    }
    Ok(CheckResult::measured("sandwich_bounds", -c1, -f64::MIN_POSITIVE, at.map(|value| Location { axis: Axis::Tau, value }))
        .with_constant("c1", c1)
        .with_constant("c2", c2))
}

/// Distances of a rescaled series to `B̃_{k0}` and their checks.
///
/// Sup is always measured, plain L1 only in the integrable regime, weighted L1
/// (weight `B̃_{k0}^{α_w}`) always but it is mandatory only in the nonintegrable regime.
pub fn convergence_series(series: &[RescaledField], p: &ProblemParams, k0: f64, tol: &Tolerances) -> Result<(Series, Vec<CheckResult>)> {
    if series.len() < 2 {
        return Err(Error::Precondition("convergence needs at least two rescaled snapshots".into()));
    }
    let span = series[series.len() - 1].tau - series[0].tau;
    if span < tol.convergence_window {
        return Err(Error::Precondition(format!("τ window {span} is shorter than {}", tol.convergence_window)));
    }
    let target = RescaledBarenblatt::new(p, k0)?;
    let mut out = Series::default();
    for g in series {
        let b = target.sample(g.field.grid());
        let l1 = match p.regime {
            Regime::Integrable => l1_distance(&g.field, &b)?.value(),
            _ => None,
        };
        out.rows.push(SeriesRow {
            x: g.tau,
            sup: Some(sup_distance(&g.field, &b)?),
            l1,
            weighted_l1: weighted_l1_distance(&g.field, &b, p, k0)?.value(),
        });
    }
    let xs = out.xs();
    let mut checks = Vec::new();
    let metrics = [
        ("sup", out.sup(), true),
        ("l1", out.l1(), p.regime == Regime::Integrable),
        ("weighted_l1", out.weighted_l1(), p.regime == Regime::NonIntegrable),
    ];
    for (name, values, mandatory) in metrics {
        match values {
            Some(v) => {
                let mut d = decay_check(&format!("convergence_{name}_decay"), Axis::Tau, &xs, &v, tol.convergence_ratio);
                let mut m = monotone_check(&format!("convergence_{name}_monotone"), Axis::Tau, &xs, &v, tol.monotone_slack);
                if !mandatory {
                    d = d.informational();
                    m = m.informational();
                }
                checks.push(d);
                checks.push(m);
            }
            None if mandatory => {
                checks.push(CheckResult::not_applicable(&format!("convergence_{name}_decay"), "distance diverges"));
            }
            None => {}
        }
    }
    Ok((out, checks))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::profiles::derive_params;
    use crate::solver::Snapshot;

    fn barenblatt_traj(p: &ProblemParams, k: f64, times: &[f64]) -> Trajectory {
        let g = make_grid(1000.0, 200, 5.0, p.dim).unwrap();
        let b = Barenblatt::new(k, p.horizon).unwrap();
        Trajectory {
            snapshots: times.iter().map(|&t| Snapshot { t, field: b.sample(p, &g, t) }).collect(),
            stats: Default::default(),
            final_time: *times.last().unwrap(),
            extinct: false,
        }
    }

    #[test]
    fn trapped_barenblatt_passes_and_inflated_fails() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let traj = barenblatt_traj(&p, 2.0, &[0.0, 0.3, 0.9]);
        let c = check_trapped(&traj, &p, 4.0, 1.0, 1e-12).unwrap();
        assert!(c.passed && c.worst_value < 0.0);
        let same = check_trapped(&traj, &p, 2.0, 2.0, 1e-12).unwrap();
        assert!(same.passed);

        let mut inflated = barenblatt_traj(&p, 1.0, &[0.0, 0.5]);
        for s in &mut inflated.snapshots {
            let v: Vec<f64> = s.field.values().iter().map(|x| 1.01 * x).collect();
            s.field = RadialField::new(s.field.grid().clone(), v, None).unwrap();
        }
        let c = check_trapped(&inflated, &p, 4.0, 1.0, 1e-6).unwrap();
        assert!(!c.passed);
        assert!((c.worst_value - 0.01).abs() < 1e-12);

        let empty = Trajectory { snapshots: vec![], ..inflated };
        assert!(check_trapped(&empty, &p, 4.0, 1.0, 1e-6).is_err());
        assert!(check_trapped(&traj, &p, 1.0, 4.0, 1e-6).is_err());
    }

    #[test]
    fn identical_trajectories_have_zero_series() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let traj = barenblatt_traj(&p, 1.0, &[0.0, 0.2, 0.4, 0.6]);
        let (s, c) = contraction_series(&traj, &traj, 1e-4).unwrap();
        assert!(c.passed);
        assert!(s.l1().unwrap().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn contraction_of_barenblatt_pair() {
        // ∫|B_1 - B_2| dx is constant in t: the scalings s^β and s^{-β} cancel
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let times: Vec<f64> = (0..10).map(|i| 0.09 * i as f64).collect();
        let (s, c) = contraction_series(&barenblatt_traj(&p, 1.0, &times), &barenblatt_traj(&p, 2.0, &times), 1e-3).unwrap();
        assert!(c.passed, "{c:?}");
        let l1 = s.l1().unwrap();
        assert!(l1.iter().all(|d| (d / l1[0] - 1.0).abs() < 1e-3), "{l1:?}");
    }

    #[test]
    fn divergent_contraction_is_not_applicable() {
        let p = derive_params(6, 0.4, 1.0).unwrap();
        let times = [0.0, 0.5];
        let (_, c) = contraction_series(&barenblatt_traj(&p, 1.0, &times), &barenblatt_traj(&p, 2.0, &times), 1e-4).unwrap();
        assert_eq!(c.status, Status::NotApplicable);
    }

    #[test]
    fn monotone_and_decay_helpers() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        assert!(monotone_check("m", Axis::Tau, &xs, &[1.0, 0.5, 0.50001, 0.1], 1e-4).passed);
        let c = monotone_check("m", Axis::Tau, &xs, &[1.0, 0.5, 0.6, 0.1], 1e-4);
        assert!(!c.passed && (c.worst_value - 0.1).abs() < 1e-12);
        assert_eq!(c.location.unwrap().value, 2.0);
        assert!(decay_check("d", Axis::Tau, &xs, &[1.0, 0.5, 0.3, 0.15], 0.2).passed);
        assert!(!decay_check("d", Axis::Tau, &xs, &[1.0, 0.5, 0.3, 0.25], 0.2).passed);
    }

    /// Independent oracle: central differences of `W = (C*/(k2+r²))^{α_w/(1-m)}`.
    fn claim_i_by_differences(p: &ProblemParams, k2: f64, r: f64) -> f64 {
        let s = p.weight_alpha / (1.0 - p.m);
        let w = |x: f64| (p.c_star / (k2 + x * x)).powf(s);
        let h = 2e-4 * (1.0 + r);
        let d1 = (w(r + h) - w(r - h)) / (2.0 * h);
        let d2 = (w(r + h) - 2.0 * w(r) + w(r - h)) / (h * h);
        let lap = if r == 0.0 { p.dim as f64 * d2 } else { d2 + (p.dim as f64 - 1.0) / r * d1 };
        p.m * (k2 + r * r) / p.c_star * lap - p.gamma.abs() * r * d1
    }

    #[test]
    fn claim_i_sides_agree() {
        let p = derive_params(6, 0.4, 1.0).unwrap();
        assert!((claim_i_theta(&p, 1.0) - 0.75).abs() < 1e-14);
        let s = p.weight_alpha / (1.0 - p.m);
        for r in [0.0, 0.3, 1.0, 4.0, 50.0] {
            let (lhs, rhs) = claim_i_sides(&p, 1.0, r).unwrap();
            let oracle = claim_i_by_differences(&p, 1.0, r);
            assert!(((lhs - oracle) / oracle).abs() < 1e-5, "r={r}: {lhs} vs {oracle}");
            assert!(((lhs - rhs) / rhs).abs() < 1e-10);
            if r == 1.0 {
                let expected = -0.75 * p.c_star.powf(s) / 2f64.powf(4.0 / 3.0);
                assert!(((rhs - expected) / expected).abs() < 1e-12);
            }
        }
        let c = claim_i_check(&p, 1.0, &sample_radii(1000, 1e2), 1e-10).unwrap();
        assert!(c.passed, "{c:?}");
        assert!(c.constants["max_lhs"] < 0.0);
    }

    #[test]
    fn claim_i_refuses_integrable_regime() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        assert!(matches!(claim_i_sides(&p, 1.0, 1.0), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn weight_laplacian_sign() {
        let p = derive_params(6, 0.4, 1.0).unwrap();
        let c = laplacian_weight_sign(&p, 1.0, 1e-14).unwrap();
        assert!(c.passed, "{c:?}");
        // above (1-m)(N-2)/2 the Laplacian turns positive far out
        let bound = (1.0 - p.m) * (p.dim as f64 - 2.0) / 2.0;
        let c = laplacian_weight_sign_with(&p, 1.0, bound + 0.5, &sample_radii(1000, 1e4), 1e-14).unwrap();
        assert!(!c.passed);
        assert!(c.location.unwrap().value > 1.0);
        // value at the origin
        let w = powered_weight(&p, 1.0, p.weight_alpha).unwrap();
        let at0 = radial_laplacian_of(w.derivs(0.0), p.dim, 0.0);
        let expected = -2.0 * p.weight_alpha * p.dim as f64 / (1.0 - p.m) * w.value(0.0);
        assert!(((at0 - expected) / expected).abs() < 1e-12);
    }

    #[test]
    fn aronson_benilan_on_barenblatt() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let traj = barenblatt_traj(&p, 1.0, &[0.0, 0.1, 0.2, 0.5]);
        let c = aronson_benilan_check(&traj, &p, 1e-3).unwrap();
        assert!(c.passed && c.worst_value < 0.0);

        let mut bad = traj.clone();
        let last = bad.snapshots.last_mut().unwrap();
        let v: Vec<f64> = last.field.values().iter().map(|x| x * 1e3).collect();
        last.field = RadialField::new(last.field.grid().clone(), v, None).unwrap();
        assert!(!aronson_benilan_check(&bad, &p, 1e-3).unwrap().passed);

        let only_start = barenblatt_traj(&p, 1.0, &[0.0, 0.5]);
        assert!(aronson_benilan_check(&only_start, &p, 1e-3).is_err());
    }

    #[test]
    fn sandwich_constants_of_barenblatt() {
        let p = derive_params(6, 0.4, 1.0).unwrap();
        let g = make_grid(100.0, 128, 5.0, 6).unwrap();
        let bt = RescaledBarenblatt::new(&p, 1.0).unwrap();
        let series: Vec<RescaledField> = (0..3).map(|i| RescaledField { tau: i as f64, field: bt.sample(&g) }).collect();
        let c = sandwich_bounds_check(&series, &p, 1.0, 5.0, 1.0).unwrap();
        let exact = p.c_star.powf(1.0 / (1.0 - p.m));
        assert!(c.passed);
        assert!((c.constants["c1"] / exact - 1.0).abs() < 1e-12);
        assert!((c.constants["c2"] / exact - 1.0).abs() < 1e-12);
        let above = RescaledBarenblatt::new(&p, 0.5).unwrap();
        let series = vec![RescaledField { tau: 0.0, field: above.sample(&g) }];
        assert!(matches!(sandwich_bounds_check(&series, &p, 1.0, 5.0, 0.0), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn convergence_of_stationary_profile_is_zero() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let g = make_grid(1000.0, 200, 5.0, 3).unwrap();
        let bt = RescaledBarenblatt::new(&p, 2.0).unwrap();
        let series: Vec<RescaledField> = (0..5).map(|i| RescaledField { tau: i as f64, field: bt.sample(&g) }).collect();
        let (s, checks) = convergence_series(&series, &p, 2.0, &Tolerances::default()).unwrap();
        assert!(s.rows.iter().all(|r| r.sup == Some(0.0) && r.l1 == Some(0.0)));
        assert!(checks.iter().all(|c| c.passed), "{checks:?}");
    }

    #[test]
    fn report_round_trip_and_text() {
        let mut r = DiagnosticsReport::new("demo", "0");
        r.push(CheckResult::measured("a", 0.5, 1.0, None)).unwrap();
        r.push(CheckResult::measured("b", 2.0, 1.0, Some(Location { axis: Axis::R, value: 3.0 })).informational()).unwrap();
        assert!(r.push(CheckResult::measured("a", 0.0, 1.0, None)).is_err());
        assert!(r.all_mandatory_passed());
        let back: DiagnosticsReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let text = r.to_text();
        assert!(text.contains("PASS a") && text.contains("FAIL b") && text.contains("(info)"));
    }

    #[test]
    fn series_csv_columns() {
        let s = Series { rows: vec![SeriesRow { x: 1.0, sup: Some(0.5), l1: None, weighted_l1: Some(0.25) }] };
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("tau_or_t,sup,l1,weighted_l1"));
        let cells: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[2], "");
        assert_eq!(cells[3].parse::<f64>().unwrap(), 0.25);
    }
}
