//! Self-similar solutions of the second kind `Θ = (T*-t)^α f(r (T*-t)^{-θ})`.
//!
//! Substituting into `u_t = Δu^m` gives the profile equation
//!
//! ```text
//! (f^m)'' + (N-1)/η (f^m)' - θ η f' + α f = 0,   α = (1 - 2θ)/(1 - m),
//! ```
//!
//! with `f'(0) = 0`. For generic `θ` the profile decays like `η^{-2/(1-m)}`;
//! the anomalous exponent `θ*` is the one where it decays like `η^{-(N-2)/m}`.

use std::cell::Cell;
use std::sync::Arc;

use ode_solvers::continuous_output_model::ContinuousOutputModel;
use ode_solvers::{Dopri5, System, Vector2};

use crate::error::{Error, Result};
use crate::grid::{make_grid, RadialField, RadialGrid};
use crate::profiles::{laplacian_of_power, ProblemParams, Profile, RadialDerivs};
use crate::rescaling::SecondKind;

const BLOWUP_FACTOR: f64 = 1e6;
const ODE_RTOL: f64 = 1e-12;
/// Shots start at `η_0 = START_FRACTION × η_max` from the Taylor expansion at the origin.
const START_FRACTION: f64 = 1e-9;

/// A second-kind similarity solution and its profile `f(η; λ)`.
#[derive(Debug, Clone)]
pub struct SelfSimilarSpec {
    pub theta: f64,
    pub alpha_ss: f64,
    pub lambda: f64,
    pub t_star: f64,
    pub profile: RadialField,
}

impl SelfSimilarSpec {
    pub fn new(p: &ProblemParams, theta: f64, alpha_ss: f64, lambda: f64, t_star: f64, profile: RadialField) -> Result<Self> {
        SecondKind::new(p, theta, alpha_ss)?;
        let (lo, hi) = theta_range(p);
        if !(theta > lo && theta < hi) {
            return Err(Error::Precondition(format!("θ = {theta} outside ({lo}, {hi})")));
        }
        if !(lambda > 0.0) {
            return Err(Error::Precondition(format!("λ must be positive, got {lambda}")));
        }
        Ok(Self { theta, alpha_ss, lambda, t_star, profile })
    }

    /// Header metadata for the profile CSV.
    pub fn csv_metadata(&self) -> Vec<(&'static str, String)> {
        vec![
            ("theta", format!("{:e}", self.theta)),
            ("alpha_ss", format!("{:e}", self.alpha_ss)),
            ("lambda", format!("{:e}", self.lambda)),
            ("t_star", format!("{:e}", self.t_star)),
        ]
    }
}

/// Admissible open interval `(-m/((1-m)N - 2), 1/2)` for `θ`.
pub fn theta_range(p: &ProblemParams) -> (f64, f64) {
    let n = p.dim as f64;
    (-p.m / ((1.0 - p.m) * n - 2.0), 0.5)
}

/// Residual of the profile equation at `η`.
pub fn profile_ode_residual<F: Profile + ?Sized>(f: &F, p: &ProblemParams, theta: f64, eta: f64) -> f64 {
    let alpha = (1.0 - 2.0 * theta) / (1.0 - p.m);
    let d = f.derivs(eta);
    laplacian_of_power(d, p.m, p.dim, eta) - theta * eta * d.d1 + alpha * d.value
}

/// `K_N = 2 sqrt(N(N-2)/(N+2))`, which makes the explicit profile solve the equation.
pub fn yamabe_constant(dim: usize) -> f64 {
    let n = dim as f64;
    2.0 * (n * (n - 2.0) / (n + 2.0)).sqrt()
}

/// `f(η; λ) = (K_N λ / (λ² + η²))^{(N+2)/2}`.
pub fn yamabe_profile(dim: usize, lambda: f64, eta: f64) -> f64 {
    YamabeProfile::new(dim, lambda).value(eta)
}

/// The explicit Yamabe profile with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YamabeProfile {
    pub dim: usize,
    pub lambda: f64,
}

impl YamabeProfile {
    pub fn new(dim: usize, lambda: f64) -> Self {
        Self { dim, lambda }
    }

    pub fn sample(&self, grid: &Arc<RadialGrid>) -> RadialField {
        let values = grid.nodes().iter().map(|&e| self.value(e)).collect();
        RadialField::with_matched_tail(grid.clone(), values, self.dim as f64 + 2.0, 0.0).expect("positive profile")
    }
}

impl Profile for YamabeProfile {
    fn derivs(&self, eta: f64) -> RadialDerivs {
        let q = (self.dim as f64 + 2.0) / 2.0;
        let l = self.lambda;
        let d = l * l + eta * eta;
        let u = (yamabe_constant(self.dim) * l / d).powf(q);
        let g1 = -2.0 * eta / d;
        let g2 = -2.0 / d + 4.0 * eta * eta / (d * d);
        RadialDerivs { value: u, d1: u * q * g1, d2: u * (q * q * g1 * g1 + q * g2) }
    }
}

/// `f(η; λ) = λ^{-2/(1-m)} f(η/λ; 1)`, applied exactly on the node set.
pub fn scale_profile(f: &RadialField, lambda: f64, p: &ProblemParams) -> Result<RadialField> {
    if !(lambda > 0.0) {
        return Err(Error::Precondition(format!("λ must be positive, got {lambda}")));
    }
    Ok(f.rescaled(lambda, lambda.powf(-2.0 / (1.0 - p.m))))
}

/// How a shot ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShotEnd {
    /// Reached `η_max` with positive values.
    Reached,
    /// `f` reached zero at this radius.
    HitZero(f64),
    /// `f` exceeded the blow-up bound at this radius.
    Blowup(f64, f64),
}

/// `(w, w')` with `w = f^m`.
struct ProfileOde<'a> {
    n: f64,
    inv_m: f64,
    theta: f64,
    alpha: f64,
    w_cap: f64,
    end: &'a Cell<ShotEnd>,
}

impl System<f64, Vector2<f64>> for ProfileOde<'_> {
    fn system(&self, eta: f64, y: &Vector2<f64>, dy: &mut Vector2<f64>) {
        let w = y[0].max(0.0);
        let v = y[1];
        let f = w.powf(self.inv_m);
        let fp = self.inv_m * w.powf(self.inv_m - 1.0) * v;
        dy[0] = v;
        dy[1] = -(self.n - 1.0) / eta * v + self.theta * eta * fp - self.alpha * f;
    }

    fn solout(&mut self, eta: f64, y: &Vector2<f64>, _dy: &Vector2<f64>) -> bool {
        if y[0] <= 0.0 {
            self.end.set(ShotEnd::HitZero(eta));
            return true;
        }
        if y[0] > self.w_cap {
            self.end.set(ShotEnd::Blowup(eta, y[0].powf(self.inv_m)));
            return true;
        }
        false
    }
}

/// Integrate the profile equation from `f(0) = f0`, `f'(0) = 0` and sample it on `grid`.
///
/// Nodes beyond a zero of `f` get the value 0.
pub fn shoot_on_grid(p: &ProblemParams, theta: f64, f0: f64, grid: &Arc<RadialGrid>) -> Result<(RadialField, ShotEnd)> {
    if !(f0 > 0.0) {
        return Err(Error::Precondition(format!("f(0) must be positive, got {f0}")));
    }
    let n = p.dim as f64;
    let m = p.m;
    let alpha = (1.0 - 2.0 * theta) / (1.0 - m);
    let w0 = f0.powf(m);
    // w'' + (N-1)/η w' = -α f0 + O(η²)  ⇒  w''(0) = -α f0 / N
    let curv = -alpha * f0 / n;
    let eta_max = grid.rmax();
    let eta0 = START_FRACTION * eta_max;
    let y0 = Vector2::new(w0 + 0.5 * curv * eta0 * eta0, curv * eta0);

    let end = Cell::new(ShotEnd::Reached);
    let ode = ProfileOde {
        n,
        inv_m: 1.0 / m,
        theta,
        alpha,
        w_cap: (BLOWUP_FACTOR * f0).powf(m),
        end: &end,
    };
    let mut dense = ContinuousOutputModel::default();
    Dopri5::new(ode, eta0, eta_max, eta_max, y0, ODE_RTOL, 1e-14 * w0)
        .integrate_with_continuous_output_model(&mut dense)
        .map_err(|e| Error::StepFailed { t: eta0, reason: format!("profile integration: {e:?}") })?;
    let end = end.get();
    if let ShotEnd::Blowup(eta, value) = end {
        return Err(Error::Blowup { eta, value });
    }
    let (_, reach) = dense.bounds();
    let values: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|&eta| {
            if eta < eta0 {
                // inside the Taylor start the profile is w0 + curv η²/2
                (w0 + 0.5 * curv * eta * eta).max(0.0).powf(1.0 / m)
            } else if eta > reach || matches!(end, ShotEnd::HitZero(z) if eta >= z) {
                0.0
            } else {
                dense.evaluate(eta).map_or(0.0, |y| y[0].max(0.0).powf(1.0 / m))
            }
        })
        .collect();
    Ok((RadialField::new(grid.clone(), values, None)?, end))
}

/// Profile grid used by [`shoot_profile`]: 1200 intervals, uniform out to `min(5, η_max/10)`.
pub fn profile_grid(p: &ProblemParams, eta_max: f64) -> Result<Arc<RadialGrid>> {
    make_grid(eta_max, 1200, (eta_max / 10.0).min(5.0), p.dim)
}

/// Shoot the profile for `θ` from `f(0) = f0` out to `η_max`.
pub fn shoot_profile(p: &ProblemParams, theta: f64, f0: f64, eta_max: f64) -> Result<RadialField> {
    let (lo, hi) = theta_range(p);
    if !(theta > lo && theta < hi) {
        return Err(Error::Precondition(format!("θ = {theta} outside ({lo}, {hi})")));
    }
    let grid = profile_grid(p, eta_max)?;
    shoot_on_grid(p, theta, f0, &grid).map(|(f, _)| f)
}

/// Which side of `θ*` a shot is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShotClass {
    /// `f` reaches zero: `θ > θ*`.
    Crosses,
    /// `f` stays positive up to `η_max`: `θ < θ*`.
    Positive,
}

/// Settings for the bisection in [`find_anomalous_theta`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaSearch {
    pub eta_max: f64,
    pub width_tol: f64,
    /// Tail fit window `[lo, hi] × η_½`, with `η_½` the radius where `f = f(0)/2`.
    pub fit_window: (f64, f64),
}

impl Default for ThetaSearch {
    fn default() -> Self {
        Self { eta_max: 1e6, width_tol: 1e-8, fit_window: (10.0, 300.0) }
    }
}

/// Classify the shot at `θ` by whether `f` reaches zero.
pub fn classify(p: &ProblemParams, theta: f64, f0: f64, search: &ThetaSearch) -> Result<ShotClass> {
    let grid = profile_grid(p, search.eta_max)?;
    match shoot_on_grid(p, theta, f0, &grid)? {
        (_, ShotEnd::HitZero(_)) => Ok(ShotClass::Crosses),
        _ => Ok(ShotClass::Positive),
    }
}

/// Decay exponent of the shot at `θ`, fitted on the window of `search`.
pub fn shot_tail_exponent(p: &ProblemParams, theta: f64, f0: f64, search: &ThetaSearch) -> Result<f64> {
    let grid = profile_grid(p, search.eta_max)?;
    let (f, _) = shoot_on_grid(p, theta, f0, &grid)?;
    let nodes = f.grid().nodes();
    let half = nodes
        .iter()
        .zip(f.values())
        .find(|(_, v)| **v <= 0.5 * f0)
        .map(|(e, _)| *e)
        .ok_or_else(|| Error::Precondition("profile never drops to half its height".into()))?;
    let (lo, hi) = (search.fit_window.0 * half, search.fit_window.1 * half);
    let pts: Vec<(f64, f64)> = nodes
        .iter()
        .zip(f.values())
        .filter(|(e, v)| **e >= lo && **e <= hi && **v > 0.0)
        .map(|(e, v)| (e.ln(), v.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(Error::Precondition(format!("only {} positive nodes in the tail window", pts.len())));
    }
    Ok(-crate::grid::least_squares_slope(&pts))
}

/// Bisect `θ` on `[lo, hi]` for the switch between positive and zero-crossing shots.
///
/// Exactly at `θ*` the profile has the fast tail `η^{-(N-2)/m}`; below it the
/// profile stays positive with a slower tail, above it `f` reaches zero.
pub fn find_anomalous_theta_in(p: &ProblemParams, f0: f64, lo: f64, hi: f64, search: &ThetaSearch) -> Result<f64> {
    let gap = (p.fast_tail_exponent() - p.barenblatt_tail_exponent()).abs();
    if gap <= 0.5 {
        return Err(Error::Precondition(format!("candidate tail exponents differ by only {gap}")));
    }
    if !(hi > lo) {
        return Err(Error::NoSignChange { lo, hi });
    }
    let (mut a, mut b) = (lo, hi);
    let ca = classify(p, a, f0, search)?;
    if ca == classify(p, b, f0, search)? {
        return Err(Error::NoSignChange { lo, hi });
    }
    while b - a > search.width_tol {
        let mid = 0.5 * (a + b);
        if classify(p, mid, f0, search)? == ca {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

/// The anomalous exponent `θ*` on the admissible interval.
pub fn find_anomalous_theta(p: &ProblemParams, f0: f64) -> Result<f64> {
    if !p.in_range() {
        return Err(Error::Regime(format!("m = {} has no extinction Barenblatt family in N = {}", p.m, p.dim)));
    }
    let (lo, hi) = theta_range(p);
    let pad = 1e-6 * (hi - lo);
    find_anomalous_theta_in(p, f0, lo + pad, hi - pad, &ThetaSearch::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::derive_params;

    #[test]
    fn yamabe_constant_solves_profile_equation() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        assert!((yamabe_constant(3) - 2.0 * 0.6f64.sqrt()).abs() < 1e-15);
        for lambda in [0.5, 1.0, 3.0] {
            let y = YamabeProfile::new(3, lambda);
            for eta in [0.0, 0.1, 1.0, 7.0, 40.0] {
                let r = profile_ode_residual(&y, &p, 0.0, eta);
                assert!(r.abs() < 1e-8 * y.value(0.0).max(1.0), "λ={lambda} η={eta}: {r}");
            }
        }
        // a wrong constant leaves a residual
        let p5 = derive_params(5, 3.0 / 7.0, 1.0).unwrap();
        let y5 = YamabeProfile::new(5, 1.0);
        assert!(profile_ode_residual(&y5, &p5, 0.0, 0.7).abs() < 1e-9);
    }

    #[test]
    fn barenblatt_is_not_a_second_kind_profile() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let b = crate::profiles::RescaledBarenblatt::new(&p, 1.0).unwrap();
        assert!(profile_ode_residual(&b, &p, 0.0, 1.0).abs() > 1e-3);
    }

    #[test]
    fn scaling_matches_explicit_family() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let g = make_grid(100.0, 256, 5.0, 3).unwrap();
        let one = YamabeProfile::new(3, 1.0).sample(&g);
        let scaled = scale_profile(&one, 2.5, &p).unwrap();
        for (&eta, &v) in scaled.grid().nodes().iter().zip(scaled.values()) {
            let exact = yamabe_profile(3, 2.5, eta);
            assert!((v - exact).abs() <= 1e-12 * exact);
        }
    }

    #[test]
    fn yamabe_shot_matches_explicit_profile() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        // f(0) = (K/λ)^{5/2} = 1 selects λ = K
        let lambda = yamabe_constant(3);
        let f = shoot_profile(&p, 0.0, 1.0, 1e3).unwrap();
        for (&eta, &v) in f.grid().nodes().iter().zip(f.values()) {
            if eta <= 50.0 {
                let exact = yamabe_profile(3, lambda, eta);
                assert!((v / exact - 1.0).abs() < 1e-5, "η={eta}");
            }
        }
    }

    #[test]
    fn yamabe_theta_is_zero() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let theta = find_anomalous_theta(&p, 1.0).unwrap();
        assert!(theta.abs() < 1e-4, "{theta}");
        let e = shot_tail_exponent(&p, theta, 1.0, &ThetaSearch::default()).unwrap();
        assert!((e / p.fast_tail_exponent() - 1.0).abs() < 0.05, "{e}");
    }

    #[test]
    fn anomalous_theta_has_fast_tail() {
        let p = derive_params(3, 0.25, 1.0).unwrap();
        let search = ThetaSearch::default();
        let theta = find_anomalous_theta(&p, 1.0).unwrap();
        let (lo, hi) = theta_range(&p);
        assert!(theta > lo && theta < hi);
        let e = shot_tail_exponent(&p, theta, 1.0, &search).unwrap();
        assert!((e / p.fast_tail_exponent() - 1.0).abs() < 0.05, "θ*={theta} tail {e}");
        // θ* does not depend on f(0)
        let other = find_anomalous_theta(&p, 7.0).unwrap();
        assert!((other - theta).abs() < 1e-4, "{other} vs {theta}");
    }

    #[test]
    fn degenerate_interval_has_no_sign_change() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let s = ThetaSearch::default();
        assert!(matches!(find_anomalous_theta_in(&p, 1.0, 0.1, 0.1, &s), Err(Error::NoSignChange { .. })));
        assert!(matches!(find_anomalous_theta_in(&p, 1.0, 0.1, 0.3, &s), Err(Error::NoSignChange { .. })));
    }
}
