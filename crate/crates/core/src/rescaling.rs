//! Similarity rescalings.
//!
//! First kind: `ũ(y, τ) = (T-t)^{-β} u(y (T-t)^γ, t)` with `τ = -log(T-t)`, under
//! which every Barenblatt solution becomes the stationary `B̃_k` of
//! `ũ_τ = Δũ^m + |γ| div(y ũ)`.
//!
//! Second kind: `g(η) = (T*-t)^{-α} u(η (T*-t)^θ, t)` for the anomalous profiles.
//!
//! Both maps act exactly on the node set: a field sampled at `x_i` becomes a
//! field sampled at the scaled radii, so no interpolation error enters.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{RadialField, RadialGrid};
use crate::profiles::{laplacian_of_power, radial_laplacian, ProblemParams, Profile};
use crate::solver::{Snapshot, Stats, Trajectory};
use crate::stencil;

const EXPONENT_RTOL: f64 = 1e-12;

/// A field in the first-kind similarity frame at rescaled time `tau`.
#[derive(Debug, Clone)]
pub struct RescaledField {
    pub tau: f64,
    pub field: RadialField,
}

/// `τ = -log(T - t)`.
pub fn tau_of(p: &ProblemParams, t: f64) -> f64 {
    -(p.horizon - t).ln()
}

/// `t = T - e^{-τ}`.
pub fn time_of(p: &ProblemParams, tau: f64) -> f64 {
    p.horizon - (-tau).exp()
}

/// Source times of a uniform ladder `τ_0, τ_0 + dτ, …` of `count` rungs.
pub fn tau_ladder(p: &ProblemParams, tau0: f64, spacing: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| time_of(p, tau0 + spacing * i as f64)).collect()
}

/// Map `u(·, t)` into the similarity frame.
pub fn to_rescaled(f: &RadialField, t: f64, p: &ProblemParams) -> Result<RescaledField> {
    let s = p.horizon - t;
    if !(s > 0.0) {
        return Err(Error::Precondition(format!("rescaling needs t < T, got t = {t}, T = {}", p.horizon)));
    }
    Ok(RescaledField {
        tau: -s.ln(),
        field: f.rescaled(s.powf(-p.gamma), s.powf(-p.beta)),
    })
}

/// Inverse of [`to_rescaled`]: the physical field and its time.
pub fn from_rescaled(g: &RescaledField, p: &ProblemParams) -> (RadialField, f64) {
    let s = (-g.tau).exp();
    (g.field.rescaled(s.powf(p.gamma), s.powf(p.beta)), p.horizon - s)
}

/// Rescale every snapshot taken before `T`.
pub fn rescale_trajectory(traj: &Trajectory, p: &ProblemParams) -> Result<Vec<RescaledField>> {
    traj.snapshots
        .iter()
        .filter(|s| s.t < p.horizon)
        .map(|s| to_rescaled(&s.field, s.t, p))
        .collect()
}

/// Write rescaled snapshots like a trajectory, with `tau` as the time label.
pub fn write_rescaled_dir(series: &[RescaledField], dir: &Path) -> Result<()> {
    let traj = Trajectory {
        snapshots: series.iter().map(|g| Snapshot { t: g.tau, field: g.field.clone() }).collect(),
        stats: Stats::default(),
        final_time: series.last().map_or(f64::NAN, |g| g.tau),
        extinct: false,
    };
    traj.write_dir(dir, None, "tau")
}

/// Same field values on the nodes of `grid`, by monotone interpolation.
pub fn resample(g: &RescaledField, grid: &Arc<RadialGrid>) -> RescaledField {
    RescaledField { tau: g.tau, field: g.field.resample(grid) }
}

/// `Δ g^m + |γ| y^{1-N} (y^N g)'` at every node, differenced with a `width`-point stencil.
pub fn rescaled_residual_with(g: &RescaledField, p: &ProblemParams, width: usize) -> Result<Vec<f64>> {
    let nodes = g.field.grid().nodes();
    let u = g.field.values();
    if let Some(i) = u.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::Precondition(format!("rescaled residual needs positive values, node {i} has {}", u[i])));
    }
    let w: Vec<f64> = u.iter().map(|v| v.powf(p.m)).collect();
    let n = p.dim as f64;
    Ok((0..nodes.len())
        .map(|i| {
            let (w1, w2) = stencil::radial_derivatives(nodes, &w, i, width);
            let (u1, _) = stencil::radial_derivatives(nodes, u, i, width);
            radial_laplacian(w1, w2, p.dim, nodes[i]) + p.gamma.abs() * (n * u[i] + nodes[i] * u1)
        })
        .collect())
}

/// Seven-point differenced residual of the rescaled flow.
pub fn rescaled_residual(g: &RescaledField, p: &ProblemParams) -> Result<Vec<f64>> {
    rescaled_residual_with(g, p, 7)
}

/// Residual of the rescaled flow for a profile with analytic derivatives.
pub fn rescaled_residual_analytic<F: Profile + ?Sized>(f: &F, p: &ProblemParams, y: f64) -> f64 {
    let d = f.derivs(y);
    laplacian_of_power(d, p.m, p.dim, y) + p.gamma.abs() * (p.dim as f64 * d.value + y * d.d1)
}

/// Exponents `(θ, α)` of a second-kind similarity solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecondKind {
    pub theta: f64,
    pub alpha: f64,
}

impl SecondKind {
    /// Checks `α (1-m) = 1 - 2θ`.
    pub fn new(p: &ProblemParams, theta: f64, alpha: f64) -> Result<Self> {
        let lhs = alpha * (1.0 - p.m);
        let rhs = 1.0 - 2.0 * theta;
        if (lhs - rhs).abs() > EXPONENT_RTOL * rhs.abs().max(1.0) {
            return Err(Error::Precondition(format!(
                "inconsistent exponents: α(1-m) = {lhs} but 1 - 2θ = {rhs}"
            )));
        }
        Ok(Self { theta, alpha })
    }

    pub fn from_theta(p: &ProblemParams, theta: f64) -> Self {
        Self { theta, alpha: (1.0 - 2.0 * theta) / (1.0 - p.m) }
    }
}

/// `g(η) = (T*-t)^{-α} u(η (T*-t)^θ, t)`.
pub fn second_kind_rescale(f: &RadialField, t: f64, t_star: f64, theta: f64, alpha: f64, p: &ProblemParams) -> Result<RadialField> {
    SecondKind::new(p, theta, alpha)?;
    let s = t_star - t;
    if !(s > 0.0) {
        return Err(Error::Precondition(format!("second-kind rescaling needs t < T*, got t = {t}, T* = {t_star}")));
    }
    Ok(f.rescaled(s.powf(-theta), s.powf(-alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::profiles::{derive_params, Barenblatt, RescaledBarenblatt};

    #[test]
    fn barenblatt_maps_to_stationary_profile() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let g = make_grid(1000.0, 400, 5.0, 3).unwrap();
        let b = Barenblatt::new(1.0, 1.0).unwrap();
        let bt = RescaledBarenblatt::new(&p, 1.0).unwrap();
        let r = to_rescaled(&b.sample(&p, &g, 0.5), 0.5, &p).unwrap();
        assert!((r.tau - 2f64.ln()).abs() < 1e-15);
        for (&y, &v) in r.field.grid().nodes().iter().zip(r.field.values()) {
            let exact = bt.value(y);
            assert!((v - exact).abs() <= 1e-12 * exact, "y={y}: {v} vs {exact}");
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let p = derive_params(6, 0.4, 2.0).unwrap();
        let g = make_grid(100.0, 128, 3.0, 6).unwrap();
        let f = RadialField::from_fn(g, |r| (1.0 + r * r).powf(-3.0) * (2.0 + r.sin()), Some(6.0)).unwrap();
        let back = from_rescaled(&to_rescaled(&f, 1.3, &p).unwrap(), &p);
        assert!((back.1 - 1.3).abs() < 1e-12);
        for (a, b) in back.0.values().iter().zip(f.values()) {
            assert!((a - b).abs() <= 1e-12 * b);
        }
        for (a, b) in back.0.grid().nodes().iter().zip(f.grid().nodes()) {
            assert!((a - b).abs() <= 1e-12 * b.max(1.0));
        }
    }

    #[test]
    fn rejects_time_past_horizon() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let f = RadialField::zeros(make_grid(10.0, 64, 1.0, 3).unwrap());
        assert!(to_rescaled(&f, 1.0, &p).is_err());
    }

    #[test]
    fn stationary_profile_residuals() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let bt = RescaledBarenblatt::new(&p, 1.0).unwrap();
        for y in [0.0, 0.5, 1.0, 10.0, 500.0] {
            assert!(rescaled_residual_analytic(&bt, &p, y).abs() < 1e-12);
        }
        let g = make_grid(1000.0, 400, 5.0, 3).unwrap();
        let field = RescaledField { tau: 0.0, field: bt.sample(&g) };
        let worst = rescaled_residual(&field, &p).unwrap().iter().fold(0.0f64, |a, r| a.max(r.abs()));
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn three_point_residual_is_second_order() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let bt = RescaledBarenblatt::new(&p, 1.0).unwrap();
        let worst = |m: usize| {
            let g = make_grid(1000.0, m, 5.0, 3).unwrap();
            let field = RescaledField { tau: 0.0, field: bt.sample(&g) };
            rescaled_residual_with(&field, &p, 3).unwrap().iter().fold(0.0f64, |a, r| a.max(r.abs()))
        };
        let ratio = worst(400) / worst(800);
        assert!((3.5..4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn perturbed_profile_is_not_stationary() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        let bt = RescaledBarenblatt::new(&p, 1.0).unwrap();
        let g = make_grid(1000.0, 400, 5.0, 3).unwrap();
        let field = RadialField::from_fn(g, |y| bt.value(y) + 0.1 * (-y * y).exp(), None).unwrap();
        let res = rescaled_residual(&RescaledField { tau: 0.0, field }, &p).unwrap();
        assert!(res.iter().fold(0.0f64, |a, r| a.max(r.abs())) > 1e-2);
    }

    #[test]
    fn second_kind_exponent_check() {
        let p = derive_params(3, 0.2, 1.0).unwrap();
        assert!(SecondKind::new(&p, 0.0, 1.25).is_ok());
        assert!(SecondKind::new(&p, 0.0, 1.3).is_err());
        let f = RadialField::zeros(make_grid(10.0, 64, 1.0, 3).unwrap());
        assert!(second_kind_rescale(&f, 0.5, 1.0, 0.1, 1.1, &p).is_err());
    }
}
