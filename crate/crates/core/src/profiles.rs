//! Barenblatt solutions of `u_t = Δu^m` and the constants they carry.
//!
//! For `0 < m < (N-2)/N` the family
//!
//! ```text
//! B_k(r, t) = ( C* (T - t) / (k (T - t)^{2γ} + r²) )^{1/(1-m)}
//! ```
//!
//! vanishes at `t = T`. Under the similarity rescaling every member maps onto the
//! stationary profile `B̃_k(y) = (C* / (k + y²))^{1/(1-m)}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, RadialField, RadialGrid, Tail};

const YAMABE_RTOL: f64 = 1e-12;

/// Which convergence theorem the exponent pair falls under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `(N-4)/(N-2) < m < (N-2)/N`: differences of Barenblatt profiles are integrable.
    Integrable,
    /// `N > 4`, `0 < m ≤ (N-4)/(N-2)`: they are not, and a weight is needed.
    NonIntegrable,
    /// `m ≥ (N-2)/N`: no extinction Barenblatt family.
    OutOfRange,
}

/// Dimension, exponent and extinction time together with every derived constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub dim: usize,
    pub m: f64,
    pub horizon: f64,
    pub beta: f64,
    pub gamma: f64,
    pub c_star: f64,
    pub weight_alpha: f64,
    pub regime: Regime,
    pub is_yamabe: bool,
}

impl ProblemParams {
    pub fn new(dim: usize, m: f64, horizon: f64) -> Result<Self> {
        if dim < 3 {
            return Err(Error::Config(format!("dimension must be at least 3, got {dim}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("extinction time must be positive, got {horizon}")));
        }
        if !(m > 0.0) || !m.is_finite() {
            return Err(Error::Config(format!("exponent m must be positive, got {m}")));
        }
        let n = dim as f64;
        let denom = n - 2.0 - n * m;
        let beta = n / denom;
        let gamma = -beta / n;
        let c_star = 2.0 * m * denom / (1.0 - m);
        let weight_alpha = (n - 2.0) * (1.0 - m) / 2.0 - 1.0;

        let critical = (n - 2.0) / n;
        let integrable_floor = (n - 4.0) / (n - 2.0);
        let regime = if m >= critical {
            Regime::OutOfRange
        } else if m > integrable_floor {
            Regime::Integrable
        } else {
            Regime::NonIntegrable
        };
        let yamabe_m = (n - 2.0) / (n + 2.0);
        let is_yamabe = ((m - yamabe_m) / yamabe_m).abs() <= YAMABE_RTOL;

        Ok(Self {
            dim,
            m,
            horizon,
            beta,
            gamma,
            c_star,
            weight_alpha,
            regime,
            is_yamabe,
        })
    }

    /// `1/(1-m)`, the power carried by every Barenblatt-type profile.
    pub fn profile_power(&self) -> f64 {
        1.0 / (1.0 - self.m)
    }

    /// Decay exponent `2/(1-m)` of the Barenblatt far field.
    pub fn barenblatt_tail_exponent(&self) -> f64 {
        2.0 / (1.0 - self.m)
    }

    /// Decay exponent `(N-2)/m` of integrable solutions and anomalous profiles.
    pub fn fast_tail_exponent(&self) -> f64 {
        (self.dim as f64 - 2.0) / self.m
    }

    pub fn yamabe_exponent(dim: usize) -> f64 {
        let n = dim as f64;
        (n - 2.0) / (n + 2.0)
    }

    pub fn in_range(&self) -> bool {
        self.regime != Regime::OutOfRange
    }

    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.dim, self.m, horizon)
    }
}

/// Compute the derived constants for `(N, m, T)`.
pub fn derive_params(dim: usize, m: f64, horizon: f64) -> Result<ProblemParams> {
    ProblemParams::new(dim, m, horizon)
}

/// Value and first two radial derivatives of a radial profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialDerivs {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

/// A radial function of space and time with known derivatives.
pub trait SpaceTimeProfile {
    fn value(&self, r: f64, t: f64) -> f64;
    fn time_derivative(&self, r: f64, t: f64) -> f64;
    fn radial(&self, r: f64, t: f64) -> RadialDerivs;
}

/// A time-independent radial profile with known derivatives.
pub trait Profile {
    fn derivs(&self, r: f64) -> RadialDerivs;

    fn value(&self, r: f64) -> f64 {
        self.derivs(r).value
    }
}

/// One member `(k, T)` of the Barenblatt family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Barenblatt {
    pub k: f64,
    pub horizon: f64,
}

impl Barenblatt {
    pub fn new(k: f64, horizon: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::Config(format!("Barenblatt k must be positive, got {k}")));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("Barenblatt T must be positive, got {horizon}")));
        }
        Ok(Self { k, horizon })
    }

    /// `k (T-t)^{2γ}`, the squared core radius at time `t`.
    fn core(&self, p: &ProblemParams, s: f64) -> f64 {
        self.k * s.powf(2.0 * p.gamma)
    }

    pub fn eval(&self, p: &ProblemParams, r: f64, t: f64) -> f64 {
        let s = self.horizon - t;
        if s <= 0.0 {
            return 0.0;
        }
        let base = p.c_star * s / (self.core(p, s) + r * r);
        base.powf(p.profile_power())
    }

    /// Far-field model `c r^{-p} + d r^{-p-2}` of `B_k(·, t)`.
    pub fn tail(&self, p: &ProblemParams, t: f64) -> Option<Tail> {
        let s = self.horizon - t;
        if s <= 0.0 {
            return None;
        }
        let q = p.profile_power();
        let coeff = (p.c_star * s).powf(q);
        Some(Tail {
            exponent: 2.0 * q,
            coeff,
            correction: -q * self.core(p, s) * coeff,
        })
    }

    /// Samples of `B_k(·, t)` on `grid`, with the far field matched at the last node.
    pub fn sample(&self, p: &ProblemParams, grid: &std::sync::Arc<RadialGrid>, t: f64) -> RadialField {
        let values: Vec<f64> = grid.nodes().iter().map(|&r| self.eval(p, r, t)).collect();
        match self.tail(p, t) {
            Some(tail) => RadialField::with_matched_tail(grid.clone(), values, tail.exponent, tail.correction_ratio())
                .expect("Barenblatt samples are valid"),
            None => RadialField::new(grid.clone(), values, None).expect("zero field is valid"),
        }
    }

    /// Evaluation bound to a parameter set, usable as a [`SpaceTimeProfile`].
    pub fn profile<'a>(&'a self, p: &'a ProblemParams) -> BarenblattProfile<'a> {
        BarenblattProfile { b: self, p }
    }
}

/// Closed-form value of `B_k(r, t)`; zero once `t ≥ T`.
pub fn eval_barenblatt(p: &ProblemParams, b: &Barenblatt, r: f64, t: f64) -> f64 {
    b.eval(p, r, t)
}

/// Closed-form value of the stationary rescaled profile `B̃_k(r)`.
pub fn eval_rescaled_barenblatt(p: &ProblemParams, k: f64, r: f64) -> Result<f64> {
    Ok(RescaledBarenblatt::new(p, k)?.value(r))
}

/// `B_k` with analytic space and time derivatives.
pub struct BarenblattProfile<'a> {
    b: &'a Barenblatt,
    p: &'a ProblemParams,
}

impl SpaceTimeProfile for BarenblattProfile<'_> {
    fn value(&self, r: f64, t: f64) -> f64 {
        self.b.eval(self.p, r, t)
    }

    fn time_derivative(&self, r: f64, t: f64) -> f64 {
        let s = self.b.horizon - t;
        if s <= 0.0 {
            return 0.0;
        }
        let q = self.p.profile_power();
        let core = self.b.core(self.p, s);
        let d = core + r * r;
        // d/dt of the core is -2γ core / s
        let u = self.b.eval(self.p, r, t);
        u * q * (-1.0 / s + 2.0 * self.p.gamma * core / (s * d))
    }

    fn radial(&self, r: f64, t: f64) -> RadialDerivs {
        let s = self.b.horizon - t;
        if s <= 0.0 {
            return RadialDerivs { value: 0.0, d1: 0.0, d2: 0.0 };
        }
        let q = self.p.profile_power();
        let d = self.b.core(self.p, s) + r * r;
        let u = self.b.eval(self.p, r, t);
        let g1 = -2.0 * r / d;
        let g2 = -2.0 / d + 4.0 * r * r / (d * d);
        RadialDerivs {
            value: u,
            d1: u * q * g1,
            d2: u * (q * q * g1 * g1 + q * g2),
        }
    }
}

/// `B̃_k(y) = (C*/(k + y²))^{1/(1-m)}` with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RescaledBarenblatt {
    pub k: f64,
    c_star: f64,
    power: f64,
}

impl RescaledBarenblatt {
    pub fn new(p: &ProblemParams, k: f64) -> Result<Self> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::Config(format!("rescaled Barenblatt k must be positive, got {k}")));
        }
        Ok(Self {
            k,
            c_star: p.c_star,
            power: p.profile_power(),
        })
    }

    /// `B̃_k^α` as a profile: same shape with power `α/(1-m)`.
    pub fn powered(&self, alpha: f64) -> Self {
        Self {
            power: self.power * alpha,
            ..*self
        }
    }

    pub fn tail(&self) -> Tail {
        let coeff = self.c_star.powf(self.power);
        Tail {
            exponent: 2.0 * self.power,
            coeff,
            correction: -self.power * self.k * coeff,
        }
    }

    pub fn sample(&self, grid: &std::sync::Arc<RadialGrid>) -> RadialField {
        let values: Vec<f64> = grid.nodes().iter().map(|&r| self.value(r)).collect();
        let tail = self.tail();
        RadialField::with_matched_tail(grid.clone(), values, tail.exponent, tail.correction_ratio())
            .expect("rescaled Barenblatt samples are valid")
    }
}

impl Profile for RescaledBarenblatt {
    fn derivs(&self, r: f64) -> RadialDerivs {
        let d = self.k + r * r;
        let u = (self.c_star / d).powf(self.power);
        let q = self.power;
        let g1 = -2.0 * r / d;
        let g2 = -2.0 / d + 4.0 * r * r / (d * d);
        RadialDerivs {
            value: u,
            d1: u * q * g1,
            d2: u * (q * q * g1 * g1 + q * g2),
        }
    }
}

/// Centered-difference derivatives of an arbitrary space-time function, O(h²).
pub struct FiniteDifferenced<F> {
    pub f: F,
    pub h: f64,
}

impl<F: Fn(f64, f64) -> f64> SpaceTimeProfile for FiniteDifferenced<F> {
    fn value(&self, r: f64, t: f64) -> f64 {
        (self.f)(r, t)
    }

    fn time_derivative(&self, r: f64, t: f64) -> f64 {
        ((self.f)(r, t + self.h) - (self.f)(r, t - self.h)) / (2.0 * self.h)
    }

    fn radial(&self, r: f64, t: f64) -> RadialDerivs {
        let h = self.h;
        // even extension across r = 0
        let fm = (self.f)((r - h).abs(), t);
        let f0 = (self.f)(r, t);
        let fp = (self.f)(r + h, t);
        RadialDerivs {
            value: f0,
            d1: (fp - fm) / (2.0 * h),
            d2: (fp - 2.0 * f0 + fm) / (h * h),
        }
    }
}

/// Radial Laplacian of `u^m` from the derivatives of `u`, with the `N (u^m)''` limit at the origin.
pub(crate) fn laplacian_of_power(d: RadialDerivs, m: f64, dim: usize, r: f64) -> f64 {
    if d.value <= 0.0 {
        return 0.0;
    }
    let um1 = d.value.powf(m - 1.0);
    let w1 = m * um1 * d.d1;
    let w2 = m * um1 * d.d2 + m * (m - 1.0) * um1 / d.value * d.d1 * d.d1;
    radial_laplacian(w1, w2, dim, r)
}

/// `w'' + (N-1)/r w'`, or `N w''` at `r = 0`.
pub(crate) fn radial_laplacian(d1: f64, d2: f64, dim: usize, r: f64) -> f64 {
    if r == 0.0 {
        dim as f64 * d2
    } else {
        d2 + (dim as f64 - 1.0) / r * d1
    }
}

/// `u_t - Δu^m` in radial form.
pub fn pde_residual<U: SpaceTimeProfile + ?Sized>(u: &U, p: &ProblemParams, r: f64, t: f64) -> f64 {
    let ut = u.time_derivative(r, t);
    ut - laplacian_of_power(u.radial(r, t), p.m, p.dim, r)
}

/// Pick the Barenblatt member whose difference with `u0` has zero net mass.
///
/// `F(k) = ∫ (u0 - B_k(·, 0)) dx` is increasing in `k`; the root is found by
/// bisection on `[k_hi, k_lo]` (note `k_lo ≥ k_hi`: `B_{k_lo}` is the lower envelope).
pub fn find_k0(u0: &RadialField, p: &ProblemParams, k_lo: f64, k_hi: f64) -> Result<f64> {
    if p.regime != Regime::Integrable {
        return Err(Error::Regime(format!(
            "mass matching needs integrable differences, regime is {:?}",
            p.regime
        )));
    }
    let grid = u0.grid().clone();
    let mismatch = |k: f64| -> Result<f64> {
        let b = Barenblatt::new(k, p.horizon)?.sample(p, &grid, 0.0);
        match grid::signed_difference_integral(u0, &b)? {
            grid::Integral::Finite(v) => Ok(v),
            grid::Integral::Divergent => Err(Error::Divergent(format!("mass mismatch at k = {k}"))),
        }
    };

    let (mut a, mut b) = (k_hi.min(k_lo), k_hi.max(k_lo));
    let (mut fa, fb) = (mismatch(a)?, mismatch(b)?);
    let scale = {
        let env = Barenblatt::new(k_hi, p.horizon)?.sample(p, &grid, 0.0);
        match grid::l1_distance(u0, &env)? {
            grid::Integral::Finite(v) => v,
            grid::Integral::Divergent => 0.0,
        }
    };
    let tol = 1e-8 * scale.max(f64::MIN_POSITIVE);
    if fa.abs() <= tol {
        return Ok(a);
    }
    if fb.abs() <= tol {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(Error::NoBracket { lo: a, hi: b, f_lo: fa, f_hi: fb });
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        let fm = mismatch(mid)?;
        if fm.abs() <= tol || (b - a) <= 1e-14 * mid {
            return Ok(mid);
        }
        if fm * fa < 0.0 {
            b = mid;
        } else {
            a = mid;
            fa = fm;
        }
    }
    Ok(0.5 * (a + b))
}
