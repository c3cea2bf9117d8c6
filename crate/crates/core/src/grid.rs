//! Stretched radial grids and nonnegative radial fields with a power-law far field.
//!
//! All integrals are `N`-dimensional volume integrals of radial functions:
//! trapezoid in `r` against `ω_{N-1} r^{N-1} dr` on the grid, plus a closed-form
//! contribution from the tail model beyond the last node.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::stencil;

/// Exponent gap below which a tail integral is declared divergent.
const EXPONENT_EPS: f64 = 1e-9;
/// Relative gap below which two leading tail coefficients are considered equal.
const COEFF_RTOL: f64 = 1e-6;
/// Allowed relative mismatch between the last node and the tail model.
const SEAM_RTOL: f64 = 1e-6;

/// Surface area `ω_{N-1} = 2 π^{N/2} / Γ(N/2)` of the unit sphere in `R^N`.
pub fn sphere_area(dim: usize) -> f64 {
    let half = dim as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / gamma(half)
}

/// Strictly increasing radii `0 = r_0 < r_1 < … < r_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    dim: usize,
    r_lin: f64,
    ratio: f64,
}

impl RadialGrid {
    /// Uniform spacing on `[0, r_lin]` over a quarter of the `intervals`,
    /// geometric beyond with the last node exactly at `rmax`.
    pub fn stretched(rmax: f64, intervals: usize, r_lin: f64, dim: usize) -> Result<Self> {
        if intervals < 64 {
            return Err(Error::Config(format!("grid needs at least 64 intervals, got {intervals}")));
        }
        if !(r_lin > 0.0) || !(rmax > r_lin) || !rmax.is_finite() {
            return Err(Error::Config(format!(
                "grid needs 0 < r_lin < rmax, got r_lin = {r_lin}, rmax = {rmax}"
            )));
        }
        if dim == 0 {
            return Err(Error::Config("grid dimension must be positive".into()));
        }
        let n_lin = intervals / 4;
        let n_geo = intervals - n_lin;
        let ratio = (rmax / r_lin).powf(1.0 / n_geo as f64);
        let h = r_lin / n_lin as f64;
        let mut nodes = Vec::with_capacity(intervals + 1);
        nodes.extend((0..=n_lin).map(|i| i as f64 * h));
        nodes.extend((1..=n_geo).map(|j| r_lin * ratio.powi(j as i32)));
        nodes[n_lin] = r_lin;
        *nodes.last_mut().unwrap() = rmax;
        Ok(Self { nodes, dim, r_lin, ratio })
    }

    /// Grid from explicit nodes; used when reading fields back from disk.
    pub fn from_nodes(nodes: Vec<f64>, dim: usize) -> Result<Self> {
        if nodes.len() < 2 || nodes[0] != 0.0 {
            return Err(Error::Config("grid must start at r = 0 with at least two nodes".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("grid nodes must be strictly increasing".into()));
        }
        let rmax = *nodes.last().unwrap();
        Ok(Self {
            r_lin: rmax,
            ratio: 1.0,
            nodes,
            dim,
        })
    }

    /// Same node pattern with every radius multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor > 0.0 && factor.is_finite(), "scale factor must be positive");
        Self {
            nodes: self.nodes.iter().map(|r| r * factor).collect(),
            dim: self.dim,
            r_lin: self.r_lin * factor,
            ratio: self.ratio,
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn rmax(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn r_lin(&self) -> f64 {
        self.r_lin
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn sphere_area(&self) -> f64 {
        sphere_area(self.dim)
    }

    /// Index `i` with `r_i ≤ r < r_{i+1}`, clamped to the last interval.
    fn interval(&self, r: f64) -> usize {
        let k = self.nodes.partition_point(|&x| x <= r);
        k.saturating_sub(1).min(self.nodes.len() - 2)
    }
}

/// Convenience constructor mirroring the grid options of the scenario files.
pub fn make_grid(rmax: f64, intervals: usize, r_lin: f64, dim: usize) -> Result<Arc<RadialGrid>> {
    RadialGrid::stretched(rmax, intervals, r_lin, dim).map(Arc::new)
}

/// Far-field model `coeff·r^{-exponent} + correction·r^{-exponent-2}` beyond the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tail {
    pub exponent: f64,
    pub coeff: f64,
    pub correction: f64,
}

impl Tail {
    pub fn power_law(exponent: f64, coeff: f64) -> Self {
        Self { exponent, coeff, correction: 0.0 }
    }

    pub fn value(&self, r: f64) -> f64 {
        self.coeff * r.powf(-self.exponent) + self.correction * r.powf(-self.exponent - 2.0)
    }

    /// `correction / coeff`, or zero for a vanishing leading coefficient.
    pub fn correction_ratio(&self) -> f64 {
        if self.coeff == 0.0 {
            0.0
        } else {
            self.correction / self.coeff
        }
    }

    fn scaled(&self, factor: f64) -> Self {
        Self {
            exponent: self.exponent,
            coeff: self.coeff * factor,
            correction: self.correction * factor,
        }
    }

    fn is_zero(&self) -> bool {
        self.coeff == 0.0 && self.correction == 0.0
    }
}

/// Signed tail of `a - b` beyond `rmax`, keeping the two leading orders.
///
/// Leading coefficients count as equal when their difference is below the
/// correction difference at `rmax`: seam matching leaves an error of that size.
fn tail_difference(a: Option<Tail>, b: Option<Tail>, rmax: f64) -> Option<Tail> {
    match (a, b) {
        (None, None) => None,
        (Some(t), None) => Some(t),
        (None, Some(t)) => Some(t.scaled(-1.0)),
        (Some(ta), Some(tb)) => {
            if (ta.exponent - tb.exponent).abs() > EXPONENT_EPS {
                let (slow, sign) = if ta.exponent < tb.exponent { (ta, 1.0) } else { (tb, -1.0) };
                return Some(Tail::power_law(slow.exponent, sign * slow.coeff));
            }
            let dc = ta.coeff - tb.coeff;
            let dd = ta.correction - tb.correction;
            let scale = ta.coeff.abs().max(tb.coeff.abs());
            if dc.abs() > COEFF_RTOL * scale && dc.abs() > dd.abs() / (rmax * rmax) {
                Some(Tail { exponent: ta.exponent, coeff: dc, correction: dd })
            } else if dd.abs() > COEFF_RTOL * ta.correction.abs().max(tb.correction.abs()) {
                // leading orders cancel: the difference decays two powers faster
                Some(Tail::power_law(ta.exponent + 2.0, dd))
            } else {
                None
            }
        }
    }
}

/// Tail of `|a - b|`.
fn abs_tail_difference(a: Option<Tail>, b: Option<Tail>, rmax: f64) -> Option<Tail> {
    tail_difference(a, b, rmax).map(|t| {
        let sign = if t.coeff != 0.0 { t.coeff.signum() } else { t.correction.signum() };
        t.scaled(sign)
    })
}

/// Result of a volume integral over `R^N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Integral {
    Finite(f64),
    /// The tail integrand does not decay faster than `r^{-N}`.
    Divergent,
}

impl Integral {
    pub fn value(self) -> Option<f64> {
        match self {
            Integral::Finite(v) => Some(v),
            Integral::Divergent => None,
        }
    }

    pub fn is_divergent(self) -> bool {
        matches!(self, Integral::Divergent)
    }

    pub fn expect_finite(self, what: &str) -> Result<f64> {
        self.value().ok_or_else(|| Error::Divergent(what.to_string()))
    }
}

/// Radial weight for volume integrals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weight {
    Unit,
    /// `(c_star / (k + r²))^power`.
    BarenblattPower { c_star: f64, k: f64, power: f64 },
}

impl Weight {
    pub fn value(&self, r: f64) -> f64 {
        match *self {
            Weight::Unit => 1.0,
            Weight::BarenblattPower { c_star, k, power } => (c_star / (k + r * r)).powf(power),
        }
    }

    /// Asymptotic form `a r^{-q} (1 + b r^{-2})`.
    fn asymptotic(&self) -> (f64, f64, f64) {
        match *self {
            Weight::Unit => (1.0, 0.0, 0.0),
            Weight::BarenblattPower { c_star, k, power } => (c_star.powf(power), 2.0 * power, -power * k),
        }
    }
}

/// `∫_{R}^{∞} tail(r)·weight(r) ω r^{N-1} dr`, or `None` when it diverges.
fn tail_integral(tail: &Tail, weight: &Weight, rmax: f64, dim: usize) -> Option<f64> {
    let n = dim as f64;
    let omega = sphere_area(dim);
    let (a, q, b) = weight.asymptotic();
    let terms = [
        (a * tail.coeff, tail.exponent + q),
        (a * (tail.correction + tail.coeff * b), tail.exponent + q + 2.0),
    ];
    let mut total = 0.0;
    for (coeff, e) in terms {
        if coeff == 0.0 {
            continue;
        }
        if e <= n + EXPONENT_EPS {
            return None;
        }
        total += omega * coeff * rmax.powf(n - e) / (e - n);
    }
    Some(total)
}

/// Trapezoid integral of signed samples plus the tail contribution.
pub fn integrate_samples(grid: &RadialGrid, values: &[f64], tail: Option<Tail>, weight: &Weight) -> Integral {
    let nodes = grid.nodes();
    let dim = grid.dim();
    let omega = grid.sphere_area();
    let g = |i: usize| values[i] * weight.value(nodes[i]) * omega * nodes[i].powi(dim as i32 - 1);
    let mut sum = 0.0;
    let mut g_prev = g(0);
    for i in 1..nodes.len() {
        let gi = g(i);
        sum += 0.5 * (nodes[i] - nodes[i - 1]) * (g_prev + gi);
        g_prev = gi;
    }
    match tail {
        Some(t) if !t.is_zero() => match tail_integral(&t, weight, grid.rmax(), dim) {
            Some(v) => Integral::Finite(sum + v),
            None => Integral::Divergent,
        },
        _ => Integral::Finite(sum),
    }
}

/// Nonnegative samples of a radial function on a grid plus its far field.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialField {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
    tail: Option<Tail>,
}

impl RadialField {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>, tail: Option<Tail>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Precondition(format!(
                "field has {} values for {} grid nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::Precondition(format!("field value {v} at node {i} is not a finite nonnegative number")));
        }
        if let Some(t) = tail {
            if !(t.coeff >= 0.0) || !(t.exponent > 0.0) {
                return Err(Error::Precondition(format!("invalid tail model {t:?}")));
            }
            let last = *values.last().unwrap();
            let seam = (last - t.value(grid.rmax())).abs();
            if seam > SEAM_RTOL * last + 1e-300 {
                return Err(Error::Precondition(format!(
                    "tail model misses the last node by {seam:e} (value {last:e})"
                )));
            }
        }
        Ok(Self { grid, values, tail })
    }

    /// Field whose tail `c r^{-p}(1 + ratio r^{-2})` passes exactly through the last node.
    ///
    /// The correction is dropped when it is not small at `Rmax`, where the
    /// two-term expansion stops being meaningful.
    pub fn with_matched_tail(grid: Arc<RadialGrid>, values: Vec<f64>, exponent: f64, correction_ratio: f64) -> Result<Self> {
        let rmax = grid.rmax();
        let correction_ratio = if correction_ratio.abs() < 0.5 * rmax * rmax { correction_ratio } else { 0.0 };
        let last = *values.last().ok_or_else(|| Error::Precondition("empty field".into()))?;
        let shape = rmax.powf(-exponent) * (1.0 + correction_ratio * rmax.powi(-2));
        let coeff = if shape > 0.0 { last / shape } else { 0.0 };
        let tail = Tail { exponent, coeff, correction: coeff * correction_ratio };
        Self::new(grid, values, Some(tail))
    }

    pub fn from_fn(grid: Arc<RadialGrid>, f: impl Fn(f64) -> f64, tail_exponent: Option<f64>) -> Result<Self> {
        let values: Vec<f64> = grid.nodes().iter().map(|&r| f(r)).collect();
        match tail_exponent {
            Some(p) => Self::with_matched_tail(grid, values, p, 0.0),
            None => Self::new(grid, values, None),
        }
    }

    pub fn zeros(grid: Arc<RadialGrid>) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n], tail: None }
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn tail(&self) -> Option<Tail> {
        self.tail
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Same values placed on the grid scaled by `radius_factor` and multiplied by `value_factor`.
    pub fn rescaled(&self, radius_factor: f64, value_factor: f64) -> Self {
        let grid = Arc::new(self.grid.scaled(radius_factor));
        let values = self.values.iter().map(|v| v * value_factor).collect();
        // c (λr)^{-p} + d (λr)^{-p-2} in the new radius
        let tail = self.tail.map(|t| Tail {
            exponent: t.exponent,
            coeff: t.coeff * value_factor * radius_factor.powf(t.exponent),
            correction: t.correction * value_factor * radius_factor.powf(t.exponent + 2.0),
        });
        Self { grid, values, tail }
    }

    pub fn same_grid(&self, other: &RadialField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.nodes == other.grid.nodes
    }

    fn check_same_grid(&self, other: &RadialField) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::Precondition("fields live on different grids".into()))
        }
    }

    /// Monotonicity-limited cubic Hermite slopes at every node.
    pub fn slopes(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| node_slope(self.grid.nodes(), &self.values, i)).collect()
    }

    pub fn interpolate(&self, r: f64) -> f64 {
        interpolate(self, r)
    }

    /// Values of this field at the nodes of `grid` (tail model carried over).
    pub fn resample(&self, grid: &Arc<RadialGrid>) -> Self {
        let slopes = self.slopes();
        let values = grid.nodes().iter().map(|&r| self.eval_with_slopes(&slopes, r)).collect();
        let mut out = Self { grid: grid.clone(), values, tail: None };
        if let Some(t) = self.tail {
            let values = std::mem::take(&mut out.values);
            return Self::with_matched_tail(grid.clone(), values, t.exponent, t.correction_ratio())
                .expect("resampled values are valid");
        }
        out
    }

    fn eval_with_slopes(&self, slopes: &[f64], r: f64) -> f64 {
        let nodes = self.grid.nodes();
        if r >= self.grid.rmax() {
            if r == self.grid.rmax() {
                return *self.values.last().unwrap();
            }
            return self.tail.map_or(0.0, |t| t.value(r));
        }
        let r = r.abs();
        let i = self.grid.interval(r);
        hermite(nodes[i], nodes[i + 1], self.values[i], self.values[i + 1], slopes[i], slopes[i + 1], r)
    }

    /// Write `r,value` rows preceded by `#`-comment metadata.
    pub fn write_csv<W: Write>(&self, mut w: W, extra: &[(&str, String)]) -> Result<()> {
        writeln!(w, "# dim: {}", self.grid.dim)?;
        writeln!(w, "# r_lin: {:e}", self.grid.r_lin)?;
        writeln!(w, "# ratio: {:e}", self.grid.ratio)?;
        match self.tail {
            Some(t) => {
                writeln!(w, "# tail_exponent: {:e}", t.exponent)?;
                writeln!(w, "# tail_coeff: {:e}", t.coeff)?;
                writeln!(w, "# tail_correction: {:e}", t.correction)?;
            }
            None => writeln!(w, "# tail: none")?,
        }
        for (k, v) in extra {
            writeln!(w, "# {k}: {v}")?;
        }
        writeln!(w, "r,value")?;
        for (r, v) in self.grid.nodes.iter().zip(&self.values) {
            writeln!(w, "{r:e},{v:e}")?;
        }
        Ok(())
    }

    /// Inverse of [`RadialField::write_csv`]; returns the field and all header metadata.
    pub fn read_csv<R: BufRead>(r: R) -> Result<(Self, BTreeMap<String, String>)> {
        let mut meta = BTreeMap::new();
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        let bad = |line: &str| Error::Io(format!("malformed field line: {line}"));
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.split_once(':') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if line == "r,value" {
                continue;
            }
            let (a, b) = line.split_once(',').ok_or_else(|| bad(line))?;
            nodes.push(a.trim().parse::<f64>().map_err(|_| bad(line))?);
            values.push(b.trim().parse::<f64>().map_err(|_| bad(line))?);
        }
        let num = |key: &str| -> Result<f64> {
            meta.get(key)
                .ok_or_else(|| Error::Io(format!("missing header `{key}`")))?
                .parse::<f64>()
                .map_err(|_| Error::Io(format!("bad header `{key}`")))
        };
        let dim = num("dim")? as usize;
        let mut grid = RadialGrid::from_nodes(nodes, dim)?;
        grid.r_lin = num("r_lin")?;
        grid.ratio = num("ratio")?;
        let tail = if meta.contains_key("tail_exponent") {
            Some(Tail {
                exponent: num("tail_exponent")?,
                coeff: num("tail_coeff")?,
                correction: num("tail_correction")?,
            })
        } else {
            None
        };
        Ok((Self::new(Arc::new(grid), values, tail)?, meta))
    }
}

fn hermite(x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64, x: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + t) * h * d0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * d1
}

/// Five-point slope at node `i`, limited so each interval stays monotone.
fn node_slope(nodes: &[f64], values: &[f64], i: usize) -> f64 {
    if i == 0 {
        return 0.0;
    }
    let width = 5.min(nodes.len());
    let (d, _) = stencil::radial_derivatives(nodes, values, i, width);
    let left = (values[i] - values[i - 1]) / (nodes[i] - nodes[i - 1]);
    let right = if i + 1 < nodes.len() {
        (values[i + 1] - values[i]) / (nodes[i + 1] - nodes[i])
    } else {
        left
    };
    if left * right <= 0.0 || d * left <= 0.0 {
        return 0.0;
    }
    let bound = 3.0 * left.abs().min(right.abs());
    d.signum() * d.abs().min(bound)
}

/// Monotone piecewise-cubic value at `r`; the tail model beyond the last node.
pub fn interpolate(f: &RadialField, r: f64) -> f64 {
    let nodes = f.grid.nodes();
    let r = r.abs();
    if r >= f.grid.rmax() {
        return f.eval_with_slopes(&[], r);
    }
    let i = f.grid.interval(r);
    if r == nodes[i] {
        return f.values[i];
    }
    let d0 = node_slope(nodes, &f.values, i);
    let d1 = node_slope(nodes, &f.values, i + 1);
    hermite(nodes[i], nodes[i + 1], f.values[i], f.values[i + 1], d0, d1, r)
}

/// `∫ f weight dx` over `R^N`.
pub fn volume_integral(f: &RadialField, weight: Option<&Weight>) -> Integral {
    integrate_samples(&f.grid, &f.values, f.tail, weight.unwrap_or(&Weight::Unit))
}

/// `∫ (f - g) dx` with the cancelling difference tail.
pub fn signed_difference_integral(f: &RadialField, g: &RadialField) -> Result<Integral> {
    f.check_same_grid(g)?;
    let diff: Vec<f64> = f.values.iter().zip(&g.values).map(|(a, b)| a - b).collect();
    Ok(integrate_samples(&f.grid, &diff, tail_difference(f.tail, g.tail, f.grid.rmax()), &Weight::Unit))
}

fn weighted_abs_difference(f: &RadialField, g: &RadialField, weight: &Weight) -> Result<Integral> {
    f.check_same_grid(g)?;
    let diff: Vec<f64> = f.values.iter().zip(&g.values).map(|(a, b)| (a - b).abs()).collect();
    Ok(integrate_samples(&f.grid, &diff, abs_tail_difference(f.tail, g.tail, f.grid.rmax()), weight))
}

/// `∫ |f - g| dx`; divergent when the tails differ at an order slower than `r^{-N}`.
pub fn l1_distance(f: &RadialField, g: &RadialField) -> Result<Integral> {
    weighted_abs_difference(f, g, &Weight::Unit)
}

/// The weight `B̃_{k2}^{α_w} = (C*/(k2 + r²))^{α_w/(1-m)}`.
pub fn barenblatt_weight(p: &crate::profiles::ProblemParams, k2: f64) -> Weight {
    Weight::BarenblattPower {
        c_star: p.c_star,
        k: k2,
        power: p.weight_alpha / (1.0 - p.m),
    }
}

/// `∫ |f - g| B̃_{k2}^{α_w} dx`.
pub fn weighted_l1_distance(f: &RadialField, g: &RadialField, p: &crate::profiles::ProblemParams, k2: f64) -> Result<Integral> {
    weighted_abs_difference(f, g, &barenblatt_weight(p, k2))
}

/// `max |f - g|` over the nodes and the tail region.
pub fn sup_distance(f: &RadialField, g: &RadialField) -> Result<f64> {
    f.check_same_grid(g)?;
    let nodes_max = f.values.iter().zip(&g.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let tail_max = tail_difference(f.tail, g.tail, f.grid.rmax()).map_or(0.0, |t| t.value(f.grid.rmax()).abs());
    Ok(nodes_max.max(tail_max))
}

/// Newtonian potential `Z` with `ΔZ = -f` for radial `f`:
/// `Z(r) = (1/ω_{N-1}) ∫_r^∞ ρ^{1-N} M(ρ) dρ`, `M(ρ) = ∫_{B_ρ} f`.
pub fn newtonian_potential(f: &RadialField) -> Result<RadialField> {
    let grid = f.grid.clone();
    let dim = grid.dim();
    if dim < 3 {
        return Err(Error::Precondition("Newtonian potential needs N ≥ 3".into()));
    }
    let total = volume_integral(f, None).expect_finite("Newtonian potential of a field with infinite mass")?;
    let nodes = grid.nodes();
    let n = dim as f64;
    let omega = grid.sphere_area();

    // enclosed mass at the nodes, same trapezoid rule as volume_integral
    let mut mass = vec![0.0; nodes.len()];
    let g = |i: usize| f.values[i] * omega * nodes[i].powi(dim as i32 - 1);
    for i in 1..nodes.len() {
        mass[i] = mass[i - 1] + 0.5 * (nodes[i] - nodes[i - 1]) * (g(i - 1) + g(i));
    }

    // ∫_R^∞ ρ^{1-N} M(ρ) dρ with M(ρ) = total - (mass still outside ρ)
    let rmax = grid.rmax();
    let mut outer = total * rmax.powf(2.0 - n) / (n - 2.0);
    if let Some(t) = f.tail {
        for (c, p) in [(t.coeff, t.exponent), (t.correction, t.exponent + 2.0)] {
            if c != 0.0 {
                outer -= omega * c * rmax.powf(2.0 - p) / ((p - n) * (p - 2.0));
            }
        }
    }

    // exact integrals of ρ^{1-N}(a + bρ) on each interval; M ∝ ρ^N on the first one
    let antideriv = |k: f64, rho: f64| -> f64 {
        // ∫ ρ^{k} dρ
        if (k + 1.0).abs() < 1e-12 {
            rho.ln()
        } else {
            rho.powf(k + 1.0) / (k + 1.0)
        }
    };
    let mut z = vec![0.0; nodes.len()];
    let mut acc = outer;
    z[nodes.len() - 1] = acc / omega;
    for i in (0..nodes.len() - 1).rev() {
        let (r0, r1) = (nodes[i], nodes[i + 1]);
        let piece = if i == 0 {
            mass[1] * r1.powf(2.0 - n) / 2.0
        } else {
            let b = (mass[i + 1] - mass[i]) / (r1 - r0);
            let a = mass[i] - b * r0;
            a * (antideriv(1.0 - n, r1) - antideriv(1.0 - n, r0)) + b * (antideriv(2.0 - n, r1) - antideriv(2.0 - n, r0))
        };
        acc += piece;
        z[i] = acc / omega;
    }
    for v in &mut z {
        *v = v.max(0.0);
    }
    RadialField::with_matched_tail(grid, z, n - 2.0, 0.0)
}

/// Least-squares slope of `log u` against `log r` over nodes with `r ≥ r_min`, negated.
pub fn fit_tail_exponent(f: &RadialField, r_min: f64) -> Result<f64> {
    let pts: Vec<(f64, f64)> = f
        .grid
        .nodes()
        .iter()
        .zip(&f.values)
        .filter(|(r, v)| **r >= r_min && **r > 0.0 && **v > 0.0)
        .map(|(r, v)| (r.ln(), v.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(Error::Precondition(format!(
            "tail fit needs at least 10 positive nodes above r = {r_min}, found {}",
            pts.len()
        )));
    }
    Ok(-least_squares_slope(&pts))
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_grid(dim: usize) -> Arc<RadialGrid> {
        make_grid(1000.0, 400, 5.0, dim).unwrap()
    }

    #[test]
    fn stretched_grid_layout() {
        let g = RadialGrid::stretched(1000.0, 400, 5.0, 3).unwrap();
        assert_eq!(g.len(), 401);
        assert_eq!(g.nodes()[100], 5.0);
        assert_eq!(g.rmax(), 1000.0);
        assert_relative_eq!(5.0 * g.ratio().powi(300), 1000.0, max_relative = 1e-12);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        assert!(g.r_lin() >= 10.0 * g.nodes()[1]);
        assert!(RadialGrid::stretched(10.0, 64, 1.0, 3).is_ok());
        assert!(RadialGrid::stretched(1.0, 64, 5.0, 3).is_err());
        assert!(RadialGrid::stretched(1000.0, 63, 5.0, 3).is_err());
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area(2), 2.0 * std::f64::consts::PI, max_relative = 1e-13);
        assert_relative_eq!(sphere_area(3), 4.0 * std::f64::consts::PI, max_relative = 1e-13);
        assert_relative_eq!(sphere_area(4), 2.0 * std::f64::consts::PI.powi(2), max_relative = 1e-13);
        assert_relative_eq!(sphere_area(6), std::f64::consts::PI.powi(3), max_relative = 1e-13);
    }

    #[test]
    fn volume_integral_with_exact_tail() {
        // ∫ r²(1+r²)^{-5/2} dr = 1/3 over [0, ∞)
        let g = default_grid(3);
        let f = RadialField::from_fn(g, |r| (1.0 + r * r).powf(-2.5), Some(5.0)).unwrap();
        let v = volume_integral(&f, None).value().unwrap();
        assert_relative_eq!(v, 4.0 * std::f64::consts::PI / 3.0, max_relative = 2e-4);
    }

    #[test]
    fn zero_field_integrates_to_zero() {
        let f = RadialField::zeros(default_grid(3));
        assert_eq!(volume_integral(&f, None), Integral::Finite(0.0));
    }

    #[test]
    fn slow_tail_is_divergent() {
        let g = default_grid(3);
        let f = RadialField::from_fn(g, |r| (1.0 + r * r).powf(-1.25), Some(2.5)).unwrap();
        assert!(volume_integral(&f, None).is_divergent());
    }

    #[test]
    fn rejects_negative_values_and_broken_seam() {
        let g = default_grid(3);
        let mut vals = vec![1.0; g.len()];
        vals[3] = -1e-3;
        assert!(RadialField::new(g.clone(), vals, None).is_err());
        let vals = vec![1.0; g.len()];
        assert!(RadialField::new(g, vals, Some(Tail::power_law(2.0, 1.0))).is_err());
    }

    #[test]
    fn interpolation_hits_nodes_and_tail() {
        let g = default_grid(3);
        let f = RadialField::from_fn(g.clone(), |r| (1.0 + r * r).powf(-1.25), Some(2.5)).unwrap();
        for i in [0, 7, 100, 250, 400] {
            assert_eq!(f.interpolate(g.nodes()[i]), f.values()[i]);
        }
        let t = f.tail().unwrap();
        assert_relative_eq!(f.interpolate(5000.0), t.value(5000.0), max_relative = 1e-15);
    }

    #[test]
    fn interpolation_fourth_order_on_power_law() {
        // midpoints of a smooth decaying profile on a uniform grid: error ratio ≈ 16 per halving
        let f = |r: f64| (1.0 + r * r).powf(-1.5);
        let err = |n: usize| {
            let g = make_grid(40.0, n, 10.0, 3).unwrap();
            let field = RadialField::from_fn(g.clone(), f, Some(3.0)).unwrap();
            let nodes = g.nodes();
            (0..n / 4)
                .map(|i| 0.5 * (nodes[i] + nodes[i + 1]))
                .filter(|&mid| (2.0..9.0).contains(&mid))
                .map(|mid| (field.interpolate(mid) - f(mid)).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(256), err(512));
        let ratio = e1 / e2;
        assert!(ratio > 12.0, "ratio {ratio} ({e1:e} -> {e2:e})");
    }

    #[test]
    fn interpolation_never_undershoots_zero() {
        let g = make_grid(10.0, 64, 2.0, 3).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|&r| if (r - 1.0).abs() < 0.2 { 1.0 } else { 0.0 }).collect();
        let f = RadialField::new(g.clone(), vals, None).unwrap();
        for k in 0..2000 {
            let r = 10.0 * k as f64 / 2000.0;
            let v = f.interpolate(r);
            assert!(v >= 0.0 && v <= 1.0, "overshoot {v} at {r}");
        }
    }

    #[test]
    fn newtonian_potential_of_ball() {
        // unit ball in N = 3: Z(r) = (4π/3)/(4π r) outside
        let g = Arc::new(RadialGrid::stretched(100.0, 1024, 2.0, 3).unwrap());
        // node at r = 1 takes the midpoint value so the trapezoid mass is exact
        let indicator = |r: f64| match r.partial_cmp(&1.0).unwrap() {
            std::cmp::Ordering::Less => 1.0,
            std::cmp::Ordering::Equal => 0.5,
            std::cmp::Ordering::Greater => 0.0,
        };
        let f = RadialField::from_fn(g.clone(), indicator, None).unwrap();
        let z = newtonian_potential(&f).unwrap();
        assert_relative_eq!(z.interpolate(2.0), 1.0 / 6.0, max_relative = 2e-3);
        // inside: Z(0) = 1/2
        assert_relative_eq!(z.values()[0], 0.5, max_relative = 2e-3);
    }

    #[test]
    fn newtonian_potential_of_zero() {
        let z = newtonian_potential(&RadialField::zeros(default_grid(3))).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn newtonian_potential_decay_bound_and_laplacian() {
        let dim = 4;
        let g = default_grid(dim);
        let f = RadialField::from_fn(g.clone(), |r| (-r * r).exp(), None).unwrap();
        let z = newtonian_potential(&f).unwrap();
        let mass = volume_integral(&f, None).value().unwrap();
        let omega = sphere_area(dim);
        for (&r, &v) in g.nodes().iter().zip(z.values()).skip(1) {
            let bound = mass / (omega * (dim as f64 - 2.0) * r.powi(dim as i32 - 2));
            assert!(v <= bound * (1.0 + 1e-12), "r={r} Z={v} bound={bound}");
        }
        // -ΔZ ≈ f on the uniform core
        let nodes = g.nodes();
        for i in [10, 30, 60] {
            let (d1, d2) = stencil::radial_derivatives(nodes, z.values(), i, 3);
            let lap = crate::profiles::radial_laplacian(d1, d2, dim, nodes[i]);
            assert!((lap + f.values()[i]).abs() < 5e-3, "i={i} lap={lap} f={}", f.values()[i]);
        }
    }

    #[test]
    fn tail_fit_exact_and_barenblatt() {
        let g = default_grid(3);
        let f = RadialField::from_fn(g.clone(), |r| 3.0 * r.max(1e-3).powf(-2.7), None).unwrap();
        assert_relative_eq!(fit_tail_exponent(&f, 10.0).unwrap(), 2.7, max_relative = 1e-6);
        let p = crate::profiles::derive_params(3, 0.2, 1.0).unwrap();
        let b = crate::profiles::RescaledBarenblatt::new(&p, 1.0).unwrap().sample(&g);
        let fit = fit_tail_exponent(&b, 50.0).unwrap();
        assert!((fit / 2.5 - 1.0).abs() < 0.01, "{fit}");
        assert!(fit_tail_exponent(&b, 999.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let g = default_grid(5);
        let f = RadialField::from_fn(g, |r| (2.0 + r * r).powf(-1.7), Some(3.4)).unwrap();
        let mut buf = Vec::new();
        f.write_csv(&mut buf, &[("theta", "0.25".to_string())]).unwrap();
        let (back, meta) = RadialField::read_csv(buf.as_slice()).unwrap();
        assert_eq!(meta["theta"], "0.25");
        assert_eq!(back.grid().nodes(), f.grid().nodes());
        assert_eq!(back.values(), f.values());
        assert_eq!(back.tail(), f.tail());
    }
}
