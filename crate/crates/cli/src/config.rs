//! Scenario configuration: TOML with the sections `[scenario]`, `[grid]`,
//! `[solver]` and `[tolerances]`, plus `section.key=value` overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use fastdiff_core::diagnostics::Tolerances;
use fastdiff_core::{derive_params, ProblemParams, Regime};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    ThmIntegrable,
    ThmNonintegrable,
    ExampleLonger,
    Yamabe,
    AppendixOnesided,
    BarenblattSelftest,
}

impl ScenarioKind {
    pub fn id(self) -> &'static str {
        match self {
            ScenarioKind::ThmIntegrable => "thm-integrable",
            ScenarioKind::ThmNonintegrable => "thm-nonintegrable",
            ScenarioKind::ExampleLonger => "example-longer",
            ScenarioKind::Yamabe => "yamabe",
            ScenarioKind::AppendixOnesided => "appendix-onesided",
            ScenarioKind::BarenblattSelftest => "barenblatt-selftest",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub rmax: f64,
    pub intervals: usize,
    pub r_lin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub dt_init: f64,
    pub dt_max: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub adapt_target: f64,
    /// A run counts as extinct once `max u` drops below this fraction of `max u0`.
    pub extinction_threshold: f64,
    /// Fixed step, as a fraction of `T`, of runs compared pointwise with each other.
    pub paired_dt: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            dt_init: 1e-6,
            dt_max: 1e-2,
            newton_tol: 1e-10,
            newton_max_iter: 30,
            adapt_target: 2e-3,
            extinction_threshold: 1e-10,
            paired_dt: 2e-4,
        }
    }
}

/// Scenario-level tolerances on top of the diagnostics defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioTolerances {
    pub find_k0_rtol: f64,
    /// Control distances must end at least this many times above the converged run.
    pub control_factor: f64,
    pub solver_sup_rtol: f64,
    pub extinction_rtol: f64,
    pub dt_ratio_lo: f64,
    pub dt_ratio_hi: f64,
    pub pde_residual: f64,
    pub stationary_residual: f64,
    pub rescaling_rtol: f64,
    /// Extinction must be delayed at least by this fraction of `T`.
    pub longer_margin: f64,
    pub tail_rtol: f64,
    /// Post-extinction tail fit must reach this fraction of `(N-2)/m`.
    pub fast_tail_fraction: f64,
    pub theta_abs: f64,
    pub profile_residual: f64,
    pub profile_match_rtol: f64,
}

impl Default for ScenarioTolerances {
    fn default() -> Self {
        Self {
            find_k0_rtol: 1e-3,
            control_factor: 5.0,
            solver_sup_rtol: 0.02,
            extinction_rtol: 0.02,
            dt_ratio_lo: 1.7,
            dt_ratio_hi: 2.3,
            pde_residual: 1e-8,
            stationary_residual: 1e-6,
            rescaling_rtol: 1e-12,
            longer_margin: 0.05,
            tail_rtol: 0.05,
            fast_tail_fraction: 0.9,
            theta_abs: 1e-4,
            profile_residual: 1e-8,
            profile_match_rtol: 0.05,
        }
    }
}

/// A validated scenario with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub params: ProblemParams,
    /// Lower trapping envelope `B_{k1}`.
    pub k1: f64,
    /// Upper trapping envelope `B_{k2}`.
    pub k2: f64,
    /// Target profile `B̃_{k0}`.
    pub k0: f64,
    /// Perturbation amplitude of the initial data.
    pub amplitude: f64,
    pub tau_start: f64,
    pub tau_span: f64,
    pub tau_spacing: f64,
    /// Extinction time of the bump alone, as a multiple of `T`.
    pub longer_factor: f64,
    pub grid: GridSettings,
    pub solver: SolverSettings,
    pub diagnostics: Tolerances,
    pub tolerances: ScenarioTolerances,
    pub out_dir: Option<PathBuf>,
}

const SCENARIO_KEYS: &[&str] = &[
    "kind", "dim", "m", "horizon", "k1", "k2", "k0", "amplitude", "tau_start", "tau_span", "tau_spacing", "longer_factor", "out_dir",
];
const GRID_KEYS: &[&str] = &["rmax", "intervals", "r_lin"];
const SOLVER_KEYS: &[&str] = &["dt_init", "dt_max", "newton_tol", "newton_max_iter", "adapt_target", "extinction_threshold", "paired_dt"];
const DIAGNOSTIC_KEYS: &[&str] = &[
    "trapped",
    "contraction_slack",
    "aronson_benilan_slack",
    "potential_slack",
    "claim_i_rtol",
    "laplacian_sign",
    "convergence_ratio",
    "convergence_window",
    "monotone_slack",
];
const SCENARIO_TOL_KEYS: &[&str] = &[
    "find_k0_rtol",
    "control_factor",
    "solver_sup_rtol",
    "extinction_rtol",
    "dt_ratio_lo",
    "dt_ratio_hi",
    "pde_residual",
    "stationary_residual",
    "rescaling_rtol",
    "longer_margin",
    "tail_rtol",
    "fast_tail_fraction",
    "theta_abs",
    "profile_residual",
    "profile_match_rtol",
];

fn section_keys(section: &str) -> Option<Vec<&'static str>> {
    match section {
        "scenario" => Some(SCENARIO_KEYS.to_vec()),
        "grid" => Some(GRID_KEYS.to_vec()),
        "solver" => Some(SOLVER_KEYS.to_vec()),
        "tolerances" => Some(DIAGNOSTIC_KEYS.iter().chain(SCENARIO_TOL_KEYS).copied().collect()),
        _ => None,
    }
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Reject unknown sections and keys, naming the full key path.
fn check_keys(table: &Table) -> Result<(), CliError> {
    for (section, value) in table {
        let known = section_keys(section).ok_or_else(|| config_error(format!("unknown key `{section}`")))?;
        let inner = value.as_table().ok_or_else(|| config_error(format!("`{section}` must be a table")))?;
        for key in inner.keys() {
            if !known.contains(&key.as_str()) {
                return Err(config_error(format!("unknown key `{section}.{key}`")));
            }
        }
    }
    Ok(())
}

/// Apply `section.key=value`; the value is read as TOML, or as a string if that fails.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| config_error(format!("override `{assignment}` is not key=value")))?;
    let (section, key) = path
        .trim()
        .split_once('.')
        .ok_or_else(|| config_error(format!("override key `{path}` must be section.key")))?;
    let value = match toml::from_str::<Table>(&format!("v = {}", raw.trim())) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.trim().to_string()),
    };
    let entry = table.entry(section.to_string()).or_insert_with(|| Value::Table(Table::new()));
    let inner = entry.as_table_mut().ok_or_else(|| config_error(format!("`{section}` must be a table")))?;
    inner.insert(key.to_string(), value);
    Ok(())
}

fn get_f64(t: &Table, section: &str, key: &str) -> Result<Option<f64>, CliError> {
    match t.get(key) {
        None => Ok(None),
        Some(Value::Float(v)) => Ok(Some(*v)),
        Some(Value::Integer(v)) => Ok(Some(*v as f64)),
        Some(other) => Err(config_error(format!("`{section}.{key}` must be a number, got {other}"))),
    }
}

fn get_usize(t: &Table, section: &str, key: &str) -> Result<Option<usize>, CliError> {
    match t.get(key) {
        None => Ok(None),
        Some(Value::Integer(v)) if *v >= 0 => Ok(Some(*v as usize)),
        Some(other) => Err(config_error(format!("`{section}.{key}` must be a nonnegative integer, got {other}"))),
    }
}

fn sub_table<'a>(table: &'a Table, name: &str) -> &'a Table {
    static EMPTY: std::sync::OnceLock<Table> = std::sync::OnceLock::new();
    table.get(name).and_then(Value::as_table).unwrap_or_else(|| EMPTY.get_or_init(Table::new))
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(config_error(format!("`{name}` must be positive, got {v}")))
    }
}

struct Defaults {
    dim: usize,
    m: f64,
    k1: f64,
    k2: f64,
    k0: f64,
    amplitude: f64,
    tau_span: f64,
    tau_spacing: f64,
    adapt_target: f64,
    grid: GridSettings,
}

fn defaults(kind: ScenarioKind) -> Defaults {
    match kind {
        ScenarioKind::ThmIntegrable => Defaults {
            dim: 3,
            m: 0.2,
            k1: 4.0,
            k2: 1.0,
            k0: 2.0,
            amplitude: 0.2,
            tau_span: 3.0,
            tau_spacing: 0.05,
            adapt_target: 2e-3,
            grid: GridSettings { rmax: 1e6, intervals: 1600, r_lin: 5.0 },
        },
        ScenarioKind::ThmNonintegrable => Defaults {
            dim: 6,
            m: 0.4,
            k1: 1.0,
            k2: 0.8,
            k0: 1.0,
            amplitude: 0.2,
            tau_span: 3.0,
            tau_spacing: 0.05,
            adapt_target: 5e-4,
            grid: GridSettings { rmax: 1e4, intervals: 1600, r_lin: 10.0 },
        },
        ScenarioKind::ExampleLonger | ScenarioKind::Yamabe => Defaults {
            dim: 3,
            m: 0.2,
            k1: 1.0,
            k2: 1.0,
            k0: 1.0,
            amplitude: 0.0,
            tau_span: 3.0,
            tau_spacing: 0.25,
            adapt_target: 2e-3,
            grid: GridSettings { rmax: 1e4, intervals: 1200, r_lin: 5.0 },
        },
        ScenarioKind::AppendixOnesided => Defaults {
            dim: 6,
            m: 0.4,
            k1: 1.0,
            k2: 1.0,
            k0: 1.0,
            amplitude: 0.3,
            tau_span: 8.0,
            tau_spacing: 0.25,
            adapt_target: 2e-3,
            grid: GridSettings { rmax: 1e4, intervals: 800, r_lin: 5.0 },
        },
        ScenarioKind::BarenblattSelftest => Defaults {
            dim: 3,
            m: 0.2,
            k1: 1.0,
            k2: 1.0,
            k0: 1.0,
            amplitude: 0.0,
            tau_span: 3.0,
            tau_spacing: 0.25,
            adapt_target: 2e-3,
            grid: GridSettings { rmax: 1000.0, intervals: 400, r_lin: 5.0 },
        },
    }
}

/// Parse and validate a configuration, applying `overrides` first.
pub fn parse_config_with(text: &str, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let mut table: Table = toml::from_str(text).map_err(|e| config_error(format!("invalid TOML: {}", e.message())))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    check_keys(&table)?;

    let sc = sub_table(&table, "scenario");
    let kind: ScenarioKind = match sc.get("kind") {
        Some(v) => v.clone().try_into().map_err(|_| config_error(format!("`scenario.kind`: unknown scenario {v}")))?,
        None => return Err(config_error("missing key `scenario.kind`")),
    };
    let d = defaults(kind);
    let dim = get_usize(sc, "scenario", "dim")?.unwrap_or(d.dim);
    let m = get_f64(sc, "scenario", "m")?.unwrap_or(d.m);
    let horizon = positive("scenario.horizon", get_f64(sc, "scenario", "horizon")?.unwrap_or(1.0))?;
    let params = derive_params(dim, m, horizon).map_err(|e| config_error(format!("scenario parameters: {e}")))?;
    if !params.in_range() {
        return Err(config_error(format!("regime: m = {m} is out of range for N = {dim}")));
    }
    match kind {
        ScenarioKind::ThmIntegrable if params.regime != Regime::Integrable => {
            return Err(config_error(format!("regime: thm-integrable needs (N-4)/(N-2) < m < (N-2)/N, got N = {dim}, m = {m}")));
        }
        ScenarioKind::ThmNonintegrable if params.regime != Regime::NonIntegrable => {
            return Err(config_error(format!("regime: thm-nonintegrable needs N > 4 and m ≤ (N-4)/(N-2), got N = {dim}, m = {m}")));
        }
        ScenarioKind::AppendixOnesided if dim < 3 => {
            return Err(config_error("regime: appendix-onesided needs N ≥ 3"));
        }
        ScenarioKind::Yamabe if !params.is_yamabe => {
            return Err(config_error(format!("regime: yamabe needs m = (N-2)/(N+2), got N = {dim}, m = {m}")));
        }
        ScenarioKind::ExampleLonger | ScenarioKind::Yamabe if dim < 3 => {
            return Err(config_error("regime: example-longer needs N ≥ 3"));
        }
        _ => {}
    }

    let k1 = positive("scenario.k1", get_f64(sc, "scenario", "k1")?.unwrap_or(d.k1))?;
    let k2 = positive("scenario.k2", get_f64(sc, "scenario", "k2")?.unwrap_or(d.k2))?;
    let k0 = positive("scenario.k0", get_f64(sc, "scenario", "k0")?.unwrap_or(d.k0))?;
    if k1 < k2 {
        return Err(config_error(format!("`scenario.k1` must be at least `scenario.k2`, got {k1} < {k2}")));
    }
    if !(k2..=k1).contains(&k0) {
        return Err(config_error(format!("`scenario.k0` = {k0} must lie in [k2, k1] = [{k2}, {k1}]")));
    }
    let amplitude = get_f64(sc, "scenario", "amplitude")?.unwrap_or(d.amplitude);
    if !(amplitude.abs() < 1.0) {
        return Err(config_error(format!("`scenario.amplitude` must lie in (-1, 1), got {amplitude}")));
    }
    let tau_start = get_f64(sc, "scenario", "tau_start")?.unwrap_or(-horizon.ln());
    if tau_start < -horizon.ln() {
        return Err(config_error(format!("`scenario.tau_start` must be at least -log T = {}", -horizon.ln())));
    }
    let tau_span = positive("scenario.tau_span", get_f64(sc, "scenario", "tau_span")?.unwrap_or(d.tau_span))?;
    let tau_spacing = positive("scenario.tau_spacing", get_f64(sc, "scenario", "tau_spacing")?.unwrap_or(d.tau_spacing))?;
    let longer_factor = get_f64(sc, "scenario", "longer_factor")?.unwrap_or(1.5);
    if !(longer_factor > 1.0) {
        return Err(config_error(format!("`scenario.longer_factor` must exceed 1, got {longer_factor}")));
    }
    let out_dir = match sc.get("out_dir") {
        None => None,
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(other) => return Err(config_error(format!("`scenario.out_dir` must be a string, got {other}"))),
    };

    let gt = sub_table(&table, "grid");
    let grid = GridSettings {
        rmax: positive("grid.rmax", get_f64(gt, "grid", "rmax")?.unwrap_or(d.grid.rmax))?,
        intervals: get_usize(gt, "grid", "intervals")?.unwrap_or(d.grid.intervals),
        r_lin: positive("grid.r_lin", get_f64(gt, "grid", "r_lin")?.unwrap_or(d.grid.r_lin))?,
    };
    if grid.intervals < 64 {
        return Err(config_error(format!("`grid.intervals` must be at least 64, got {}", grid.intervals)));
    }
    if grid.r_lin >= grid.rmax {
        return Err(config_error(format!("`grid.r_lin` = {} must be below `grid.rmax` = {}", grid.r_lin, grid.rmax)));
    }

    let st = sub_table(&table, "solver");
    let sd = SolverSettings::default();
    let solver = SolverSettings {
        dt_init: positive("solver.dt_init", get_f64(st, "solver", "dt_init")?.unwrap_or(sd.dt_init))?,
        dt_max: positive("solver.dt_max", get_f64(st, "solver", "dt_max")?.unwrap_or(sd.dt_max))?,
        newton_tol: positive("solver.newton_tol", get_f64(st, "solver", "newton_tol")?.unwrap_or(sd.newton_tol))?,
        newton_max_iter: get_usize(st, "solver", "newton_max_iter")?.unwrap_or(sd.newton_max_iter),
        adapt_target: positive("solver.adapt_target", get_f64(st, "solver", "adapt_target")?.unwrap_or(d.adapt_target))?,
        extinction_threshold: positive(
            "solver.extinction_threshold",
            get_f64(st, "solver", "extinction_threshold")?.unwrap_or(sd.extinction_threshold),
        )?,
        paired_dt: positive("solver.paired_dt", get_f64(st, "solver", "paired_dt")?.unwrap_or(sd.paired_dt))?,
    };
    if solver.adapt_target > 0.5 {
        return Err(config_error(format!("`solver.adapt_target` must be at most 0.5, got {}", solver.adapt_target)));
    }
    if solver.newton_max_iter == 0 {
        return Err(config_error("`solver.newton_max_iter` must be positive"));
    }

    let tt = sub_table(&table, "tolerances");
    let pick = |keys: &[&str]| -> Table { tt.iter().filter(|(k, _)| keys.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect() };
    let diagnostics: Tolerances = Value::Table(pick(DIAGNOSTIC_KEYS))
        .try_into()
        .map_err(|e: toml::de::Error| config_error(format!("tolerances: {}", e.message())))?;
    let tolerances: ScenarioTolerances = Value::Table(pick(SCENARIO_TOL_KEYS))
        .try_into()
        .map_err(|e: toml::de::Error| config_error(format!("tolerances: {}", e.message())))?;

    Ok(ScenarioConfig {
        kind,
        params,
        k1,
        k2,
        k0,
        amplitude,
        tau_start,
        tau_span,
        tau_spacing,
        longer_factor,
        grid,
        solver,
        diagnostics,
        tolerances,
        out_dir,
    })
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    parse_config_with(text, &[])
}

/// Defaults of a scenario, as if the file named only its kind.
pub fn default_config(kind: ScenarioKind) -> ScenarioConfig {
    parse_config(&format!("[scenario]\nkind = \"{}\"\n", kind.id())).expect("defaults are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_integrable_config() {
        let c = parse_config("[scenario]\nkind = \"thm-integrable\"\ndim = 3\nm = 0.2\nhorizon = 1.0\nk1 = 4\nk2 = 1\n").unwrap();
        assert_eq!(c.kind, ScenarioKind::ThmIntegrable);
        assert_eq!((c.k1, c.k2, c.k0), (4.0, 1.0, 2.0));
        assert_eq!(c.params.regime, Regime::Integrable);
        assert_eq!(c.tau_start, 0.0);
    }

    #[test]
    fn nonintegrable_in_three_dimensions_is_a_regime_error() {
        let e = parse_config("[scenario]\nkind = \"thm-nonintegrable\"\ndim = 3\nm = 0.2\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("regime"), "{e}");
    }

    #[test]
    fn unknown_keys_name_their_path() {
        let e = parse_config("[scenario]\nkind = \"yamabe\"\n[grid]\nrmaxx = 3\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("grid.rmaxx"), "{e}");
        let e = parse_config("[scenario]\nkind = \"yamabe\"\n[extra]\na = 1\n").unwrap_err();
        assert!(e.to_string().contains("extra"), "{e}");
        let e = parse_config_with("[scenario]\nkind = \"yamabe\"\n", &["tolerances.nope=1".into()]).unwrap_err();
        assert!(e.to_string().contains("tolerances.nope"), "{e}");
    }

    #[test]
    fn overrides_replace_values() {
        let c = parse_config_with(
            "[scenario]\nkind = \"thm-integrable\"\n[grid]\nintervals = 400\n",
            &["grid.intervals=800".into(), "tolerances.monotone_slack=0.01".into(), "scenario.out_dir=/tmp/x".into()],
        )
        .unwrap();
        assert_eq!(c.grid.intervals, 800);
        assert_eq!(c.diagnostics.monotone_slack, 0.01);
        assert_eq!(c.out_dir, Some(PathBuf::from("/tmp/x")));
    }

    #[test]
    fn invalid_ranges_are_config_errors() {
        for text in [
            "[scenario]\nkind = \"thm-integrable\"\nk1 = 0.5\n",
            "[scenario]\nkind = \"thm-integrable\"\n[grid]\nintervals = 10\n",
            "[scenario]\nkind = \"thm-integrable\"\n[solver]\nadapt_target = 0.9\n",
            "[scenario]\nkind = \"yamabe\"\nm = 0.3\n",
            "[scenario]\nkind = \"nope\"\n",
            "[grid]\nrmax = 10\n",
            "not toml",
        ] {
            assert_eq!(parse_config(text).unwrap_err().exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn every_scenario_has_valid_defaults() {
        for kind in [
            ScenarioKind::ThmIntegrable,
            ScenarioKind::ThmNonintegrable,
            ScenarioKind::ExampleLonger,
            ScenarioKind::Yamabe,
            ScenarioKind::AppendixOnesided,
            ScenarioKind::BarenblattSelftest,
        ] {
            assert_eq!(default_config(kind).kind, kind);
        }
    }
}
