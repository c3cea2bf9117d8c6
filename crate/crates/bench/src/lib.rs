//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use fastdiff_core::grid::make_grid;
use fastdiff_core::solver::{init_state, BoundaryMode, SolverConfig, SolverState, StopRule};
use fastdiff_core::{derive_params, Barenblatt, ProblemParams, RadialField, RadialGrid};

pub struct Fixture {
    pub params: ProblemParams,
    pub grid: Arc<RadialGrid>,
    pub field: RadialField,
    pub config: SolverConfig,
}

/// Barenblatt data with `k = 1` for `N = 3`, `m = 0.2` on `intervals` cells.
pub fn barenblatt_fixture(intervals: usize) -> Fixture {
    let params = derive_params(3, 0.2, 1.0).expect("valid parameters");
    let grid = make_grid(1e4, intervals, 5.0, 3).expect("valid grid");
    let b = Barenblatt::new(1.0, 1.0).expect("valid profile");
    let field = b.sample(&params, &grid, 0.0);
    let config = SolverConfig::new(params, BoundaryMode::DirichletAnalytic(b), StopRule::AtTime(0.5));
    Fixture { params, grid, field, config }
}

impl Fixture {
    pub fn state(&self) -> SolverState {
        init_state(self.field.clone(), &self.config).expect("consistent initial data")
    }
}
