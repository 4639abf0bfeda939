//! The epsilon sweep: one homogenized solve, one oscillatory solve per scale, and
//! the relative errors between them on the macroscopic grid.

use std::time::Instant;

use crate::effective::{tabulate_q, EffectiveFluxTable, MidFluxCache};
use crate::error::{Error, Result};
use crate::grid::{restrict, DomainGrid, Field, Mesh};
use crate::harness::config::{ExperimentConfig, QMode};
use crate::harness::report::{relative, space_time_l2, space_time_luxemburg, ReportRow};
use crate::operators::FluxOperator;
use crate::orlicz::NFunction;
use crate::pde::{fine_grid_n, fine_solve, macro_solve, DirectLaw, SolutionHistory, TableLaw};

/// The homogenized solution and the table that produced it, if any.
#[derive(Clone, Debug)]
pub struct MacroRun {
    pub history: SolutionHistory,
    pub table: Option<EffectiveFluxTable>,
    pub runtime_s: f64,
}

#[derive(Clone, Debug)]
pub struct FineRun {
    pub epsilon: f64,
    pub history: SolutionHistory,
    pub runtime_s: f64,
}

#[derive(Clone, Debug)]
pub struct ConvergenceStudy {
    pub rows: Vec<ReportRow>,
    pub macro_run: MacroRun,
    pub fine_runs: Vec<FineRun>,
}

/// Tabulates `q` on the configured box.
pub fn build_table(cfg: &ExperimentConfig, op: &FluxOperator, cache: &MidFluxCache) -> Result<EffectiveFluxTable> {
    tabulate_q(op, cfg.table.half_width, cfg.n_xi(), &cfg.cell_grids()?, &cfg.effective_params(), cache)
}

/// Solves the homogenized problem, through the table or by direct evaluation of `q`.
pub fn run_macro(cfg: &ExperimentConfig) -> Result<MacroRun> {
    let op = cfg.operator()?;
    let (grid, time) = (cfg.domain_grid()?, cfg.time_grid()?);
    let source = cfg.source();
    let opts = cfg.newton();
    let cache = MidFluxCache::new();
    let start = Instant::now();
    let (history, table) = match cfg.q_mode {
        QMode::Table => {
            let table = build_table(cfg, &op, &cache)?;
            let h = macro_solve(&grid, &time, &TableLaw { table: &table }, &source, &opts)?;
            (h, Some(table))
        }
        QMode::Direct => {
            let law = DirectLaw::new(&op, cfg.cell_grids()?, cfg.effective_params(), &cache);
            (macro_solve(&grid, &time, &law, &source, &opts)?, None)
        }
    };
    log::info!(
        "macro solve: n = {}, M = {}, cache {} entries ({} hits)",
        grid.n(),
        time.steps(),
        cache.len(),
        cache.hits()
    );
    Ok(MacroRun {
        history,
        table,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Oscillatory solve on the coarsest admissible refinement of the macroscopic grid.
pub fn run_fine(cfg: &ExperimentConfig, op: &FluxOperator, eps: f64) -> Result<FineRun> {
    let start = Instant::now();
    let grid = DomainGrid::new(cfg.grid.d, fine_grid_n(cfg.grid.n, eps))?;
    let history = fine_solve(&grid, &cfg.time_grid()?, op, eps, &cfg.source(), &cfg.newton())
        .map_err(|e| Error::Run { epsilon: eps, source: Box::new(e) })?;
    log::info!("fine solve: eps = {eps}, n = {}", grid.n());
    Ok(FineRun {
        epsilon: eps,
        history,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Relative `L^2(Q)` and Luxemburg errors of a fine run against the homogenized one,
/// measured at the macroscopic nodes. When the reference norm vanishes the
/// absolute error is reported.
pub fn compare(macro_hist: &SolutionHistory, fine: &SolutionHistory, nf: &NFunction) -> Result<(f64, f64)> {
    let grid = &macro_hist.grid;
    let time = &macro_hist.time;
    if fine.time != *time {
        return Err(Error::Config("fine and macro runs use different time grids".into()));
    }
    let diff: Vec<Field> = macro_hist
        .states
        .iter()
        .zip(&fine.states)
        .map(|(u0, ue)| {
            let r = restrict(&fine.grid, ue, grid)?;
            Ok(Field {
                values: r.values.iter().zip(&u0.values).map(|(a, b)| a - b).collect(),
            })
        })
        .collect::<Result<_>>()?;
    let l2 = relative(space_time_l2(grid, time, &diff)?, space_time_l2(grid, time, &macro_hist.states)?);
    let lux = relative(
        space_time_luxemburg(grid, time, &diff, nf)?,
        space_time_luxemburg(grid, time, &macro_hist.states, nf)?,
    );
    Ok((l2, lux))
}

/// Runs the full sweep over the configured scales.
pub fn run_convergence(cfg: &ExperimentConfig) -> Result<ConvergenceStudy> {
    cfg.validate()?;
    let op = cfg.operator()?;
    let nf = cfg.nfunction()?;
    let macro_run = run_macro(cfg)?;
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    let mut fine_runs = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        let fine = run_fine(cfg, &op, eps)?;
        let (rel_l2, rel_lux) = compare(&macro_run.history, &fine.history, &nf)?;
        rows.push(ReportRow {
            epsilon: eps,
            rel_l2,
            rel_lux,
            runtime_s: fine.runtime_s,
        });
        fine_runs.push(fine);
    }
    Ok(ConvergenceStudy { rows, macro_run, fine_runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::OperatorKind;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.grid.n = 16;
        cfg.grid.steps = 32;
        cfg.cell.n = 32;
        cfg.epsilons = vec![0.5, 0.25];
        cfg
    }

    #[test]
    fn identity_operator_matches_exactly_on_a_shared_grid() {
        let mut cfg = small();
        cfg.operator.kind = OperatorKind::Identity;
        // fine grids coincide with the macro grid for every scale
        cfg.grid.n = 128;
        let study = run_convergence(&cfg).unwrap();
        for r in &study.rows {
            assert!(r.rel_l2 <= 1e-10 && r.rel_lux <= 1e-10, "{r:?}");
        }
    }

    #[test]
    fn errors_shrink_with_epsilon() {
        let study = run_convergence(&small()).unwrap();
        assert_eq!(study.rows.len(), 2);
        assert!(study.rows[1].rel_l2 < study.rows[0].rel_l2, "{:?}", study.rows);
        assert!(study.macro_run.history.boundary_is_zero());
    }

    #[test]
    fn direct_mode_agrees_with_table_mode_for_linear_operators() {
        let mut cfg = small();
        cfg.epsilons = vec![0.5];
        let a = run_macro(&cfg).unwrap();
        cfg.q_mode = QMode::Direct;
        let b = run_macro(&cfg).unwrap();
        assert!(b.table.is_none());
        let da = a.history.final_state();
        let db = b.history.final_state();
        let gap = da.values.iter().zip(&db.values).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-9 * da.max_abs().max(1.0), "gap {gap}");
    }
}
