//! Reiterated two-scale pairings: oscillating test functions integrated against
//! the fine solutions, compared with the limits predicted by `u_0` and the
//! reconstructed correctors.

use std::collections::HashMap;
use std::f64::consts::PI;

use rayon::prelude::*;

use crate::effective::{axis_points, outer_solve, outer_tau_nodes, sample_point, EffectiveFluxTable, MidFluxCache, MidFluxEvaluator, TableMetadata, KEY_RESOLUTION};
use crate::error::{Error, Result};
use crate::grid::{coarse_element, gradient, prolongate, trace_eval, DomainGrid, Mesh};
use crate::harness::config::ExperimentConfig;
use crate::harness::report::{strictly_decreasing, PairingRow};
use crate::harness::study::{run_convergence, ConvergenceStudy};
use crate::operators::FluxOperator;

/// An oscillating factor `w(y, tau, z)` with its mean over the fast cell.
#[derive(Clone, Copy, Debug)]
pub struct FastFactor {
    pub name: &'static str,
    pub w: fn(&[f64], f64, &[f64]) -> f64,
    pub mean: f64,
    /// Highest fast frequency, checked against the grids before use.
    pub frequency: u32,
}

/// `1`, `cos 2 pi y_1`, `sin 2 pi z_1`, `cos 2 pi tau`.
pub fn standard_family() -> Vec<FastFactor> {
    vec![
        FastFactor { name: "one", w: |_, _, _| 1.0, mean: 1.0, frequency: 0 },
        FastFactor { name: "cos_y", w: |y, _, _| (2.0 * PI * y[0]).cos(), mean: 0.0, frequency: 1 },
        FastFactor { name: "sin_z", w: |_, _, z| (2.0 * PI * z[0]).sin(), mean: 0.0, frequency: 1 },
        FastFactor { name: "cos_tau", w: |_, t, _| (2.0 * PI * t).cos(), mean: 0.0, frequency: 1 },
    ]
}

/// Slow envelope `g(x, t) = t prod sin(pi x_i)`; vanishes on the boundary and at `t = 0`.
pub fn envelope(x: &[f64], t: f64) -> f64 {
    t * x.iter().map(|v| (PI * v).sin()).product::<f64>()
}

/// Per factor, `M_w(xi) = avg (xi + D pi_1 + D pi_2) w(y, tau, z)` over the fast variables.
#[derive(Clone, Debug)]
pub struct MomentTable {
    pub names: Vec<&'static str>,
    pub tables: Vec<EffectiveFluxTable>,
    /// Largest `|mean pi|` over every corrector used.
    pub max_corrector_mean: f64,
}

struct Moments {
    per_factor: Vec<Vec<f64>>,
    max_mean: f64,
}

fn moments_at(op: &FluxOperator, xi: &[f64], cfg: &ExperimentConfig, family: &[FastFactor], cache: &MidFluxCache) -> Result<Moments> {
    let d = op.dim();
    let grids = cfg.cell_grids()?;
    let params = cfg.effective_params();
    let (yg, zg) = (&grids.y, &grids.z);
    let taus = grids.tau_nodes();
    let solve_taus = outer_tau_nodes(op, &grids, &params);
    let outer = solve_taus
        .iter()
        .map(|&t| outer_solve(op, xi, t, &grids, &params, cache).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    let mut max_mean = outer.iter().map(|s| s.mean(yg).abs()).fold(0.0, f64::max);
    let ev = MidFluxEvaluator::new(op, zg, params.newton, cache)?;

    // Linear separable operators: D pi_2(xi') is linear in xi', so d unit solves suffice.
    let unit: Option<Vec<Vec<f64>>> = if op.is_linear() && op.is_separable() {
        let origin = vec![0.0; d];
        let mut cols = Vec::with_capacity(d);
        for k in 0..d {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            let (sol, _) = ev.inner_corrector(&origin, 0.0, &e)?;
            max_mean = max_mean.max(sol.mean(zg).abs());
            cols.push(sol.grad_pi.values);
        }
        Some(cols)
    } else {
        None
    };

    let (ny, nz) = (yg.num_elements(), zg.num_elements());
    let mut memo: HashMap<Vec<i64>, Vec<f64>> = HashMap::new();
    let mut acc = vec![vec![0.0; d]; family.len()];
    let (mut y, mut z) = (vec![0.0; d], vec![0.0; d]);
    let mut v = vec![0.0; d];
    for (k, &tau) in taus.iter().enumerate() {
        let outer_sol = &outer[if outer.len() == 1 { 0 } else { k }];
        for ey in 0..ny {
            yg.element_center(ey, &mut y);
            let xi1: Vec<f64> = (0..d).map(|c| xi[c] + outer_sol.grad_pi.values[ey * d + c]).collect();
            let grad2: Vec<f64> = match &unit {
                Some(cols) => (0..nz * d).map(|i| (0..d).map(|c| xi1[c] * cols[c][i]).sum()).collect(),
                None => {
                    let mut key: Vec<i64> = xi1.iter().map(|v| (v / KEY_RESOLUTION).round() as i64).collect();
                    if !op.is_separable() {
                        key.push(ey as i64);
                        key.push(k as i64);
                    }
                    if let Some(g) = memo.get(&key) {
                        g.clone()
                    } else {
                        let (sol, _) = ev.inner_corrector(&y, tau, &xi1)?;
                        max_mean = max_mean.max(sol.mean(zg).abs());
                        memo.insert(key, sol.grad_pi.values.clone());
                        sol.grad_pi.values
                    }
                }
            };
            for ez in 0..nz {
                zg.element_center(ez, &mut z);
                for c in 0..d {
                    v[c] = xi1[c] + grad2[ez * d + c];
                }
                for (a, f) in acc.iter_mut().zip(family) {
                    let w = (f.w)(&y, tau, &z);
                    a.iter_mut().zip(&v).for_each(|(s, vc)| *s += vc * w);
                }
            }
        }
    }
    let norm = (taus.len() * ny * nz) as f64;
    for a in &mut acc {
        a.iter_mut().for_each(|s| *s /= norm);
    }
    Ok(Moments { per_factor: acc, max_mean })
}

/// Tabulates the moments of every factor on the configured `q` box.
pub fn moment_table(cfg: &ExperimentConfig, op: &FluxOperator, family: &[FastFactor]) -> Result<MomentTable> {
    check_family(cfg, family, None)?;
    let d = op.dim();
    let n_xi = cfg.n_xi();
    let axis = axis_points(cfg.table.half_width, n_xi);
    let cache = MidFluxCache::new();
    let samples: Vec<Moments> = (0..n_xi.pow(d as u32))
        .into_par_iter()
        .map(|s| {
            let xi = sample_point(&axis, d, s);
            moments_at(op, &xi, cfg, family, &cache).map_err(|e| Error::Sample { xi, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let max_corrector_mean = samples.iter().map(|m| m.max_mean).fold(0.0, f64::max);
    let tables = family
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let meta = TableMetadata {
                dim: d,
                half_width: cfg.table.half_width,
                n_xi,
                cell_n: cfg.cell.n,
                n_tau: cfg.grid.n_tau,
                literal_tau_average: cfg.literal_tau_average,
                operator: format!("moment {} of {op:?}", f.name),
                worst_inner_residual: cache.worst_residual(),
                worst_outer_residual: 0.0,
            };
            EffectiveFluxTable::from_values(meta, samples.iter().flat_map(|m| m.per_factor[k].clone()).collect())
        })
        .collect::<Result<_>>()?;
    Ok(MomentTable {
        names: family.iter().map(|f| f.name).collect(),
        tables,
        max_corrector_mean,
    })
}

/// Rejects factors whose fast modes the cell grids, the fast-time nodes or a
/// fine grid at `eps` cannot represent.
pub fn check_family(cfg: &ExperimentConfig, family: &[FastFactor], fine: Option<(&DomainGrid, f64)>) -> Result<()> {
    let mut limit = (cfg.cell.n.min(cfg.grid.n_tau) as f64) / 2.0;
    if let Some((g, eps)) = fine {
        // nodes per period of the finest oscillation, x / eps^2
        limit = limit.min(g.n() as f64 * eps * eps / 2.0);
    }
    match family.iter().find(|f| f.frequency as f64 >= limit) {
        Some(f) => Err(Error::Config(format!(
            "test factor {} has frequency {} at or above the resolvable limit {limit}",
            f.name, f.frequency
        ))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug)]
pub struct TwoScaleReport {
    pub rows: Vec<PairingRow>,
    pub max_corrector_mean: f64,
}

impl TwoScaleReport {
    /// Identifiers whose defects fail to decrease strictly along the scales.
    pub fn non_decreasing(&self) -> Vec<String> {
        let mut ids: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !ids.contains(&r.phi_id.as_str()) {
                ids.push(&r.phi_id);
            }
        }
        ids.into_iter()
            .filter(|id| {
                let d: Vec<f64> = self.rows.iter().filter(|r| r.phi_id == *id).map(|r| r.defect).collect();
                !strictly_decreasing(&d)
            })
            .map(String::from)
            .collect()
    }
}

/// Trapezoid weights in time over `t_0 .. t_M`.
fn time_weights(steps: usize, dt: f64) -> Vec<f64> {
    (0..=steps).map(|m| if m == 0 || m == steps { 0.5 * dt } else { dt }).collect()
}

/// Pairing defects of every fine run in `study` against the homogenized limit.
pub fn pairing_defects(cfg: &ExperimentConfig, study: &ConvergenceStudy, family: &[FastFactor]) -> Result<TwoScaleReport> {
    let op = cfg.operator()?;
    let moments = moment_table(cfg, &op, family)?;
    let coarse = &study.macro_run.history.grid;
    let time = &study.macro_run.history.time;
    let d = coarse.dim();
    let wt = time_weights(time.steps(), time.dt());
    let coarse_grads = study
        .macro_run
        .history
        .states
        .iter()
        .map(|u| gradient(u, coarse))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for run in &study.fine_runs {
        let eps = run.epsilon;
        let fine = &run.history.grid;
        check_family(cfg, family, Some((fine, eps)))?;
        let nw = family.len();
        let (mut sol_lhs, mut sol_rhs) = (vec![0.0; nw], 0.0);
        let (mut grad_lhs, mut grad_rhs) = (vec![0.0; nw], vec![0.0; nw]);
        let mut x = vec![0.0; d];
        let he = fine.element_weight();
        for (m, &w_t) in wt.iter().enumerate() {
            let t = time.time(m);
            let ue = &run.history.states[m];
            let u0 = prolongate(coarse, &study.macro_run.history.states[m], fine)?;
            for i in 0..fine.num_nodes() {
                fine.node_coords(i, &mut x);
                let g = envelope(&x, t) * fine.node_weight(i) * w_t;
                if g == 0.0 {
                    continue;
                }
                sol_rhs += g * u0.values[i];
                for (k, f) in family.iter().enumerate() {
                    sol_lhs[k] += g * ue.values[i] * trace_eval(|_, _, y, tau, z| (f.w)(y, tau, z), eps, &x, t)?;
                }
            }
            let due = gradient(ue, fine)?;
            let cg = &coarse_grads[m];
            let mom: Vec<Vec<f64>> = (0..coarse.num_elements())
                .map(|ce| moments.tables.iter().map(|tb| tb.interp(cg.element(ce)).map(|v| v[0])).collect::<Result<Vec<_>>>())
                .collect::<Result<_>>()?;
            for e in 0..fine.num_elements() {
                fine.element_center(e, &mut x);
                let g = envelope(&x, t) * he * w_t;
                let ce = coarse_element(coarse, fine, e);
                for (k, f) in family.iter().enumerate() {
                    grad_lhs[k] += g * due.element(e)[0] * trace_eval(|_, _, y, tau, z| (f.w)(y, tau, z), eps, &x, t)?;
                    grad_rhs[k] += g * mom[ce][k];
                }
            }
        }
        for (k, f) in family.iter().enumerate() {
            rows.push(PairingRow {
                epsilon: eps,
                phi_id: format!("u.{}", f.name),
                defect: (sol_lhs[k] - f.mean * sol_rhs).abs(),
            });
        }
        for (k, f) in family.iter().enumerate() {
            rows.push(PairingRow {
                epsilon: eps,
                phi_id: format!("du.{}", f.name),
                defect: (grad_lhs[k] - grad_rhs[k]).abs(),
            });
        }
    }
    Ok(TwoScaleReport {
        rows,
        max_corrector_mean: moments.max_corrector_mean,
    })
}

/// Convergence sweep followed by the pairing test on its runs.
pub fn run_twoscale(cfg: &ExperimentConfig) -> Result<(ConvergenceStudy, TwoScaleReport)> {
    let study = run_convergence(cfg)?;
    let report = pairing_defects(cfg, &study, &standard_family())?;
    Ok((study, report))
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
        cfg.table.n_xi = 9;
        cfg.epsilons = vec![0.5, 0.25];
        cfg
    }

    #[test]
    fn moments_of_identity_are_the_slope_times_the_mean() {
        let mut cfg = small();
        cfg.operator.kind = OperatorKind::Identity;
        let op = cfg.operator().unwrap();
        let m = moment_table(&cfg, &op, &standard_family()).unwrap();
        for xi in [-1.5, 0.25, 2.0] {
            assert!((m.tables[0].interp(&[xi]).unwrap()[0] - xi).abs() < 1e-12);
            for t in &m.tables[1..] {
                assert!(t.interp(&[xi]).unwrap()[0].abs() < 1e-12);
            }
        }
        assert!(m.max_corrector_mean <= 1e-10);
    }

    #[test]
    fn first_moment_is_the_slope_for_oscillating_coefficients() {
        let cfg = small();
        let op = cfg.operator().unwrap();
        let mut fam = standard_family();
        fam.push(FastFactor { name: "sin_y", w: |y, _, _| (2.0 * PI * y[0]).sin(), mean: 0.0, frequency: 1 });
        let m = moment_table(&cfg, &op, &fam).unwrap();
        // correctors are periodic, so the plain average of the gradient is xi
        assert!((m.tables[0].interp(&[1.0]).unwrap()[0] - 1.0).abs() < 1e-12);
        // 1 / (2 + sin) is orthogonal to cos but not to sin
        assert!(m.tables[1].interp(&[1.0]).unwrap()[0].abs() < 1e-10);
        assert!(m.tables[4].interp(&[1.0]).unwrap()[0].abs() > 1e-3);
        assert!(m.max_corrector_mean <= 1e-10);
    }

    #[test]
    fn unresolvable_factors_are_rejected() {
        let mut cfg = small();
        cfg.grid.n_tau = 2;
        let fam = standard_family();
        assert_eq!(check_family(&cfg, &fam, None).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn envelope_vanishes_on_the_boundary() {
        assert_eq!(envelope(&[0.0], 1.0), 0.0);
        assert!(envelope(&[1.0, 0.5], 1.0).abs() < 1e-15);
        assert!((envelope(&[0.5], 2.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn defects_are_reported_per_factor_and_scale() {
        let cfg = small();
        let (_, rep) = run_twoscale(&cfg).unwrap();
        assert_eq!(rep.rows.len(), 2 * 2 * 4);
        assert!(rep.rows.iter().all(|r| r.defect.is_finite()));
    }
}
