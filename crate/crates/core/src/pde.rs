//! Backward-Euler solvers for `du/dt - div sigma(x, t, Du) = f` with zero initial
//! and boundary data: the homogenized problem driven by `q`, and the oscillatory
//! problem at finite `eps`.

use std::collections::HashMap;
use std::io::Write;
use std::sync::{Arc, Mutex};

use crate::effective::{effective_flux_q, CellGrids, EffectiveFluxTable, EffectiveParams, MidFluxCache, KEY_RESOLUTION};
use crate::error::{Error, Result};
use crate::grid::{gradient_into, integrate_elements, DomainGrid, Field, Mesh, TimeGrid};
use crate::operators::{fd_jacobian, FluxOperator};
use crate::orlicz::NFunction;
use crate::solver::{newton_solve, ElementFlux, NewtonOptions, NewtonStats, TimeTerm};
use crate::trig::wrap_unit;

/// A flux law `sigma(elem, t, lambda)` on the macroscopic grid.
pub trait ConstitutiveLaw: Sync {
    fn dim(&self) -> usize;

    fn flux(&self, elem: usize, t: f64, grad: &[f64], out: &mut [f64]) -> Result<()>;

    fn flux_tangent(&self, elem: usize, t: f64, grad: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()>;

    fn symmetric(&self) -> bool {
        true
    }
}

/// A law frozen at one time level.
struct AtTime<'a, L: ConstitutiveLaw + ?Sized> {
    law: &'a L,
    t: f64,
}

impl<L: ConstitutiveLaw + ?Sized> ElementFlux for AtTime<'_, L> {
    fn dim(&self) -> usize {
        self.law.dim()
    }

    fn flux(&self, e: usize, grad: &[f64], out: &mut [f64]) -> Result<()> {
        self.law.flux(e, self.t, grad, out)
    }

    fn flux_tangent(&self, e: usize, grad: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        self.law.flux_tangent(e, self.t, grad, out, jac)
    }

    fn symmetric(&self) -> bool {
        self.law.symmetric()
    }
}

/// `sigma = kappa lambda`.
#[derive(Clone, Copy, Debug)]
pub struct LinearLaw {
    pub dim: usize,
    pub kappa: f64,
}

impl ConstitutiveLaw for LinearLaw {
    fn dim(&self) -> usize {
        self.dim
    }

    fn flux(&self, _: usize, _: f64, grad: &[f64], out: &mut [f64]) -> Result<()> {
        for (o, g) in out.iter_mut().zip(grad) {
            *o = self.kappa * g;
        }
        Ok(())
    }

    fn flux_tangent(&self, e: usize, t: f64, grad: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        self.flux(e, t, grad, out)?;
        let d = self.dim;
        for r in 0..d {
            for c in 0..d {
                jac[r * d + c] = if r == c { self.kappa } else { 0.0 };
            }
        }
        Ok(())
    }
}

/// `sigma = q(lambda)` interpolated from a table; tangent by the table's stencil.
pub struct TableLaw<'a> {
    pub table: &'a EffectiveFluxTable,
}

impl ConstitutiveLaw for TableLaw<'_> {
    fn dim(&self) -> usize {
        self.table.dim()
    }

    fn flux(&self, _: usize, _: f64, grad: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.table.interp(grad)?);
        Ok(())
    }

    fn flux_tangent(&self, e: usize, t: f64, grad: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        self.flux(e, t, grad, out)?;
        jac.copy_from_slice(&self.table.tangent(grad)?);
        Ok(())
    }

    fn symmetric(&self) -> bool {
        false
    }
}

/// `sigma = q(lambda)` from fresh cell solves, memoized on the rounded gradient.
pub struct DirectLaw<'a> {
    op: &'a FluxOperator,
    grids: CellGrids,
    params: EffectiveParams,
    cache: &'a MidFluxCache,
    memo: Mutex<HashMap<Vec<i64>, Vec<f64>>>,
}

impl<'a> DirectLaw<'a> {
    pub fn new(op: &'a FluxOperator, grids: CellGrids, params: EffectiveParams, cache: &'a MidFluxCache) -> Self {
        Self {
            op,
            grids,
            params,
            cache,
            memo: Mutex::new(HashMap::new()),
        }
    }

    fn q(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let key: Vec<i64> = xi.iter().map(|v| (v / KEY_RESOLUTION).round() as i64).collect();
        if let Some(v) = self.memo.lock().expect("memo lock").get(&key) {
            return Ok(v.clone());
        }
        let xq: Vec<f64> = key.iter().map(|k| *k as f64 * KEY_RESOLUTION).collect();
        let v = effective_flux_q(self.op, &xq, &self.grids, &self.params, self.cache)?.q;
        self.memo.lock().expect("memo lock").insert(key, v.clone());
        Ok(v)
    }
}

impl ConstitutiveLaw for DirectLaw<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn flux(&self, _: usize, _: f64, grad: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.q(grad)?);
        Ok(())
    }

    fn flux_tangent(&self, e: usize, t: f64, grad: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        self.flux(e, t, grad, out)?;
        let mut err = None;
        fd_jacobian(
            |l, o| match self.q(l) {
                Ok(v) => o.copy_from_slice(&v),
                Err(e) => {
                    err.get_or_insert(e);
                }
            },
            grad,
            jac,
        );
        err.map_or(Ok(()), Err)
    }

    fn symmetric(&self) -> bool {
        false
    }
}

/// `sigma = a(x/eps, t/eps, x/eps^2, lambda)` at element centers.
pub struct FineLaw<'a> {
    op: &'a FluxOperator,
    eps: f64,
    y: Vec<f64>,
    z: Vec<f64>,
}

impl<'a> FineLaw<'a> {
    pub fn new(op: &'a FluxOperator, eps: f64, grid: &DomainGrid) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive, got {eps}")));
        }
        if op.dim() != grid.dim() {
            return Err(Error::GridMismatch { expected: op.dim(), got: grid.dim() });
        }
        let centers = grid.element_centers();
        Ok(Self {
            op,
            eps,
            y: centers.iter().map(|x| wrap_unit(x / eps)).collect(),
            z: centers.iter().map(|x| wrap_unit(x / (eps * eps))).collect(),
        })
    }

    fn slots(&self, e: usize) -> (&[f64], &[f64]) {
        let d = self.op.dim();
        (&self.y[e * d..(e + 1) * d], &self.z[e * d..(e + 1) * d])
    }
}

impl ConstitutiveLaw for FineLaw<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn flux(&self, e: usize, t: f64, grad: &[f64], out: &mut [f64]) -> Result<()> {
        let (y, z) = self.slots(e);
        self.op.eval(y, wrap_unit(t / self.eps), z, grad, out);
        Ok(())
    }

    fn flux_tangent(&self, e: usize, t: f64, grad: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        let (y, z) = self.slots(e);
        self.op.eval_with_jacobian(y, wrap_unit(t / self.eps), z, grad, out, jac);
        if self.op.is_potential() {
            crate::operators::symmetrize(jac, self.op.dim());
        }
        Ok(())
    }

    fn symmetric(&self) -> bool {
        self.op.is_potential()
    }
}

/// Right-hand side `f(x, t)`.
#[derive(Clone, Default)]
pub enum Source {
    #[default]
    Zero,
    Constant(f64),
    Function(Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::Zero => write!(f, "Zero"),
            Source::Constant(c) => write!(f, "Constant({c})"),
            Source::Function(_) => write!(f, "Function"),
        }
    }
}

impl Source {
    pub fn function<F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static>(f: F) -> Self {
        Source::Function(Arc::new(f))
    }

    /// Nodal values at time `t`.
    pub fn at(&self, grid: &DomainGrid, t: f64) -> Field {
        match self {
            Source::Zero => Field::zeros(grid),
            Source::Constant(c) => Field {
                values: vec![*c; grid.num_nodes()],
            },
            Source::Function(f) => Field::from_fn(grid, |x| f(x, t)),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Source::Zero) || matches!(self, Source::Constant(c) if *c == 0.0)
    }
}

/// Optional growth-energy term `c2 sum dt int B(|Du|)` added to the energy column.
#[derive(Clone, Debug)]
pub struct EnergyMonitor {
    pub nf: NFunction,
    pub c2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub step: usize,
    pub newton_iters: usize,
    pub residual: f64,
    /// `||u^m||` in the lumped-mass norm.
    pub l2_norm: f64,
    pub energy: f64,
    /// `||u^0||^2 + 2 sum_k dt <f^k, u^k>`, the bound for `||u^m||^2`.
    pub work: f64,
}

/// States `u^0 .. u^M` with per-step diagnostics.
#[derive(Clone, Debug)]
pub struct SolutionHistory {
    pub grid: DomainGrid,
    pub time: TimeGrid,
    pub states: Vec<Field>,
    pub diagnostics: Vec<StepDiagnostics>,
}

/// Slack for the energy ledger, relative to the size of its terms.
pub const LEDGER_RTOL: f64 = 1e-8;

impl SolutionHistory {
    pub fn final_state(&self) -> &Field {
        self.states.last().expect("history holds the initial state")
    }

    /// Largest `(||u^m||^2 - work_m) / max(1, scale)` over the steps; `<= LEDGER_RTOL` means the
    /// discrete energy inequality holds.
    pub fn ledger_defect(&self) -> f64 {
        self.diagnostics
            .iter()
            .skip(1)
            .map(|d| {
                let lhs = d.l2_norm * d.l2_norm;
                (lhs - d.work) / lhs.max(d.work.abs()).max(1e-300)
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Whether `||u^m||` never increases.
    pub fn is_dissipative(&self) -> bool {
        self.diagnostics.windows(2).all(|w| w[1].l2_norm <= w[0].l2_norm)
    }

    pub fn boundary_is_zero(&self) -> bool {
        self.states
            .iter()
            .all(|u| (0..self.grid.num_nodes()).all(|i| !self.grid.is_boundary(i) || u.values[i] == 0.0))
    }

    /// Long-format history `step,index,value`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "index", "value"])?;
        for (m, u) in self.states.iter().enumerate() {
            for (i, v) in u.values.iter().enumerate() {
                w.write_record([m.to_string(), i.to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `step,newton_iters,residual,l2_norm,energy`.
    pub fn write_diagnostics<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "newton_iters", "residual", "l2_norm", "energy"])?;
        for d in &self.diagnostics {
            w.write_record([
                d.step.to_string(),
                d.newton_iters.to_string(),
                d.residual.to_string(),
                d.l2_norm.to_string(),
                d.energy.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn weighted_dot(grid: &DomainGrid, a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).enumerate().map(|(i, (x, y))| grid.node_weight(i) * x * y).sum()
}

/// One backward-Euler step: `(u - u_prev)/dt - div sigma(Du) = f` on interior nodes.
pub fn implicit_step<F: ElementFlux>(u_prev: &Field, dt: f64, flux: &F, f_step: &Field, grid: &DomainGrid, opts: &NewtonOptions) -> Result<(Field, NewtonStats)> {
    u_prev.check(grid)?;
    f_step.check(grid)?;
    let term = TimeTerm {
        dt,
        u_prev: &u_prev.values,
        source: &f_step.values,
    };
    let zero = vec![0.0; grid.dim()];
    let (u, stats) = newton_solve(grid, flux, &zero, Some(&term), &u_prev.values, opts)?;
    Ok((Field { values: u }, stats))
}

/// Marches `M` implicit steps from `initial` (zero when `None`).
pub fn march<L: ConstitutiveLaw + ?Sized>(
    grid: &DomainGrid,
    time: &TimeGrid,
    law: &L,
    source: &Source,
    opts: &NewtonOptions,
    initial: Option<&Field>,
    energy: Option<&EnergyMonitor>,
) -> Result<SolutionHistory> {
    if law.dim() != grid.dim() {
        return Err(Error::GridMismatch { expected: grid.dim(), got: law.dim() });
    }
    let mut u = match initial {
        Some(u0) => {
            u0.check(grid)?;
            let mut v = u0.clone();
            for (i, x) in v.values.iter_mut().enumerate() {
                if grid.is_boundary(i) {
                    *x = 0.0;
                }
            }
            v
        }
        None => Field::zeros(grid),
    };
    let dt = time.dt();
    let d = grid.dim();
    let mut grads = vec![0.0; grid.num_elements() * d];
    let mut growth = 0.0;
    let l0 = weighted_dot(grid, &u.values, &u.values);
    // the ledger starts from the initial energy: ||u^m||^2 <= ||u^0||^2 + 2 sum dt <f, u>
    let mut work = l0;
    let mut diagnostics = vec![StepDiagnostics {
        step: 0,
        newton_iters: 0,
        residual: 0.0,
        l2_norm: l0.sqrt(),
        energy: l0,
        work: l0,
    }];
    let mut states = vec![u.clone()];
    for m in 1..=time.steps() {
        let t = time.time(m);
        let f = source.at(grid, t);
        let flux = AtTime { law, t };
        let (next, stats) = implicit_step(&u, dt, &flux, &f, grid, opts).map_err(|e| Error::Step { step: m, source: Box::new(e) })?;
        u = next;
        work += 2.0 * dt * weighted_dot(grid, &f.values, &u.values);
        let l2 = weighted_dot(grid, &u.values, &u.values);
        if let Some(mon) = energy {
            gradient_into(grid, &u.values, &mut grads);
            let b: Vec<f64> = (0..grid.num_elements())
                .map(|e| mon.nf.value(grads[e * d..(e + 1) * d].iter().map(|g| g * g).sum::<f64>().sqrt()))
                .collect();
            growth += dt * mon.c2 * integrate_elements(&b, grid);
        }
        diagnostics.push(StepDiagnostics {
            step: m,
            newton_iters: stats.iterations,
            residual: if stats.scale > 0.0 { stats.residual / stats.scale } else { stats.residual },
            l2_norm: l2.sqrt(),
            energy: l2 + growth,
            work,
        });
        states.push(u.clone());
    }
    Ok(SolutionHistory {
        grid: *grid,
        time: *time,
        states,
        diagnostics,
    })
}

/// Homogenized problem from zero data.
pub fn macro_solve<L: ConstitutiveLaw + ?Sized>(grid: &DomainGrid, time: &TimeGrid, law: &L, source: &Source, opts: &NewtonOptions) -> Result<SolutionHistory> {
    march(grid, time, law, source, opts, None, None)
}

/// Smallest multiple of `macro_n` whose spacing resolves `eps^2 / 8`.
pub fn fine_grid_n(macro_n: usize, eps: f64) -> usize {
    let need = 8.0 / (eps * eps) * (1.0 - 1e-12);
    let k = (need / macro_n as f64).ceil().max(1.0) as usize;
    k * macro_n
}

/// Rejects fine grids with `h > eps^2/8` or time grids with `M < 8/eps`.
pub fn check_fine_resolution(grid: &DomainGrid, time: &TimeGrid, eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Domain(format!("epsilon must lie in (0, 1], got {eps}")));
    }
    let slack = 1.0 + 1e-12;
    let h = grid.spacing();
    if h > eps * eps / 8.0 * slack {
        return Err(Error::Resolution(format!(
            "fine spacing {h} exceeds eps^2/8 = {} for eps = {eps}",
            eps * eps / 8.0
        )));
    }
    if (time.steps() as f64) * slack < 8.0 / eps {
        return Err(Error::Resolution(format!(
            "{} time steps do not resolve t/eps; need at least {}",
            time.steps(),
            (8.0 / eps).ceil()
        )));
    }
    Ok(())
}

/// Oscillatory problem at scale `eps`.
pub fn fine_solve(grid: &DomainGrid, time: &TimeGrid, op: &FluxOperator, eps: f64, source: &Source, opts: &NewtonOptions) -> Result<SolutionHistory> {
    check_fine_resolution(grid, time, eps)?;
    let law = FineLaw::new(op, eps, grid)?;
    march(grid, time, &law, source, opts, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trig::TrigPoly;
    use std::f64::consts::PI;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|i, j| a[*i][k].abs().total_cmp(&a[*j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let f = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= f * a[k][j];
                }
                b[i] -= f * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            x[i] = (b[i] - (i + 1..n).map(|j| a[i][j] * x[j]).sum::<f64>()) / a[i][i];
        }
        x
    }

    #[test]
    fn zero_source_gives_zero_solution() {
        let g = DomainGrid::new(1, 16).unwrap();
        let tg = TimeGrid::new(1.0, 8).unwrap();
        let h = macro_solve(&g, &tg, &LinearLaw { dim: 1, kappa: 2.0 }, &Source::Zero, &NewtonOptions::default()).unwrap();
        assert!(h.states.iter().all(|u| u.values.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn step_matches_dense_oracle() {
        let n = 32;
        let g = DomainGrid::new(1, n).unwrap();
        let dt = 1e-2;
        let law = LinearLaw { dim: 1, kappa: 1.0 };
        let (u, stats) = implicit_step(&Field::zeros(&g), dt, &AtTime { law: &law, t: dt }, &Field { values: vec![1.0; n + 1] }, &g, &NewtonOptions::default()).unwrap();
        assert!(stats.iterations <= 1);
        let h = 1.0 / n as f64;
        let m = n - 1;
        let mut a = vec![vec![0.0; m]; m];
        for i in 0..m {
            a[i][i] = 1.0 / dt + 2.0 / (h * h);
            if i > 0 {
                a[i][i - 1] = -1.0 / (h * h);
            }
            if i + 1 < m {
                a[i][i + 1] = -1.0 / (h * h);
            }
        }
        let x = dense_solve(a, vec![1.0; m]);
        for i in 0..m {
            assert!((u.values[i + 1] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn steady_state_of_linear_homogenized_problem() {
        let n = 64;
        let g = DomainGrid::new(1, n).unwrap();
        let tg = TimeGrid::new(4.0, 200).unwrap();
        let src = Source::function(|x, _| (PI * x[0]).sin());
        let h = macro_solve(&g, &tg, &LinearLaw { dim: 1, kappa: 3.0 }, &src, &NewtonOptions::default()).unwrap();
        let u = h.final_state();
        for i in 1..n {
            let x = i as f64 / n as f64;
            let target = (PI * x).sin() / (3.0 * PI * PI);
            assert!((u.values[i] - target).abs() <= 0.02 * target.abs() + 1e-6, "{} vs {target}", u.values[i]);
        }
        assert!(h.ledger_defect() <= LEDGER_RTOL);
        assert!(h.boundary_is_zero());
    }

    #[test]
    fn dissipative_from_nonzero_state() {
        let g = DomainGrid::new(2, 12).unwrap();
        let tg = TimeGrid::new(0.5, 10).unwrap();
        let op = FluxOperator::power_law(2, NFunction::power(3.0).unwrap(), TrigPoly::constant(1.0), TrigPoly::offset_sin(2.0, 1.0, &[1, 1]), 1e-8).unwrap();
        let law = FineLaw::new(&op, 0.5, &g).unwrap();
        let init = Field::from_fn(&g, |x| (PI * x[0]).sin() * (2.0 * PI * x[1]).sin());
        let h = march(&g, &tg, &law, &Source::Zero, &NewtonOptions::default(), Some(&init), None).unwrap();
        assert!(h.is_dissipative());
        assert!(h.diagnostics.last().unwrap().l2_norm < h.diagnostics[0].l2_norm);
    }

    #[test]
    fn fine_identity_matches_macro_identity() {
        let g = DomainGrid::new(1, 128).unwrap();
        let tg = TimeGrid::new(1.0, 64).unwrap();
        let id = FluxOperator::identity(1).unwrap();
        let src = Source::Constant(1.0);
        let o = NewtonOptions::default();
        let fine = fine_solve(&g, &tg, &id, 0.25, &src, &o).unwrap();
        let mac = macro_solve(&g, &tg, &LinearLaw { dim: 1, kappa: 1.0 }, &src, &o).unwrap();
        for (a, b) in fine.states.iter().zip(&mac.states) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!(fine.ledger_defect() <= LEDGER_RTOL);
    }

    #[test]
    fn resolution_guards() {
        let tg = TimeGrid::new(1.0, 64).unwrap();
        assert_eq!(fine_grid_n(64, 0.25), 128);
        assert_eq!(fine_grid_n(64, 0.125), 512);
        assert_eq!(fine_grid_n(64, 0.0625), 2048);
        assert_eq!(fine_grid_n(100, 0.25), 200);
        let coarse = DomainGrid::new(1, 64).unwrap();
        assert!(matches!(check_fine_resolution(&coarse, &tg, 0.25), Err(Error::Resolution(_))));
        let ok = DomainGrid::new(1, 128).unwrap();
        assert!(check_fine_resolution(&ok, &tg, 0.25).is_ok());
        assert!(matches!(check_fine_resolution(&ok, &TimeGrid::new(1.0, 16).unwrap(), 0.25), Err(Error::Resolution(_))));
    }

    #[test]
    fn diagnostics_csv_header() {
        let g = DomainGrid::new(1, 8).unwrap();
        let tg = TimeGrid::new(1.0, 2).unwrap();
        let mon = EnergyMonitor { nf: NFunction::power(2.0).unwrap(), c2: 1.0 };
        let h = march(&g, &tg, &LinearLaw { dim: 1, kappa: 1.0 }, &Source::Constant(1.0), &NewtonOptions::default(), None, Some(&mon)).unwrap();
        let mut buf = Vec::new();
        h.write_diagnostics(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("step,newton_iters,residual,l2_norm,energy\n"));
        assert_eq!(s.lines().count(), 4);
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + 3 * 9);
        assert!(h.diagnostics[2].energy > h.diagnostics[2].l2_norm.powi(2));
    }
}
