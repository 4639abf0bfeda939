//! Periodic mean-zero cell problems: the inner corrector on the `z` cell and the
//! outer corrector on the `y` cell.

use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{gradient_into, local_gradient, Field, Mesh, PeriodicCellGrid, VectorField};
use crate::linalg::{solve_periodic, LinearizedOperator};
use crate::operators::{fd_jacobian, symmetrize, FluxOperator};
use crate::solver::{newton_solve, ElementFlux, NewtonOptions, NewtonStats};

/// A periodic corrector and its solver record.
#[derive(Clone, Debug)]
pub struct CorrectorSolution {
    pub pi: Field,
    pub grad_pi: VectorField,
    /// Final residual norm relative to the absolute-contribution scale.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stats: NewtonStats,
}

impl CorrectorSolution {
    pub fn mean(&self, grid: &PeriodicCellGrid) -> f64 {
        self.pi.values.iter().sum::<f64>() * grid.node_weight(0)
    }

    /// `|<D pi>|`: the cell average of the gradient vanishes exactly when the
    /// nodal field closes up across the periodic boundary.
    pub fn periodicity_defect(&self, grid: &PeriodicCellGrid) -> f64 {
        let d = grid.dim();
        let ne = grid.num_elements() as f64;
        (0..d)
            .map(|c| {
                (0..grid.num_elements())
                    .map(|e| self.grad_pi.values[e * d + c])
                    .sum::<f64>()
                    .abs()
                    / ne
            })
            .fold(0.0, f64::max)
    }

    /// Writes the Newton residual history as `iteration,residual`.
    pub fn write_trace<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "residual"])?;
        for (i, r) in self.stats.history.iter().enumerate() {
            w.write_record([i.to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Solves `<sigma(xi + D pi), D theta> = 0` for all periodic `theta`, `pi` mean-zero.
pub fn solve_cell<F: ElementFlux>(
    grid: &PeriodicCellGrid,
    flux: &F,
    xi: &[f64],
    opts: &NewtonOptions,
    initial: Option<&[f64]>,
) -> Result<CorrectorSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::Config(format!("cell tolerance must be positive, got {}", opts.tol)));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("macroscopic gradient {xi:?}")));
    }
    let zeros;
    let u0 = match initial {
        Some(u) => u,
        None => {
            zeros = vec![0.0; grid.num_nodes()];
            &zeros
        }
    };
    let (pi, stats) = newton_solve(grid, flux, xi, None, u0, opts)?;
    let mut grad = VectorField::zeros(grid);
    gradient_into(grid, &pi, &mut grad.values);
    let residual_norm = if stats.scale > 0.0 { stats.residual / stats.scale } else { stats.residual };
    Ok(CorrectorSolution {
        pi: Field { values: pi },
        grad_pi: grad,
        residual_norm,
        iterations: stats.iterations,
        converged: true,
        stats,
    })
}

/// `<sigma(xi + D pi)>` over the cell.
pub fn average_flux<F: ElementFlux>(grid: &PeriodicCellGrid, flux: &F, xi: &[f64], sol: &CorrectorSolution) -> Result<Vec<f64>> {
    let d = grid.dim();
    let ne = grid.num_elements();
    let mut acc = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut s = vec![0.0; d];
    for e in 0..ne {
        for c in 0..d {
            g[c] = xi[c] + sol.grad_pi.values[e * d + c];
        }
        flux.flux(e, &g, &mut s)?;
        acc.iter_mut().zip(&s).for_each(|(a, v)| *a += v);
    }
    Ok(acc.into_iter().map(|a| a / ne as f64).collect())
}

/// Derivative of the averaged flux with respect to `xi`: `<J (I + D chi)>` where
/// `chi_k` solves the cell problem linearized at the converged corrector.
pub fn homogenized_tangent<F: ElementFlux>(grid: &PeriodicCellGrid, flux: &F, xi: &[f64], sol: &CorrectorSolution, opts: &NewtonOptions) -> Result<Vec<f64>> {
    let d = grid.dim();
    let ne = grid.num_elements();
    let nn = grid.num_nodes();
    let mut jac = vec![0.0; ne * d * d];
    let mut g = vec![0.0; d];
    let mut s = vec![0.0; d];
    for e in 0..ne {
        for c in 0..d {
            g[c] = xi[c] + sol.grad_pi.values[e * d + c];
        }
        flux.flux_tangent(e, &g, &mut s, &mut jac[e * d * d..(e + 1) * d * d])?;
    }
    let op = LinearizedOperator {
        mesh: grid,
        jac: &jac,
        mass: None,
        symmetric: flux.symmetric(),
    };
    let gl = local_gradient(d, grid.spacing());
    let w = grid.element_weight();
    let mut t = vec![0.0; d * d];
    let mut dchi = vec![0.0; ne * d];
    for k in 0..d {
        let mut rhs = vec![0.0; nn];
        for e in 0..ne {
            let nodes = grid.element_nodes(e);
            let je = &jac[e * d * d..(e + 1) * d * d];
            for (a, &node) in nodes.iter().enumerate().take(grid.nodes_per_element()) {
                let v: f64 = (0..d).map(|c| gl[c][a] * je[c * d + k]).sum();
                rhs[node] -= w * v;
            }
        }
        let chi = solve_periodic(&op, &rhs, opts.linear, opts.krylov)?;
        gradient_into(grid, &chi, &mut dchi);
        for e in 0..ne {
            let je = &jac[e * d * d..(e + 1) * d * d];
            for r in 0..d {
                let mut v = je[r * d + k];
                for c in 0..d {
                    v += je[r * d + c] * dchi[e * d + c];
                }
                t[r * d + k] += v / ne as f64;
            }
        }
    }
    if flux.symmetric() {
        symmetrize(&mut t, d);
    }
    Ok(t)
}

/// A flux operator frozen at one slow point, evaluated at the `z` element centers.
pub struct InnerFlux<'a> {
    op: &'a FluxOperator,
    /// `None` for separable operators: the slow factor cancels from the cell problem.
    slow: Option<(Vec<f64>, f64)>,
    centers: Vec<f64>,
}

impl<'a> InnerFlux<'a> {
    pub fn new(op: &'a FluxOperator, y: &[f64], tau: f64, zgrid: &PeriodicCellGrid) -> Result<Self> {
        if op.dim() != zgrid.dim() || y.len() != op.dim() {
            return Err(Error::GridMismatch { expected: op.dim(), got: zgrid.dim() });
        }
        Ok(Self {
            op,
            slow: Some((y.to_vec(), tau)),
            centers: zgrid.element_centers(),
        })
    }

    /// Only the fast factor `A(z, lambda)` of a separable operator.
    pub fn fast_part(op: &'a FluxOperator, zgrid: &PeriodicCellGrid) -> Result<Self> {
        if !op.is_separable() {
            return Err(Error::Config("fast-part cell flux needs a separable operator".into()));
        }
        if op.dim() != zgrid.dim() {
            return Err(Error::GridMismatch { expected: op.dim(), got: zgrid.dim() });
        }
        Ok(Self {
            op,
            slow: None,
            centers: zgrid.element_centers(),
        })
    }
}

impl ElementFlux for InnerFlux<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn flux(&self, e: usize, grad: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.op.dim();
        let z = &self.centers[e * d..(e + 1) * d];
        match &self.slow {
            Some((y, tau)) => self.op.eval(y, *tau, z, grad, out),
            None => self.op.eval_fast(z, grad, out),
        }
        Ok(())
    }

    fn flux_tangent(&self, e: usize, grad: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        let d = self.op.dim();
        let z = &self.centers[e * d..(e + 1) * d];
        match &self.slow {
            Some((y, tau)) => self.op.eval_with_jacobian(y, *tau, z, grad, out, jac),
            None => self.op.eval_fast_with_jacobian(z, grad, out, jac),
        }
        if self.op.is_potential() {
            symmetrize(jac, d);
        }
        Ok(())
    }

    fn symmetric(&self) -> bool {
        self.op.is_potential()
    }
}

/// The mid-scale flux `h(y, tau, xi)`, the constitutive law of the outer cell problem.
pub trait MidFlux: Sync {
    fn dim(&self) -> usize;

    fn h(&self, y: &[f64], tau: f64, xi: &[f64], out: &mut [f64]) -> Result<()>;

    /// Value and row-major `xi`-Jacobian. Defaults to central differences.
    fn h_tangent(&self, y: &[f64], tau: f64, xi: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        self.h(y, tau, xi, out)?;
        let mut err = None;
        fd_jacobian(
            |l, o| {
                if let Err(e) = self.h(y, tau, l, o) {
                    err.get_or_insert(e);
                }
            },
            xi,
            jac,
        );
        match err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn symmetric(&self) -> bool {
        true
    }
}

/// A mid-scale flux given by closures.
pub struct FnMidFlux<H> {
    dim: usize,
    h: H,
    symmetric: bool,
}

impl<H> FnMidFlux<H>
where
    H: Fn(&[f64], f64, &[f64], &mut [f64]) + Sync,
{
    pub fn new(dim: usize, h: H, symmetric: bool) -> Self {
        Self { dim, h, symmetric }
    }
}

impl<H> MidFlux for FnMidFlux<H>
where
    H: Fn(&[f64], f64, &[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn h(&self, y: &[f64], tau: f64, xi: &[f64], out: &mut [f64]) -> Result<()> {
        (self.h)(y, tau, xi, out);
        Ok(())
    }

    fn symmetric(&self) -> bool {
        self.symmetric
    }
}

/// `h` frozen at one fast time, evaluated at the `y` element centers.
pub struct OuterFlux<'a, H: MidFlux + ?Sized> {
    h: &'a H,
    tau: f64,
    centers: Vec<f64>,
}

impl<'a, H: MidFlux + ?Sized> OuterFlux<'a, H> {
    pub fn new(h: &'a H, tau: f64, ygrid: &PeriodicCellGrid) -> Result<Self> {
        if h.dim() != ygrid.dim() {
            return Err(Error::GridMismatch { expected: h.dim(), got: ygrid.dim() });
        }
        Ok(Self {
            h,
            tau,
            centers: ygrid.element_centers(),
        })
    }

    pub fn center(&self, e: usize) -> &[f64] {
        let d = self.h.dim();
        &self.centers[e * d..(e + 1) * d]
    }
}

impl<H: MidFlux + ?Sized> ElementFlux for OuterFlux<'_, H> {
    fn dim(&self) -> usize {
        self.h.dim()
    }

    fn flux(&self, e: usize, grad: &[f64], out: &mut [f64]) -> Result<()> {
        self.h.h(self.center(e), self.tau, grad, out)
    }

    fn flux_tangent(&self, e: usize, grad: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        self.h.h_tangent(self.center(e), self.tau, grad, out, jac)
    }

    fn symmetric(&self) -> bool {
        self.h.symmetric()
    }
}

/// Inner corrector at `(y, tau)`. For separable operators the slow factor
/// cancels, so the result does not depend on `(y, tau)`.
pub fn solve_inner_corrector(op: &FluxOperator, y: &[f64], tau: f64, xi: &[f64], zgrid: &PeriodicCellGrid, opts: &NewtonOptions) -> Result<CorrectorSolution> {
    let flux = if op.is_separable() {
        InnerFlux::fast_part(op, zgrid)?
    } else {
        InnerFlux::new(op, y, tau, zgrid)?
    };
    solve_cell(zgrid, &flux, xi, opts, None)
}

/// Outer corrector against `h(., tau, .)` on the `y` cell.
pub fn solve_outer_corrector<H: MidFlux + ?Sized>(h: &H, tau: f64, xi: &[f64], ygrid: &PeriodicCellGrid, opts: &NewtonOptions) -> Result<CorrectorSolution> {
    let flux = OuterFlux::new(h, tau, ygrid)?;
    solve_cell(ygrid, &flux, xi, opts, None)
}
