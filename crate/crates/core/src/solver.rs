//! Damped Newton iteration for element-flux problems
//! `m (u - u_prev)/dt + D^T W sigma(xi + D u) = m f`,
//! shared by the cell problems and the macroscopic time steps.

use crate::error::{Error, Result};
use crate::grid::{gradient_into, local_gradient, DomainGrid, Mesh, PeriodicCellGrid};
use crate::linalg::{solve_domain, solve_periodic, KrylovOptions, LinearSolverKind, LinearizedOperator, NullSpace};

/// A flux law that may vary from element to element.
pub trait ElementFlux: Sync {
    fn dim(&self) -> usize;

    fn flux(&self, elem: usize, grad: &[f64], out: &mut [f64]) -> Result<()>;

    /// Flux and its `d x d` row-major Jacobian with respect to the gradient.
    fn flux_tangent(&self, elem: usize, grad: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()>;

    /// Whether every element Jacobian is symmetric.
    fn symmetric(&self) -> bool {
        true
    }
}

/// Boundary treatment attached to a mesh type.
pub trait Constrained: Mesh + Sized {
    fn linear_solve(op: &LinearizedOperator<'_, Self>, rhs: &[f64], kind: LinearSolverKind, opts: KrylovOptions) -> Result<Vec<f64>>;

    /// Puts an iterate into the admissible space.
    fn constrain(&self, u: &mut [f64]);
}

impl Constrained for DomainGrid {
    fn linear_solve(op: &LinearizedOperator<'_, Self>, rhs: &[f64], kind: LinearSolverKind, opts: KrylovOptions) -> Result<Vec<f64>> {
        solve_domain(op, rhs, kind, opts)
    }

    fn constrain(&self, u: &mut [f64]) {
        for (i, v) in u.iter_mut().enumerate() {
            if self.is_boundary(i) {
                *v = 0.0;
            }
        }
    }
}

impl Constrained for PeriodicCellGrid {
    fn linear_solve(op: &LinearizedOperator<'_, Self>, rhs: &[f64], kind: LinearSolverKind, opts: KrylovOptions) -> Result<Vec<f64>> {
        solve_periodic(op, rhs, kind, opts)
    }

    fn constrain(&self, u: &mut [f64]) {
        NullSpace::periodic(self).project(u);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    /// Relative tolerance against the sum of absolute residual contributions.
    pub tol: f64,
    pub max_iter: usize,
    pub linear: LinearSolverKind,
    pub krylov: KrylovOptions,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            linear: LinearSolverKind::Auto,
            krylov: KrylovOptions::default(),
        }
    }
}

/// Backward-Euler data: lumped mass over `dt`, previous state and nodal source.
pub struct TimeTerm<'a> {
    pub dt: f64,
    pub u_prev: &'a [f64],
    pub source: &'a [f64],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NewtonStats {
    pub iterations: usize,
    /// Residual norm at the start of each iteration, then the final one.
    pub history: Vec<f64>,
    pub residual: f64,
    pub scale: f64,
    pub line_search_cuts: usize,
    pub chord_steps: usize,
}

const MIN_STEP: f64 = 1.0 / 1024.0;
const CHORD_STEPS: usize = 20;

struct Workspace<'a, M: Constrained, F: ElementFlux> {
    mesh: &'a M,
    flux: &'a F,
    shift: &'a [f64],
    time: Option<&'a TimeTerm<'a>>,
    mass_dt: Option<Vec<f64>>,
    grads: Vec<f64>,
    sigma: Vec<f64>,
    jac: Vec<f64>,
    /// Isotropic shift added to the element tangents in the Newton matrix.
    damping: f64,
}

impl<'a, M: Constrained, F: ElementFlux> Workspace<'a, M, F> {
    /// Residual and the absolute-contribution scale; fills `jac` when asked.
    fn residual(&mut self, u: &[f64], with_jac: bool) -> Result<(Vec<f64>, f64)> {
        let mesh = self.mesh;
        let d = mesh.dim();
        let ne = mesh.num_elements();
        let k = mesh.nodes_per_element();
        gradient_into(mesh, u, &mut self.grads);
        for e in 0..ne {
            let gr = &mut self.grads[e * d..(e + 1) * d];
            for c in 0..d {
                gr[c] += self.shift[c];
            }
            let (g, s) = (&self.grads[e * d..(e + 1) * d], &mut self.sigma[e * d..(e + 1) * d]);
            if with_jac {
                self.flux.flux_tangent(e, g, s, &mut self.jac[e * d * d..(e + 1) * d * d])?;
            } else {
                self.flux.flux(e, g, s)?;
            }
        }
        let gl = local_gradient(d, mesh.spacing());
        let w = mesh.element_weight();
        let nn = mesh.num_nodes();
        let mut r = vec![0.0; nn];
        let mut a = vec![0.0; nn];
        for e in 0..ne {
            let nodes = mesh.element_nodes(e);
            let s = &self.sigma[e * d..(e + 1) * d];
            for (loc, &node) in nodes.iter().enumerate().take(k) {
                let v: f64 = (0..d).map(|c| gl[c][loc] * s[c]).sum();
                r[node] += w * v;
                a[node] += w * v.abs();
            }
        }
        if let (Some(t), Some(m)) = (self.time, &self.mass_dt) {
            for i in 0..nn {
                let inertia = m[i] * (u[i] - t.u_prev[i]);
                let src = m[i] * t.dt * t.source[i];
                r[i] += inertia - src;
                a[i] += inertia.abs() + src.abs();
            }
        }
        for i in 0..nn {
            if mesh.is_boundary(i) {
                r[i] = 0.0;
                a[i] = 0.0;
            }
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Newton residual".into()));
        }
        let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok((r, scale))
    }

    /// Mean diagonal entry of the element tangents.
    fn tangent_scale(&self) -> f64 {
        let d = self.mesh.dim();
        let ne = self.mesh.num_elements();
        (0..ne).map(|e| (0..d).map(|c| self.jac[e * d * d + c * d + c]).sum::<f64>()).sum::<f64>() / (ne * d) as f64
    }

    fn linear_solve(&self, rhs: &[f64], opts: &NewtonOptions) -> Result<Vec<f64>> {
        let d = self.mesh.dim();
        let shifted;
        let jac = if self.damping > 0.0 {
            let mut j = self.jac.clone();
            for blk in j.chunks_mut(d * d) {
                for c in 0..d {
                    blk[c * d + c] += self.damping;
                }
            }
            shifted = j;
            &shifted
        } else {
            &self.jac
        };
        let op = LinearizedOperator {
            mesh: self.mesh,
            jac,
            mass: self.mass_dt.as_deref(),
            symmetric: self.flux.symmetric(),
        };
        M::linear_solve(&op, rhs, opts.linear, opts.krylov)
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl<M: Constrained, F: ElementFlux> Workspace<'_, M, F> {
    fn trial(&mut self, u: &[f64], delta: &[f64], alpha: f64) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let mut t: Vec<f64> = u.iter().zip(delta).map(|(a, b)| a + alpha * b).collect();
        self.mesh.constrain(&mut t);
        let (r, s) = self.residual(&t, false)?;
        Ok((t, r, s))
    }
}

/// Root of `g(a) = <R(u + a delta), delta>` by regula falsi (Illinois).
///
/// `R` is strictly monotone, so `g` increases and its root is where the step stops
/// making progress along `delta`. Returns the step, state and residual norm, or
/// `None` when no sign change is found within `[0, 64]`.
fn monotone_search<M: Constrained, F: ElementFlux>(
    ws: &mut Workspace<'_, M, F>,
    u: &[f64],
    delta: &[f64],
    g0: f64,
    g1: f64,
) -> Result<Option<(f64, Vec<f64>, f64)>> {
    let (mut lo, mut glo) = (0.0, g0);
    let (mut hi, mut ghi) = (1.0, g1);
    while ghi <= 0.0 {
        if hi >= 64.0 {
            return Ok(None);
        }
        (lo, glo) = (hi, ghi);
        hi *= 2.0;
        let (_, r, _) = ws.trial(u, delta, hi)?;
        ghi = dot(&r, delta);
    }
    let mut side = 0;
    let mut best = None;
    for _ in 0..40 {
        let a = (lo * ghi - hi * glo) / (ghi - glo);
        let (t, r, _) = ws.trial(u, delta, a)?;
        let g = dot(&r, delta);
        best = Some((a, t, l2(&r)));
        if g.abs() <= 0.05 * g0.abs() || hi - lo <= 1e-6 * hi {
            break;
        }
        if g < 0.0 {
            (lo, glo) = (a, g);
            if side == -1 {
                ghi *= 0.5;
            }
            side = -1;
        } else {
            (hi, ghi) = (a, g);
            if side == 1 {
                glo *= 0.5;
            }
            side = 1;
        }
    }
    Ok(best)
}

/// Solves for `u` (zero on Dirichlet nodes, or orthogonal to the periodic null modes)
/// starting from `u0`.
pub fn newton_solve<M: Constrained, F: ElementFlux>(
    mesh: &M,
    flux: &F,
    shift: &[f64],
    time: Option<&TimeTerm<'_>>,
    u0: &[f64],
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, NewtonStats)> {
    let d = mesh.dim();
    let nn = mesh.num_nodes();
    if flux.dim() != d || shift.len() != d {
        return Err(Error::GridMismatch { expected: d, got: flux.dim() });
    }
    if u0.len() != nn {
        return Err(Error::GridMismatch { expected: nn, got: u0.len() });
    }
    if let Some(t) = time {
        if t.u_prev.len() != nn || t.source.len() != nn {
            return Err(Error::GridMismatch { expected: nn, got: t.u_prev.len() });
        }
        if !(t.dt > 0.0) {
            return Err(Error::Domain(format!("time step must be positive, got {}", t.dt)));
        }
    }
    let ne = mesh.num_elements();
    let mut ws = Workspace {
        mesh,
        flux,
        shift,
        time,
        mass_dt: time.map(|t| (0..nn).map(|i| mesh.node_weight(i) / t.dt).collect()),
        grads: vec![0.0; ne * d],
        sigma: vec![0.0; ne * d],
        jac: vec![0.0; ne * d * d],
        damping: 0.0,
    };
    let mut u = u0.to_vec();
    mesh.constrain(&mut u);
    let mut stats = NewtonStats::default();
    let (mut r, mut scale) = ws.residual(&u, true)?;
    let mut rn = l2(&r);
    let mut theta: f64 = 0.0;
    for it in 0..opts.max_iter {
        stats.iterations = it;
        stats.residual = rn;
        stats.scale = scale;
        stats.history.push(rn);
        if rn <= opts.tol * scale {
            return Ok((u, stats));
        }
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        ws.damping = theta * ws.tangent_scale();
        let delta = ws.linear_solve(&neg, opts)?;
        let mut accepted = None;
        let mut full = false;
        let mut alpha = 1.0;
        let g0 = dot(&r, &delta);
        if let Ok((trial, rt, st)) = ws.trial(&u, &delta, 1.0) {
            let rtn = l2(&rt);
            if rtn <= (1.0 - 1e-4) * rn || rtn <= opts.tol * st {
                accepted = Some(trial);
                full = true;
            } else if g0 < 0.0 {
                if let Some((a, t, tn)) = monotone_search(&mut ws, &u, &delta, g0, dot(&rt, &delta))? {
                    if tn < rn {
                        stats.line_search_cuts += 1;
                        accepted = Some(t);
                    } else {
                        alpha = a.min(1.0);
                    }
                }
            }
        }
        if accepted.is_none() {
            alpha *= 0.5;
            stats.line_search_cuts += 1;
        }
        while accepted.is_none() && alpha >= MIN_STEP {
            let mut trial: Vec<f64> = u.iter().zip(&delta).map(|(a, b)| a + alpha * b).collect();
            mesh.constrain(&mut trial);
            if let Ok((rt, st)) = ws.residual(&trial, false) {
                let rtn = l2(&rt);
                if rtn <= (1.0 - 1e-4 * alpha) * rn || rtn <= opts.tol * st {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
            stats.line_search_cuts += 1;
        }
        // Levenberg-style control: damp after a cut step, relax after a full one.
        theta = if full {
            if theta < 1e-6 { 0.0 } else { theta / 10.0 }
        } else {
            (theta * 4.0).clamp(1.0, 1e6)
        };
        let next = match accepted {
            Some(t) => t,
            None => chord(&mut ws, &u, rn, opts, &mut stats)?,
        };
        u = next;
        (r, scale) = ws.residual(&u, true)?;
        rn = l2(&r);
    }
    stats.iterations = opts.max_iter;
    stats.residual = rn;
    stats.history.push(rn);
    stats.scale = scale;
    if rn <= opts.tol * scale {
        return Ok((u, stats));
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: rn / scale.max(f64::MIN_POSITIVE),
        context: "Newton iteration".into(),
    })
}

/// Frozen-Jacobian fixed-point steps from `u`; used when the line search stalls.
fn chord<M: Constrained, F: ElementFlux>(
    ws: &mut Workspace<'_, M, F>,
    u: &[f64],
    rn0: f64,
    opts: &NewtonOptions,
    stats: &mut NewtonStats,
) -> Result<Vec<f64>> {
    let mut cur = u.to_vec();
    let mut best = rn0;
    let (mut r, _) = ws.residual(&cur, true)?;
    for _ in 0..CHORD_STEPS {
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = ws.linear_solve(&neg, opts)?;
        let mut trial: Vec<f64> = cur.iter().zip(&delta).map(|(a, b)| a + b).collect();
        ws.mesh.constrain(&mut trial);
        let (rt, st) = ws.residual(&trial, false)?;
        let rtn = l2(&rt);
        stats.chord_steps += 1;
        if rtn >= best {
            break;
        }
        best = rtn;
        cur = trial;
        r = rt;
        if rtn <= opts.tol * st {
            break;
        }
    }
    if best < rn0 {
        Ok(cur)
    } else {
        Err(Error::NotConverged {
            iterations: stats.iterations,
            residual: rn0,
            context: "Newton line search and chord fallback made no progress".into(),
        })
    }
}
