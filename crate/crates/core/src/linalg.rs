//! Linear solvers for the linearized element systems `m x + D^T W J D x = r`.

use crate::error::{Error, Result};
use crate::grid::{local_gradient, DomainGrid, Mesh, PeriodicCellGrid};

/// Which linear solver the Newton iteration uses.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LinearSolverKind {
    /// Direct tridiagonal elimination in 1D, preconditioned Krylov in 2D.
    #[default]
    Auto,
    /// Always use the Krylov path (CG for symmetric systems, BiCGSTAB otherwise).
    Krylov,
}

/// Solves a tridiagonal system; `a` is the sub-diagonal (`a[0]` unused), `c` the super-diagonal.
pub fn thomas(a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    if a.len() != n || c.len() != n || d.len() != n {
        return Err(Error::GridMismatch { expected: n, got: d.len() });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    let mut piv = b[0];
    if piv == 0.0 || !piv.is_finite() {
        return Err(Error::NonFinite("zero pivot in tridiagonal solve".into()));
    }
    cp[0] = c[0] / piv;
    dp[0] = d[0] / piv;
    for i in 1..n {
        piv = b[i] - a[i] * cp[i - 1];
        if piv == 0.0 || !piv.is_finite() {
            return Err(Error::NonFinite(format!("zero pivot in tridiagonal solve at row {i}")));
        }
        cp[i] = c[i] / piv;
        dp[i] = (d[i] - a[i] * dp[i - 1]) / piv;
    }
    let mut x = dp;
    for i in (0..n - 1).rev() {
        x[i] -= cp[i] * x[i + 1];
    }
    Ok(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonal projection away from the constant (and, for even 2D periodic grids,
/// the checkerboard) null modes of the periodic gradient.
#[derive(Clone, Debug)]
pub struct NullSpace {
    modes: Vec<Vec<f64>>,
}

impl NullSpace {
    pub fn none() -> Self {
        Self { modes: Vec::new() }
    }

    pub fn periodic(grid: &PeriodicCellGrid) -> Self {
        let n = grid.num_nodes();
        let s = 1.0 / (n as f64).sqrt();
        let mut modes = vec![vec![s; n]];
        if grid.has_checkerboard_mode() {
            modes.push((0..n).map(|i| s * grid.checkerboard_sign(i)).collect());
        }
        Self { modes }
    }

    pub fn project(&self, v: &mut [f64]) {
        for m in &self.modes {
            let c = dot(m, v);
            v.iter_mut().zip(m).for_each(|(x, y)| *x -= c * y);
        }
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// Krylov stopping rule and iteration cap.
#[derive(Clone, Copy, Debug)]
pub struct KrylovOptions {
    pub rtol: f64,
    pub max_iter: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-13,
            max_iter: 20_000,
        }
    }
}

/// Jacobi-preconditioned conjugate gradients on the range of the projection.
pub fn pcg<A>(apply: A, diag: &[f64], rhs: &[f64], null: &NullSpace, opts: KrylovOptions) -> Result<Vec<f64>>
where
    A: Fn(&[f64], &mut [f64]),
{
    let n = rhs.len();
    let mut r = rhs.to_vec();
    null.project(&mut r);
    let target = opts.rtol * norm(&r);
    let mut x = vec![0.0; n];
    if norm(&r) == 0.0 {
        return Ok(x);
    }
    let precond = |r: &[f64], z: &mut [f64]| {
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        null.project(z);
    };
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for _ in 0..opts.max_iter {
        apply(&p, &mut ap);
        null.project(&mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NonFinite(format!("CG breakdown: p.Ap = {pap:e}")));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= target {
            null.project(&mut x);
            return Ok(x);
        }
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: norm(&r),
        context: "conjugate gradients".into(),
    })
}

/// Jacobi-preconditioned BiCGSTAB on the range of the projection.
pub fn bicgstab<A>(apply: A, diag: &[f64], rhs: &[f64], null: &NullSpace, opts: KrylovOptions) -> Result<Vec<f64>>
where
    A: Fn(&[f64], &mut [f64]),
{
    let n = rhs.len();
    let mut r = rhs.to_vec();
    null.project(&mut r);
    let target = opts.rtol * norm(&r);
    let mut x = vec![0.0; n];
    if norm(&r) == 0.0 {
        return Ok(x);
    }
    let precond = |v: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = v[i] / diag[i];
        }
        null.project(out);
    };
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for _ in 0..opts.max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            return Err(Error::NonFinite("BiCGSTAB breakdown (rho)".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond(&p, &mut phat);
        apply(&phat, &mut v);
        null.project(&mut v);
        alpha = rho / dot(&r0, &v);
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm(&s) <= target {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            null.project(&mut x);
            return Ok(x);
        }
        precond(&s, &mut shat);
        apply(&shat, &mut t);
        null.project(&mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm(&r) <= target {
            null.project(&mut x);
            return Ok(x);
        }
        if omega == 0.0 {
            return Err(Error::NonFinite("BiCGSTAB breakdown (omega)".into()));
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        residual: norm(&r),
        context: "BiCGSTAB".into(),
    })
}

/// The linearized system `diag(mass) x + D^T W J D x` with per-element `d x d`
/// Jacobians `J`. Dirichlet rows are replaced by the identity.
pub struct LinearizedOperator<'a, M: Mesh + ?Sized> {
    pub mesh: &'a M,
    /// Row-major `d x d` blocks, one per element.
    pub jac: &'a [f64],
    /// Lumped mass divided by the time step; `None` for stationary problems.
    pub mass: Option<&'a [f64]>,
    pub symmetric: bool,
}

impl<'a, M: Mesh + ?Sized> LinearizedOperator<'a, M> {
    fn fixed(&self, i: usize) -> bool {
        self.mesh.is_boundary(i)
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mesh = self.mesh;
        let d = mesh.dim();
        let k = mesh.nodes_per_element();
        let g = local_gradient(d, mesh.spacing());
        let w = mesh.element_weight();
        y.iter_mut().for_each(|v| *v = 0.0);
        let mut grad = [0.0; 2];
        let mut flux = [0.0; 2];
        for e in 0..mesh.num_elements() {
            let nodes = mesh.element_nodes(e);
            for c in 0..d {
                grad[c] = (0..k).map(|a| g[c][a] * x[nodes[a]]).sum();
            }
            let je = &self.jac[e * d * d..(e + 1) * d * d];
            for r in 0..d {
                flux[r] = (0..d).map(|c| je[r * d + c] * grad[c]).sum();
            }
            for a in 0..k {
                let acc: f64 = (0..d).map(|c| g[c][a] * flux[c]).sum();
                y[nodes[a]] += w * acc;
            }
        }
        if let Some(m) = self.mass {
            for i in 0..y.len() {
                y[i] += m[i] * x[i];
            }
        }
        for i in 0..y.len() {
            if self.fixed(i) {
                y[i] = x[i];
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mesh = self.mesh;
        let d = mesh.dim();
        let k = mesh.nodes_per_element();
        let g = local_gradient(d, mesh.spacing());
        let w = mesh.element_weight();
        let mut diag = vec![0.0; mesh.num_nodes()];
        for e in 0..mesh.num_elements() {
            let nodes = mesh.element_nodes(e);
            let je = &self.jac[e * d * d..(e + 1) * d * d];
            for a in 0..k {
                let mut acc = 0.0;
                for r in 0..d {
                    for c in 0..d {
                        acc += g[r][a] * je[r * d + c] * g[c][a];
                    }
                }
                diag[nodes[a]] += w * acc;
            }
        }
        if let Some(m) = self.mass {
            diag.iter_mut().zip(m).for_each(|(v, mi)| *v += mi);
        }
        for (i, v) in diag.iter_mut().enumerate() {
            if self.fixed(i) || *v <= 0.0 || !v.is_finite() {
                *v = 1.0;
            }
        }
        diag
    }

    /// Tridiagonal bands (1D only). Periodic wrap-around couplings are returned separately
    /// as the coefficient between the last and first node.
    fn bands(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        let mesh = self.mesh;
        let nn = mesh.num_nodes();
        let h = mesh.spacing();
        let (mut a, mut b, mut c) = (vec![0.0; nn], vec![0.0; nn], vec![0.0; nn]);
        let mut wrap = 0.0;
        for e in 0..mesh.num_elements() {
            let [l, r, ..] = mesh.element_nodes(e);
            let k = mesh.element_weight() * self.jac[e] / (h * h);
            b[l] += k;
            b[r] += k;
            if r == l + 1 {
                c[l] -= k;
                a[r] -= k;
            } else {
                wrap -= k;
            }
        }
        if let Some(m) = self.mass {
            b.iter_mut().zip(m).for_each(|(v, mi)| *v += mi);
        }
        for i in 0..nn {
            if self.fixed(i) {
                a[i] = 0.0;
                c[i] = 0.0;
                b[i] = 1.0;
            }
        }
        (a, b, c, wrap)
    }
}

/// Solves the linearized system on a Dirichlet domain grid.
pub fn solve_domain(op: &LinearizedOperator<'_, DomainGrid>, rhs: &[f64], kind: LinearSolverKind, opts: KrylovOptions) -> Result<Vec<f64>> {
    let mut r = rhs.to_vec();
    for (i, v) in r.iter_mut().enumerate() {
        if op.mesh.is_boundary(i) {
            *v = 0.0;
        }
    }
    if op.mesh.dim() == 1 && kind == LinearSolverKind::Auto {
        let (a, b, c, _) = op.bands();
        return thomas(&a, &b, &c, &r);
    }
    krylov(op, &r, &NullSpace::none(), opts)
}

/// Solves the linearized system on the periodic cell, returning the solution
/// orthogonal to the null modes. Requires `mass` to be `None`.
pub fn solve_periodic(op: &LinearizedOperator<'_, PeriodicCellGrid>, rhs: &[f64], kind: LinearSolverKind, opts: KrylovOptions) -> Result<Vec<f64>> {
    let null = if op.mass.is_none() { NullSpace::periodic(op.mesh) } else { NullSpace::none() };
    if op.mesh.dim() == 1 && kind == LinearSolverKind::Auto && op.mass.is_none() {
        // Pinning node 0 removes the constant mode and the wrap-around coupling.
        let (a, b, c, _) = op.bands();
        let n = b.len();
        let mut x = vec![0.0; n];
        let sol = thomas(&a[1..], &b[1..], &c[1..], &rhs[1..])?;
        x[1..].copy_from_slice(&sol);
        null.project(&mut x);
        return Ok(x);
    }
    krylov(op, rhs, &null, opts)
}

fn krylov<M: Mesh + ?Sized>(op: &LinearizedOperator<'_, M>, rhs: &[f64], null: &NullSpace, opts: KrylovOptions) -> Result<Vec<f64>> {
    let diag = op.diagonal();
    let apply = |x: &[f64], y: &mut [f64]| op.apply(x, y);
    if op.symmetric {
        match pcg(apply, &diag, rhs, null, opts) {
            Ok(x) => Ok(x),
            // loss of definiteness from round-off: fall back to the general method
            Err(Error::NonFinite(_)) => bicgstab(apply, &diag, rhs, null, opts),
            Err(e) => Err(e),
        }
    } else {
        bicgstab(apply, &diag, rhs, null, opts)
    }
}
