//! Uniform tensor grids on the unit cell (periodic) and on `(0,1)^d` (Dirichlet),
//! lowest-order discrete gradient and its exact adjoint, quadrature, and the
//! oscillating trace map.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::trig::wrap_unit;

/// Common interface of the periodic cell grid and the Dirichlet domain grid.
///
/// Elements are the `n^d` squares; element `e = i + n j` has lower-left node `(i, j)`.
/// Gradients live on elements (evaluated at the element center), scalars on nodes.
pub trait Mesh: Sync {
    fn dim(&self) -> usize;
    fn n(&self) -> usize;
    fn num_nodes(&self) -> usize;
    fn node_weight(&self, node: usize) -> f64;
    fn element_nodes(&self, e: usize) -> [usize; 4];
    fn node_coords(&self, node: usize, out: &mut [f64]);
    fn is_boundary(&self, node: usize) -> bool;

    fn spacing(&self) -> f64 {
        1.0 / self.n() as f64
    }

    fn num_elements(&self) -> usize {
        self.n().pow(self.dim() as u32)
    }

    fn element_weight(&self) -> f64 {
        self.spacing().powi(self.dim() as i32)
    }

    fn nodes_per_element(&self) -> usize {
        1 << self.dim()
    }

    fn element_center(&self, e: usize, out: &mut [f64]) {
        let n = self.n();
        let h = self.spacing();
        out[0] = ((e % n) as f64 + 0.5) * h;
        if self.dim() == 2 {
            out[1] = ((e / n) as f64 + 0.5) * h;
        }
    }

    /// Element centers, flattened element-major.
    fn element_centers(&self) -> Vec<f64> {
        let d = self.dim();
        let mut c = vec![0.0; self.num_elements() * d];
        for e in 0..self.num_elements() {
            self.element_center(e, &mut c[e * d..(e + 1) * d]);
        }
        c
    }

    fn node_weights(&self) -> Vec<f64> {
        (0..self.num_nodes()).map(|i| self.node_weight(i)).collect()
    }

    /// Domain measure (1 for both grids).
    fn measure(&self) -> f64 {
        1.0
    }
}

/// Gradient weights of the local nodes: `grad_k = sum_a G[k][a] u_a`.
pub(crate) fn local_gradient(dim: usize, h: f64) -> [[f64; 4]; 2] {
    if dim == 1 {
        [[-1.0 / h, 1.0 / h, 0.0, 0.0], [0.0; 4]]
    } else {
        let s = 0.5 / h;
        [[-s, s, -s, s], [-s, -s, s, s]]
    }
}

fn check_grid(dim: usize, n: usize) -> Result<()> {
    if !(dim == 1 || dim == 2) {
        return Err(Error::Config(format!("grid dimension must be 1 or 2, got {dim}")));
    }
    if n < 2 {
        return Err(Error::Config(format!("grid needs n >= 2 nodes per axis, got {n}")));
    }
    Ok(())
}

/// Wrap-around grid with `n` nodes per axis on the unit cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeriodicCellGrid {
    dim: usize,
    n: usize,
}

impl PeriodicCellGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        check_grid(dim, n)?;
        Ok(Self { dim, n })
    }

    /// Nonconstant null modes of the element gradient: the checkerboard for even `n` in 2D.
    pub(crate) fn has_checkerboard_mode(&self) -> bool {
        self.dim == 2 && self.n.is_multiple_of(2)
    }

    pub(crate) fn checkerboard_sign(&self, node: usize) -> f64 {
        let (i, j) = (node % self.n, node / self.n);
        if (i + j) % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

impl Mesh for PeriodicCellGrid {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n(&self) -> usize {
        self.n
    }

    fn num_nodes(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    fn node_weight(&self, _node: usize) -> f64 {
        self.element_weight()
    }

    fn element_nodes(&self, e: usize) -> [usize; 4] {
        let n = self.n;
        if self.dim == 1 {
            [e, (e + 1) % n, 0, 0]
        } else {
            let (i, j) = (e % n, e / n);
            let (ip, jp) = ((i + 1) % n, (j + 1) % n);
            [i + n * j, ip + n * j, i + n * jp, ip + n * jp]
        }
    }

    fn node_coords(&self, node: usize, out: &mut [f64]) {
        let h = self.spacing();
        out[0] = (node % self.n) as f64 * h;
        if self.dim == 2 {
            out[1] = (node / self.n) as f64 * h;
        }
    }

    fn is_boundary(&self, _node: usize) -> bool {
        false
    }
}

/// Grid on `(0,1)^d` with `n` intervals per axis and homogeneous Dirichlet boundary nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DomainGrid {
    dim: usize,
    n: usize,
}

impl DomainGrid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        check_grid(dim, n)?;
        Ok(Self { dim, n })
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.num_nodes()).map(|i| self.is_boundary(i)).collect()
    }

    fn axis_weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i == self.n {
            0.5 * h
        } else {
            h
        }
    }

    /// `(i, j)` lattice index of a node.
    pub fn node_index(&self, node: usize) -> (usize, usize) {
        let m = self.n + 1;
        (node % m, node / m)
    }
}

impl Mesh for DomainGrid {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n(&self) -> usize {
        self.n
    }

    fn num_nodes(&self) -> usize {
        (self.n + 1).pow(self.dim as u32)
    }

    fn node_weight(&self, node: usize) -> f64 {
        let (i, j) = self.node_index(node);
        if self.dim == 1 {
            self.axis_weight(i)
        } else {
            self.axis_weight(i) * self.axis_weight(j)
        }
    }

    fn element_nodes(&self, e: usize) -> [usize; 4] {
        if self.dim == 1 {
            [e, e + 1, 0, 0]
        } else {
            let m = self.n + 1;
            let (i, j) = (e % self.n, e / self.n);
            [i + m * j, i + 1 + m * j, i + m * (j + 1), i + 1 + m * (j + 1)]
        }
    }

    fn node_coords(&self, node: usize, out: &mut [f64]) {
        let h = self.spacing();
        let (i, j) = self.node_index(node);
        out[0] = i as f64 * h;
        if self.dim == 2 {
            out[1] = j as f64 * h;
        }
    }

    fn is_boundary(&self, node: usize) -> bool {
        let (i, j) = self.node_index(node);
        let n = self.n;
        i == 0 || i == n || (self.dim == 2 && (j == 0 || j == n))
    }
}

/// Uniform time grid on `[0, T]` with `M` backward-Euler steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("time horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, m: usize) -> f64 {
        self.horizon * m as f64 / self.steps as f64
    }
}

/// Nodal scalar values.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros<M: Mesh + ?Sized>(mesh: &M) -> Self {
        Self {
            values: vec![0.0; mesh.num_nodes()],
        }
    }

    /// Samples `f` at the nodes.
    pub fn from_fn<M: Mesh + ?Sized, F: Fn(&[f64]) -> f64>(mesh: &M, f: F) -> Self {
        let mut x = vec![0.0; mesh.dim()];
        let values = (0..mesh.num_nodes())
            .map(|i| {
                mesh.node_coords(i, &mut x);
                f(&x)
            })
            .collect();
        Self { values }
    }

    pub fn check<M: Mesh + ?Sized>(&self, mesh: &M) -> Result<()> {
        if self.values.len() == mesh.num_nodes() {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected: mesh.num_nodes(),
                got: self.values.len(),
            })
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Per-element vectors, element-major with `dim` components each.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    pub dim: usize,
    pub values: Vec<f64>,
}

impl VectorField {
    pub fn zeros<M: Mesh + ?Sized>(mesh: &M) -> Self {
        Self {
            dim: mesh.dim(),
            values: vec![0.0; mesh.num_elements() * mesh.dim()],
        }
    }

    pub fn element(&self, e: usize) -> &[f64] {
        &self.values[e * self.dim..(e + 1) * self.dim]
    }

    pub fn check<M: Mesh + ?Sized>(&self, mesh: &M) -> Result<()> {
        let expected = mesh.num_elements() * mesh.dim();
        if self.dim == mesh.dim() && self.values.len() == expected {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                expected,
                got: self.values.len(),
            })
        }
    }
}

/// Element gradients of nodal values into `out` (element-major).
pub(crate) fn gradient_into<M: Mesh + ?Sized>(mesh: &M, u: &[f64], out: &mut [f64]) {
    let d = mesh.dim();
    let g = local_gradient(d, mesh.spacing());
    let k = mesh.nodes_per_element();
    for e in 0..mesh.num_elements() {
        let nodes = mesh.element_nodes(e);
        for c in 0..d {
            let mut s = 0.0;
            for a in 0..k {
                s += g[c][a] * u[nodes[a]];
            }
            out[e * d + c] = s;
        }
    }
}

/// Accumulates `D^T W sigma` (the weak divergence without sign or mass scaling) into `out`.
pub(crate) fn weak_divergence_into<M: Mesh + ?Sized>(mesh: &M, sigma: &[f64], out: &mut [f64]) {
    let d = mesh.dim();
    let g = local_gradient(d, mesh.spacing());
    let k = mesh.nodes_per_element();
    let w = mesh.element_weight();
    out.iter_mut().for_each(|v| *v = 0.0);
    for e in 0..mesh.num_elements() {
        let nodes = mesh.element_nodes(e);
        let s = &sigma[e * d..(e + 1) * d];
        for a in 0..k {
            let mut acc = 0.0;
            for c in 0..d {
                acc += g[c][a] * s[c];
            }
            out[nodes[a]] += w * acc;
        }
    }
}

/// Discrete gradient: forward differences in 1D, bilinear element-center gradients in 2D.
pub fn gradient<M: Mesh + ?Sized>(u: &Field, mesh: &M) -> Result<VectorField> {
    u.check(mesh)?;
    let mut out = VectorField::zeros(mesh);
    gradient_into(mesh, &u.values, &mut out.values);
    Ok(out)
}

/// Negative adjoint of [`gradient`] under the weighted inner products:
/// `<div s, u> = -<s, D u>` for every nodal `u`.
pub fn divergence<M: Mesh + ?Sized>(sigma: &VectorField, mesh: &M) -> Result<Field> {
    sigma.check(mesh)?;
    let mut out = vec![0.0; mesh.num_nodes()];
    weak_divergence_into(mesh, &sigma.values, &mut out);
    for (i, v) in out.iter_mut().enumerate() {
        *v = -*v / mesh.node_weight(i);
    }
    Ok(Field { values: out })
}

/// Weighted nodal sum.
pub fn integrate<M: Mesh + ?Sized>(u: &Field, mesh: &M) -> Result<f64> {
    u.check(mesh)?;
    Ok(u.values.iter().enumerate().map(|(i, v)| v * mesh.node_weight(i)).sum())
}

/// Mean value over the unit cell.
pub fn cell_average(u: &Field, grid: &PeriodicCellGrid) -> Result<f64> {
    integrate(u, grid)
}

/// Element-weighted sum of a per-element scalar.
pub fn integrate_elements<M: Mesh + ?Sized>(vals: &[f64], mesh: &M) -> f64 {
    mesh.element_weight() * vals.iter().sum::<f64>()
}

/// Subtracts the cell average.
pub fn project_zero_mean(u: &Field, grid: &PeriodicCellGrid) -> Result<Field> {
    let mean = cell_average(u, grid)?;
    Ok(Field {
        values: u.values.iter().map(|v| v - mean).collect(),
    })
}

/// `(x/eps mod 1, t/eps mod 1, x/eps^2 mod 1)`.
pub fn fast_coordinates(x: &[f64], t: f64, eps: f64, y: &mut [f64], z: &mut [f64]) -> f64 {
    for (i, xi) in x.iter().enumerate() {
        y[i] = wrap_unit(xi / eps);
        z[i] = wrap_unit(xi / (eps * eps));
    }
    wrap_unit(t / eps)
}

/// `v^eps(x, t) = v(x, t, x/eps, t/eps, x/eps^2)` with fast arguments reduced into `[0, 1)`.
pub fn trace_eval<V>(v: V, eps: f64, x: &[f64], t: f64) -> Result<f64>
where
    V: Fn(&[f64], f64, &[f64], f64, &[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {eps}")));
    }
    let mut y = [0.0; 2];
    let mut z = [0.0; 2];
    let d = x.len();
    let tau = fast_coordinates(x, t, eps, &mut y[..d], &mut z[..d]);
    Ok(v(x, t, &y[..d], tau, &z[..d]))
}

/// Piecewise-(bi)linear interpolation of a coarse nodal field onto an integer refinement.
pub fn prolongate(coarse: &DomainGrid, u: &Field, fine: &DomainGrid) -> Result<Field> {
    u.check(coarse)?;
    let r = refinement_ratio(coarse, fine)?;
    let nc = coarse.n();
    let mc = nc + 1;
    let mut out = Field::zeros(fine);
    for node in 0..fine.num_nodes() {
        let (i, j) = fine.node_index(node);
        let (ic, fi) = ((i / r).min(nc - 1), (i - (i / r).min(nc - 1) * r) as f64 / r as f64);
        if coarse.dim() == 1 {
            out.values[node] = (1.0 - fi) * u.values[ic] + fi * u.values[ic + 1];
        } else {
            let (jc, fj) = ((j / r).min(nc - 1), (j - (j / r).min(nc - 1) * r) as f64 / r as f64);
            let v = |a: usize, b: usize| u.values[a + mc * b];
            out.values[node] = (1.0 - fi) * (1.0 - fj) * v(ic, jc)
                + fi * (1.0 - fj) * v(ic + 1, jc)
                + (1.0 - fi) * fj * v(ic, jc + 1)
                + fi * fj * v(ic + 1, jc + 1);
        }
    }
    Ok(out)
}

/// Injection of a fine nodal field onto the coarse grid's nodes.
pub fn restrict(fine: &DomainGrid, u: &Field, coarse: &DomainGrid) -> Result<Field> {
    u.check(fine)?;
    let r = refinement_ratio(coarse, fine)?;
    let mf = fine.n() + 1;
    let mut out = Field::zeros(coarse);
    for node in 0..coarse.num_nodes() {
        let (i, j) = coarse.node_index(node);
        out.values[node] = u.values[i * r + mf * j * r];
    }
    Ok(out)
}

/// Index of the coarse element containing a fine element.
pub fn coarse_element(coarse: &DomainGrid, fine: &DomainGrid, fine_elem: usize) -> usize {
    let r = fine.n() / coarse.n();
    let (i, j) = (fine_elem % fine.n(), fine_elem / fine.n());
    (i / r) + coarse.n() * (j / r)
}

pub fn refinement_ratio(coarse: &DomainGrid, fine: &DomainGrid) -> Result<usize> {
    if coarse.dim() != fine.dim() || !fine.n().is_multiple_of(coarse.n()) {
        return Err(Error::Config(format!(
            "grid with n = {} is not an integer refinement of n = {}",
            fine.n(),
            coarse.n()
        )));
    }
    Ok(fine.n() / coarse.n())
}

/// Writes `index,value` (1D) or `i,j,value` (2D) rows.
pub fn write_field_csv<M: Mesh + ?Sized, W: Write>(mesh: &M, u: &Field, out: W) -> Result<()> {
    u.check(mesh)?;
    let mut w = csv::Writer::from_writer(out);
    let side = mesh.num_nodes().max(1);
    let per_row = if mesh.dim() == 1 { side } else { (side as f64).sqrt().round() as usize };
    if mesh.dim() == 1 {
        w.write_record(["index", "value"])?;
        for (i, v) in u.values.iter().enumerate() {
            w.write_record([i.to_string(), v.to_string()])?;
        }
    } else {
        w.write_record(["i", "j", "value"])?;
        for (k, v) in u.values.iter().enumerate() {
            w.write_record([(k % per_row).to_string(), (k / per_row).to_string(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a field written by [`write_field_csv`].
pub fn read_field_csv<M: Mesh + ?Sized, R: Read>(mesh: &M, input: R) -> Result<Field> {
    let mut r = csv::Reader::from_reader(input);
    let mut values = vec![f64::NAN; mesh.num_nodes()];
    let side = if mesh.dim() == 1 { mesh.num_nodes() } else { (mesh.num_nodes() as f64).sqrt().round() as usize };
    for rec in r.records() {
        let rec = rec?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Config(format!("bad CSV number {s:?}: {e}")));
        let (idx, v) = if mesh.dim() == 1 {
            (parse(&rec[0])? as usize, parse(&rec[1])?)
        } else {
            (parse(&rec[0])? as usize + side * parse(&rec[1])? as usize, parse(&rec[2])?)
        };
        if idx >= values.len() {
            return Err(Error::GridMismatch {
                expected: values.len(),
                got: idx + 1,
            });
        }
        values[idx] = v;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Config("field CSV does not cover every node".into()));
    }
    Ok(Field { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{PI, TAU};

    fn dot_nodes<M: Mesh>(mesh: &M, a: &[f64], b: &[f64]) -> f64 {
        (0..a.len()).map(|i| mesh.node_weight(i) * a[i] * b[i]).sum()
    }

    fn dot_elems<M: Mesh>(mesh: &M, a: &[f64], b: &[f64]) -> f64 {
        mesh.element_weight() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = PeriodicCellGrid::new(2, 8).unwrap();
        let u = Field { values: vec![4.2; g.num_nodes()] };
        assert!(gradient(&u, &g).unwrap().values.iter().all(|v| *v == 0.0));
        let s = VectorField { dim: 2, values: vec![1.5; g.num_elements() * 2] };
        assert!(divergence(&s, &g).unwrap().values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_of_linear_is_exact() {
        let g = DomainGrid::new(1, 16).unwrap();
        let u = Field::from_fn(&g, |x| x[0]);
        for v in gradient(&u, &g).unwrap().values {
            assert!((v - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn sine_gradient_error_is_first_order() {
        let g = PeriodicCellGrid::new(1, 64).unwrap();
        let u = Field::from_fn(&g, |z| (TAU * z[0]).sin());
        let du = gradient(&u, &g).unwrap();
        // forward difference compared at the left node: error <= C h
        let h = g.spacing();
        let err = (0..64)
            .map(|i| (du.values[i] - TAU * (TAU * i as f64 * h).cos()).abs())
            .fold(0.0, f64::max);
        // truncation bound: h/2 max|u''| = h/2 (2 pi)^2
        assert!(err / h <= 25.0, "C = {}", err / h);
        assert!(err / h <= 0.5 * TAU * TAU + 1e-9);
    }

    #[test]
    fn divergence_of_linear_flux_on_domain() {
        // direct assembly on n = 16: backward difference of element-center values
        let g = DomainGrid::new(1, 16).unwrap();
        let h = g.spacing();
        let s = VectorField {
            dim: 1,
            values: (0..16).map(|e| (e as f64 + 0.5) * h).collect(),
        };
        let div = divergence(&s, &g).unwrap();
        for i in 1..16 {
            let direct = (s.values[i] - s.values[i - 1]) / h;
            assert!((div.values[i] - direct).abs() < 1e-12);
            assert!((div.values[i] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trigonometric_quadrature_is_exact() {
        let g = PeriodicCellGrid::new(1, 64).unwrap();
        let s = Field::from_fn(&g, |z| (TAU * z[0]).sin());
        assert!(cell_average(&s, &g).unwrap().abs() < 1e-14);
        let s2 = Field::from_fn(&g, |z| (TAU * z[0]).sin().powi(2));
        assert!((cell_average(&s2, &g).unwrap() - 0.5).abs() < 1e-14);
        let c = Field { values: vec![3.0; 64] };
        assert!((integrate(&c, &g).unwrap() - 3.0).abs() < 1e-14);
        let d2 = DomainGrid::new(2, 8).unwrap();
        let c2 = Field { values: vec![3.0; d2.num_nodes()] };
        assert!((integrate(&c2, &d2).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn zero_mean_projection() {
        let g = PeriodicCellGrid::new(1, 64).unwrap();
        let c = Field { values: vec![5.0; 64] };
        assert!(project_zero_mean(&c, &g).unwrap().values.iter().all(|v| v.abs() < 1e-14));
        let u = Field::from_fn(&g, |z| 2.0 + (TAU * z[0]).sin());
        let p = project_zero_mean(&u, &g).unwrap();
        for (i, v) in p.values.iter().enumerate() {
            assert!((v - (TAU * i as f64 / 64.0).sin()).abs() < 1e-14);
        }
        let pp = project_zero_mean(&p, &g).unwrap();
        for (a, b) in p.values.iter().zip(&pp.values) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn trace_examples() {
        let v = |x: &[f64], t: f64, _: &[f64], _: f64, _: &[f64]| x[0] + t;
        assert_eq!(trace_eval(v, 0.1, &[0.3], 0.2).unwrap(), 0.5);
        let vy = |_: &[f64], _: f64, y: &[f64], _: f64, _: &[f64]| (TAU * y[0]).sin();
        assert!(trace_eval(vy, 0.25, &[0.125], 0.0).unwrap().abs() < 1e-15);
        let vz = |_: &[f64], _: f64, _: &[f64], _: f64, z: &[f64]| (TAU * z[0]).cos();
        assert!((trace_eval(vz, 0.5, &[0.375], 0.0).unwrap() + 1.0).abs() < 1e-15);
        assert!(trace_eval(vz, 0.0, &[0.375], 0.0).is_err());
    }

    #[test]
    fn trace_is_periodic_in_fast_slot() {
        let eps = 0.125;
        let vy = |_: &[f64], _: f64, y: &[f64], _: f64, _: &[f64]| (TAU * y[0]).cos() + y[0];
        let a = trace_eval(vy, eps, &[0.3], 0.0).unwrap();
        let b = trace_eval(vy, eps, &[0.3 + eps], 0.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn mismatched_fields_are_rejected() {
        let g = PeriodicCellGrid::new(1, 8).unwrap();
        assert!(gradient(&Field { values: vec![0.0; 7] }, &g).is_err());
        assert!(divergence(&VectorField { dim: 1, values: vec![0.0; 9] }, &g).is_err());
    }

    #[test]
    fn prolongation_and_restriction() {
        let c = DomainGrid::new(2, 4).unwrap();
        let f = DomainGrid::new(2, 12).unwrap();
        let u = Field::from_fn(&c, |x| 1.0 + 2.0 * x[0] - x[1] + 3.0 * x[0] * x[1]);
        let fu = prolongate(&c, &u, &f).unwrap();
        let exact = Field::from_fn(&f, |x| 1.0 + 2.0 * x[0] - x[1] + 3.0 * x[0] * x[1]);
        for (a, b) in fu.values.iter().zip(&exact.values) {
            assert!((a - b).abs() < 1e-13);
        }
        assert_eq!(restrict(&f, &fu, &c).unwrap(), u);
        assert!(restrict(&DomainGrid::new(2, 10).unwrap(), &Field::zeros(&DomainGrid::new(2, 10).unwrap()), &c).is_err());
    }

    #[test]
    fn field_csv_round_trip() {
        for mesh in [DomainGrid::new(1, 5).unwrap(), DomainGrid::new(2, 3).unwrap()] {
            let u = Field::from_fn(&mesh, |x| (PI * x[0]).sin() + x.len() as f64);
            let mut buf = Vec::new();
            write_field_csv(&mesh, &u, &mut buf).unwrap();
            let head = String::from_utf8(buf.clone()).unwrap();
            assert!(head.starts_with(if mesh.dim() == 1 { "index,value" } else { "i,j,value" }));
            assert_eq!(read_field_csv(&mesh, buf.as_slice()).unwrap(), u);
        }
    }

    fn adjoint_defect<M: Mesh>(mesh: &M, seed: u64) -> (f64, f64) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let d = mesh.dim();
        let u: Vec<f64> = (0..mesh.num_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s: Vec<f64> = (0..mesh.num_elements() * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let du = gradient(&Field { values: u.clone() }, mesh).unwrap();
        let ds = divergence(&VectorField { dim: d, values: s.clone() }, mesh).unwrap();
        (dot_nodes(mesh, &ds.values, &u), -dot_elems(mesh, &s, &du.values))
    }

    proptest! {
        #[test]
        fn divergence_is_negative_adjoint(seed in 0u64..1000, dim in 1usize..=2, periodic: bool) {
            let n = 6 + (seed % 5) as usize;
            let (lhs, rhs) = if periodic {
                adjoint_defect(&PeriodicCellGrid::new(dim, n).unwrap(), seed)
            } else {
                adjoint_defect(&DomainGrid::new(dim, n).unwrap(), seed)
            };
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
