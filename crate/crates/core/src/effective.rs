//! The mid-scale flux `h`, the effective flux `q`, and tabulated `q` for the
//! macroscopic solver.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{average_flux, homogenized_tangent, solve_cell, CorrectorSolution, InnerFlux, MidFlux, OuterFlux};
use crate::error::{Error, Result};
use crate::grid::{Mesh, PeriodicCellGrid};
use crate::operators::FluxOperator;
use crate::solver::NewtonOptions;

/// Resolution of cache keys; `h` is evaluated at the key's lattice point so a
/// cached value depends only on the key, never on query order.
pub const KEY_RESOLUTION: f64 = 1e-12;

/// The outer (`y`) and inner (`z`) cell grids and the fast-time quadrature size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellGrids {
    pub y: PeriodicCellGrid,
    pub z: PeriodicCellGrid,
    pub n_tau: usize,
}

impl CellGrids {
    pub fn new(dim: usize, n: usize, n_tau: usize) -> Result<Self> {
        if n_tau == 0 {
            return Err(Error::Config("n_tau must be at least 1".into()));
        }
        let g = PeriodicCellGrid::new(dim, n)?;
        Ok(Self { y: g, z: g, n_tau })
    }

    pub fn dim(&self) -> usize {
        self.y.dim()
    }

    /// Uniform fast-time nodes `k / n_tau`.
    pub fn tau_nodes(&self) -> Vec<f64> {
        (0..self.n_tau).map(|k| k as f64 / self.n_tau as f64).collect()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EffectiveParams {
    pub newton: NewtonOptions,
    /// Average `h` over fast time before the outer solve (the literal reading of the definition).
    pub literal_tau_average: bool,
}

#[derive(Clone, Debug)]
struct Entry {
    value: Vec<f64>,
    tangent: Option<Vec<f64>>,
}

/// Memoized inner solves for one operator and one `z` grid.
#[derive(Debug, Default)]
pub struct MidFluxCache {
    map: Mutex<HashMap<Vec<i64>, Entry>>,
    linear_tangent: OnceLock<Vec<f64>>,
    worst_residual: Mutex<f64>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl MidFluxCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    /// Largest relative residual over every inner solve performed so far.
    pub fn worst_residual(&self) -> f64 {
        *self.worst_residual.lock().expect("cache lock")
    }

    fn record(&self, r: f64) {
        let mut w = self.worst_residual.lock().expect("cache lock");
        if r > *w {
            *w = r;
        }
    }
}

fn quantize(v: f64) -> i64 {
    (v / KEY_RESOLUTION).round() as i64
}

fn dequantize(k: i64) -> f64 {
    k as f64 * KEY_RESOLUTION
}

/// `h(y, tau, xi)` backed by inner cell solves and a shared cache.
///
/// For separable operators `h = c(y, tau) H(xi)`, so the cache keys on `xi` alone;
/// for linear ones `H(xi) = T xi` with `T` from `d` unit solves.
pub struct MidFluxEvaluator<'a> {
    op: &'a FluxOperator,
    zgrid: &'a PeriodicCellGrid,
    opts: NewtonOptions,
    cache: &'a MidFluxCache,
}

impl<'a> MidFluxEvaluator<'a> {
    pub fn new(op: &'a FluxOperator, zgrid: &'a PeriodicCellGrid, opts: NewtonOptions, cache: &'a MidFluxCache) -> Result<Self> {
        if op.dim() != zgrid.dim() {
            return Err(Error::GridMismatch { expected: op.dim(), got: zgrid.dim() });
        }
        Ok(Self { op, zgrid, opts, cache })
    }

    fn inner_flux(&self, y: &[f64], tau: f64) -> Result<InnerFlux<'a>> {
        if self.op.is_separable() {
            InnerFlux::fast_part(self.op, self.zgrid)
        } else {
            InnerFlux::new(self.op, y, tau, self.zgrid)
        }
    }

    /// Inner corrector at the cache lattice point nearest `xi`, plus that point.
    pub fn inner_corrector(&self, y: &[f64], tau: f64, xi: &[f64]) -> Result<(CorrectorSolution, Vec<f64>)> {
        let xq: Vec<f64> = xi.iter().map(|v| dequantize(quantize(*v))).collect();
        let flux = self.inner_flux(y, tau)?;
        let sol = solve_cell(self.zgrid, &flux, &xq, &self.opts, None)?;
        Ok((sol, xq))
    }

    fn linear_tangent(&self) -> Result<&Vec<f64>> {
        if let Some(t) = self.cache.linear_tangent.get() {
            return Ok(t);
        }
        let d = self.op.dim();
        let flux = InnerFlux::fast_part(self.op, self.zgrid)?;
        let mut t = vec![0.0; d * d];
        for k in 0..d {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            let sol = solve_cell(self.zgrid, &flux, &e, &self.opts, None)?;
            self.cache.record(sol.residual_norm);
            let col = average_flux(self.zgrid, &flux, &e, &sol)?;
            for r in 0..d {
                t[r * d + k] = col[r];
            }
        }
        crate::operators::symmetrize(&mut t, d);
        Ok(self.cache.linear_tangent.get_or_init(|| t))
    }

    /// The `y`-independent factor (separable case) or the full value, with optional tangent.
    fn lookup(&self, y: &[f64], tau: f64, xi: &[f64], want_tangent: bool) -> Result<Entry> {
        let d = self.op.dim();
        let mut key: Vec<i64> = Vec::with_capacity(2 * d + 1);
        if !self.op.is_separable() {
            key.extend(y.iter().map(|v| quantize(*v)));
            key.push(quantize(tau));
        }
        key.extend(xi.iter().map(|v| quantize(*v)));
        if let Some(e) = self.cache.map.lock().expect("cache lock").get(&key) {
            if !want_tangent || e.tangent.is_some() {
                self.cache.hits.fetch_add(1, Ordering::Relaxed);
                return Ok(e.clone());
            }
        }
        self.cache.misses.fetch_add(1, Ordering::Relaxed);
        let (sol, xq) = self.inner_corrector(y, tau, xi).map_err(|e| Error::Sample {
            xi: xi.to_vec(),
            source: Box::new(e),
        })?;
        self.cache.record(sol.residual_norm);
        let flux = self.inner_flux(y, tau)?;
        let value = average_flux(self.zgrid, &flux, &xq, &sol)?;
        let tangent = if want_tangent {
            Some(homogenized_tangent(self.zgrid, &flux, &xq, &sol, &self.opts)?)
        } else {
            None
        };
        let entry = Entry { value, tangent };
        let mut map = self.cache.map.lock().expect("cache lock");
        let slot = map.entry(key).or_insert_with(|| entry.clone());
        if slot.tangent.is_none() && entry.tangent.is_some() {
            slot.tangent = entry.tangent.clone();
        }
        Ok(entry)
    }
}

impl MidFlux for MidFluxEvaluator<'_> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn h(&self, y: &[f64], tau: f64, xi: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.op.dim();
        let scale = self.op.slow_factor(y, tau).unwrap_or(1.0);
        if self.op.is_linear() {
            let t = self.linear_tangent()?;
            for r in 0..d {
                out[r] = scale * (0..d).map(|c| t[r * d + c] * xi[c]).sum::<f64>();
            }
            return Ok(());
        }
        let e = self.lookup(y, tau, xi, false)?;
        for r in 0..d {
            out[r] = scale * e.value[r];
        }
        Ok(())
    }

    fn h_tangent(&self, y: &[f64], tau: f64, xi: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        let d = self.op.dim();
        let scale = self.op.slow_factor(y, tau).unwrap_or(1.0);
        if self.op.is_linear() {
            self.h(y, tau, xi, out)?;
            let t = self.linear_tangent()?;
            for (j, v) in jac.iter_mut().zip(t) {
                *j = scale * v;
            }
            return Ok(());
        }
        let e = self.lookup(y, tau, xi, true)?;
        let t = e.tangent.expect("tangent requested");
        for r in 0..d {
            out[r] = scale * e.value[r];
        }
        for (j, v) in jac.iter_mut().zip(&t) {
            *j = scale * v;
        }
        Ok(())
    }

    fn symmetric(&self) -> bool {
        self.op.is_potential()
    }
}

/// `h` averaged over the fast-time nodes; the result no longer depends on `tau`.
pub struct TauAveraged<'a, H: MidFlux + ?Sized> {
    inner: &'a H,
    taus: Vec<f64>,
}

impl<'a, H: MidFlux + ?Sized> TauAveraged<'a, H> {
    pub fn new(inner: &'a H, taus: Vec<f64>) -> Self {
        Self { inner, taus }
    }
}

impl<H: MidFlux + ?Sized> MidFlux for TauAveraged<'_, H> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn h(&self, y: &[f64], _tau: f64, xi: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let mut tmp = vec![0.0; d];
        out.iter_mut().for_each(|v| *v = 0.0);
        for &t in &self.taus {
            self.inner.h(y, t, xi, &mut tmp)?;
            out.iter_mut().zip(&tmp).for_each(|(o, v)| *o += v / self.taus.len() as f64);
        }
        Ok(())
    }

    fn h_tangent(&self, y: &[f64], _tau: f64, xi: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let (mut tv, mut tj) = (vec![0.0; d], vec![0.0; d * d]);
        out.iter_mut().chain(jac.iter_mut()).for_each(|v| *v = 0.0);
        let m = self.taus.len() as f64;
        for &t in &self.taus {
            self.inner.h_tangent(y, t, xi, &mut tv, &mut tj)?;
            out.iter_mut().zip(&tv).for_each(|(o, v)| *o += v / m);
            jac.iter_mut().zip(&tj).for_each(|(o, v)| *o += v / m);
        }
        Ok(())
    }

    fn symmetric(&self) -> bool {
        self.inner.symmetric()
    }
}

/// `h(y, tau, xi)`: the `z`-average of the inner-corrected flux.
pub fn mid_flux_h(op: &FluxOperator, y: &[f64], tau: f64, xi: &[f64], zgrid: &PeriodicCellGrid, opts: &NewtonOptions, cache: &MidFluxCache) -> Result<Vec<f64>> {
    let ev = MidFluxEvaluator::new(op, zgrid, *opts, cache)?;
    let mut out = vec![0.0; op.dim()];
    ev.h(y, tau, xi, &mut out)?;
    Ok(out)
}

/// One evaluation of `q` with its worst outer residual.
#[derive(Clone, Debug)]
pub struct EffectiveValue {
    pub q: Vec<f64>,
    pub outer_residual: f64,
    pub outer_iterations: usize,
}

/// Fast-time nodes that actually need an outer solve.
pub fn outer_tau_nodes(op: &FluxOperator, grids: &CellGrids, params: &EffectiveParams) -> Vec<f64> {
    if params.literal_tau_average || !op.depends_on_tau() {
        vec![0.0]
    } else {
        grids.tau_nodes()
    }
}

/// Outer corrector at fast time `tau` and the `y`-average of `h(y, tau, xi + D pi_1)`.
pub fn outer_solve(op: &FluxOperator, xi: &[f64], tau: f64, grids: &CellGrids, params: &EffectiveParams, cache: &MidFluxCache) -> Result<(CorrectorSolution, Vec<f64>)> {
    let ev = MidFluxEvaluator::new(op, &grids.z, params.newton, cache)?;
    if params.literal_tau_average {
        let taus = if op.depends_on_tau() { grids.tau_nodes() } else { vec![0.0] };
        let avg = TauAveraged::new(&ev, taus);
        outer_with(&avg, xi, tau, grids, params)
    } else {
        outer_with(&ev, xi, tau, grids, params)
    }
}

fn outer_with<H: MidFlux>(h: &H, xi: &[f64], tau: f64, grids: &CellGrids, params: &EffectiveParams) -> Result<(CorrectorSolution, Vec<f64>)> {
    let flux = OuterFlux::new(h, tau, &grids.y)?;
    let sol = solve_cell(&grids.y, &flux, xi, &params.newton, None)?;
    let avg = average_flux(&grids.y, &flux, xi, &sol)?;
    Ok((sol, avg))
}

/// `q(xi)`: outer solve per fast-time node, `y`-average, then fast-time average.
pub fn effective_flux_q(op: &FluxOperator, xi: &[f64], grids: &CellGrids, params: &EffectiveParams, cache: &MidFluxCache) -> Result<EffectiveValue> {
    let d = op.dim();
    if xi.len() != d || grids.dim() != d {
        return Err(Error::GridMismatch { expected: d, got: xi.len() });
    }
    let taus = outer_tau_nodes(op, grids, params);
    let mut q = vec![0.0; d];
    let mut worst: f64 = 0.0;
    let mut iters = 0;
    for &tau in &taus {
        let (sol, avg) = outer_solve(op, xi, tau, grids, params, cache)?;
        worst = worst.max(sol.residual_norm);
        iters = iters.max(sol.iterations);
        q.iter_mut().zip(&avg).for_each(|(a, v)| *a += v / taus.len() as f64);
    }
    Ok(EffectiveValue {
        q,
        outer_residual: worst,
        outer_iterations: iters,
    })
}

/// What to do with queries outside the tabulated box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClampPolicy {
    #[default]
    Error,
    WarnClamp,
}

/// Provenance stored next to a table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableMetadata {
    pub dim: usize,
    pub half_width: f64,
    pub n_xi: usize,
    pub cell_n: usize,
    pub n_tau: usize,
    pub literal_tau_average: bool,
    pub operator: String,
    pub worst_inner_residual: f64,
    pub worst_outer_residual: f64,
}

/// `q` sampled on a tensor grid over `[-half_width, half_width]^d`, multilinear in between.
#[derive(Clone, Debug)]
pub struct EffectiveFluxTable {
    meta: TableMetadata,
    axis: Vec<f64>,
    values: Vec<f64>,
    policy: ClampPolicy,
}

impl EffectiveFluxTable {
    pub fn from_values(meta: TableMetadata, values: Vec<f64>) -> Result<Self> {
        check_box(meta.half_width, meta.n_xi)?;
        let expected = meta.n_xi.pow(meta.dim as u32) * meta.dim;
        if values.len() != expected {
            return Err(Error::GridMismatch { expected, got: values.len() });
        }
        let axis = axis_points(meta.half_width, meta.n_xi);
        Ok(Self {
            meta,
            axis,
            values,
            policy: ClampPolicy::Error,
        })
    }

    pub fn with_policy(mut self, policy: ClampPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn metadata(&self) -> &TableMetadata {
        &self.meta
    }

    pub fn dim(&self) -> usize {
        self.meta.dim
    }

    pub fn half_width(&self) -> f64 {
        self.meta.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.meta.half_width / (self.meta.n_xi - 1) as f64
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    pub fn num_samples(&self) -> usize {
        self.meta.n_xi.pow(self.meta.dim as u32)
    }

    /// Sample point `s` (first axis fastest).
    pub fn sample_point(&self, s: usize) -> Vec<f64> {
        sample_point(&self.axis, self.meta.dim, s)
    }

    pub fn sample_value(&self, s: usize) -> &[f64] {
        let d = self.meta.dim;
        &self.values[s * d..(s + 1) * d]
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.meta.n_xi;
        let mut t = (x + self.meta.half_width) / self.spacing();
        let r = t.round();
        if (t - r).abs() < 1e-9 {
            t = r;
        }
        let t = t.clamp(0.0, (n - 1) as f64);
        let i = (t.floor() as usize).min(n - 2);
        (i, t - i as f64)
    }

    /// Multilinear interpolation; exact at samples.
    pub fn interp(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let d = self.meta.dim;
        if xi.len() != d {
            return Err(Error::GridMismatch { expected: d, got: xi.len() });
        }
        let hw = self.meta.half_width;
        let slack = 1e-12 * hw;
        let outside = xi.iter().any(|v| !(v.abs() <= hw + slack));
        if outside {
            match self.policy {
                ClampPolicy::Error => {
                    return Err(Error::OutOfTable {
                        point: xi.to_vec(),
                        half_width: hw,
                    })
                }
                ClampPolicy::WarnClamp => {
                    if xi.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!("table query {xi:?}")));
                    }
                    log::warn!("clamping {xi:?} into the tabulated box of half-width {hw}");
                }
            }
        }
        let n = self.meta.n_xi;
        let mut out = vec![0.0; d];
        if d == 1 {
            let (i, f) = self.locate(xi[0]);
            out[0] = (1.0 - f) * self.values[i] + f * self.values[i + 1];
        } else {
            let (i, fx) = self.locate(xi[0]);
            let (j, fy) = self.locate(xi[1]);
            let corners = [
                ((1.0 - fx) * (1.0 - fy), i + n * j),
                (fx * (1.0 - fy), i + 1 + n * j),
                ((1.0 - fx) * fy, i + n * (j + 1)),
                (fx * fy, i + 1 + n * (j + 1)),
            ];
            for (w, s) in corners {
                for c in 0..2 {
                    out[c] += w * self.values[s * 2 + c];
                }
            }
        }
        Ok(out)
    }

    /// Central differences of the interpolant with step half the table spacing,
    /// pulled inside the box near its faces.
    pub fn tangent(&self, xi: &[f64]) -> Result<Vec<f64>> {
        let d = self.meta.dim;
        let step = 0.5 * self.spacing();
        let hw = self.meta.half_width;
        let mut jac = vec![0.0; d * d];
        for k in 0..d {
            let mut p = xi.to_vec();
            let mut m = xi.to_vec();
            p[k] = (xi[k] + step).min(hw);
            m[k] = (xi[k] - step).max(-hw);
            let width = p[k] - m[k];
            if !(width > 0.0) {
                return Err(Error::OutOfTable {
                    point: xi.to_vec(),
                    half_width: hw,
                });
            }
            let (qp, qm) = (self.interp(&p)?, self.interp(&m)?);
            for r in 0..d {
                jac[r * d + k] = (qp[r] - qm[r]) / width;
            }
        }
        Ok(jac)
    }

    /// Smallest `(q(a) - q(b)) . (a - b)` over grid-neighbour pairs.
    pub fn neighbor_monotonicity(&self) -> f64 {
        let d = self.meta.dim;
        let n = self.meta.n_xi;
        let mut worst = f64::INFINITY;
        for s in 0..self.num_samples() {
            let idx = [s % n, s / n];
            for k in 0..d {
                if idx[k] + 1 >= n {
                    continue;
                }
                let t = if k == 0 { s + 1 } else { s + n };
                let (a, b) = (self.sample_point(t), self.sample_point(s));
                let v: f64 = (0..d).map(|c| (self.sample_value(t)[c] - self.sample_value(s)[c]) * (a[c] - b[c])).sum();
                worst = worst.min(v);
            }
        }
        worst
    }

    /// Writes `xi_1[,xi_2],q_1[,q_2]` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let d = self.meta.dim;
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (1..=d).map(|k| format!("xi_{k}")).collect();
        header.extend((1..=d).map(|k| format!("q_{k}")));
        w.write_record(&header)?;
        for s in 0..self.num_samples() {
            let mut row: Vec<String> = self.sample_point(s).iter().map(|v| v.to_string()).collect();
            row.extend(self.sample_value(s).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_metadata<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.meta)?;
        Ok(())
    }

    /// Reads a table back from its CSV and metadata sidecar.
    pub fn read<R1: Read, R2: Read>(csv_in: R1, meta_in: R2) -> Result<Self> {
        let meta: TableMetadata = serde_json::from_reader(meta_in)?;
        check_box(meta.half_width, meta.n_xi)?;
        let d = meta.dim;
        let axis = axis_points(meta.half_width, meta.n_xi);
        let count = meta.n_xi.pow(d as u32);
        let mut values = Vec::with_capacity(count * d);
        let mut r = csv::Reader::from_reader(csv_in);
        for (s, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != 2 * d || s >= count {
                return Err(Error::Config(format!("table row {s} has the wrong shape")));
            }
            let parse = |k: usize| rec[k].trim().parse::<f64>().map_err(|e| Error::Config(format!("table row {s}: {e}")));
            let point = sample_point(&axis, d, s);
            for k in 0..d {
                if (parse(k)? - point[k]).abs() > 1e-9 * meta.half_width {
                    return Err(Error::Config(format!("table row {s} is not on the sample grid")));
                }
            }
            for k in 0..d {
                values.push(parse(d + k)?);
            }
        }
        Self::from_values(meta, values)
    }
}

fn check_box(half_width: f64, n_xi: usize) -> Result<()> {
    if !(half_width > 0.0) || !half_width.is_finite() {
        return Err(Error::Config(format!("table half-width must be positive, got {half_width}")));
    }
    if n_xi < 2 {
        return Err(Error::Config(format!("table needs at least 2 samples per axis, got {n_xi}")));
    }
    Ok(())
}

pub(crate) fn axis_points(half_width: f64, n: usize) -> Vec<f64> {
    let m = (n - 1) as f64;
    (0..n).map(|i| half_width * (2.0 * i as f64 - m) / m).collect()
}

pub(crate) fn sample_point(axis: &[f64], d: usize, s: usize) -> Vec<f64> {
    let n = axis.len();
    if d == 1 {
        vec![axis[s]]
    } else {
        vec![axis[s % n], axis[s / n]]
    }
}

/// Tabulates `q` on `[-half_width, half_width]^d` with `n_xi` samples per axis,
/// in parallel over samples.
pub fn tabulate_q(op: &FluxOperator, half_width: f64, n_xi: usize, grids: &CellGrids, params: &EffectiveParams, cache: &MidFluxCache) -> Result<EffectiveFluxTable> {
    check_box(half_width, n_xi)?;
    if n_xi.is_multiple_of(2) {
        return Err(Error::Config(format!("n_xi must be odd so that 0 is a sample, got {n_xi}")));
    }
    let d = op.dim();
    let axis = axis_points(half_width, n_xi);
    let count = n_xi.pow(d as u32);
    let results: Vec<EffectiveValue> = (0..count)
        .into_par_iter()
        .map(|s| {
            let xi = sample_point(&axis, d, s);
            effective_flux_q(op, &xi, grids, params, cache).map_err(|e| Error::Sample { xi, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let worst_outer = results.iter().map(|r| r.outer_residual).fold(0.0, f64::max);
    let values = results.into_iter().flat_map(|r| r.q).collect();
    let meta = TableMetadata {
        dim: d,
        half_width,
        n_xi,
        cell_n: grids.y.n(),
        n_tau: grids.n_tau,
        literal_tau_average: params.literal_tau_average,
        operator: format!("{op:?}"),
        worst_inner_residual: cache.worst_residual(),
        worst_outer_residual: worst_outer,
    };
    EffectiveFluxTable::from_values(meta, values)
}

/// `q` evaluated pointwise, for callers that bypass the table.
pub fn interp_q(table: &EffectiveFluxTable, xi: &[f64]) -> Result<Vec<f64>> {
    table.interp(xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::DEFAULT_DELTA;
    use crate::orlicz::NFunction;
    use crate::trig::{FourierMode, TrigPoly};

    fn osc() -> TrigPoly {
        TrigPoly::offset_sin(2.0, 1.0, &[1])
    }

    fn params() -> EffectiveParams {
        EffectiveParams::default()
    }

    #[test]
    fn identity_gives_identity() {
        let op = FluxOperator::identity(1).unwrap();
        let grids = CellGrids::new(1, 32, 4).unwrap();
        let cache = MidFluxCache::new();
        let h = mid_flux_h(&op, &[0.3], 0.0, &[1.7], &grids.z, &NewtonOptions::default(), &cache).unwrap();
        assert!((h[0] - 1.7).abs() < 1e-14);
        let q = effective_flux_q(&op, &[-0.6], &grids, &params(), &cache).unwrap();
        assert!((q.q[0] + 0.6).abs() < 1e-14);
        let t = tabulate_q(&op, 2.0, 5, &grids, &params(), &cache).unwrap();
        for s in 0..5 {
            assert!((t.sample_value(s)[0] - t.sample_point(s)[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_mid_flux_is_harmonic_mean() {
        let op = FluxOperator::linear_separable(1, TrigPoly::constant(1.0), osc()).unwrap();
        let g = PeriodicCellGrid::new(1, 256).unwrap();
        let cache = MidFluxCache::new();
        let h = mid_flux_h(&op, &[0.4], 0.0, &[1.0], &g, &NewtonOptions::default(), &cache).unwrap();
        assert!((h[0] - 3f64.sqrt()).abs() < 1e-4);
        assert_eq!(mid_flux_h(&op, &[0.4], 0.0, &[0.0], &g, &NewtonOptions::default(), &cache).unwrap(), vec![0.0]);
    }

    #[test]
    fn cubic_mid_flux_is_cached_and_deterministic() {
        let op = FluxOperator::power_law(1, NFunction::power(3.0).unwrap(), osc(), osc(), DEFAULT_DELTA).unwrap();
        let g = PeriodicCellGrid::new(1, 64).unwrap();
        let cache = MidFluxCache::new();
        let o = NewtonOptions::default();
        let a = mid_flux_h(&op, &[0.25], 0.0, &[0.8], &g, &o, &cache).unwrap();
        let b = mid_flux_h(&op, &[0.25], 0.0, &[0.8 + 1e-14], &g, &o, &cache).unwrap();
        assert_eq!(a, b);
        assert_eq!(cache.hits(), 1);
        // separable: the slow factor just scales
        let c = mid_flux_h(&op, &[0.75], 0.0, &[0.8], &g, &o, &cache).unwrap();
        assert!((a[0] / 3.0 - c[0] / 1.0).abs() < 1e-14);
    }

    #[test]
    fn reiterated_linear_q_is_three() {
        let op = FluxOperator::linear_separable(1, osc(), osc()).unwrap();
        let grids = CellGrids::new(1, 256, 8).unwrap();
        let cache = MidFluxCache::new();
        let q = effective_flux_q(&op, &[1.0], &grids, &params(), &cache).unwrap();
        assert!((q.q[0] - 3.0).abs() < 1e-3, "{}", q.q[0]);
        let q2 = effective_flux_q(&op, &[-0.7], &grids, &params(), &cache).unwrap();
        assert!((q2.q[0] + 0.7 * q.q[0]).abs() < 1e-8);
    }

    #[test]
    fn tau_dependent_slow_factor_is_averaged() {
        // c = 2 + sin(2 pi tau): for each tau the outer problem is homogeneous
        let c = TrigPoly::new(vec![FourierMode::constant(2.0), FourierMode { amp: 1.0, k: vec![0], k_tau: 1, kind: crate::trig::Trig::Sin }]);
        let op = FluxOperator::linear_separable(1, c, TrigPoly::constant(1.0)).unwrap();
        let grids = CellGrids::new(1, 16, 8).unwrap();
        let cache = MidFluxCache::new();
        let q = effective_flux_q(&op, &[1.0], &grids, &params(), &cache).unwrap();
        assert!((q.q[0] - 2.0).abs() < 1e-12);
        let lit = EffectiveParams { literal_tau_average: true, ..params() };
        let ql = effective_flux_q(&op, &[1.0], &grids, &lit, &cache).unwrap();
        assert!((ql.q[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn literal_average_differs_when_slow_coefficient_mixes_y_and_tau() {
        // c(y, tau) = 2 + sin(2 pi (y + tau)): per-tau harmonic means vs harmonic mean of the tau-average
        let c = TrigPoly::new(vec![FourierMode::constant(2.0), FourierMode { amp: 1.0, k: vec![1], k_tau: 1, kind: crate::trig::Trig::Sin }]);
        let op = FluxOperator::linear_separable(1, c, TrigPoly::constant(1.0)).unwrap();
        let grids = CellGrids::new(1, 64, 8).unwrap();
        let cache = MidFluxCache::new();
        let q = effective_flux_q(&op, &[1.0], &grids, &params(), &cache).unwrap().q[0];
        let lit = EffectiveParams { literal_tau_average: true, ..params() };
        let ql = effective_flux_q(&op, &[1.0], &grids, &lit, &cache).unwrap().q[0];
        assert!((q - 3f64.sqrt()).abs() < 1e-3, "{q}");
        assert!((ql - 2.0).abs() < 1e-10, "{ql}");
    }

    fn linear_table() -> EffectiveFluxTable {
        let meta = TableMetadata {
            dim: 1,
            half_width: 2.0,
            n_xi: 5,
            cell_n: 0,
            n_tau: 1,
            literal_tau_average: false,
            operator: "test".into(),
            worst_inner_residual: 0.0,
            worst_outer_residual: 0.0,
        };
        EffectiveFluxTable::from_values(meta, vec![-6.0, -3.0, 0.0, 3.0, 6.0]).unwrap()
    }

    #[test]
    fn interpolation_properties() {
        let t = linear_table();
        for s in 0..5 {
            assert_eq!(t.interp(&t.sample_point(s)).unwrap(), t.sample_value(s));
        }
        assert!((t.interp(&[0.5]).unwrap()[0] - 1.5).abs() < 1e-15);
        for x in [-1.93, -0.2, 0.77, 1.999] {
            assert!((t.interp(&[x]).unwrap()[0] - 3.0 * x).abs() < 1e-14);
            assert!((t.tangent(&[x]).unwrap()[0] - 3.0).abs() < 1e-12);
        }
        assert!(matches!(t.interp(&[2.5]), Err(Error::OutOfTable { .. })));
        let c = t.clone().with_policy(ClampPolicy::WarnClamp);
        assert_eq!(c.interp(&[2.5]).unwrap(), vec![6.0]);
        assert!(t.neighbor_monotonicity() > 0.0);
    }

    #[test]
    fn table_round_trips_through_csv() {
        let op = FluxOperator::linear_separable(2, TrigPoly::constant(1.0), TrigPoly::offset_sin(2.0, 1.0, &[1, 0])).unwrap();
        let grids = CellGrids::new(2, 8, 1).unwrap();
        let cache = MidFluxCache::new();
        let t = tabulate_q(&op, 1.0, 3, &grids, &params(), &cache).unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        t.write_csv(&mut a).unwrap();
        t.write_metadata(&mut b).unwrap();
        assert!(String::from_utf8(a.clone()).unwrap().starts_with("xi_1,xi_2,q_1,q_2"));
        let back = EffectiveFluxTable::read(a.as_slice(), b.as_slice()).unwrap();
        for s in 0..9 {
            assert_eq!(back.sample_value(s), t.sample_value(s));
        }
        // a linear q is reproduced exactly off-grid
        let direct = effective_flux_q(&op, &[0.31, -0.62], &grids, &params(), &cache).unwrap().q;
        let interp = t.interp(&[0.31, -0.62]).unwrap();
        for c in 0..2 {
            assert!((direct[c] - interp[c]).abs() < 1e-12);
        }
        assert!(tabulate_q(&op, 1.0, 4, &grids, &params(), &cache).is_err());
    }
}
