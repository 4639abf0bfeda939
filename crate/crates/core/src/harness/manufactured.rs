//! Manufactured solutions for the constant-coefficient problem
//! `du/dt - kappa lap u = f`, used to measure the discretization orders.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::grid::{DomainGrid, Mesh, TimeGrid};
use crate::harness::config::ExperimentConfig;
use crate::harness::report::ManufacturedRow;
use crate::pde::{march, LinearLaw, Source};
use crate::solver::NewtonOptions;

/// Smallest acceptable observed orders.
pub const MIN_ORDER_SPACE: f64 = 1.8;
pub const MIN_ORDER_TIME: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// `u = prod sin(pi x_i) (1 - e^{-t})`.
    SineDecay,
    /// `u = t prod x_i (1 - x_i)`, reproduced exactly by the 1D scheme.
    Polynomial,
}

impl Profile {
    pub fn exact(self, x: &[f64], t: f64) -> f64 {
        match self {
            Profile::SineDecay => sines(x) * (1.0 - (-t).exp()),
            Profile::Polynomial => t * x.iter().map(|v| v * (1.0 - v)).product::<f64>(),
        }
    }

    /// The right-hand side that makes `exact` a solution.
    pub fn source(self, kappa: f64) -> Source {
        match self {
            Profile::SineDecay => Source::function(move |x, t| {
                let s = sines(x);
                s * (-t).exp() + kappa * x.len() as f64 * PI * PI * (1.0 - (-t).exp()) * s
            }),
            Profile::Polynomial => Source::function(move |x, t| {
                let p: Vec<f64> = x.iter().map(|v| v * (1.0 - v)).collect();
                let all: f64 = p.iter().product();
                // -lap(t prod p_i) = 2 t sum_i prod_{j != i} p_j
                let lap: f64 = (0..p.len()).map(|i| p.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, v)| v).product::<f64>()).sum();
                all + 2.0 * kappa * t * lap
            }),
        }
    }
}

fn sines(x: &[f64]) -> f64 {
    x.iter().map(|v| (PI * v).sin()).product()
}

/// Max nodal error over all time levels.
pub fn max_error(d: usize, n: usize, steps: usize, horizon: f64, kappa: f64, profile: Profile, opts: &NewtonOptions) -> Result<f64> {
    let grid = DomainGrid::new(d, n)?;
    let time = TimeGrid::new(horizon, steps)?;
    let hist = march(&grid, &time, &LinearLaw { dim: d, kappa }, &profile.source(kappa), opts, None, None)?;
    let mut x = vec![0.0; d];
    let mut err: f64 = 0.0;
    for (m, u) in hist.states.iter().enumerate() {
        let t = time.time(m);
        for (i, v) in u.values.iter().enumerate() {
            grid.node_coords(i, &mut x);
            err = err.max((v - profile.exact(&x, t)).abs());
        }
    }
    Ok(err)
}

/// Errors along a refinement ladder with observed orders between consecutive rungs.
pub fn ladder_errors(d: usize, ladder: &[(usize, usize)], horizon: f64, kappa: f64, profile: Profile, opts: &NewtonOptions) -> Result<Vec<ManufacturedRow>> {
    let mut rows: Vec<ManufacturedRow> = Vec::with_capacity(ladder.len());
    for &(n, m) in ladder {
        let max_err = max_error(d, n, m, horizon, kappa, profile, opts)?;
        let (order_s, order_t) = match rows.last() {
            Some(p) => {
                let r = (p.max_err / max_err).ln();
                (Some(r / (n as f64 / p.n as f64).ln()), Some(r / (m as f64 / p.m as f64).ln()))
            }
            None => (None, None),
        };
        rows.push(ManufacturedRow { n, m, max_err, order_s, order_t });
    }
    Ok(rows)
}

/// Runs the configured ladder and asserts the observed orders.
pub fn run_manufactured(cfg: &ExperimentConfig) -> Result<Vec<ManufacturedRow>> {
    let rows = manufactured_rows(cfg)?;
    check_orders(&rows)?;
    Ok(rows)
}

/// The configured ladder without the order assertion.
pub fn manufactured_rows(cfg: &ExperimentConfig) -> Result<Vec<ManufacturedRow>> {
    cfg.validate()?;
    let ladder = &cfg.manufactured.ladder;
    if ladder.len() < 2 || ladder.windows(2).any(|w| w[1].0 <= w[0].0 || w[1].1 <= w[0].1) {
        return Err(Error::Config(format!("manufactured.ladder needs at least two strictly refining rungs, got {ladder:?}")));
    }
    ladder_errors(cfg.grid.d, ladder, cfg.grid.horizon, cfg.manufactured.kappa, Profile::SineDecay, &cfg.newton())
}

/// Fails with an assertion error when an observed order falls below its threshold.
pub fn check_orders(rows: &[ManufacturedRow]) -> Result<()> {
    for r in rows {
        if let (Some(s), Some(t)) = (r.order_s, r.order_t) {
            if s < MIN_ORDER_SPACE || t < MIN_ORDER_TIME {
                return Err(Error::Assertion(format!(
                    "observed orders at n = {}, M = {}: space {s:.3} (need {MIN_ORDER_SPACE}), time {t:.3} (need {MIN_ORDER_TIME})",
                    r.n, r.m
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> NewtonOptions {
        NewtonOptions::default()
    }

    #[test]
    fn polynomial_profile_is_reproduced_exactly() {
        let e = max_error(1, 16, 8, 1.0, 1.5, Profile::Polynomial, &opts()).unwrap();
        assert!(e < 1e-12, "error {e}");
    }

    #[test]
    fn default_ladder_meets_the_orders() {
        let rows = run_manufactured(&ExperimentConfig::default()).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows[0].order_s.is_none());
        for r in &rows[1..] {
            assert!(r.order_s.unwrap() >= MIN_ORDER_SPACE && r.order_t.unwrap() >= MIN_ORDER_TIME, "{r:?}");
        }
    }

    #[test]
    fn doubling_kappa_keeps_the_orders() {
        let ladder = [(32, 32), (64, 128), (128, 512)];
        let one = ladder_errors(1, &ladder, 1.0, 1.0, Profile::SineDecay, &opts()).unwrap();
        let two = ladder_errors(1, &ladder, 1.0, 2.0, Profile::SineDecay, &opts()).unwrap();
        for (a, b) in one.iter().zip(&two).skip(1) {
            assert!((a.order_s.unwrap() - b.order_s.unwrap()).abs() <= 0.1, "{a:?} {b:?}");
            assert!((a.order_t.unwrap() - b.order_t.unwrap()).abs() <= 0.1, "{a:?} {b:?}");
        }
    }

    #[test]
    fn zero_source_keeps_the_zero_state() {
        let grid = DomainGrid::new(1, 16).unwrap();
        let time = TimeGrid::new(1.0, 8).unwrap();
        let h = march(&grid, &time, &LinearLaw { dim: 1, kappa: 1.0 }, &Source::Zero, &opts(), None, None).unwrap();
        assert!(h.states.iter().all(|u| u.max_abs() == 0.0));
    }

    #[test]
    fn two_dimensional_ladder_converges() {
        let rows = ladder_errors(2, &[(8, 8), (16, 32)], 1.0, 1.0, Profile::SineDecay, &opts()).unwrap();
        assert!(rows[1].max_err < rows[0].max_err / 3.0, "{rows:?}");
    }

    #[test]
    fn degenerate_ladders_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.manufactured.ladder = vec![(32, 32)];
        assert_eq!(run_manufactured(&cfg).unwrap_err().exit_code(), 4);
    }
}
