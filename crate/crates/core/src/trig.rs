//! Real trigonometric polynomials on the unit torus, used for periodic coefficients.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trig {
    #[default]
    Cos,
    Sin,
}

/// One term `amp * trig(2 pi (k . y + k_tau * tau))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    pub amp: f64,
    #[serde(default)]
    pub k: Vec<i32>,
    #[serde(default)]
    pub k_tau: i32,
    #[serde(default)]
    pub kind: Trig,
}

impl FourierMode {
    pub fn constant(amp: f64) -> Self {
        Self {
            amp,
            k: Vec::new(),
            k_tau: 0,
            kind: Trig::Cos,
        }
    }

    pub fn sin(amp: f64, k: &[i32]) -> Self {
        Self {
            amp,
            k: k.to_vec(),
            k_tau: 0,
            kind: Trig::Sin,
        }
    }

    pub fn cos(amp: f64, k: &[i32]) -> Self {
        Self {
            amp,
            k: k.to_vec(),
            k_tau: 0,
            kind: Trig::Cos,
        }
    }

    pub fn with_tau(mut self, k_tau: i32) -> Self {
        self.k_tau = k_tau;
        self
    }

    fn is_constant(&self) -> bool {
        self.k_tau == 0 && self.k.iter().all(|k| *k == 0)
    }
}

/// Wraps a coordinate into `[0, 1)`.
#[inline]
pub fn wrap_unit(x: f64) -> f64 {
    let r = x - x.floor();
    // x slightly below an integer can round up to exactly 1
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// A finite trigonometric sum; periodic by construction because every
/// argument is reduced into the unit cell before evaluation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrigPoly {
    modes: Vec<FourierMode>,
}

impl TrigPoly {
    pub fn new(modes: Vec<FourierMode>) -> Self {
        Self { modes }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(vec![FourierMode::constant(c)])
    }

    /// `a + b sin(2 pi k . y)`.
    pub fn offset_sin(a: f64, b: f64, k: &[i32]) -> Self {
        Self::new(vec![FourierMode::constant(a), FourierMode::sin(b, k)])
    }

    pub fn modes(&self) -> &[FourierMode] {
        &self.modes
    }

    pub fn with_mode(mut self, mode: FourierMode) -> Self {
        self.modes.push(mode);
        self
    }

    pub fn depends_on_tau(&self) -> bool {
        self.modes.iter().any(|m| m.k_tau != 0 && m.amp != 0.0)
    }

    pub fn is_constant(&self) -> bool {
        self.modes.iter().all(|m| m.is_constant() || m.amp == 0.0)
    }

    /// Largest spatial wave number in any direction (including fast time).
    pub fn max_frequency(&self) -> u32 {
        self.modes
            .iter()
            .flat_map(|m| m.k.iter().chain(std::iter::once(&m.k_tau)))
            .map(|k| k.unsigned_abs())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, y: &[f64], tau: f64) -> f64 {
        let tau = wrap_unit(tau);
        let mut acc = 0.0;
        for m in &self.modes {
            if m.is_constant() {
                if m.kind == Trig::Cos {
                    acc += m.amp;
                }
                continue;
            }
            let mut phase = m.k_tau as f64 * tau;
            for (k, yi) in m.k.iter().zip(y) {
                phase += *k as f64 * wrap_unit(*yi);
            }
            let arg = TAU * phase;
            acc += m.amp
                * match m.kind {
                    Trig::Cos => arg.cos(),
                    Trig::Sin => arg.sin(),
                };
        }
        acc
    }

    /// Guaranteed lower bound: constant part minus the absolute oscillating amplitudes.
    pub fn lower_bound(&self) -> f64 {
        self.bounds().0
    }

    pub fn upper_bound(&self) -> f64 {
        self.bounds().1
    }

    fn bounds(&self) -> (f64, f64) {
        let mut base = 0.0;
        let mut osc = 0.0;
        for m in &self.modes {
            if m.is_constant() {
                if m.kind == Trig::Cos {
                    base += m.amp;
                }
            } else {
                osc += m.amp.abs();
            }
        }
        (base - osc, base + osc)
    }

    /// Errors unless the polynomial is bounded below by a positive constant.
    pub fn require_positive(&self, what: &str) -> Result<()> {
        let lb = self.lower_bound();
        if lb > 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "coefficient {what} must be uniformly positive; guaranteed lower bound is {lb}"
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_offset_sine() {
        let p = TrigPoly::offset_sin(2.0, 1.0, &[1]);
        assert!((p.eval(&[0.25], 0.0) - 3.0).abs() < 1e-15);
        assert!((p.eval(&[0.75], 0.0) - 1.0).abs() < 1e-15);
        assert_eq!(p.lower_bound(), 1.0);
        assert_eq!(p.upper_bound(), 3.0);
        assert!(!p.depends_on_tau());
    }

    #[test]
    fn integer_shifts_are_bitwise_periodic_on_dyadic_points() {
        let p = TrigPoly::offset_sin(2.0, 0.7, &[1, 2]).with_mode(FourierMode::cos(0.2, &[0, 1]).with_tau(3));
        let y = [0.375, 0.8125];
        let base = p.eval(&y, 0.5);
        for s in -3..=3 {
            let sh = s as f64;
            assert_eq!(p.eval(&[y[0] + sh, y[1] - sh], 0.5 + sh), base);
        }
    }

    #[test]
    fn wrap_stays_in_unit_interval() {
        for x in [-1e-18, -0.5, 0.0, 0.999_999_999_999_999_9, 3.25, -7.0] {
            let w = wrap_unit(x);
            assert!((0.0..1.0).contains(&w), "{x} -> {w}");
        }
    }

    #[test]
    fn deserializes_from_toml_list() {
        #[derive(Deserialize)]
        struct Holder {
            c: TrigPoly,
        }
        let h: Holder = toml::from_str(
            "c = [{ amp = 2.0 }, { amp = 1.0, k = [1], kind = \"sin\" }]",
        )
        .unwrap();
        assert_eq!(h.c, TrigPoly::offset_sin(2.0, 1.0, &[1]));
    }
}
