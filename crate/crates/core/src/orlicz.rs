//! N-functions, their conjugates and index bounds, and discrete Luxemburg norms.
//!
//! An [`NFunction`] is a convex growth profile `B` together with its
//! derivative `b`. Every norm reported by the toolkit is a Luxemburg norm
//! built on one of these.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

const BISECTION_RTOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;
const MAX_BRACKET_DOUBLINGS: usize = 2048;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Shape of an N-function.
#[derive(Clone)]
pub enum NKind {
    /// `B(t) = t^p / p`.
    Power { p: f64 },
    /// `B(t) = t^p ln(1 + t)`.
    PowerLog { p: f64 },
    /// User supplied `B` and `b`.
    Custom {
        label: String,
        eval: ScalarFn,
        deriv: ScalarFn,
    },
}

impl fmt::Debug for NKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NKind::Power { p } => write!(f, "Power {{ p: {p} }}"),
            NKind::PowerLog { p } => write!(f, "PowerLog {{ p: {p} }}"),
            NKind::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

/// A growth function `B` with derivative `b` and index bounds
/// `rho1 <= t b(t) / B(t) <= rho2`.
#[derive(Clone, Debug)]
pub struct NFunction {
    kind: NKind,
    rho1: f64,
    rho2: f64,
    rho0: Option<f64>,
}

impl NFunction {
    pub fn power(p: f64) -> Result<Self> {
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::Domain(format!("power N-function needs p > 1, got {p}")));
        }
        // t^2 <= B(rho0 t) for t >= 1 holds with rho0 = p^(1/p) as soon as p >= 2.
        let rho0 = if p >= 2.0 {
            Some(p.powf(1.0 / p))
        } else {
            log::warn!("power({p}): p < 2, no quadratic domination constant rho0");
            None
        };
        Ok(Self {
            kind: NKind::Power { p },
            rho1: p,
            rho2: p,
            rho0,
        })
    }

    pub fn power_log(p: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::Domain(format!("power-log N-function needs p >= 1, got {p}")));
        }
        // ratio = p + t / ((1 + t) ln(1 + t)), decreasing from p + 1 (t -> 0) to p (t -> inf)
        let rho0 = if p >= 2.0 {
            Some(2.0)
        } else {
            log::warn!("power-log({p}): p < 2, no quadratic domination constant rho0");
            None
        };
        Ok(Self {
            kind: NKind::PowerLog { p },
            rho1: p,
            rho2: p + 1.0,
            rho0,
        })
    }

    /// Builds an N-function from closures. `deriv` must be the derivative of `eval`.
    pub fn custom<E, D>(label: &str, eval: E, deriv: D, rho1: f64, rho2: f64) -> Result<Self>
    where
        E: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(rho1 > 1.0 && rho2 >= rho1) {
            return Err(Error::Domain(format!(
                "index bounds must satisfy 1 < rho1 <= rho2, got ({rho1}, {rho2})"
            )));
        }
        Ok(Self {
            kind: NKind::Custom {
                label: label.to_string(),
                eval: Arc::new(eval),
                deriv: Arc::new(deriv),
            },
            rho1,
            rho2,
            rho0: None,
        })
    }

    pub fn kind(&self) -> &NKind {
        &self.kind
    }

    pub fn rho1(&self) -> f64 {
        self.rho1
    }

    pub fn rho2(&self) -> f64 {
        self.rho2
    }

    pub fn rho0(&self) -> Option<f64> {
        self.rho0
    }

    /// Exponent of a pure power, if this is one.
    pub fn power_exponent(&self) -> Option<f64> {
        match self.kind {
            NKind::Power { p } => Some(p),
            _ => None,
        }
    }

    /// Whether the conjugate is known to satisfy the Delta-prime condition.
    /// `None` means no analytic certificate is shipped for this kind.
    pub fn conjugate_delta_prime(&self) -> Option<bool> {
        match self.kind {
            NKind::Power { .. } => Some(true),
            _ => None,
        }
    }

    /// `B(t)` for `t >= 0`.
    pub fn eval(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("N-function argument must be >= 0, got {t}")));
        }
        Ok(self.value(t))
    }

    /// `B(|t|)` without argument checks.
    pub fn value(&self, t: f64) -> f64 {
        let t = t.abs();
        match &self.kind {
            NKind::Power { p } => t.powf(*p) / p,
            NKind::PowerLog { p } => t.powf(*p) * t.ln_1p(),
            NKind::Custom { eval, .. } => eval(t),
        }
    }

    /// `b(t)`, extended as an odd function to negative arguments.
    pub fn deriv(&self, t: f64) -> f64 {
        let s = t.abs();
        let v = match &self.kind {
            NKind::Power { p } => s.powf(p - 1.0),
            NKind::PowerLog { p } => {
                p * s.powf(p - 1.0) * s.ln_1p() + s.powf(*p) / (1.0 + s)
            }
            NKind::Custom { deriv, .. } => deriv(s),
        };
        v.copysign(t)
    }

    /// `b'(t)` for `t >= 0`.
    pub fn deriv2(&self, t: f64) -> f64 {
        let t = t.abs();
        match &self.kind {
            NKind::Power { p } => (p - 1.0) * t.powf(p - 2.0),
            NKind::PowerLog { p } => {
                if t == 0.0 {
                    return if *p == 1.0 { 2.0 } else { 0.0 };
                }
                let l = t.ln_1p();
                p * (p - 1.0) * t.powf(p - 2.0) * l + 2.0 * p * t.powf(p - 1.0) / (1.0 + t)
                    - t.powf(*p) / ((1.0 + t) * (1.0 + t))
            }
            NKind::Custom { deriv, .. } => {
                let h = 1e-6 * t.max(1e-3);
                let lo = (t - h).max(0.0);
                (deriv(t + h) - deriv(lo)) / (t + h - lo)
            }
        }
    }

    /// Inverse of `b` on `[0, inf)`.
    pub fn deriv_inverse(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::Domain(format!("b^-1 argument must be >= 0, got {s}")));
        }
        if let NKind::Power { p } = self.kind {
            return Ok(s.powf(1.0 / (p - 1.0)));
        }
        invert_increasing(|t| self.deriv(t), s, "b")
    }

    /// Inverse of `B` on `[0, inf)`.
    pub fn inverse(&self, v: f64) -> Result<f64> {
        if !(v >= 0.0) {
            return Err(Error::Domain(format!("B^-1 argument must be >= 0, got {v}")));
        }
        if let NKind::Power { p } = self.kind {
            return Ok((p * v).powf(1.0 / p));
        }
        invert_increasing(|t| self.value(t), v, "B")
    }

    /// Conjugate `B~(s) = sup_t (t s - B(t))`.
    pub fn conjugate_eval(&self, s: f64) -> Result<f64> {
        if !(s >= 0.0) {
            return Err(Error::Domain(format!("conjugate argument must be >= 0, got {s}")));
        }
        if s == 0.0 {
            return Ok(0.0);
        }
        if let NKind::Power { p } = self.kind {
            let q = p / (p - 1.0);
            return Ok(s.powf(q) / q);
        }
        // the supremum is attained where b(t) = s
        let t = self.deriv_inverse(s)?;
        Ok((s * t - self.value(t)).max(0.0))
    }

    /// Inverse of the conjugate, `B~^-1(v)`.
    pub fn conjugate_inverse(&self, v: f64) -> Result<f64> {
        if !(v >= 0.0) {
            return Err(Error::Domain(format!("B~^-1 argument must be >= 0, got {v}")));
        }
        if let NKind::Power { p } = self.kind {
            let q = p / (p - 1.0);
            return Ok((q * v).powf(1.0 / q));
        }
        let mut err = None;
        let r = invert_increasing(
            |s| match self.conjugate_eval(s) {
                Ok(x) => x,
                Err(e) => {
                    err.get_or_insert(e);
                    f64::NAN
                }
            },
            v,
            "B~",
        );
        match err {
            Some(e) => Err(e),
            None => r,
        }
    }

    /// The complementary N-function as a numerically evaluated custom kind.
    pub fn conjugate(&self) -> NFunction {
        let primal = self.clone();
        let primal2 = self.clone();
        let rho1 = self.rho2 / (self.rho2 - 1.0);
        let rho2 = self.rho1 / (self.rho1 - 1.0);
        NFunction {
            kind: NKind::Custom {
                label: format!("conjugate of {:?}", self.kind),
                eval: Arc::new(move |s| primal.conjugate_eval(s).unwrap_or(f64::NAN)),
                deriv: Arc::new(move |s| primal2.deriv_inverse(s).unwrap_or(f64::NAN)),
            },
            rho1,
            rho2,
            rho0: None,
        }
    }

    /// Checks `B(0) = 0`, monotonicity, midpoint convexity and the index bounds on samples.
    pub fn validate(&self, samples: &[f64]) -> Result<()> {
        if self.value(0.0) != 0.0 {
            return Err(Error::Domain("B(0) != 0".into()));
        }
        let mut sorted: Vec<f64> = samples.iter().copied().filter(|t| *t > 0.0).collect();
        sorted.sort_by(f64::total_cmp);
        let mut prev = 0.0;
        for &t in &sorted {
            let v = self.value(t);
            if !(v > prev) {
                return Err(Error::Domain(format!("B is not strictly increasing at t = {t}")));
            }
            prev = v;
        }
        for w in sorted.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = self.value(0.5 * (a + b));
            let chord = 0.5 * (self.value(a) + self.value(b));
            if mid > chord * (1.0 + 1e-12) {
                return Err(Error::Domain(format!("B fails midpoint convexity on [{a}, {b}]")));
            }
        }
        let (lo, hi) = simonenko_indices(self, &sorted)?;
        let slack = 1e-9 * self.rho2;
        if lo < self.rho1 - slack || hi > self.rho2 + slack || !(self.rho1 > 1.0) {
            return Err(Error::Domain(format!(
                "index ratio range [{lo}, {hi}] not inside [{}, {}] with rho1 > 1",
                self.rho1, self.rho2
            )));
        }
        Ok(())
    }
}

/// The default sample set for sampled N-function checks: 64 log-spaced points in `[1e-6, 1e6]`.
pub fn default_index_samples() -> Vec<f64> {
    log_spaced(1e-6, 1e6, 64)
}

pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            let s = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            (a + s * (b - a)).exp()
        })
        .collect()
}

/// `B(t) = x` for an increasing `f` with `f(0) = 0`, by bracketing from `[0, 1]` and bisection.
fn invert_increasing<F: FnMut(f64) -> f64>(mut f: F, x: f64, what: &str) -> Result<f64> {
    if x == 0.0 {
        return Ok(0.0);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while f(hi) < x {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS || !hi.is_finite() {
            return Err(Error::Bracket(format!("{what}(t) never reaches {x}")));
        }
    }
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v.is_nan() {
            return Err(Error::NonFinite(format!("{what}({mid}) is NaN")));
        }
        if v < x {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= BISECTION_RTOL * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Minimum and maximum of `t b(t) / B(t)` over the samples.
pub fn simonenko_indices(nf: &NFunction, t_samples: &[f64]) -> Result<(f64, f64)> {
    if t_samples.is_empty() {
        return Err(Error::Domain("index estimation needs at least one sample".into()));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &t in t_samples {
        let big_b = nf.value(t);
        if !(t > 0.0) || big_b == 0.0 {
            return Err(Error::Domain(format!("index ratio undefined at t = {t}")));
        }
        let r = t * nf.deriv(t) / big_b;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok((lo, hi))
}

/// Nodal values with positive quadrature weights.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteField {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl DiscreteField {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if values.len() != weights.len() {
            return Err(Error::GridMismatch {
                expected: weights.len(),
                got: values.len(),
            });
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::Domain(format!("quadrature weights must be positive, got {w}")));
        }
        Ok(Self { values, weights })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| alpha * v).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// `sum_i w_i B(|u_i|)`.
pub fn modular(u: &DiscreteField, nf: &NFunction) -> f64 {
    u.values
        .iter()
        .zip(&u.weights)
        .map(|(v, w)| w * nf.value(*v))
        .sum()
}

/// Smallest `k > 0` with `sum_i w_i B(|u_i| / k) <= 1`.
pub fn luxemburg_norm(u: &DiscreteField, nf: &NFunction) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::Domain("Luxemburg norm of an empty field".into()));
    }
    let peak = u.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !peak.is_finite() {
        return Err(Error::NonFinite("field value".into()));
    }
    if peak == 0.0 {
        return Ok(0.0);
    }
    let modular_at = |k: f64| -> f64 {
        u.values
            .iter()
            .zip(&u.weights)
            .map(|(v, w)| w * nf.value(v / k))
            .sum()
    };
    let mut hi = peak;
    let mut guard = 0;
    while !(modular_at(hi) <= 1.0) {
        hi *= 2.0;
        guard += 1;
        if guard > MAX_BRACKET_DOUBLINGS {
            return Err(Error::Bracket("Luxemburg upper bracket".into()));
        }
    }
    let mut lo = hi;
    guard = 0;
    while modular_at(lo) <= 1.0 {
        lo *= 0.5;
        guard += 1;
        if guard > MAX_BRACKET_DOUBLINGS || lo == 0.0 {
            return Err(Error::Bracket("Luxemburg lower bracket".into()));
        }
    }
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo <= BISECTION_RTOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if modular_at(mid) <= 1.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_field(values: Vec<f64>) -> DiscreteField {
        let w = 1.0 / values.len() as f64;
        let n = values.len();
        DiscreteField::new(values, vec![w; n]).unwrap()
    }

    #[test]
    fn closed_form_values() {
        let p2 = NFunction::power(2.0).unwrap();
        assert_eq!(p2.eval(2.0).unwrap(), 2.0);
        assert_eq!(p2.eval(0.0).unwrap(), 0.0);
        let pl = NFunction::power_log(1.0).unwrap();
        assert!((pl.eval(1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(pl.eval(0.0).unwrap(), 0.0);
        assert!(matches!(p2.eval(-1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn conjugate_values() {
        let p2 = NFunction::power(2.0).unwrap();
        assert!((p2.conjugate_eval(3.0).unwrap() - 4.5).abs() < 1e-14);
        assert_eq!(p2.conjugate_eval(0.0).unwrap(), 0.0);

        // brute-force supremum of t s - t^3/3 at s = 1 over a fine grid
        let p3 = NFunction::power(3.0).unwrap();
        let brute = (0..=400_000)
            .map(|i| {
                let t = i as f64 * 1e-5;
                t - t * t * t / 3.0
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((brute - 2.0 / 3.0).abs() < 1e-9);
        assert!((p3.conjugate_eval(1.0).unwrap() - brute).abs() < 1e-9);
    }

    #[test]
    fn numerical_conjugate_matches_closed_form() {
        // route the power kind through the bisection path by wrapping it
        let generic = NFunction::custom("t^3/3", |t| t.powi(3) / 3.0, |t| t * t, 3.0, 3.0).unwrap();
        for s in [0.1f64, 1.0, 2.5, 10.0] {
            let exact = s.powf(1.5) / 1.5;
            let got = generic.conjugate_eval(s).unwrap();
            assert!((got - exact).abs() <= 1e-10 * exact.max(1.0), "s={s} got={got} exact={exact}");
        }
    }

    #[test]
    fn indices_of_power_are_exponent() {
        let p2 = NFunction::power(2.0).unwrap();
        assert_eq!(simonenko_indices(&p2, &default_index_samples()).unwrap(), (2.0, 2.0));
        let p = NFunction::power(3.5).unwrap();
        let (lo, hi) = simonenko_indices(&p, &[0.1, 1.0, 10.0]).unwrap();
        assert!((lo - 3.5).abs() < 1e-12 && (hi - 3.5).abs() < 1e-12);
    }

    #[test]
    fn indices_of_power_log() {
        let pl = NFunction::power_log(2.0).unwrap();
        let samples = log_spaced(1e-3, 1e3, 64);
        let (lo, hi) = simonenko_indices(&pl, &samples).unwrap();
        // independent evaluation of p + t / ((1 + t) ln(1 + t))
        let oracle: Vec<f64> = samples
            .iter()
            .map(|t| 2.0 + t / ((1.0 + t) * t.ln_1p()))
            .collect();
        let olo = oracle.iter().copied().fold(f64::INFINITY, f64::min);
        let ohi = oracle.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!((lo - olo).abs() < 1e-9 && (hi - ohi).abs() < 1e-9);
        assert!(lo > 2.0 && hi <= 3.0);
        pl.validate(&default_index_samples()).unwrap();
    }

    #[test]
    fn index_estimation_rejects_zero_sample() {
        let p2 = NFunction::power(2.0).unwrap();
        assert!(simonenko_indices(&p2, &[0.0, 1.0]).is_err());
        assert!(simonenko_indices(&p2, &[]).is_err());
    }

    #[test]
    fn luxemburg_closed_forms() {
        let p2 = NFunction::power(2.0).unwrap();
        let c = 3.7;
        let u = unit_field(vec![c; 10]);
        let k = luxemburg_norm(&u, &p2).unwrap();
        assert!((k - c / 2f64.sqrt()).abs() <= 1e-10 * c);
        assert_eq!(luxemburg_norm(&unit_field(vec![0.0; 4]), &p2).unwrap(), 0.0);
        assert!(luxemburg_norm(&unit_field(vec![]), &p2).is_err());
    }

    #[test]
    fn norm_sandwich_on_scaled_field() {
        let p = NFunction::power_log(2.0).unwrap();
        let mut u = unit_field(vec![0.3, -1.2, 2.0, 0.0, 0.7]);
        while luxemburg_norm(&u, &p).unwrap() <= 1.0 {
            u = u.scaled(2.0);
        }
        let k = luxemburg_norm(&u, &p).unwrap();
        let m = modular(&u, &p);
        assert!(k.powf(p.rho1()) <= m * (1.0 + 1e-9) && m <= k.powf(p.rho2()) * (1.0 + 1e-9));
    }

    #[test]
    fn young_inequality_on_grid() {
        for nf in [NFunction::power(3.0).unwrap(), NFunction::power_log(2.0).unwrap()] {
            for i in 0..32 {
                for j in 0..32 {
                    let t = 0.05 + 0.25 * i as f64;
                    let s = 0.05 + 0.4 * j as f64;
                    let rhs = nf.value(t) + nf.conjugate_eval(s).unwrap();
                    assert!(t * s <= rhs * (1.0 + 1e-12) + 1e-14, "t={t} s={s}");
                }
            }
        }
    }

    #[test]
    fn conjugate_involution() {
        let p3 = NFunction::power(3.0).unwrap();
        let back = p3.conjugate().conjugate();
        for t in [0.2, 1.0, 1.7, 4.0] {
            let exact = t * t * t / 3.0;
            let got = back.value(t);
            assert!((got - exact).abs() <= 1e-8 * exact.max(1.0), "t={t}: {got} vs {exact}");
        }
    }

    #[test]
    fn inverses_round_trip() {
        for nf in [NFunction::power(2.5).unwrap(), NFunction::power_log(1.5).unwrap()] {
            for t in [1e-3, 0.5, 3.0, 40.0] {
                let v = nf.value(t);
                assert!((nf.inverse(v).unwrap() - t).abs() <= 1e-10 * t);
                let s = nf.deriv(t);
                assert!((nf.deriv_inverse(s).unwrap() - t).abs() <= 1e-10 * t);
                let c = nf.conjugate_eval(s).unwrap();
                assert!((nf.conjugate_inverse(c).unwrap() - s).abs() <= 1e-9 * s);
            }
        }
    }

    #[test]
    fn power_below_two_has_no_rho0() {
        assert!(NFunction::power(1.5).unwrap().rho0().is_none());
        let r0 = NFunction::power(3.0).unwrap().rho0().unwrap();
        let p3 = NFunction::power(3.0).unwrap();
        for t in [1.0, 2.0, 10.0] {
            assert!(t * t <= p3.value(r0 * t) * (1.0 + 1e-12));
        }
        assert!(NFunction::power(1.0).is_err());
    }

    #[test]
    fn sandwich_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nf = NFunction::power_log(2.0).unwrap();
        for _ in 0..50 {
            let n = rng.gen_range(3..40);
            let scale = 10f64.powf(rng.gen_range(-2.0..2.0));
            let u = unit_field((0..n).map(|_| scale * rng.gen_range(-1.0..1.0)).collect());
            let k = luxemburg_norm(&u, &nf).unwrap();
            let m = modular(&u, &nf);
            let (r1, r2) = (nf.rho1(), nf.rho2());
            if k > 1.0 {
                assert!(k.powf(r1) <= m * (1.0 + 1e-9) && m <= k.powf(r2) * (1.0 + 1e-9));
            } else if k < 1.0 {
                assert!(k.powf(r2) <= m * (1.0 + 1e-9) && m <= k.powf(r1) * (1.0 + 1e-9));
            }
        }
    }

    proptest! {
        #[test]
        fn luxemburg_is_homogeneous(
            vals in prop::collection::vec(-5.0f64..5.0, 1..30),
            alpha in -20.0f64..20.0,
        ) {
            prop_assume!(alpha.abs() > 1e-3);
            prop_assume!(vals.iter().any(|v| v.abs() > 1e-6));
            let nf = NFunction::power_log(1.5).unwrap();
            let u = unit_field(vals);
            let k = luxemburg_norm(&u, &nf).unwrap();
            let ka = luxemburg_norm(&u.scaled(alpha), &nf).unwrap();
            prop_assert!((ka - alpha.abs() * k).abs() <= 1e-10 * ka);
        }
    }
}
