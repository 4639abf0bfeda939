//! The oscillating monotone flux `a(y, tau, z, lambda)` and sampled checks of its structural axioms.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::orlicz::NFunction;
use crate::trig::TrigPoly;

/// Default regularization of `|lambda|` in power laws.
pub const DEFAULT_DELTA: f64 = 1e-8;

type FluxFn = Arc<dyn Fn(&[f64], f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;

/// Constants of the monotonicity and growth axioms, relative to a reference N-function.
///
/// `None` means no constant exists (or none is shipped) for this operator and N-function.
#[derive(Clone, Debug)]
pub struct AxiomConstants {
    pub c0: Option<f64>,
    pub c1: f64,
    pub c2: Option<f64>,
}

#[derive(Clone)]
enum Law {
    Linear,
    Power { nf: NFunction },
    Custom {
        label: String,
        eval: FluxFn,
        jac: Option<FluxFn>,
        potential: bool,
        tau_dependent: bool,
    },
}

impl fmt::Debug for Law {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Law::Linear => write!(f, "Linear"),
            Law::Power { nf } => write!(f, "Power({:?})", nf.kind()),
            Law::Custom { label, .. } => write!(f, "Custom({label})"),
        }
    }
}

/// A monotone flux, periodic in its three fast arguments.
///
/// The canonical argument order is `(y, tau, z, lambda)`. Built-in kinds are
/// separable: `a = c(y, tau) * gamma(z) * g(lambda)`.
#[derive(Clone, Debug)]
pub struct FluxOperator {
    dim: usize,
    law: Law,
    c: TrigPoly,
    gamma: TrigPoly,
    delta: f64,
    constants: AxiomConstants,
    reference: NFunction,
}

impl FluxOperator {
    /// `a = c(y, tau) gamma(z) lambda`.
    pub fn linear_separable(dim: usize, c: TrigPoly, gamma: TrigPoly) -> Result<Self> {
        check_dim(dim)?;
        c.require_positive("c")?;
        gamma.require_positive("gamma")?;
        let (lo, hi) = (c.lower_bound() * gamma.lower_bound(), c.upper_bound() * gamma.upper_bound());
        // with B(t) = t^2 / 2: c gamma |d|^2 >= 2 lo B(|d|), and B~^-1(B(t)) = t
        let constants = AxiomConstants {
            c0: Some(hi),
            c1: 1.0,
            c2: Some(2.0 * lo),
        };
        Ok(Self {
            dim,
            law: Law::Linear,
            c,
            gamma,
            delta: 0.0,
            constants,
            reference: NFunction::power(2.0)?,
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::linear_separable(dim, TrigPoly::constant(1.0), TrigPoly::constant(1.0))
    }

    /// `a = c(y, tau) gamma(z) b(|lambda|_delta) lambda / |lambda|_delta` with
    /// `|lambda|_delta = sqrt(|lambda|^2 + delta^2)`.
    pub fn power_law(dim: usize, nf: NFunction, c: TrigPoly, gamma: TrigPoly, delta: f64) -> Result<Self> {
        check_dim(dim)?;
        c.require_positive("c")?;
        gamma.require_positive("gamma")?;
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::Config(format!("regularization delta must be >= 0, got {delta}")));
        }
        let (lo, hi) = (c.lower_bound() * gamma.lower_bound(), c.upper_bound() * gamma.upper_bound());
        let constants = match nf.power_exponent() {
            Some(p) => {
                // |x|^{p-2}x is strongly monotone w.r.t. t^p/p only for p >= 2 and
                // (p-1)-Hoelder only for p <= 2.
                let c2 = (p >= 2.0).then(|| p * 2f64.powf(2.0 - p) * lo);
                let c0 = (p <= 2.0).then(|| hi * 2f64.powf(2.0 - p) * (p - 1.0).powf((p - 1.0) / p));
                AxiomConstants { c0, c1: 1.0, c2 }
            }
            None => AxiomConstants {
                c0: None,
                c1: 1.0,
                c2: None,
            },
        };
        Ok(Self {
            dim,
            reference: nf.clone(),
            law: Law::Power { nf },
            c,
            gamma,
            delta,
            constants,
        })
    }

    /// A general flux given by closures. Not treated as separable.
    #[allow(clippy::too_many_arguments)]
    pub fn custom<E>(
        label: &str,
        dim: usize,
        eval: E,
        potential: bool,
        tau_dependent: bool,
        reference: NFunction,
        constants: AxiomConstants,
    ) -> Result<Self>
    where
        E: Fn(&[f64], f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        check_dim(dim)?;
        Ok(Self {
            dim,
            law: Law::Custom {
                label: label.to_string(),
                eval: Arc::new(eval),
                jac: None,
                potential,
                tau_dependent,
            },
            c: TrigPoly::constant(1.0),
            gamma: TrigPoly::constant(1.0),
            delta: 0.0,
            constants,
            reference,
        })
    }

    /// Attaches an analytic lambda-Jacobian (row-major `d x d`) to a custom operator.
    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn(&[f64], f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if let Law::Custom { jac: slot, .. } = &mut self.law {
            *slot = Some(Arc::new(jac));
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn constants(&self) -> &AxiomConstants {
        &self.constants
    }

    /// The N-function the shipped constants refer to.
    pub fn reference_nfunction(&self) -> &NFunction {
        &self.reference
    }

    pub fn slow_coefficient(&self) -> &TrigPoly {
        &self.c
    }

    pub fn fast_coefficient(&self) -> &TrigPoly {
        &self.gamma
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.law, Law::Linear)
            || matches!(&self.law, Law::Power { nf } if nf.power_exponent() == Some(2.0))
    }

    pub fn is_potential(&self) -> bool {
        match &self.law {
            Law::Custom { potential, .. } => *potential,
            _ => true,
        }
    }

    /// Whether `a = c(y, tau) A(z, lambda)` with a scalar `c`.
    pub fn is_separable(&self) -> bool {
        !matches!(self.law, Law::Custom { .. })
    }

    pub fn depends_on_tau(&self) -> bool {
        match &self.law {
            Law::Custom { tau_dependent, .. } => *tau_dependent,
            _ => self.c.depends_on_tau(),
        }
    }

    /// Highest wave number appearing in the coefficients (zero for custom kinds).
    pub fn max_frequency(&self) -> u32 {
        self.c.max_frequency().max(self.gamma.max_frequency())
    }

    /// `c(y, tau)` for separable kinds.
    pub fn slow_factor(&self, y: &[f64], tau: f64) -> Option<f64> {
        self.is_separable().then(|| self.c.eval(y, tau))
    }

    /// Magnitude `|lambda|_delta` and the scalar `s` with `g(lambda) = s lambda`.
    #[inline]
    fn kernel_scale(&self, lambda: &[f64]) -> (f64, f64) {
        match &self.law {
            Law::Linear => (0.0, 1.0),
            Law::Power { nf } => {
                let n2: f64 = lambda.iter().map(|l| l * l).sum::<f64>() + self.delta * self.delta;
                let n = n2.sqrt();
                if n == 0.0 {
                    (0.0, 0.0)
                } else {
                    (n, nf.deriv(n) / n)
                }
            }
            Law::Custom { .. } => unreachable!("custom operators are not separable"),
        }
    }

    /// The separable fast part `A(z, lambda) = gamma(z) g(lambda)`.
    pub fn eval_fast(&self, z: &[f64], lambda: &[f64], out: &mut [f64]) {
        let g = self.gamma.eval(z, 0.0);
        let (_, s) = self.kernel_scale(lambda);
        for (o, l) in out.iter_mut().zip(lambda) {
            *o = g * s * l;
        }
    }

    /// Fast part and its lambda-Jacobian.
    pub fn eval_fast_with_jacobian(&self, z: &[f64], lambda: &[f64], out: &mut [f64], jac: &mut [f64]) {
        let d = self.dim;
        let g = self.gamma.eval(z, 0.0);
        match &self.law {
            Law::Linear => {
                for i in 0..d {
                    out[i] = g * lambda[i];
                    for j in 0..d {
                        jac[i * d + j] = if i == j { g } else { 0.0 };
                    }
                }
            }
            Law::Power { nf } => {
                let (n, s) = self.kernel_scale(lambda);
                // d/dn (b(n)/n) = (b'(n) n - b(n)) / n^2
                let (s, ds_over_n) = if n == 0.0 {
                    (nf.deriv2(0.0), 0.0)
                } else {
                    (s, (nf.deriv2(n) * n - nf.deriv(n)) / (n * n * n))
                };
                for i in 0..d {
                    out[i] = g * s * lambda[i];
                    for j in 0..d {
                        let id = if i == j { s } else { 0.0 };
                        jac[i * d + j] = g * (id + ds_over_n * lambda[i] * lambda[j]);
                    }
                }
            }
            Law::Custom { .. } => unreachable!("custom operators are not separable"),
        }
    }

    /// `a(y, tau, z, lambda)`.
    pub fn eval(&self, y: &[f64], tau: f64, z: &[f64], lambda: &[f64], out: &mut [f64]) {
        match &self.law {
            Law::Custom { eval, .. } => eval(y, tau, z, lambda, out),
            _ => {
                let c = self.c.eval(y, tau);
                self.eval_fast(z, lambda, out);
                for o in out.iter_mut() {
                    *o *= c;
                }
            }
        }
    }

    /// Flux and its lambda-Jacobian (row-major).
    pub fn eval_with_jacobian(&self, y: &[f64], tau: f64, z: &[f64], lambda: &[f64], out: &mut [f64], jac: &mut [f64]) {
        match &self.law {
            Law::Custom { eval, jac: j, .. } => {
                eval(y, tau, z, lambda, out);
                match j {
                    Some(j) => j(y, tau, z, lambda, jac),
                    None => fd_jacobian(|l, o| eval(y, tau, z, l, o), lambda, jac),
                }
            }
            _ => {
                let c = self.c.eval(y, tau);
                self.eval_fast_with_jacobian(z, lambda, out, jac);
                for o in out.iter_mut().chain(jac.iter_mut()) {
                    *o *= c;
                }
            }
        }
    }

    /// Lambda-Jacobian: analytic when available, central differences otherwise.
    pub fn jacobian(&self, y: &[f64], tau: f64, z: &[f64], lambda: &[f64], jac: &mut [f64]) {
        let mut tmp = vec![0.0; self.dim];
        self.eval_with_jacobian(y, tau, z, lambda, &mut tmp, jac);
    }

    /// Central-difference Jacobian regardless of any analytic one.
    pub fn jacobian_fd(&self, y: &[f64], tau: f64, z: &[f64], lambda: &[f64], jac: &mut [f64]) {
        fd_jacobian(|l, o| self.eval(y, tau, z, l, o), lambda, jac);
        if self.is_potential() {
            symmetrize(jac, self.dim);
        }
    }

    /// Scalar potential `W` with `a = grad_lambda W`, up to a lambda-independent constant.
    pub fn potential(&self, y: &[f64], tau: f64, z: &[f64], lambda: &[f64]) -> Option<f64> {
        let cg = self.c.eval(y, tau) * self.gamma.eval(z, 0.0);
        match &self.law {
            Law::Linear => Some(0.5 * cg * lambda.iter().map(|l| l * l).sum::<f64>()),
            Law::Power { nf } => {
                let n2: f64 = lambda.iter().map(|l| l * l).sum::<f64>() + self.delta * self.delta;
                Some(cg * nf.value(n2.sqrt()))
            }
            Law::Custom { .. } => None,
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(Error::Config(format!("dimension must be 1 or 2, got {dim}")))
    }
}

/// Central differences with step `1e-6 max(1, |lambda|)`.
pub fn fd_jacobian<F: FnMut(&[f64], &mut [f64])>(mut f: F, lambda: &[f64], jac: &mut [f64]) {
    let d = lambda.len();
    let norm = lambda.iter().map(|l| l * l).sum::<f64>().sqrt();
    let h = 1e-6 * norm.max(1.0);
    let mut lp = lambda.to_vec();
    let mut fp = vec![0.0; d];
    let mut fm = vec![0.0; d];
    for j in 0..d {
        lp[j] = lambda[j] + h;
        f(&lp, &mut fp);
        lp[j] = lambda[j] - h;
        f(&lp, &mut fm);
        lp[j] = lambda[j];
        for i in 0..d {
            jac[i * d + j] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
}

pub(crate) fn symmetrize(m: &mut [f64], d: usize) {
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (m[i * d + j] + m[j * d + i]);
            m[i * d + j] = s;
            m[j * d + i] = s;
        }
    }
}

/// Outcome of one sampled axiom check.
#[derive(Clone, Debug, PartialEq)]
pub struct AxiomCheck {
    pub passed: bool,
    /// False when no constant is available, so only the qualitative property was checked.
    pub certified: bool,
    /// Worst violation (nonnegative), relative to `max(1, |reference value|)`.
    pub worst_violation: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AxiomReport {
    pub monotonicity: AxiomCheck,
    pub growth: AxiomCheck,
    pub periodicity: AxiomCheck,
    pub zero_at_zero: AxiomCheck,
    pub seed: u64,
}

impl AxiomReport {
    /// Monotonicity, periodicity and zero-at-zero all hold.
    pub fn structural_pass(&self) -> bool {
        self.monotonicity.passed && self.periodicity.passed && self.zero_at_zero.passed
    }
}

/// Violation tolerance for the sampled axiom checks.
pub const AXIOM_TOL: f64 = 1e-10;

/// Samples `(y, tau, z, lambda, lambda')` with `lambda` in `[-2, 2]^d`.
pub fn verify_axioms(op: &FluxOperator, nf: &NFunction, n_samples: usize, seed: u64) -> AxiomReport {
    verify_axioms_in_box(op, nf, n_samples, seed, 2.0)
}

pub fn verify_axioms_in_box(op: &FluxOperator, nf: &NFunction, n_samples: usize, seed: u64, half_width: f64) -> AxiomReport {
    let d = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let consts = op.constants();
    let mut y = vec![0.0; d];
    let mut z = vec![0.0; d];
    let mut l1 = vec![0.0; d];
    let mut l2 = vec![0.0; d];
    let mut a1 = vec![0.0; d];
    let mut a2 = vec![0.0; d];
    let zero = vec![0.0; d];

    let mut mono = 0.0_f64;
    let mut growth = 0.0_f64;
    let mut per = 0.0_f64;
    let mut z0 = 0.0_f64;
    let mut growth_err = false;

    for _ in 0..n_samples.max(1) {
        for v in y.iter_mut().chain(z.iter_mut()) {
            *v = rng.gen::<f64>();
        }
        let tau = rng.gen::<f64>();
        for v in l1.iter_mut().chain(l2.iter_mut()) {
            *v = rng.gen_range(-half_width..=half_width);
        }
        op.eval(&y, tau, &z, &l1, &mut a1);
        op.eval(&y, tau, &z, &l2, &mut a2);
        let diff: f64 = l1.iter().zip(&l2).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let inner: f64 = (0..d).map(|i| (a1[i] - a2[i]) * (l1[i] - l2[i])).sum();
        let lower = consts.c2.map_or(0.0, |c2| c2 * nf.value(diff));
        mono = mono.max((lower - inner) / inner.abs().max(1.0));

        if let Some(c0) = consts.c0 {
            let da: f64 = (0..d).map(|i| (a1[i] - a2[i]).powi(2)).sum::<f64>().sqrt();
            match nf.conjugate_inverse(nf.value(consts.c1 * diff)) {
                Ok(bound) => {
                    let bound = c0 * bound;
                    growth = growth.max((da - bound) / bound.abs().max(1.0));
                }
                Err(_) => growth_err = true,
            }
        }

        // zero at zero
        op.eval(&y, tau, &z, &zero, &mut a1);
        z0 = z0.max(a1.iter().fold(0.0_f64, |m, v| m.max(v.abs())));

        // integer shifts of dyadic points are exact in binary floating point
        let dy: Vec<f64> = (0..d).map(|_| rng.gen_range(0..1u32 << 20) as f64 / (1u64 << 20) as f64).collect();
        let dz: Vec<f64> = (0..d).map(|_| rng.gen_range(0..1u32 << 20) as f64 / (1u64 << 20) as f64).collect();
        let dt = rng.gen_range(0..1u32 << 20) as f64 / (1u64 << 20) as f64;
        op.eval(&dy, dt, &dz, &l1, &mut a1);
        let ys: Vec<f64> = dy.iter().map(|v| v + rng.gen_range(-3..=3) as f64).collect();
        let zs: Vec<f64> = dz.iter().map(|v| v + rng.gen_range(-3..=3) as f64).collect();
        let ts = dt + rng.gen_range(-3..=3) as f64;
        op.eval(&ys, ts, &zs, &l1, &mut a2);
        per = per.max(a1.iter().zip(&a2).fold(0.0_f64, |m, (u, v)| m.max((u - v).abs())));
    }

    let n = n_samples.max(1);
    AxiomReport {
        monotonicity: AxiomCheck {
            passed: mono <= AXIOM_TOL,
            certified: consts.c2.is_some(),
            worst_violation: mono.max(0.0),
            samples: n,
        },
        growth: AxiomCheck {
            passed: consts.c0.is_some() && !growth_err && growth <= AXIOM_TOL,
            certified: consts.c0.is_some(),
            worst_violation: growth.max(0.0),
            samples: n,
        },
        periodicity: AxiomCheck {
            passed: per == 0.0,
            certified: true,
            worst_violation: per,
            samples: n,
        },
        zero_at_zero: AxiomCheck {
            passed: z0 == 0.0,
            certified: true,
            worst_violation: z0,
            samples: n,
        },
        seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trig::FourierMode;

    fn osc() -> TrigPoly {
        TrigPoly::offset_sin(2.0, 1.0, &[1])
    }

    #[test]
    fn identity_flux() {
        let op = FluxOperator::identity(1).unwrap();
        let mut out = [0.0];
        op.eval(&[0.3], 0.1, &[0.9], &[3.0], &mut out);
        assert_eq!(out, [3.0]);
    }

    #[test]
    fn zero_at_zero_for_builtins() {
        let ops = [
            FluxOperator::linear_separable(2, osc(), osc()).unwrap(),
            FluxOperator::power_law(2, NFunction::power(3.0).unwrap(), osc(), osc(), DEFAULT_DELTA).unwrap(),
            FluxOperator::power_law(2, NFunction::power(1.5).unwrap(), osc(), osc(), DEFAULT_DELTA).unwrap(),
        ];
        for op in &ops {
            let mut out = [1.0, 1.0];
            op.eval(&[0.2, 0.4], 0.3, &[0.6, 0.1], &[0.0, 0.0], &mut out);
            assert_eq!(out, [0.0, 0.0]);
        }
    }

    #[test]
    fn power_law_cubic_value() {
        let op = FluxOperator::power_law(1, NFunction::power(3.0).unwrap(), TrigPoly::constant(1.0), TrigPoly::constant(1.0), 0.0).unwrap();
        let mut out = [0.0];
        op.eval(&[0.0], 0.0, &[0.0], &[2.0], &mut out);
        assert_eq!(out, [4.0]);
        let mut j = [0.0];
        op.jacobian(&[0.0], 0.0, &[0.0], &[1.0], &mut j);
        assert!((j[0] - 2.0).abs() < 1e-14);
        let mut jfd = [0.0];
        op.jacobian_fd(&[0.0], 0.0, &[0.0], &[1.0], &mut jfd);
        assert!((jfd[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn linear_jacobians() {
        let op = FluxOperator::linear_separable(2, TrigPoly::constant(2.0), TrigPoly::constant(3.0)).unwrap();
        let mut j = [0.0; 4];
        op.jacobian(&[0.1, 0.2], 0.0, &[0.3, 0.4], &[0.5, -1.0], &mut j);
        assert_eq!(j, [6.0, 0.0, 0.0, 6.0]);
        let p2 = FluxOperator::power_law(2, NFunction::power(2.0).unwrap(), TrigPoly::constant(2.0), TrigPoly::constant(3.0), 0.0).unwrap();
        p2.jacobian(&[0.1, 0.2], 0.0, &[0.3, 0.4], &[0.5, -1.0], &mut j);
        for (a, b) in j.iter().zip([6.0, 0.0, 0.0, 6.0]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn oddness_is_exact() {
        let op = FluxOperator::power_law(2, NFunction::power_log(2.0).unwrap(), osc(), osc(), DEFAULT_DELTA).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let l = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
            let m = [-l[0], -l[1]];
            let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
            op.eval(&[0.3, 0.7], 0.2, &[0.1, 0.9], &l, &mut a);
            op.eval(&[0.3, 0.7], 0.2, &[0.1, 0.9], &m, &mut b);
            assert_eq!(a, [-b[0], -b[1]]);
        }
    }

    #[test]
    fn analytic_and_fd_jacobians_agree() {
        let ops = [
            FluxOperator::power_law(2, NFunction::power(3.0).unwrap(), osc(), osc(), DEFAULT_DELTA).unwrap(),
            FluxOperator::power_law(2, NFunction::power_log(2.0).unwrap(), osc(), osc(), DEFAULT_DELTA).unwrap(),
            FluxOperator::power_law(2, NFunction::power(1.5).unwrap(), osc(), osc(), DEFAULT_DELTA).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for op in &ops {
            for _ in 0..100 {
                let l: [f64; 2] = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
                if l[0].hypot(l[1]) < 0.05 {
                    continue;
                }
                let (mut ja, mut jf) = ([0.0; 4], [0.0; 4]);
                op.jacobian(&[0.3, 0.6], 0.5, &[0.2, 0.8], &l, &mut ja);
                op.jacobian_fd(&[0.3, 0.6], 0.5, &[0.2, 0.8], &l, &mut jf);
                let scale = ja.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
                for (a, f) in ja.iter().zip(&jf) {
                    assert!((a - f).abs() <= 1e-5 * scale, "{ja:?} vs {jf:?}");
                }
                assert!((ja[1] - ja[2]).abs() <= 1e-14 * scale);
            }
        }
    }

    #[test]
    fn flux_is_gradient_of_potential() {
        let op = FluxOperator::power_law(2, NFunction::power(3.0).unwrap(), osc(), osc(), DEFAULT_DELTA).unwrap();
        let (y, z) = ([0.15, 0.4], [0.7, 0.05]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let l = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            let mut a = [0.0; 2];
            op.eval(&y, 0.0, &z, &l, &mut a);
            let mut g = [0.0; 2];
            for k in 0..2 {
                let h = 1e-6;
                let mut lp = l;
                lp[k] += h;
                let mut lm = l;
                lm[k] -= h;
                g[k] = (op.potential(&y, 0.0, &z, &lp).unwrap() - op.potential(&y, 0.0, &z, &lm).unwrap()) / (2.0 * h);
            }
            let scale = a[0].hypot(a[1]).max(1e-3);
            for k in 0..2 {
                assert!((a[k] - g[k]).abs() <= 1e-5 * scale, "{a:?} vs {g:?}");
            }
        }
    }

    #[test]
    fn linear_monotonicity_constant() {
        let c = TrigPoly::offset_sin(2.0, 1.0, &[1]);
        let op = FluxOperator::linear_separable(1, c.clone(), c).unwrap();
        assert_eq!(op.constants().c2, Some(2.0));
        let rep = verify_axioms(&op, &NFunction::power(2.0).unwrap(), 2000, 1);
        assert!(rep.structural_pass(), "{rep:?}");
        assert!(rep.growth.passed, "{rep:?}");
    }

    #[test]
    fn cubic_monotonicity_constant_by_brute_force() {
        // minimise ((|l|l - |m|m)(l - m)) / (|l - m|^3 / 3) over a grid in [-2, 2]^2
        let mut best = f64::INFINITY;
        let n = 801;
        for i in 0..n {
            let l = -2.0 + 4.0 * i as f64 / (n - 1) as f64;
            for j in 0..n {
                let m = -2.0 + 4.0 * j as f64 / (n - 1) as f64;
                if i == j {
                    continue;
                }
                let inner = (l.abs() * l - m.abs() * m) * (l - m);
                let b = (l - m).abs().powi(3) / 3.0;
                best = best.min(inner / b);
            }
        }
        assert!((best - 1.5).abs() < 1e-9, "brute-force minimum {best}");
        let op = FluxOperator::power_law(1, NFunction::power(3.0).unwrap(), TrigPoly::constant(1.0), TrigPoly::constant(1.0), DEFAULT_DELTA).unwrap();
        assert_eq!(op.constants().c2, Some(1.5));
        let rep = verify_axioms(&op, &NFunction::power(3.0).unwrap(), 10_000, 2);
        assert!(rep.structural_pass(), "{rep:?}");
        // no finite growth constant exists for p > 2
        assert!(!rep.growth.certified && !rep.growth.passed);
    }

    #[test]
    fn sublinear_growth_constant_holds() {
        let op = FluxOperator::power_law(2, NFunction::power(1.5).unwrap(), osc(), osc(), 0.0).unwrap();
        let rep = verify_axioms(&op, &NFunction::power(1.5).unwrap(), 5000, 4);
        assert!(rep.growth.certified && rep.growth.passed, "{rep:?}");
        assert!(!rep.monotonicity.certified && rep.monotonicity.passed);
    }

    #[test]
    fn tau_dependence_is_detected() {
        let c = TrigPoly::constant(2.0).with_mode(FourierMode::sin(0.5, &[0]).with_tau(1));
        let op = FluxOperator::linear_separable(1, c, osc()).unwrap();
        assert!(op.depends_on_tau());
        assert!(!FluxOperator::identity(1).unwrap().depends_on_tau());
    }

    #[test]
    fn rejects_nonpositive_coefficients() {
        assert!(FluxOperator::linear_separable(1, TrigPoly::offset_sin(1.0, 1.0, &[1]), osc()).is_err());
        assert!(FluxOperator::identity(3).is_err());
    }
}
