//! Two-time correlation functions: quantum regression plus the second-order
//! non-Markovian correction.
//!
//! The correction is available in two forms. [`nm_correction_rate`] is the
//! source term that the regression equation misses in `d/dt1 <X1(t1) X2(t2)>`;
//! [`nm_correction`] is its integral over `t1' in [t2, t1]`, which is what has
//! to be added to the regression value of the correlation itself.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::algebra::{c, require_hermitian, trace, Operator};
use crate::error::{Error, Result};
use crate::quad::{integrate, QuadOptions};
use crate::tcl2::{evolve_operator, propagate, CoefficientCache, PropagateOptions, SystemModel};

/// `<X1(t1) X2(t2)>` for an initial state `rho0`.
#[derive(Clone, Debug)]
pub struct TwoTimeRequest {
    pub x1: Operator,
    pub x2: Operator,
    pub t1: f64,
    pub t2: f64,
    pub rho0: Operator,
    pub include_correction: bool,
}

impl TwoTimeRequest {
    pub fn new(x1: Operator, t1: f64, x2: Operator, t2: f64, rho0: Operator) -> Self {
        TwoTimeRequest {
            x1,
            x2,
            t1,
            t2,
            rho0,
            include_correction: false,
        }
    }

    pub fn corrected(mut self) -> Self {
        self.include_correction = true;
        self
    }

    // <X1(t1) X2(t2)> = conj <X2^dag(t2) X1^dag(t1)>
    fn exchanged(&self) -> Self {
        TwoTimeRequest {
            x1: self.x2.adjoint(),
            x2: self.x1.adjoint(),
            t1: self.t2,
            t2: self.t1,
            rho0: self.rho0.clone(),
            include_correction: self.include_correction,
        }
    }
}

/// Regression value and the (integrated) correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correlation {
    pub qrt: C64,
    pub correction: C64,
}

impl Correlation {
    pub fn value(&self) -> C64 {
        self.qrt + self.correction
    }

    fn conj(self) -> Self {
        Correlation {
            qrt: self.qrt.conj(),
            correction: self.correction.conj(),
        }
    }
}

fn check_operator(m: &SystemModel, what: &str, x: &Operator) -> Result<()> {
    if x.nrows() != m.dim() || x.ncols() != m.dim() {
        return Err(Error::Dimension {
            context: what.into(),
            expected: m.dim(),
            found: x.nrows(),
        });
    }
    Ok(())
}

fn check_times(t1: f64, t2: f64) -> Result<()> {
    if !(t1 >= 0.0 && t2 >= 0.0 && t1.is_finite() && t2.is_finite()) {
        return Err(Error::invalid(format!("correlation times must be finite and >= 0, got ({t1}, {t2})")));
    }
    Ok(())
}

/// Evaluates a request; `t1 < t2` goes through the conjugate exchange.
pub fn correlate(m: &SystemModel, r: &TwoTimeRequest, opts: &PropagateOptions) -> Result<Correlation> {
    check_times(r.t1, r.t2)?;
    if r.t1 < r.t2 {
        return Ok(correlate(m, &r.exchanged(), opts)?.conj());
    }
    let s = correlation_series(m, &r.x1, &r.x2, &r.rho0, r.t2, &[r.t1], r.include_correction, opts)?;
    Ok(s[0])
}

/// `Tr[X1 G(t1, t2){X2 rho(t2)}]`, plus the correction when requested.
pub fn qrt_correlation(m: &SystemModel, r: &TwoTimeRequest, opts: &PropagateOptions) -> Result<C64> {
    Ok(correlate(m, r, opts)?.value())
}

/// Independent requests evaluated in parallel.
pub fn correlate_batch(m: &SystemModel, rs: &[TwoTimeRequest], opts: &PropagateOptions) -> Result<Vec<Correlation>> {
    rs.par_iter().map(|r| correlate(m, r, opts)).collect()
}

/// Correlations `<X1(t1) X2(t2)>` for ascending `t1 >= t2` from one regression run.
#[allow(clippy::too_many_arguments)]
pub fn correlation_series(
    m: &SystemModel,
    x1: &Operator,
    x2: &Operator,
    rho0: &Operator,
    t2: f64,
    t1s: &[f64],
    include_correction: bool,
    opts: &PropagateOptions,
) -> Result<Vec<Correlation>> {
    check_operator(m, "X1", x1)?;
    check_operator(m, "X2", x2)?;
    check_times(t2, t2)?;
    if t1s.iter().any(|&t| !(t >= t2)) || t1s.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("t1 values must be ascending and not earlier than t2"));
    }
    let rho_t2 = propagate(m, rho0, &[t2], opts)?.states.remove(0);
    let y = x2 * rho_t2;
    let (evolved, _) = evolve_operator(m, &y, t2, t1s, opts)?;
    let corrections: Vec<C64> = if include_correction {
        t1s.par_iter()
            .map(|&t1| nm_correction(m, x1, t1, x2, t2, rho0))
            .collect::<Result<_>>()?
    } else {
        vec![C64::new(0.0, 0.0); t1s.len()]
    };
    Ok(evolved
        .iter()
        .zip(corrections)
        .map(|(y1, corr)| Correlation {
            qrt: trace(&(x1 * y1)),
            correction: corr,
        })
        .collect())
}

/// `(A_nm . L_m)(t1, t2) = (A_nm . L_m)(t1) - (A_nm . L_m)(t1 - t2)` in the input basis.
pub fn two_time_operator(m: &SystemModel, n: usize, k: usize, t1: f64, t2: f64) -> Result<Operator> {
    if n >= m.channels() || k >= m.channels() {
        return Err(Error::invalid(format!("channel pair ({n}, {k}) out of range")));
    }
    if !(t1 >= t2 && t2 >= 0.0) {
        return Err(Error::invalid(format!("two-time operator needs t1 >= t2 >= 0, got ({t1}, {t2})")));
    }
    let a = m.q_pair_energy(&m.full_table(t1)?, n, k);
    let b = m.q_pair_energy(&m.full_table(t1 - t2)?, n, k);
    Ok(m.basis().from_energy(&(a - b)))
}

// energy-basis free Heisenberg picture: X_ab exp(i w_ab t)
fn free(m: &SystemModel, x: &Operator, t: f64) -> Operator {
    let e = m.basis().energies();
    Operator::from_fn(x.nrows(), x.ncols(), |a, b| x[(a, b)] * c(0.0, (e[a] - e[b]) * t).exp())
}

struct CorrectionKernel<'a> {
    m: &'a SystemModel,
    x1: Operator,
    x2: Operator,
    rho: Operator,
    t2: f64,
}

impl CorrectionKernel<'_> {
    fn new<'a>(m: &'a SystemModel, x1: &Operator, t1: f64, x2: &Operator, t2: f64, rho0: &Operator) -> CorrectionKernel<'a> {
        let basis = m.basis();
        CorrectionKernel {
            m,
            x1: free(m, &basis.to_energy(x1), t1),
            x2: free(m, &basis.to_energy(x2), t2),
            rho: basis.to_energy(rho0),
            t2,
        }
    }

    // -sum_n < [L_n(t), X1(t1)] [ G0^dag(t){ Q_n(t) - Q_n(t - t2) }, X2(t2)] >
    fn at(&self, t: f64, table: impl Fn(f64) -> Result<Vec<nalgebra::DMatrix<C64>>>) -> Result<C64> {
        let m = self.m;
        let qa = m.q_energy(&table(t)?);
        let qb = m.q_energy(&table((t - self.t2).max(0.0))?);
        let mut acc = C64::new(0.0, 0.0);
        for ((l, a), b) in m.couplings_energy().iter().zip(&qa).zip(&qb) {
            let lt = free(m, l, t);
            let bt = free(m, &(a - b), t);
            let left = &lt * &self.x1 - &self.x1 * &lt;
            let right = &bt * &self.x2 - &self.x2 * &bt;
            acc -= trace(&(&self.rho * left * right));
        }
        Ok(acc)
    }
}

/// The missing source term of the regression equation at `t1`.
///
/// Operators evolve freely and the expectation is taken in `rho0` (interaction picture).
/// Vanishes when the bath memory is short compared to `t1 - t2`.
pub fn nm_correction_rate(
    m: &SystemModel,
    x1: &Operator,
    t1: f64,
    x2: &Operator,
    t2: f64,
    rho0: &Operator,
) -> Result<C64> {
    check_operator(m, "X1", x1)?;
    check_operator(m, "X2", x2)?;
    check_operator(m, "initial state", rho0)?;
    if !(t1 >= t2 && t2 >= 0.0) {
        return Err(Error::invalid(format!("correction needs t1 >= t2 >= 0, got ({t1}, {t2})")));
    }
    let k = CorrectionKernel::new(m, x1, t1, x2, t2, rho0);
    k.at(t1, |t| m.full_table(t))
}

/// Second-order correction to `<X1(t1) X2(t2)>`, `t1 >= t2`.
///
/// Integrates [`nm_correction_rate`] over the later time with `X1` propagated back by
/// the free evolution, so the interaction-picture `X1(t1)` stays fixed inside the integral.
pub fn nm_correction(
    m: &SystemModel,
    x1: &Operator,
    t1: f64,
    x2: &Operator,
    t2: f64,
    rho0: &Operator,
) -> Result<C64> {
    check_operator(m, "X1", x1)?;
    check_operator(m, "X2", x2)?;
    check_operator(m, "initial state", rho0)?;
    require_hermitian("initial state", rho0)?;
    if !(t1 >= t2 && t2 >= 0.0) {
        return Err(Error::invalid(format!("correction needs t1 >= t2 >= 0, got ({t1}, {t2})")));
    }
    if t1 == t2 || t2 == 0.0 || m.couplings().iter().all(|l| l.iter().all(|z| z.norm() == 0.0)) {
        return Ok(C64::new(0.0, 0.0));
    }
    let cache = CoefficientCache::build(m, t1, 1e-12)?;
    let k = CorrectionKernel::new(m, x1, t1, x2, t2, rho0);
    let mut failure: Option<Error> = None;
    let v = integrate(
        |t| match k.at(t, |s| Ok(cache.table(s))) {
            Ok(z) => z,
            Err(e) => {
                failure.get_or_insert(e);
                C64::new(0.0, 0.0)
            }
        },
        t2,
        t1,
        QuadOptions {
            abs_tol: 1e-15,
            rel_tol: 1e-11,
            max_intervals: 20_000,
        },
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(v)
}

/// Closed-system `Tr[X1(t1) X2(t2) rho0]` with exact Heisenberg operators.
pub fn unitary_two_time(h: &Operator, x1: &Operator, t1: f64, x2: &Operator, t2: f64, rho0: &Operator) -> Result<C64> {
    let basis = crate::algebra::SpectralBasis::new(h)?;
    let heis = |x: &Operator, t: f64| {
        let xe = basis.to_energy(x);
        let e = basis.energies();
        basis.from_energy(&Operator::from_fn(xe.nrows(), xe.ncols(), |a, b| {
            xe[(a, b)] * c(0.0, (e[a] - e[b]) * t).exp()
        }))
    };
    Ok(trace(&(heis(x1, t1) * heis(x2, t2) * rho0)))
}

/// Closed form of `<sigma_x(t1) sigma_x(t2)>` under exact pure dephasing, `t1 >= t2`.
///
/// `H = w0 sz / 2 + sz B` with a stationary Gaussian bath, initial spin-up population `p_up`,
/// and `phi(t) = int_0^t ds int_0^s alpha(v) dv`.
pub fn dephasing_sx_sx(w0: f64, t1: f64, t2: f64, p_up: f64, phi: impl Fn(f64) -> C64) -> C64 {
    let tau = t1 - t2;
    let free = c(p_up, 0.0) * c(0.0, w0 * tau).exp() + c(1.0 - p_up, 0.0) * c(0.0, -w0 * tau).exp();
    let e = c(0.0, 4.0 * (phi(t1).im - phi(t2).im)) - phi(tau) * 4.0;
    free * e.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{ONE, ZERO};
    use crate::bath::BathModel;
    use nalgebra::DMatrix;

    fn sx() -> Operator {
        Operator::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    fn sz() -> Operator {
        Operator::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }

    fn rho() -> Operator {
        Operator::from_row_slice(2, 2, &[c(0.7, 0.0), c(0.2, 0.1), c(0.2, -0.1), c(0.3, 0.0)])
    }

    fn dephasing(w0: f64, g2: f64, lambda: f64) -> SystemModel {
        let bath = BathModel::ou(DMatrix::from_element(1, 1, c(g2, 0.0)), lambda).unwrap();
        SystemModel::new(sz() * c(w0 / 2.0, 0.0), vec![sz()], bath).unwrap()
    }

    fn ou_phi(g2: f64, lambda: f64) -> impl Fn(f64) -> C64 {
        move |t: f64| c(g2 * (t / lambda - (1.0 - (-lambda * t).exp()) / (lambda * lambda)), 0.0)
    }

    #[test]
    fn identity_and_coincidence() {
        let m = dephasing(1.0, 0.05, 2.0);
        let opts = PropagateOptions::default();
        let id = Operator::identity(2, 2);
        let one = correlate(&m, &TwoTimeRequest::new(id.clone(), 3.0, id.clone(), 1.0, rho()).corrected(), &opts)
            .unwrap()
            .value();
        assert!((one - ONE).norm() < 1e-10);
        let x1 = sx();
        let x2 = Operator::from_row_slice(2, 2, &[c(0.3, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(-0.2, 0.0)]);
        let r = correlate(&m, &TwoTimeRequest::new(x1.clone(), 1.5, x2.clone(), 1.5, rho()).corrected(), &opts).unwrap();
        let st = propagate(&m, &rho(), &[1.5], &opts).unwrap().states.remove(0);
        assert!((r.value() - trace(&(&x1 * &x2 * st))).norm() < 1e-12);
    }

    #[test]
    fn closed_system_matches_heisenberg() {
        let h = Operator::from_row_slice(
            3,
            3,
            &[c(1.0, 0.0), c(0.2, 0.1), ZERO, c(0.2, -0.1), c(-0.4, 0.0), c(0.3, 0.0), ZERO, c(0.3, 0.0), c(0.1, 0.0)],
        );
        let l = Operator::from_fn(3, 3, |a, b| c((a + b) as f64 * 0.1, 0.0));
        let bath = BathModel::ou(DMatrix::from_element(1, 1, c(0.0, 0.0)), 1.0).unwrap();
        let m = SystemModel::new(h.clone(), vec![l], bath).unwrap();
        let rho0 = Operator::from_fn(3, 3, |a, b| if a == b { c([0.5, 0.3, 0.2][a], 0.0) } else { c(0.05, 0.0) });
        let x1 = Operator::from_fn(3, 3, |a, b| c(a as f64 - b as f64, (a * b) as f64 * 0.3));
        let x2 = Operator::from_fn(3, 3, |a, b| c(((a + 2 * b) % 3) as f64, 0.0));
        let opts = PropagateOptions::default();
        for (t1, t2) in [(2.0, 0.5), (0.7, 3.1), (4.0, 4.0)] {
            let got = qrt_correlation(&m, &TwoTimeRequest::new(x1.clone(), t1, x2.clone(), t2, rho0.clone()).corrected(), &opts)
                .unwrap();
            let want = unitary_two_time(&h, &x1, t1, &x2, t2, &rho0).unwrap();
            assert!((got - want).norm() < 1e-10, "{t1} {t2}: {got} vs {want}");
        }
    }

    #[test]
    fn exchange_conjugates() {
        let m = dephasing(1.0, 0.05, 2.0);
        let opts = PropagateOptions::default();
        let a = correlate(&m, &TwoTimeRequest::new(sx(), 3.0, sz(), 1.0, rho()).corrected(), &opts).unwrap();
        let b = correlate(&m, &TwoTimeRequest::new(sz(), 1.0, sx(), 3.0, rho()).corrected(), &opts).unwrap();
        assert!((a.value() - b.value().conj()).norm() < 1e-10);
    }

    #[test]
    fn white_noise_two_time_operator_vanishes() {
        let bath = BathModel::white_noise(DMatrix::from_element(1, 1, c(0.3, 0.0))).unwrap();
        let m = SystemModel::new(sz() * c(0.5, 0.0) + sx() * c(0.2, 0.0), vec![sx()], bath).unwrap();
        let op = two_time_operator(&m, 0, 0, 2.0, 1.0).unwrap();
        assert!(op.iter().all(|z| *z == ZERO));
        let zero = two_time_operator(&m, 0, 0, 2.0, 0.0).unwrap();
        assert!(zero.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn correction_fixes_second_order_dephasing_error() {
        let (w0, lambda, t1, t2) = (1.0, 1.0, 4.0, 2.0);
        let opts = PropagateOptions::default();
        let mut ratios = vec![];
        for g2 in [0.02, 0.005, 0.00125] {
            let m = dephasing(w0, g2, lambda);
            let r = correlate(&m, &TwoTimeRequest::new(sx(), t1, sx(), t2, rho()).corrected(), &opts).unwrap();
            let exact = dephasing_sx_sx(w0, t1, t2, 0.7, ou_phi(g2, lambda));
            let bare = (r.qrt - exact).norm();
            let fixed = (r.value() - exact).norm();
            assert!(fixed < bare);
            ratios.push(fixed / bare);
        }
        for w in ratios.windows(2) {
            let f = w[0] / w[1];
            assert!((3.5..=4.5).contains(&f), "{ratios:?}");
        }
    }

    #[test]
    fn rate_vanishes_after_memory() {
        let lambda = 2.0;
        let m = dephasing(1.0, 0.05, lambda);
        let near = nm_correction_rate(&m, &sx(), 1.5, &sx(), 1.0, &rho()).unwrap();
        let far = nm_correction_rate(&m, &sx(), 1.0 + 41.0 / lambda, &sx(), 1.0, &rho()).unwrap();
        assert!(near.norm() > 1e-3);
        assert!(far.norm() < 1e-6 * near.norm());
        let op = two_time_operator(&m, 0, 0, 1.0 + 41.0 / lambda, 1.0).unwrap();
        let inf = m.second_order_operator(None, 0).unwrap();
        assert!(crate::algebra::norm(&op) < 1e-6 * crate::algebra::norm(&inf));
    }
}
