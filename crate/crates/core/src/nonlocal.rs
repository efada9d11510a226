//! Time-nonlocal second-order master equation in the Laplace domain.
//!
//! The kernel is assembled column by column on `|i><j|` of the energy basis. With
//! `s' = s + i w_ij` the coefficients `A(w)` of the time-local generator are replaced by
//! `alpha_hat(s' + i w)` (for `Q`) and `conj(alpha_hat(conj(s') + i w))` (for `Q^dagger`).

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::algebra::{c, trace, unit, vectorize, unvectorize, Operator, SuperOperator, Vector, ONE, ZERO};
use crate::error::{Error, Result};
use crate::spectral::{pauli_system, perturbative_spectrum};
use crate::tcl2::{CoefficientTable, SystemModel};

fn laplace_table(m: &SystemModel, shift: C64) -> Result<CoefficientTable> {
    m.gaps()
        .gaps()
        .iter()
        .map(|&w| {
            let z = shift + c(0.0, w);
            let a = m.bath().laplace_alpha(z)?;
            if a.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
                return Err(Error::Singular(format!("correlation transform has a pole at s = {z}")));
            }
            Ok(a)
        })
        .collect()
}

/// Image of `|i><j|` under `sum_n L_n X R_n^dag - X R_n^dag L_n - L_n P_n X + P_n X L_n` (energy basis).
fn column(m: &SystemModel, p: &[Operator], r: &[Operator], x: &Operator) -> Operator {
    let d = m.dim();
    let mut out = Operator::zeros(d, d);
    for ((l, pn), rn) in m.couplings_energy().iter().zip(p).zip(r) {
        let rd = rn.adjoint();
        out += l * x * &rd - x * &rd * l - l * pn * x + pn * x * l;
    }
    out
}

fn assemble<F>(m: &SystemModel, shifts: F) -> Result<SuperOperator>
where
    F: Fn(f64) -> (C64, C64, C64) + Sync,
{
    let d = m.dim();
    let cols: Result<Vec<(usize, Vector)>> = (0..d * d)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / d, k % d);
            let (sp, sr, scale) = shifts(m.basis().gap(i, j));
            let tp = laplace_table(m, sp)?;
            let tr = laplace_table(m, sr)?;
            let p = m.q_energy(&tp);
            let r = m.q_energy(&tr);
            let img = column(m, &p, &r, &unit(d, i, j)) * scale;
            Ok((k, vectorize(&img)))
        })
        .collect();
    let mut mat = DMatrix::<C64>::zeros(d * d, d * d);
    for (k, v) in cols? {
        mat.set_column(k, &v);
    }
    SuperOperator::from_matrix(d, mat)
}

/// `K2(s)` without the free part, energy basis.
pub fn second_order_kernel_energy(m: &SystemModel, s: C64) -> Result<SuperOperator> {
    assemble(m, |w| {
        let sp = s + c(0.0, w);
        (sp, sp.conj(), ONE)
    })
}

/// Full kernel `-i[H, .] + K2(s)` in the input basis.
pub fn kernel_k2(m: &SystemModel, s: C64) -> Result<SuperOperator> {
    let k = second_order_kernel_energy(m, s)? + m.l0_energy();
    Ok(m.basis().superop_from_energy(&k))
}

/// Laplace transform of the finite-time generator `L2(t)` (energy basis).
///
/// Uses `A_hat(s; w) = alpha_hat(s + i w) / s`, so `s = 0` is excluded.
pub fn laplace_l2_energy(m: &SystemModel, s: C64) -> Result<SuperOperator> {
    if s == ZERO {
        return Err(Error::invalid("Laplace-domain generator is singular at s = 0"));
    }
    let tp = laplace_table(m, s)?.into_iter().map(|a| a / s).collect::<Vec<_>>();
    let tr = laplace_table(m, s.conj())?.into_iter().map(|a| a / s.conj()).collect::<Vec<_>>();
    let p = m.q_energy(&tp);
    let r = m.q_energy(&tr);
    let d = m.dim();
    Ok(SuperOperator::from_fn(d, |x| column(m, &p, &r, x)))
}

/// `max_i |K2(s){|i><i|} - s L2_hat(s){|i><i|}|`.
pub fn population_column_residual(m: &SystemModel, s: C64) -> Result<f64> {
    let k = second_order_kernel_energy(m, s)?;
    let l = laplace_l2_energy(m, s)?;
    let d = m.dim();
    let mut worst = 0.0f64;
    for i in 0..d {
        let col = i * d + i;
        for r in 0..d * d {
            worst = worst.max((k.matrix()[(r, col)] - s * l.matrix()[(r, col)]).norm());
        }
    }
    Ok(worst)
}

/// `max |K2(s){|i><j|} - s L2_hat(s + 2 i w_ij){|i><j|}|` over all columns.
///
/// This alternative form differs from the assembled kernel whenever `w_ij != 0`; the value is
/// reported for inspection.
pub fn double_shift_residual(m: &SystemModel, s: C64) -> Result<f64> {
    let k = second_order_kernel_energy(m, s)?;
    let d = m.dim();
    let mut worst = 0.0f64;
    for col in 0..d * d {
        let w = m.basis().gap(col / d, col % d);
        let l = laplace_l2_energy(m, s + c(0.0, 2.0 * w))?;
        for r in 0..d * d {
            worst = worst.max((k.matrix()[(r, col)] - s * l.matrix()[(r, col)]).norm());
        }
    }
    Ok(worst)
}

/// `[s - K(s)]^{-1}` in the input basis.
pub fn resolvent(m: &SystemModel, s: C64) -> Result<SuperOperator> {
    let e = resolvent_energy(m, s)?;
    Ok(m.basis().superop_from_energy(&e))
}

fn resolvent_energy(m: &SystemModel, s: C64) -> Result<SuperOperator> {
    let d = m.dim();
    let k = second_order_kernel_energy(m, s)? + m.l0_energy();
    let a = DMatrix::<C64>::identity(d * d, d * d) * s - k.matrix();
    let inv = a
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("s = {s} is a pole of the resolvent")))?;
    SuperOperator::from_matrix(d, inv)
}

fn solve_energy(m: &SystemModel, s: C64, rhs: &Vector) -> Result<Vector> {
    let d = m.dim();
    let k = second_order_kernel_energy(m, s)? + m.l0_energy();
    let a = DMatrix::<C64>::identity(d * d, d * d) * s - k.matrix();
    a.lu()
        .solve(rhs)
        .ok_or_else(|| Error::Singular(format!("s = {s} is a pole of the resolvent")))
}

/// Near-resonance pole of one off-diagonal element.
#[derive(Clone, Copy, Debug)]
pub struct PoleReport {
    pub pair: (usize, usize),
    /// `-i w_ij + <i|K2(-i w_ij){|i><j|}|j>`.
    pub pole: C64,
    /// Matching eigenvalue of the stationary time-local generator.
    pub time_local: C64,
}

impl PoleReport {
    pub fn residual(&self) -> f64 {
        (self.pole - self.time_local).norm()
    }
}

pub fn nonlocal_poles(m: &SystemModel) -> Result<Vec<PoleReport>> {
    let d = m.dim();
    let spec = perturbative_spectrum(m)?;
    let mut out = Vec::new();
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let w = m.basis().gap(i, j);
            let s = c(0.0, -w);
            let sp = s + c(0.0, w);
            let p = m.q_energy(&laplace_table(m, sp)?);
            let r = m.q_energy(&laplace_table(m, sp.conj())?);
            let img = column(m, &p, &r, &unit(d, i, j));
            let pole = s + img[(i, j)];
            let time_local = spec
                .eigenvalue(i, j)
                .ok_or_else(|| Error::invalid(format!("pair ({i}, {j}) has no isolated time-local eigenvalue")))?;
            out.push(PoleReport {
                pair: (i, j),
                pole,
                time_local,
            });
        }
    }
    Ok(out)
}

/// `max |K2(L0) - L2(inf)|` where `K2(L0)` takes each column at `s = -i w_ij`.
pub fn operator_laplace_residual(m: &SystemModel) -> Result<f64> {
    let k = assemble(m, |_| (ZERO, ZERO, ONE))?;
    let l = m.l2_stationary_energy()?;
    Ok((&k - &l).max_abs())
}

/// `V_hat(s)_ij = <i|K2(s){|j><j|}|i>`; tends to the Pauli matrix as `s -> 0`.
pub fn nonlocal_pauli(m: &SystemModel, s: C64) -> Result<DMatrix<C64>> {
    let k = second_order_kernel_energy(m, s)?;
    let d = m.dim();
    Ok(DMatrix::from_fn(d, d, |i, j| k.get(i, i, j, j)))
}

/// Limit `s [s - K(s)]^{-1} rho0` as `s -> 0`.
#[derive(Clone, Debug)]
pub struct AsymptoticState {
    pub state: Operator,
    /// Sample points and the trace-normalized values used in the extrapolation.
    pub samples: Vec<(f64, Operator)>,
    /// Difference between the two highest-order extrapolants.
    pub error_estimate: f64,
    /// Null vector of the stationary time-local generator, trace-normalized.
    pub time_local_reference: Operator,
}

pub fn asymptotic_state(m: &SystemModel, rho0: &Operator) -> Result<AsymptoticState> {
    let d = m.dim();
    let pauli = pauli_system(m)?;
    if pauli.multiplicity() != 1 {
        return Err(Error::invalid(format!(
            "stationary state is not unique ({} independent Pauli null vectors)",
            pauli.multiplicity()
        )));
    }
    let gap = pauli
        .eigenvalues
        .iter()
        .map(|z| z.norm())
        .filter(|&x| x > 1e-10 * pauli.w.amax())
        .fold(f64::INFINITY, f64::min);
    if !gap.is_finite() {
        return Err(Error::invalid("Pauli matrix has no relaxation scale"));
    }
    let basis = m.basis();
    let r0 = vectorize(&basis.to_energy(rho0));
    let pts = [1e-3 * gap, 1e-4 * gap, 1e-5 * gap];
    let mut vals = Vec::new();
    for &s in &pts {
        let x = solve_energy(m, c(s, 0.0), &r0)? * c(s, 0.0);
        vals.push(x);
    }
    // Neville extrapolation to s = 0
    let lin = |a: usize, b: usize| -> Vector {
        let (sa, sb) = (pts[a], pts[b]);
        (&vals[b] * c(sa, 0.0) - &vals[a] * c(sb, 0.0)) / c(sa - sb, 0.0)
    };
    let p01 = lin(0, 1);
    let p12 = lin(1, 2);
    let p012 = (&p12 * c(pts[0], 0.0) - &p01 * c(pts[2], 0.0)) / c(pts[0] - pts[2], 0.0);
    let normalize = |v: &Vector| -> Result<Operator> {
        let op = unvectorize(v, d);
        let tr = trace(&op);
        if tr.norm() < 1e-300 {
            return Err(Error::numerical("extrapolated state has zero trace"));
        }
        let op = op / tr;
        Ok((&op + op.adjoint()) * c(0.5, 0.0))
    };
    let best = normalize(&p012)?;
    let prev = normalize(&p12)?;
    let error_estimate = crate::algebra::max_abs(&(&best - &prev));
    if !(error_estimate < 1e-6) {
        return Err(Error::NoConvergence(format!(
            "small-s extrapolation did not settle: successive estimates differ by {error_estimate:.3e}"
        )));
    }
    let samples = pts
        .iter()
        .zip(&vals)
        .map(|(&s, v)| Ok((s, basis.from_energy(&normalize(v)?))))
        .collect::<Result<Vec<_>>>()?;
    let lst = m.l2_stationary_energy()? + m.l0_energy();
    let ns = crate::algebra::null_space(lst.matrix(), 1e-9);
    let reference = ns
        .first()
        .map(normalize)
        .transpose()?
        .map(|x| basis.from_energy(&x))
        .unwrap_or_else(|| Operator::zeros(d, d));
    Ok(AsymptoticState {
        state: basis.from_energy(&best),
        samples,
        error_estimate,
        time_local_reference: reference,
    })
}

/// Talbot-type inversion contour
/// `s = shift + (N/t) (-0.6122 + 0.5017 theta cot(0.6407 theta) + 0.2645 i nu theta)`,
/// sampled at `N` midpoints of `(-pi, pi)`.
#[derive(Clone, Copy, Debug)]
pub struct TalbotOptions {
    pub nodes: usize,
    pub shift: f64,
    /// Imaginary stretch `nu`; `None` widens the contour until it encloses the Bohr frequencies.
    pub imag_scale: Option<f64>,
}

impl Default for TalbotOptions {
    fn default() -> Self {
        TalbotOptions {
            nodes: 64,
            shift: 0.0,
            imag_scale: None,
        }
    }
}

const TALBOT_SIGMA: f64 = -0.6122;
const TALBOT_MU: f64 = 0.5017;
const TALBOT_ALPHA: f64 = 0.6407;
const TALBOT_NU: f64 = 0.2645;

/// Inverts a vector-valued Laplace transform at `t > 0`.
///
/// `omega` bounds the imaginary parts of the singularities to be enclosed.
pub fn talbot_invert<F>(f: F, t: f64, omega: f64, opts: &TalbotOptions) -> Result<Vector>
where
    F: Fn(C64) -> Result<Vector> + Sync,
{
    use std::f64::consts::PI;
    if !(t > 0.0) {
        return Err(Error::invalid("Talbot inversion needs t > 0"));
    }
    let n = opts.nodes.max(4);
    let scale = n as f64 / t;
    let reach = TALBOT_NU * PI * scale;
    let nu = opts.imag_scale.unwrap_or_else(|| (2.0 * omega / reach).clamp(1.0, MAX_STRETCH));
    let h = 2.0 * PI / n as f64;
    let terms: Result<Vec<Vector>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let th = -PI + (k as f64 + 0.5) * h;
            let at = TALBOT_ALPHA * th;
            let cot = if th == 0.0 { 0.0 } else { at.cos() / at.sin() };
            let (re, dre) = if th.abs() < 1e-8 {
                (TALBOT_MU / TALBOT_ALPHA, 0.0)
            } else {
                (th * cot * TALBOT_MU, TALBOT_MU * (cot - at / (at.sin() * at.sin())))
            };
            let s = c(opts.shift + scale * (TALBOT_SIGMA + re), scale * TALBOT_NU * nu * th);
            let ds = c(scale * dre, scale * TALBOT_NU * nu);
            Ok(f(s)? * ((s * t).exp() * ds))
        })
        .collect();
    let terms = terms?;
    let mut acc = Vector::zeros(terms[0].len());
    for v in &terms {
        acc += v;
    }
    Ok(acc * c(0.0, -h / (2.0 * PI)))
}

/// Largest imaginary stretch before the midpoint rule aliases the contour oscillation.
const MAX_STRETCH: f64 = 2.0;

/// Trajectory of the nonlocal equation by numerical inversion of `[s - K(s)]^{-1} rho0`.
///
/// Short times use one contour enclosing every singularity. Once that would need more stretch
/// than [`MAX_STRETCH`], each Bohr-frequency cluster is inverted separately in its rotating
/// frame on a contour that only encloses the nearby poles; bath-induced transients far from
/// the imaginary axis are then dropped.
pub fn nonlocal_trajectory(m: &SystemModel, rho0: &Operator, times: &[f64], opts: &TalbotOptions) -> Result<Vec<Operator>> {
    use std::f64::consts::PI;
    let d = m.dim();
    let basis = m.basis();
    let r0 = vectorize(&basis.to_energy(rho0));
    let wmax = (0..d * d).map(|p| basis.gap(p / d, p % d).abs()).fold(0.0, f64::max);
    let freqs = basis.distinct_gaps(1e-6 * wmax.max(1e-300));
    let sep = freqs.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let n = opts.nodes.max(4) as f64;
    times
        .iter()
        .map(|&t| {
            if t == 0.0 {
                return Ok(rho0.clone());
            }
            let reach = TALBOT_NU * PI * n / t;
            let direct = opts.imag_scale.is_some() || 2.0 * 2.0 * wmax <= MAX_STRETCH * reach || !sep.is_finite();
            let v = if direct {
                talbot_invert(|s| solve_energy(m, s, &r0), t, 2.0 * wmax, opts)?
            } else {
                let nu = (0.45 * sep / reach).min(MAX_STRETCH);
                let local = TalbotOptions {
                    imag_scale: Some(nu),
                    ..*opts
                };
                let mut acc = Vector::zeros(d * d);
                for &w in &freqs {
                    let g = talbot_invert(|s| solve_energy(m, s - c(0.0, w), &r0), t, 0.0, &local)?;
                    acc += g * c(0.0, -w * t).exp();
                }
                acc
            };
            Ok(basis.from_energy(&unvectorize(&v, d)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{max_abs, trace_distance};
    use crate::bath::BathModel;
    use crate::tcl2::{propagate, PropagateOptions};

    fn sx() -> Operator {
        Operator::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }
    fn sz() -> Operator {
        Operator::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }

    fn qubit(bath: BathModel) -> SystemModel {
        SystemModel::new(sz() * c(0.5, 0.0), vec![&sx() + &sz() * c(0.3, 0.0)], bath).unwrap()
    }

    #[test]
    fn white_noise_kernel_is_constant() {
        let b = BathModel::white_noise(DMatrix::from_element(1, 1, c(0.1, 0.0))).unwrap();
        let m = qubit(b);
        let a = kernel_k2(&m, c(0.3, 0.2)).unwrap();
        let bb = kernel_k2(&m, c(2.0, -1.0)).unwrap();
        assert!((&a - &bb).max_abs() < 1e-15);
        let v = nonlocal_pauli(&m, c(0.7, 0.0)).unwrap();
        let w = pauli_system(&m).unwrap().w;
        assert!(max_abs(&(v - w.map(|x| c(x, 0.0)))) < 1e-14);
    }

    #[test]
    fn kernel_identities() {
        let m = qubit(BathModel::thermal(vec![0.1], 5.0, 0.5).unwrap());
        let s = c(0.4, 0.3);
        assert!(population_column_residual(&m, s).unwrap() < 1e-10);
        assert!(operator_laplace_residual(&m).unwrap() < 1e-14);
        for p in nonlocal_poles(&m).unwrap() {
            assert!(p.residual() < 1e-12);
            assert!(p.pole.re <= 1e-12);
        }
        assert!(double_shift_residual(&m, s).unwrap() > 1e-6);
        let v = nonlocal_pauli(&m, c(1e-7, 0.0)).unwrap();
        let w = pauli_system(&m).unwrap().w;
        assert!(max_abs(&(v - w.map(|x| c(x, 0.0)))) < 1e-7 * 0.1);
    }

    #[test]
    fn zero_coupling_resolvent() {
        let m = SystemModel::new(sz() * c(0.5, 0.0), vec![sx() * c(0.0, 0.0)], BathModel::thermal(vec![0.1], 5.0, 0.5).unwrap()).unwrap();
        let s = c(0.3, 0.1);
        let r = resolvent(&m, s).unwrap();
        let e = m.basis().superop_to_energy(&r);
        for i in 0..2 {
            for j in 0..2 {
                let want = ONE / (s + c(0.0, m.basis().gap(i, j)));
                assert!((e.get(i, j, i, j) - want).norm() < 1e-14);
            }
        }
        assert!(asymptotic_state(&m, &Operator::identity(2, 2)).is_err());
    }

    #[test]
    fn asymptotic_state_is_gibbs_and_maximally_mixed() {
        let m = qubit(BathModel::thermal(vec![1e-6], 5.0, 0.5).unwrap());
        let rho0 = Operator::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]);
        let a = asymptotic_state(&m, &rho0).unwrap();
        let g = m.basis().gibbs(0.5);
        let ge = Operator::from_diagonal(&nalgebra::DVector::from_iterator(2, g.iter().map(|&x| c(x, 0.0))));
        let gibbs = m.basis().from_energy(&ge);
        assert!(trace_distance(&a.state, &gibbs) < 1e-6);
        let wn = BathModel::white_noise(DMatrix::from_element(1, 1, c(0.1, 0.0))).unwrap();
        let m2 = SystemModel::new(sz() * c(0.5, 0.0), vec![sx()], wn).unwrap();
        let b = asymptotic_state(&m2, &rho0).unwrap();
        assert!(trace_distance(&b.state, &(Operator::identity(2, 2) * c(0.5, 0.0))) < 1e-8);
    }

    #[test]
    fn talbot_matches_white_noise_evolution() {
        let wn = BathModel::white_noise(DMatrix::from_element(1, 1, c(0.1, 0.0))).unwrap();
        let m = qubit(wn);
        let rho0 = Operator::from_row_slice(2, 2, &[c(0.6, 0.0), c(0.3, 0.2), c(0.3, -0.2), c(0.4, 0.0)]);
        let times = [0.5, 5.0, 30.0, 120.0, 400.0];
        let inv = nonlocal_trajectory(&m, &rho0, &times, &TalbotOptions::default()).unwrap();
        let tr = propagate(&m, &rho0, &times, &PropagateOptions::stationary()).unwrap();
        for (a, b) in inv.iter().zip(&tr.states) {
            assert!(max_abs(&(a - b)) < 1e-8, "{}", max_abs(&(a - b)));
        }
    }
}
