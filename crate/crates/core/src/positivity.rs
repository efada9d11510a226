//! Complete-positivity tools: second-order Magnus generator, its Lindblad coefficients,
//! the Magnus propagator and the averaged-dissipator test.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::algebra::{c, hermitian_eigenvalues, hermiticity_residual, max_abs, Operator, SuperOperator};
use crate::error::{Error, Result};
use crate::quad::{integrate_vec, QuadOptions};
use crate::tcl2::{dissipator_superop, microscopic_energy, pseudo_lindblad, SystemModel};

/// Absolute CP threshold, scaled by the Choi norm.
pub const CP_THRESHOLD: f64 = 1e-8;

/// `Phi2(t) = int_0^t L2_I(tau) dtau` with its Lindblad coefficients.
#[derive(Clone, Debug)]
pub struct AlgebraicGenerator {
    pub t: f64,
    /// Interaction-picture generator, energy basis.
    pub phi2: SuperOperator,
    /// Coefficients on `e_{ii'}` of the energy basis.
    pub delta: DMatrix<C64>,
    /// Integrated Hamiltonian shift (energy basis, interaction picture).
    pub v: Operator,
}

impl AlgebraicGenerator {
    pub fn delta_min_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.delta)[0]
    }
}

fn pair_gaps(m: &SystemModel) -> Vec<f64> {
    let d = m.dim();
    (0..d * d).map(|p| m.basis().gap(p / d, p % d)).collect()
}

/// Interaction-picture `(V, D)` at time `tau`, flattened as `[V (d^2), D (d^4)]`.
fn interaction_sample(m: &SystemModel, gaps: &[f64], tau: f64) -> Result<Vec<C64>> {
    let d = m.dim();
    let table = m.full_table(tau)?;
    let (v, dm) = microscopic_energy(m, &table);
    let mut out = Vec::with_capacity(d * d + d * d * d * d);
    for p in 0..d * d {
        out.push(v[(p / d, p % d)] * c(0.0, gaps[p] * tau).exp());
    }
    for i in 0..d * d {
        for j in 0..d * d {
            out.push(dm[(i, j)] * c(0.0, (gaps[i] - gaps[j]) * tau).exp());
        }
    }
    Ok(out)
}

/// Second-order Magnus generator at time `t`.
pub fn magnus_phi2(m: &SystemModel, t: f64) -> Result<AlgebraicGenerator> {
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("time must be >= 0, got {t}")));
    }
    let d = m.dim();
    let n = d * d + d * d * d * d;
    let gaps = pair_gaps(m);
    let vals = if t == 0.0 {
        vec![C64::new(0.0, 0.0); n]
    } else {
        let mut failure = None;
        let v = integrate_vec(
            |tau| match interaction_sample(m, &gaps, tau) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    vec![C64::new(0.0, 0.0); n]
                }
            },
            0.0,
            t,
            n,
            QuadOptions::with_rel(1e-12),
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        v
    };
    let v = Operator::from_fn(d, d, |a, b| vals[a * d + b]);
    let v = (&v + v.adjoint()) * c(0.5, 0.0);
    let delta = DMatrix::from_fn(d * d, d * d, |i, j| vals[d * d + i * d * d + j]);
    let delta = (&delta + delta.adjoint()) * c(0.5, 0.0);
    let phi2 = SuperOperator::hamiltonian(&v) + dissipator_superop(&delta, d);
    Ok(AlgebraicGenerator { t, phi2, delta, v })
}

/// `G(t) = G0(t) exp(Phi2(t))` in the input basis.
pub fn magnus_propagator(m: &SystemModel, t: f64) -> Result<SuperOperator> {
    let g = magnus_phi2(m, t)?;
    Ok(propagator_from_phi2(m, &g))
}

pub fn propagator_from_phi2(m: &SystemModel, g: &AlgebraicGenerator) -> SuperOperator {
    let d = m.dim();
    let gaps = pair_gaps(m);
    let e = g.phi2.exp();
    let mut mat = e.into_matrix();
    for q in 0..d * d {
        let ph = c(0.0, -gaps[q] * g.t).exp();
        for p in 0..d * d {
            mat[(q, p)] *= ph;
        }
    }
    let s = SuperOperator::from_matrix(d, mat).expect("square");
    m.basis().superop_from_energy(&s)
}

/// Outcome of a CP check at threshold `-CP_THRESHOLD * max(1, |Choi|)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CpVerdict {
    Pass,
    /// Slightly negative but within roundoff of zero.
    PassWithNote,
    Fail,
}

pub fn cp_verdict(min_eigenvalue: f64, scale: f64) -> CpVerdict {
    let thr = CP_THRESHOLD * scale.max(1.0);
    if min_eigenvalue >= 0.0 {
        CpVerdict::Pass
    } else if min_eigenvalue >= -thr {
        CpVerdict::PassWithNote
    } else {
        CpVerdict::Fail
    }
}

/// Result of the averaged-dissipator test on a time grid.
#[derive(Clone, Debug)]
pub struct WeakCpReport {
    /// Minimum eigenvalue of `int_0^t D_I` at each grid point after the first.
    pub running_min: Vec<f64>,
    pub min_eigenvalue: f64,
    pub worst_time: f64,
}

/// Trapezoid-integrates interaction-picture dissipator samples and reports the spectrum of every
/// running integral.
pub fn weak_cp_test(samples: &[DMatrix<C64>], grid: &[f64]) -> Result<WeakCpReport> {
    if samples.len() != grid.len() || grid.len() < 2 {
        return Err(Error::invalid("need at least two samples, one per grid point"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("grid must be strictly ascending"));
    }
    for (k, s) in samples.iter().enumerate() {
        let r = hermiticity_residual(s);
        if r > 1e-10 * max_abs(s).max(1e-300) {
            return Err(Error::NotHermitian {
                what: format!("dissipator sample {k}"),
                residual: r,
            });
        }
    }
    let mut acc = DMatrix::<C64>::zeros(samples[0].nrows(), samples[0].ncols());
    let mut running = Vec::with_capacity(grid.len() - 1);
    let mut worst = (f64::INFINITY, grid[0]);
    for k in 1..grid.len() {
        let h = grid[k] - grid[k - 1];
        acc += (&samples[k] + &samples[k - 1]) * c(0.5 * h, 0.0);
        let e = hermitian_eigenvalues(&acc)[0];
        running.push(e);
        if e < worst.0 {
            worst = (e, grid[k]);
        }
    }
    Ok(WeakCpReport {
        running_min: running,
        min_eigenvalue: worst.0,
        worst_time: worst.1,
    })
}

/// Rotates an energy-basis dissipator to the interaction picture at time `tau`.
pub fn interaction_dissipator(m: &SystemModel, d_energy: &DMatrix<C64>, tau: f64) -> DMatrix<C64> {
    let gaps = pair_gaps(m);
    DMatrix::from_fn(d_energy.nrows(), d_energy.ncols(), |i, j| {
        d_energy[(i, j)] * c(0.0, (gaps[i] - gaps[j]) * tau).exp()
    })
}

/// Interaction-picture microscopic TCL2 dissipators on a grid.
pub fn tcl2_dissipator_samples(m: &SystemModel, grid: &[f64]) -> Result<Vec<DMatrix<C64>>> {
    grid.par_iter()
        .map(|&tau| {
            let (_, dm) = microscopic_energy(m, &m.full_table(tau)?);
            Ok(interaction_dissipator(m, &dm, tau))
        })
        .collect()
}

/// Canonical interaction-picture dissipators of externally supplied Schrodinger-picture generators.
pub fn generator_dissipator_samples(m: &SystemModel, gens: &[(f64, SuperOperator)]) -> Result<Vec<DMatrix<C64>>> {
    gens.iter()
        .map(|(tau, l)| Ok(interaction_dissipator(m, &pseudo_lindblad(l, m)?.dissipator, *tau)))
        .collect()
}

/// Minimum Choi eigenvalue of the intermediate map `G(t2) G(t1)^{-1}`.
pub fn intermediate_map_check(m: &SystemModel, t1: f64, t2: f64) -> Result<f64> {
    if !(t2 > t1 && t1 >= 0.0) {
        return Err(Error::invalid(format!("need t2 > t1 >= 0, got t1 = {t1}, t2 = {t2}")));
    }
    let g2 = magnus_propagator(m, t2)?;
    if t1 == 0.0 {
        return Ok(g2.min_choi_eigenvalue());
    }
    let g1 = magnus_propagator(m, t1)?;
    let inv = g1.try_inverse()?;
    Ok(g2.compose(&inv).min_choi_eigenvalue())
}

/// Reads time-sampled generators: each row is `t` followed by `re, im` of every matrix entry
/// (row-major, `d^4` entries).
pub fn read_liouvillian_csv(path: &Path) -> Result<Vec<(f64, SuperOperator)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let nums: std::result::Result<Vec<f64>, _> = rec.iter().map(|s| s.parse::<f64>()).collect();
        let nums = match nums {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(e) => return Err(Error::invalid(format!("row {row}: {e}"))),
        };
        let n = (nums.len() - 1) / 2;
        let d = (n as f64).sqrt().sqrt().round() as usize;
        if nums.len() % 2 != 1 || d.pow(4) != n {
            return Err(Error::invalid(format!(
                "row {row}: expected 1 + 2 d^4 columns, found {}",
                nums.len()
            )));
        }
        let mat = DMatrix::from_row_iterator(d * d, d * d, (0..n).map(|k| c(nums[1 + 2 * k], nums[2 + 2 * k])));
        out.push((nums[0], SuperOperator::from_matrix(d, mat)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{ONE, ZERO};
    use crate::bath::BathModel;
    use crate::tcl2::{propagate, PropagateOptions};

    fn sz() -> Operator {
        Operator::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }
    fn sx() -> Operator {
        Operator::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }

    #[test]
    fn zero_time_is_trivial() {
        let m = SystemModel::new(sz(), vec![sx()], BathModel::thermal(vec![0.1], 5.0, 0.5).unwrap()).unwrap();
        let g = magnus_phi2(&m, 0.0).unwrap();
        assert_eq!(g.phi2.max_abs(), 0.0);
    }

    #[test]
    fn dephasing_magnus_is_exact() {
        let bath = BathModel::ou(DMatrix::from_element(1, 1, c(0.05, 0.0)), 2.0).unwrap();
        let m = SystemModel::new(sz() * c(0.5, 0.0), vec![sz()], bath).unwrap();
        let t = 4.0;
        let g = magnus_propagator(&m, t).unwrap();
        let rho0 = Operator::from_row_slice(2, 2, &[c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0), c(0.5, 0.0)]);
        let got = g.apply(&rho0);
        let (cc, lam) = (0.05, 2.0);
        let gamma = 4.0 * cc * (t / lam - (1.0 - (-lam * t).exp()) / (lam * lam));
        let want = 0.5 * (-gamma).exp();
        let ph = c(0.0, -t).exp();
        assert!((got[(0, 1)] - ph * want).norm() < 1e-10, "{} vs {}", got[(0, 1)], ph * want);
        let tr = propagate(&m, &rho0, &[t], &PropagateOptions::default()).unwrap();
        assert!(max_abs(&(&tr.states[0] - &got)) < 1e-8);
    }

    #[test]
    fn magnus_map_is_cp_and_trace_preserving() {
        let m = SystemModel::new(
            sz() * c(0.5, 0.0),
            vec![&sx() * c(0.7, 0.0) + &sz() * c(0.3, 0.0)],
            BathModel::thermal(vec![0.2], 5.0, 0.3).unwrap(),
        )
        .unwrap();
        for &t in &[0.1, 1.0, 5.0] {
            let g = magnus_phi2(&m, t).unwrap();
            assert!(g.delta_min_eigenvalue() > -1e-12);
            let p = propagator_from_phi2(&m, &g);
            assert!(p.min_choi_eigenvalue() > -1e-10);
            assert!(p.trace_map_residual() < 1e-9);
        }
    }

    #[test]
    fn weak_test_cases() {
        let grid: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let neg = vec![DMatrix::from_element(1, 1, c(-1.0, 0.0)); 20];
        assert!(weak_cp_test(&neg, &grid).unwrap().min_eigenvalue < 0.0);
        let pos = vec![DMatrix::from_element(1, 1, c(1.0, 0.0)); 20];
        assert!(weak_cp_test(&pos, &grid).unwrap().running_min.iter().all(|&x| x > 0.0));
        let bad = vec![DMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ONE]); 20];
        assert!(weak_cp_test(&bad, &grid).is_err());
    }

    #[test]
    fn white_noise_intermediate_maps_are_cp() {
        let bath = BathModel::white_noise(DMatrix::from_element(1, 1, c(0.1, 0.0))).unwrap();
        let m = SystemModel::new(sz(), vec![sx()], bath).unwrap();
        assert!(intermediate_map_check(&m, 0.5, 1.5).unwrap() > -1e-8);
    }
}
