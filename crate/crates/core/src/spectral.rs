//! Perturbative eigen-system of the stationary second-order Liouvillian.
//!
//! Index pairs `(i, j)` of the energy basis are grouped by Bohr frequency. Each group is
//! diagonalized on its own (for isolated off-diagonal pairs this reduces to reading off the
//! diagonal element of `L2`), and the off-group components of the right and left
//! eigen-operators are filled in to second order.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::algebra::{c, diagonalize, null_space, unvectorize, Operator, SpectralBasis, SuperOperator, Vector, ZERO};
use crate::bath::BathModel;
use crate::error::{Error, Result};
use crate::tcl2::SystemModel;

/// Relative frequency window within which distinct pairs are grouped as resonant.
pub const RESONANCE_TOL: f64 = 1e-6;

/// One eigen-mode: `L sigma = f sigma` and `sigma* L = f sigma*` (energy basis, bilinear pairing).
#[derive(Clone, Debug)]
pub struct DampingMode {
    /// Index pair the mode reduces to at zero coupling.
    pub label: (usize, usize),
    /// Index into [`SpectrumResult::clusters`].
    pub cluster: usize,
    pub eigenvalue: C64,
    /// Unperturbed frequency `w_ij`, so that `f = -i w + delta_f`.
    pub frequency: f64,
    pub right: Operator,
    pub left: Operator,
}

impl DampingMode {
    pub fn shift(&self) -> C64 {
        self.eigenvalue + c(0.0, self.frequency)
    }
}

/// Pauli rate matrix on the energy populations.
#[derive(Clone, Debug)]
pub struct PauliSystem {
    pub w: DMatrix<f64>,
    /// Null vectors of `W`, each normalized to unit sum.
    pub stationary: Vec<Vec<f64>>,
    pub eigenvalues: Vec<C64>,
}

impl PauliSystem {
    pub fn stationary_state(&self) -> &[f64] {
        &self.stationary[0]
    }

    pub fn multiplicity(&self) -> usize {
        self.stationary.len()
    }

    pub fn column_sum_residual(&self) -> f64 {
        let d = self.w.nrows();
        let scale = self.w.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(f64::MIN_POSITIVE);
        (0..d).map(|j| self.w.column(j).sum().abs()).fold(0.0, f64::max) / scale
    }

    pub fn null_residual(&self) -> f64 {
        let p = nalgebra::DVector::from_column_slice(self.stationary_state());
        (&self.w * p).amax()
    }
}

#[derive(Clone, Debug)]
pub struct SpectrumResult {
    pub modes: Vec<DampingMode>,
    pub pauli: PauliSystem,
    /// Index pairs grouped by (near) equal frequency; the zero-frequency group holds the populations.
    pub clusters: Vec<Vec<(usize, usize)>>,
    /// Groups other than the population sector that contain more than one pair.
    pub degenerate_blocks: Vec<usize>,
    basis: SpectralBasis,
}

impl SpectrumResult {
    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    /// Eigenvalue associated with the pair `(i, j)`, `i != j`.
    pub fn eigenvalue(&self, i: usize, j: usize) -> Option<C64> {
        self.mode(i, j).map(|m| m.eigenvalue)
    }

    pub fn mode(&self, i: usize, j: usize) -> Option<&DampingMode> {
        self.modes.iter().find(|m| m.label == (i, j))
    }

    /// Largest `|f_ji - conj(f_ij)|` over off-diagonal modes.
    pub fn adjoint_symmetry_residual(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                if i == j {
                    continue;
                }
                if let (Some(a), Some(b)) = (self.eigenvalue(i, j), self.eigenvalue(j, i)) {
                    worst = worst.max((a - b.conj()).norm());
                }
            }
        }
        worst
    }
}

fn cluster_pairs(basis: &SpectralBasis) -> Vec<Vec<(usize, usize)>> {
    let d = basis.dim();
    let scale = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .fold(0.0f64, |m, (i, j)| m.max(basis.gap(i, j).abs()));
    let tol = RESONANCE_TOL * scale;
    let mut pairs: Vec<(f64, (usize, usize))> =
        (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|p| (basis.gap(p.0, p.1), p)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut out: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut last = f64::NAN;
    for (g, p) in pairs {
        if out.is_empty() || (g - last).abs() > tol {
            out.push(vec![p]);
        } else {
            out.last_mut().unwrap().push(p);
        }
        last = g;
    }
    out
}

/// Pauli rate matrix `W_ij = sum_nm <i|L_m|j> alpha_nm(w_ij) conj(<i|L_n|j>)`, `i != j`.
pub fn pauli_matrix(m: &SystemModel) -> Result<DMatrix<f64>> {
    let d = m.dim();
    let basis = m.basis();
    let le = m.couplings_energy();
    let nch = m.channels();
    let mut w = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i == j {
                continue;
            }
            let a = spectrum_matrix(m.bath(), basis.gap(i, j))?;
            let mut s = ZERO;
            for n in 0..nch {
                for k in 0..nch {
                    s += le[k][(i, j)] * a[(n, k)] * le[n][(i, j)].conj();
                }
            }
            w[(i, j)] = s.re;
        }
    }
    for j in 0..d {
        let col: f64 = (0..d).filter(|&i| i != j).map(|i| w[(i, j)]).sum();
        w[(j, j)] = -col;
    }
    Ok(w)
}

// 2 He[A(w)], taken from the spectral density whenever it is available in closed form
fn spectrum_matrix(bath: &BathModel, w: f64) -> Result<DMatrix<C64>> {
    bath.alpha_spectrum(w)
}

pub fn pauli_system(m: &SystemModel) -> Result<PauliSystem> {
    let w = pauli_matrix(m)?;
    let wc = w.map(|x| c(x, 0.0));
    let scale = w.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let d = w.nrows();
    let stationary = if scale == 0.0 {
        (0..d).map(|k| (0..d).map(|i| if i == k { 1.0 } else { 0.0 }).collect()).collect()
    } else {
        let ns = null_space(&wc, 1e-10);
        if ns.is_empty() {
            return Err(Error::numerical("Pauli matrix has no null vector"));
        }
        ns.iter()
            .map(|v| {
                let s: C64 = v.iter().sum();
                let v = if s.norm() > 1e-12 { v / s } else { v.clone() };
                v.iter().map(|z| z.re).collect()
            })
            .collect()
    };
    let eigenvalues = crate::algebra::eig_general(&wc)?.0;
    Ok(PauliSystem {
        w,
        stationary,
        eigenvalues,
    })
}

/// Perturbative damping basis of the stationary generator.
pub fn perturbative_spectrum(m: &SystemModel) -> Result<SpectrumResult> {
    let d = m.dim();
    let basis = m.basis().clone();
    let l2 = m.l2_stationary_energy()?;
    let l2m = l2.matrix();
    let pauli = pauli_system(m)?;
    let clusters = cluster_pairs(&basis);
    let gap = |p: usize| basis.gap(p / d, p % d);

    let blocks: Result<Vec<Vec<DampingMode>>> = clusters
        .par_iter()
        .enumerate()
        .map(|(ci, members)| {
            let idx: Vec<usize> = members.iter().map(|&(i, j)| i * d + j).collect();
            let n = idx.len();
            let wbar = idx.iter().map(|&p| gap(p)).sum::<f64>() / n as f64;
            let mut b = DMatrix::<C64>::from_fn(n, n, |a, bb| l2m[(idx[a], idx[bb])]);
            for a in 0..n {
                b[(a, a)] += c(0.0, -gap(idx[a]));
                for bb in 0..n {
                    let (pa, pb) = (members[a], members[bb]);
                    if pa.0 == pa.1 && pb.0 == pb.1 {
                        b[(a, bb)] = c(pauli.w[(pa.0, pb.0)], 0.0);
                    }
                }
            }
            let (vals, r, rinv) = diagonalize(&b)?;
            let outside: Vec<usize> = (0..d * d).filter(|p| !idx.contains(p)).collect();
            let mut taken = vec![false; n];
            let mut modes = Vec::with_capacity(n);
            for k in 0..n {
                let mut right = Vector::zeros(d * d);
                let mut left = Vector::zeros(d * d);
                for (a, &p) in idx.iter().enumerate() {
                    right[p] = r[(a, k)];
                    left[p] = rinv[(k, a)];
                }
                for &q in &outside {
                    let den = c(0.0, gap(q) - wbar);
                    let mut sr = ZERO;
                    let mut sl = ZERO;
                    for (a, &p) in idx.iter().enumerate() {
                        sr += l2m[(q, p)] * r[(a, k)];
                        sl += rinv[(k, a)] * l2m[(p, q)];
                    }
                    right[q] = sr / den;
                    left[q] = sl / den;
                }
                // label by the dominant unassigned member
                let mut best = None;
                for a in 0..n {
                    if taken[a] {
                        continue;
                    }
                    let v = r[(a, k)].norm();
                    if best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((a, v));
                    }
                }
                let a = best.expect("unassigned member").0;
                taken[a] = true;
                modes.push(DampingMode {
                    label: members[a],
                    cluster: ci,
                    eigenvalue: vals[k],
                    frequency: wbar,
                    right: unvectorize(&right, d),
                    left: unvectorize(&left, d),
                });
            }
            Ok(modes)
        })
        .collect();
    let modes: Vec<DampingMode> = blocks?.into_iter().flatten().collect();
    let degenerate_blocks = clusters
        .iter()
        .enumerate()
        .filter(|(_, ms)| ms.len() > 1 && ms.iter().any(|p| p.0 != p.1))
        .map(|(k, _)| k)
        .collect();
    Ok(SpectrumResult {
        modes,
        pauli,
        clusters,
        degenerate_blocks,
        basis,
    })
}

/// `exp(t L) ~ sum_k exp(f_k t) sigma_k sigma*_k`, in the input basis.
pub fn spectral_propagator(spec: &SpectrumResult, t: f64) -> Result<SuperOperator> {
    let d = spec.dim();
    if spec.modes.len() != d * d {
        return Err(Error::invalid(format!(
            "incomplete eigen-system: {} modes for dimension {d}",
            spec.modes.len()
        )));
    }
    let mut m = DMatrix::<C64>::zeros(d * d, d * d);
    for mode in &spec.modes {
        let r = crate::algebra::vectorize(&mode.right);
        let l = crate::algebra::vectorize(&mode.left);
        let e = (mode.eigenvalue * t).exp();
        m += (r * l.transpose()) * e;
    }
    let s = SuperOperator::from_matrix(d, m)?;
    Ok(spec.basis.superop_from_energy(&s))
}

/// Largest `|sigma*_k . sigma_k' - delta_kk'|` over all modes (bilinear pairing).
pub fn damping_basis_orthogonality(spec: &SpectrumResult) -> f64 {
    let rs: Vec<Vector> = spec.modes.iter().map(|m| crate::algebra::vectorize(&m.right)).collect();
    let ls: Vec<Vector> = spec.modes.iter().map(|m| crate::algebra::vectorize(&m.left)).collect();
    let mut worst = 0.0f64;
    for (a, l) in ls.iter().enumerate() {
        for (b, r) in rs.iter().enumerate() {
            let v: C64 = l.iter().zip(r.iter()).map(|(x, y)| x * y).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((v - want).norm());
        }
    }
    worst
}

/// Closed-form second-order shift of the off-diagonal eigenvalue `f_ij`.
pub fn off_frequency_shift(m: &SystemModel, i: usize, j: usize) -> Result<C64> {
    let d = m.dim();
    if i >= d || j >= d {
        return Err(Error::invalid("level index out of range"));
    }
    let basis = m.basis();
    let le = m.couplings_energy();
    let nch = m.channels();
    let bath = m.bath();
    let a0 = bath.coefficient_stationary(0.0)?;
    let mut s = ZERO;
    for n in 0..nch {
        for k in 0..nch {
            let he = a0[(n, k)] + a0[(k, n)].conj();
            s += le[k][(i, i)] * he * le[n][(j, j)].conj();
        }
    }
    for q in 0..d {
        let ai = bath.coefficient_stationary(basis.gap(q, i))?;
        let aj = bath.coefficient_stationary(basis.gap(q, j))?;
        for n in 0..nch {
            for k in 0..nch {
                s -= le[k][(q, i)] * ai[(n, k)] * le[n][(q, i)].conj();
                s -= le[k][(q, j)] * aj[(k, n)].conj() * le[n][(q, j)].conj();
            }
        }
    }
    Ok(s)
}

/// Decoherence rate rebuilt from the Pauli diagonals and the zero-frequency noise:
/// `(W_ii + W_jj)/2 - sum_nm dl_m He[A_nm(0)] conj(dl_n)`.
pub fn decoherence_rate(m: &SystemModel, w: &DMatrix<f64>, i: usize, j: usize) -> Result<f64> {
    let le = m.couplings_energy();
    let nch = m.channels();
    let a0 = m.bath().coefficient_stationary(0.0)?;
    let dl: Vec<C64> = (0..nch).map(|n| le[n][(i, i)] - le[n][(j, j)]).collect();
    let mut q = ZERO;
    for n in 0..nch {
        for k in 0..nch {
            let he = (a0[(n, k)] + a0[(k, n)].conj()) * 0.5;
            q += dl[k] * he * dl[n].conj();
        }
    }
    Ok(0.5 * (w[(i, i)] + w[(j, j)]) - q.re)
}

/// Detailed-balance diagnostics of the Pauli rates.
#[derive(Clone, Copy, Debug)]
pub struct DetailedBalance {
    /// `max |p_i/p_j - r_ij| / r_ij` with `r_ij = Tr alpha(w_ij) / Tr alpha(w_ji)`.
    pub ratio_residual: f64,
    /// `max |r_ij r_jk - r_ik| / r_ik` over level triples.
    pub transitivity_residual: f64,
    /// `max |W_ij p_j - W_ji p_i| / max(W_ij p_j, W_ji p_i)`.
    pub flux_residual: f64,
}

impl DetailedBalance {
    pub fn max(&self) -> f64 {
        self.ratio_residual.max(self.transitivity_residual).max(self.flux_residual)
    }
}

/// Uses the Gibbs state for thermal baths and the Pauli stationary state otherwise.
pub fn detailed_balance_residual(m: &SystemModel) -> Result<DetailedBalance> {
    let d = m.dim();
    let basis = m.basis();
    let p = match m.bath().temperature() {
        Some(t) if t > 0.0 => basis.gibbs(t),
        Some(_) => return Err(Error::invalid("detailed balance ratios are singular at T = 0")),
        None => pauli_system(m)?.stationary_state().to_vec(),
    };
    let w = pauli_matrix(m)?;
    let tol = 1e-12 * basis.energies().iter().fold(1.0f64, |a, e| a.max(e.abs()));
    let mut ratio = DMatrix::<f64>::from_element(d, d, f64::NAN);
    for i in 0..d {
        for j in 0..d {
            let g = basis.gap(i, j);
            if g.abs() <= tol {
                continue;
            }
            let num = m.bath().alpha_spectrum(g)?.trace().re;
            let den = m.bath().alpha_spectrum(-g)?.trace().re;
            if num > 0.0 && den > 0.0 {
                ratio[(i, j)] = num / den;
            }
        }
    }
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(f64::MIN_POSITIVE);
    let mut ratio_residual = 0.0f64;
    let mut flux_residual = 0.0f64;
    let mut transitivity_residual = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            let r = ratio[(i, j)];
            if r.is_finite() {
                ratio_residual = ratio_residual.max(rel(p[i] / p[j], r));
                for k in 0..d {
                    let (a, b) = (ratio[(j, k)], ratio[(i, k)]);
                    if a.is_finite() && b.is_finite() {
                        transitivity_residual = transitivity_residual.max(rel(r * a, b));
                    }
                }
            }
            if i != j {
                let f1 = w[(i, j)] * p[j];
                let f2 = w[(j, i)] * p[i];
                let s = f1.abs().max(f2.abs());
                if s > 0.0 {
                    flux_residual = flux_residual.max((f1 - f2).abs() / s);
                }
            }
        }
    }
    Ok(DetailedBalance {
        ratio_residual,
        transitivity_residual,
        flux_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::ONE;
    use crate::tcl2::{build_generator, Mode};

    fn three_level(g: f64, temp: f64) -> SystemModel {
        let h = Operator::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0), c(2.7, 0.0)]));
        let l = Operator::from_row_slice(
            3,
            3,
            &[c(0.3, 0.0), c(1.0, 0.2), c(0.4, 0.0), c(1.0, -0.2), c(-0.5, 0.0), c(0.7, 0.1), c(0.4, 0.0), c(0.7, -0.1), c(0.1, 0.0)],
        ) * c(g, 0.0);
        SystemModel::new(h, vec![l], BathModel::thermal(vec![0.1], 6.0, temp).unwrap()).unwrap()
    }

    #[test]
    fn shifts_agree_with_generator_and_closed_forms() {
        let m = three_level(1.0, 0.8);
        let s = perturbative_spectrum(&m).unwrap();
        let l2 = m.l2_stationary_energy().unwrap();
        let w = &s.pauli.w;
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let mode = s.mode(i, j).unwrap();
                let direct = l2.get(i, j, i, j);
                let closed = off_frequency_shift(&m, i, j).unwrap();
                assert!((mode.shift() - direct).norm() < 1e-13);
                assert!((closed - direct).norm() < 1e-13);
                let rate = decoherence_rate(&m, w, i, j).unwrap();
                assert!((rate - closed.re).abs() < 1e-12);
                assert!(closed.re <= 0.5 * (w[(i, i)] + w[(j, j)]) + 1e-12);
            }
        }
        assert!(s.adjoint_symmetry_residual() < 1e-12);
    }

    #[test]
    fn pauli_matches_generator_block_and_gibbs() {
        let m = three_level(1.0, 0.8);
        let p = pauli_system(&m).unwrap();
        let l2 = m.l2_stationary_energy().unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((l2.get(i, i, j, j).re - p.w[(i, j)]).abs() < 1e-13);
            }
        }
        assert!(p.column_sum_residual() < 1e-14);
        let gibbs = m.basis().gibbs(0.8);
        for (a, b) in p.stationary_state().iter().zip(&gibbs) {
            assert!((a - b).abs() < 1e-10);
        }
        let db = detailed_balance_residual(&m).unwrap();
        assert!(db.max() < 1e-9, "{db:?}");
    }

    #[test]
    fn zero_temperature_pauli_is_upper_triangular() {
        let p = pauli_system(&three_level(1.0, 0.0)).unwrap();
        for i in 0..3 {
            for j in 0..i {
                assert_eq!(p.w[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn zero_coupling_spectrum_is_bare() {
        let s = perturbative_spectrum(&three_level(0.0, 0.8)).unwrap();
        for mode in &s.modes {
            assert!(mode.shift().norm() < 1e-15);
        }
        assert!(damping_basis_orthogonality(&s) < 1e-14);
    }

    #[test]
    fn orthogonality_defect_is_fourth_order() {
        let r1 = damping_basis_orthogonality(&perturbative_spectrum(&three_level(0.4, 0.8)).unwrap());
        let r2 = damping_basis_orthogonality(&perturbative_spectrum(&three_level(0.2, 0.8)).unwrap());
        assert!(r1 / r2 >= 10.0, "{r1} {r2}");
    }

    #[test]
    fn propagator_preserves_trace_and_tracks_exponential() {
        let mut errs = vec![];
        for g in [0.4, 0.2] {
            let m = three_level(g, 0.8);
            let s = perturbative_spectrum(&m).unwrap();
            let t = 3.0;
            let p = spectral_propagator(&s, t).unwrap();
            assert!(p.trace_map_residual() < 1e-10);
            let exact = (build_generator(&m, Mode::Stationary, None).unwrap() * t).exp();
            errs.push((&p - &exact).max_abs());
        }
        assert!(errs[0] / errs[1] >= 10.0, "{errs:?}");
    }

    #[test]
    fn degenerate_levels_are_grouped() {
        let h = Operator::from_diagonal(&nalgebra::DVector::from_vec(vec![c(0.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)]));
        let l = Operator::from_row_slice(3, 3, &[ZERO, ONE, ZERO, ONE, ZERO, ONE, ZERO, ONE, ZERO]) * c(0.3, 0.0);
        let m = SystemModel::new(h, vec![l], BathModel::thermal(vec![0.1], 6.0, 0.8).unwrap()).unwrap();
        let s = perturbative_spectrum(&m).unwrap();
        assert!(!s.degenerate_blocks.is_empty());
        assert_eq!(s.modes.len(), 9);
        let p = spectral_propagator(&s, 1.0).unwrap();
        assert!(p.trace_map_residual() < 1e-10);
    }
}
