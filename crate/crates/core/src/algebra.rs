//! Dense operators, superoperators and the energy eigenbasis.
//!
//! Density matrices are vectorized row-major: `vec(rho)[i*d + j] = rho[(i, j)]`.
//! A superoperator matrix entry `S[(i,j),(i',j')]` is `<i| S{|i'><j'|} |j>`,
//! so the sandwich `rho -> A rho B` is `kron(A, B^T)`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

pub type Operator = DMatrix<C64>;
pub type Vector = DVector<C64>;

pub const I: C64 = C64::new(0.0, 1.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const ZERO: C64 = C64::new(0.0, 0.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Frobenius norm.
pub fn norm(m: &Operator) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest entry modulus.
pub fn max_abs(m: &Operator) -> f64 {
    m.iter().fold(0.0, |a, z| a.max(z.norm()))
}

pub fn trace(m: &Operator) -> C64 {
    m.diagonal().iter().sum()
}

pub fn commutator(a: &Operator, b: &Operator) -> Operator {
    a * b - b * a
}

pub fn anticommutator(a: &Operator, b: &Operator) -> Operator {
    a * b + b * a
}

/// `max |m - m^dagger|`.
pub fn hermiticity_residual(m: &Operator) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn hermitian_part(m: &Operator) -> Operator {
    (m + m.adjoint()) * c(0.5, 0.0)
}

/// Checks squareness and Hermiticity within `1e-12` relative to the norm.
pub fn require_hermitian(what: &str, m: &Operator) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension {
            context: format!("{what} must be square"),
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let scale = max_abs(m).max(1.0);
    let residual = hermiticity_residual(m);
    if residual > 1e-12 * scale || m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NotHermitian {
            what: what.to_string(),
            residual,
        });
    }
    Ok(())
}

pub fn vectorize(m: &Operator) -> Vector {
    let (r, cc) = m.shape();
    Vector::from_fn(r * cc, |k, _| m[(k / cc, k % cc)])
}

pub fn unvectorize(v: &Vector, d: usize) -> Operator {
    Operator::from_fn(d, d, |i, j| v[i * d + j])
}

/// `|i><j|` in dimension `d`.
pub fn unit(d: usize, i: usize, j: usize) -> Operator {
    let mut m = Operator::zeros(d, d);
    m[(i, j)] = ONE;
    m
}

/// Trace distance `1/2 ||a - b||_1` for Hermitian arguments.
pub fn trace_distance(a: &Operator, b: &Operator) -> f64 {
    let diff = hermitian_part(&(a - b));
    let eig = SymmetricEigen::new(diff);
    0.5 * eig.eigenvalues.iter().map(|x| x.abs()).sum::<f64>()
}

/// Ascending eigenvalues of the Hermitian part of `m`.
pub fn hermitian_eigenvalues(m: &DMatrix<C64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(hermitian_part(m));
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Partial trace over the second tensor factor of a `(d_a*d_b)`-dimensional operator.
pub fn partial_trace_second(m: &Operator, d_a: usize, d_b: usize) -> Operator {
    Operator::from_fn(d_a, d_a, |i, j| {
        (0..d_b).map(|k| m[(i * d_b + k, j * d_b + k)]).sum()
    })
}

/// Right null space of `m`: singular vectors with singular value below `rel_tol * sigma_max`.
pub fn null_space(m: &DMatrix<C64>, rel_tol: f64) -> Vec<Vector> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let smax = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut out = Vec::new();
    let k = svd.singular_values.len();
    for r in 0..k {
        if svd.singular_values[r] <= rel_tol * smax.max(f64::MIN_POSITIVE) {
            out.push(Vector::from_fn(n, |i, _| v_t[(r, i)].conj()));
        }
    }
    // rank-deficient wide layouts cannot occur for square inputs; remaining
    // directions beyond the singular-value count belong to the kernel too
    for r in k..n {
        out.push(Vector::from_fn(n, |i, _| v_t[(r, i)].conj()));
    }
    out
}

/// Eigenvalues and right eigenvectors of a general complex matrix via complex Schur form.
///
/// Eigenvector columns are unit-normalized. Fails if the eigenvector matrix is singular
/// (defective input).
pub fn eig_general(m: &DMatrix<C64>) -> Result<(Vec<C64>, DMatrix<C64>)> {
    let n = m.nrows();
    if n == 0 {
        return Ok((vec![], DMatrix::zeros(0, 0)));
    }
    let schur = m
        .clone()
        .try_schur(1e-15, 10_000)
        .ok_or_else(|| Error::NoConvergence("complex Schur decomposition".into()))?;
    let (q, t) = schur.unpack();
    let scale = max_abs(&t).max(f64::MIN_POSITIVE);
    let mut vecs = DMatrix::<C64>::zeros(n, n);
    let mut vals = Vec::with_capacity(n);
    for k in 0..n {
        let lambda = t[(k, k)];
        vals.push(lambda);
        let mut y = Vector::zeros(n);
        y[k] = ONE;
        for j in (0..k).rev() {
            let s: C64 = ((j + 1)..=k).map(|l| t[(j, l)] * y[l]).sum();
            let mut den = t[(j, j)] - lambda;
            if den.norm() < 1e-14 * scale {
                den = c(1e-14 * scale, 0.0);
            }
            y[j] = -s / den;
        }
        let v = &q * y;
        let nv = v.norm();
        vecs.set_column(k, &(v / c(nv, 0.0)));
    }
    Ok((vals, vecs))
}

/// Diagonalization `m = R diag(vals) R^{-1}`; returns `(vals, R, R^{-1})`.
pub fn diagonalize(m: &DMatrix<C64>) -> Result<(Vec<C64>, DMatrix<C64>, DMatrix<C64>)> {
    let (vals, r) = eig_general(m)?;
    let rinv = r
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("eigenvector matrix (defective generator)".into()))?;
    Ok((vals, r, rinv))
}

/// Energy eigenbasis of a Hermitian Hamiltonian.
///
/// Energies ascend; within a degenerate cluster the basis is fixed canonically by
/// Gram-Schmidt on the columns of the cluster projector, and every vector has its
/// first significant component real and positive.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    energies: Vec<f64>,
    vectors: Operator,
}

/// Energies closer than this (relative to the spread) are treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-9;

impl SpectralBasis {
    pub fn new(h: &Operator) -> Result<Self> {
        require_hermitian("Hamiltonian", h)?;
        let d = h.nrows();
        let eig = SymmetricEigen::new(hermitian_part(h));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let energies: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
        let mut vectors = Operator::zeros(d, d);
        for (col, &k) in order.iter().enumerate() {
            vectors.set_column(col, &eig.eigenvectors.column(k));
        }
        let spread = energies
            .iter()
            .fold(0.0f64, |a, &e| a.max(e.abs()))
            .max(1.0);
        let mut start = 0;
        while start < d {
            let mut end = start + 1;
            while end < d && energies[end] - energies[end - 1] <= DEGENERACY_TOL * spread {
                end += 1;
            }
            if end - start > 1 {
                let block = vectors.columns(start, end - start).into_owned();
                let canon = canonical_subspace(&block);
                for (off, col) in canon.column_iter().enumerate() {
                    vectors.set_column(start + off, &col);
                }
            } else {
                let mut col = vectors.column(start).into_owned();
                fix_phase(&mut col);
                vectors.set_column(start, &col);
            }
            start = end;
        }
        Ok(SpectralBasis { energies, vectors })
    }

    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Unitary whose columns are the energy eigenvectors.
    pub fn vectors(&self) -> &Operator {
        &self.vectors
    }

    /// Bohr frequency `omega_i - omega_j`.
    pub fn gap(&self, i: usize, j: usize) -> f64 {
        self.energies[i] - self.energies[j]
    }

    pub fn to_energy(&self, x: &Operator) -> Operator {
        self.vectors.adjoint() * x * &self.vectors
    }

    pub fn from_energy(&self, x: &Operator) -> Operator {
        &self.vectors * x * self.vectors.adjoint()
    }

    /// Superoperator expressed in the energy basis.
    pub fn superop_to_energy(&self, s: &SuperOperator) -> SuperOperator {
        let u = &self.vectors;
        let to = SuperOperator::sandwich(&u.adjoint(), u);
        let from = SuperOperator::sandwich(u, &u.adjoint());
        to.compose(s).compose(&from)
    }

    pub fn superop_from_energy(&self, s: &SuperOperator) -> SuperOperator {
        let u = &self.vectors;
        let to = SuperOperator::sandwich(&u.adjoint(), u);
        let from = SuperOperator::sandwich(u, &u.adjoint());
        from.compose(s).compose(&to)
    }

    /// Distinct Bohr frequencies, merged within `tol` (absolute), ascending.
    pub fn distinct_gaps(&self, tol: f64) -> Vec<f64> {
        let d = self.dim();
        let mut all: Vec<f64> = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| self.gap(i, j))
            .collect();
        all.sort_by(|a, b| a.total_cmp(b));
        let mut out: Vec<f64> = Vec::new();
        for g in all {
            match out.last() {
                Some(&last) if (g - last).abs() <= tol => {}
                _ => out.push(g),
            }
        }
        out
    }

    /// Gibbs populations `exp(-omega_i / T) / Z` in the energy basis.
    pub fn gibbs(&self, temperature: f64) -> Vec<f64> {
        let e0 = self.energies[0];
        let w: Vec<f64> = self
            .energies
            .iter()
            .map(|&e| {
                if temperature > 0.0 {
                    (-(e - e0) / temperature).exp()
                } else if (e - e0).abs() <= DEGENERACY_TOL * e0.abs().max(1.0) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    }
}

fn fix_phase(v: &mut Vector) {
    let m = v.iter().fold(0.0f64, |a, z| a.max(z.norm()));
    if let Some(first) = v.iter().find(|z| z.norm() > 1e-8 * m).copied() {
        let ph = first.conj() / first.norm();
        for z in v.iter_mut() {
            *z *= ph;
        }
    }
}

fn canonical_subspace(block: &Operator) -> Operator {
    let (d, k) = block.shape();
    let p = block * block.adjoint();
    let mut basis: Vec<Vector> = Vec::with_capacity(k);
    for col in 0..d {
        if basis.len() == k {
            break;
        }
        let mut v: Vector = p.column(col).into_owned();
        for b in &basis {
            let proj = b.dotc(&v);
            v -= b * proj;
        }
        let nv = v.norm();
        if nv > 1e-6 {
            let mut u = v / c(nv, 0.0);
            fix_phase(&mut u);
            basis.push(u);
        }
    }
    Operator::from_columns(&basis)
}

/// Linear map on `d x d` operators stored as a `d^2 x d^2` matrix (row-major vectorization).
#[derive(Clone, Debug, PartialEq)]
pub struct SuperOperator {
    dim: usize,
    matrix: DMatrix<C64>,
}

impl SuperOperator {
    pub fn from_matrix(dim: usize, matrix: DMatrix<C64>) -> Result<Self> {
        if matrix.nrows() != dim * dim || matrix.ncols() != dim * dim {
            return Err(Error::Dimension {
                context: "superoperator matrix".into(),
                expected: dim * dim,
                found: matrix.nrows(),
            });
        }
        Ok(SuperOperator { dim, matrix })
    }

    pub fn zeros(dim: usize) -> Self {
        SuperOperator {
            dim,
            matrix: DMatrix::zeros(dim * dim, dim * dim),
        }
    }

    pub fn identity(dim: usize) -> Self {
        SuperOperator {
            dim,
            matrix: DMatrix::identity(dim * dim, dim * dim),
        }
    }

    /// `rho -> a rho b`.
    pub fn sandwich(a: &Operator, b: &Operator) -> Self {
        SuperOperator {
            dim: a.nrows(),
            matrix: a.kronecker(&b.transpose()),
        }
    }

    /// `rho -> a rho`.
    pub fn left(a: &Operator) -> Self {
        Self::sandwich(a, &Operator::identity(a.nrows(), a.nrows()))
    }

    /// `rho -> rho b`.
    pub fn right(b: &Operator) -> Self {
        Self::sandwich(&Operator::identity(b.nrows(), b.nrows()), b)
    }

    /// `rho -> -i [h, rho]`.
    pub fn hamiltonian(h: &Operator) -> Self {
        (Self::left(h) - Self::right(h)) * (-I)
    }

    /// Builds the matrix column by column from the images of `|i><j|`.
    pub fn from_fn(dim: usize, f: impl Fn(&Operator) -> Operator) -> Self {
        let mut matrix = DMatrix::zeros(dim * dim, dim * dim);
        for i in 0..dim {
            for j in 0..dim {
                let img = f(&unit(dim, i, j));
                matrix.set_column(i * dim + j, &vectorize(&img));
            }
        }
        SuperOperator { dim, matrix }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    /// `S[(i,j),(i',j')]`.
    pub fn get(&self, i: usize, j: usize, ip: usize, jp: usize) -> C64 {
        let d = self.dim;
        self.matrix[(i * d + j, ip * d + jp)]
    }

    pub fn apply(&self, rho: &Operator) -> Operator {
        unvectorize(&(&self.matrix * vectorize(rho)), self.dim)
    }

    /// `self` after `other`.
    pub fn compose(&self, other: &SuperOperator) -> SuperOperator {
        SuperOperator {
            dim: self.dim,
            matrix: &self.matrix * &other.matrix,
        }
    }

    pub fn exp(&self) -> SuperOperator {
        SuperOperator {
            dim: self.dim,
            matrix: self.matrix.exp(),
        }
    }

    pub fn try_inverse(&self) -> Result<SuperOperator> {
        let inv = self
            .matrix
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Singular("superoperator inversion".into()))?;
        Ok(SuperOperator {
            dim: self.dim,
            matrix: inv,
        })
    }

    /// Dual map under the pairing `Tr[X S{rho}] = Tr[S^dual{X} rho]`.
    pub fn dual(&self) -> SuperOperator {
        let d = self.dim;
        // vec(Y^T) = S^T vec(X^T)
        let swap = DMatrix::from_fn(d * d, d * d, |r, cc| {
            let (i, j) = (r / d, r % d);
            if cc == j * d + i {
                ONE
            } else {
                ZERO
            }
        });
        SuperOperator {
            dim: d,
            matrix: &swap * self.matrix.transpose() * &swap,
        }
    }

    /// Choi rearrangement `C[(i,i'),(j,j')] = S[(i,j),(i',j')]`; an involution up to index roles.
    pub fn choi(&self) -> DMatrix<C64> {
        let d = self.dim;
        DMatrix::from_fn(d * d, d * d, |r, cc| {
            let (i, ip) = (r / d, r % d);
            let (j, jp) = (cc / d, cc % d);
            self.matrix[(i * d + j, ip * d + jp)]
        })
    }

    pub fn from_choi(dim: usize, choi: &DMatrix<C64>) -> SuperOperator {
        let d = dim;
        let matrix = DMatrix::from_fn(d * d, d * d, |r, cc| {
            let (i, j) = (r / d, r % d);
            let (ip, jp) = (cc / d, cc % d);
            choi[(i * d + ip, j * d + jp)]
        });
        SuperOperator { dim, matrix }
    }

    /// Smallest eigenvalue of the Hermitian part of the Choi matrix.
    pub fn min_choi_eigenvalue(&self) -> f64 {
        hermitian_eigenvalues(&self.choi())[0]
    }

    /// `max_{i',j'} |sum_i S[(i,i),(i',j')]|`, zero for trace-preserving maps.
    pub fn trace_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for col in 0..d * d {
            let s: C64 = (0..d).map(|i| self.matrix[(i * d + i, col)]).sum();
            worst = worst.max(s.norm());
        }
        worst
    }

    /// Same as [`trace_residual`](Self::trace_residual) but against `delta_{i'j'}` (maps, not generators).
    pub fn trace_map_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for ip in 0..d {
            for jp in 0..d {
                let s: C64 = (0..d).map(|i| self.get(i, i, ip, jp)).sum();
                let target = if ip == jp { ONE } else { ZERO };
                worst = worst.max((s - target).norm());
            }
        }
        worst
    }

    /// `max |S[(i,j),(i',j')] - conj(S[(j,i),(j',i')])|`.
    pub fn hermiticity_residual(&self) -> f64 {
        let d = self.dim;
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                for ip in 0..d {
                    for jp in 0..d {
                        let r = self.get(i, j, ip, jp) - self.get(j, i, jp, ip).conj();
                        worst = worst.max(r.norm());
                    }
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.matrix)
    }
}

impl Add for SuperOperator {
    type Output = SuperOperator;
    fn add(self, rhs: SuperOperator) -> SuperOperator {
        SuperOperator {
            dim: self.dim,
            matrix: self.matrix + rhs.matrix,
        }
    }
}

impl<'a> Add<&'a SuperOperator> for &'a SuperOperator {
    type Output = SuperOperator;
    fn add(self, rhs: &SuperOperator) -> SuperOperator {
        SuperOperator {
            dim: self.dim,
            matrix: &self.matrix + &rhs.matrix,
        }
    }
}

impl AddAssign<&SuperOperator> for SuperOperator {
    fn add_assign(&mut self, rhs: &SuperOperator) {
        self.matrix += &rhs.matrix;
    }
}

impl Sub for SuperOperator {
    type Output = SuperOperator;
    fn sub(self, rhs: SuperOperator) -> SuperOperator {
        SuperOperator {
            dim: self.dim,
            matrix: self.matrix - rhs.matrix,
        }
    }
}

impl<'a> Sub<&'a SuperOperator> for &'a SuperOperator {
    type Output = SuperOperator;
    fn sub(self, rhs: &SuperOperator) -> SuperOperator {
        SuperOperator {
            dim: self.dim,
            matrix: &self.matrix - &rhs.matrix,
        }
    }
}

impl Neg for SuperOperator {
    type Output = SuperOperator;
    fn neg(self) -> SuperOperator {
        SuperOperator {
            dim: self.dim,
            matrix: -self.matrix,
        }
    }
}

impl Mul<C64> for SuperOperator {
    type Output = SuperOperator;
    fn mul(self, rhs: C64) -> SuperOperator {
        SuperOperator {
            dim: self.dim,
            matrix: self.matrix * rhs,
        }
    }
}

impl Mul<f64> for SuperOperator {
    type Output = SuperOperator;
    fn mul(self, rhs: f64) -> SuperOperator {
        self * c(rhs, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pauli() -> [Operator; 3] {
        let x = Operator::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]);
        let y = Operator::from_row_slice(2, 2, &[ZERO, -I, I, ZERO]);
        let z = Operator::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]);
        [x, y, z]
    }

    #[test]
    fn identity_choi_spectrum() {
        let e = hermitian_eigenvalues(&SuperOperator::identity(3).choi());
        assert!((e[8] - 3.0).abs() < 1e-12);
        assert!(e[..8].iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn depolarizing_and_transpose() {
        let d = 3;
        let dep = SuperOperator::from_fn(d, |rho| {
            Operator::identity(d, d) * (trace(rho) / c(d as f64, 0.0))
        });
        for x in hermitian_eigenvalues(&dep.choi()) {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
        let tr = SuperOperator::from_fn(2, |rho| rho.transpose());
        assert!((tr.min_choi_eigenvalue() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn sandwich_matches_direct_product() {
        let [x, y, z] = pauli();
        let rho = &x * c(0.3, 0.0) + &z * c(0.1, 0.0) + Operator::identity(2, 2) * c(0.5, 0.0);
        let s = SuperOperator::sandwich(&y, &(&x * &z));
        assert!(max_abs(&(s.apply(&rho) - &y * &rho * (&x * &z))) < 1e-14);
    }

    #[test]
    fn dual_pairing() {
        let [x, y, z] = pauli();
        let s = SuperOperator::sandwich(&x, &(&y + &z)) + SuperOperator::left(&z);
        let rho = &x + &z * c(0.0, 1.0);
        let obs = &y * c(2.0, 0.0) + &z;
        let lhs = trace(&(&obs * s.apply(&rho)));
        let rhs = trace(&(s.dual().apply(&obs) * &rho));
        assert!((lhs - rhs).norm() < 1e-13);
    }

    #[test]
    fn hamiltonian_generator_is_trace_and_hermiticity_preserving() {
        let [x, _, z] = pauli();
        let l = SuperOperator::hamiltonian(&(&x + &z));
        assert!(l.trace_residual() < 1e-14);
        assert!(l.hermiticity_residual() < 1e-14);
    }

    #[test]
    fn degenerate_basis_is_canonical() {
        let h = Operator::from_diagonal(&Vector::from_vec(vec![ONE, ONE, c(2.0, 0.0)]));
        let b = SpectralBasis::new(&h).unwrap();
        assert!(max_abs(&(b.vectors() - Operator::identity(3, 3))) < 1e-12);
        let [x, _, z] = pauli();
        let b2 = SpectralBasis::new(&(&x + &z)).unwrap();
        let u = b2.vectors();
        let diag = u.adjoint() * (&x + &z) * u;
        assert!((diag[(0, 0)].re + 2f64.sqrt()).abs() < 1e-12);
        for k in 0..2 {
            let first = u.column(k).iter().find(|v| v.norm() > 1e-8).copied().unwrap();
            assert!(first.im.abs() < 1e-14 && first.re > 0.0);
        }
    }

    #[test]
    fn general_eigen_reconstructs() {
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[c(1.0, 0.2), c(2.0, 0.0), ZERO, c(0.0, 1.0), c(-1.0, 0.0), ONE, ZERO, c(0.5, 0.0), c(3.0, -1.0)],
        );
        let (vals, r, rinv) = diagonalize(&m).unwrap();
        let d = DMatrix::from_diagonal(&Vector::from_vec(vals));
        assert!(max_abs(&(&r * d * rinv - &m)) < 1e-12);
    }

    #[test]
    fn partial_trace_of_product() {
        let [x, _, z] = pauli();
        let a = &x * c(0.5, 0.0) + Operator::identity(2, 2) * c(0.5, 0.0);
        let b = (Operator::identity(2, 2) + &z * c(0.3, 0.0)) * c(0.5, 0.0);
        let pt = partial_trace_second(&a.kronecker(&b), 2, 2);
        assert!(max_abs(&(pt - a)) < 1e-14);
    }
}
