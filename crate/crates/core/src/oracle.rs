//! Exact reference dynamics for a system coupled to a small finite environment.
//!
//! Everything here is brute force: the combined Hamiltonian is diagonalized once and
//! states or Heisenberg operators are rotated exactly.  The environment two-point
//! function is exported as a tabulated bath so the perturbative solvers see exactly
//! the same correlations as the exact model.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algebra::{
    c, hermitian_eigenvalues, hermitian_part, max_abs, partial_trace_second, require_hermitian,
    trace, Operator, SpectralBasis, ONE, ZERO,
};
use crate::bath::{BathModel, ChannelMatrix};
use crate::error::{Error, Result};
use crate::tcl2::{propagate, PropagateOptions, SystemModel};

pub const MAX_ENV_DIM: usize = 64;
pub const MAX_TOTAL_DIM: usize = 512;

/// System, finite environment and the bilinear coupling `g sum_n L_n (x) l_n`.
#[derive(Clone, Debug)]
pub struct CompositeModel {
    h: Operator,
    couplings: Vec<Operator>,
    env_h: Operator,
    env_couplings: Vec<Operator>,
    env_state: Operator,
    temperature: Option<f64>,
    g: f64,
    env_basis: SpectralBasis,
}

fn check_square(what: &str, m: &Operator, d: usize) -> Result<()> {
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::Dimension {
            context: what.into(),
            expected: d,
            found: m.nrows(),
        });
    }
    Ok(())
}

fn check_state(what: &str, rho: &Operator) -> Result<()> {
    require_hermitian(what, rho)?;
    let tr = trace(rho);
    if (tr - ONE).norm() > 1e-10 {
        return Err(Error::invalid(format!("{what} has trace {tr}, expected 1")));
    }
    let ev = hermitian_eigenvalues(rho);
    if ev[0] < -1e-10 {
        return Err(Error::invalid(format!("{what} is not positive (min eigenvalue {:.3e})", ev[0])));
    }
    Ok(())
}

/// Gibbs state of `h`; at `T = 0` the uniform mixture over the ground space.
pub fn thermal_state(h: &Operator, temperature: f64) -> Result<Operator> {
    if !(temperature >= 0.0) {
        return Err(Error::invalid(format!("temperature must be >= 0, got {temperature}")));
    }
    let basis = SpectralBasis::new(h)?;
    let e = basis.energies();
    let p: Vec<f64> = if temperature > 0.0 {
        let w: Vec<f64> = e.iter().map(|x| (-(x - e[0]) / temperature).exp()).collect();
        let z: f64 = w.iter().sum();
        w.iter().map(|x| x / z).collect()
    } else {
        let spread = e.iter().fold(1.0f64, |a, x| a.max(x.abs()));
        let g: Vec<bool> = e.iter().map(|x| x - e[0] <= 1e-9 * spread).collect();
        let n = g.iter().filter(|x| **x).count() as f64;
        g.iter().map(|&x| if x { 1.0 / n } else { 0.0 }).collect()
    };
    let d = h.nrows();
    let diag = Operator::from_fn(d, d, |a, b| if a == b { c(p[a], 0.0) } else { ZERO });
    Ok(hermitian_part(&basis.from_energy(&diag)))
}

impl CompositeModel {
    pub fn new(
        h: Operator,
        couplings: Vec<Operator>,
        env_h: Operator,
        env_couplings: Vec<Operator>,
        env_state: Operator,
        g: f64,
    ) -> Result<Self> {
        let d = h.nrows();
        let de = env_h.nrows();
        check_square("system Hamiltonian", &h, d)?;
        check_square("environment Hamiltonian", &env_h, de)?;
        if de > MAX_ENV_DIM {
            return Err(Error::invalid(format!("environment dimension {de} exceeds {MAX_ENV_DIM}")));
        }
        if d * de > MAX_TOTAL_DIM {
            return Err(Error::invalid(format!(
                "total dimension {} exceeds {MAX_TOTAL_DIM}",
                d * de
            )));
        }
        if couplings.is_empty() || couplings.len() != env_couplings.len() {
            return Err(Error::invalid(format!(
                "{} system couplings against {} environment couplings",
                couplings.len(),
                env_couplings.len()
            )));
        }
        if !g.is_finite() {
            return Err(Error::invalid("coupling scale must be finite"));
        }
        require_hermitian("system Hamiltonian", &h)?;
        require_hermitian("environment Hamiltonian", &env_h)?;
        for (n, (l, e)) in couplings.iter().zip(&env_couplings).enumerate() {
            check_square(&format!("coupling {n}"), l, d)?;
            check_square(&format!("environment coupling {n}"), e, de)?;
            require_hermitian(&format!("coupling {n}"), l)?;
            require_hermitian(&format!("environment coupling {n}"), e)?;
        }
        check_square("environment state", &env_state, de)?;
        check_state("environment state", &env_state)?;
        for (n, e) in env_couplings.iter().enumerate() {
            let mean = trace(&(e * &env_state));
            if mean.norm() > 1e-12 * max_abs(e).max(1.0) {
                return Err(Error::invalid(format!(
                    "environment coupling {n} has mean {mean:.3e}; shift it into the system Hamiltonian"
                )));
            }
        }
        let env_basis = SpectralBasis::new(&env_h)?;
        Ok(CompositeModel {
            h,
            couplings,
            env_h,
            env_couplings,
            env_state,
            temperature: None,
            g,
            env_basis,
        })
    }

    /// Environment prepared in its Gibbs state.
    pub fn thermal(
        h: Operator,
        couplings: Vec<Operator>,
        env_h: Operator,
        env_couplings: Vec<Operator>,
        temperature: f64,
        g: f64,
    ) -> Result<Self> {
        let state = thermal_state(&env_h, temperature)?;
        let mut m = Self::new(h, couplings, env_h, env_couplings, state, g)?;
        m.temperature = Some(temperature);
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn env_dim(&self) -> usize {
        self.env_h.nrows()
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn temperature(&self) -> Option<f64> {
        self.temperature
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.h
    }

    pub fn couplings(&self) -> &[Operator] {
        &self.couplings
    }

    pub fn env_state(&self) -> &Operator {
        &self.env_state
    }

    pub fn with_g(&self, g: f64) -> Self {
        CompositeModel { g, ..self.clone() }
    }

    /// `max |[rho_E, H_E]|`; zero for a stationary environment.
    pub fn stationarity_residual(&self) -> f64 {
        max_abs(&(&self.env_state * &self.env_h - &self.env_h * &self.env_state))
    }

    pub fn total_hamiltonian(&self) -> Operator {
        let d = self.dim();
        let de = self.env_dim();
        let mut h = self.h.kronecker(&Operator::identity(de, de)) + Operator::identity(d, d).kronecker(&self.env_h);
        for (l, e) in self.couplings.iter().zip(&self.env_couplings) {
            h += l.kronecker(e) * c(self.g, 0.0);
        }
        hermitian_part(&h)
    }

    pub fn exact(&self) -> ExactDynamics {
        let eig = SymmetricEigen::new(self.total_hamiltonian());
        ExactDynamics {
            energies: eig.eigenvalues.iter().copied().collect(),
            vectors: eig.eigenvectors,
            d: self.dim(),
            de: self.env_dim(),
            env_state: self.env_state.clone(),
        }
    }

    /// `alpha_nm(t, tau) = g^2 Tr[l_n(t) l_m(tau) rho_E]` with free Heisenberg operators.
    pub fn exact_alpha(&self, t: f64, tau: f64) -> ChannelMatrix {
        let b = &self.env_basis;
        let e = b.energies();
        let heis = |x: &Operator, s: f64| {
            Operator::from_fn(x.nrows(), x.ncols(), |a, bb| x[(a, bb)] * c(0.0, (e[a] - e[bb]) * s).exp())
        };
        let rho = b.to_energy(&self.env_state);
        let ls: Vec<Operator> = self.env_couplings.iter().map(|l| b.to_energy(l)).collect();
        let lt: Vec<Operator> = ls.iter().map(|l| heis(l, t)).collect();
        let ltau: Vec<Operator> = ls.iter().map(|l| heis(l, tau) * &rho).collect();
        let n = ls.len();
        let g2 = self.g * self.g;
        DMatrix::from_fn(n, n, |i, j| trace(&(&lt[i] * &ltau[j])) * g2)
    }

    /// `alpha(k dt, 0)` for `k = 0..=ceil(t_max / dt)` as a tabulated bath.
    pub fn tabulated_bath(&self, dt: f64, t_max: f64) -> Result<BathModel> {
        if !(dt > 0.0 && t_max > 0.0) {
            return Err(Error::invalid("tabulation needs positive dt and t_max"));
        }
        let n = (t_max / dt).ceil() as usize;
        let samples: Vec<ChannelMatrix> = (0..=n.max(4)).map(|k| self.exact_alpha(k as f64 * dt, 0.0)).collect();
        BathModel::tabulated(dt, samples)
    }

    /// The open-system model seen by the perturbative solvers.
    pub fn system_model(&self, dt: f64, t_max: f64) -> Result<SystemModel> {
        SystemModel::new(self.h.clone(), self.couplings.clone(), self.tabulated_bath(dt, t_max)?)
    }

    /// Spectral lines of `alpha_tilde(w) = sum 2 pi W_k delta(w - w_k)`, merged within `tol`.
    pub fn spectrum_lines(&self, tol: f64) -> Vec<(f64, ChannelMatrix)> {
        let b = &self.env_basis;
        let e = b.energies();
        let rho = b.to_energy(&self.env_state);
        let ls: Vec<Operator> = self.env_couplings.iter().map(|l| b.to_energy(l)).collect();
        let n = ls.len();
        let de = e.len();
        let g2 = self.g * self.g;
        let mut lines: Vec<(f64, ChannelMatrix)> = Vec::new();
        for a in 0..de {
            for bb in 0..de {
                let w = e[a] - e[bb];
                // Tr[l_n(t) l_m rho] = sum_{a b c} l_n,ab e^{i w_ab t} l_m,bc rho_ca
                let weight = DMatrix::from_fn(n, n, |i, j| {
                    (0..de).map(|cc| ls[i][(a, bb)] * ls[j][(bb, cc)] * rho[(cc, a)]).sum::<C64>() * g2
                });
                if max_abs(&weight) == 0.0 {
                    continue;
                }
                match lines.iter_mut().find(|(x, _)| (x - w).abs() <= tol) {
                    Some((_, acc)) => *acc += weight,
                    None => lines.push((w, weight)),
                }
            }
        }
        lines.sort_by(|x, y| x.0.total_cmp(&y.0));
        lines
    }

    /// Max relative KMS residual `|W(w) - exp(-w/T) conj W(-w)|` over the spectral lines.
    pub fn kms_residual(&self) -> Result<f64> {
        let t = self
            .temperature
            .ok_or_else(|| Error::invalid("KMS check needs a thermal environment"))?;
        if t <= 0.0 {
            return Err(Error::invalid("KMS check needs T > 0"));
        }
        let spread = self.env_basis.energies().iter().fold(1.0f64, |a, x| a.max(x.abs()));
        let lines = self.spectrum_lines(1e-9 * spread);
        let scale = lines.iter().map(|(_, w)| max_abs(w)).fold(1e-300, f64::max);
        let mut worst = 0.0f64;
        for (w, m) in &lines {
            let mirror = lines
                .iter()
                .find(|(x, _)| (x + w).abs() <= 1e-9 * spread)
                .map(|(_, m)| m.map(|z| z.conj()))
                .unwrap_or_else(|| DMatrix::zeros(m.nrows(), m.ncols()));
            let r = max_abs(&(m - mirror * c((-w / t).exp(), 0.0)));
            worst = worst.max(r / scale);
        }
        Ok(worst)
    }

    /// Exact reduced states for `rho0 (x) rho_E`.
    pub fn exact_reduced_trajectory(&self, rho0: &Operator, times: &[f64]) -> Result<ReducedTrajectory> {
        check_square("initial state", rho0, self.dim())?;
        check_state("initial state", rho0)?;
        Ok(self.exact().reduced_trajectory(rho0, times))
    }

    /// `Tr[X1(t1) X2(t2) rho0 (x) rho_E]` with exact Heisenberg operators.
    pub fn exact_two_time(&self, x1: &Operator, t1: f64, x2: &Operator, t2: f64, rho0: &Operator) -> Result<C64> {
        check_square("X1", x1, self.dim())?;
        check_square("X2", x2, self.dim())?;
        check_square("initial state", rho0, self.dim())?;
        check_state("initial state", rho0)?;
        Ok(self.exact().two_time(x1, t1, x2, t2, rho0))
    }
}

/// Eigendecomposition of the combined Hamiltonian.
#[derive(Clone, Debug)]
pub struct ExactDynamics {
    energies: Vec<f64>,
    vectors: Operator,
    d: usize,
    de: usize,
    env_state: Operator,
}

#[derive(Clone, Debug)]
pub struct ReducedTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<Operator>,
    /// Purity of the combined state divided by its initial value.
    pub purity_ratio: Vec<f64>,
}

impl ExactDynamics {
    fn phases(&self, t: f64, sign: f64) -> Vec<C64> {
        self.energies.iter().map(|e| c(0.0, sign * e * t).exp()).collect()
    }

    // V diag(p) V^dag X V diag(p)^* V^dag in the eigenbasis
    fn rotate(&self, xe: &Operator, t: f64, sign: f64) -> Operator {
        let p = self.phases(t, sign);
        let n = p.len();
        let r = Operator::from_fn(n, n, |a, b| xe[(a, b)] * p[a] * p[b].conj());
        &self.vectors * r * self.vectors.adjoint()
    }

    fn to_eig(&self, x: &Operator) -> Operator {
        self.vectors.adjoint() * x * &self.vectors
    }

    pub fn evolve_state(&self, rho: &Operator, t: f64) -> Operator {
        self.rotate(&self.to_eig(rho), t, -1.0)
    }

    pub fn heisenberg(&self, x: &Operator, t: f64) -> Operator {
        self.rotate(&self.to_eig(x), t, 1.0)
    }

    fn lift(&self, x: &Operator) -> Operator {
        x.kronecker(&Operator::identity(self.de, self.de))
    }

    pub fn reduced_trajectory(&self, rho0: &Operator, times: &[f64]) -> ReducedTrajectory {
        let total = rho0.kronecker(&self.env_state);
        let p0 = trace(&(&total * &total)).re;
        let re = self.to_eig(&total);
        let out: Vec<(Operator, f64)> = times
            .par_iter()
            .map(|&t| {
                let s = self.rotate(&re, t, -1.0);
                let pur = trace(&(&s * &s)).re / p0;
                (partial_trace_second(&s, self.d, self.de), pur)
            })
            .collect();
        ReducedTrajectory {
            times: times.to_vec(),
            states: out.iter().map(|x| x.0.clone()).collect(),
            purity_ratio: out.iter().map(|x| x.1).collect(),
        }
    }

    pub fn two_time(&self, x1: &Operator, t1: f64, x2: &Operator, t2: f64, rho0: &Operator) -> C64 {
        let a = self.heisenberg(&self.lift(x1), t1);
        let b = self.heisenberg(&self.lift(x2), t2);
        trace(&(a * b * rho0.kronecker(&self.env_state)))
    }
}

/// Single-qubit `op` acting on site `k` of an `n`-qubit register (site 0 is the most significant).
pub fn register_operator(n: usize, k: usize, op: &Operator) -> Operator {
    let mut out = Operator::identity(1, 1);
    for site in 0..n {
        out = if site == k {
            out.kronecker(op)
        } else {
            out.kronecker(&Operator::identity(2, 2))
        };
    }
    out
}

pub fn pauli_x() -> Operator {
    Operator::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> Operator {
    Operator::from_row_slice(2, 2, &[ZERO, c(0.0, -1.0), c(0.0, 1.0), ZERO])
}

pub fn pauli_z() -> Operator {
    Operator::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

/// Qubit `H = w0 sz / 2`, `L = sz`, against independent spins `H_E = sum W_k sz_k / 2`,
/// `l = sum c_k sx_k`.
#[derive(Clone, Debug)]
pub struct DephasingComposite {
    pub w0: f64,
    pub env_freqs: Vec<f64>,
    pub env_weights: Vec<f64>,
    pub temperature: f64,
    pub g: f64,
}

fn exp_pauli(a: f64, b: f64, t: f64) -> Operator {
    // exp(-i (a sz + b sx) t)
    let r = (a * a + b * b).sqrt();
    let (cs, sn) = ((r * t).cos(), if r > 0.0 { (r * t).sin() / r } else { t });
    Operator::from_row_slice(
        2,
        2,
        &[c(cs, -sn * a), c(0.0, -sn * b), c(0.0, -sn * b), c(cs, sn * a)],
    )
}

impl DephasingComposite {
    pub fn composite(&self) -> Result<CompositeModel> {
        let n = self.env_freqs.len();
        if n == 0 || n != self.env_weights.len() {
            return Err(Error::invalid("dephasing environment needs matching frequencies and weights"));
        }
        let de = 1usize << n;
        let mut env_h = Operator::zeros(de, de);
        let mut l = Operator::zeros(de, de);
        for k in 0..n {
            env_h += register_operator(n, k, &pauli_z()) * c(self.env_freqs[k] / 2.0, 0.0);
            l += register_operator(n, k, &pauli_x()) * c(self.env_weights[k], 0.0);
        }
        CompositeModel::thermal(
            pauli_z() * c(self.w0 / 2.0, 0.0),
            vec![pauli_z()],
            env_h,
            vec![l],
            self.temperature,
            self.g,
        )
    }

    /// Closed-form `<sx(t1) sx(t2)>`: the environment factorizes into independent spins.
    pub fn analytic_sx_sx(&self, t1: f64, t2: f64, p_up: f64) -> C64 {
        let branch = |s: f64| {
            let mut acc = ONE;
            for (&w, &ck) in self.env_freqs.iter().zip(&self.env_weights) {
                let free = |t: f64| exp_pauli(-w / 2.0, 0.0, t);
                let v = |sign: f64, t: f64| free(t) * exp_pauli(w / 2.0, sign * self.g * ck, t);
                let rho = if self.temperature > 0.0 {
                    let (u, d) = ((-w / (2.0 * self.temperature)).exp(), (w / (2.0 * self.temperature)).exp());
                    let z = u + d;
                    [u / z, d / z]
                } else if w >= 0.0 {
                    [0.0, 1.0]
                } else {
                    [1.0, 0.0]
                };
                let rho = Operator::from_row_slice(2, 2, &[c(rho[0], 0.0), ZERO, ZERO, c(rho[1], 0.0)]);
                let m = v(s, t1).adjoint() * v(-s, t1) * v(-s, t2).adjoint() * v(s, t2);
                acc *= trace(&(m * rho));
            }
            acc
        };
        let tau = t1 - t2;
        c(p_up, 0.0) * c(0.0, self.w0 * tau).exp() * branch(1.0)
            + c(1.0 - p_up, 0.0) * c(0.0, -self.w0 * tau).exp() * branch(-1.0)
    }
}

fn random_hermitian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Operator {
    let a = Operator::from_fn(d, d, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    hermitian_part(&a) * c(scale, 0.0)
}

/// Random density matrix from a seeded generator.
pub fn random_state(rng: &mut ChaCha8Rng, d: usize) -> Operator {
    let a = Operator::from_fn(d, d, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let m = &a * a.adjoint();
    let tr = trace(&m);
    m / tr
}

/// Seeded random system against a thermal transverse-field spin chain.
///
/// The environment `H_E = sum W_k sz_k / 2 + sum J_k sx_k sx_{k+1}` commutes with the parity
/// `prod sz_k`, so odd moments of `l = sum c_k sx_k` vanish.
pub fn random_composite(seed: u64, d: usize, env_qubits: usize, temperature: f64, g: f64) -> Result<CompositeModel> {
    if env_qubits == 0 || env_qubits > 6 {
        return Err(Error::invalid(format!("env_qubits must be in 1..=6, got {env_qubits}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = random_hermitian(&mut rng, d, 1.0);
    let mut l = random_hermitian(&mut rng, d, 1.0);
    let ln = crate::algebra::norm(&l);
    l /= c(ln, 0.0);
    let n = env_qubits;
    let de = 1usize << n;
    let mut env_h = Operator::zeros(de, de);
    let mut el = Operator::zeros(de, de);
    for k in 0..n {
        let w: f64 = rng.random_range(0.5..2.0);
        let ck: f64 = rng.random_range(0.5..1.0) / (n as f64).sqrt();
        env_h += register_operator(n, k, &pauli_z()) * c(w / 2.0, 0.0);
        el += register_operator(n, k, &pauli_x()) * c(ck, 0.0);
        if k + 1 < n {
            let j: f64 = rng.random_range(-0.2..0.2);
            env_h += register_operator(n, k, &pauli_x()) * register_operator(n, k + 1, &pauli_x()) * c(j, 0.0);
        }
    }
    CompositeModel::thermal(h, vec![l], env_h, vec![el], temperature, g)
}

/// Sup-norm distance between exact and TCL2 reduced states over `times`.
pub fn tcl2_error(c_model: &CompositeModel, rho0: &Operator, times: &[f64], dt: f64, opts: &PropagateOptions) -> Result<f64> {
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let m = c_model.system_model(dt, t_max + 4.0 * dt)?;
    let approx = propagate(&m, rho0, times, opts)?;
    let exact = c_model.exact_reduced_trajectory(rho0, times)?;
    Ok(exact
        .states
        .iter()
        .zip(&approx.states)
        .map(|(a, b)| max_abs(&(a - b)))
        .fold(0.0, f64::max))
}

/// One seed of the convergence-order harness.
#[derive(Clone, Debug)]
pub struct ConvergenceCase {
    pub seed: u64,
    pub g: f64,
    pub horizon: f64,
    pub err: f64,
    pub err_half: f64,
}

impl ConvergenceCase {
    pub fn ratio(&self) -> f64 {
        self.err / self.err_half
    }
}

/// Tabulation spacing for exported correlations.
pub const ORACLE_DT: f64 = 0.01;

/// `err(g)` and `err(g/2)` for a random 3-level system and 4-qubit environment.
pub fn convergence_case(seed: u64, g: f64, horizon: f64, points: usize) -> Result<ConvergenceCase> {
    let base = random_composite(seed, 3, 4, 1.0, g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let rho0 = random_state(&mut rng, 3);
    // secular-safe window
    let scale = max_abs(&base.exact_alpha(0.0, 0.0)) / (g * g);
    let horizon = horizon.min(5.0 / (g * g * scale));
    let times: Vec<f64> = (1..=points).map(|k| horizon * k as f64 / points as f64).collect();
    let opts = PropagateOptions::default();
    let err = tcl2_error(&base, &rho0, &times, ORACLE_DT, &opts)?;
    let err_half = tcl2_error(&base.with_g(g / 2.0), &rho0, &times, ORACLE_DT, &opts)?;
    Ok(ConvergenceCase {
        seed,
        g,
        horizon,
        err,
        err_half,
    })
}

/// `max |alpha(t, tau) - alpha(tau, t)^dag|`.
pub fn alpha_hermiticity_residual(c_model: &CompositeModel, t: f64, tau: f64) -> f64 {
    max_abs(&(c_model.exact_alpha(t, tau) - c_model.exact_alpha(tau, t).adjoint()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dephasing(g: f64) -> DephasingComposite {
        DephasingComposite {
            w0: 1.0,
            env_freqs: vec![0.7, 1.3, 2.1],
            env_weights: vec![0.6, 0.4, 0.5],
            temperature: 0.8,
            g,
        }
    }

    #[test]
    fn zero_coupling_is_unitary() {
        let m = random_composite(3, 3, 2, 1.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho0 = random_state(&mut rng, 3);
        let tr = m.exact_reduced_trajectory(&rho0, &[0.0, 1.3, 4.0]).unwrap();
        let basis = SpectralBasis::new(m.hamiltonian()).unwrap();
        for (t, s) in tr.times.iter().zip(&tr.states) {
            let e = basis.energies();
            let re = basis.to_energy(&rho0);
            let want = basis.from_energy(&Operator::from_fn(3, 3, |a, b| re[(a, b)] * c(0.0, -(e[a] - e[b]) * t).exp()));
            assert!(max_abs(&(s - want)) < 1e-12);
        }
        let g = m.with_g(0.3).exact_reduced_trajectory(&rho0, &[2.0, 7.0]).unwrap();
        assert!(g.purity_ratio.iter().all(|p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn alpha_is_stationary_hermitian_and_kms() {
        let m = random_composite(11, 2, 4, 0.7, 0.2).unwrap();
        assert!(m.stationarity_residual() < 1e-14);
        for (t, tau) in [(1.0, 0.3), (2.5, 2.0), (0.1, 4.0)] {
            let a = m.exact_alpha(t, tau);
            let b = m.exact_alpha(t - tau, 0.0);
            assert!(max_abs(&(a - b)) < 1e-12);
            assert!(alpha_hermiticity_residual(&m, t, tau) < 1e-12);
        }
        assert!(m.kms_residual().unwrap() < 1e-6);
    }

    #[test]
    fn two_time_limits() {
        let m = random_composite(5, 3, 2, 1.0, 0.25).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho0 = random_state(&mut rng, 3);
        let x1 = random_hermitian(&mut rng, 3, 1.0);
        let x2 = random_hermitian(&mut rng, 3, 1.0);
        let st = m.exact_reduced_trajectory(&rho0, &[1.7]).unwrap().states.remove(0);
        let co = m.exact_two_time(&x1, 1.7, &x2, 1.7, &rho0).unwrap();
        assert!((co - trace(&(&x1 * &x2 * st))).norm() < 1e-12);
        let free = m.with_g(0.0);
        let want = crate::multitime::unitary_two_time(m.hamiltonian(), &x1, 2.2, &x2, 0.4, &rho0).unwrap();
        let got = free.exact_two_time(&x1, 2.2, &x2, 0.4, &rho0).unwrap();
        assert!((got - want).norm() < 1e-12);
    }

    #[test]
    fn dephasing_composite_matches_closed_form() {
        let d = dephasing(0.3);
        let m = d.composite().unwrap();
        let rho0 = Operator::from_row_slice(2, 2, &[c(0.6, 0.0), c(0.1, 0.2), c(0.1, -0.2), c(0.4, 0.0)]);
        for (t1, t2) in [(3.0, 1.0), (5.5, 5.5), (7.0, 0.5)] {
            let exact = m.exact_two_time(&pauli_x(), t1, &pauli_x(), t2, &rho0).unwrap();
            let closed = d.analytic_sx_sx(t1, t2, 0.6);
            assert!((exact - closed).norm() < 1e-10, "{exact} vs {closed}");
        }
    }

    #[test]
    fn tabulated_export_round_trips() {
        let m = random_composite(2, 2, 3, 1.0, 0.1).unwrap();
        let bath = m.tabulated_bath(0.01, 2.0).unwrap();
        let a = bath.alpha_time(1.234).unwrap();
        assert!(max_abs(&(a - m.exact_alpha(1.234, 0.0))) < 1e-9 * 0.01);
    }

    #[test]
    fn caps_are_enforced() {
        let big = Operator::identity(128, 128);
        let e = CompositeModel::new(
            pauli_z(),
            vec![pauli_x()],
            big.clone(),
            vec![Operator::zeros(128, 128)],
            big / c(128.0, 0.0),
            0.1,
        );
        assert!(e.is_err());
    }
}
