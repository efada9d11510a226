//! Second-order time-local (TCL2) generator for Gaussian baths.
//!
//! With `Q_n = sum_m (A_nm . L_m)` the generator is
//! `L2 rho = sum_n [L_n, rho Q_n^dagger - Q_n rho]`, where in the energy basis
//! `<a|(A_nm . L_m)|b> = A_nm(w_ab) <a|L_m|b>`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::algebra::{
    c, commutator, max_abs, require_hermitian, unvectorize, vectorize, Operator, SpectralBasis,
    SuperOperator, I, ONE, ZERO,
};
use crate::bath::{BathModel, ChannelMatrix};
use crate::error::{Error, Result};
use crate::quad::{integrate_vec, ChebCache, QuadOptions};

/// Bohr frequencies closer than this are merged.
pub const GAP_MERGE_TOL: f64 = 1e-9;

/// Distinct Bohr frequencies and the map `(a, b) -> gap index`.
#[derive(Clone, Debug)]
pub struct GapTable {
    gaps: Vec<f64>,
    index: Vec<usize>,
    dim: usize,
    merged: Vec<(f64, f64)>,
}

impl GapTable {
    pub fn new(basis: &SpectralBasis, tol: f64) -> Self {
        let d = basis.dim();
        let mut pairs: Vec<(f64, usize)> = (0..d * d).map(|k| (basis.gap(k / d, k % d), k)).collect();
        pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut gaps: Vec<f64> = Vec::new();
        let mut index = vec![0usize; d * d];
        let mut merged = Vec::new();
        let mut anchor = f64::NAN;
        for (g, k) in pairs {
            if gaps.is_empty() || (g - anchor).abs() > tol {
                gaps.push(g);
                anchor = g;
            } else if g != anchor {
                merged.push((anchor, g));
            }
            index[k] = gaps.len() - 1;
        }
        GapTable {
            gaps,
            index,
            dim: d,
            merged,
        }
    }

    pub fn gaps(&self) -> &[f64] {
        &self.gaps
    }

    pub fn of(&self, a: usize, b: usize) -> usize {
        self.index[a * self.dim + b]
    }

    /// Pairs of distinct frequencies that were merged within tolerance.
    pub fn merged(&self) -> &[(f64, f64)] {
        &self.merged
    }
}

/// System Hamiltonian, Hermitian couplings and the bath they couple to.
#[derive(Clone, Debug)]
pub struct SystemModel {
    h: Operator,
    couplings: Vec<Operator>,
    bath: BathModel,
    basis: SpectralBasis,
    couplings_e: Vec<Operator>,
    gaps: GapTable,
}

/// Coefficient matrices `A(w_g)` for every gap `g`.
pub type CoefficientTable = Vec<ChannelMatrix>;

impl SystemModel {
    pub fn new(h: Operator, couplings: Vec<Operator>, bath: BathModel) -> Result<Self> {
        require_hermitian("system Hamiltonian", &h)?;
        let d = h.nrows();
        if d == 0 {
            return Err(Error::invalid("system dimension must be positive"));
        }
        if couplings.is_empty() {
            return Err(Error::invalid("at least one coupling operator is required"));
        }
        for (n, l) in couplings.iter().enumerate() {
            if l.nrows() != d || l.ncols() != d {
                return Err(Error::Dimension {
                    context: format!("coupling {n}"),
                    expected: d,
                    found: l.nrows(),
                });
            }
            require_hermitian(&format!("coupling {n}"), l)?;
        }
        if bath.channels() != couplings.len() {
            return Err(Error::Dimension {
                context: "bath channel count vs couplings".into(),
                expected: couplings.len(),
                found: bath.channels(),
            });
        }
        let basis = SpectralBasis::new(&h)?;
        let couplings_e = couplings.iter().map(|l| basis.to_energy(l)).collect();
        let gaps = GapTable::new(&basis, GAP_MERGE_TOL * basis.energies().iter().fold(1.0f64, |m, e| m.max(e.abs())));
        Ok(SystemModel {
            h,
            couplings,
            bath,
            basis,
            couplings_e,
            gaps,
        })
    }

    pub fn dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn hamiltonian(&self) -> &Operator {
        &self.h
    }

    pub fn couplings(&self) -> &[Operator] {
        &self.couplings
    }

    /// Couplings in the energy basis.
    pub fn couplings_energy(&self) -> &[Operator] {
        &self.couplings_e
    }

    pub fn bath(&self) -> &BathModel {
        &self.bath
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn gaps(&self) -> &GapTable {
        &self.gaps
    }

    pub fn with_bath(&self, bath: BathModel) -> Result<Self> {
        SystemModel::new(self.h.clone(), self.couplings.clone(), bath)
    }

    /// Same model with every coupling multiplied by `g`.
    pub fn with_coupling_scale(&self, g: f64) -> Result<Self> {
        let cs = self.couplings.iter().map(|l| l * c(g, 0.0)).collect();
        SystemModel::new(self.h.clone(), cs, self.bath.clone())
    }

    pub fn channels(&self) -> usize {
        self.couplings.len()
    }

    /// Stationary coefficients `A(w_g) = alpha_hat(i w_g)`.
    pub fn stationary_table(&self) -> Result<CoefficientTable> {
        self.gaps
            .gaps()
            .iter()
            .map(|&w| self.bath.coefficient_stationary(w))
            .collect()
    }

    /// Finite-time coefficients `A(t; w_g)`.
    pub fn full_table(&self, t: f64) -> Result<CoefficientTable> {
        if let BathModel::WhiteNoise(_) = self.bath {
            if t > 0.0 {
                return self.stationary_table();
            }
        }
        self.gaps
            .gaps()
            .iter()
            .map(|&w| self.bath.coefficient_full(t, w))
            .collect()
    }

    /// Energy-basis `Q_n = sum_m A_nm . L_m` for a coefficient table.
    pub fn q_energy(&self, table: &CoefficientTable) -> Vec<Operator> {
        let d = self.dim();
        let nch = self.channels();
        (0..nch)
            .map(|n| {
                Operator::from_fn(d, d, |a, b| {
                    let g = &table[self.gaps.of(a, b)];
                    (0..nch).map(|m| g[(n, m)] * self.couplings_e[m][(a, b)]).sum()
                })
            })
            .collect()
    }

    /// Energy-basis `A_nm . L_m` for a single channel pair.
    pub fn q_pair_energy(&self, table: &CoefficientTable, n: usize, m: usize) -> Operator {
        let d = self.dim();
        Operator::from_fn(d, d, |a, b| table[self.gaps.of(a, b)][(n, m)] * self.couplings_e[m][(a, b)])
    }

    /// `sum_m (A_nm . L_m)(t)` in the input basis; `None` selects the stationary limit.
    pub fn second_order_operator(&self, t: Option<f64>, n: usize) -> Result<Operator> {
        if n >= self.channels() {
            return Err(Error::invalid(format!("channel {n} out of range")));
        }
        let table = match t {
            Some(t) => self.full_table(t)?,
            None => self.stationary_table()?,
        };
        Ok(self.basis.from_energy(&self.q_energy(&table)[n]))
    }

    /// Energy-basis L2 superoperator from `Q_n` (no free part).
    pub fn l2_energy_from_q(&self, q: &[Operator]) -> SuperOperator {
        let d = self.dim();
        let id = Operator::identity(d, d);
        let mut s = SuperOperator::zeros(d);
        for (l, qn) in self.couplings_e.iter().zip(q) {
            let qd = qn.adjoint();
            s += &SuperOperator::sandwich(l, &qd);
            s += &SuperOperator::sandwich(qn, l);
            s += &(SuperOperator::sandwich(&(l * qn), &id) * (-ONE));
            s += &(SuperOperator::sandwich(&id, &(&qd * l)) * (-ONE));
        }
        s
    }

    /// Energy-basis free generator `-i[H, .]`.
    pub fn l0_energy(&self) -> SuperOperator {
        let d = self.dim();
        let mut m = DMatrix::zeros(d * d, d * d);
        for a in 0..d {
            for b in 0..d {
                m[(a * d + b, a * d + b)] = c(0.0, -self.basis.gap(a, b));
            }
        }
        SuperOperator::from_matrix(d, m).expect("square")
    }

    /// Stationary L2 (without the free part) in the energy basis.
    pub fn l2_stationary_energy(&self) -> Result<SuperOperator> {
        Ok(self.l2_energy_from_q(&self.q_energy(&self.stationary_table()?)))
    }
}

/// Selects the coefficients entering the generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// `A(w) = A(inf; w)`.
    Stationary,
    /// `A(t; w)` at the current time.
    FullTime,
}

/// Builds `L0 + L2` in the input basis. `t` is required in full-time mode.
pub fn build_generator(model: &SystemModel, mode: Mode, t: Option<f64>) -> Result<SuperOperator> {
    let l = build_l2(model, mode, t)?;
    Ok(l + SuperOperator::hamiltonian(model.hamiltonian()))
}

/// Builds `L2` alone in the input basis.
pub fn build_l2(model: &SystemModel, mode: Mode, t: Option<f64>) -> Result<SuperOperator> {
    let table = match (mode, t) {
        (Mode::Stationary, _) => model.stationary_table()?,
        (Mode::FullTime, Some(t)) => model.full_table(t)?,
        (Mode::FullTime, None) => return Err(Error::invalid("full-time generator needs a time")),
    };
    let le = model.l2_energy_from_q(&model.q_energy(&table));
    Ok(model.basis().superop_from_energy(&le))
}

/// Adjoint (Heisenberg) generator `L2^dual X = sum_n Q_n^dag [X, L_n] + [L_n, X] Q_n`, plus `i[H, X]`.
pub fn adjoint_generator(model: &SystemModel, mode: Mode, t: Option<f64>) -> Result<SuperOperator> {
    let table = match (mode, t) {
        (Mode::Stationary, _) => model.stationary_table()?,
        (Mode::FullTime, Some(t)) => model.full_table(t)?,
        (Mode::FullTime, None) => return Err(Error::invalid("full-time generator needs a time")),
    };
    let basis = model.basis();
    let q: Vec<Operator> = model.q_energy(&table).iter().map(|x| basis.from_energy(x)).collect();
    let h = model.hamiltonian().clone();
    let ls = model.couplings().to_vec();
    Ok(SuperOperator::from_fn(model.dim(), move |x| {
        let mut out = commutator(&h, x) * I;
        for (l, qn) in ls.iter().zip(&q) {
            out += qn.adjoint() * commutator(x, l) + commutator(l, x) * qn;
        }
        out
    }))
}

/// Split of a trace- and Hermiticity-preserving generator into
/// `-i[H + V, .] + sum_IJ D_IJ (e_I . e_J^dag - 1/2 {e_J^dag e_I, .})`.
///
/// `dissipator` is indexed by `e_{ii'} = |i><i'|` of the energy basis, flat index `i*d + i'`.
#[derive(Clone, Debug)]
pub struct PseudoLindblad {
    /// Hermitian shift of the Hamiltonian, input basis.
    pub v: Operator,
    pub dissipator: DMatrix<C64>,
}

impl PseudoLindblad {
    pub fn to_superoperator(&self, model: &SystemModel) -> SuperOperator {
        let basis = model.basis();
        let d = model.dim();
        let ve = basis.to_energy(&self.v);
        let he = Operator::from_diagonal(&nalgebra::DVector::from_iterator(
            d,
            basis.energies().iter().map(|&e| c(e, 0.0)),
        ));
        let mut s = SuperOperator::hamiltonian(&(he + ve));
        s += &dissipator_superop(&self.dissipator, d);
        basis.superop_from_energy(&s)
    }
}

/// Superoperator of `sum_IJ D_IJ (e_I . e_J^dag - 1/2 {e_J^dag e_I, .})`.
pub fn dissipator_superop(dm: &DMatrix<C64>, d: usize) -> SuperOperator {
    // sandwich part has Choi matrix D
    let sandwich = SuperOperator::from_choi(d, dm);
    let mut m = Operator::zeros(d, d);
    for ii in 0..d * d {
        for jj in 0..d * d {
            let v = dm[(ii, jj)];
            if v == ZERO {
                continue;
            }
            // e_J^dag e_I = |j'><j| i><i'| = delta_ji |j'><i'|
            let (i, ip) = (ii / d, ii % d);
            let (j, jp) = (jj / d, jj % d);
            if i == j {
                m[(jp, ip)] += v;
            }
        }
    }
    let id = Operator::identity(d, d);
    let half = c(0.5, 0.0);
    sandwich - (SuperOperator::sandwich(&m, &id) + SuperOperator::sandwich(&id, &m)) * half
}

/// Canonical decomposition: the dissipator has no component along the identity.
pub fn pseudo_lindblad(l: &SuperOperator, model: &SystemModel) -> Result<PseudoLindblad> {
    let d = model.dim();
    if l.dim() != d {
        return Err(Error::Dimension {
            context: "generator vs model".into(),
            expected: d,
            found: l.dim(),
        });
    }
    let basis = model.basis();
    let le = basis.superop_to_energy(l);
    let x = le.choi();
    let x = (&x + x.adjoint()) * c(0.5, 0.0);
    let omega = vectorize(&Operator::identity(d, d));
    let mut p = DMatrix::<C64>::identity(d * d, d * d);
    p -= &omega * omega.adjoint() * c(1.0 / d as f64, 0.0);
    let dm = &p * &x * &p;
    let dm = (&dm + dm.adjoint()) * c(0.5, 0.0);
    let u = &x * &omega * c(1.0 / d as f64, 0.0);
    let k = (omega.adjoint() * &x * &omega)[(0, 0)].re;
    let g = unvectorize(&u, d) - Operator::identity(d, d) * c(k / (2.0 * (d * d) as f64), 0.0);
    let kop = (&g - g.adjoint()) * (I * 0.5);
    let he = Operator::from_diagonal(&nalgebra::DVector::from_iterator(
        d,
        basis.energies().iter().map(|&e| c(e, 0.0)),
    ));
    let mut ve = kop - he;
    let tr: C64 = ve.diagonal().iter().sum::<C64>() / d as f64;
    for i in 0..d {
        ve[(i, i)] -= tr;
    }
    let ve = (&ve + ve.adjoint()) * c(0.5, 0.0);
    Ok(PseudoLindblad {
        v: basis.from_energy(&ve),
        dissipator: dm,
    })
}

/// Projection onto operators orthogonal to the identity, on the `d^2`-dimensional operator space.
pub fn traceless_projector(d: usize) -> DMatrix<C64> {
    let omega = vectorize(&Operator::identity(d, d));
    DMatrix::<C64>::identity(d * d, d * d) - &omega * omega.adjoint() * c(1.0 / d as f64, 0.0)
}

/// Microscopic split with `V = (1/2i) sum_n (L_n Q_n - Q_n^dag L_n)` and
/// `D = sum_n vec(L_n) vec(Q_n)^dag + vec(Q_n) vec(L_n)^dag` (energy basis).
pub fn microscopic_pseudo_lindblad(model: &SystemModel, mode: Mode, t: Option<f64>) -> Result<PseudoLindblad> {
    let table = match (mode, t) {
        (Mode::Stationary, _) => model.stationary_table()?,
        (Mode::FullTime, Some(t)) => model.full_table(t)?,
        (Mode::FullTime, None) => return Err(Error::invalid("full-time generator needs a time")),
    };
    let (ve, dm) = microscopic_energy(model, &table);
    Ok(PseudoLindblad {
        v: model.basis().from_energy(&ve),
        dissipator: dm,
    })
}

/// Energy-basis `(V, D)` of the microscopic split for a given coefficient table.
pub fn microscopic_energy(model: &SystemModel, table: &CoefficientTable) -> (Operator, DMatrix<C64>) {
    let q = model.q_energy(table);
    let d = model.dim();
    let mut ve = Operator::zeros(d, d);
    let mut dm = DMatrix::<C64>::zeros(d * d, d * d);
    for (l, qn) in model.couplings_energy().iter().zip(&q) {
        ve += (l * qn - qn.adjoint() * l) * c(0.0, -0.5);
        let vl = vectorize(l);
        let vq = vectorize(qn);
        dm += &vl * vq.adjoint() + &vq * vl.adjoint();
    }
    (ve, dm)
}

/// Stationary dissipator in closed form:
/// `D_{ii';jj'} = sum_nm <i|L_m|i'> (A_nm(w_ii') + conj(A_mn(w_jj'))) conj(<j|L_n|j'>)`.
pub fn p_lindblad_kernel(model: &SystemModel) -> Result<DMatrix<C64>> {
    let table = model.stationary_table()?;
    let d = model.dim();
    let le = model.couplings_energy();
    let nch = model.channels();
    let g = model.gaps();
    Ok(DMatrix::from_fn(d * d, d * d, |r, cc| {
        let (i, ip) = (r / d, r % d);
        let (j, jp) = (cc / d, cc % d);
        let ai = &table[g.of(i, ip)];
        let aj = &table[g.of(j, jp)];
        let mut s = ZERO;
        for n in 0..nch {
            for m in 0..nch {
                let kern = ai[(n, m)] + aj[(m, n)].conj();
                s += le[m][(i, ip)] * kern * le[n][(j, jp)].conj();
            }
        }
        s
    }))
}

/// Secular (rotating-wave) projection of the stationary generator.
#[derive(Clone, Debug)]
pub struct RwaResult {
    pub decomposition: PseudoLindblad,
    /// Pairs of Bohr frequencies treated as degenerate although not exactly equal.
    pub merged_gaps: Vec<(f64, f64)>,
}

pub fn rwa_projection(model: &SystemModel) -> Result<RwaResult> {
    let micro = microscopic_pseudo_lindblad(model, Mode::Stationary, None)?;
    let d = model.dim();
    let g = model.gaps();
    let mut dm = micro.dissipator.clone();
    for r in 0..d * d {
        for cc in 0..d * d {
            if g.of(r / d, r % d) != g.of(cc / d, cc % d) {
                dm[(r, cc)] = ZERO;
            }
        }
    }
    let basis = model.basis();
    let mut ve = basis.to_energy(&micro.v);
    for a in 0..d {
        for b in 0..d {
            if g.of(a, b) != g.of(a, a) {
                ve[(a, b)] = ZERO;
            }
        }
    }
    Ok(RwaResult {
        decomposition: PseudoLindblad {
            v: basis.from_energy(&ve),
            dissipator: dm,
        },
        merged_gaps: g.merged().to_vec(),
    })
}

/// `H_eff = H - sum_nm L_n gamma_nm(0) L_m`.
pub fn effective_hamiltonian(model: &SystemModel) -> Result<Operator> {
    let g0 = model.bath().gamma_zero()?;
    let mut h = model.hamiltonian().clone();
    let ls = model.couplings();
    for n in 0..ls.len() {
        for m in 0..ls.len() {
            if g0[(n, m)] != 0.0 {
                h -= &ls[n] * &ls[m] * c(g0[(n, m)], 0.0);
            }
        }
    }
    Ok(h)
}

/// Decomposition `(M . L)(t) = (Gamma . dL/dt)(t) - gamma(0) L + gamma(t) G0(t){L}` for one channel.
#[derive(Clone, Debug)]
pub struct DampingSplit {
    pub total: Operator,
    pub damping: Operator,
    pub renormalizable: Operator,
    pub slip: Operator,
}

/// `gamma(tau) = gamma(0) + Im A(tau; 0)`, the damping kernel of a stationary bath.
pub fn damping_kernel(model: &SystemModel, tau: f64) -> Result<DMatrix<f64>> {
    let g0 = model.bath().gamma_zero()?;
    if tau == 0.0 {
        return Ok(g0);
    }
    let a = model.bath().coefficient_full(tau, 0.0)?;
    Ok(g0 + a.map(|z| z.im))
}

pub fn damping_split(model: &SystemModel, t: f64, n: usize) -> Result<DampingSplit> {
    let nch = model.channels();
    if n >= nch {
        return Err(Error::invalid(format!("channel {n} out of range")));
    }
    let d = model.dim();
    let basis = model.basis();
    let le = model.couplings_energy();
    let bath = model.bath();
    let gaps = model.gaps().gaps().to_vec();
    // M(t; w) = (A(t; w) - conj(A(t; -w))) / 2i
    let mut mtab = Vec::with_capacity(gaps.len());
    for &w in &gaps {
        let a = bath.coefficient_full(t, w)?;
        let b = bath.coefficient_full(t, -w)?;
        mtab.push((a - b.map(|z| z.conj())) * c(0.0, -0.5));
    }
    let g0 = bath.gamma_zero()?;
    let gt = damping_kernel(model, t)?;
    // Gamma(t; w) = int_0^t gamma(tau) exp(-i w tau) dtau
    let ng = gaps.len();
    let gam = if t > 0.0 {
        integrate_vec(
            |tau| {
                let k = damping_kernel(model, tau).unwrap_or_else(|_| DMatrix::zeros(nch, nch));
                let mut out = Vec::with_capacity(ng * nch * nch);
                for &w in &gaps {
                    let ph = c(0.0, -w * tau).exp();
                    for a in 0..nch {
                        for b in 0..nch {
                            out.push(ph * k[(a, b)]);
                        }
                    }
                }
                out
            },
            0.0,
            t,
            ng * nch * nch,
            QuadOptions::with_rel(1e-11),
        )?
    } else {
        vec![ZERO; ng * nch * nch]
    };
    let g = model.gaps();
    let total = Operator::from_fn(d, d, |a, b| (0..nch).map(|m| mtab[g.of(a, b)][(n, m)] * le[m][(a, b)]).sum());
    let damping = Operator::from_fn(d, d, |a, b| {
        let gi = g.of(a, b);
        let w = basis.gap(a, b);
        (0..nch)
            .map(|m| gam[gi * nch * nch + n * nch + m] * c(0.0, w) * le[m][(a, b)])
            .sum()
    });
    let renorm = Operator::from_fn(d, d, |a, b| (0..nch).map(|m| -le[m][(a, b)] * g0[(n, m)]).sum());
    let slip = Operator::from_fn(d, d, |a, b| {
        let ph = c(0.0, -basis.gap(a, b) * t).exp();
        (0..nch).map(|m| ph * le[m][(a, b)] * gt[(n, m)]).sum()
    });
    Ok(DampingSplit {
        total: basis.from_energy(&total),
        damping: basis.from_energy(&damping),
        renormalizable: basis.from_energy(&renorm),
        slip: basis.from_energy(&slip),
    })
}

/// Piecewise-Chebyshev cache of `A(t; w_g)` on `[0, t_max]` for every gap.
#[derive(Clone, Debug)]
pub struct CoefficientCache {
    cheb: Option<ChebCache>,
    stationary: CoefficientTable,
    nch: usize,
    ngaps: usize,
    t_max: f64,
}

impl CoefficientCache {
    pub fn build(model: &SystemModel, t_max: f64, tol: f64) -> Result<Self> {
        let nch = model.channels();
        let ngaps = model.gaps().gaps().len();
        let white = matches!(model.bath(), BathModel::WhiteNoise(_));
        let stationary = if matches!(model.bath(), BathModel::Tabulated(_)) {
            model.full_table(t_max)?
        } else {
            model.stationary_table()?
        };
        if white || t_max <= 0.0 {
            return Ok(CoefficientCache {
                cheb: None,
                stationary,
                nch,
                ngaps,
                t_max,
            });
        }
        let scale = stationary.iter().map(max_abs).fold(1e-300, f64::max);
        let mut failure: Option<Error> = None;
        let cheb = ChebCache::build(
            |t| match model.full_table(t) {
                Ok(tab) => tab.iter().flat_map(|m| m.transpose().iter().copied().collect::<Vec<_>>()).collect(),
                Err(e) => {
                    failure.get_or_insert(e);
                    vec![ZERO; ngaps * nch * nch]
                }
            },
            0.0,
            t_max,
            ngaps * nch * nch,
            tol,
            scale,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        Ok(CoefficientCache {
            cheb: Some(cheb),
            stationary,
            nch,
            ngaps,
            t_max,
        })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn table(&self, t: f64) -> CoefficientTable {
        match &self.cheb {
            None => {
                if t > 0.0 {
                    self.stationary.clone()
                } else {
                    vec![DMatrix::zeros(self.nch, self.nch); self.ngaps]
                }
            }
            Some(ch) => {
                let v = ch.eval(t);
                let n2 = self.nch * self.nch;
                (0..self.ngaps)
                    .map(|g| DMatrix::from_row_slice(self.nch, self.nch, &v[g * n2..(g + 1) * n2]))
                    .collect()
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PropagateOptions {
    pub mode: Mode,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Relative accuracy of the cached full-time coefficients.
    pub cache_tol: f64,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        PropagateOptions {
            mode: Mode::FullTime,
            rtol: 1e-10,
            atol: 1e-14,
            max_steps: 5_000_000,
            cache_tol: 1e-11,
        }
    }
}

impl PropagateOptions {
    pub fn stationary() -> Self {
        PropagateOptions {
            mode: Mode::Stationary,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Operator>,
    pub mode: Mode,
    pub steps: usize,
    pub rejected: usize,
}

/// Integration statistics of [`evolve_operator`].
#[derive(Clone, Copy, Debug, Default)]
pub struct StepStats {
    pub steps: usize,
    pub rejected: usize,
}

/// Time-dependent right-hand side in the energy basis, coefficients evaluated at absolute time.
pub struct EnergyRhs<'a> {
    model: &'a SystemModel,
    mode: Mode,
    cache: Option<CoefficientCache>,
    stationary_q: Vec<Operator>,
}

impl<'a> EnergyRhs<'a> {
    pub fn new(model: &'a SystemModel, mode: Mode, t_max: f64, cache_tol: f64) -> Result<Self> {
        let (cache, stationary_q) = match mode {
            Mode::Stationary => (None, model.q_energy(&model.stationary_table()?)),
            Mode::FullTime => (Some(CoefficientCache::build(model, t_max, cache_tol)?), vec![]),
        };
        Ok(EnergyRhs {
            model,
            mode,
            cache,
            stationary_q,
        })
    }

    pub fn q_at(&self, t: f64) -> Vec<Operator> {
        match self.mode {
            Mode::Stationary => self.stationary_q.clone(),
            Mode::FullTime => self.model.q_energy(&self.cache.as_ref().expect("cache").table(t)),
        }
    }

    /// `d rho / dt` with `rho` in the energy basis.
    pub fn apply(&self, t: f64, rho: &Operator, q: &[Operator]) -> Operator {
        let d = self.model.dim();
        let e = self.model.basis().energies();
        let mut out = Operator::from_fn(d, d, |a, b| rho[(a, b)] * c(0.0, -(e[a] - e[b])));
        let _ = t;
        for (l, qn) in self.model.couplings_energy().iter().zip(q) {
            let x = rho * qn.adjoint() - qn * rho;
            out += l * &x - &x * l;
        }
        out
    }
}

/// Evolves an arbitrary operator `y` (input basis) from `t0` through the output times.
pub fn evolve_operator(
    model: &SystemModel,
    y0: &Operator,
    t0: f64,
    outputs: &[f64],
    opts: &PropagateOptions,
) -> Result<(Vec<Operator>, StepStats)> {
    let d = model.dim();
    if y0.nrows() != d || y0.ncols() != d {
        return Err(Error::Dimension {
            context: "initial operator".into(),
            expected: d,
            found: y0.nrows(),
        });
    }
    let t_end = outputs.iter().copied().fold(t0, f64::max);
    let rhs = EnergyRhs::new(model, opts.mode, t_end, opts.cache_tol)?;
    let basis = model.basis();
    let f = |t: f64, y: &Operator| {
        let q = rhs.q_at(t);
        rhs.apply(t, y, &q)
    };
    let ye = basis.to_energy(y0);
    let (states, stats) = dopri5(f, t0, ye, outputs, opts)?;
    Ok((states.iter().map(|s| basis.from_energy(s)).collect(), stats))
}

/// Propagates a density matrix through ascending output times starting at `t = 0`.
pub fn propagate(model: &SystemModel, rho0: &Operator, times: &[f64], opts: &PropagateOptions) -> Result<Trajectory> {
    require_hermitian("initial state", rho0)?;
    let tr = crate::algebra::trace(rho0);
    if (tr - ONE).norm() > 1e-10 {
        return Err(Error::invalid(format!("initial state has trace {tr}, expected 1")));
    }
    let ev = crate::algebra::hermitian_eigenvalues(rho0);
    if ev[0] < -1e-10 {
        return Err(Error::invalid(format!(
            "initial state is not positive semidefinite (min eigenvalue {:.3e})",
            ev[0]
        )));
    }
    if times.iter().any(|t| *t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::invalid("output times must be non-negative and ascending"));
    }
    let (states, stats) = evolve_operator(model, rho0, 0.0, times, opts)?;
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        mode: opts.mode,
        steps: stats.steps,
        rejected: stats.rejected,
    })
}

// Dormand-Prince 5(4) tableau
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Adaptive Dormand-Prince integration of `dy/dt = f(t, y)` hitting every output time exactly.
pub fn dopri5<F>(
    f: F,
    t0: f64,
    y0: Operator,
    outputs: &[f64],
    opts: &PropagateOptions,
) -> Result<(Vec<Operator>, StepStats)>
where
    F: Fn(f64, &Operator) -> Operator,
{
    let mut stats = StepStats::default();
    let mut out = Vec::with_capacity(outputs.len());
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let scale0 = max_abs(&y).max(1e-300);
    let rate = max_abs(&k1) / scale0;
    let span = outputs.iter().copied().fold(t0, f64::max) - t0;
    let mut h = if rate > 0.0 { (0.01 / rate).min(span.max(1e-300)) } else { span.max(1e-3) };
    h = h.max(1e-12 * span.max(1.0));
    for &target in outputs {
        if target < t - 1e-12 * t.abs().max(1.0) {
            return Err(Error::invalid("output times must be ascending"));
        }
        while t < target {
            if stats.steps + stats.rejected >= opts.max_steps {
                return Err(Error::NoConvergence(format!(
                    "step budget of {} exhausted at t = {t}",
                    opts.max_steps
                )));
            }
            let last = t + h >= target;
            let hh = if last { target - t } else { h };
            let k2 = f(t + hh / 5.0, &(&y + &k1 * c(hh * A21, 0.0)));
            let k3 = f(t + 3.0 * hh / 10.0, &(&y + &k1 * c(hh * A31, 0.0) + &k2 * c(hh * A32, 0.0)));
            let k4 = f(
                t + 4.0 * hh / 5.0,
                &(&y + &k1 * c(hh * A41, 0.0) + &k2 * c(hh * A42, 0.0) + &k3 * c(hh * A43, 0.0)),
            );
            let k5 = f(
                t + 8.0 * hh / 9.0,
                &(&y + &k1 * c(hh * A51, 0.0) + &k2 * c(hh * A52, 0.0) + &k3 * c(hh * A53, 0.0) + &k4 * c(hh * A54, 0.0)),
            );
            let k6 = f(
                t + hh,
                &(&y + &k1 * c(hh * A61, 0.0)
                    + &k2 * c(hh * A62, 0.0)
                    + &k3 * c(hh * A63, 0.0)
                    + &k4 * c(hh * A64, 0.0)
                    + &k5 * c(hh * A65, 0.0)),
            );
            let ynew = &y
                + (&k1 * c(B1, 0.0) + &k3 * c(B3, 0.0) + &k4 * c(B4, 0.0) + &k5 * c(B5, 0.0) + &k6 * c(B6, 0.0))
                    * c(hh, 0.0);
            let k7 = f(t + hh, &ynew);
            let err = (&k1 * c(E1, 0.0)
                + &k3 * c(E3, 0.0)
                + &k4 * c(E4, 0.0)
                + &k5 * c(E5, 0.0)
                + &k6 * c(E6, 0.0)
                + &k7 * c(E7, 0.0))
                * c(hh, 0.0);
            let mut en = 0.0f64;
            for ((e, a), b) in err.iter().zip(y.iter()).zip(ynew.iter()) {
                let sc = opts.atol + opts.rtol * a.norm().max(b.norm());
                en = en.max(e.norm() / sc);
            }
            if !en.is_finite() {
                return Err(Error::numerical(format!("non-finite state at t = {t}")));
            }
            if en <= 1.0 {
                t = if last { target } else { t + hh };
                y = ynew;
                k1 = k7;
                stats.steps += 1;
                let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
                if !last || fac < 1.0 {
                    h = hh * fac;
                }
            } else {
                stats.rejected += 1;
                h = hh * (0.9 * en.powf(-0.2)).clamp(0.1, 1.0);
                if h < 1e-15 * t.abs().max(1.0) {
                    return Err(Error::NoConvergence(format!("step size underflow at t = {t}")));
                }
            }
        }
        out.push(y.clone());
    }
    Ok((out, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sx() -> Operator {
        Operator::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
    }
    fn sz() -> Operator {
        Operator::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
    }

    fn qubit(l: Operator, bath: BathModel) -> SystemModel {
        SystemModel::new(sz() * c(0.5, 0.0), vec![l], bath).unwrap()
    }

    #[test]
    fn rejects_bad_models() {
        let bath = BathModel::thermal(vec![0.1], 5.0, 1.0).unwrap();
        let bad = Operator::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        assert!(SystemModel::new(sz(), vec![bad], bath.clone()).is_err());
        let two = BathModel::thermal(vec![0.1, 0.1], 5.0, 1.0).unwrap();
        assert!(SystemModel::new(sz(), vec![sx()], two).is_err());
    }

    #[test]
    fn generator_preserves_trace_and_hermiticity() {
        let m = qubit(&sx() + &sz() * c(0.3, 0.0), BathModel::thermal(vec![0.1], 5.0, 0.4).unwrap());
        for l in [
            build_generator(&m, Mode::Stationary, None).unwrap(),
            build_generator(&m, Mode::FullTime, Some(0.7)).unwrap(),
        ] {
            assert!(l.trace_residual() < 1e-12);
            assert!(l.hermiticity_residual() < 1e-12);
        }
    }

    #[test]
    fn dephasing_rate_is_four_re_a() {
        let m = qubit(sz(), BathModel::thermal(vec![0.1], 5.0, 0.4).unwrap());
        let l2 = build_l2(&m, Mode::FullTime, Some(0.9)).unwrap();
        let a = m.bath().coefficient_full(0.9, 0.0).unwrap()[(0, 0)];
        let v = l2.apply(&crate::algebra::unit(2, 0, 1))[(0, 1)];
        assert!((v + 4.0 * a.re).norm() < 1e-13);
    }

    #[test]
    fn pseudo_lindblad_reassembles_and_matches_kernel() {
        let l = &sx() * c(0.8, 0.0) + &sz() * c(0.4, 0.0);
        let m = qubit(l, BathModel::thermal(vec![0.2], 4.0, 0.6).unwrap());
        let gen = build_generator(&m, Mode::Stationary, None).unwrap();
        let pl = pseudo_lindblad(&gen, &m).unwrap();
        let back = pl.to_superoperator(&m);
        assert!((&back - &gen).max_abs() < 1e-12);
        let micro = microscopic_pseudo_lindblad(&m, Mode::Stationary, None).unwrap();
        let kern = p_lindblad_kernel(&m).unwrap();
        assert!(max_abs(&(&micro.dissipator - &kern)) < 1e-12);
        let p = traceless_projector(2);
        assert!(max_abs(&(&p * &micro.dissipator * &p - &pl.dissipator)) < 1e-12);
        let micro_gen = micro.to_superoperator(&m);
        assert!((&micro_gen - &gen).max_abs() < 1e-12);
    }

    #[test]
    fn rwa_dissipator_is_positive() {
        let m = qubit(sx(), BathModel::thermal(vec![0.2], 4.0, 0.6).unwrap());
        let r = rwa_projection(&m).unwrap();
        let ev = crate::algebra::hermitian_eigenvalues(&r.decomposition.dissipator);
        assert!(ev[0] > -1e-12);
        let w = m.basis().gap(0, 1);
        let a = m.bath().alpha_spectrum(w).unwrap()[(0, 0)].re;
        let b = m.bath().alpha_spectrum(-w).unwrap()[(0, 0)].re;
        let mut want = vec![0.0, 0.0, a, b];
        want.sort_by(|x, y| x.total_cmp(y));
        for (x, y) in ev.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_is_dual() {
        let m = qubit(&sx() + &sz() * c(0.2, 0.0), BathModel::thermal(vec![0.2], 4.0, 0.6).unwrap());
        let l = build_generator(&m, Mode::FullTime, Some(1.3)).unwrap();
        let a = adjoint_generator(&m, Mode::FullTime, Some(1.3)).unwrap();
        assert!((&l.dual() - &a).max_abs() < 1e-12);
    }

    #[test]
    fn damping_split_sums_and_slip_cancels_at_zero() {
        let m = qubit(&sx() + &sz() * c(0.2, 0.0), BathModel::thermal(vec![0.2], 4.0, 0.6).unwrap());
        for &t in &[0.3, 2.0] {
            let s = damping_split(&m, t, 0).unwrap();
            assert!(max_abs(&(&s.damping + &s.renormalizable + &s.slip - &s.total)) < 1e-10);
        }
        let s0 = damping_split(&m, 0.0, 0).unwrap();
        assert!(max_abs(&(&s0.slip + &s0.renormalizable)) < 1e-14);
        let heff = effective_hamiltonian(&m).unwrap();
        let l = m.couplings()[0].clone();
        assert!(max_abs(&(heff - m.hamiltonian() + &l * &l * c(0.2 * 4.0 / 2.0, 0.0))) < 1e-12);
    }

    #[test]
    fn closed_system_is_unitary() {
        let m = qubit(sx(), BathModel::thermal(vec![0.0], 4.0, 0.6).unwrap());
        let rho0 = Operator::from_row_slice(2, 2, &[c(0.7, 0.0), c(0.2, 0.1), c(0.2, -0.1), c(0.3, 0.0)]);
        let tr = propagate(&m, &rho0, &[0.0, 1.0, 6.0], &PropagateOptions::default()).unwrap();
        let h = m.hamiltonian() * c(0.0, -6.0);
        let u = h.exp();
        let want = &u * &rho0 * u.adjoint();
        assert!(max_abs(&(&tr.states[2] - want)) < 1e-9);
    }

    #[test]
    fn stationary_propagation_matches_matrix_exponential() {
        let m = qubit(&sx() + &sz() * c(0.3, 0.0), BathModel::thermal(vec![0.1], 5.0, 0.4).unwrap());
        let rho0 = Operator::from_row_slice(2, 2, &[c(0.2, 0.0), c(0.3, 0.1), c(0.3, -0.1), c(0.8, 0.0)]);
        let tr = propagate(&m, &rho0, &[3.0], &PropagateOptions::stationary()).unwrap();
        let l = build_generator(&m, Mode::Stationary, None).unwrap();
        let want = (l * 3.0).exp().apply(&rho0);
        assert!(max_abs(&(&tr.states[0] - want)) < 1e-9);
    }

    #[test]
    fn trace_drift_is_negligible() {
        let m = qubit(&sx() + &sz() * c(0.3, 0.0), BathModel::thermal(vec![0.05], 5.0, 0.4).unwrap());
        let rho0 = Operator::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]);
        let tr = propagate(&m, &rho0, &[50.0 / 0.05], &PropagateOptions::default()).unwrap();
        let t = crate::algebra::trace(&tr.states[0]);
        assert!((t - ONE).norm() < 1e-10);
    }
}
