//! Gaussian bath correlation functions and their transforms.
//!
//! Conventions: `alpha_tilde(w) = int dt exp(-i w t) alpha(t)` and
//! `alpha_hat(s) = int_0^inf dt exp(-s t) alpha(t)`. Correlations are stationary and
//! satisfy `alpha(-t) = alpha(t)^dagger` (channel matrices).

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::algebra::{c, hermitian_eigenvalues, max_abs, I};
use crate::error::{Error, Result};
use crate::quad::{integrate, integrate_to_infinity, QuadOptions};
use crate::special::{digamma, exp_e1, exp_neg_ei};

/// `n x n` matrix over bath channels.
pub type ChannelMatrix = DMatrix<C64>;

/// Delta-correlated noise `alpha(t) = c delta(t)`.
#[derive(Clone, Debug)]
pub struct WhiteNoise {
    c: ChannelMatrix,
}

/// Exponential correlation `alpha(t) = c exp(-lambda |t|)` with Hermitian `c`.
#[derive(Clone, Debug)]
pub struct ExponentialOU {
    c: ChannelMatrix,
    lambda: f64,
}

/// Thermal bath with Lorentz-regulated Ohmic damping kernel
/// `gamma_tilde(w) = gamma0 / (1 + (w / cutoff)^2)`, channel-diagonal, common cutoff and temperature.
#[derive(Clone, Debug)]
pub struct ThermalLorentz {
    gamma0: Vec<f64>,
    cutoff: f64,
    temperature: f64,
}

/// Sampled correlation on a uniform grid `t_k = k dt`, clamped cubic-spline interpolation.
#[derive(Clone, Debug)]
pub struct Tabulated {
    dt: f64,
    n: usize,
    samples: Vec<ChannelMatrix>,
    // per entry (row-major n*n): spline second derivatives, one per sample
    second: Vec<Vec<C64>>,
    decay: f64,
}

#[derive(Clone, Debug)]
pub enum BathModel {
    WhiteNoise(WhiteNoise),
    ExponentialOU(ExponentialOU),
    ThermalLorentz(ThermalLorentz),
    Tabulated(Tabulated),
}

fn check_hermitian_psd(what: &str, m: &ChannelMatrix) -> Result<()> {
    if !m.is_square() {
        return Err(Error::invalid(format!("{what} must be a square channel matrix")));
    }
    crate::algebra::require_hermitian(what, m)?;
    let ev = hermitian_eigenvalues(m);
    let scale = max_abs(m).max(1e-300);
    if ev[0] < -1e-12 * scale {
        return Err(Error::invalid(format!(
            "{what} is not positive semidefinite (min eigenvalue {:.3e})",
            ev[0]
        )));
    }
    Ok(())
}

impl WhiteNoise {
    pub fn new(c: ChannelMatrix) -> Result<Self> {
        check_hermitian_psd("white-noise strength", &c)?;
        Ok(WhiteNoise { c })
    }

    pub fn strength(&self) -> &ChannelMatrix {
        &self.c
    }
}

impl ExponentialOU {
    pub fn new(c: ChannelMatrix, lambda: f64) -> Result<Self> {
        check_hermitian_psd("OU strength", &c)?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("OU decay rate must be positive, got {lambda}")));
        }
        Ok(ExponentialOU { c, lambda })
    }

    pub fn strength(&self) -> &ChannelMatrix {
        &self.c
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Direct-sum cap and tail handling for Matsubara series.
const MATSUBARA_MIN_TERMS: usize = 1000;

impl ThermalLorentz {
    pub fn new(gamma0: Vec<f64>, cutoff: f64, temperature: f64) -> Result<Self> {
        if gamma0.is_empty() {
            return Err(Error::invalid("thermal bath needs at least one channel"));
        }
        if let Some(g) = gamma0.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
            return Err(Error::invalid(format!("damping strength must be >= 0, got {g}")));
        }
        if !(cutoff > 0.0 && cutoff.is_finite()) {
            return Err(Error::invalid(format!("cutoff must be positive, got {cutoff}")));
        }
        if !(temperature >= 0.0 && temperature.is_finite()) {
            return Err(Error::invalid(format!("temperature must be >= 0, got {temperature}")));
        }
        if temperature > 0.0 {
            let x = cutoff / (2.0 * PI * temperature);
            if x >= 0.5 && (x - x.round()).abs() < 1e-6 * x {
                return Err(Error::invalid(format!(
                    "cutoff {cutoff} coincides with Matsubara frequency {} at T = {temperature}",
                    x.round()
                )));
            }
        }
        Ok(ThermalLorentz {
            gamma0,
            cutoff,
            temperature,
        })
    }

    pub fn gamma0(&self) -> &[f64] {
        &self.gamma0
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    fn diag(&self, f: impl Fn() -> C64) -> ChannelMatrix {
        let v = f();
        let n = self.gamma0.len();
        DMatrix::from_fn(n, n, |i, j| if i == j { v * self.gamma0[i] } else { C64::new(0.0, 0.0) })
    }

    /// Unit-strength damping spectrum.
    pub fn unit_damping(&self, w: f64) -> f64 {
        1.0 / (1.0 + (w / self.cutoff).powi(2))
    }

    /// Unit-strength noise spectrum `gamma_tilde(w) w coth(w / 2T)`.
    pub fn unit_noise(&self, w: f64) -> f64 {
        self.unit_damping(w) * fdr_thermal(w, self.temperature)
    }

    /// Unit-strength spectrum `gamma_tilde(w) w [coth(w / 2T) - 1]`.
    pub fn unit_spectrum(&self, w: f64) -> f64 {
        let g = self.unit_damping(w);
        let t = self.temperature;
        if t > 0.0 {
            if w == 0.0 {
                2.0 * t * g
            } else {
                // coth(x) - 1 = 2 / (exp(2x) - 1)
                g * 2.0 * w / (w / t).exp_m1()
            }
        } else if w < 0.0 {
            -2.0 * w * g
        } else {
            0.0
        }
    }

    fn nu(&self, k: f64) -> f64 {
        2.0 * PI * self.temperature * k
    }

    fn c0(&self) -> C64 {
        let l = self.cutoff;
        let half = 0.5 * l * l;
        let cot = 1.0 / (l / (2.0 * self.temperature)).tan();
        c(half * cot, -half)
    }

    fn ck(&self, k: f64) -> f64 {
        let l2 = self.cutoff * self.cutoff;
        let nu = self.nu(k);
        2.0 * self.temperature * l2 * nu / (nu * nu - l2)
    }

    fn kcap(&self) -> usize {
        let x = self.cutoff / (2.0 * PI * self.temperature);
        MATSUBARA_MIN_TERMS.max((8.0 * x).ceil() as usize)
    }

    /// Unit-strength correlation for `t > 0`.
    pub fn unit_time(&self, t: f64) -> Result<C64> {
        if t == 0.0 {
            return Err(Error::invalid(
                "the Lorentz-damped thermal correlation diverges logarithmically at t = 0",
            ));
        }
        if t < 0.0 {
            return Ok(self.unit_time(-t)?.conj());
        }
        let l = self.cutoff;
        let l2 = l * l;
        if self.temperature == 0.0 {
            let x = l * t;
            let re = -(l2 / (2.0 * PI)) * (exp_neg_ei(x) - exp_e1(x));
            return Ok(c(re, -0.5 * l2 * (-x).exp()));
        }
        let tt = self.temperature;
        let b = 2.0 * PI * tt * t;
        // sum_k (2 T L^2 / nu_k) e^{-nu_k t} in closed form
        let mut acc = self.c0() * (-l * t).exp() - c((l2 / PI) * (-(-b).exp_m1()).ln(), 0.0);
        // remainder 2 T L^4 / (nu (nu^2 - L^2)) converges like k^-3
        let rem = |k: f64| {
            let nu = self.nu(k);
            2.0 * tt * l2 * l2 / (nu * (nu * nu - l2)) * (-nu * t).exp()
        };
        let cap = self.kcap();
        let mut sum = 0.0;
        let mut k = 1usize;
        let xl = l / (2.0 * PI * tt);
        loop {
            let term = rem(k as f64);
            sum += term;
            if (k as f64) > 2.0 * xl && term.abs() <= 1e-17 * (sum.abs() + acc.norm()) {
                break;
            }
            if k >= cap {
                let tail = integrate_to_infinity(
                    |x| c(rem(x), 0.0),
                    k as f64 + 0.5,
                    QuadOptions::with_rel(1e-10),
                )?;
                sum += tail.re;
                break;
            }
            k += 1;
        }
        acc += sum;
        Ok(acc)
    }

    /// Unit-strength Laplace transform.
    pub fn unit_laplace(&self, s: C64) -> C64 {
        let l = self.cutoff;
        if self.temperature == 0.0 {
            return self.unit_laplace_zero_t(s);
        }
        // removable singularity at s = cutoff
        if (s - l).norm() < 1e-7 * l {
            let d = 1e-5 * l;
            return 0.5 * (self.unit_laplace_thermal(s + d) + self.unit_laplace_thermal(s - d));
        }
        self.unit_laplace_thermal(s)
    }

    fn unit_laplace_thermal(&self, s: C64) -> C64 {
        let l = self.cutoff;
        let l2 = l * l;
        let w = 2.0 * PI * self.temperature;
        let xl = l / w;
        let xs = s / w;
        let a = 0.5 / (s + l);
        let b = 0.5 / (s - l);
        let cc = -s / (s * s - l2);
        let sum = a * digamma(c(1.0 - xl, 0.0)) + b * digamma(c(1.0 + xl, 0.0)) + cc * digamma(xs + 1.0);
        self.c0() / (s + l) - sum * (l2 / PI)
    }

    fn unit_laplace_zero_t(&self, s: C64) -> C64 {
        let l = self.cutoff;
        if (s - l).norm() < 1e-7 * l || (s + l).norm() < 1e-7 * l {
            let d = 1e-5 * l;
            return 0.5 * (self.unit_laplace_zero_t(s + d) + self.unit_laplace_zero_t(s - d));
        }
        let a = [c(0.0, l), c(0.0, -l), I * s];
        let mut total = C64::new(0.0, 0.0);
        for j in 0..3 {
            let mut den = C64::new(1.0, 0.0);
            for k in 0..3 {
                if k != j {
                    den *= a[j] - a[k];
                }
            }
            let coef = a[j] / den;
            if coef.norm() == 0.0 {
                continue;
            }
            let arg = -a[j];
            let lg = if j == 2 && s.re == 0.0 && arg.re < 0.0 {
                // boundary value approached from Re s > 0
                c(arg.re.abs().ln(), -PI)
            } else {
                arg.ln()
            };
            total += coef * lg;
        }
        total * I * (l * l / PI)
    }

    /// Unit-strength `int_0^t alpha(tau) exp(-i w tau) dtau`.
    pub fn unit_full(&self, t: f64, w: f64) -> Result<C64> {
        if t <= 0.0 {
            return Ok(C64::new(0.0, 0.0));
        }
        if self.temperature == 0.0 {
            return integrate(
                |tau| {
                    if tau <= 0.0 {
                        C64::new(0.0, 0.0)
                    } else {
                        self.unit_time(tau).unwrap_or_default() * c(0.0, -w * tau).exp()
                    }
                },
                0.0,
                t,
                QuadOptions::with_rel(1e-12),
            );
        }
        let stat = self.unit_laplace(c(0.0, w));
        let l = self.cutoff;
        let z0 = c(l, w);
        let mut rem = self.c0() * (-z0 * t).exp() / z0;
        let xl = l / (2.0 * PI * self.temperature);
        let f = |k: f64| {
            let z = c(self.nu(k), w);
            self.ck(k) * (-z * t).exp() / z
        };
        let cap = self.kcap();
        let mut k = 1usize;
        loop {
            let term = f(k as f64);
            rem += term;
            if (k as f64) > 2.0 * xl && term.norm() <= 1e-17 * (rem.norm() + stat.norm()) {
                break;
            }
            if k >= cap {
                rem += integrate_to_infinity(f, k as f64 + 0.5, QuadOptions::with_rel(1e-10))?;
                break;
            }
            k += 1;
        }
        Ok(stat - rem)
    }
}

/// Thermal fluctuation-dissipation kernel `w coth(w / 2T)`, `2T` at `w = 0`, `|w|` at `T = 0`.
pub fn fdr_thermal(w: f64, temperature: f64) -> f64 {
    if temperature == 0.0 {
        w.abs()
    } else if w == 0.0 {
        2.0 * temperature
    } else {
        w * crate::special::coth(w / (2.0 * temperature))
    }
}

// integrals I_m = int_0^h u^m exp(-s u) du, m = 0..3
fn exp_moments(s: C64, h: f64) -> [C64; 4] {
    let sh = s * h;
    if sh.norm() < 0.5 {
        let mut out = [C64::new(0.0, 0.0); 4];
        for (m, o) in out.iter_mut().enumerate() {
            let mut term = C64::new(h.powi(m as i32 + 1), 0.0);
            let mut j = 0usize;
            loop {
                let add = term / (m + j + 1) as f64;
                *o += add;
                if add.norm() < 1e-18 * o.norm() || j > 60 {
                    break;
                }
                j += 1;
                term *= -sh / j as f64;
            }
        }
        out
    } else {
        let e = (-sh).exp();
        let i0 = (1.0 - e) / s;
        let i1 = (i0 - e * h) / s;
        let i2 = (i1 * 2.0 - e * h * h) / s;
        let i3 = (i2 * 3.0 - e * h * h * h) / s;
        [i0, i1, i2, i3]
    }
}

impl Tabulated {
    /// `samples[k]` is `alpha(k * dt)`; at least five samples.
    pub fn new(dt: f64, samples: Vec<ChannelMatrix>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("tabulated spacing must be positive, got {dt}")));
        }
        if samples.len() < 5 {
            return Err(Error::invalid("tabulated correlation needs at least five samples"));
        }
        let n = samples[0].nrows();
        if samples.iter().any(|m| m.nrows() != n || m.ncols() != n) {
            return Err(Error::invalid("tabulated samples have inconsistent channel shapes"));
        }
        let scale = max_abs(&samples[0]).max(1e-300);
        let res = crate::algebra::hermiticity_residual(&samples[0]);
        if res > 1e-9 * scale {
            return Err(Error::NotHermitian {
                what: "tabulated alpha(0)".into(),
                residual: res,
            });
        }
        let big_n = samples.len() - 1;
        let h = dt;
        let mut second = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                let y: Vec<C64> = samples.iter().map(|m| m[(a, b)]).collect();
                // one-sided so that a kink at t = 0 (e.g. exponential decay) is respected
                let d0 = (y[0] * -25.0 + y[1] * 48.0 - y[2] * 36.0 + y[3] * 16.0 - y[4] * 3.0) / (12.0 * h);
                let dn = (y[big_n] * 25.0 - y[big_n - 1] * 48.0 + y[big_n - 2] * 36.0
                    - y[big_n - 3] * 16.0
                    + y[big_n - 4] * 3.0)
                    / (12.0 * h);
                second.push(clamped_spline(&y, h, d0, dn));
            }
        }
        let mut tab = Tabulated {
            dt,
            n,
            samples,
            second,
            decay: 0.0,
        };
        tab.decay = tab.fit_decay();
        Ok(tab)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_max(&self) -> f64 {
        self.dt * (self.samples.len() - 1) as f64
    }

    pub fn samples(&self) -> &[ChannelMatrix] {
        &self.samples
    }

    /// Fitted exponential decay rate of the tail envelope (0 if not decaying).
    pub fn decay_rate(&self) -> f64 {
        self.decay
    }

    fn fit_decay(&self) -> f64 {
        let n = self.samples.len();
        let w = (n / 10).max(1);
        let env = |lo: usize, hi: usize| {
            self.samples[lo..hi]
                .iter()
                .map(max_abs)
                .fold(0.0f64, f64::max)
        };
        let m1 = env(n - 2 * w, n - w);
        let m2 = env(n - w, n);
        if m1 <= 0.0 || m2 <= 0.0 || m2 >= m1 {
            return 0.0;
        }
        (m1 / m2).ln() / (w as f64 * self.dt)
    }

    fn eval_entry(&self, e: usize, t: f64) -> C64 {
        let h = self.dt;
        let last = self.samples.len() - 1;
        let k = ((t / h).floor() as usize).min(last - 1);
        let u = t - k as f64 * h;
        let (a, b) = (e / self.n, e % self.n);
        let y0 = self.samples[k][(a, b)];
        let y1 = self.samples[k + 1][(a, b)];
        let m0 = self.second[e][k];
        let m1 = self.second[e][k + 1];
        let bcoef = (y1 - y0) / h - (m0 * 2.0 + m1) * (h / 6.0);
        y0 + bcoef * u + m0 * (0.5 * u * u) + (m1 - m0) * (u * u * u / (6.0 * h))
    }

    pub fn alpha_time(&self, t: f64) -> Result<ChannelMatrix> {
        let tm = self.t_max();
        if t.abs() > tm * (1.0 + 1e-12) {
            return Err(Error::OutOfRange { t, max: tm });
        }
        let ta = t.abs().min(tm);
        let m = DMatrix::from_fn(self.n, self.n, |a, b| self.eval_entry(a * self.n + b, ta));
        Ok(if t < 0.0 { m.adjoint() } else { m })
    }

    // int_0^t exp(-s tau) alpha(tau) dtau over the spline, exact per interval
    fn spline_transform(&self, s: C64, t: f64) -> ChannelMatrix {
        let h = self.dt;
        let n = self.n;
        let last = self.samples.len() - 1;
        let t = t.min(self.t_max());
        let mut out = DMatrix::zeros(n, n);
        let full = ((t / h).floor() as usize).min(last);
        let full_m = exp_moments(s, h);
        for k in 0..=full.min(last - 1) {
            let (hk, mom) = if k < full {
                (h, full_m)
            } else {
                let hp = t - k as f64 * h;
                if hp <= 0.0 {
                    break;
                }
                (hp, exp_moments(s, hp))
            };
            let _ = hk;
            let phase = (-s * (k as f64 * h)).exp();
            for a in 0..n {
                for b in 0..n {
                    let e = a * n + b;
                    let y0 = self.samples[k][(a, b)];
                    let y1 = self.samples[k + 1][(a, b)];
                    let m0 = self.second[e][k];
                    let m1 = self.second[e][k + 1];
                    let bcoef = (y1 - y0) / h - (m0 * 2.0 + m1) * (h / 6.0);
                    let v = y0 * mom[0] + bcoef * mom[1] + m0 * 0.5 * mom[2] + (m1 - m0) / (6.0 * h) * mom[3];
                    out[(a, b)] += phase * v;
                }
            }
        }
        out
    }

    /// Laplace transform with exponential tail extrapolation; returns the value and a tail bound.
    pub fn laplace_with_tail(&self, s: C64) -> Result<(ChannelMatrix, f64)> {
        let tm = self.t_max();
        let head = self.spline_transform(s, tm);
        let last = self.samples.last().unwrap();
        let denom = s + self.decay;
        if self.decay <= 0.0 && s.re <= 0.0 {
            return Err(Error::invalid(
                "tabulated correlation does not decay; its Laplace transform needs Re s > 0",
            ));
        }
        let tail = last * ((-s * tm).exp() / denom);
        let bound = max_abs(&tail);
        Ok((head + tail, bound))
    }

    pub fn laplace(&self, s: C64) -> Result<ChannelMatrix> {
        Ok(self.laplace_with_tail(s)?.0)
    }

    pub fn full(&self, t: f64, w: f64) -> Result<ChannelMatrix> {
        let tm = self.t_max();
        if t > tm * (1.0 + 1e-12) {
            return Err(Error::OutOfRange { t, max: tm });
        }
        Ok(self.spline_transform(c(0.0, w), t.max(0.0)))
    }

    /// Reads `t, re_0_0, im_0_0, re_0_1, ...` rows (row-major channel pairs).
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let cols = headers.len();
        if cols < 3 || (cols - 1) % 2 != 0 {
            return Err(Error::invalid(format!(
                "{}: expected t followed by re/im column pairs, got {cols} columns",
                path.display()
            )));
        }
        let pairs = (cols - 1) / 2;
        let n = (pairs as f64).sqrt().round() as usize;
        if n * n != pairs {
            return Err(Error::invalid(format!(
                "{}: {pairs} channel pairs is not a square number",
                path.display()
            )));
        }
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let vals: std::result::Result<Vec<f64>, _> = rec.iter().map(|x| x.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| {
                Error::invalid(format!("{}: line {}: {e}", path.display(), line + 2))
            })?;
            times.push(vals[0]);
            samples.push(DMatrix::from_fn(n, n, |a, b| {
                let k = 1 + 2 * (a * n + b);
                c(vals[k], vals[k + 1])
            }));
        }
        if times.len() < 5 {
            return Err(Error::invalid(format!("{}: need at least five rows", path.display())));
        }
        if times[0].abs() > 1e-12 {
            return Err(Error::invalid(format!("{}: grid must start at t = 0", path.display())));
        }
        let dt = times[1] - times[0];
        for (k, t) in times.iter().enumerate() {
            if (t - k as f64 * dt).abs() > 1e-9 * dt.max(1.0) * (k as f64).max(1.0) {
                return Err(Error::invalid(format!(
                    "{}: line {}: grid is not uniform",
                    path.display(),
                    k + 2
                )));
            }
        }
        Tabulated::new(dt, samples)
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        for a in 0..self.n {
            for b in 0..self.n {
                header.push(format!("re_{a}_{b}"));
                header.push(format!("im_{a}_{b}"));
            }
        }
        w.write_record(&header)?;
        for (k, m) in self.samples.iter().enumerate() {
            let mut row = vec![format!("{:e}", k as f64 * self.dt)];
            for a in 0..self.n {
                for b in 0..self.n {
                    row.push(format!("{:e}", m[(a, b)].re));
                    row.push(format!("{:e}", m[(a, b)].im));
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn clamped_spline(y: &[C64], h: f64, d0: C64, dn: C64) -> Vec<C64> {
    let n = y.len();
    let mut a = vec![h; n];
    let mut b = vec![4.0 * h; n];
    let mut cc = vec![h; n];
    let mut r = vec![C64::new(0.0, 0.0); n];
    b[0] = 2.0 * h;
    b[n - 1] = 2.0 * h;
    a[0] = 0.0;
    cc[n - 1] = 0.0;
    r[0] = ((y[1] - y[0]) / h - d0) * 6.0;
    r[n - 1] = (dn - (y[n - 1] - y[n - 2]) / h) * 6.0;
    for k in 1..n - 1 {
        r[k] = (y[k + 1] - y[k] * 2.0 + y[k - 1]) * (6.0 / h);
    }
    // Thomas algorithm
    let mut cp = vec![0.0; n];
    let mut rp = vec![C64::new(0.0, 0.0); n];
    cp[0] = cc[0] / b[0];
    rp[0] = r[0] / b[0];
    for k in 1..n {
        let m = b[k] - a[k] * cp[k - 1];
        cp[k] = cc[k] / m;
        rp[k] = (r[k] - rp[k - 1] * a[k]) / m;
    }
    let mut out = vec![C64::new(0.0, 0.0); n];
    out[n - 1] = rp[n - 1];
    for k in (0..n - 1).rev() {
        out[k] = rp[k] - out[k + 1] * cp[k];
    }
    out
}

/// Result of the fluctuation-dissipation audit.
#[derive(Clone, Debug)]
pub struct FdiReport {
    /// `min_w min eig(nu_tilde(w) - w gamma_tilde(w))` and the `+` counterpart.
    pub min_eigenvalue: f64,
    pub worst_frequency: f64,
}

impl BathModel {
    pub fn white_noise(c: ChannelMatrix) -> Result<Self> {
        Ok(BathModel::WhiteNoise(WhiteNoise::new(c)?))
    }

    pub fn ou(c: ChannelMatrix, lambda: f64) -> Result<Self> {
        Ok(BathModel::ExponentialOU(ExponentialOU::new(c, lambda)?))
    }

    pub fn thermal(gamma0: Vec<f64>, cutoff: f64, temperature: f64) -> Result<Self> {
        Ok(BathModel::ThermalLorentz(ThermalLorentz::new(gamma0, cutoff, temperature)?))
    }

    pub fn tabulated(dt: f64, samples: Vec<ChannelMatrix>) -> Result<Self> {
        Ok(BathModel::Tabulated(Tabulated::new(dt, samples)?))
    }

    pub fn channels(&self) -> usize {
        match self {
            BathModel::WhiteNoise(b) => b.c.nrows(),
            BathModel::ExponentialOU(b) => b.c.nrows(),
            BathModel::ThermalLorentz(b) => b.gamma0.len(),
            BathModel::Tabulated(b) => b.n,
        }
    }

    pub fn temperature(&self) -> Option<f64> {
        match self {
            BathModel::ThermalLorentz(b) => Some(b.temperature),
            _ => None,
        }
    }

    /// Multiplies the correlation by `factor` (coupling-squared scaling).
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor >= 0.0 && factor.is_finite()) {
            return Err(Error::invalid(format!("bath scale must be >= 0, got {factor}")));
        }
        let f = c(factor, 0.0);
        Ok(match self {
            BathModel::WhiteNoise(b) => BathModel::WhiteNoise(WhiteNoise { c: &b.c * f }),
            BathModel::ExponentialOU(b) => BathModel::ExponentialOU(ExponentialOU {
                c: &b.c * f,
                lambda: b.lambda,
            }),
            BathModel::ThermalLorentz(b) => BathModel::ThermalLorentz(ThermalLorentz {
                gamma0: b.gamma0.iter().map(|g| g * factor).collect(),
                ..b.clone()
            }),
            BathModel::Tabulated(b) => BathModel::Tabulated(Tabulated::new(
                b.dt,
                b.samples.iter().map(|m| m * f).collect(),
            )?),
        })
    }

    /// `alpha(t)`; white noise is only defined away from `t = 0`.
    pub fn alpha_time(&self, t: f64) -> Result<ChannelMatrix> {
        let n = self.channels();
        match self {
            BathModel::WhiteNoise(_) => {
                if t == 0.0 {
                    Err(Error::invalid("white-noise correlation is a delta function at t = 0"))
                } else {
                    Ok(DMatrix::zeros(n, n))
                }
            }
            BathModel::ExponentialOU(b) => Ok(&b.c * c((-b.lambda * t.abs()).exp(), 0.0)),
            BathModel::ThermalLorentz(b) => {
                let v = b.unit_time(t)?;
                Ok(b.diag(|| v))
            }
            BathModel::Tabulated(b) => b.alpha_time(t),
        }
    }

    /// `alpha_tilde(w)`, Hermitian positive semidefinite.
    pub fn alpha_spectrum(&self, w: f64) -> Result<ChannelMatrix> {
        match self {
            BathModel::WhiteNoise(b) => Ok(b.c.clone()),
            BathModel::ExponentialOU(b) => {
                Ok(&b.c * c(2.0 * b.lambda / (b.lambda * b.lambda + w * w), 0.0))
            }
            BathModel::ThermalLorentz(b) => {
                let v = b.unit_spectrum(w);
                Ok(b.diag(|| c(v, 0.0)))
            }
            BathModel::Tabulated(b) => {
                let a = b.laplace(c(0.0, w))?;
                Ok(&a + a.adjoint())
            }
        }
    }

    /// `alpha_hat(s)`; on the imaginary axis this is the limit from `Re s > 0`.
    pub fn laplace_alpha(&self, s: C64) -> Result<ChannelMatrix> {
        match self {
            BathModel::WhiteNoise(b) => Ok(&b.c * c(0.5, 0.0)),
            BathModel::ExponentialOU(b) => Ok(&b.c / (s + b.lambda)),
            BathModel::ThermalLorentz(b) => {
                if b.temperature == 0.0 && s.re < 0.0 {
                    return Err(Error::invalid(
                        "zero-temperature Laplace transform has a branch cut; need Re s >= 0",
                    ));
                }
                let v = b.unit_laplace(s);
                Ok(b.diag(|| v))
            }
            BathModel::Tabulated(b) => b.laplace(s),
        }
    }

    /// Stationary second-order coefficient `A(w) = alpha_hat(i w + 0)`.
    pub fn coefficient_stationary(&self, w: f64) -> Result<ChannelMatrix> {
        self.laplace_alpha(c(0.0, w))
    }

    /// Finite-time coefficient `A(t; w) = int_0^t alpha(tau) exp(-i w tau) dtau`.
    pub fn coefficient_full(&self, t: f64, w: f64) -> Result<ChannelMatrix> {
        let n = self.channels();
        if t < 0.0 {
            return Err(Error::invalid(format!("coefficient time must be >= 0, got {t}")));
        }
        match self {
            BathModel::WhiteNoise(b) => Ok(if t > 0.0 {
                &b.c * c(0.5, 0.0)
            } else {
                DMatrix::zeros(n, n)
            }),
            BathModel::ExponentialOU(b) => {
                let z = c(b.lambda, w);
                Ok(&b.c * ((1.0 - (-z * t).exp()) / z))
            }
            BathModel::ThermalLorentz(b) => {
                let v = b.unit_full(t, w)?;
                Ok(b.diag(|| v))
            }
            BathModel::Tabulated(b) => b.full(t, w),
        }
    }

    /// `gamma(0) = -int_0^inf Im alpha(tau) dtau`, the Hamiltonian renormalization strength.
    pub fn gamma_zero(&self) -> Result<DMatrix<f64>> {
        let a = match self {
            BathModel::Tabulated(b) => {
                if b.decay <= 0.0 {
                    return Err(Error::invalid(
                        "gamma(0) diverges: tabulated correlation has no decaying tail (needs a cutoff)",
                    ));
                }
                b.laplace(c(0.0, 0.0))?
            }
            _ => self.laplace_alpha(c(0.0, 0.0))?,
        };
        Ok(a.map(|z| -z.im))
    }

    /// Noise spectrum `nu_tilde(w)` (Fourier transform of `Re alpha`).
    pub fn noise_spectrum(&self, w: f64) -> Result<ChannelMatrix> {
        match self {
            BathModel::ThermalLorentz(b) => {
                let v = b.unit_noise(w);
                Ok(b.diag(|| c(v, 0.0)))
            }
            _ => {
                let p = self.alpha_spectrum(w)?;
                let m = self.alpha_spectrum(-w)?;
                Ok((p + m.map(|z| z.conj())) * c(0.5, 0.0))
            }
        }
    }

    /// Damping spectrum `gamma_tilde(w)`, with `mu_tilde = i w gamma_tilde`.
    pub fn damping_spectrum(&self, w: f64) -> Result<ChannelMatrix> {
        match self {
            BathModel::ThermalLorentz(b) => {
                let v = b.unit_damping(w);
                Ok(b.diag(|| c(v, 0.0)))
            }
            _ => {
                if w == 0.0 {
                    return Err(Error::invalid("damping spectrum of this model is only evaluated at w != 0"));
                }
                let p = self.alpha_spectrum(w)?;
                let m = self.alpha_spectrum(-w)?;
                Ok((m.map(|z| z.conj()) - p) * c(0.5 / w, 0.0))
            }
        }
    }

    /// Fluctuation-dissipation kernel `kappa(w)` with `nu = kappa gamma` (scalar, thermal only).
    pub fn fdr_kernel(&self, w: f64) -> Result<f64> {
        match self {
            BathModel::ThermalLorentz(b) => {
                if b.gamma0.iter().all(|g| *g == 0.0) {
                    return Err(Error::invalid("zero damping: fluctuation-dissipation kernel undefined"));
                }
                Ok(fdr_thermal(w, b.temperature))
            }
            _ => Err(Error::invalid(
                "fluctuation-dissipation kernel needs nonzero damping with a thermal relation (damping kernel is zero or not thermal)",
            )),
        }
    }

    /// `max_w` relative KMS residual `|alpha(w) - conj(alpha(-w)) e^{-w/T}|` on the grid.
    ///
    /// At `T = 0` the zero-temperature form `alpha(w>0) = 0`, `alpha(w<0) = 2|w| gamma(w)` is checked.
    /// Points where both sides fall below `f64::MIN_POSITIVE` after the Boltzmann factor are skipped.
    pub fn kms_residual(&self, grid: &[f64]) -> Result<f64> {
        let t = self
            .temperature()
            .ok_or_else(|| Error::invalid("KMS check needs a thermal bath"))?;
        let vals: Result<Vec<f64>> = grid
            .par_iter()
            .map(|&w| {
                let a = self.alpha_spectrum(w)?;
                if t == 0.0 {
                    let g = self.damping_spectrum(w)?;
                    let want = if w < 0.0 { g * c(-2.0 * w, 0.0) } else { DMatrix::zeros(a.nrows(), a.nrows()) };
                    let scale = max_abs(&want).max(max_abs(&a)).max(1e-300);
                    return Ok(max_abs(&(a - want)) / scale);
                }
                let b = self.alpha_spectrum(-w)?.map(|z| z.conj());
                // multiply through by the decaying exponential to avoid overflow
                let (l, r) = if w >= 0.0 {
                    (a, b * c((-w / t).exp(), 0.0))
                } else {
                    (a * c((w / t).exp(), 0.0), b)
                };
                let scale = max_abs(&l).max(max_abs(&r));
                if scale < f64::MIN_POSITIVE {
                    // both sides flushed below the normal range: nothing left to compare
                    return Ok(0.0);
                }
                Ok(max_abs(&(l - r)) / scale)
            })
            .collect();
        Ok(vals?.into_iter().fold(0.0, f64::max))
    }

    /// Checks `nu_tilde(w) >= +- w gamma_tilde(w)` as matrix inequalities on the grid.
    pub fn fdi_check(&self, grid: &[f64]) -> Result<FdiReport> {
        let vals: Result<Vec<(f64, f64)>> = grid
            .par_iter()
            .map(|&w| {
                let nu = self.noise_spectrum(w)?;
                let g = if w == 0.0 {
                    DMatrix::zeros(nu.nrows(), nu.nrows())
                } else {
                    self.damping_spectrum(w)?
                };
                let wg = g * c(w, 0.0);
                let lo = hermitian_eigenvalues(&(&nu - &wg))[0];
                let hi = hermitian_eigenvalues(&(&nu + &wg))[0];
                Ok((lo.min(hi), w))
            })
            .collect();
        let vals = vals?;
        let (min_eigenvalue, worst_frequency) = vals
            .into_iter()
            .fold((f64::INFINITY, 0.0), |acc, v| if v.0 < acc.0 { v } else { acc });
        Ok(FdiReport {
            min_eigenvalue,
            worst_frequency,
        })
    }

    /// Multivariate noise kernel from a scalar fluctuation-dissipation kernel `kappa` and damping
    /// `gamma`: `nu = (kappa gamma + gamma kappa) / 2`.
    pub fn fdr_noise(kappa: &ChannelMatrix, gamma: &ChannelMatrix) -> ChannelMatrix {
        (kappa * gamma + gamma * kappa) * c(0.5, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thermal(t: f64) -> BathModel {
        BathModel::thermal(vec![0.1], 5.0, t).unwrap()
    }

    #[test]
    fn spectrum_limits() {
        let b = thermal(0.7);
        let a0 = b.alpha_spectrum(0.0).unwrap()[(0, 0)].re;
        assert!((a0 - 2.0 * 0.1 * 0.7).abs() < 1e-14);
        let an = b.alpha_spectrum(1e-9).unwrap()[(0, 0)].re;
        assert!((an - a0).abs() < 1e-9);
        let z = thermal(0.0);
        assert_eq!(z.alpha_spectrum(1.3).unwrap()[(0, 0)].re, 0.0);
        let g = 0.1 / (1.0 + (1.3f64 / 5.0).powi(2));
        assert!((z.alpha_spectrum(-1.3).unwrap()[(0, 0)].re - 2.0 * 1.3 * g).abs() < 1e-14);
    }

    #[test]
    fn damping_kernel_value_at_zero() {
        let b = thermal(0.4);
        let g0 = b.gamma_zero().unwrap()[(0, 0)];
        assert!((g0 - 0.1 * 5.0 / 2.0).abs() < 1e-12, "{g0}");
        let z = thermal(0.0);
        assert!((z.gamma_zero().unwrap()[(0, 0)] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn stationary_hermitian_part_is_half_spectrum() {
        for &t in &[0.0, 0.05, 0.7, 3.0] {
            let b = thermal(t);
            for &w in &[-7.0, -1.0, -0.01, 0.0, 0.3, 2.0, 9.0] {
                let a = b.coefficient_stationary(w).unwrap()[(0, 0)];
                let want = 0.5 * b.alpha_spectrum(w).unwrap()[(0, 0)].re;
                assert!((a.re - want).abs() < 1e-12 * (1.0 + want.abs()), "T={t} w={w}: {} vs {want}", a.re);
            }
        }
    }

    #[test]
    fn full_coefficient_approaches_stationary() {
        let b = thermal(0.5);
        let stat = b.coefficient_stationary(1.1).unwrap()[(0, 0)];
        let late = b.coefficient_full(40.0, 1.1).unwrap()[(0, 0)];
        assert!((stat - late).norm() < 1e-12);
        assert_eq!(b.coefficient_full(0.0, 1.1).unwrap()[(0, 0)], C64::new(0.0, 0.0));
    }

    #[test]
    fn full_coefficient_matches_quadrature_of_alpha() {
        let b = thermal(0.5);
        let BathModel::ThermalLorentz(tl) = &b else { unreachable!() };
        for &(t, w) in &[(0.05, 0.7), (0.8, -1.3), (3.0, 2.0)] {
            let want = integrate(
                |tau| if tau <= 0.0 { C64::new(0.0, 0.0) } else { tl.unit_time(tau).unwrap() * c(0.0, -w * tau).exp() * 0.1 },
                0.0,
                t,
                QuadOptions::with_rel(1e-12),
            )
            .unwrap();
            let got = b.coefficient_full(t, w).unwrap()[(0, 0)];
            assert!((got - want).norm() < 1e-9 * want.norm().max(1e-3), "t={t} w={w}: {got} vs {want}");
        }
    }

    #[test]
    fn ou_closed_forms() {
        let b = BathModel::ou(DMatrix::from_element(1, 1, c(0.3, 0.0)), 2.0).unwrap();
        let a = b.laplace_alpha(c(0.5, 1.0)).unwrap()[(0, 0)];
        assert!((a - c(0.3, 0.0) / c(2.5, 1.0)).norm() < 1e-15);
        assert!(b.fdr_kernel(1.0).is_err());
        assert!(BathModel::ou(DMatrix::from_element(1, 1, c(-0.3, 0.0)), 2.0).is_err());
    }

    #[test]
    fn tabulated_reproduces_ou() {
        let lam = 1.5;
        let dt = 0.01;
        let samples: Vec<_> = (0..=3000)
            .map(|k| DMatrix::from_element(1, 1, c((-lam * k as f64 * dt).exp(), 0.0)))
            .collect();
        let tab = BathModel::tabulated(dt, samples).unwrap();
        let ou = BathModel::ou(DMatrix::from_element(1, 1, c(1.0, 0.0)), lam).unwrap();
        for &w in &[0.0, 0.7, 3.0] {
            let a = tab.coefficient_stationary(w).unwrap()[(0, 0)];
            let b = ou.coefficient_stationary(w).unwrap()[(0, 0)];
            assert!((a - b).norm() < 1e-8, "w={w}: {a} vs {b}");
            let a = tab.coefficient_full(2.345, w).unwrap()[(0, 0)];
            let b = ou.coefficient_full(2.345, w).unwrap()[(0, 0)];
            assert!((a - b).norm() < 1e-9);
        }
        assert!(tab.alpha_time(31.0).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(BathModel::thermal(vec![-1.0], 5.0, 1.0).is_err());
        assert!(BathModel::thermal(vec![1.0], 0.0, 1.0).is_err());
        assert!(BathModel::thermal(vec![1.0], 2.0 * PI, 1.0).is_err());
    }
}
