//! Adaptive quadrature and piecewise Chebyshev interpolation for complex vector-valued functions.

use std::collections::BinaryHeap;

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Clone, Copy, Debug)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 1e-14,
            rel_tol: 1e-12,
            max_intervals: 20_000,
        }
    }
}

impl QuadOptions {
    pub fn with_rel(rel_tol: f64) -> Self {
        QuadOptions {
            rel_tol,
            ..Default::default()
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: Vec<C64>,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: FnMut(f64) -> Vec<C64>>(f: &mut F, a: f64, b: f64, n: usize) -> (Vec<C64>, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut k = vec![C64::new(0.0, 0.0); n];
    let mut g = vec![C64::new(0.0, 0.0); n];
    let fc = f(mid);
    for i in 0..n {
        k[i] += fc[i] * WGK[7];
        g[i] += fc[i] * WG[3];
    }
    for j in 0..7 {
        let x = half * XGK[j];
        let f1 = f(mid - x);
        let f2 = f(mid + x);
        for i in 0..n {
            let s = f1[i] + f2[i];
            k[i] += s * WGK[j];
            if j % 2 == 1 {
                g[i] += s * WG[j / 2];
            }
        }
    }
    let mut err = 0.0f64;
    for i in 0..n {
        k[i] *= half;
        g[i] *= half;
        err = err.max((k[i] - g[i]).norm());
    }
    (k, err)
}

/// Globally adaptive Gauss-Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// The error criterion is the max-norm over components.
pub fn integrate_vec<F>(mut f: F, a: f64, b: f64, n: usize, opts: QuadOptions) -> Result<Vec<C64>>
where
    F: FnMut(f64) -> Vec<C64>,
{
    if a == b {
        return Ok(vec![C64::new(0.0, 0.0); n]);
    }
    let (v, e) = gk15(&mut f, a, b, n);
    let mut total = v.clone();
    let mut total_err = e;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value: v, error: e });
    loop {
        let scale = total.iter().fold(0.0f64, |m, z| m.max(z.norm()));
        if total_err <= opts.abs_tol.max(opts.rel_tol * scale) {
            return Ok(total);
        }
        if heap.len() >= opts.max_intervals {
            return Err(Error::NoConvergence(format!(
                "adaptive quadrature on [{a}, {b}]: error {total_err:.3e} after {} intervals",
                heap.len()
            )));
        }
        let seg = heap.pop().expect("non-empty");
        let m = 0.5 * (seg.a + seg.b);
        if !(m > seg.a && m < seg.b) {
            // cannot refine further in floating point; accept what we have
            total_err -= seg.error;
            heap.push(Segment { error: 0.0, ..seg });
            if heap.iter().all(|s| s.error == 0.0) {
                return Ok(total);
            }
            continue;
        }
        let (v1, e1) = gk15(&mut f, seg.a, m, n);
        let (v2, e2) = gk15(&mut f, m, seg.b, n);
        for i in 0..n {
            total[i] += v1[i] + v2[i] - seg.value[i];
        }
        total_err += e1 + e2 - seg.error;
        heap.push(Segment { a: seg.a, b: m, value: v1, error: e1 });
        heap.push(Segment { a: m, b: seg.b, value: v2, error: e2 });
        if total_err < 0.0 {
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
}

/// Scalar version of [`integrate_vec`].
pub fn integrate<F>(mut f: F, a: f64, b: f64, opts: QuadOptions) -> Result<C64>
where
    F: FnMut(f64) -> C64,
{
    Ok(integrate_vec(|x| vec![f(x)], a, b, 1, opts)?[0])
}

/// Integral over `[a, inf)` through the map `x = a + u / (1 - u)`.
pub fn integrate_to_infinity_vec<F>(mut f: F, a: f64, n: usize, opts: QuadOptions) -> Result<Vec<C64>>
where
    F: FnMut(f64) -> Vec<C64>,
{
    integrate_vec(
        |u| {
            if u >= 1.0 {
                return vec![C64::new(0.0, 0.0); n];
            }
            let w = 1.0 / ((1.0 - u) * (1.0 - u));
            let mut v = f(a + u / (1.0 - u));
            for z in v.iter_mut() {
                *z *= w;
            }
            v
        },
        0.0,
        1.0,
        n,
        opts,
    )
}

pub fn integrate_to_infinity<F>(mut f: F, a: f64, opts: QuadOptions) -> Result<C64>
where
    F: FnMut(f64) -> C64,
{
    Ok(integrate_to_infinity_vec(|x| vec![f(x)], a, 1, opts)?[0])
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = 0.0;
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Piecewise Chebyshev interpolant of a vector-valued function, refined by bisection
/// until the trailing coefficients fall below the tolerance.
#[derive(Clone, Debug)]
pub struct ChebCache {
    breaks: Vec<f64>,
    panels: Vec<Vec<Vec<C64>>>,
    width: usize,
}

const CHEB_N: usize = 24;

fn cheb_coeffs<F: FnMut(f64) -> Vec<C64>>(f: &mut F, a: f64, b: f64, n: usize) -> Vec<Vec<C64>> {
    let nodes: Vec<f64> = (0..CHEB_N)
        .map(|k| (std::f64::consts::PI * (k as f64 + 0.5) / CHEB_N as f64).cos())
        .collect();
    let vals: Vec<Vec<C64>> = nodes
        .iter()
        .map(|&x| f(0.5 * (a + b) + 0.5 * (b - a) * x))
        .collect();
    (0..n)
        .map(|comp| {
            (0..CHEB_N)
                .map(|j| {
                    let s: C64 = (0..CHEB_N)
                        .map(|k| {
                            vals[k][comp]
                                * (std::f64::consts::PI * j as f64 * (k as f64 + 0.5) / CHEB_N as f64).cos()
                        })
                        .sum();
                    s * (if j == 0 { 1.0 } else { 2.0 } / CHEB_N as f64)
                })
                .collect()
        })
        .collect()
}

impl ChebCache {
    /// `scale` sets the absolute floor: panels are accepted once the tail coefficients are below
    /// `tol * max(scale, component magnitude)`.
    pub fn build<F>(mut f: F, a: f64, b: f64, width: usize, tol: f64, scale: f64) -> Result<Self>
    where
        F: FnMut(f64) -> Vec<C64>,
    {
        if !(b > a) {
            return Err(Error::invalid(format!("empty interpolation interval [{a}, {b}]")));
        }
        let mut stack = vec![(a, b, 0usize)];
        let mut done: Vec<(f64, f64, Vec<Vec<C64>>)> = Vec::new();
        while let Some((l, r, depth)) = stack.pop() {
            let coeffs = cheb_coeffs(&mut f, l, r, width);
            let ok = coeffs.iter().all(|cs| {
                let mag = cs.iter().fold(0.0f64, |m, z| m.max(z.norm())).max(scale);
                cs[CHEB_N - 4..].iter().all(|z| z.norm() <= tol * mag)
            });
            if ok || depth >= 60 || r - l <= 1e-14 * (b - a).max(1.0) {
                done.push((l, r, coeffs));
            } else {
                let m = 0.5 * (l + r);
                stack.push((m, r, depth + 1));
                stack.push((l, m, depth + 1));
            }
            if done.len() > 200_000 {
                return Err(Error::NoConvergence("Chebyshev cache refinement".into()));
            }
        }
        done.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut breaks: Vec<f64> = done.iter().map(|p| p.0).collect();
        breaks.push(b);
        let panels = done.into_iter().map(|p| p.2).collect();
        Ok(ChebCache { breaks, panels, width })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breaks[0], *self.breaks.last().unwrap())
    }

    pub fn panel_count(&self) -> usize {
        self.panels.len()
    }

    pub fn eval(&self, t: f64) -> Vec<C64> {
        let (a, b) = self.domain();
        let t = t.clamp(a, b);
        let idx = match self.breaks.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => i.min(self.panels.len() - 1),
            Err(i) => i.saturating_sub(1).min(self.panels.len() - 1),
        };
        let (l, r) = (self.breaks[idx], self.breaks[idx + 1]);
        let x = (2.0 * t - l - r) / (r - l);
        self.panels[idx]
            .iter()
            .map(|cs| {
                // Clenshaw recurrence
                let mut b1 = C64::new(0.0, 0.0);
                let mut b2 = C64::new(0.0, 0.0);
                for cj in cs.iter().skip(1).rev() {
                    let b0 = cj + b1 * (2.0 * x) - b2;
                    b2 = b1;
                    b1 = b0;
                }
                cs[0] + b1 * x - b2
            })
            .collect::<Vec<_>>()
            .into_iter()
            .take(self.width)
            .collect()
    }
}
