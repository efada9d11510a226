//! Special functions needed by the bath models.

use num_complex::Complex64 as C64;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Digamma function for complex arguments away from the non-positive integers.
pub fn digamma(z: C64) -> C64 {
    let mut z = z;
    let mut acc = C64::new(0.0, 0.0);
    while z.re < 12.0 {
        acc -= z.inv();
        z += 1.0;
    }
    let zi = z.inv();
    let z2 = zi * zi;
    // Bernoulli tail of the asymptotic expansion
    let series = z2
        * (-1.0 / 12.0
            + z2 * (1.0 / 120.0
                + z2 * (-1.0 / 252.0
                    + z2 * (1.0 / 240.0
                        + z2 * (-1.0 / 132.0 + z2 * (691.0 / 32760.0 - z2 / 12.0))))));
    acc + z.ln() - zi * 0.5 + series
}

/// `exp(x) * E1(x)` for `x > 0`.
pub fn exp_e1(x: f64) -> f64 {
    assert!(x > 0.0, "exp_e1 requires x > 0");
    if x <= 1.0 {
        // E1 = -gamma - ln x - sum (-x)^k / (k k!)
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..60 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        x.exp() * (-EULER_GAMMA - x.ln() - sum)
    } else {
        // modified Lentz evaluation of the continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0;
        let mut cc = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            cc = b + an / cc;
            let del = cc * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h
    }
}

/// `exp(-x) * Ei(x)` for `x > 0`.
pub fn exp_neg_ei(x: f64) -> f64 {
    assert!(x > 0.0, "exp_neg_ei requires x > 0");
    if x < 40.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..400 {
            term *= x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add < 1e-17 * sum {
                break;
            }
        }
        (-x).exp() * (EULER_GAMMA + x.ln() + sum)
    } else {
        let mut sum = 1.0;
        let mut term = 1.0;
        for k in 1..60 {
            let next = term * k as f64 / x;
            if next > term {
                break;
            }
            term = next;
            sum += term;
            if term < 1e-17 {
                break;
            }
        }
        sum / x
    }
}

/// `coth(x)`, exact sign at `x = +-inf`.
pub fn coth(x: f64) -> f64 {
    if x.abs() > 20.0 {
        x.signum() * (1.0 + 2.0 * (-2.0 * x.abs()).exp())
    } else {
        1.0 / x.tanh()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digamma_reference_values() {
        assert!((digamma(C64::new(1.0, 0.0)).re + EULER_GAMMA).abs() < 1e-14);
        let half = digamma(C64::new(0.5, 0.0)).re;
        assert!((half - (-EULER_GAMMA - 2.0 * 2f64.ln())).abs() < 1e-14);
        // Im psi(1 + i y) = -1/(2y) + (pi/2) coth(pi y)
        let y = 0.7;
        let v = digamma(C64::new(1.0, y));
        let want = -1.0 / (2.0 * y) + std::f64::consts::PI / 2.0 * coth(std::f64::consts::PI * y);
        assert!((v.im - want).abs() < 1e-13);
        // recurrence at a negative real part
        let z = C64::new(-3.3, 0.4);
        let r = digamma(z + 1.0) - digamma(z) - z.inv();
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn exponential_integrals() {
        // E1(1) = 0.219383934395520; Ei(1) = 1.895117816355937
        assert!((exp_e1(1.0) * (-1f64).exp() - 0.219_383_934_395_520_3).abs() < 1e-14);
        assert!((exp_neg_ei(1.0) * 1f64.exp() - 1.895_117_816_355_937).abs() < 1e-13);
        assert!((exp_e1(0.1) * (-0.1f64).exp() - 1.822_923_958_419_39).abs() < 1e-13);
        // continuity across branch switches
        assert!((exp_e1(1.0 - 1e-12) - exp_e1(1.0 + 1e-12)).abs() < 1e-11);
        assert!((exp_neg_ei(39.9) - 0.025_724_918_815_090_745).abs() < 1e-15);
        assert!((exp_neg_ei(45.0) - 0.022_739_607_254_528_28).abs() < 1e-15);
        assert!((exp_e1(5.0) - 0.170_422_176_284_732_2).abs() < 1e-15);
    }
}
