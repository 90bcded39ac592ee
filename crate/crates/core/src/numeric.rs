//! Small numerical helpers: Gauss-Legendre rules, deterministic pairwise
//! summation, normal tail probabilities and Fresnel integrals.

use num_complex::Complex64;
use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        if n == 1 {
            x[0] = 0.0;
            w[0] = 2.0;
            return (x, w);
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Composite Gauss-Legendre rule on [a, b] with `panels` equal panels of
/// `order` nodes each.
pub fn composite_gl(a: f64, b: f64, panels: usize, order: usize) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (xi, wi) in x.iter().zip(&w) {
            out.push((lo + 0.5 * h * (xi + 1.0), 0.5 * h * wi));
        }
    }
    out
}

/// Pairwise (tree) summation; result depends only on the input order.
pub fn pairwise_sum(v: &[Complex64]) -> Complex64 {
    if v.len() <= 16 {
        return v.iter().fold(Complex64::new(0.0, 0.0), |a, b| a + b);
    }
    let mid = v.len() / 2;
    pairwise_sum(&v[..mid]) + pairwise_sum(&v[mid..])
}

pub fn pairwise_sum_real(v: &[f64]) -> f64 {
    if v.len() <= 16 {
        return v.iter().sum();
    }
    let mid = v.len() / 2;
    pairwise_sum_real(&v[..mid]) + pairwise_sum_real(&v[mid..])
}

/// Standard normal upper tail Q(x).
pub fn normal_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Fresnel integrals C(d) = int_0^d cos(t^2) dt and S(d) = int_0^d sin(t^2) dt.
pub fn fresnel_cs(d: f64) -> (f64, f64) {
    if !d.is_finite() {
        let lim = 0.5 * (PI / 2.0).sqrt();
        return if d > 0.0 { (lim, lim) } else { (-lim, -lim) };
    }
    let s = d.signum();
    let a = d.abs();
    let (c, sn) = if a < 1.5 {
        fresnel_series(a)
    } else if a < 6.0 {
        fresnel_quadrature(a)
    } else {
        fresnel_asymptotic(a)
    };
    (s * c, s * sn)
}

fn fresnel_series(a: f64) -> (f64, f64) {
    // C = sum (-1)^n a^(4n+1) / ((2n)! (4n+1)), S = sum (-1)^n a^(4n+3) / ((2n+1)! (4n+3))
    let a4 = a.powi(4);
    let (mut c, mut s) = (0.0, 0.0);
    let mut tc = a; // a^(4n+1)/(2n)!
    let mut ts = a.powi(3); // a^(4n+3)/(2n+1)!
    for n in 0..40 {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        c += sign * tc / (4 * n + 1) as f64;
        s += sign * ts / (4 * n + 3) as f64;
        tc *= a4 / ((2 * n + 1) * (2 * n + 2)) as f64;
        ts *= a4 / ((2 * n + 2) * (2 * n + 3)) as f64;
        if tc.abs() < 1e-18 && ts.abs() < 1e-18 {
            break;
        }
    }
    (c, s)
}

fn fresnel_quadrature(a: f64) -> (f64, f64) {
    // series up to 1.5, then Gauss-Legendre in t on [1.5, a]; the integrand
    // has about a^2/pi oscillations, so use enough panels.
    let (c0, s0) = fresnel_series(1.5);
    let panels = (4.0 * a * a) as usize + 4;
    let (mut c, mut s) = (c0, s0);
    for (t, w) in composite_gl(1.5, a, panels, 12) {
        let t2 = t * t;
        c += w * t2.cos();
        s += w * t2.sin();
    }
    (c, s)
}

fn fresnel_asymptotic(a: f64) -> (f64, f64) {
    // int_a^inf e^{i t^2} dt = (i e^{i a^2} / (2a)) sum_n (2n-1)!! (-i)^n / (2a^2)^n
    let x = 2.0 * a * a;
    let mut sum = Complex64::new(0.0, 0.0);
    let mut term = Complex64::new(1.0, 0.0);
    let mi = Complex64::new(0.0, -1.0);
    let mut prev = f64::INFINITY;
    for n in 0..60 {
        if n > 0 {
            term = term * mi * ((2 * n - 1) as f64 / x);
        }
        let mag = term.norm();
        if mag > prev {
            break;
        }
        sum += term;
        prev = mag;
        if mag < 1e-17 {
            break;
        }
    }
    let tail = Complex64::new(0.0, 1.0) * Complex64::from_polar(1.0, a * a) / (2.0 * a) * sum;
    let lim = 0.5 * (PI / 2.0).sqrt();
    (lim - tail.re, lim - tail.im)
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(errors: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Smallest even integer >= n whose only prime factors are 2, 3 and 5.
pub fn next_fft_len(n: usize) -> usize {
    let mut m = n.max(2);
    loop {
        if m.is_multiple_of(2) {
            let mut r = m;
            for p in [2, 3, 5] {
                while r.is_multiple_of(p) {
                    r /= p;
                }
            }
            if r == 1 {
                return m;
            }
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let n = n + n % 2;
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((v - 2.0 / 15.0).abs() < 1e-14);
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn fresnel_matches_simpson() {
        for &d in &[0.3, 1.0, 1.49, 1.51, 2.5, 4.0, 5.99, 6.01, 8.0, 12.0] {
            let n = (20000.0 * d * d) as usize + 2000;
            let c_ref = simpson(|t| (t * t).cos(), 0.0, d, n);
            let s_ref = simpson(|t| (t * t).sin(), 0.0, d, n);
            let (c, s) = fresnel_cs(d);
            assert!((c - c_ref).abs() < 1e-8, "C({d}) = {c} vs {c_ref}");
            assert!((s - s_ref).abs() < 1e-8, "S({d}) = {s} vs {s_ref}");
        }
    }

    #[test]
    fn fresnel_is_odd_and_bounded() {
        for i in 0..200 {
            let d = i as f64 * 0.1;
            let (c, s) = fresnel_cs(d);
            let (cn, sn) = fresnel_cs(-d);
            assert_eq!(c, -cn);
            assert_eq!(s, -sn);
            assert!(c.abs() <= 1.0 && s.abs() <= 1.0);
        }
        let lim = 0.5 * (PI / 2.0).sqrt();
        let (c, s) = fresnel_cs(200.0);
        assert!((c - lim).abs() < 5e-3 && (s - lim).abs() < 5e-3);
    }

    #[test]
    fn wilson_contains_point_estimate() {
        let (lo, hi) = wilson_interval(5, 1000, 1.96);
        assert!(lo < 0.005 && hi > 0.005);
        let (lo, hi) = wilson_interval(0, 1000, 1.96);
        assert_eq!(lo, 0.0);
        assert!((hi - 0.00383).abs() < 1e-4);
    }

    #[test]
    fn fft_lengths_are_smooth() {
        assert_eq!(next_fft_len(7), 8);
        assert_eq!(next_fft_len(121), 128);
        assert_eq!(next_fft_len(1001), 1024);
        assert_eq!(next_fft_len(14), 16);
    }
}
