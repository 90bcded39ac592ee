//! Background medium, point scatterers and Green's functions.
//!
//! The background Green's function is
//! `G0(w, x, y) = exp(i k |x - y|) / (4 pi |x - y|)`, `k = w / c0`, for the
//! convention `u(w) = int u(t) exp(i w t) dt`. Inclusions enter through the
//! first-order (Born) sum
//! `G = G0(x, y) + sum_j rho_j G0(x, z_j) G0(y, z_j)
//!        + sum_j grad G0(x, z_j)^T M_j grad G0(y, z_j)`.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl fmt::Display for Vec3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

pub type CVec3 = [Complex64; 3];

/// Homogeneous background characterised by its wave speed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub c0: f64,
}

impl Background {
    pub fn new(c0: f64) -> Result<Self> {
        if !(c0 > 0.0 && c0.is_finite()) {
            return Err(Error::domain(format!("wave speed must be positive, got {c0}")));
        }
        Ok(Background { c0 })
    }

    pub fn wavenumber(&self, omega: f64) -> f64 {
        omega / self.c0
    }

    pub fn wavelength(&self, omega: f64) -> f64 {
        2.0 * PI * self.c0 / omega
    }
}

/// Symmetric complex 3x3 tensor stored by its upper triangle
/// `[xx, xy, xz, yy, yz, zz]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymTensor([Complex64; 6]);

impl SymTensor {
    pub fn from_upper(u: [Complex64; 6]) -> Self {
        SymTensor(u)
    }

    pub fn isotropic(m: Complex64) -> Self {
        let z = Complex64::new(0.0, 0.0);
        SymTensor([m, z, z, m, z, m])
    }

    /// Accepts a full matrix; rejects it unless `m[i][j] == m[j][i]` up to a
    /// relative 1e-12.
    pub fn try_from_matrix(m: [[Complex64; 3]; 3]) -> Result<Self> {
        let scale = m.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
        for i in 0..3 {
            for j in i + 1..3 {
                if (m[i][j] - m[j][i]).norm() > 1e-12 * scale {
                    return Err(Error::domain(format!(
                        "polarization tensor is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        Ok(SymTensor([m[0][0], m[0][1], m[0][2], m[1][1], m[1][2], m[2][2]]))
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        let idx = match (a, b) {
            (0, 0) => 0,
            (0, 1) => 1,
            (0, 2) => 2,
            (1, 1) => 3,
            (1, 2) => 4,
            _ => 5,
        };
        self.0[idx]
    }

    /// Entrywise imaginary part, as a tensor.
    pub fn imag(&self) -> SymTensor {
        let mut u = self.0;
        for v in u.iter_mut() {
            *v = Complex64::new(v.im, 0.0);
        }
        SymTensor(u)
    }

    /// `a^T M b` (no conjugation).
    pub fn bilinear(&self, a: &CVec3, b: &CVec3) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                s += a[i] * self.get(i, j) * b[j];
            }
        }
        s
    }
}

type DispersiveTensor = Arc<dyn Fn(f64) -> SymTensor + Send + Sync>;

/// Dipole polarization tensor, constant or frequency dependent.
#[derive(Clone)]
pub enum Polarization {
    Constant(SymTensor),
    Dispersive(DispersiveTensor),
}

impl Polarization {
    pub fn at(&self, omega: f64) -> SymTensor {
        match self {
            Polarization::Constant(m) => *m,
            Polarization::Dispersive(f) => f(omega),
        }
    }
}

impl fmt::Debug for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Polarization::Constant(m) => write!(f, "Constant({m:?})"),
            Polarization::Dispersive(_) => write!(f, "Dispersive(..)"),
        }
    }
}

/// Gas bubble in a liquid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bubble {
    pub radius: f64,
    /// Sound speed inside the bubble.
    pub c1: f64,
    /// Density contrast (inside / outside).
    pub delta: f64,
}

/// Dielectric particle with a Drude permittivity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drude {
    pub omega_p: f64,
    /// Relaxation time; `f64::INFINITY` gives the lossless limit.
    pub tau: f64,
    /// Particle volume |D|.
    pub volume: f64,
}

/// Reflectivity switched between `re_rho` and `re_rho + i rho1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tunable {
    pub re_rho: f64,
    pub rho1: f64,
    pub on: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReflectivityModel {
    Bubble(Bubble),
    Drude(Drude),
    Tunable(Tunable),
    /// Frequency independent value, mostly for tests.
    Constant {
        re: f64,
        im: f64,
    },
}

impl ReflectivityModel {
    pub fn constant(rho: Complex64) -> Self {
        ReflectivityModel::Constant { re: rho.re, im: rho.im }
    }

    /// Copy with a tunable reflectivity switched to `on`; other models
    /// are returned unchanged.
    pub fn with_level(&self, on: bool) -> Self {
        match *self {
            ReflectivityModel::Tunable(t) => ReflectivityModel::Tunable(Tunable { on, ..t }),
            other => other,
        }
    }
}

/// Point inclusion.
#[derive(Clone, Debug)]
pub struct Inclusion {
    pub position: Vec3,
    pub reflectivity: ReflectivityModel,
    pub polarization: Option<Polarization>,
}

impl Inclusion {
    pub fn new(position: Vec3, reflectivity: ReflectivityModel) -> Self {
        Inclusion {
            position,
            reflectivity,
            polarization: None,
        }
    }
}

/// Planar square grid of `n x n` identical inclusions.
#[derive(Clone, Debug)]
pub struct Metasurface {
    pub center: Vec3,
    pub normal: Vec3,
    pub side: f64,
    pub n: usize,
    pub reflectivity: ReflectivityModel,
    pub polarization: Option<Polarization>,
}

impl Metasurface {
    pub fn new(center: Vec3, normal: Vec3, side: f64, n: usize, reflectivity: ReflectivityModel) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("metasurface needs at least one inclusion"));
        }
        if !(side > 0.0) || !center.is_finite() || !(normal.norm() > 0.0) {
            return Err(Error::domain("metasurface geometry is degenerate"));
        }
        Ok(Metasurface {
            center,
            normal: normal.normalized(),
            side,
            n,
            reflectivity,
            polarization: None,
        })
    }

    pub fn count(&self) -> usize {
        self.n * self.n
    }

    pub fn spacing(&self) -> f64 {
        self.side / self.n as f64
    }

    /// Orthonormal in-plane axes (e1, e2).
    pub fn axes(&self) -> (Vec3, Vec3) {
        let nrm = self.normal;
        let trial = if nrm.x.abs() < 0.9 {
            Vec3::new(1.0, 0.0, 0.0)
        } else {
            Vec3::new(0.0, 1.0, 0.0)
        };
        let e1 = (trial - nrm * trial.dot(nrm)).normalized();
        let e2 = nrm.cross(e1);
        (e1, e2)
    }

    /// Cell-centred grid positions, row-major.
    pub fn positions(&self) -> Vec<Vec3> {
        let (e1, e2) = self.axes();
        let h = self.spacing();
        let mut out = Vec::with_capacity(self.count());
        for i in 0..self.n {
            for j in 0..self.n {
                let a = (i as f64 + 0.5) * h - 0.5 * self.side;
                let b = (j as f64 + 0.5) * h - 0.5 * self.side;
                out.push(self.center + e1 * a + e2 * b);
            }
        }
        out
    }

    pub fn inclusions(&self, on: bool) -> Vec<Inclusion> {
        let refl = self.reflectivity.with_level(on);
        self.positions()
            .into_iter()
            .map(|p| Inclusion {
                position: p,
                reflectivity: refl,
                polarization: self.polarization.clone(),
            })
            .collect()
    }
}

pub fn green0(bg: &Background, omega: f64, x: Vec3, y: Vec3) -> Result<Complex64> {
    let r = (x - y).norm();
    if r == 0.0 {
        return Err(Error::domain("green0 evaluated at coincident points"));
    }
    Ok(green0_r(bg.wavenumber(omega), r))
}

#[inline]
pub(crate) fn green0_r(k: f64, r: f64) -> Complex64 {
    Complex64::from_polar(1.0 / (4.0 * PI * r), k * r)
}

/// Limit of `Im G0(x, y)` as `y -> x`.
pub fn green0_im_coincident(bg: &Background, omega: f64) -> f64 {
    omega / (4.0 * PI * bg.c0)
}

/// Gradient of `G0(x, z)` with respect to `z`.
pub fn grad_green0(bg: &Background, omega: f64, x: Vec3, z: Vec3) -> Result<CVec3> {
    let d = z - x;
    let r = d.norm();
    if r == 0.0 {
        return Err(Error::domain("grad_green0 evaluated at coincident points"));
    }
    let k = bg.wavenumber(omega);
    let g = green0_r(k, r);
    let f = g * Complex64::new(-1.0 / r, k) / r;
    Ok([f * d.x, f * d.y, f * d.z])
}

/// Taylor cut-over for `1 - a cot a`.
const SMALL_ALPHA: f64 = 1e-3;

fn one_minus_a_cot_a(a: f64) -> f64 {
    if a < SMALL_ALPHA {
        let a2 = a * a;
        a2 / 3.0 + a2 * a2 / 45.0
    } else {
        1.0 - a * a.cos() / a.sin()
    }
}

fn bubble_rho(b: &Bubble, bg: &Background, omega: f64) -> Result<Complex64> {
    let a = omega * b.radius / b.c1;
    let num = one_minus_a_cot_a(a);
    let den = Complex64::new(-num + b.delta, -b.delta * (b.c1 / bg.c0) * a);
    if !num.is_finite() || !den.re.is_finite() || den.norm() == 0.0 {
        return Err(Error::Pole { alpha1: a });
    }
    Ok(4.0 * PI * b.radius * num / den)
}

/// Reflectivity at angular frequency `omega`.
pub fn rho_of(model: &ReflectivityModel, bg: &Background, omega: f64) -> Result<Complex64> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(Error::domain(format!("frequency must be positive, got {omega}")));
    }
    match model {
        ReflectivityModel::Bubble(b) => {
            if !(b.radius > 0.0 && b.c1 > 0.0 && b.delta > 0.0 && b.delta < 1.0) {
                return Err(Error::domain("bubble needs radius, c1 > 0 and 0 < delta < 1"));
            }
            bubble_rho(b, bg, omega)
        }
        ReflectivityModel::Drude(d) => {
            if !(d.omega_p > 0.0 && d.tau > 0.0 && d.volume > 0.0) {
                return Err(Error::domain("Drude model needs omega_p, tau, volume > 0"));
            }
            let damping = if d.tau.is_infinite() { 0.0 } else { omega / d.tau };
            let chi = -d.omega_p * d.omega_p / Complex64::new(omega * omega, damping);
            Ok(chi * (omega * omega / (bg.c0 * bg.c0)) * d.volume)
        }
        ReflectivityModel::Tunable(t) => Ok(Complex64::new(t.re_rho, if t.on { t.rho1 } else { 0.0 })),
        ReflectivityModel::Constant { re, im } => Ok(Complex64::new(*re, *im)),
    }
}

/// `(sinc a - cos a)`, accurate near zero.
fn sinc_minus_cos(a: f64) -> f64 {
    if a < 0.5 {
        // sum_{n>=1} (-1)^{n+1} 2n a^{2n} / (2n+1)!
        let a2 = a * a;
        let mut term = a2 / 3.0;
        let mut s = 0.0_f64;
        let mut n = 1;
        while term.abs() > 1e-20 * s.abs().max(1e-300) && n < 30 {
            s += term;
            // ratio of consecutive magnitudes: (2n+2)/(2n) * a^2 / ((2n+2)(2n+3))
            term *= -a2 * (2 * n + 2) as f64 / ((2 * n) as f64 * ((2 * n + 2) * (2 * n + 3)) as f64);
            n += 1;
        }
        s
    } else {
        a.sin() / a - a.cos()
    }
}

/// Dimensionless Minnaert root: smallest `a > 0` with `tan a = a / (1 - delta)`.
pub fn minnaert_alpha(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!(
            "density contrast must lie in (0,1), got {delta}"
        )));
    }
    // f(a) = (1 - delta) sinc a - cos a = (sinc a - cos a) - delta sinc a
    let f = |a: f64| {
        let sinc = if a < 1e-8 { 1.0 - a * a / 6.0 } else { a.sin() / a };
        sinc_minus_cos(a) - delta * sinc
    };
    let (mut lo, mut hi) = (0.0_f64, PI / 2.0);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Minnaert resonance frequency of a bubble.
pub fn minnaert_frequency(b: &Bubble) -> Result<f64> {
    if !(b.radius > 0.0 && b.c1 > 0.0) {
        return Err(Error::domain("bubble needs positive radius and c1"));
    }
    Ok(minnaert_alpha(b.delta)? * b.c1 / b.radius)
}

/// Full Green's function with the first-order inclusion corrections.
pub fn green_full(bg: &Background, omega: f64, x: Vec3, y: Vec3, inclusions: &[Inclusion]) -> Result<Complex64> {
    let mut g = green0(bg, omega, x, y)?;
    for inc in inclusions {
        let rho = rho_of(&inc.reflectivity, bg, omega)?;
        let gx = green0(bg, omega, x, inc.position)?;
        let gy = green0(bg, omega, y, inc.position)?;
        g += rho * (gx * gy);
        if let Some(p) = &inc.polarization {
            let m = p.at(omega);
            let dx = grad_green0(bg, omega, x, inc.position)?;
            let dy = grad_green0(bg, omega, y, inc.position)?;
            g += m.bilinear(&dx, &dy);
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bg() -> Background {
        Background::new(1.0).unwrap()
    }

    #[test]
    fn green0_reciprocal_and_rejects_coincident() {
        let b = bg();
        let x = Vec3::new(0.1, -0.3, 2.0);
        let y = Vec3::new(1.7, 0.4, -0.2);
        assert_eq!(green0(&b, 3.0, x, y).unwrap(), green0(&b, 3.0, y, x).unwrap());
        assert!(green0(&b, 3.0, x, x).is_err());
    }

    #[test]
    fn green0_known_value() {
        // |x - y| = 1, k = pi/2: exp(i pi/2) / (4 pi) = i / (4 pi)
        let g = green0(&bg(), PI / 2.0, Vec3::default(), Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert!((g - Complex64::new(0.0, 1.0 / (4.0 * PI))).norm() < 1e-16);
    }

    #[test]
    fn coincident_imaginary_part_is_the_limit() {
        let b = bg();
        let w = 2.0 * PI;
        let x = Vec3::new(0.3, 0.2, 0.1);
        let y = x + Vec3::new(1e-4, 0.0, 0.0);
        let lim = green0_im_coincident(&b, w);
        let v = green0(&b, w, x, y).unwrap().im;
        assert!(((v - lim) / lim).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_central_difference() {
        let b = bg();
        let w = 2.0 * PI;
        let x = Vec3::new(0.0, 0.0, 0.0);
        let z = Vec3::new(0.7, -1.1, 2.3);
        let g = grad_green0(&b, w, x, z).unwrap();
        let h = 1e-5;
        let dirs = [
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        for (i, e) in dirs.iter().enumerate() {
            let fd = (green0(&b, w, x, z + *e * h).unwrap() - green0(&b, w, x, z - *e * h).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).norm() < 1e-8 * g[i].norm().max(1e-3));
        }
        // parallel to z - x
        let d = z - x;
        let cr = Vec3::new((g[1] / d.y - g[2] / d.z).norm(), (g[0] / d.x - g[2] / d.z).norm(), 0.0);
        assert!(cr.norm() < 1e-12);
    }

    fn paper_bubble() -> Bubble {
        Bubble {
            radius: 1e-3,
            c1: 340.0,
            delta: 1.29e3 / 1e6,
        }
    }

    #[test]
    fn bubble_series_continuity() {
        let b = paper_bubble();
        let bgw = Background::new(1482.0).unwrap();
        let w_edge = SMALL_ALPHA * b.c1 / b.radius;
        let lo = rho_of(&ReflectivityModel::Bubble(b), &bgw, w_edge * (1.0 - 1e-9)).unwrap();
        let hi = rho_of(&ReflectivityModel::Bubble(b), &bgw, w_edge * (1.0 + 1e-9)).unwrap();
        assert!((lo - hi).norm() / hi.norm() < 1e-6);
    }

    #[test]
    fn bubble_matches_extended_precision_value() {
        // 50-digit evaluation of the closed form at 1.05 times the Minnaert
        // frequency for air in water: R = 1 mm, c1 = 340, c0 = 1482, delta = 1.29e-3.
        let b = paper_bubble();
        let bgw = Background::new(1482.0).unwrap();
        let wm = minnaert_frequency(&b).unwrap();
        let rho = rho_of(&ReflectivityModel::Bubble(b), &bgw, 1.05 * wm).unwrap();
        let want = Complex64::new(REF_RE, REF_IM);
        assert!((rho - want).norm() / want.norm() < 1e-9, "{rho} vs {want}");
    }

    const REF_RE: f64 = -0.132_304_582_456_018_92;
    const REF_IM: f64 = 0.019_335_123_297_140_479;

    #[test]
    fn minnaert_root_matches_grid_scan() {
        for &delta in &[1e-4, 1.2e-3, 0.05, 0.3, 0.9] {
            let a = minnaert_alpha(delta).unwrap();
            // independent: scan tan a - a/(1-delta) on a fine grid then refine
            let g = |x: f64| x.tan() - x / (1.0 - delta);
            let n = 200_000;
            let mut prev = 1e-9;
            let mut root = None;
            for i in 1..n {
                let x = i as f64 * (PI / 2.0) / n as f64;
                if g(prev) < 0.0 && g(x) >= 0.0 {
                    let (mut l, mut h) = (prev, x);
                    for _ in 0..200 {
                        let m = 0.5 * (l + h);
                        if g(m) < 0.0 {
                            l = m
                        } else {
                            h = m
                        }
                    }
                    root = Some(0.5 * (l + h));
                    break;
                }
                prev = x;
            }
            let r = root.unwrap();
            assert!((a - r).abs() / r < 1e-9, "delta {delta}: {a} vs {r}");
        }
    }

    #[test]
    fn minnaert_reflectivity_is_imaginary_880_radius() {
        let b = paper_bubble();
        let bgw = Background::new(1482.0).unwrap();
        let wm = minnaert_frequency(&b).unwrap();
        let rho = rho_of(&ReflectivityModel::Bubble(b), &bgw, wm).unwrap() / b.radius;
        let am = minnaert_alpha(b.delta).unwrap();
        let exact = 4.0 * PI * bgw.c0 / (b.c1 * am);
        assert!(rho.re.abs() < 1e-6 * rho.im.abs());
        assert!((rho.im - exact).abs() / exact < 1e-9);
        assert!((rho.im - 880.0).abs() <= 9.0);
    }

    #[test]
    fn drude_lossless_is_real_negative() {
        let d = Drude {
            omega_p: 5.0,
            tau: f64::INFINITY,
            volume: 0.01,
        };
        let r = rho_of(&ReflectivityModel::Drude(d), &bg(), 2.0).unwrap();
        assert_eq!(r.im, 0.0);
        assert!((r.re - (-25.0 / 4.0 * 4.0 * 0.01)).abs() < 1e-14);
        let lossy = Drude { tau: 3.0, ..d };
        let r = rho_of(&ReflectivityModel::Drude(lossy), &bg(), 2.0).unwrap();
        assert!(r.im > 0.0);
    }

    #[test]
    fn symmetric_tensor_check() {
        let o = Complex64::new(1.0, 0.0);
        let z = Complex64::new(0.0, 0.0);
        let bad = [[o, o, z], [z, o, z], [z, z, o]];
        assert!(SymTensor::try_from_matrix(bad).is_err());
        let good = [[o, o, z], [o, o, z], [z, z, o]];
        assert!(SymTensor::try_from_matrix(good).is_ok());
    }

    #[test]
    fn metasurface_grid_is_centered() {
        let m = Metasurface::new(
            Vec3::new(0.0, 0.0, -5.0),
            Vec3::new(0.0, 0.0, 1.0),
            4.0,
            8,
            ReflectivityModel::constant(Complex64::new(0.0, 1.0)),
        )
        .unwrap();
        let p = m.positions();
        assert_eq!(p.len(), 64);
        let c = p.iter().fold(Vec3::default(), |a, b| a + *b) * (1.0 / 64.0);
        assert!((c - m.center).norm() < 1e-12);
        assert!((p[1] - p[0]).norm() - 0.5 < 1e-12);
    }
}
