//! Cross-correlation kernels, ECSD moments and the link budget.
//!
//! The noise kernel `Q(w, xr, xrp) = int_shell conj(G(w, xr, y)) G(w, xrp, y) dsigma(y)`
//! is evaluated either by shell quadrature or through its first-order expansion
//! in the inclusion coefficients. Frequencies inside the band are written
//! `w = w0 + B s`; the spectral shape `F0(s)` integrates to pi.

use crate::error::{Error, Result};
use crate::media::{
    grad_green0, green0, green0_im_coincident, green0_r, rho_of, Background, Inclusion, Metasurface, ReflectivityModel,
    Vec3,
};
use crate::numeric::{composite_gl, fresnel_cs, normal_tail, pairwise_sum};
use crate::scene::{angle_between, diameter, nyquist_nodes, Scene, SourceShell};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectrumShape {
    /// `pi` on `|s| <= 1/2`.
    Boxcar,
    /// `pi (1 + cos 2 pi s)` on `|s| <= 1/2`.
    RaisedCosine,
    /// Gaussian of width `sigma`, cut at `|s| = cutoff`, scaled to integrate to pi.
    TruncatedGaussian { sigma: f64, cutoff: f64 },
}

/// Two-sided power spectral density `F(w) = F0((|w| - w0) / B) / B`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpectrum {
    pub omega0: f64,
    pub bandwidth: f64,
    pub shape: SpectrumShape,
}

impl NoiseSpectrum {
    pub fn new(omega0: f64, bandwidth: f64, shape: SpectrumShape) -> Result<Self> {
        if !(omega0 > 0.0 && omega0.is_finite() && bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::domain("spectrum needs positive omega0 and bandwidth"));
        }
        if bandwidth > 0.2 * omega0 {
            return Err(Error::Validation(vec![format!(
                "bandwidth ratio B/omega0 = {:.3} exceeds the narrowband limit 0.2",
                bandwidth / omega0
            )]));
        }
        if let SpectrumShape::TruncatedGaussian { sigma, cutoff } = shape {
            if !(sigma > 0.0 && cutoff > 0.0) {
                return Err(Error::domain("truncated Gaussian needs sigma, cutoff > 0"));
            }
        }
        Ok(NoiseSpectrum {
            omega0,
            bandwidth,
            shape,
        })
    }

    pub fn warnings(&self) -> Vec<String> {
        let r = self.bandwidth / self.omega0;
        if r > 0.05 {
            vec![format!(
                "B/omega0 = {r:.3} is above 0.05; narrowband asymptotics degrade"
            )]
        } else {
            Vec::new()
        }
    }

    /// Half-width of the support of `F0`.
    pub fn support(&self) -> f64 {
        match self.shape {
            SpectrumShape::Boxcar | SpectrumShape::RaisedCosine => 0.5,
            SpectrumShape::TruncatedGaussian { cutoff, .. } => cutoff,
        }
    }

    pub fn f0(&self, s: f64) -> f64 {
        if s.abs() > self.support() {
            return 0.0;
        }
        match self.shape {
            SpectrumShape::Boxcar => PI,
            SpectrumShape::RaisedCosine => PI * (1.0 + (2.0 * PI * s).cos()),
            SpectrumShape::TruncatedGaussian { sigma, cutoff } => {
                let z = sigma * (2.0 * PI).sqrt() * libm::erf(cutoff / (sigma * 2f64.sqrt()));
                PI * (-s * s / (2.0 * sigma * sigma)).exp() / z
            }
        }
    }

    pub fn density(&self, omega: f64) -> f64 {
        self.f0((omega.abs() - self.omega0) / self.bandwidth) / self.bandwidth
    }

    /// Quadrature nodes `(s, weight)` across the support.
    pub fn band_nodes(&self, panels: usize) -> Vec<(f64, f64)> {
        let a = self.support();
        composite_gl(-a, a, panels, 16)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowShape {
    /// `(1 - |t|)_+`
    Triangle,
    /// `pi^{-1/2} exp(-t^2)`, truncated at `|t| = 4`.
    Gaussian,
}

impl WindowShape {
    pub fn value(self, t: f64) -> f64 {
        match self {
            WindowShape::Triangle => (1.0 - t.abs()).max(0.0),
            WindowShape::Gaussian => {
                if t.abs() > 4.0 {
                    0.0
                } else {
                    (-t * t).exp() / PI.sqrt()
                }
            }
        }
    }

    /// Fourier transform `int f(t) exp(i s t) dt` (real, the windows are even).
    pub fn fourier(self, s: f64) -> f64 {
        match self {
            WindowShape::Triangle => {
                let h = 0.5 * s;
                if h.abs() < 1e-6 {
                    1.0 - h * h / 3.0
                } else {
                    let v = h.sin() / h;
                    v * v
                }
            }
            WindowShape::Gaussian => (-0.25 * s * s).exp(),
        }
    }

    pub fn norm_sq(self) -> f64 {
        match self {
            WindowShape::Triangle => 2.0 / 3.0,
            WindowShape::Gaussian => 1.0 / (2.0 * PI).sqrt(),
        }
    }

    pub fn half_width(self) -> f64 {
        match self {
            WindowShape::Triangle => 1.0,
            WindowShape::Gaussian => 4.0,
        }
    }
}

/// Averaging windows: `phi` over time with scale `t_long` (T), `psi` over
/// lag with scale `t_lag` (T').
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub t_long: f64,
    pub t_lag: f64,
    pub phi: WindowShape,
    pub psi: WindowShape,
}

impl WindowSpec {
    pub fn new(t_long: f64, t_lag: f64) -> Result<Self> {
        if !(t_long > 0.0 && t_lag > 0.0 && t_long.is_finite() && t_lag.is_finite()) {
            return Err(Error::domain("window scales must be positive"));
        }
        Ok(WindowSpec {
            t_long,
            t_lag,
            phi: WindowShape::Triangle,
            psi: WindowShape::Gaussian,
        })
    }

    pub fn phi_t(&self, t: f64) -> f64 {
        self.phi.value(t / self.t_long) / self.t_long
    }

    pub fn psi_t(&self, tau: f64) -> f64 {
        self.psi.value(tau / self.t_lag) / self.t_lag
    }
}

/// The five contributions to the kernel expansion.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct QTerms {
    pub term1: Complex64,
    pub term2: Complex64,
    pub term3: Complex64,
    pub term4: Complex64,
    pub term5: Complex64,
}

impl QTerms {
    pub fn total(&self) -> Complex64 {
        self.term1 + self.term2 + self.term3 + self.term4 + self.term5
    }

    fn scaled(&self, w: f64) -> QTerms {
        QTerms {
            term1: self.term1 * w,
            term2: self.term2 * w,
            term3: self.term3 * w,
            term4: self.term4 * w,
            term5: self.term5 * w,
        }
    }

    fn conj(&self) -> QTerms {
        QTerms {
            term1: self.term1.conj(),
            term2: self.term2.conj(),
            term3: self.term3.conj(),
            term4: self.term4.conj(),
            term5: self.term5.conj(),
        }
    }

    fn add(&self, o: &QTerms) -> QTerms {
        QTerms {
            term1: self.term1 + o.term1,
            term2: self.term2 + o.term2,
            term3: self.term3 + o.term3,
            term4: self.term4 + o.term4,
            term5: self.term5 + o.term5,
        }
    }
}

/// First-order expansion of the kernel in the inclusion coefficients.
pub fn q_expansion(bg: &Background, omega: f64, xr: Vec3, xrp: Vec3, inclusions: &[Inclusion]) -> Result<QTerms> {
    let pref = bg.c0 / omega;
    let im0 = if xr == xrp {
        green0_im_coincident(bg, omega)
    } else {
        green0(bg, omega, xr, xrp)?.im
    };
    let mut q = QTerms {
        term1: Complex64::new(pref * im0, 0.0),
        ..Default::default()
    };
    for inc in inclusions {
        let rho = rho_of(&inc.reflectivity, bg, omega)?;
        let a = green0(bg, omega, xr, inc.position)?;
        let b = green0(bg, omega, xrp, inc.position)?;
        q.term2 += Complex64::new(pref * (rho * a * b).im, 0.0);
        q.term3 -= pref * rho.im * (a.conj() * b);
        if let Some(p) = &inc.polarization {
            let m = p.at(omega);
            let da = grad_green0(bg, omega, xr, inc.position)?;
            let db = grad_green0(bg, omega, xrp, inc.position)?;
            q.term4 += Complex64::new(pref * m.bilinear(&da, &db).im, 0.0);
            let dac = [da[0].conj(), da[1].conj(), da[2].conj()];
            q.term5 -= pref * m.imag().bilinear(&dac, &db);
        }
    }
    Ok(q)
}

fn check_quadrature_pre(bg: &Background, omega: f64, pts: &[Vec3], shell: &SourceShell) -> Result<()> {
    let need = nyquist_nodes(shell.radius, bg.wavelength(omega));
    if shell.nodes.len() < need {
        return Err(Error::refusal(format!(
            "{} shell nodes is below the sampling minimum; need at least {need}",
            shell.nodes.len()
        )));
    }
    let d = diameter(pts);
    if shell.radius < 5.0 * d {
        return Err(Error::refusal(format!(
            "shell radius {} must exceed 5x the scene diameter {d:.4}",
            shell.radius
        )));
    }
    if pts.iter().any(|p| p.norm() >= shell.radius) {
        return Err(Error::refusal("scene points must lie inside the source shell"));
    }
    Ok(())
}

const CHUNK: usize = 2048;

/// Deterministic parallel sum of `f(node)` over shell nodes: fixed chunks,
/// pairwise within and across chunks.
fn shell_sum<F>(shell: &SourceShell, f: F) -> Complex64
where
    F: Fn(Vec3) -> Complex64 + Sync,
{
    let partial: Vec<Complex64> = shell
        .nodes
        .par_chunks(CHUNK)
        .map(|c| {
            let v: Vec<Complex64> = c.iter().map(|y| f(*y)).collect();
            pairwise_sum(&v)
        })
        .collect();
    pairwise_sum(&partial) * shell.weight
}

/// Shell quadrature of `conj(G(xr, y)) G(xrp, y)` with the full Green's function.
pub fn q_quadrature(
    bg: &Background,
    omega: f64,
    xr: Vec3,
    xrp: Vec3,
    inclusions: &[Inclusion],
    shell: &SourceShell,
) -> Result<Complex64> {
    let mut pts: Vec<Vec3> = inclusions.iter().map(|i| i.position).collect();
    pts.push(xr);
    pts.push(xrp);
    check_quadrature_pre(bg, omega, &pts, shell)?;
    let k = bg.wavenumber(omega);
    // node-independent factors of the scattered parts
    struct Sc {
        z: Vec3,
        a: Complex64,
        b: Complex64,
        da: Option<[Complex64; 3]>,
        db: Option<[Complex64; 3]>,
    }
    let mut sc = Vec::with_capacity(inclusions.len());
    for inc in inclusions {
        let rho = rho_of(&inc.reflectivity, bg, omega)?;
        let a = rho * green0(bg, omega, xr, inc.position)?;
        let b = rho * green0(bg, omega, xrp, inc.position)?;
        let (da, db) = match &inc.polarization {
            Some(p) => {
                let m = p.at(omega);
                let gx = grad_green0(bg, omega, xr, inc.position)?;
                let gy = grad_green0(bg, omega, xrp, inc.position)?;
                let mv = |g: [Complex64; 3]| {
                    let mut o = [ZERO; 3];
                    for (i, oi) in o.iter_mut().enumerate() {
                        for (j, gj) in g.iter().enumerate() {
                            *oi += m.get(i, j) * gj;
                        }
                    }
                    o
                };
                (Some(mv(gx)), Some(mv(gy)))
            }
            None => (None, None),
        };
        sc.push(Sc {
            z: inc.position,
            a,
            b,
            da,
            db,
        });
    }
    let bgc = *bg;
    Ok(shell_sum(shell, |y| {
        let mut g1 = green0_r(k, (xr - y).norm());
        let mut g2 = green0_r(k, (xrp - y).norm());
        for s in &sc {
            let gz = green0_r(k, (s.z - y).norm());
            g1 += s.a * gz;
            g2 += s.b * gz;
            if let (Some(da), Some(db)) = (&s.da, &s.db) {
                let gg = grad_green0(&bgc, omega, y, s.z).unwrap_or([ZERO; 3]);
                for i in 0..3 {
                    g1 += da[i] * gg[i];
                    g2 += db[i] * gg[i];
                }
            }
        }
        g1.conj() * g2
    }))
}

/// `|(w/c0) int conj(G0(x,y)) G0(z,y) dsigma - Im G0(x,z)|` for the free medium;
/// the coincident case compares with `w / (4 pi c0)`.
pub fn hk_residual_standard(bg: &Background, omega: f64, x: Vec3, y: Vec3, shell: &SourceShell) -> Result<f64> {
    let q = q_quadrature(bg, omega, x, y, &[], shell)?;
    let target = if x == y {
        green0_im_coincident(bg, omega)
    } else {
        green0(bg, omega, x, y)?.im
    };
    Ok((q * (omega / bg.c0) - target).norm())
}

/// Distance between the shell quadrature and the first-order expansion. The
/// neglected terms are quadratic in the reflectivity, so the result carries an
/// `O(|rho|^2)` floor on top of the finite-shell error.
pub fn hk_residual_generalized(
    bg: &Background,
    omega: f64,
    xr: Vec3,
    xrp: Vec3,
    inclusions: &[Inclusion],
    shell: &SourceShell,
) -> Result<f64> {
    let q = q_quadrature(bg, omega, xr, xrp, inclusions, shell)?;
    let e = q_expansion(bg, omega, xr, xrp, inclusions)?;
    Ok((q - e.total()).norm())
}

fn band_panels(spectrum: &NoiseSpectrum, extra_phase: f64) -> usize {
    // extra_phase: largest phase excursion per unit s of an oscillating factor
    let osc = extra_phase * 2.0 * spectrum.support() / PI;
    8usize.max(osc.ceil() as usize * 2)
}

/// `(1/2pi) int Q(w1) F(w1) psi^(T'(w - w1)) dw1` over both bands, term by term.
pub fn mean_general(
    bg: &Background,
    omega: f64,
    xr: Vec3,
    xrp: Vec3,
    inclusions: &[Inclusion],
    spectrum: &NoiseSpectrum,
    windows: &WindowSpec,
) -> Result<QTerms> {
    let b = spectrum.bandwidth;
    let reach = inclusions
        .iter()
        .map(|i| (i.position - xr).norm() + (i.position - xrp).norm())
        .fold((xr - xrp).norm(), f64::max);
    let nodes = spectrum.band_nodes(band_panels(spectrum, b * reach / bg.c0));
    let terms: Vec<Result<QTerms>> = nodes
        .par_iter()
        .map(|&(s, w)| {
            let w1 = spectrum.omega0 + b * s;
            let q = q_expansion(bg, w1, xr, xrp, inclusions)?;
            let f = spectrum.f0(s) * w;
            let pos = windows.psi.fourier(windows.t_lag * (omega - w1));
            let neg = windows.psi.fourier(windows.t_lag * (omega + w1));
            Ok(q.scaled(f * pos).add(&q.conj().scaled(f * neg)))
        })
        .collect();
    let mut acc = QTerms::default();
    for t in terms {
        acc = acc.add(&t?);
    }
    Ok(acc.scaled(1.0 / (2.0 * PI)))
}

/// Closed-form mean contributions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanTerms {
    pub mean_i: Complex64,
    pub mean_ii: Complex64,
    pub mean_iii: Complex64,
}

impl MeanTerms {
    pub fn total(&self) -> Complex64 {
        self.mean_i + self.mean_ii + self.mean_iii
    }
}

fn psi_weight(windows: &WindowSpec, b: f64, s: f64) -> f64 {
    windows.psi.fourier(b * windows.t_lag * s)
}

/// `int rho(w0 + B s) F0(s) psi^(B T' s) ds`.
pub fn rho_b(
    model: &ReflectivityModel,
    bg: &Background,
    spectrum: &NoiseSpectrum,
    windows: &WindowSpec,
) -> Result<Complex64> {
    r_b2(model, bg, spectrum, windows, 0.0)
}

/// `(1/J) sum_j exp(2 i k0 |xr - z_j|)`.
pub fn r_b1(surface: &Metasurface, xr: Vec3, omega0: f64, bg: &Background) -> Complex64 {
    let k = bg.wavenumber(omega0);
    let pos = surface.positions();
    let v: Vec<Complex64> = pos
        .iter()
        .map(|z| Complex64::from_polar(1.0, 2.0 * k * (xr - *z).norm()))
        .collect();
    pairwise_sum(&v) / pos.len() as f64
}

/// `int rho(w0 + B s) exp(2 i B L s / c0) F0(s) psi^(B T' s) ds`.
pub fn r_b2(
    model: &ReflectivityModel,
    bg: &Background,
    spectrum: &NoiseSpectrum,
    windows: &WindowSpec,
    distance: f64,
) -> Result<Complex64> {
    let b = spectrum.bandwidth;
    let ph = 2.0 * b * distance / bg.c0;
    let mut acc = ZERO;
    for (s, w) in spectrum.band_nodes(band_panels(spectrum, ph)) {
        let rho = rho_of(model, bg, spectrum.omega0 + b * s)?;
        acc += rho * Complex64::from_polar(1.0, ph * s) * (spectrum.f0(s) * psi_weight(windows, b, s) * w);
    }
    Ok(acc)
}

/// Checks the assumptions behind the closed-form mean; returns the list of
/// violated ones (empty when all hold).
pub fn closed_form_violations(scene: &Scene, omega0: f64) -> Vec<String> {
    let lam = scene.wavelength(omega0);
    let d = scene.metasurface.side;
    let l = scene.distance();
    let mut v = Vec::new();
    let sep = scene.receivers.separation();
    if ((sep - 0.5 * lam) / (0.5 * lam)).abs() > 1e-6 {
        v.push(format!(
            "receiver separation {sep:.6} is not half a wavelength ({:.6})",
            0.5 * lam
        ));
    }
    if lam >= d {
        v.push(format!(
            "wavelength {lam:.4} is not small compared to the array side {d:.4}"
        ));
    }
    if d >= l {
        v.push(format!(
            "array side {d:.4} is not small compared to the distance {l:.4}"
        ));
    }
    v
}

/// Closed-form mean of the ECSD at `w0` in the paraxial, half-wavelength regime.
pub fn mean_closed_form(scene: &Scene, spectrum: &NoiseSpectrum, windows: &WindowSpec, on: bool) -> Result<MeanTerms> {
    let v = closed_form_violations(scene, spectrum.omega0);
    if !v.is_empty() {
        return Err(Error::Regime(v));
    }
    let bg = &scene.background;
    let b = spectrum.bandwidth;
    let w0 = spectrum.omega0;
    let lam = scene.wavelength(w0);
    let l = scene.distance();
    let j = scene.metasurface.count() as f64;
    let model = scene.metasurface.reflectivity.with_level(on);
    let mut m1 = 0.0;
    for (s, w) in spectrum.band_nodes(8) {
        m1 += spectrum.f0(s) * s * s * psi_weight(windows, b, s) * w;
    }
    let mean_i = m1 * (b / w0).powi(2) / (8.0 * PI * PI);
    let pref = j * lam / (64.0 * PI.powi(4) * l * l);
    let phase = Complex64::from_polar(1.0, -PI * scene.angle().cos());
    let rb1 = r_b1(&scene.metasurface, scene.receivers.xr, w0, bg);
    let rb2 = r_b2(&model, bg, spectrum, windows, l)?;
    let rhob = rho_b(&model, bg, spectrum, windows)?;
    Ok(MeanTerms {
        mean_i: Complex64::new(mean_i, 0.0),
        mean_ii: Complex64::new(pref * (rb1 * rb2 * phase).im, 0.0),
        mean_iii: -pref * rhob.im * phase,
    })
}

/// Result of the dense-array phase-sum bound.
#[derive(Clone, Debug, PartialEq)]
pub struct FresnelCheck {
    pub r_b1: f64,
    pub bound: f64,
    /// Paraxial Fresnel-integral estimate of |R_B1|.
    pub fresnel_estimate: f64,
    pub warnings: Vec<String>,
}

impl FresnelCheck {
    pub fn holds(&self) -> bool {
        self.r_b1 <= self.bound
    }
}

/// Compares `|R_B1|` with `4 lambda0 L / (pi D^2)`. Regime gates only
/// annotate the result.
pub fn fresnel_bound_check(surface: &Metasurface, xr: Vec3, omega0: f64, bg: &Background) -> FresnelCheck {
    let lam = bg.wavelength(omega0);
    let d = surface.side;
    let rel = xr - surface.center;
    let l = rel.norm();
    let mut warnings = Vec::new();
    if l * l < 10.0 * d * d {
        warnings.push(format!("L^2 = {:.4} is below 10 D^2 = {:.4}", l * l, 10.0 * d * d));
    }
    if d * d < 10.0 * l * lam {
        warnings.push(format!(
            "D^2 = {:.4} is below 10 L lambda0 = {:.4}",
            d * d,
            10.0 * l * lam
        ));
    }
    let tilt = angle_between(rel, surface.normal);
    let tilt = tilt.min(PI - tilt);
    if tilt > 0.1 {
        warnings.push(format!("incidence is {tilt:.3} rad off normal"));
    }
    let k = bg.wavenumber(omega0);
    let (e1, e2) = surface.axes();
    let mut est = bg.c0 * l / (omega0 * d * d);
    for x in [rel.dot(e1), rel.dot(e2)] {
        let sc = (k / l).sqrt();
        let (cp, sp) = fresnel_cs(sc * (0.5 * d - x));
        let (cm, sm) = fresnel_cs(sc * (-0.5 * d - x));
        est *= Complex64::new(cp - cm, sp - sm).norm();
    }
    FresnelCheck {
        r_b1: r_b1(surface, xr, omega0, bg).norm(),
        bound: 4.0 * lam * l / (PI * d * d),
        fresnel_estimate: est,
        warnings,
    }
}

/// Large-`BT` variance of the ECSD with `T' = 1/B`:
/// `|phi|^2 / (2^5 pi^3 B T) int F0^2 |psi^|^2 ds`.
pub fn var_closed_form(spectrum: &NoiseSpectrum, windows: &WindowSpec) -> Result<f64> {
    let b = spectrum.bandwidth;
    let bt = b * windows.t_long;
    if bt < 10.0 {
        return Err(Error::refusal(format!("B T = {bt:.3} is below 10")));
    }
    let mut integral = 0.0;
    for (s, w) in spectrum.band_nodes(8) {
        let p = psi_weight(windows, b, s);
        integral += spectrum.f0(s).powi(2) * p * p * w;
    }
    Ok(windows.phi.norm_sq() * integral / (32.0 * PI.powi(3) * bt))
}

/// Chebyshev interpolant of a complex function on [a, b].
struct Cheb {
    a: f64,
    b: f64,
    x: Vec<f64>,
    f: Vec<Complex64>,
    w: Vec<f64>,
}

impl Cheb {
    fn new(a: f64, b: f64, n: usize, f: impl Fn(f64) -> Result<Complex64> + Sync) -> Result<Self> {
        let x: Vec<f64> = (0..=n).map(|j| (PI * j as f64 / n as f64).cos()).collect();
        let vals: Vec<Result<Complex64>> = x.par_iter().map(|&t| f(0.5 * (a + b) + 0.5 * (b - a) * t)).collect();
        let f = vals.into_iter().collect::<Result<Vec<_>>>()?;
        let w = (0..=n)
            .map(|j| {
                let s = if j % 2 == 0 { 1.0 } else { -1.0 };
                if j == 0 || j == n {
                    0.5 * s
                } else {
                    s
                }
            })
            .collect();
        Ok(Cheb { a, b, x, f, w })
    }

    fn eval(&self, s: f64) -> Complex64 {
        let t = (2.0 * s - self.a - self.b) / (self.b - self.a);
        let mut num = ZERO;
        let mut den = 0.0;
        for j in 0..self.x.len() {
            let d = t - self.x[j];
            if d == 0.0 {
                return self.f[j];
            }
            let c = self.w[j] / d;
            num += self.f[j] * c;
            den += c;
        }
        num / den
    }
}

/// Variance of the ECSD at `omega` from the double spectral integral with both
/// summands, kernels from the first-order expansion.
#[allow(clippy::too_many_arguments)]
pub fn var_general(
    bg: &Background,
    omega: f64,
    xr: Vec3,
    xrp: Vec3,
    inclusions: &[Inclusion],
    spectrum: &NoiseSpectrum,
    windows: &WindowSpec,
) -> Result<f64> {
    let b = spectrum.bandwidth;
    let w0 = spectrum.omega0;
    let a = spectrum.support();
    let q = |x: Vec3, y: Vec3| {
        Cheb::new(-a, a, 128, move |s| {
            Ok(q_expansion(bg, w0 + b * s, x, y, inclusions)?.total())
        })
    };
    let q11 = q(xr, xr)?;
    let q22 = q(xrp, xrp)?;
    let q12 = q(xr, xrp)?;
    let (t, tp) = (windows.t_long, windows.t_lag);
    let phi2 = |x: f64| windows.phi.fourier(x).powi(2);
    let psi = |x: f64| windows.psi.fourier(x);
    // Kernel at band indices (sg1, s1), (sg2, s2): frequencies sg (w0 + B s).
    let integrand = |sg1: f64, s1: f64, sg2: f64, s2: f64| -> f64 {
        let w1 = sg1 * (w0 + b * s1);
        let w2 = sg2 * (w0 + b * s2);
        let pick = |c: &Cheb, sg: f64, s: f64| {
            let v = c.eval(s);
            if sg > 0.0 {
                v
            } else {
                v.conj()
            }
        };
        let mid = 0.5 * (w1 + w2);
        let p1 = psi(tp * (omega - mid));
        let p2 = psi(tp * (omega + mid));
        let first = pick(&q11, sg1, s1) * pick(&q22, sg2, s2) * (p1 * p1);
        // Q(w, xrp, xr) = conj(Q(w, xr, xrp))
        let second = pick(&q12, sg1, s1) * pick(&q12, sg2, s2).conj() * (p1 * p2);
        (first + second).re * phi2(t * (w1 - w2)) * spectrum.f0(s1) * spectrum.f0(s2)
    };
    // Same-band blocks: ridge along s1 = s2 of width 1/(B T). Integrate in
    // u = (s1 + s2)/2, v = s1 - s2 with panels between the kernel zeros.
    let dv = 2.0 * PI / (b * t);
    let vmax = 2.0 * a;
    let n_v = ((vmax / dv).ceil() as usize).max(64);
    let v_nodes = composite_gl(0.0, vmax, n_v, 6);
    let mut total = 0.0;
    for sg in [1.0, -1.0] {
        let parts: Vec<f64> = v_nodes
            .par_iter()
            .map(|&(v, wv)| {
                let umax = a - 0.5 * v;
                let mut acc = 0.0;
                for (u, wu) in composite_gl(-umax, umax, 4, 16) {
                    // v and -v contribute symmetrically in the kernel but not
                    // in the spectra/Q values, so evaluate both.
                    acc += wu
                        * (integrand(sg, u + 0.5 * v, sg, u - 0.5 * v) + integrand(sg, u - 0.5 * v, sg, u + 0.5 * v));
                }
                acc * wv
            })
            .collect();
        total += parts.iter().sum::<f64>();
    }
    // Cross-band blocks: smooth, kernel ~ (B T)^-4 (w0 / B)^-4.
    let nodes = spectrum.band_nodes(4);
    for (sg1, sg2) in [(1.0, -1.0), (-1.0, 1.0)] {
        for &(s1, w1) in &nodes {
            for &(s2, w2) in &nodes {
                total += integrand(sg1, s1, sg2, s2) * w1 * w2;
            }
        }
    }
    Ok(total / (4.0 * PI * PI))
}

/// Additional ECSD variance from independent measurement noise of power
/// `sigma^2` and coherence time `t_meas` (noise times noise part only).
pub fn measurement_noise_var(sigma: f64, t_meas: f64, windows: &WindowSpec) -> Result<f64> {
    if t_meas > windows.t_lag / 10.0 {
        return Err(Error::refusal(format!(
            "t_meas = {t_meas} exceeds T'/10 = {}",
            windows.t_lag / 10.0
        )));
    }
    Ok(
        windows.phi.norm_sq() * windows.psi.norm_sq() * sigma.powi(4) * t_meas * t_meas
            / (windows.t_long * windows.t_lag),
    )
}

/// Variance added by the products of the wave field at one receiver with the
/// measurement noise at the other, for a free-field kernel `Q(w, x, x) = 1/(4 pi)`:
/// `sigma^2 t_meas |phi|^2 / (4 pi^2 T) int F0 |psi^(B T' s)|^2 ds`.
pub fn signal_noise_cross_var(sigma: f64, t_meas: f64, spectrum: &NoiseSpectrum, windows: &WindowSpec) -> f64 {
    let b = spectrum.bandwidth;
    let mut integral = 0.0;
    for (s, w) in spectrum.band_nodes(8) {
        let p = psi_weight(windows, b, s);
        integral += spectrum.f0(s) * p * p * w;
    }
    sigma * sigma * t_meas * windows.phi.norm_sq() * integral / (4.0 * PI * PI * windows.t_long)
}

/// Link budget for on-off keying of the array's imaginary reflectivity.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkBudget {
    pub mean_i: Complex64,
    pub mean_ii: Complex64,
    pub mean_iii: Complex64,
    pub variance: f64,
    /// `|mean_III(on) - mean_III(off)| / sqrt(variance)`.
    pub snr_ratio: f64,
    /// `(J lambda0 rho1 / L^2) sqrt(B T)`, the order-of-magnitude condition.
    pub condition_ratio: f64,
    pub rho_b: Complex64,
    pub r_b1: Complex64,
    pub r_b2: Complex64,
    pub fresnel_bound: f64,
    /// Predicted bit error rate of the projection decoder, `Q(snr / 2)`.
    pub predicted_ber: f64,
    /// Bits per second of the scheme, one bit per `4 T`.
    pub bit_rate: f64,
    /// `B J^2 lambda0^4 / (10 L^4)`, the rate scale for `rho ~ lambda0`.
    pub implied_rate: f64,
    pub warnings: Vec<String>,
}

pub fn snr_budget(scene: &Scene, spectrum: &NoiseSpectrum, windows: &WindowSpec) -> Result<LinkBudget> {
    let bg = &scene.background;
    let w0 = spectrum.omega0;
    let on = mean_closed_form(scene, spectrum, windows, true)?;
    let off = mean_closed_form(scene, spectrum, windows, false)?;
    let variance = var_closed_form(spectrum, windows)?;
    let model = scene.metasurface.reflectivity.with_level(true);
    let rho_on = rho_b(&model, bg, spectrum, windows)?;
    let l = scene.distance();
    let lam = scene.wavelength(w0);
    let j = scene.metasurface.count() as f64;
    let rho1 = match scene.metasurface.reflectivity {
        ReflectivityModel::Tunable(t) => t.rho1,
        _ => rho_of(&model, bg, w0)?.im,
    };
    let b = spectrum.bandwidth;
    let snr = (on.mean_iii - off.mean_iii).norm() / variance.sqrt();
    let mut warnings = spectrum.warnings();
    let bt = b * windows.t_long;
    if bt < 100.0 {
        warnings.push(format!("B T = {bt:.1} is below 100"));
    }
    let fc = fresnel_bound_check(&scene.metasurface, scene.receivers.xr, w0, bg);
    warnings.extend(fc.warnings.iter().cloned());
    Ok(LinkBudget {
        mean_i: on.mean_i,
        mean_ii: on.mean_ii,
        mean_iii: on.mean_iii,
        variance,
        snr_ratio: snr,
        condition_ratio: j * lam * rho1 / (l * l) * bt.sqrt(),
        rho_b: rho_on,
        r_b1: r_b1(&scene.metasurface, scene.receivers.xr, w0, bg),
        r_b2: r_b2(&model, bg, spectrum, windows, l)?,
        fresnel_bound: fc.bound,
        predicted_ber: normal_tail(0.5 * snr),
        bit_rate: 1.0 / (4.0 * windows.t_long),
        implied_rate: b * j * j * lam.powi(4) / (10.0 * l.powi(4)),
        warnings,
    })
}
