use ambientlink::kernel::*;
use ambientlink::media::*;
use ambientlink::numeric::composite_gl;
use ambientlink::scene::*;
use num_complex::Complex64;
use std::f64::consts::PI;

const W0: f64 = 2.0 * PI;

fn bg() -> Background {
    Background::new(1.0).unwrap()
}

fn tunable(rho1: f64) -> ReflectivityModel {
    ReflectivityModel::Tunable(Tunable {
        re_rho: 0.0,
        rho1,
        on: true,
    })
}

fn default_scene(n: usize, side: f64, l: f64, rho1: f64) -> Scene {
    let ms = Metasurface::new(
        Vec3::new(0.0, 0.0, -l / 2.0),
        Vec3::new(0.0, 0.0, 1.0),
        side,
        n,
        tunable(rho1),
    )
    .unwrap();
    let xr = Vec3::new(0.0, 0.0, l / 2.0);
    Scene {
        background: bg(),
        shell_radius: 60.0,
        metasurface: ms,
        receivers: ReceiverPair::new(xr, xr + Vec3::new(0.5, 0.0, 0.0)).unwrap(),
    }
}

fn spectrum() -> NoiseSpectrum {
    NoiseSpectrum::new(W0, 0.05 * W0, SpectrumShape::Boxcar).unwrap()
}

fn windows(bt: f64) -> WindowSpec {
    let b = 0.05 * W0;
    WindowSpec::new(bt / b, 1.0 / b).unwrap()
}

#[test]
fn expansion_without_inclusions_is_free_field() {
    let x = Vec3::new(0.0, 0.0, 0.0);
    let y = Vec3::new(0.3, 0.1, 0.0);
    let q = q_expansion(&bg(), W0, x, y, &[]).unwrap();
    assert_eq!(q.term2 + q.term3 + q.term4 + q.term5, Complex64::new(0.0, 0.0));
    let want = green0(&bg(), W0, x, y).unwrap().im / W0;
    assert!((q.term1.re - want).abs() < 1e-16);
    let qq = q_expansion(&bg(), W0, x, x, &[]).unwrap();
    assert!((qq.total().re - 1.0 / (4.0 * PI)).abs() < 1e-15);
}

#[test]
fn real_reflectivity_rebuilds_imaginary_part_of_full_green() {
    let b = bg();
    let xr = Vec3::new(0.1, 0.0, 1.0);
    let xrp = Vec3::new(0.6, 0.2, 1.1);
    let incs: Vec<Inclusion> = (0..5)
        .map(|j| {
            Inclusion::new(
                Vec3::new(0.4 * j as f64 - 1.0, 0.3, -1.0),
                ReflectivityModel::constant(Complex64::new(0.2 + 0.05 * j as f64, 0.0)),
            )
        })
        .collect();
    let q = q_expansion(&b, W0, xr, xrp, &incs).unwrap();
    assert_eq!(q.term3, Complex64::new(0.0, 0.0));
    let full = green_full(&b, W0, xr, xrp, &incs).unwrap().im / W0;
    assert!((q.total().re - full).abs() < 1e-10 * full.abs());
}

#[test]
fn coincident_absorbing_inclusion_reduces_power() {
    let x = Vec3::new(0.0, 0.0, 1.0);
    let inc = Inclusion::new(Vec3::new(0.0, 0.0, -1.0), tunable(0.3));
    let q = q_expansion(&bg(), W0, x, x, &[inc]).unwrap();
    let g = green0(&bg(), W0, x, Vec3::new(0.0, 0.0, -1.0)).unwrap();
    let want = -0.3 * g.norm_sqr() / W0;
    assert!(q.term3.im.abs() < 1e-18 && (q.term3.re - want).abs() < 1e-15);
    assert!(q.term3.re < 0.0);
}

#[test]
fn shell_quadrature_refuses_below_sampling_minimum() {
    let shell = make_shell(10.0, 100).unwrap();
    let err = q_quadrature(&bg(), W0, Vec3::default(), Vec3::new(0.5, 0.0, 0.0), &[], &shell);
    match err {
        Err(ambientlink::Error::Refusal { reason }) => assert!(reason.contains("5027")),
        other => panic!("expected refusal, got {other:?}"),
    }
}

#[test]
fn standard_identity_half_wavelength_and_coincident() {
    let l = 50.0;
    let shell = make_shell(l, nyquist_nodes(l, 1.0)).unwrap();
    let x = Vec3::new(0.2, -0.1, 0.3);
    let q = q_quadrature(&bg(), W0, x, x + Vec3::new(0.5, 0.0, 0.0), &[], &shell).unwrap();
    assert!(q.norm() <= 5e-3 / (4.0 * PI), "{q}");
    let r = hk_residual_standard(&bg(), W0, x, x, &shell).unwrap();
    assert!(r <= 1e-2 * W0 / (4.0 * PI));
    let qc = q_quadrature(&bg(), W0, x, x, &[], &shell).unwrap();
    assert!((qc.re - 1.0 / (4.0 * PI)).abs() < 1e-3 / (4.0 * PI));
}

#[test]
fn generalized_identity_floor_grows_quadratically() {
    // compact scene centred on the shell centre
    let ms = |rho1: f64| {
        Metasurface::new(
            Vec3::new(0.0, 0.0, -1.5),
            Vec3::new(0.0, 0.0, 1.0),
            1.0,
            1,
            tunable(rho1),
        )
        .unwrap()
    };
    let xr = Vec3::new(0.0, 0.0, 1.5);
    let xrp = xr + Vec3::new(0.5, 0.0, 0.0);
    let shell = make_shell(60.0, nyquist_nodes(60.0, 1.0)).unwrap();
    let small = hk_residual_generalized(&bg(), W0, xr, xrp, &ms(1.0).inclusions(true), &shell).unwrap();
    let big = hk_residual_generalized(&bg(), W0, xr, xrp, &ms(10.0).inclusions(true), &shell).unwrap();
    let ratio = big / small;
    assert!(ratio > 50.0 && ratio < 200.0, "{small} {big}");
}

#[test]
fn spectrum_normalisation_and_limits() {
    for shape in [
        SpectrumShape::Boxcar,
        SpectrumShape::RaisedCosine,
        SpectrumShape::TruncatedGaussian {
            sigma: 0.2,
            cutoff: 0.6,
        },
    ] {
        let s = NoiseSpectrum::new(W0, 0.05 * W0, shape).unwrap();
        let total: f64 = s.band_nodes(16).iter().map(|(x, w)| s.f0(*x) * w).sum();
        assert!((total - PI).abs() < 1e-9, "{shape:?}: {total}");
    }
    assert!(NoiseSpectrum::new(W0, 0.5 * W0, SpectrumShape::Boxcar).is_err());
    assert_eq!(
        NoiseSpectrum::new(W0, 0.1 * W0, SpectrumShape::Boxcar)
            .unwrap()
            .warnings()
            .len(),
        1
    );
}

#[test]
fn window_norms_and_transforms_match_quadrature() {
    for shape in [WindowShape::Triangle, WindowShape::Gaussian] {
        let nodes = composite_gl(-4.0, 4.0, 400, 8);
        let norm: f64 = nodes.iter().map(|(t, w)| shape.value(*t).powi(2) * w).sum();
        assert!((norm - shape.norm_sq()).abs() < 1e-7, "{shape:?}");
        for s in [0.0, 0.7, 2.3, 9.0] {
            let ft: f64 = nodes.iter().map(|(t, w)| shape.value(*t) * (s * t).cos() * w).sum();
            assert!((ft - shape.fourier(s)).abs() < 1e-7, "{shape:?} at {s}");
        }
    }
}

#[test]
fn rho_b_constant_and_r_b2_limit() {
    let s = spectrum();
    let w = windows(100.0);
    let m = ReflectivityModel::constant(Complex64::new(0.2, 0.7));
    let base: f64 = s
        .band_nodes(8)
        .iter()
        .map(|(x, wt)| s.f0(*x) * (-(x * x) / 4.0).exp() * wt)
        .sum();
    let rb = rho_b(&m, &bg(), &s, &w).unwrap();
    assert!((rb - Complex64::new(0.2, 0.7) * base).norm() < 1e-12);
    let rb2 = r_b2(&m, &bg(), &s, &w, 1e-6).unwrap();
    assert!((rb2 - rb).norm() < 1e-6);
}

#[test]
fn r_b1_single_element_has_unit_modulus() {
    let ms = Metasurface::new(Vec3::default(), Vec3::new(0.0, 0.0, 1.0), 1.0, 1, tunable(1.0)).unwrap();
    assert!((r_b1(&ms, Vec3::new(0.3, 0.0, 7.0), W0, &bg()).norm() - 1.0).abs() < 1e-14);
}

#[test]
fn closed_form_mean_terms() {
    let sc = default_scene(8, 4.0, 10.0, 0.1);
    let s = spectrum();
    let w = windows(100.0);
    let m = mean_closed_form(&sc, &s, &w, true).unwrap();
    assert!(m.mean_i.re > 0.0 && m.mean_i.im == 0.0);
    // broadside: exp(-i pi cos a) = 1
    let rb = rho_b(&sc.metasurface.reflectivity.with_level(true), &bg(), &s, &w).unwrap();
    let want = -64.0 / (64.0 * PI.powi(4) * 100.0) * rb.im;
    assert!((m.mean_iii - Complex64::new(want, 0.0)).norm() < 1e-12 * want.abs());
    let off = mean_closed_form(&sc, &s, &w, false).unwrap();
    assert_eq!(off.mean_iii.norm(), 0.0);
    // half-wavelength precondition
    let mut bad = sc.clone();
    bad.receivers.xrp = bad.receivers.xr + Vec3::new(0.7, 0.0, 0.0);
    assert!(matches!(
        mean_closed_form(&bad, &s, &w, true),
        Err(ambientlink::Error::Regime(_))
    ));
}

#[test]
fn general_mean_matches_closed_form_in_paraxial_regime() {
    let sc = default_scene(8, 4.0, 20.0, 1.0);
    let s = spectrum();
    let w = windows(100.0);
    let incs = sc.inclusions(true);
    let g = mean_general(&bg(), W0, sc.receivers.xr, sc.receivers.xrp, &incs, &s, &w).unwrap();
    let c = mean_closed_form(&sc, &s, &w, true).unwrap();
    let rel = (g.term3 - c.mean_iii).norm() / c.mean_iii.norm();
    assert!(rel < 0.05, "mean_III rel {rel}");
    let rel1 = (g.term1 - c.mean_i).norm() / c.mean_i.norm();
    assert!(rel1 < 0.05, "mean_I rel {rel1}");
    // independent of T
    let g2 = mean_general(&bg(), W0, sc.receivers.xr, sc.receivers.xrp, &incs, &s, &windows(400.0)).unwrap();
    assert_eq!(g.total(), g2.total());
}

#[test]
fn general_mean_window_removal_limit() {
    let s = spectrum();
    let x = Vec3::default();
    let w = WindowSpec::new(100.0, 1e-9).unwrap();
    let g = mean_general(&bg(), W0, x, x, &[], &s, &w).unwrap();
    // (1/2pi) int_R F Q dw with Q = 1/(4 pi) on both bands: (1/2pi)(2 pi)/(4 pi)
    assert!((g.total().re - 1.0 / (4.0 * PI)).abs() < 1e-12);
}

#[test]
fn fresnel_bound_reference_case() {
    // lambda0 = 0.1, L = 10, D = 3, 64 x 64 elements
    let w0 = 2.0 * PI / 0.1;
    let ms = Metasurface::new(Vec3::default(), Vec3::new(0.0, 0.0, 1.0), 3.0, 64, tunable(1.0)).unwrap();
    let fc = fresnel_bound_check(&ms, Vec3::new(0.0, 0.0, 10.0), w0, &bg());
    assert!((fc.bound - 0.4 / (0.9 * PI)).abs() < 1e-12);
    assert!((fc.bound - 0.1415).abs() < 1e-4);
    assert!(fc.holds(), "{} > {}", fc.r_b1, fc.bound);
    assert!(fc.fresnel_estimate <= fc.bound);
    // refinement: doubling element count in each direction barely moves it
    let fine = Metasurface { n: 128, ..ms.clone() };
    let f2 = fresnel_bound_check(&fine, Vec3::new(0.0, 0.0, 10.0), w0, &bg());
    assert!((f2.r_b1 - fc.r_b1).abs() < 0.01 * fc.r_b1);
}

#[test]
fn variance_closed_form_scaling_and_quadrature_oracle() {
    let s = spectrum();
    let v1 = var_closed_form(&s, &windows(100.0)).unwrap();
    let v2 = var_closed_form(&s, &windows(200.0)).unwrap();
    assert!((v1 / v2 - 2.0).abs() < 1e-12);
    // independent trapezoid oracle of int F0^2 |psi^|^2 over the boxcar
    let n = 200_000;
    let mut acc = 0.0;
    for i in 0..=n {
        let x = -0.5 + i as f64 / n as f64;
        let f = PI * PI * (-(x * x) / 2.0).exp();
        acc += if i == 0 || i == n { 0.5 * f } else { f } / n as f64;
    }
    let want = (2.0 / 3.0) * acc / (32.0 * PI.powi(3) * 100.0);
    assert!((v1 - want).abs() < 1e-9 * want);
    assert!(var_closed_form(&s, &windows(5.0)).is_err());
}

#[test]
fn general_variance_agrees_with_closed_form() {
    let s = spectrum();
    let w = windows(100.0);
    let xr = Vec3::default();
    let xrp = Vec3::new(0.5, 0.0, 0.0);
    let g = var_general(&bg(), W0, xr, xrp, &[], &s, &w).unwrap();
    let c = var_closed_form(&s, &w).unwrap();
    assert!(((g - c) / c).abs() < 0.05, "{g} vs {c}");
}

#[test]
fn measurement_noise_formula_and_refusal() {
    let w = windows(100.0);
    assert_eq!(measurement_noise_var(0.0, w.t_lag / 100.0, &w).unwrap(), 0.0);
    assert!(measurement_noise_var(1.0, w.t_lag / 5.0, &w).is_err());
}

#[test]
fn measurement_noise_matches_reduced_time_domain_integral() {
    // Var = int int C(a + b/2) C(a - b/2) exp(i w b) A_phi(a) A_psi(b) da db
    // with A the window autocorrelations and C(t) = sigma^2 exp(-pi t^2/t_m^2).
    let w = windows(100.0);
    let (t, tp) = (w.t_long, w.t_lag);
    let tm = tp / 100.0;
    let c = |x: f64| (-PI * x * x / (tm * tm)).exp();
    let auto = |f: &dyn Fn(f64) -> f64, x: f64, half: f64| -> f64 {
        composite_gl(-half, half, 200, 8)
            .iter()
            .map(|(s, wt)| f(*s) * f(s - x) * wt)
            .sum()
    };
    let phi = |x: f64| w.phi_t(x);
    let psi = |x: f64| w.psi_t(x);
    let nodes = composite_gl(-6.0 * tm, 6.0 * tm, 24, 8);
    let mut acc = 0.0;
    for &(a, wa) in &nodes {
        let ap = auto(&phi, a, t);
        for &(b, wb) in &nodes {
            acc += c(a + b / 2.0) * c(a - b / 2.0) * (W0 * b).cos() * ap * auto(&psi, b, 4.0 * tp) * wa * wb;
        }
    }
    let formula = measurement_noise_var(1.0, tm, &w).unwrap();
    assert!(((acc - formula) / formula).abs() < 0.05, "{acc} vs {formula}");
}

#[test]
fn link_budget_scalings() {
    let sc = default_scene(8, 4.0, 10.0, 1.0);
    let s = spectrum();
    let a = snr_budget(&sc, &s, &windows(100.0)).unwrap();
    let b = snr_budget(&sc, &s, &windows(400.0)).unwrap();
    assert!((b.snr_ratio / a.snr_ratio - 2.0).abs() < 1e-12);
    assert!(a.variance > 0.0 && a.fresnel_bound > 0.0);
    let z = snr_budget(&default_scene(8, 4.0, 10.0, 0.0), &s, &windows(100.0)).unwrap();
    assert_eq!(z.snr_ratio, 0.0);
}

#[test]
fn implied_rate_for_cellular_band() {
    let c0 = 3e8;
    let w0 = 2.0 * PI * 3e9;
    let lam = 0.1;
    let ms = Metasurface::new(
        Vec3::new(0.0, 0.0, -5.0),
        Vec3::new(0.0, 0.0, 1.0),
        1.0,
        10,
        tunable(lam),
    )
    .unwrap();
    let xr = Vec3::new(0.0, 0.0, 5.0);
    let sc = Scene {
        background: Background::new(c0).unwrap(),
        shell_radius: 100.0,
        metasurface: ms,
        receivers: ReceiverPair::new(xr, xr + Vec3::new(lam / 2.0, 0.0, 0.0)).unwrap(),
    };
    let s = NoiseSpectrum::new(w0, 2.0 * PI * 1e7, SpectrumShape::Boxcar).unwrap();
    let w = WindowSpec::new(100.0 / s.bandwidth, 1.0 / s.bandwidth).unwrap();
    let lb = snr_budget(&sc, &s, &w).unwrap();
    assert!((lb.implied_rate - 2.0 * PI * 1e7 * 1e4 * 1e-4 / (10.0 * 1e4)).abs() < 1e-6);
}
