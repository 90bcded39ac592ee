use ambientlink::ecsd::*;
use ambientlink::kernel::{WindowShape, WindowSpec};
use ambientlink::link::encode;
use ambientlink::synth::FieldRecord;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

const W0: f64 = 2.0 * PI;

fn record_from(f: impl Fn(f64) -> (f64, f64), n: usize, dt: f64, t0: f64) -> FieldRecord {
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y) = f(t0 + i as f64 * dt);
        a.push(x);
        b.push(y);
    }
    FieldRecord {
        channels: [a, b],
        dt,
        t0,
        slot_boundaries: vec![],
    }
}

fn random_record(n: usize, dt: f64, t0: f64, seed: u64) -> FieldRecord {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let a = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
    let b = (0..n).map(|_| r.random::<f64>() - 0.5).collect();
    FieldRecord {
        channels: [a, b],
        dt,
        t0,
        slot_boundaries: vec![],
    }
}

#[test]
fn zero_record_gives_zero() {
    let w = WindowSpec::new(20.0, 3.0).unwrap();
    let r = record_from(|_| (0.0, 0.0), 4000, 0.03, -30.0);
    assert_eq!(ecsd_at(&r, W0, 20.0, &w).unwrap(), Complex64::new(0.0, 0.0));
}

#[test]
fn pure_tones_match_analytic_value() {
    let theta = 0.7;
    let (t, tp) = (30.0, 4.0);
    let w = WindowSpec::new(t, tp).unwrap();
    let dt = 2.0 * PI / (5.0 * 1.1 * W0);
    let t0 = -20.0;
    let n = ((2.0 * t + 40.0) / dt) as usize + 10;
    let r = record_from(|s| ((W0 * s).cos(), (W0 * s + theta).cos()), n, dt, t0);
    for omega in [W0, 1.02 * W0] {
        let s = ecsd_at(&r, omega, t, &w).unwrap();
        let psi = WindowShape::Gaussian;
        let want = 0.25
            * (Complex64::from_polar(psi.fourier(tp * (omega - W0)), -theta)
                + Complex64::from_polar(psi.fourier(tp * (omega + W0)), theta));
        // leftover 2w0 term is bounded by the lag-transform at omega
        let slack = 0.5 * psi.fourier(tp * omega) + 1e-9;
        assert!(
            (s - want).norm() <= slack + 1e-6 * want.norm().max(1e-3),
            "omega {omega}: {s} vs {want}"
        );
    }
}

#[test]
fn transform_path_matches_direct_sum() {
    // enough lags to take the transform path
    let dt = 0.01;
    let w = WindowSpec::new(8.0, 0.6).unwrap();
    for (seed, tc) in [(1u64, 10.0), (2, 10.003), (3, 10.0071)] {
        let r = random_record(2600, dt, -1.0, seed);
        let a = ecsd_at(&r, W0, tc, &w).unwrap();
        let b = ecsd_at_direct(&r, W0, tc, &w).unwrap();
        assert!((a - b).norm() <= 1e-10 * b.norm(), "{a} vs {b}");
    }
}

#[test]
fn swapping_receivers_conjugates() {
    let w = WindowSpec::new(5.0, 0.5).unwrap();
    let r = random_record(1500, 0.01, 0.0, 9);
    let mut s = r.clone();
    s.channels.swap(0, 1);
    let a = ecsd_at(&r, W0, 7.0, &w).unwrap();
    let b = ecsd_at(&s, W0, 7.0, &w).unwrap();
    assert!((a - b.conj()).norm() <= 1e-12 * a.norm());
}

#[test]
fn scaling_and_polarization_identity() {
    let w = WindowSpec::new(5.0, 0.3).unwrap();
    let r = random_record(1500, 0.01, 0.0, 4);
    let a = ecsd_at(&r, W0, 7.0, &w).unwrap();
    let mut s = r.clone();
    for c in s.channels.iter_mut() {
        for v in c.iter_mut() {
            *v *= 3.0;
        }
    }
    let b = ecsd_at(&s, W0, 7.0, &w).unwrap();
    assert!((b - a * 9.0).norm() <= 1e-12 * b.norm());
    for seed in 10..15 {
        let r = random_record(1500, 0.01, 0.0, seed);
        let s = ecsd_at(&r, 1.1 * W0, 7.0, &w).unwrap();
        let p = ecsd_psd_diff(&r, 1.1 * W0, 7.0, &w).unwrap();
        assert!((p - s.re).abs() <= 1e-10 * s.norm());
    }
}

#[test]
fn autospectrum_is_real() {
    let w = WindowSpec::new(5.0, 0.3).unwrap();
    let mut r = random_record(1500, 0.01, 0.0, 5);
    r.channels[1] = r.channels[0].clone();
    let s = ecsd_at(&r, W0, 7.0, &w).unwrap();
    assert!(s.im.abs() <= 1e-12 * s.re.abs());
}

#[test]
fn window_outside_record_refused() {
    let w = WindowSpec::new(5.0, 0.3).unwrap();
    let r = random_record(1000, 0.01, 0.0, 5);
    // needs [tc - 5 - 1.2, tc + 5 + 1.2] inside [0, 9.99]
    assert!(ecsd_at(&r, W0, 5.0, &w).is_err());
    let r = random_record(1300, 0.01, 0.0, 5);
    assert!(ecsd_at(&r, W0, 6.2, &w).is_ok());
}

#[test]
fn series_uses_schedule_centres_and_round_trips_csv() {
    let w = WindowSpec::new(2.0, 0.2).unwrap();
    let sched = encode(&[true, false], 1.0, 2.0, &[]).unwrap();
    let r = random_record(1900, 0.01, -1.0, 6);
    let s = ecsd_series(&r, &sched, &w, W0).unwrap();
    assert_eq!(s.centers, vec![2.0, 6.0, 10.0, 14.0]);
    assert!(s.values.iter().all(|v| v.norm() > 0.0));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("ecsd_k.csv");
    s.write_csv(&p, "abc").unwrap();
    let back = EcsdSeries::read_csv(&p).unwrap();
    assert_eq!(back, s);
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("# config_hash=abc"));
}
