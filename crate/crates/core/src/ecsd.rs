//! Empirical cross spectral density of two sampled records:
//!
//! `S(w, tc) = int int u_r(t - tau/2) u_rp(t + tau/2) exp(i w tau)
//!             phi_T(t - tc) psi_T'(tau) dt dtau`
//!
//! discretised on the sample grid with `tau = m dt`, `t = (a + m/2) dt`,
//! so the sum runs over sample pairs `(a, a + m)`. `phi_T` is evaluated on the
//! half-sample grid and `psi_T'` is cut at its tabulated half-width.

use crate::error::{Error, Result};
use crate::kernel::WindowSpec;
use crate::link::SlotSchedule;
use crate::synth::FieldRecord;
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::path::Path;

/// ECSD values at the centre of every slot.
#[derive(Clone, Debug, PartialEq)]
pub struct EcsdSeries {
    pub omega: f64,
    pub centers: Vec<f64>,
    pub values: Vec<Complex64>,
}

/// Lag weights `dt^2 psi_T'(m dt) exp(i w m dt)` for `m = -M..=M`.
pub(crate) struct LagKernel {
    pub m: usize,
    pub w: Vec<Complex64>,
}

impl LagKernel {
    pub(crate) fn new(omega: f64, dt: f64, windows: &WindowSpec) -> Self {
        let m = (windows.psi.half_width() * windows.t_lag / dt).floor() as usize;
        let w = (-(m as isize)..=m as isize)
            .map(|k| {
                let tau = k as f64 * dt;
                Complex64::from_polar(dt * dt * windows.psi_t(tau), omega * tau)
            })
            .collect();
        LagKernel { m, w }
    }
}

/// Checks that the window plus lag guard fits in `[0, len)` and returns the
/// window centre in fractional sample units.
fn locate(len: usize, t0: f64, dt: f64, tc: f64, windows: &WindowSpec) -> Result<f64> {
    let c = (tc - t0) / dt;
    let reach = (windows.phi.half_width() * windows.t_long + windows.psi.half_width() * windows.t_lag) / dt;
    if c - reach < -1e-9 || c + reach > (len as f64 - 1.0) + 1e-9 {
        return Err(Error::refusal(format!(
            "window at t = {tc} with its lag guard does not fit in the record"
        )));
    }
    Ok(c)
}

/// `sum_a x[a] y[a] z[a]` with four independent partial sums.
#[inline]
fn dot3(x: &[f64], y: &[f64], z: &[f64]) -> f64 {
    let n = x.len().min(y.len()).min(z.len());
    let (x, y, z) = (&x[..n], &y[..n], &z[..n]);
    let mut acc = [0.0f64; 8];
    let cx = x.chunks_exact(8);
    let cy = y.chunks_exact(8);
    let cz = z.chunks_exact(8);
    let (rx, ry, rz) = (cx.remainder(), cy.remainder(), cz.remainder());
    for ((a, b), c) in cx.zip(cy).zip(cz) {
        for i in 0..8 {
            acc[i] += a[i] * b[i] * c[i];
        }
    }
    let mut tail = 0.0;
    for i in 0..rx.len() {
        tail += rx[i] * ry[i] * rz[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Per-lag sums `R_m = sum_a x[a] y[a+m] phi((a + m/2 - c) dt)`, `m = -M..=M`.
fn lag_sums(x: &[f64], y: &[f64], c: f64, dt: f64, m: usize, windows: &WindowSpec) -> Vec<f64> {
    let n = x.len();
    let half = windows.phi.half_width() * windows.t_long / dt;
    // phi on the two half-sample parities: even[j] at t-index j, odd[j] at j + 1/2
    let lo = ((c - half).floor() - 1.0).max(0.0) as usize;
    let hi = (((c + half).ceil() + 1.0) as usize).min(n);
    let even: Vec<f64> = (lo..hi).map(|j| windows.phi_t((j as f64 - c) * dt)).collect();
    let odd: Vec<f64> = (lo..hi).map(|j| windows.phi_t((j as f64 + 0.5 - c) * dt)).collect();
    let mi = m as isize;
    (-mi..=mi)
        .map(|k| {
            // t-index of the pair is a + k/2 = a + floor(k/2) (+ 1/2 if k odd)
            let sh = k.div_euclid(2);
            let tab = if k.rem_euclid(2) == 0 { &even } else { &odd };
            // need lo <= a + sh < hi, 0 <= a, a + k < n
            let a0 = (lo as isize - sh).max(0).max(-k);
            let a1 = (hi as isize - sh).min(n as isize).min(n as isize - k);
            if a1 <= a0 {
                return 0.0;
            }
            let (a0, a1) = (a0 as usize, a1 as usize);
            let t0 = (a0 as isize + sh) as usize - lo;
            dot3(
                &x[a0..a1],
                &y[(a0 as isize + k) as usize..(a1 as isize + k) as usize],
                &tab[t0..t0 + (a1 - a0)],
            )
        })
        .collect()
}

/// Lag count above which the transform-based evaluation is used.
const FFT_LAGS: usize = 192;

/// Same sums as [`lag_sums`] for the triangle window, via cross-correlations
/// over fixed index ranges plus explicit corrections at the moving edges.
fn lag_sums_triangle_fft(x: &[f64], y: &[f64], c: f64, dt: f64, m: usize, windows: &WindowSpec) -> Vec<f64> {
    let n = x.len();
    let w = windows.t_long / dt;
    let scale = dt / (windows.t_long * windows.t_long);
    let mi = m as isize;
    // for lag k the support in a is the open interval (c - k/2 - w, c - k/2 + w),
    // rising part a + k/2 - c <= 0, falling part > 0.
    // Fixed ranges at k = 0:
    let r_lo = (c - w).floor() as isize + 1; // first a with a - c > -w
    let r_hi = c.floor() as isize + 1; // first a with a - c > 0
    let f_hi = (c + w).ceil() as isize; // first a with a - c >= w
    let base = r_lo - mi - 1;
    let span = (f_hi - r_lo) as usize;
    let nf = crate::numeric::next_fft_len(span + 2 * m + 4);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nf);
    let inv = planner.plan_fft_inverse(nf);
    // y segment covering a + k for a in [r_lo, f_hi), |k| <= m
    let mut ys = vec![Complex64::new(0.0, 0.0); nf];
    for (i, v) in ys.iter_mut().enumerate().take((span as isize + 2 * mi + 2) as usize) {
        let idx = base + i as isize;
        if idx >= 0 && (idx as usize) < n {
            v.re = y[idx as usize];
        }
    }
    fwd.process(&mut ys);
    // correlation of x-weighted sequences over a fixed range [a_lo, a_hi):
    // returns C[k] = sum_a p[a] y[a + k] for k in -m..=m
    let corr = |a_lo: isize, a_hi: isize, wfun: &dyn Fn(isize) -> f64| -> Vec<f64> {
        let mut xs = vec![Complex64::new(0.0, 0.0); nf];
        for a in a_lo.max(0)..a_hi.min(n as isize) {
            // place at position (a - base) so that y index a + k sits at (a - base) + k
            xs[(a - base) as usize].re = x[a as usize] * wfun(a);
        }
        fwd.process(&mut xs);
        for (u, v) in xs.iter_mut().zip(&ys) {
            *u = u.conj() * v;
        }
        inv.process(&mut xs);
        (-mi..=mi)
            .map(|k| xs[k.rem_euclid(nf as isize) as usize].re / nf as f64)
            .collect()
    };
    // weights: rising (w + a + k/2 - c), falling (w - a - k/2 + c)
    // = affine in a: split into constant and a-linear parts (a measured from c)
    let rise0 = corr(r_lo, r_hi, &|_| 1.0);
    let rise1 = corr(r_lo, r_hi, &|a| a as f64 - c);
    let fall0 = corr(r_hi, f_hi, &|_| 1.0);
    let fall1 = corr(r_hi, f_hi, &|a| a as f64 - c);
    let ex = |a: isize, k: isize| -> f64 {
        if a < 0 || a as usize >= n || a + k < 0 || (a + k) as usize >= n {
            0.0
        } else {
            x[a as usize] * y[(a + k) as usize]
        }
    };
    (-mi..=mi)
        .enumerate()
        .map(|(i, k)| {
            let hk = 0.5 * k as f64;
            // exact weight for pair (a, a + k)
            let wt = |a: isize| -> f64 { (w - (a as f64 + hk - c).abs()).max(0.0) };
            // fixed-range contribution, using the branch assigned by k = 0 ranges
            let mut s = (w + hk) * rise0[i] + rise1[i] + (w - hk) * fall0[i] - fall1[i];
            // correct pairs whose branch or support membership differs for this k
            let lo_k = (c - hk - w).floor() as isize + 1;
            let mid_k = (c - hk).floor() as isize + 1;
            let hi_k = (c - hk + w).ceil() as isize;
            let fixed_weight = |a: isize| -> f64 {
                if a >= r_lo && a < r_hi {
                    w + a as f64 + hk - c
                } else if a >= r_hi && a < f_hi {
                    w - a as f64 - hk + c
                } else {
                    0.0
                }
            };
            for (p, q) in [
                (lo_k.min(r_lo), lo_k.max(r_lo)),
                (mid_k.min(r_hi), mid_k.max(r_hi)),
                (hi_k.min(f_hi), hi_k.max(f_hi)),
            ] {
                for a in p..q {
                    let e = ex(a, k);
                    if e != 0.0 {
                        s += (wt(a) - fixed_weight(a)) * e;
                    }
                }
            }
            s * scale
        })
        .collect()
}

fn ecsd_core(x: &[f64], y: &[f64], c: f64, dt: f64, kernel: &LagKernel, windows: &WindowSpec) -> Complex64 {
    let r = if kernel.m > FFT_LAGS && windows.phi == crate::kernel::WindowShape::Triangle {
        lag_sums_triangle_fft(x, y, c, dt, kernel.m, windows)
    } else {
        lag_sums(x, y, c, dt, kernel.m, windows)
    };
    let mut s = Complex64::new(0.0, 0.0);
    for (rk, wk) in r.iter().zip(&kernel.w) {
        s += wk * rk;
    }
    s
}

/// Direct evaluation, for checking the transform-based path.
pub fn ecsd_at_direct(record: &FieldRecord, omega: f64, t_center: f64, windows: &WindowSpec) -> Result<Complex64> {
    let c = locate(record.len(), record.t0, record.dt, t_center, windows)?;
    let k = LagKernel::new(omega, record.dt, windows);
    let r = lag_sums(&record.channels[0], &record.channels[1], c, record.dt, k.m, windows);
    Ok(r.iter().zip(&k.w).map(|(a, b)| b * a).sum())
}

pub fn ecsd_at(record: &FieldRecord, omega: f64, t_center: f64, windows: &WindowSpec) -> Result<Complex64> {
    let c = locate(record.len(), record.t0, record.dt, t_center, windows)?;
    let k = LagKernel::new(omega, record.dt, windows);
    Ok(ecsd_core(
        &record.channels[0],
        &record.channels[1],
        c,
        record.dt,
        &k,
        windows,
    ))
}

/// ECSD on raw slices, `t0` being the time of sample 0.
pub(crate) fn ecsd_slices(
    x: &[f64],
    y: &[f64],
    t0: f64,
    dt: f64,
    t_center: f64,
    kernel: &LagKernel,
    windows: &WindowSpec,
) -> Result<Complex64> {
    let c = locate(x.len(), t0, dt, t_center, windows)?;
    Ok(ecsd_core(x, y, c, dt, kernel, windows))
}

/// `(1/4)[S(u_r + u_rp) - S(u_r - u_rp)]` from two autospectra; equals `Re S`.
pub(crate) fn psd_diff_slices(
    x: &[f64],
    y: &[f64],
    t0: f64,
    dt: f64,
    t_center: f64,
    kernel: &LagKernel,
    windows: &WindowSpec,
) -> Result<f64> {
    let c = locate(x.len(), t0, dt, t_center, windows)?;
    let sum: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
    let dif: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let sp = ecsd_core(&sum, &sum, c, dt, kernel, windows);
    let sm = ecsd_core(&dif, &dif, c, dt, kernel, windows);
    Ok(0.25 * (sp.re - sm.re))
}

pub fn ecsd_psd_diff(record: &FieldRecord, omega: f64, t_center: f64, windows: &WindowSpec) -> Result<f64> {
    let k = LagKernel::new(omega, record.dt, windows);
    psd_diff_slices(
        &record.channels[0],
        &record.channels[1],
        record.t0,
        record.dt,
        t_center,
        &k,
        windows,
    )
}

/// ECSD at the centre of every slot of `schedule`.
pub fn ecsd_series(
    record: &FieldRecord,
    schedule: &SlotSchedule,
    windows: &WindowSpec,
    omega: f64,
) -> Result<EcsdSeries> {
    let centers = schedule.slot_centers();
    let k = LagKernel::new(omega, record.dt, windows);
    let values: Vec<Result<Complex64>> = centers
        .par_iter()
        .map(|&tc| {
            ecsd_slices(
                &record.channels[0],
                &record.channels[1],
                record.t0,
                record.dt,
                tc,
                &k,
                windows,
            )
        })
        .collect();
    Ok(EcsdSeries {
        omega,
        centers,
        values: values.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

impl EcsdSeries {
    pub fn write_csv(&self, path: &Path, config_hash: &str) -> Result<()> {
        let mut s = format!(
            "# config_hash={config_hash} omega={} units: t_center in time units, S in field^2 time^2\n",
            self.omega
        );
        s.push_str("k,t_center,re_S,im_S\n");
        for (k, (t, v)) in self.centers.iter().zip(&self.values).enumerate() {
            s.push_str(&format!("{k},{t:.17e},{:.17e},{:.17e}\n", v.re, v.im));
        }
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<EcsdSeries> {
        let text = std::fs::read_to_string(path)?;
        let mut omega = f64::NAN;
        let mut centers = Vec::new();
        let mut values = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(h) = line.strip_prefix('#') {
                for tok in h.split_whitespace() {
                    if let Some(v) = tok.strip_prefix("omega=") {
                        omega = v
                            .parse()
                            .map_err(|_| Error::Format(format!("bad omega in line {}", ln + 1)))?;
                    }
                }
                continue;
            }
            if line.starts_with('k') {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Format(format!("line {}: expected 4 fields", ln + 1)));
            }
            let p = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("line {}: bad number {s}", ln + 1)))
            };
            centers.push(p(f[1])?);
            values.push(Complex64::new(p(f[2])?, p(f[3])?));
        }
        Ok(EcsdSeries { omega, centers, values })
    }
}
