//! Synthesis of stationary Gaussian wave fields at the two receivers.
//!
//! Each slot of duration `2T` is an independent periodic segment
//! `u(t) = sum_m (A_m exp(-i w_m t) + c.c.)` on the bin grid `w_m = m pi / T`
//! with `E[conj(A_m) B_m] = F(w_m) Q(w_m, xr, xrp) dw / 2pi`. The per-bin
//! 2x2 covariance is either factorised directly (Gram route) or realised by
//! superposing independent point sources on the shell.

use crate::error::{Error, Result};
use crate::kernel::{q_expansion, q_quadrature, NoiseSpectrum, WindowSpec};
use crate::link::SlotSchedule;
use crate::media::{green_full, Background, Inclusion, Vec3};
use crate::numeric::{gauss_legendre, next_fft_len};
use crate::scene::{make_shell, Scene};
use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

pub use crate::scene::{ReceiverPair, SourceShell};

/// Stream keys for segments outside the slot grid.
pub const KEY_PRE: u64 = u64::MAX;
pub const KEY_POST: u64 = u64::MAX - 1;

pub(crate) const TAG_FIELD: u64 = 0;
pub(crate) const TAG_NOISE: u64 = 1 << 32;
pub(crate) const TAG_NODE: u64 = 2 << 32;
pub(crate) const TAG_BITS: u64 = 3 << 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RealizationSeed {
    pub master: u64,
    pub index: u64,
}

impl RealizationSeed {
    pub fn new(master: u64, index: u64) -> Self {
        RealizationSeed { master, index }
    }
}

/// Counter-based stream: ChaCha keyed by `(master, realization, a, b)`.
pub(crate) struct Stream(ChaCha8Rng);

impl Stream {
    pub(crate) fn new(seed: RealizationSeed, a: u64, b: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.master.to_le_bytes());
        key[8..16].copy_from_slice(&seed.index.to_le_bytes());
        key[16..24].copy_from_slice(&a.to_le_bytes());
        key[24..].copy_from_slice(&b.to_le_bytes());
        Stream(ChaCha8Rng::from_seed(key))
    }

    /// Position at the `i`-th block of `words` 32-bit words.
    pub(crate) fn at(mut self, i: u64, words: u64) -> Self {
        self.0.set_word_pos((i * words) as u128);
        self
    }

    pub(crate) fn uniform_open(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    pub(crate) fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Circular complex normal with `E|z|^2 = 1` (Box-Muller, two draws).
    pub(crate) fn complex_normal(&mut self) -> Complex64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform_open();
        let r = (-u1.ln()).sqrt();
        Complex64::from_polar(r, 2.0 * PI * u2)
    }
}

/// Where the per-bin covariance comes from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthMethod {
    /// 2x2 covariance from the first-order kernel expansion.
    GramExpansion,
    /// 2x2 covariance from shell quadrature of the full Green's function.
    GramQuadrature { n_nodes: usize },
    /// Independent sources at every shell node, superposed at the receivers.
    NodeSuperposition { n_nodes: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthOptions {
    pub method: SynthMethod,
    /// Sampling rate relative to the minimum `5 (w0 + B w_max) / 2pi`.
    pub oversample: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            method: SynthMethod::GramExpansion,
            oversample: 1.0,
        }
    }
}

/// Sampled fields at both receivers.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldRecord {
    pub channels: [Vec<f64>; 2],
    pub dt: f64,
    /// Time of sample 0.
    pub t0: f64,
    /// Slot start times followed by the end of the last slot.
    pub slot_boundaries: Vec<f64>,
}

const FLD_MAGIC: &[u8; 8] = b"AMBFLD01";

impl FieldRecord {
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Index of the sample nearest to `t`.
    pub fn index_of(&self, t: f64) -> isize {
        ((t - self.t0) / self.dt).round() as isize
    }

    /// Binary layout, all little endian: magic `AMBFLD01`, u64 channel count,
    /// u64 samples per channel, f64 dt, f64 t0, u64 boundary count, the
    /// boundaries as f64, then channel-major f64 samples.
    pub fn write_fld(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(48 + 8 * (self.slot_boundaries.len() + 2 * self.len()));
        buf.extend_from_slice(FLD_MAGIC);
        buf.extend_from_slice(&(self.channels.len() as u64).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        buf.extend_from_slice(&self.dt.to_le_bytes());
        buf.extend_from_slice(&self.t0.to_le_bytes());
        buf.extend_from_slice(&(self.slot_boundaries.len() as u64).to_le_bytes());
        for b in &self.slot_boundaries {
            buf.extend_from_slice(&b.to_le_bytes());
        }
        for ch in &self.channels {
            for v in ch {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read_fld(path: &Path) -> Result<FieldRecord> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > bytes.len() {
                return Err(Error::Format("truncated field record".into()));
            }
            let s = &bytes[pos..pos + n];
            pos += n;
            Ok(s)
        };
        if take(8)? != FLD_MAGIC {
            return Err(Error::Format("not a field record (bad magic)".into()));
        }
        let u64_of = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap());
        let f64_of = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
        let nch = u64_of(take(8)?) as usize;
        if nch != 2 {
            return Err(Error::Format(format!("expected 2 channels, found {nch}")));
        }
        let n = u64_of(take(8)?) as usize;
        let dt = f64_of(take(8)?);
        let t0 = f64_of(take(8)?);
        let nb = u64_of(take(8)?) as usize;
        let mut slot_boundaries = Vec::with_capacity(nb);
        for _ in 0..nb {
            slot_boundaries.push(f64_of(take(8)?));
        }
        let mut chans: [Vec<f64>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
        for ch in chans.iter_mut() {
            let raw = take(8 * n)?;
            ch.extend(raw.chunks_exact(8).map(f64_of));
        }
        if !(dt > 0.0) {
            return Err(Error::Format("non-positive sample interval".into()));
        }
        Ok(FieldRecord {
            channels: chans,
            dt,
            t0,
            slot_boundaries,
        })
    }
}

/// Lower-triangular factor of one bin's 2x2 covariance.
#[derive(Clone, Copy, Debug)]
struct Chol {
    l11: f64,
    l21: Complex64,
    l22: f64,
}

fn cholesky(s: f64, q11: f64, q22: f64, q12: Complex64) -> Result<Chol> {
    let a11 = s * q11;
    let a22 = s * q22;
    let a21 = q12 * s;
    if a11 < 0.0 || a22 < 0.0 {
        return Err(Error::Regime(vec![
            "kernel autospectrum is negative; the inclusion strength exceeds the first-order model".into(),
        ]));
    }
    let l11 = a11.sqrt();
    let l21 = if l11 > 0.0 { a21 / l11 } else { Complex64::new(0.0, 0.0) };
    let d = a22 - l21.norm_sqr();
    if d < -1e-12 * a22.max(a11) {
        return Err(Error::Regime(vec![
            "kernel matrix is not positive semidefinite; reduce the inclusion strength".into(),
        ]));
    }
    Ok(Chol {
        l11,
        l21,
        l22: d.max(0.0).sqrt(),
    })
}

enum Factor {
    Gram([Vec<Chol>; 2]),
    /// Per level, per bin: Green's values at the nodes for both receivers,
    /// pre-scaled by the per-node amplitude standard deviation.
    Nodes([Vec<Vec<(Complex64, Complex64)>>; 2]),
}

/// Everything about a synthesis run that does not depend on the seed.
pub struct SynthPlan {
    pub dt: f64,
    /// Samples per slot (2T).
    pub slot_len: usize,
    /// Samples of lag guard before and after the slot grid.
    pub guard: usize,
    pub t_long: f64,
    /// Bin indices `m` (frequency `m * 2 pi / (slot_len dt)`).
    pub bins: Vec<usize>,
    /// `(1/2pi) int_cell F dw` per bin.
    pub bin_power: Vec<f64>,
    factor: Factor,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl std::fmt::Debug for SynthPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SynthPlan")
            .field("dt", &self.dt)
            .field("slot_len", &self.slot_len)
            .field("guard", &self.guard)
            .field("bins", &self.bins.len())
            .finish()
    }
}

impl SynthPlan {
    pub fn new(scene: &Scene, spectrum: &NoiseSpectrum, windows: &WindowSpec, opts: &SynthOptions) -> Result<Self> {
        if !(opts.oversample >= 1.0 && opts.oversample.is_finite()) {
            return Err(Error::domain("oversample must be at least 1"));
        }
        let b = spectrum.bandwidth;
        let w_max = spectrum.omega0 + b * spectrum.support();
        let dt_max = 2.0 * PI / (5.0 * opts.oversample * w_max);
        let t = windows.t_long;
        let slot_len = next_fft_len((2.0 * t / dt_max).ceil() as usize);
        let dt = 2.0 * t / slot_len as f64;
        let guard = (windows.psi.half_width() * windows.t_lag / dt).ceil() as usize + 2;
        let dw = 2.0 * PI / (slot_len as f64 * dt);
        let lo = spectrum.omega0 - b * spectrum.support();
        let hi = w_max;
        let m_lo = ((lo / dw) - 0.5).ceil().max(1.0) as usize;
        let m_hi = ((hi / dw) + 0.5).floor() as usize;
        let (gx, gw) = gauss_legendre(8);
        let mut bins = Vec::new();
        let mut bin_power = Vec::new();
        for m in m_lo..=m_hi {
            let c = m as f64 * dw;
            let a = (c - 0.5 * dw).max(lo);
            let z = (c + 0.5 * dw).min(hi);
            if z <= a {
                continue;
            }
            let mut p = 0.0;
            for (x, w) in gx.iter().zip(&gw) {
                p += w * spectrum.density(0.5 * (a + z) + 0.5 * (z - a) * x);
            }
            p *= 0.5 * (z - a) / (2.0 * PI);
            if p > 0.0 {
                bins.push(m);
                bin_power.push(p);
            }
        }
        if 2 * bins.last().copied().unwrap_or(0) >= slot_len {
            return Err(Error::refusal("band exceeds the sampling grid"));
        }
        let (xr, xrp) = (scene.receivers.xr, scene.receivers.xrp);
        let bg = &scene.background;
        let freqs: Vec<f64> = bins.iter().map(|&m| m as f64 * dw).collect();
        let factor = match opts.method {
            SynthMethod::GramExpansion | SynthMethod::GramQuadrature { .. } => {
                let mut levels: [Vec<Chol>; 2] = [Vec::new(), Vec::new()];
                for (li, on) in [false, true].into_iter().enumerate() {
                    let incs = scene.inclusions(on);
                    let shell = match opts.method {
                        SynthMethod::GramQuadrature { n_nodes } => Some(make_shell(scene.shell_radius, n_nodes)?),
                        _ => None,
                    };
                    let f: Vec<Result<Chol>> = freqs
                        .par_iter()
                        .zip(&bin_power)
                        .map(|(&w, &p)| {
                            let (q11, q22, q12) = kernel_triplet(bg, w, xr, xrp, &incs, shell.as_ref())?;
                            cholesky(p, q11, q22, q12)
                        })
                        .collect();
                    levels[li] = f.into_iter().collect::<Result<Vec<_>>>()?;
                }
                Factor::Gram(levels)
            }
            SynthMethod::NodeSuperposition { n_nodes } => {
                let shell = make_shell(scene.shell_radius, n_nodes)?;
                if shell.nodes.len() * bins.len() > 20_000_000 {
                    return Err(Error::refusal("node superposition table too large; use a Gram method"));
                }
                let mut levels: [Vec<Vec<(Complex64, Complex64)>>; 2] = [Vec::new(), Vec::new()];
                for (li, on) in [false, true].into_iter().enumerate() {
                    let incs = scene.inclusions(on);
                    let tab: Vec<Result<Vec<(Complex64, Complex64)>>> = freqs
                        .par_iter()
                        .zip(&bin_power)
                        .map(|(&w, &p)| {
                            let amp = (p * shell.weight).sqrt();
                            shell
                                .nodes
                                .iter()
                                .map(|y| {
                                    Ok((
                                        green_full(bg, w, xr, *y, &incs)? * amp,
                                        green_full(bg, w, xrp, *y, &incs)? * amp,
                                    ))
                                })
                                .collect()
                        })
                        .collect();
                    levels[li] = tab.into_iter().collect::<Result<Vec<_>>>()?;
                }
                Factor::Nodes(levels)
            }
        };
        let fft = FftPlanner::new().plan_fft_forward(slot_len);
        Ok(SynthPlan {
            dt,
            slot_len,
            guard,
            t_long: t,
            bins,
            bin_power,
            factor,
            fft,
        })
    }

    /// One periodic slot segment for both receivers.
    pub fn segment(&self, on: bool, seed: RealizationSeed, slot_key: u64) -> [Vec<f64>; 2] {
        let n = self.slot_len;
        let mut w = vec![Complex64::new(0.0, 0.0); n];
        let li = on as usize;
        match &self.factor {
            Factor::Gram(levels) => {
                let f = &levels[li];
                for (i, &m) in self.bins.iter().enumerate() {
                    let mut st = Stream::new(seed, TAG_FIELD, slot_key).at(i as u64, 8);
                    let z1 = st.complex_normal();
                    let z2 = st.complex_normal();
                    let c = f[i];
                    let a = z1 * c.l11;
                    let b = c.l21 * z1 + z2 * c.l22;
                    place(&mut w, m, a, b);
                }
            }
            Factor::Nodes(levels) => {
                let tab = &levels[li];
                let nodes = tab.first().map_or(0, |t| t.len());
                let mut acc = vec![(Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)); self.bins.len()];
                for k in 0..nodes {
                    let mut st = Stream::new(seed, TAG_NODE | k as u64, slot_key);
                    for (i, slot) in acc.iter_mut().enumerate() {
                        let z = st.complex_normal();
                        let (gx, gy) = tab[i][k];
                        slot.0 += gx * z;
                        slot.1 += gy * z;
                    }
                }
                for (i, &m) in self.bins.iter().enumerate() {
                    place(&mut w, m, acc[i].0, acc[i].1);
                }
            }
        }
        self.fft.process(&mut w);
        [w.iter().map(|c| c.re).collect(), w.iter().map(|c| c.im).collect()]
    }

    /// Full record: guard, `levels.len()` slots, guard.
    pub fn realize(&self, levels: &[bool], seed: RealizationSeed) -> FieldRecord {
        let n = self.slot_len;
        let g = self.guard;
        let total = levels.len() * n + 2 * g;
        let mut ch = [Vec::with_capacity(total), Vec::with_capacity(total)];
        let segs: Vec<[Vec<f64>; 2]> = levels
            .par_iter()
            .enumerate()
            .map(|(k, &on)| self.segment(on, seed, k as u64))
            .collect();
        let pre = self.segment(false, seed, KEY_PRE);
        let post = self.segment(false, seed, KEY_POST);
        for c in 0..2 {
            ch[c].extend_from_slice(&pre[c][n - g..]);
            for s in &segs {
                ch[c].extend_from_slice(&s[c]);
            }
            ch[c].extend_from_slice(&post[c][..g]);
        }
        let slot_t = n as f64 * self.dt;
        FieldRecord {
            channels: ch,
            dt: self.dt,
            t0: -(g as f64) * self.dt,
            slot_boundaries: (0..=levels.len()).map(|k| k as f64 * slot_t).collect(),
        }
    }
}

fn place(w: &mut [Complex64], m: usize, a: Complex64, b: Complex64) {
    let n = w.len();
    let i = Complex64::new(0.0, 1.0);
    w[m] += a + i * b;
    w[n - m] += a.conj() + i * b.conj();
}

fn kernel_triplet(
    bg: &Background,
    w: f64,
    xr: Vec3,
    xrp: Vec3,
    incs: &[Inclusion],
    shell: Option<&SourceShell>,
) -> Result<(f64, f64, Complex64)> {
    match shell {
        None => Ok((
            q_expansion(bg, w, xr, xr, incs)?.total().re,
            q_expansion(bg, w, xrp, xrp, incs)?.total().re,
            q_expansion(bg, w, xr, xrp, incs)?.total(),
        )),
        Some(s) => Ok((
            q_quadrature(bg, w, xr, xr, incs, s)?.re,
            q_quadrature(bg, w, xrp, xrp, incs, s)?.re,
            q_quadrature(bg, w, xr, xrp, incs, s)?,
        )),
    }
}

/// One realization of the fields over the whole schedule.
pub fn synth_realization(
    scene: &Scene,
    spectrum: &NoiseSpectrum,
    schedule: &SlotSchedule,
    windows: &WindowSpec,
    seed: RealizationSeed,
    opts: &SynthOptions,
) -> Result<FieldRecord> {
    if (schedule.t_long - windows.t_long).abs() > 1e-12 * windows.t_long {
        return Err(Error::domain("schedule slot length and window T disagree"));
    }
    let plan = SynthPlan::new(scene, spectrum, windows, opts)?;
    Ok(plan.realize(&schedule.levels(), seed))
}

/// Independent stationary Gaussian noise added to each channel, covariance
/// `sigma^2 exp(-pi t^2 / t_meas^2)`. Generated spectrally per slot block
/// (and per guard block) with the sampled, aliased spectrum.
pub fn add_measurement_noise(
    record: &FieldRecord,
    sigma: f64,
    t_meas: f64,
    seed: RealizationSeed,
) -> Result<FieldRecord> {
    if !(t_meas >= 2.0 * record.dt) {
        return Err(Error::refusal(format!(
            "t_meas = {t_meas} must be at least two samples ({})",
            2.0 * record.dt
        )));
    }
    let mut out = record.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    let bounds: Vec<usize> = record
        .slot_boundaries
        .iter()
        .map(|&t| record.index_of(t).clamp(0, record.len() as isize) as usize)
        .collect();
    let mut blocks = Vec::new();
    let mut start = 0usize;
    for (k, &b) in bounds.iter().enumerate() {
        if b > start {
            blocks.push((start, b, if k == 0 { KEY_PRE } else { (k - 1) as u64 }));
        }
        start = b;
    }
    if record.len() > start {
        blocks.push((start, record.len(), KEY_POST));
    }
    let mut planner = FftPlanner::new();
    for (c, ch) in out.channels.iter_mut().enumerate() {
        for &(a, b, key) in &blocks {
            let noise = noise_block(&mut planner, b - a, record.dt, sigma, t_meas, seed, c as u64, key);
            for (x, v) in ch[a..b].iter_mut().zip(noise) {
                *x += v;
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn noise_block(
    planner: &mut FftPlanner<f64>,
    n: usize,
    dt: f64,
    sigma: f64,
    t_meas: f64,
    seed: RealizationSeed,
    channel: u64,
    key: u64,
) -> Vec<f64> {
    let psd = |w: f64| sigma * sigma * t_meas * (-(w * t_meas).powi(2) / (4.0 * PI)).exp();
    let wn = 2.0 * PI / dt;
    let mut st = Stream::new(seed, TAG_NOISE | channel, key);
    let mut y: Vec<Complex64> = (0..n)
        .map(|k| {
            let kk = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
            let w = kk * wn / n as f64;
            let mut lam = 0.0;
            for p in -3..=3 {
                lam += psd(w + p as f64 * wn);
            }
            st.complex_normal() * (lam / dt / n as f64).sqrt()
        })
        .collect();
    planner.plan_fft_inverse(n).process(&mut y);
    y.iter().map(|c| c.re * 2f64.sqrt()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counter_streams_are_position_addressable() {
        let s = RealizationSeed::new(7, 3);
        let mut a = Stream::new(s, 0, 5);
        let _ = a.complex_normal();
        let _ = a.complex_normal();
        let x = a.complex_normal();
        let mut b = Stream::new(s, 0, 5).at(1, 8);
        assert_eq!(b.complex_normal(), x);
        let mut c = Stream::new(s, 0, 6);
        assert_ne!(c.complex_normal(), Stream::new(s, 0, 5).complex_normal());
    }

    #[test]
    fn cholesky_reproduces_covariance() {
        let q12 = Complex64::new(0.01, -0.03);
        let c = cholesky(2.0, 0.08, 0.07, q12).unwrap();
        assert!((c.l11 * c.l11 - 0.16).abs() < 1e-15);
        assert!((c.l21 * c.l11 - q12 * 2.0).norm() < 1e-15);
        assert!((c.l21.norm_sqr() + c.l22 * c.l22 - 0.14).abs() < 1e-15);
        assert!(cholesky(1.0, 0.01, 0.01, Complex64::new(0.1, 0.0)).is_err());
    }
}
