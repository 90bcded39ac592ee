//! Bit encoding onto the slot schedule, slot-difference decoding and
//! Monte Carlo bit-error-rate runs.

use crate::ecsd::{ecsd_slices, psd_diff_slices, EcsdSeries, LagKernel};
use crate::error::{Error, Result};
use crate::kernel::{NoiseSpectrum, WindowSpec};
use crate::numeric::wilson_interval;
use crate::scene::{angle_between, Scene};
use crate::synth::{noise_block, RealizationSeed, Stream, SynthOptions, SynthPlan, KEY_POST, KEY_PRE, TAG_BITS};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DEFAULT_PREAMBLE: [bool; 8] = [true; 8];

/// Known preamble followed by payload; bit `k` drives slot `2k + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct SlotSchedule {
    pub bits: Vec<bool>,
    pub preamble_len: usize,
    pub t_long: f64,
    pub rho1: f64,
}

impl SlotSchedule {
    pub fn n_bits(&self) -> usize {
        self.bits.len()
    }

    pub fn n_slots(&self) -> usize {
        2 * self.bits.len()
    }

    pub fn duration(&self) -> f64 {
        4.0 * self.bits.len() as f64 * self.t_long
    }

    /// On/off level of each 2T slot.
    pub fn levels(&self) -> Vec<bool> {
        self.bits.iter().flat_map(|&b| [false, b]).collect()
    }

    /// Window centres `(2k + 1) T`.
    pub fn slot_centers(&self) -> Vec<f64> {
        (0..self.n_slots()).map(|k| (2 * k + 1) as f64 * self.t_long).collect()
    }

    /// `Im rho` added by the array at time `t`.
    pub fn im_rho(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        let k = (t / (2.0 * self.t_long)).floor() as usize;
        match self.levels().get(k) {
            Some(true) => self.rho1,
            _ => 0.0,
        }
    }

    pub fn payload(&self) -> &[bool] {
        &self.bits[self.preamble_len..]
    }

    /// Payload bits per unit time.
    pub fn payload_rate(&self) -> f64 {
        (self.bits.len() - self.preamble_len) as f64 / self.duration()
    }
}

pub fn encode(payload: &[bool], rho1: f64, t_long: f64, preamble: &[bool]) -> Result<SlotSchedule> {
    if payload.is_empty() && preamble.is_empty() {
        return Err(Error::domain("nothing to encode"));
    }
    if !(rho1 >= 0.0 && rho1.is_finite()) {
        return Err(Error::domain("rho1 must be finite and non-negative"));
    }
    if !(t_long > 0.0 && t_long.is_finite()) {
        return Err(Error::domain("T must be positive"));
    }
    let mut bits = preamble.to_vec();
    bits.extend_from_slice(payload);
    Ok(SlotSchedule {
        bits,
        preamble_len: preamble.len(),
        t_long,
        rho1,
    })
}

/// `Delta_k = S_{2k+1} - S_{2k}`.
pub fn delta_series(values: &[Complex64]) -> Result<Vec<Complex64>> {
    if !values.len().is_multiple_of(2) {
        return Err(Error::refusal("ECSD series has odd length"));
    }
    Ok(values.chunks_exact(2).map(|p| p[1] - p[0]).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeMode {
    Complex,
    PsdDiff,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeOptions {
    pub mode: DecodeMode,
    /// Refuse when `|g| / floor` is below `threshold`.
    pub strict: bool,
    pub threshold: f64,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            mode: DecodeMode::Complex,
            strict: true,
            threshold: 5.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeResult {
    /// Decisions for every bit, preamble included.
    pub bits: Vec<bool>,
    pub preamble_len: usize,
    pub deltas: Vec<Complex64>,
    pub signature: Complex64,
    pub margins: Vec<f64>,
    pub noise_floor: f64,
    /// `|g| / noise_floor`.
    pub signature_ratio: f64,
    /// Preamble bits decoded wrongly.
    pub preamble_errors: usize,
}

impl DecodeResult {
    pub fn payload(&self) -> &[bool] {
        &self.bits[self.preamble_len..]
    }

    pub fn write_csv(&self, path: &Path, config_hash: &str) -> Result<()> {
        let mut s = format!(
            "# config_hash={config_hash} signature={:.17e}{:+.17e}i noise_floor={:.6e} units: Delta in field^2 time^2, m dimensionless\n",
            self.signature.re, self.signature.im, self.noise_floor
        );
        s.push_str("k,re_Delta,im_Delta,m,bit\n");
        for (k, ((d, m), b)) in self.deltas.iter().zip(&self.margins).zip(&self.bits).enumerate() {
            s.push_str(&format!("{k},{:.17e},{:.17e},{:.17e},{}\n", d.re, d.im, m, *b as u8));
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Slot-difference decoder with a preamble-estimated signature.
pub fn decode(values: &[Complex64], preamble: &[bool], opts: &DecodeOptions) -> Result<DecodeResult> {
    let vals: Vec<Complex64> = match opts.mode {
        DecodeMode::Complex => values.to_vec(),
        DecodeMode::PsdDiff => values.iter().map(|v| Complex64::new(v.re, 0.0)).collect(),
    };
    let deltas = delta_series(&vals)?;
    if preamble.len() > deltas.len() {
        return Err(Error::domain("preamble longer than the series"));
    }
    let ones: Vec<usize> = (0..preamble.len()).filter(|&k| preamble[k]).collect();
    if ones.is_empty() {
        return Err(Error::domain("preamble needs at least one 1-bit"));
    }
    let g = ones.iter().map(|&k| deltas[k]).sum::<Complex64>() / ones.len() as f64;
    // floor: std of the mean of n_ones differences, from the off slots of the preamble
    let off: Vec<Complex64> = (0..preamble.len()).map(|k| vals[2 * k]).collect();
    let floor = if off.len() >= 2 {
        let mean = off.iter().sum::<Complex64>() / off.len() as f64;
        let var = off.iter().map(|v| (v - mean).norm_sqr()).sum::<f64>() / (off.len() - 1) as f64;
        (2.0 * var / ones.len() as f64).sqrt()
    } else {
        0.0
    };
    let ratio = if floor > 0.0 { g.norm() / floor } else { f64::INFINITY };
    if opts.strict && (ratio < opts.threshold || g.norm() == 0.0) {
        return Err(Error::UnreliableSignature {
            ratio,
            required: opts.threshold,
        });
    }
    let gg = g.norm_sqr();
    let margins: Vec<f64> = deltas
        .iter()
        .map(|d| if gg > 0.0 { (d * g.conj()).re / gg } else { 0.0 })
        .collect();
    let bits: Vec<bool> = margins.iter().map(|&m| m > 0.5).collect();
    let preamble_errors = preamble.iter().zip(&bits).filter(|(a, b)| a != b).count();
    Ok(DecodeResult {
        bits,
        preamble_len: preamble.len(),
        deltas,
        signature: g,
        margins,
        noise_floor: floor,
        signature_ratio: ratio,
        preamble_errors,
    })
}

pub fn decode_series(series: &EcsdSeries, preamble: &[bool], opts: &DecodeOptions) -> Result<DecodeResult> {
    decode(&series.values, preamble, opts)
}

/// Angle between `xrp - xr` and `z0 - xr`.
pub fn angle_of(scene: &Scene) -> Result<f64> {
    let a = scene.receivers.xrp - scene.receivers.xr;
    let b = scene.metasurface.center - scene.receivers.xr;
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return Err(Error::domain("angle undefined for coincident points"));
    }
    Ok(angle_between(a, b))
}

/// Everything a BER run needs besides the seed.
#[derive(Clone, Debug)]
pub struct BerSetup {
    pub scene: Scene,
    pub spectrum: NoiseSpectrum,
    pub windows: WindowSpec,
    pub synth: SynthOptions,
    pub rho1: f64,
    pub preamble: Vec<bool>,
    /// `(sigma, t_meas)` of additive measurement noise.
    pub measurement_noise: Option<(f64, f64)>,
    pub decode: DecodeOptions,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BerStats {
    pub trials: usize,
    pub bits: u64,
    pub errors: u64,
    pub ber: f64,
    pub wilson: (f64, f64),
    /// Trials whose signature was below the reliability threshold.
    pub unreliable_trials: usize,
    pub mean_signature_ratio: f64,
}

/// Random payload of one trial.
pub fn trial_payload(seed: RealizationSeed, n_bits: usize) -> Vec<bool> {
    let mut st = Stream::new(seed, TAG_BITS, 0);
    let mut out = Vec::with_capacity(n_bits);
    while out.len() < n_bits {
        let w = st.next_u64();
        for i in 0..64 {
            if out.len() == n_bits {
                break;
            }
            out.push((w >> i) & 1 == 1);
        }
    }
    out
}

/// Slots processed together in [`slot_statistics`].
const CHUNK: usize = 32;

/// ECSD (or PSD difference) at every slot centre of `levels`, synthesising
/// the record chunk by chunk. Sample values match [`SynthPlan::realize`] plus
/// `add_measurement_noise` on the full record.
pub fn slot_statistics(
    plan: &SynthPlan,
    levels: &[bool],
    windows: &WindowSpec,
    omega: f64,
    seed: RealizationSeed,
    noise: Option<(f64, f64)>,
    mode: DecodeMode,
) -> Result<Vec<Complex64>> {
    let n = plan.slot_len;
    let g = plan.guard;
    let dt = plan.dt;
    if let Some((_, tm)) = noise {
        if !(tm >= 2.0 * dt) {
            return Err(Error::refusal(format!(
                "t_meas = {tm} must be at least two samples ({})",
                2.0 * dt
            )));
        }
    }
    let kernel = LagKernel::new(omega, dt, windows);
    let n_slots = levels.len();
    let mut out = Vec::with_capacity(n_slots);
    let seg = |k: isize| -> [Vec<f64>; 2] {
        let (on, key, len) = if k < 0 {
            (false, KEY_PRE, g)
        } else if k as usize >= n_slots {
            (false, KEY_POST, g)
        } else {
            (levels[k as usize], k as u64, n)
        };
        let mut s = plan.segment(on, seed, key);
        if k < 0 {
            for c in s.iter_mut() {
                c.drain(..n - g);
            }
        } else if k as usize >= n_slots {
            for c in s.iter_mut() {
                c.truncate(g);
            }
        }
        if let Some((sigma, tm)) = noise {
            if sigma != 0.0 {
                let mut planner = FftPlanner::new();
                for (c, ch) in s.iter_mut().enumerate() {
                    let e = noise_block(&mut planner, len, dt, sigma, tm, seed, c as u64, key);
                    for (x, v) in ch.iter_mut().zip(e) {
                        *x += v;
                    }
                }
            }
        }
        s
    };
    let mut k0 = 0usize;
    while k0 < n_slots {
        let k1 = (k0 + CHUNK).min(n_slots);
        let segs: Vec<[Vec<f64>; 2]> = ((k0 as isize - 1)..=(k1 as isize)).into_par_iter().map(seg).collect();
        let vals: Vec<Result<Complex64>> = (k0..k1)
            .into_par_iter()
            .map(|k| {
                let i = k - k0 + 1;
                let prev = &segs[i - 1];
                let next = &segs[i + 1];
                let tail = g.min(prev[0].len());
                let mut x = [Vec::with_capacity(n + 2 * g), Vec::with_capacity(n + 2 * g)];
                for c in 0..2 {
                    x[c].extend_from_slice(&prev[c][prev[c].len() - tail..]);
                    x[c].extend_from_slice(&segs[i][c]);
                    x[c].extend_from_slice(&next[c][..g.min(next[c].len())]);
                }
                let t0 = k as f64 * n as f64 * dt - tail as f64 * dt;
                let tc = (2 * k + 1) as f64 * windows.t_long;
                match mode {
                    DecodeMode::Complex => ecsd_slices(&x[0], &x[1], t0, dt, tc, &kernel, windows),
                    DecodeMode::PsdDiff => {
                        psd_diff_slices(&x[0], &x[1], t0, dt, tc, &kernel, windows).map(|v| Complex64::new(v, 0.0))
                    }
                }
            })
            .collect();
        for v in vals {
            out.push(v?);
        }
        k0 = k1;
    }
    Ok(out)
}

/// Simulate, estimate and decode `n_trials` random payloads of `n_bits`.
/// Decisions are counted even when the signature is unreliable.
pub fn run_ber(setup: &BerSetup, n_bits: usize, n_trials: usize, master: u64) -> Result<BerStats> {
    if n_bits == 0 || n_trials == 0 {
        return Err(Error::refusal("empty BER run"));
    }
    let plan = SynthPlan::new(&setup.scene, &setup.spectrum, &setup.windows, &setup.synth)?;
    let opts = DecodeOptions {
        strict: false,
        ..setup.decode
    };
    let mut errors = 0u64;
    let mut unreliable = 0usize;
    let mut ratio_sum = 0.0;
    for trial in 0..n_trials {
        let seed = RealizationSeed::new(master, trial as u64);
        let payload = trial_payload(seed, n_bits);
        let sched = encode(&payload, setup.rho1, setup.windows.t_long, &setup.preamble)?;
        let vals = slot_statistics(
            &plan,
            &sched.levels(),
            &setup.windows,
            setup.spectrum.omega0,
            seed,
            setup.measurement_noise,
            opts.mode,
        )?;
        let res = decode(&vals, &setup.preamble, &opts)?;
        errors += res.payload().iter().zip(&payload).filter(|(a, b)| a != b).count() as u64;
        if !(res.signature_ratio >= setup.decode.threshold) {
            unreliable += 1;
        }
        ratio_sum += res.signature_ratio.min(1e12);
    }
    let bits = (n_bits * n_trials) as u64;
    Ok(BerStats {
        trials: n_trials,
        bits,
        errors,
        ber: errors as f64 / bits as f64,
        wilson: wilson_interval(errors, bits, 1.96),
        unreliable_trials: unreliable,
        mean_signature_ratio: ratio_sum / n_trials as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_layout() {
        let s = encode(&[true], 0.3, 2.0, &[]).unwrap();
        assert_eq!(s.levels(), vec![false, true]);
        assert_eq!(s.im_rho(1.0), 0.0);
        assert_eq!(s.im_rho(5.0), 0.3);
        assert_eq!(s.duration(), 8.0);
        assert_eq!(s.slot_centers(), vec![2.0, 6.0]);
    }

    #[test]
    fn odd_series_refused() {
        assert!(delta_series(&[Complex64::new(1.0, 0.0); 3]).is_err());
    }

    #[test]
    fn payload_bits_deterministic() {
        let s = RealizationSeed::new(1, 2);
        let a = trial_payload(s, 100);
        assert_eq!(a, trial_payload(s, 100));
        assert_ne!(a, trial_payload(RealizationSeed::new(1, 3), 100));
        let ones = a.iter().filter(|b| **b).count();
        assert!(ones > 25 && ones < 75);
    }
}
