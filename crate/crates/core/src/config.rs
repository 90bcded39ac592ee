//! JSON scenario configuration: defaults, validation and the objects built
//! from it.

use crate::error::{Error, Result};
use crate::kernel::{NoiseSpectrum, SpectrumShape, WindowShape, WindowSpec};
use crate::link::{BerSetup, DecodeMode, DecodeOptions};
use crate::media::{Background, Metasurface, ReflectivityModel, Tunable, Vec3};
use crate::scene::{ReceiverPair, Scene};
use crate::synth::SynthOptions;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackgroundCfg {
    pub c0: f64,
}

impl Default for BackgroundCfg {
    fn default() -> Self {
        BackgroundCfg { c0: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumCfg {
    /// Default `2 pi c0` (unit wavelength).
    pub omega0: Option<f64>,
    /// Default `0.05 omega0`.
    pub bandwidth: Option<f64>,
    pub shape: SpectrumShape,
}

impl Default for SpectrumCfg {
    fn default() -> Self {
        SpectrumCfg {
            omega0: None,
            bandwidth: None,
            shape: SpectrumShape::Boxcar,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShellCfg {
    pub radius: f64,
    /// Default: four nodes per square wavelength.
    pub n_nodes: Option<usize>,
}

impl Default for ShellCfg {
    fn default() -> Self {
        ShellCfg {
            radius: 60.0,
            n_nodes: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetasurfaceCfg {
    /// Elements per side; `J = n^2`.
    pub n: usize,
    /// Side length D.
    pub side: f64,
    /// Distance L from the reference receiver, used for default positions.
    pub distance: f64,
    /// Default `(0, 0, -L/2)`.
    pub center: Option<[f64; 3]>,
    /// Default `(0, 0, 1)`.
    pub normal: Option<[f64; 3]>,
    /// Default: tunable with `re_rho` and `rho1` below.
    pub reflectivity: Option<ReflectivityModel>,
    pub re_rho: f64,
    pub rho1: f64,
}

impl Default for MetasurfaceCfg {
    fn default() -> Self {
        MetasurfaceCfg {
            n: 8,
            side: 4.0,
            distance: 10.0,
            center: None,
            normal: None,
            reflectivity: None,
            re_rho: 0.0,
            rho1: 1.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiversCfg {
    /// Default `(0, 0, L/2)`.
    pub xr: Option<[f64; 3]>,
    /// Default `xr + (lambda0/2, 0, 0)`.
    pub xrp: Option<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowsCfg {
    /// Default `200 / B`.
    pub t_long: Option<f64>,
    /// Default `1 / B`.
    pub t_lag: Option<f64>,
    pub phi: WindowShape,
    pub psi: WindowShape,
}

impl Default for WindowsCfg {
    fn default() -> Self {
        WindowsCfg {
            t_long: None,
            t_lag: None,
            phi: WindowShape::Triangle,
            psi: WindowShape::Gaussian,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleCfg {
    /// Explicit payload; otherwise `n_bits` random bits from `seed`.
    pub bits: Option<Vec<u8>>,
    pub n_bits: usize,
    pub seed: u64,
    pub preamble: Vec<u8>,
}

impl Default for ScheduleCfg {
    fn default() -> Self {
        ScheduleCfg {
            bits: None,
            n_bits: 16,
            seed: 1,
            preamble: vec![1; 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloCfg {
    pub n_realizations: usize,
    pub seed: u64,
}

impl Default for MonteCarloCfg {
    fn default() -> Self {
        MonteCarloCfg {
            n_realizations: 20,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasurementNoiseCfg {
    pub sigma: f64,
    /// Default `0.01 / B`.
    pub t_meas: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeCfg {
    pub mode: DecodeMode,
    pub threshold: f64,
}

impl Default for DecodeCfg {
    fn default() -> Self {
        DecodeCfg {
            mode: DecodeMode::Complex,
            threshold: 5.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    TLong,
    N,
    Distance,
    Sigma,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepCfg {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BerCfg {
    pub n_bits: usize,
    pub n_trials: usize,
    pub sweep: Option<SweepCfg>,
}

impl Default for BerCfg {
    fn default() -> Self {
        BerCfg {
            n_bits: 1000,
            n_trials: 1,
            sweep: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputsCfg {
    pub directory: String,
    /// Write `.fld` records from `simulate`.
    pub write_records: bool,
}

impl Default for OutputsCfg {
    fn default() -> Self {
        OutputsCfg {
            directory: "out".into(),
            write_records: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub background: BackgroundCfg,
    pub spectrum: SpectrumCfg,
    pub shell: ShellCfg,
    pub metasurface: MetasurfaceCfg,
    pub receivers: ReceiversCfg,
    pub windows: WindowsCfg,
    pub schedule: ScheduleCfg,
    pub monte_carlo: MonteCarloCfg,
    pub measurement_noise: MeasurementNoiseCfg,
    pub synth: SynthOptions,
    pub decode: DecodeCfg,
    pub ber: BerCfg,
    pub outputs: OutputsCfg,
    /// Accept receiver separations other than half a wavelength.
    pub override_spacing: bool,
}

/// Validated configuration plus the objects it describes.
#[derive(Clone, Debug)]
pub struct Scenario {
    /// Configuration with every default filled in.
    pub config: ScenarioConfig,
    pub scene: Scene,
    pub spectrum: NoiseSpectrum,
    pub windows: WindowSpec,
    pub warnings: Vec<String>,
}

fn v3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

fn bits_of(v: &[u8], what: &str, errs: &mut Vec<String>) -> Vec<bool> {
    if v.iter().any(|&b| b > 1) {
        errs.push(format!("{what} must contain only 0 and 1"));
    }
    v.iter().map(|&b| b == 1).collect()
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<ScenarioConfig> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<ScenarioConfig> {
        ScenarioConfig::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fills defaults, checks every precondition and collects all failures.
    pub fn resolve(&self) -> Result<Scenario> {
        let mut c = self.clone();
        let mut errs = Vec::new();
        let mut warnings = Vec::new();
        let c0 = c.background.c0;
        let bg = match Background::new(c0) {
            Ok(b) => b,
            Err(e) => return Err(Error::Validation(vec![e.to_string()])),
        };
        let w0 = *c.spectrum.omega0.get_or_insert(2.0 * PI * c0);
        let b = *c.spectrum.bandwidth.get_or_insert(0.05 * w0);
        let lam = 2.0 * PI * c0 / w0;
        let spectrum = match NoiseSpectrum::new(w0, b, c.spectrum.shape) {
            Ok(s) => Some(s),
            Err(Error::Validation(v)) => {
                errs.extend(v);
                None
            }
            Err(e) => {
                errs.push(e.to_string());
                None
            }
        };
        if let Some(s) = &spectrum {
            warnings.extend(s.warnings());
        }
        let l = c.metasurface.distance;
        if !(l > 0.0) {
            errs.push("metasurface.distance must be positive".into());
        }
        let center = *c.metasurface.center.get_or_insert([0.0, 0.0, -0.5 * l]);
        let normal = *c.metasurface.normal.get_or_insert([0.0, 0.0, 1.0]);
        let refl = *c
            .metasurface
            .reflectivity
            .get_or_insert(ReflectivityModel::Tunable(Tunable {
                re_rho: c.metasurface.re_rho,
                rho1: c.metasurface.rho1,
                on: true,
            }));
        if c.metasurface.rho1 < 0.0 {
            errs.push("metasurface.rho1 must be non-negative".into());
        }
        let xr = *c.receivers.xr.get_or_insert([0.0, 0.0, 0.5 * l]);
        let xrp = *c.receivers.xrp.get_or_insert([xr[0] + 0.5 * lam, xr[1], xr[2]]);
        let t_long = *c.windows.t_long.get_or_insert(200.0 / b);
        let t_lag = *c.windows.t_lag.get_or_insert(1.0 / b);
        let t_meas = *c.measurement_noise.t_meas.get_or_insert(0.01 / b);
        let windows = match WindowSpec::new(t_long, t_lag) {
            Ok(w) => Some(WindowSpec {
                phi: c.windows.phi,
                psi: c.windows.psi,
                ..w
            }),
            Err(e) => {
                errs.push(e.to_string());
                None
            }
        };
        let bt = b * t_long;
        if bt < 10.0 {
            errs.push(format!("B T = {bt:.2} is below 10"));
        } else if bt < 100.0 {
            warnings.push(format!("B T = {bt:.1} is not large"));
        }
        if c.measurement_noise.sigma < 0.0 {
            errs.push("measurement_noise.sigma must be non-negative".into());
        }
        if c.measurement_noise.sigma > 0.0 && t_meas > 0.1 * t_lag {
            warnings.push(format!("t_meas = {t_meas} is not small compared to T' = {t_lag}"));
        }
        if !(c.synth.oversample >= 1.0) {
            errs.push("synth.oversample must be at least 1".into());
        }
        let preamble = bits_of(&c.schedule.preamble, "schedule.preamble", &mut errs);
        if !preamble.iter().any(|&x| x) {
            errs.push("schedule.preamble needs at least one 1-bit".into());
        }
        if let Some(bits) = &c.schedule.bits {
            bits_of(bits, "schedule.bits", &mut errs);
            if bits.is_empty() {
                errs.push("schedule.bits is empty".into());
            }
        } else if c.schedule.n_bits == 0 {
            errs.push("schedule.n_bits must be positive".into());
        }
        if !(c.decode.threshold > 0.0) {
            errs.push("decode.threshold must be positive".into());
        }
        if let Some(s) = &c.ber.sweep {
            if s.values.is_empty() {
                errs.push("ber.sweep.values is empty".into());
            }
        }
        let ms = Metasurface::new(v3(center), v3(normal), c.metasurface.side, c.metasurface.n, refl);
        let pair = ReceiverPair::new(v3(xr), v3(xrp));
        let scene = match (ms, pair) {
            (Ok(ms), Ok(pair)) => Some(Scene {
                background: bg,
                shell_radius: c.shell.radius,
                metasurface: ms,
                receivers: pair,
            }),
            (a, p) => {
                if let Err(e) = a {
                    errs.push(e.to_string());
                }
                if let Err(e) = p {
                    errs.push(e.to_string());
                }
                None
            }
        };
        if let Some(s) = &scene {
            errs.extend(s.validate());
            let sep = s.receivers.separation();
            if ((sep - 0.5 * lam) / (0.5 * lam)).abs() > 1e-6 {
                let msg = format!(
                    "receiver separation {sep:.6} differs from half a wavelength {:.6}",
                    0.5 * lam
                );
                if c.override_spacing {
                    warnings.push(msg);
                } else {
                    errs.push(format!("{msg} (use --override-spacing to accept)"));
                }
            }
            if let Some(v) = s.spacing_violation(w0) {
                warnings.push(v);
            }
            let d = s.metasurface.side;
            let dist = s.distance();
            if !(lam < d && d < dist) {
                warnings.push(format!(
                    "geometry lambda0 = {lam:.4}, D = {d:.4}, L = {dist:.4} is not paraxial"
                ));
            }
        }
        if c.shell.n_nodes.is_none() {
            c.shell.n_nodes = Some(crate::scene::nyquist_nodes(c.shell.radius, lam));
        }
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        Ok(Scenario {
            config: c,
            scene: scene.unwrap(),
            spectrum: spectrum.unwrap(),
            windows: windows.unwrap(),
            warnings,
        })
    }
}

impl Scenario {
    /// SHA-256 of the resolved configuration without its output settings, hex encoded.
    pub fn config_hash(&self) -> String {
        let mut c = self.config.clone();
        c.outputs = OutputsCfg::default();
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn preamble(&self) -> Vec<bool> {
        self.config.schedule.preamble.iter().map(|&b| b == 1).collect()
    }

    /// Explicit payload, or random bits from the schedule seed.
    pub fn payload(&self) -> Vec<bool> {
        match &self.config.schedule.bits {
            Some(b) => b.iter().map(|&x| x == 1).collect(),
            None => crate::link::trial_payload(
                crate::synth::RealizationSeed::new(self.config.schedule.seed, 0),
                self.config.schedule.n_bits,
            ),
        }
    }

    pub fn rho1(&self) -> f64 {
        match self.scene.metasurface.reflectivity {
            ReflectivityModel::Tunable(t) => t.rho1,
            _ => self.config.metasurface.rho1,
        }
    }

    pub fn measurement_noise(&self) -> Option<(f64, f64)> {
        let m = &self.config.measurement_noise;
        (m.sigma > 0.0).then(|| (m.sigma, m.t_meas.unwrap_or(0.0)))
    }

    pub fn decode_options(&self, strict: bool) -> DecodeOptions {
        DecodeOptions {
            mode: self.config.decode.mode,
            strict,
            threshold: self.config.decode.threshold,
        }
    }

    pub fn ber_setup(&self) -> BerSetup {
        BerSetup {
            scene: self.scene.clone(),
            spectrum: self.spectrum,
            windows: self.windows,
            synth: self.config.synth,
            rho1: self.rho1(),
            preamble: self.preamble(),
            measurement_noise: self.measurement_noise(),
            decode: self.decode_options(true),
        }
    }

    /// Copy with one sweep parameter replaced, re-validated.
    pub fn with_axis(&self, axis: SweepAxis, value: f64) -> Result<Scenario> {
        let mut c = self.config.clone();
        match axis {
            SweepAxis::TLong => c.windows.t_long = Some(value),
            SweepAxis::N => c.metasurface.n = value.round() as usize,
            SweepAxis::Distance => {
                let old = c.metasurface.distance;
                c.metasurface.distance = value;
                // keep the default layout when positions were derived from L
                if c.metasurface.center == Some([0.0, 0.0, -0.5 * old]) {
                    c.metasurface.center = None;
                }
                let lam = 2.0 * PI * c.background.c0 / c.spectrum.omega0.unwrap_or(2.0 * PI);
                if c.receivers.xr == Some([0.0, 0.0, 0.5 * old]) {
                    c.receivers.xr = None;
                    if c.receivers.xrp == Some([0.5 * lam, 0.0, 0.5 * old]) {
                        c.receivers.xrp = None;
                    }
                }
            }
            SweepAxis::Sigma => c.measurement_noise.sigma = value,
        }
        c.resolve()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gets_defaults() {
        let s = ScenarioConfig::from_json("{}").unwrap().resolve().unwrap();
        assert_eq!(s.scene.metasurface.count(), 64);
        assert!((s.scene.distance() - 10.0).abs() < 1e-12);
        assert!((s.spectrum.bandwidth - 0.1 * PI).abs() < 1e-12);
        assert!((s.scene.receivers.separation() - 0.5).abs() < 1e-12);
        assert_eq!(s.config.shell.n_nodes, Some(180_956));
        assert_eq!(s.config_hash().len(), 64);
    }

    #[test]
    fn parse_error_has_position() {
        match ScenarioConfig::from_json("{\n  \"shell\": {\"radius\": \"x\"}\n}") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            ScenarioConfig::from_json("{\"shel\": {}}"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn all_failures_reported_together() {
        let c = ScenarioConfig::from_json(
            r#"{"spectrum": {"bandwidth": 3.14159}, "receivers": {"xr": [0,0,5], "xrp": [0.7,0,5]}, "schedule": {"preamble": [0,0]}}"#,
        )
        .unwrap();
        match c.resolve() {
            Err(Error::Validation(v)) => {
                assert!(v.len() >= 3, "{v:?}");
                assert!(v.iter().any(|m| m.contains("narrowband")));
                assert!(v.iter().any(|m| m.contains("half a wavelength")));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spacing_override_turns_refusal_into_warning() {
        let mut c = ScenarioConfig::from_json(r#"{"receivers": {"xr": [0,0,5], "xrp": [0.7,0,5]}}"#).unwrap();
        assert!(c.resolve().is_err());
        c.override_spacing = true;
        let s = c.resolve().unwrap();
        assert!(s.warnings.iter().any(|w| w.contains("half a wavelength")));
    }
}
