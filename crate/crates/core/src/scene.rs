//! Scene geometry: the source shell, the receiver pair and the tunable array.

use crate::error::{Error, Result};
use crate::media::{Background, Inclusion, Metasurface, Vec3};
use std::f64::consts::PI;

/// Sphere of radius `radius` centred at the origin carrying equal-weight
/// Fibonacci-lattice nodes.
#[derive(Clone, Debug)]
pub struct SourceShell {
    pub radius: f64,
    pub nodes: Vec<Vec3>,
    /// Area weight per node, `4 pi radius^2 / n`.
    pub weight: f64,
}

/// Minimum node count for 4 nodes per square wavelength of shell area.
pub fn nyquist_nodes(radius: f64, wavelength: f64) -> usize {
    (4.0 * 4.0 * PI * radius * radius / (wavelength * wavelength)).ceil() as usize
}

pub fn make_shell(radius: f64, n_nodes: usize) -> Result<SourceShell> {
    if !(radius > 0.0 && radius.is_finite()) || n_nodes == 0 {
        return Err(Error::domain("shell needs a positive radius and at least one node"));
    }
    let golden = PI * (3.0 - 5f64.sqrt());
    let n = n_nodes as f64;
    let nodes = (0..n_nodes)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z) * radius
        })
        .collect();
    Ok(SourceShell {
        radius,
        nodes,
        weight: 4.0 * PI * radius * radius / n,
    })
}

/// Two receiver positions. Coincident receivers are only allowed through
/// [`ReceiverPair::autospectrum`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReceiverPair {
    pub xr: Vec3,
    pub xrp: Vec3,
}

impl ReceiverPair {
    pub fn new(xr: Vec3, xrp: Vec3) -> Result<Self> {
        if !xr.is_finite() || !xrp.is_finite() {
            return Err(Error::domain("receiver position is not finite"));
        }
        if (xr - xrp).norm() == 0.0 {
            return Err(Error::domain(
                "receivers coincide; use the autospectrum constructor for diagnostics",
            ));
        }
        Ok(ReceiverPair { xr, xrp })
    }

    /// Diagnostic pair measuring the autospectrum at one point.
    pub fn autospectrum(x: Vec3) -> Self {
        ReceiverPair { xr: x, xrp: x }
    }

    pub fn separation(&self) -> f64 {
        (self.xrp - self.xr).norm()
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub background: Background,
    pub shell_radius: f64,
    pub metasurface: Metasurface,
    pub receivers: ReceiverPair,
}

impl Scene {
    pub fn inclusions(&self, on: bool) -> Vec<Inclusion> {
        self.metasurface.inclusions(on)
    }

    /// Distance from the reference receiver to the array centre.
    pub fn distance(&self) -> f64 {
        (self.metasurface.center - self.receivers.xr).norm()
    }

    pub fn wavelength(&self, omega0: f64) -> f64 {
        self.background.wavelength(omega0)
    }

    /// Angle between `xrp - xr` and `z0 - xr`.
    pub fn angle(&self) -> f64 {
        angle_between(
            self.receivers.xrp - self.receivers.xr,
            self.metasurface.center - self.receivers.xr,
        )
    }

    /// Largest distance between any two receivers or inclusions.
    pub fn region_diameter(&self) -> f64 {
        let mut pts = self.metasurface.positions();
        pts.push(self.receivers.xr);
        pts.push(self.receivers.xrp);
        diameter(&pts)
    }

    /// Geometric sanity problems that do not depend on a frequency.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.shell_radius < 5.0 * self.region_diameter() {
            v.push(format!(
                "shell radius {} is below 5x the scene diameter {:.4}",
                self.shell_radius,
                self.region_diameter()
            ));
        }
        let far = self
            .metasurface
            .positions()
            .iter()
            .chain([self.receivers.xr, self.receivers.xrp].iter())
            .map(|p| p.norm())
            .fold(0.0, f64::max);
        if far >= self.shell_radius {
            v.push("scene is not enclosed by the source shell".into());
        }
        v
    }

    /// Sub-wavelength spacing gate: spacing must be at least half a wavelength.
    pub fn spacing_violation(&self, omega0: f64) -> Option<String> {
        let lam = self.wavelength(omega0);
        let h = self.metasurface.spacing();
        if self.metasurface.n > 1 && h < 0.5 * lam * (1.0 - 1e-12) {
            Some(format!(
                "inclusion spacing {h:.4} is below half a wavelength ({:.4}); \
                 interactions between inclusions are neglected by the model",
                0.5 * lam
            ))
        } else {
            None
        }
    }
}

pub fn angle_between(a: Vec3, b: Vec3) -> f64 {
    let c = a.dot(b) / (a.norm() * b.norm());
    c.clamp(-1.0, 1.0).acos()
}

pub(crate) fn diameter(pts: &[Vec3]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d = d.max((pts[i] - pts[j]).norm());
        }
    }
    d
}
