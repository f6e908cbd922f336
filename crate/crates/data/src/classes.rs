//! Land-cover roster and per-class seasonal templates.
//!
//! Each band follows `base + amplitude * bump(u)` over the year fraction
//! `u = (t + 0.5) / T`, where `bump(u) = exp(sharpness * (cos(2 pi (u - phase)) - 1))`
//! peaks at 1 on `phase`. Vegetation indices peak mid-year; the visible and
//! NIR reflectances brighten around the year boundary (snow cover).

use std::f64::consts::TAU;

/// Band order inside every acquisition date.
pub const BANDS: [&str; 6] = ["red", "blue", "nir", "mir", "ndvi", "evi"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandTemplate {
    pub base: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub sharpness: f64,
}

impl BandTemplate {
    const fn new(base: f64, amplitude: f64, phase: f64, sharpness: f64) -> Self {
        Self {
            base,
            amplitude,
            phase,
            sharpness,
        }
    }

    pub fn at(&self, u: f64) -> f64 {
        let bump = (self.sharpness * ((TAU * (u - self.phase)).cos() - 1.0)).exp();
        self.base + self.amplitude * bump
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassSpec {
    /// 1-based class id.
    pub id: u8,
    pub name: &'static str,
    pub color: [u8; 3],
    pub bands: [BandTemplate; 6],
}

impl ClassSpec {
    /// Noise-free profile, `time_steps x 6`, date-major.
    pub fn profile(&self, time_steps: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(time_steps * BANDS.len());
        for t in 0..time_steps {
            let u = (t as f64 + 0.5) / time_steps as f64;
            out.extend(self.bands.iter().map(|b| b.at(u).clamp(0.0, 1.0) as f32));
        }
        out
    }
}

const fn b(base: f64, amplitude: f64, phase: f64, sharpness: f64) -> BandTemplate {
    BandTemplate::new(base, amplitude, phase, sharpness)
}

/// The eleven classes with their map colors.
pub fn roster() -> Vec<ClassSpec> {
    let c = |id, name, color, bands| ClassSpec { id, name, color, bands };
    vec![
        c(1, "Temp-needleleaf", [1, 62, 2], [
            b(0.05, 0.15, 0.0, 2.0),
            b(0.04, 0.15, 0.0, 2.0),
            b(0.25, 0.10, 0.0, 2.0),
            b(0.12, 0.04, 0.5, 2.0),
            b(0.55, 0.25, 0.5, 1.5),
            b(0.30, 0.20, 0.5, 1.5),
        ]),
        c(2, "Taiga-needleleaf", [149, 156, 112], [
            b(0.05, 0.42, 0.0, 3.0),
            b(0.05, 0.45, 0.0, 3.0),
            b(0.22, 0.36, 0.0, 3.0),
            b(0.10, 0.05, 0.5, 3.0),
            b(0.40, 0.35, 0.52, 2.5),
            b(0.22, 0.28, 0.52, 2.5),
        ]),
        c(3, "Broadleaf-deciduous", [20, 139, 61], [
            b(0.04, 0.22, 0.0, 4.0),
            b(0.04, 0.24, 0.0, 4.0),
            b(0.30, 0.15, 0.0, 4.0),
            b(0.15, 0.08, 0.5, 3.0),
            b(0.25, 0.60, 0.5, 3.0),
            b(0.15, 0.50, 0.5, 3.0),
        ]),
        c(4, "Mixed-forest", [93, 117, 43], [
            b(0.05, 0.20, 0.0, 3.0),
            b(0.05, 0.22, 0.0, 3.0),
            b(0.28, 0.12, 0.0, 3.0),
            b(0.13, 0.06, 0.5, 2.5),
            b(0.40, 0.42, 0.5, 2.2),
            b(0.22, 0.36, 0.5, 2.2),
        ]),
        // 5, 6 and 8 differ only in season timing and a few hundredths of level
        c(5, "Shrubland", [179, 137, 51], [
            b(0.10, 0.30, 0.0, 4.0),
            b(0.08, 0.32, 0.0, 4.0),
            b(0.25, 0.25, 0.0, 4.0),
            b(0.22, 0.08, 0.5, 3.0),
            b(0.22, 0.40, 0.52, 3.5),
            b(0.13, 0.30, 0.52, 3.5),
        ]),
        c(6, "Polar-shrubland", [226, 206, 136], [
            b(0.10, 0.36, 0.0, 3.0),
            b(0.08, 0.38, 0.0, 3.0),
            b(0.24, 0.30, 0.0, 3.0),
            b(0.21, 0.08, 0.5, 3.0),
            b(0.20, 0.38, 0.56, 4.5),
            b(0.12, 0.28, 0.56, 4.5),
        ]),
        c(7, "Wetland", [108, 163, 138], [
            b(0.06, 0.25, 0.0, 3.0),
            b(0.06, 0.27, 0.0, 3.0),
            b(0.18, 0.20, 0.0, 3.0),
            b(0.08, 0.04, 0.5, 3.0),
            b(0.30, 0.40, 0.55, 3.0),
            b(0.18, 0.30, 0.55, 3.0),
        ]),
        c(8, "Cropland", [231, 174, 103], [
            b(0.11, 0.31, 0.0, 4.0),
            b(0.09, 0.32, 0.0, 4.0),
            b(0.26, 0.24, 0.0, 4.0),
            b(0.23, 0.09, 0.5, 3.0),
            b(0.20, 0.44, 0.58, 5.0),
            b(0.12, 0.34, 0.58, 5.0),
        ]),
        c(9, "Barren", [166, 171, 174], [
            b(0.30, 0.25, 0.0, 2.0),
            b(0.25, 0.25, 0.0, 2.0),
            b(0.38, 0.20, 0.0, 2.0),
            b(0.40, 0.05, 0.5, 2.0),
            b(0.10, 0.06, 0.5, 2.0),
            b(0.06, 0.04, 0.5, 2.0),
        ]),
        c(10, "Urban", [221, 32, 38], [
            b(0.20, 0.15, 0.0, 2.0),
            b(0.18, 0.15, 0.0, 2.0),
            b(0.28, 0.10, 0.0, 2.0),
            b(0.30, 0.05, 0.5, 2.0),
            b(0.18, 0.12, 0.5, 3.0),
            b(0.10, 0.08, 0.5, 3.0),
        ]),
        c(11, "Water", [76, 112, 164], [
            b(0.04, 0.35, 0.0, 1.5),
            b(0.06, 0.38, 0.0, 1.5),
            b(0.03, 0.30, 0.0, 1.5),
            b(0.02, 0.05, 0.0, 1.5),
            b(0.05, 0.04, 0.5, 2.0),
            b(0.03, 0.03, 0.5, 2.0),
        ]),
    ]
}

/// Looks a class up by its 1-based id.
pub fn class_by_id(classes: &[ClassSpec], id: u8) -> Option<&ClassSpec> {
    classes.iter().find(|c| c.id == id)
}
