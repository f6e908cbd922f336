//! Synthetic scene: contiguous land-cover regions, per-pixel seasonal
//! profiles, mixed pixels along region boundaries and sensor noise.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::classes::{ClassSpec, BANDS};
use crate::error::{DataError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub time_steps: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_level: f64,
    /// Pixels within this Chebyshev distance of another class are mixed.
    pub mixing_width: usize,
    /// Spacing of the region seed grid; regions are roughly this wide.
    pub region_size: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            height: 288,
            width: 288,
            time_steps: 23,
            noise_level: 0.05,
            mixing_width: 3,
            region_size: 32,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 64 || self.width < 64 {
            return Err(DataError::Config(format!(
                "scene must be at least 64x64, got {}x{}",
                self.height, self.width
            )));
        }
        if self.time_steps < 2 {
            return Err(DataError::Config("scene needs at least 2 time steps".into()));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(DataError::Config(format!("noise level {} must be >= 0", self.noise_level)));
        }
        if self.region_size == 0 {
            return Err(DataError::Config("region size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneCube {
    pub time_steps: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// `T x C x H x W`.
    pub values: Vec<f32>,
    /// `H x W` class ids.
    pub labels: Vec<u8>,
    pub seed: u64,
    pub noise_level: f64,
    pub mixing_width: usize,
}

impl SceneCube {
    pub fn value(&self, t: usize, c: usize, y: usize, x: usize) -> f32 {
        self.values[((t * self.channels + c) * self.height + y) * self.width + x]
    }

    pub fn label(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Full `T x C` profile of one pixel, date-major.
    pub fn profile(&self, y: usize, x: usize) -> Vec<f32> {
        let plane = self.height * self.width;
        (0..self.time_steps * self.channels)
            .map(|k| self.values[k * plane + y * self.width + x])
            .collect()
    }
}

/// Labels grown from a jittered seed grid with random-weight shortest paths,
/// which gives contiguous regions with ragged borders.
fn grow_regions(cfg: &SceneConfig, classes: &[ClassSpec], rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (h, w) = (cfg.height, cfg.width);
    let step = cfg.region_size;
    let mut seeds = Vec::new();
    for gy in 0..h.div_ceil(step) {
        for gx in 0..w.div_ceil(step) {
            let y = (gy * step + rng.gen_range(0..step)).min(h - 1);
            let x = (gx * step + rng.gen_range(0..step)).min(w - 1);
            seeds.push(y * w + x);
        }
    }
    // balanced class assignment
    let mut order: Vec<usize> = (0..seeds.len()).collect();
    order.shuffle(rng);
    let mut seed_class = vec![0u8; seeds.len()];
    for (k, &s) in order.iter().enumerate() {
        seed_class[s] = classes[k % classes.len()].id;
    }
    let weights: Vec<u32> = (0..h * w).map(|_| rng.gen_range(1..=8)).collect();
    let mut labels = vec![0u8; h * w];
    let mut dist = vec![u32::MAX; h * w];
    let mut heap = BinaryHeap::new();
    for (s, &p) in seeds.iter().enumerate() {
        if dist[p] != 0 {
            dist[p] = 0;
            labels[p] = seed_class[s];
            heap.push(Reverse((0u32, p)));
        }
    }
    while let Some(Reverse((d, p))) = heap.pop() {
        if d > dist[p] {
            continue;
        }
        let (y, x) = (p / w, p % w);
        let mut visit = |q: usize| {
            let nd = d + weights[q];
            if nd < dist[q] {
                dist[q] = nd;
                labels[q] = labels[p];
                heap.push(Reverse((nd, q)));
            }
        };
        if y > 0 {
            visit(p - w);
        }
        if y + 1 < h {
            visit(p + w);
        }
        if x > 0 {
            visit(p - 1);
        }
        if x + 1 < w {
            visit(p + 1);
        }
    }
    labels
}

/// Nearest pixel of another class within `radius` (Chebyshev), scanning
/// rings outward and each ring in raster order.
fn nearest_other(labels: &[u8], h: usize, w: usize, y: usize, x: usize, radius: usize) -> Option<(usize, u8)> {
    let own = labels[y * w + x];
    for r in 1..=radius {
        let (y0, y1) = (y.saturating_sub(r), (y + r).min(h - 1));
        let (x0, x1) = (x.saturating_sub(r), (x + r).min(w - 1));
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                if yy.abs_diff(y).max(xx.abs_diff(x)) != r {
                    continue;
                }
                let l = labels[yy * w + xx];
                if l != own {
                    return Some((r, l));
                }
            }
        }
    }
    None
}

/// Generates one scene. The same seed always yields the same cube.
pub fn generate_scene(seed: u64, classes: &[ClassSpec], cfg: &SceneConfig) -> Result<SceneCube> {
    if classes.is_empty() {
        return Err(DataError::Config("class list is empty".into()));
    }
    cfg.validate()?;
    let (h, w, t_n, c_n) = (cfg.height, cfg.width, cfg.time_steps, BANDS.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = grow_regions(cfg, classes, &mut rng);
    let profiles: Vec<(u8, Vec<f32>)> = classes.iter().map(|c| (c.id, c.profile(t_n))).collect();
    let profile_of = |id: u8| &profiles.iter().find(|(i, _)| *i == id).expect("known class").1;

    let plane = h * w;
    let mut values = vec![0f32; t_n * c_n * plane];
    let m = cfg.mixing_width;
    let noise = Normal::new(0.0, cfg.noise_level.max(f64::MIN_POSITIVE)).expect("valid normal");
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let own = profile_of(labels[p]);
            let mix = if m == 0 {
                None
            } else {
                nearest_other(&labels, h, w, y, x, m)
            };
            for k in 0..t_n * c_n {
                let mut v = own[k];
                if let Some((d, other)) = mix {
                    let alpha = 0.5 * (m + 1 - d) as f32 / m as f32;
                    v = (1.0 - alpha) * v + alpha * profile_of(other)[k];
                }
                if cfg.noise_level > 0.0 {
                    v += noise.sample(&mut rng) as f32;
                }
                values[k * plane + p] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(SceneCube {
        time_steps: t_n,
        channels: c_n,
        height: h,
        width: w,
        values,
        labels,
        seed,
        noise_level: cfg.noise_level,
        mixing_width: m,
    })
}
