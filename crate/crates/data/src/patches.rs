//! Patch sampling around homogeneous center pixels.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classes::{class_by_id, ClassSpec};
use crate::error::{DataError, Result};
use crate::scene::SceneCube;

pub const PATCH: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Samples requested per class in each split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 100,
            val: 100,
            test: 1000,
        }
    }
}

impl SplitCounts {
    pub fn uniform(n: usize) -> Self {
        Self {
            train: n,
            val: n,
            test: n,
        }
    }

    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> Option<usize> {
        self.train.checked_add(self.val)?.checked_add(self.test)
    }
}

/// One split of labeled patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub split: Split,
    /// `M x (T*C) x P x P`, date-major channels.
    pub patches: Vec<f32>,
    /// 1-based class ids.
    pub labels: Vec<u8>,
    /// Scene `(row, col)` of every patch center.
    pub centers: Vec<(usize, usize)>,
    pub channels: usize,
    pub patch: usize,
}

impl PatchSet {
    pub fn empty(split: Split, channels: usize, patch: usize) -> Self {
        Self {
            split,
            patches: Vec::new(),
            labels: Vec::new(),
            centers: Vec::new(),
            channels,
            patch,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.sample_len();
        &self.patches[i * n..(i + 1) * n]
    }

    /// Samples per class id, index 0 holding class 1.
    pub fn class_counts(&self, num_classes: usize) -> Vec<usize> {
        let mut out = vec![0; num_classes];
        for &l in &self.labels {
            if let Some(c) = out.get_mut(l as usize - 1) {
                *c += 1;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    pub train: PatchSet,
    pub val: PatchSet,
    pub test: PatchSet,
}

impl PatchDataset {
    pub fn split(&self, split: Split) -> &PatchSet {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut PatchSet {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }
}

/// Copies the `patch x patch` window centered on `(y, x)` for every channel.
pub fn cut_patch(scene: &SceneCube, y: usize, x: usize, patch: usize, out: &mut Vec<f32>) {
    let r = patch / 2;
    let channels = scene.time_steps * scene.channels;
    let plane = scene.height * scene.width;
    for ch in 0..channels {
        for yy in y - r..=y + r {
            let start = ch * plane + yy * scene.width + x - r;
            out.extend_from_slice(&scene.values[start..start + patch]);
        }
    }
}

/// Draws disjoint train/val/test centers per class from masked pixels at
/// least `patch / 2` away from the scene edge.
pub fn extract_patches(
    scene: &SceneCube,
    mask: &[bool],
    classes: &[ClassSpec],
    counts: SplitCounts,
    patch: usize,
    seed: u64,
) -> Result<PatchDataset> {
    if patch % 2 == 0 || patch == 0 {
        return Err(DataError::Config(format!("patch size {patch} must be odd")));
    }
    if scene.height < patch || scene.width < patch {
        return Err(DataError::Config(format!(
            "scene {}x{} is smaller than the {patch}x{patch} patch",
            scene.height, scene.width
        )));
    }
    if mask.len() != scene.height * scene.width {
        return Err(DataError::Config("mask size does not match the scene".into()));
    }
    let per_class = counts
        .total()
        .ok_or_else(|| DataError::Config("split counts overflow".into()))?;
    let r = patch / 2;
    let channels = scene.time_steps * scene.channels;
    let mut ids: Vec<u8> = classes.iter().map(|c| c.id).collect();
    ids.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // the scene generator uses stream 0 of the same seed
    rng.set_stream(1);
    let mut chosen: Vec<Vec<(usize, usize)>> = Vec::with_capacity(ids.len());
    for &id in &ids {
        let mut candidates: Vec<(usize, usize)> = (r..scene.height - r)
            .flat_map(|y| (r..scene.width - r).map(move |x| (y, x)))
            .filter(|&(y, x)| mask[y * scene.width + x] && scene.label(y, x) == id)
            .collect();
        if candidates.len() < per_class {
            let name = class_by_id(classes, id).map_or("?", |c| c.name).to_string();
            return Err(DataError::Shortfall {
                class: id,
                name,
                needed: per_class,
                available: candidates.len(),
            });
        }
        candidates.shuffle(&mut rng);
        candidates.truncate(per_class);
        chosen.push(candidates);
    }
    let mut ds = PatchDataset {
        train: PatchSet::empty(Split::Train, channels, patch),
        val: PatchSet::empty(Split::Val, channels, patch),
        test: PatchSet::empty(Split::Test, channels, patch),
    };
    let mut offset = vec![0usize; ids.len()];
    for split in Split::ALL {
        let n = counts.get(split);
        let set = ds.split_mut(split);
        set.patches.reserve(n * ids.len() * set.sample_len());
        for (k, &id) in ids.iter().enumerate() {
            for &(y, x) in &chosen[k][offset[k]..offset[k] + n] {
                cut_patch(scene, y, x, patch, &mut set.patches);
                set.labels.push(id);
                set.centers.push((y, x));
            }
            offset[k] += n;
        }
    }
    Ok(ds)
}
