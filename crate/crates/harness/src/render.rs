//! Sliding-window classification maps.

use stsm_core::Model;
use stsm_data::patches::cut_patch;
use stsm_data::SceneCube;

use crate::error::{HarnessError, Result};
use crate::metrics::MetricsReport;

/// Pixels classified per call.
pub const MAP_CHUNK: usize = 64;

/// Anything that labels square patches laid out like the model input.
pub trait PixelClassifier {
    fn patch(&self) -> usize;
    /// 0-based class index for each of `count` patches.
    fn classify(&self, patches: &[f32], count: usize) -> Result<Vec<usize>>;
}

impl PixelClassifier for Model<f32> {
    fn patch(&self) -> usize {
        self.config.height
    }

    fn classify(&self, patches: &[f32], count: usize) -> Result<Vec<usize>> {
        Ok(self.predict(patches, count)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMap {
    pub height: usize,
    pub width: usize,
    /// Predicted 1-based class id; `None` on the unclassified border.
    pub classes: Vec<Option<u8>>,
    /// Row-major RGB triples.
    pub rgb: Vec<u8>,
}

impl ClassMap {
    /// Binary PPM (P6) bytes.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.rgb);
        out
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

/// Classifies every pixel at least `patch / 2` from the edge and paints it
/// with `palette[class - 1]`; the border stays black and is not scored.
pub fn render_map(
    classifier: &dyn PixelClassifier,
    scene: &SceneCube,
    palette: &[[u8; 3]],
) -> Result<(ClassMap, MetricsReport)> {
    let patch = classifier.patch();
    if patch % 2 == 0 || scene.height < patch || scene.width < patch {
        return Err(HarnessError::Config(format!(
            "scene {}x{} cannot hold a {patch}x{patch} patch",
            scene.height, scene.width
        )));
    }
    let num_classes = palette.len();
    let r = patch / 2;
    let (h, w) = (scene.height, scene.width);
    let mut classes = vec![None; h * w];
    let mut rgb = vec![0u8; 3 * h * w];
    let pixels: Vec<(usize, usize)> = (r..h - r).flat_map(|y| (r..w - r).map(move |x| (y, x))).collect();
    let mut buf = Vec::new();
    let mut predicted = Vec::with_capacity(pixels.len());
    let mut truth = Vec::with_capacity(pixels.len());
    for chunk in pixels.chunks(MAP_CHUNK) {
        buf.clear();
        for &(y, x) in chunk {
            cut_patch(scene, y, x, patch, &mut buf);
        }
        let pred = classifier.classify(&buf, chunk.len())?;
        for (&(y, x), &k) in chunk.iter().zip(&pred) {
            let color = palette
                .get(k)
                .ok_or_else(|| HarnessError::Config(format!("class index {k} has no palette color")))?;
            let p = y * w + x;
            classes[p] = Some(k as u8 + 1);
            rgb[3 * p..3 * p + 3].copy_from_slice(color);
            predicted.push(k);
            truth.push(scene.labels[p] as usize - 1);
        }
    }
    let report = MetricsReport::from_predictions(&predicted, &truth, num_classes)?;
    Ok((
        ClassMap {
            height: h,
            width: w,
            classes,
            rgb,
        },
        report,
    ))
}
