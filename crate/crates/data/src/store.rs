//! Dataset directory: `manifest.txt`, `<split>.f32` and `<split>.labels.i32`.
//!
//! The arrays are raw little-endian. Patch files hold `M x (T*6) x P x P`
//! floats; label files hold `M` class ids in `1..=11`. The manifest records
//! every generation knob, so a dataset can be rebuilt from it alone.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use stsm_core::kv::{fmt_f64, KvDoc};

use crate::classes::{roster, BANDS};
use crate::error::{DataError, Result};
use crate::filter::{homogeneity_filter, WINDOW};
use crate::patches::{extract_patches, PatchDataset, PatchSet, Split, SplitCounts, PATCH};
use crate::scene::{generate_scene, SceneConfig, SceneCube};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.txt";
const KIND: &str = "stsm-patch-dataset";
const VALUE_RANGE: &str = "0..1";
const IO_CHUNK: usize = 1 << 20;

/// Everything needed to regenerate a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub seed: u64,
    pub scene: SceneConfig,
    pub counts: SplitCounts,
    pub patch: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: SceneConfig::default(),
            counts: SplitCounts::default(),
            patch: PATCH,
        }
    }
}

fn fmt_err(msg: impl Into<String>) -> DataError {
    DataError::Format(msg.into())
}

impl DatasetSpec {
    pub fn channels(&self) -> usize {
        self.scene.time_steps * BANDS.len()
    }

    pub fn generate_scene(&self) -> Result<SceneCube> {
        generate_scene(self.seed, &roster(), &self.scene)
    }

    pub fn generate(&self) -> Result<(SceneCube, PatchDataset)> {
        let scene = self.generate_scene()?;
        let mask = homogeneity_filter(&scene.labels, scene.height, scene.width);
        let ds = extract_patches(&scene, &mask, &roster(), self.counts, self.patch, self.seed)?;
        Ok((scene, ds))
    }

    pub fn write_kv(&self, doc: &mut KvDoc, prefix: &str) {
        let s = &self.scene;
        doc.set(format!("{prefix}seed"), self.seed);
        doc.set(format!("{prefix}scene.height"), s.height);
        doc.set(format!("{prefix}scene.width"), s.width);
        doc.set(format!("{prefix}scene.time_steps"), s.time_steps);
        doc.set(format!("{prefix}scene.noise_level"), fmt_f64(s.noise_level));
        doc.set(format!("{prefix}scene.mixing_width"), s.mixing_width);
        doc.set(format!("{prefix}scene.region_size"), s.region_size);
        doc.set(format!("{prefix}counts.train"), self.counts.train);
        doc.set(format!("{prefix}counts.val"), self.counts.val);
        doc.set(format!("{prefix}counts.test"), self.counts.test);
        doc.set(format!("{prefix}patch"), self.patch);
    }

    /// Overrides the fields present under `prefix`; with `require_all` every
    /// field must be present.
    pub fn apply_kv(&mut self, doc: &KvDoc, prefix: &str, require_all: bool) -> Result<()> {
        fn field<T: std::str::FromStr>(doc: &KvDoc, key: &str, require: bool, slot: &mut T) -> Result<()>
        where
            T::Err: std::fmt::Display,
        {
            let v = if require {
                Some(doc.parse_value::<T>(key))
            } else {
                doc.parse_opt::<T>(key).transpose()
            };
            if let Some(v) = v {
                *slot = v.map_err(|e| DataError::Config(e.to_string()))?;
            }
            Ok(())
        }
        let r = require_all;
        let p = |k: &str| format!("{prefix}{k}");
        field(doc, &p("seed"), r, &mut self.seed)?;
        field(doc, &p("scene.height"), r, &mut self.scene.height)?;
        field(doc, &p("scene.width"), r, &mut self.scene.width)?;
        field(doc, &p("scene.time_steps"), r, &mut self.scene.time_steps)?;
        field(doc, &p("scene.noise_level"), r, &mut self.scene.noise_level)?;
        field(doc, &p("scene.mixing_width"), r, &mut self.scene.mixing_width)?;
        field(doc, &p("scene.region_size"), r, &mut self.scene.region_size)?;
        field(doc, &p("counts.train"), r, &mut self.counts.train)?;
        field(doc, &p("counts.val"), r, &mut self.counts.val)?;
        field(doc, &p("counts.test"), r, &mut self.counts.test)?;
        field(doc, &p("patch"), r, &mut self.patch)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        if self.patch % 2 == 0 || self.patch > self.scene.height.min(self.scene.width) {
            return Err(DataError::Config(format!("patch size {} must be odd and fit the scene", self.patch)));
        }
        let total = self
            .counts
            .total()
            .and_then(|n| n.checked_mul(roster().len()))
            .ok_or_else(|| DataError::Config("split counts overflow".into()))?;
        if total > self.scene.height * self.scene.width {
            return Err(DataError::Config(format!("{total} samples cannot fit in the scene")));
        }
        Ok(())
    }
}

/// Declared contents of one split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitEntry {
    pub file: String,
    pub labels_file: String,
    pub samples: usize,
    pub class_counts: Vec<usize>,
    pub sha256: String,
    pub labels_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub splits: Vec<(Split, SplitEntry)>,
}

fn safe_file_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c))
}

impl DatasetManifest {
    pub fn entry(&self, split: Split) -> Option<&SplitEntry> {
        self.splits.iter().find(|(s, _)| *s == split).map(|(_, e)| e)
    }

    pub fn to_kv(&self) -> KvDoc {
        let spec = &self.spec;
        let mut doc = KvDoc::new();
        doc.set("format_version", FORMAT_VERSION);
        doc.set("kind", KIND);
        spec.write_kv(&mut doc, "");
        doc.set("filter.window", WINDOW);
        doc.set("channels", spec.channels());
        doc.set("bands", BANDS.join(","));
        doc.set("value_range", VALUE_RANGE);
        for c in roster() {
            doc.set(format!("class.{}.name", c.id), c.name);
            doc.set(format!("class.{}.color", c.id), format!("{},{},{}", c.color[0], c.color[1], c.color[2]));
        }
        for (split, e) in &self.splits {
            let n = split.name();
            doc.set(format!("split.{n}.file"), &e.file);
            doc.set(format!("split.{n}.labels"), &e.labels_file);
            doc.set(
                format!("split.{n}.shape"),
                format!("{}x{}x{}x{}", e.samples, spec.channels(), spec.patch, spec.patch),
            );
            let counts: Vec<String> = e.class_counts.iter().map(usize::to_string).collect();
            doc.set(format!("split.{n}.class_counts"), counts.join(","));
            doc.set(format!("split.{n}.sha256"), &e.sha256);
            doc.set(format!("split.{n}.labels_sha256"), &e.labels_sha256);
        }
        doc
    }

    pub fn to_text(&self) -> String {
        self.to_kv().to_string()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let doc = KvDoc::parse(text).map_err(|e| fmt_err(format!("manifest {e}")))?;
        Self::from_kv(&doc)
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let get = |k: &str| doc.require(k).map_err(|e| fmt_err(e.to_string()));
        let version: u32 = doc.parse_value("format_version").map_err(|e| fmt_err(e.to_string()))?;
        if version != FORMAT_VERSION {
            return Err(fmt_err(format!("unsupported format version {version}")));
        }
        if get("kind")? != KIND {
            return Err(fmt_err(format!("not a patch dataset: kind {:?}", get("kind")?)));
        }
        let mut spec = DatasetSpec::default();
        spec.apply_kv(doc, "", true).map_err(|e| fmt_err(e.to_string()))?;
        spec.validate().map_err(|e| fmt_err(e.to_string()))?;
        let expect = |k: &str, want: String| -> Result<()> {
            let got = get(k)?;
            if got != want {
                return Err(fmt_err(format!("{k} is {got:?}, expected {want:?}")));
            }
            Ok(())
        };
        expect("filter.window", WINDOW.to_string())?;
        expect("channels", spec.channels().to_string())?;
        expect("bands", BANDS.join(","))?;
        expect("value_range", VALUE_RANGE.to_string())?;
        let classes = roster();
        for c in &classes {
            expect(&format!("class.{}.name", c.id), c.name.to_string())?;
            expect(
                &format!("class.{}.color", c.id),
                format!("{},{},{}", c.color[0], c.color[1], c.color[2]),
            )?;
        }
        let mut splits = Vec::new();
        for split in Split::ALL {
            let n = split.name();
            let file = get(&format!("split.{n}.file"))?.to_string();
            let labels_file = get(&format!("split.{n}.labels"))?.to_string();
            for f in [&file, &labels_file] {
                if !safe_file_name(f) {
                    return Err(fmt_err(format!("unsafe file name {f:?}")));
                }
            }
            let shape: Vec<usize> = get(&format!("split.{n}.shape"))?
                .split('x')
                .map(|d| d.trim().parse().map_err(|_| fmt_err(format!("bad {n} shape dimension {d:?}"))))
                .collect::<Result<_>>()?;
            let [samples, ch, p1, p2] = shape[..] else {
                return Err(fmt_err(format!("{n} shape must have four dimensions")));
            };
            if (ch, p1, p2) != (spec.channels(), spec.patch, spec.patch) {
                return Err(fmt_err(format!("{n} shape does not match the generation knobs")));
            }
            let class_counts: Vec<usize> = get(&format!("split.{n}.class_counts"))?
                .split(',')
                .map(|d| d.trim().parse().map_err(|_| fmt_err(format!("bad {n} class count {d:?}"))))
                .collect::<Result<_>>()?;
            let per_class = spec.counts.get(split);
            if class_counts.len() != classes.len() || class_counts.iter().any(|&c| c != per_class) {
                return Err(fmt_err(format!("{n} class counts disagree with counts.{n} = {per_class}")));
            }
            if per_class.checked_mul(classes.len()) != Some(samples) {
                return Err(fmt_err(format!("{n} declares {samples} samples")));
            }
            let hash = |k: String| -> Result<String> {
                let h = get(&k)?;
                if h.len() != 64 || !h.chars().all(|c| c.is_ascii_hexdigit()) {
                    return Err(fmt_err(format!("{k} is not a sha256 digest")));
                }
                Ok(h.to_ascii_lowercase())
            };
            splits.push((
                split,
                SplitEntry {
                    file,
                    labels_file,
                    samples,
                    class_counts,
                    sha256: hash(format!("split.{n}.sha256"))?,
                    labels_sha256: hash(format!("split.{n}.labels_sha256"))?,
                },
            ));
        }
        let manifest = Self { spec, splits };
        let canonical = manifest.to_kv();
        if let Some(k) = doc.keys().find(|k| canonical.get(k).is_none()) {
            return Err(fmt_err(format!("unknown manifest key {k:?}")));
        }
        Ok(manifest)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Streams little-endian words to `path`, returning their sha256.
fn write_words<I: Iterator<Item = [u8; 4]>>(path: &Path, words: I) -> Result<String> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut hasher = Sha256::new();
    let mut buf = Vec::with_capacity(IO_CHUNK);
    for w in words {
        buf.extend_from_slice(&w);
        if buf.len() >= IO_CHUNK {
            hasher.update(&buf);
            out.write_all(&buf)?;
            buf.clear();
        }
    }
    hasher.update(&buf);
    out.write_all(&buf)?;
    out.flush()?;
    Ok(hex::encode(hasher.finalize()))
}

/// Reads exactly `count` little-endian words from `path`, returning them with their sha256.
fn read_words<T>(path: &Path, count: usize, decode: impl Fn([u8; 4]) -> T) -> Result<(Vec<T>, String)> {
    let mut file = File::open(path)?;
    let bytes = count
        .checked_mul(4)
        .ok_or_else(|| fmt_err("declared array size overflows"))?;
    if file.metadata()?.len() != bytes as u64 {
        return Err(fmt_err(format!("{} does not hold {count} values", path.display())));
    }
    let mut hasher = Sha256::new();
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0u8; IO_CHUNK];
    let mut left = bytes;
    while left > 0 {
        let n = left.min(IO_CHUNK);
        file.read_exact(&mut buf[..n])?;
        hasher.update(&buf[..n]);
        out.extend(buf[..n].chunks_exact(4).map(|c| decode(c.try_into().expect("4 bytes"))));
        left -= n;
    }
    Ok((out, hex::encode(hasher.finalize())))
}

/// Writes the dataset into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, spec: &DatasetSpec, ds: &PatchDataset) -> Result<DatasetManifest> {
    fs::create_dir_all(dir)?;
    let classes = roster().len();
    let mut splits = Vec::new();
    for split in Split::ALL {
        let set = ds.split(split);
        if set.channels != spec.channels() || set.patch != spec.patch {
            return Err(DataError::Config(format!("{split} patches do not match the dataset spec")));
        }
        let class_counts = set.class_counts(classes);
        if class_counts.iter().any(|&c| c != spec.counts.get(split)) {
            return Err(DataError::Config(format!("{split} class counts do not match the dataset spec")));
        }
        let file = format!("{split}.f32");
        let labels_file = format!("{split}.labels.i32");
        let sha256 = write_words(&dir.join(&file), set.patches.iter().map(|v| v.to_le_bytes()))?;
        let labels_sha256 = write_words(
            &dir.join(&labels_file),
            set.labels.iter().map(|&l| i32::from(l).to_le_bytes()),
        )?;
        let entry = SplitEntry {
            file,
            labels_file,
            samples: set.len(),
            class_counts,
            sha256,
            labels_sha256,
        };
        splits.push((split, entry));
    }
    let manifest = DatasetManifest {
        spec: spec.clone(),
        splits,
    };
    fs::write(dir.join(MANIFEST_FILE), manifest.to_text())?;
    Ok(manifest)
}

/// Reads and verifies a dataset directory. Loaded sets carry no center coordinates.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, PatchDataset)> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest = DatasetManifest::parse(&text)?;
    let spec = &manifest.spec;
    let mut sets = Vec::new();
    for (split, e) in &manifest.splits {
        let floats = e.samples * spec.channels() * spec.patch * spec.patch;
        let (labels, labels_sha) = read_words(&dir.join(&e.labels_file), e.samples, i32::from_le_bytes)?;
        let (patches, sha) = read_words(&dir.join(&e.file), floats, f32::from_le_bytes)?;
        if sha != e.sha256 || labels_sha != e.labels_sha256 {
            return Err(fmt_err(format!("{split} checksum mismatch")));
        }
        let mut set = PatchSet::empty(*split, spec.channels(), spec.patch);
        set.patches = patches;
        if set.patches.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(fmt_err(format!("{split} values outside {VALUE_RANGE}")));
        }
        for l in labels {
            let id = u8::try_from(l)
                .ok()
                .filter(|id| (1..=roster().len() as u8).contains(id))
                .ok_or_else(|| fmt_err(format!("{split} label {l} outside 1..=11")))?;
            set.labels.push(id);
        }
        if set.class_counts(roster().len()) != e.class_counts {
            return Err(fmt_err(format!("{split} labels disagree with the declared class counts")));
        }
        sets.push(set);
    }
    let test = sets.pop().expect("three splits");
    let val = sets.pop().expect("three splits");
    let train = sets.pop().expect("three splits");
    Ok((manifest, PatchDataset { train, val, test }))
}
