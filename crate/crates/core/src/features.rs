//! Per-clip appearance and motion features.
//!
//! Feature files (`<root>/<clip_id>.feat`) are little-endian binary:
//!
//! ```text
//! magic   b"VQAF"
//! version u32 = 1
//! frames  u32 (N)
//! d_app   u32 (D_a)
//! d_mot   u32 (D_m)
//! body    N*D_a f32 appearance values, then N*D_m f32 motion values, row-major
//! ```
//!
//! A store directory may carry an `index.json` object mapping clip ids to
//! file names relative to the root; without it the directory is scanned.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"VQAF";
pub const VERSION: u32 = 1;
pub const FLIP_SUFFIX: &str = "__hflip";
pub const EXTENSION: &str = "feat";

#[derive(Clone, Debug, PartialEq)]
pub struct ClipFeatures {
    pub clip_id: String,
    pub appearance: Matrix<f32>,
    pub motion: Matrix<f32>,
}

impl ClipFeatures {
    pub fn new(clip_id: impl Into<String>, appearance: Matrix<f32>, motion: Matrix<f32>) -> Result<Self> {
        let cf = Self {
            clip_id: clip_id.into(),
            appearance,
            motion,
        };
        cf.validate()?;
        Ok(cf)
    }

    pub fn frames(&self) -> usize {
        self.appearance.rows()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.appearance.cols(), self.motion.cols())
    }

    pub fn validate(&self) -> Result<()> {
        if self.appearance.rows() == 0 {
            return Err(Error::Shape(format!("clip `{}` has no frames", self.clip_id)));
        }
        if self.appearance.rows() != self.motion.rows() {
            return Err(Error::Shape(format!(
                "clip `{}`: appearance has {} frames, motion has {}",
                self.clip_id,
                self.appearance.rows(),
                self.motion.rows()
            )));
        }
        if !self.appearance.is_finite() || !self.motion.is_finite() {
            return Err(Error::NonFinite(format!("features of clip `{}`", self.clip_id)));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.frames() as u32)?;
        w.write_u32::<LittleEndian>(self.appearance.cols() as u32)?;
        w.write_u32::<LittleEndian>(self.motion.cols() as u32)?;
        for &v in self.appearance.as_slice().iter().chain(self.motion.as_slice()) {
            w.write_f32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a feature file body; the returned clip is not yet validated.
    pub fn read_from<R: Read>(clip_id: &str, r: &mut R) -> std::io::Result<Self> {
        let (frames, da, dm) = read_header(r)?;
        let mut read_matrix = |cols: usize| -> std::io::Result<Matrix<f32>> {
            let mut data = vec![0f32; frames * cols];
            r.read_f32_into::<LittleEndian>(&mut data)?;
            Ok(Matrix::from_vec(frames, cols, data))
        };
        let appearance = read_matrix(da)?;
        let motion = read_matrix(dm)?;
        Ok(Self {
            clip_id: clip_id.to_string(),
            appearance,
            motion,
        })
    }
}

fn read_header<R: Read>(r: &mut R) -> std::io::Result<(usize, usize, usize)> {
    let invalid = |m: String| std::io::Error::new(std::io::ErrorKind::InvalidData, m);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid(format!("bad magic {magic:?}")));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(invalid(format!("unsupported version {version}")));
    }
    let frames = r.read_u32::<LittleEndian>()? as usize;
    let da = r.read_u32::<LittleEndian>()? as usize;
    let dm = r.read_u32::<LittleEndian>()? as usize;
    Ok((frames, da, dm))
}

/// Row `t` is `[appearance_t ; motion_t]`, width `D_a + D_m`.
pub fn concat_features(cf: &ClipFeatures) -> Matrix<f32> {
    Matrix::hcat(&[&cf.appearance, &cf.motion])
}

/// Uniform temporal subsampling to at most `n_max` frames; frame `i` of the
/// result is source frame `floor(i * N / n_max)`.
pub fn cap_frames(m: &Matrix<f32>, n_max: usize) -> Matrix<f32> {
    let n = m.rows();
    if n_max == 0 || n <= n_max {
        return m.clone();
    }
    let idx: Vec<usize> = (0..n_max).map(|i| i * n / n_max).collect();
    m.select_rows(&idx)
}

/// Deterministic synthetic features with entries in `[-1, 1]`, keyed by
/// `(clip_id, seed)`.
pub fn synth_features(clip_id: &str, frames: usize, dims: (usize, usize), seed: u64) -> ClipFeatures {
    assert!(frames >= 1, "synthetic clips need at least one frame");
    let mut rng = rng::stream(seed, clip_id);
    let mut draw = |cols: usize| {
        let data = (0..frames * cols).map(|_| rng.gen_range(-1.0f32..=1.0)).collect();
        Matrix::from_vec(frames, cols, data)
    };
    let appearance = draw(dims.0);
    let motion = draw(dims.1);
    ClipFeatures {
        clip_id: clip_id.to_string(),
        appearance,
        motion,
    }
}

/// Column permutation that is its own inverse: a seeded shuffle of the
/// column indices whose consecutive pairs are swapped. Odd widths leave one
/// column fixed.
pub fn involutive_permutation(width: usize, seed: u64, label: &str) -> Vec<usize> {
    let mut order: Vec<usize> = (0..width).collect();
    order.shuffle(&mut rng::stream(seed, label));
    let mut perm: Vec<usize> = (0..width).collect();
    for pair in order.chunks_exact(2) {
        perm[pair[0]] = pair[1];
        perm[pair[1]] = pair[0];
    }
    perm
}

fn permute_cols(m: &Matrix<f32>, perm: &[usize]) -> Matrix<f32> {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        for (c, &src) in perm.iter().enumerate() {
            out.set(r, c, m.get(r, src));
        }
    }
    out
}

/// The clip id a flipped clip is stored under. Flipping a flipped id returns
/// the base id.
pub fn flipped_clip_id(clip_id: &str) -> String {
    match clip_id.strip_suffix(FLIP_SUFFIX) {
        Some(base) => base.to_string(),
        None => format!("{clip_id}{FLIP_SUFFIX}"),
    }
}

#[derive(Clone, Debug)]
enum Source {
    Dir {
        root: PathBuf,
        index: BTreeMap<String, PathBuf>,
    },
    Memory(BTreeMap<String, ClipFeatures>),
}

/// Read-only collection of clip features sharing one `(D_a, D_m)`.
#[derive(Clone, Debug)]
pub struct FeatureStore {
    source: Source,
    overlay: BTreeMap<String, ClipFeatures>,
    dims: Option<(usize, usize)>,
    flip_seed: u64,
}

impl FeatureStore {
    /// Open a feature directory, using `index.json` when present and
    /// scanning for `*.feat` files otherwise. Every file header is read so
    /// that mixed dimensions are rejected up front.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let index_path = root.join("index.json");
        let index: BTreeMap<String, PathBuf> = if index_path.exists() {
            let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
            let names: BTreeMap<String, String> =
                serde_json::from_str(&text).map_err(|e| Error::Format {
                    kind: "feature index",
                    path: index_path.display().to_string(),
                    message: e.to_string(),
                })?;
            names.into_iter().map(|(k, v)| (k, root.join(v))).collect()
        } else {
            let mut index = BTreeMap::new();
            let entries = fs::read_dir(&root).map_err(|e| Error::io(&root, e))?;
            for entry in entries {
                let path = entry.map_err(|e| Error::io(&root, e))?.path();
                if path.extension().and_then(|e| e.to_str()) == Some(EXTENSION) {
                    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                        index.insert(stem.to_string(), path.clone());
                    }
                }
            }
            index
        };

        let mut dims = None;
        for (clip_id, path) in &index {
            let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            let (_, da, dm) = read_header(&mut BufReader::new(file)).map_err(|e| Error::Format {
                kind: "feature",
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
            match dims {
                None => dims = Some((da, dm)),
                Some(d) if d != (da, dm) => {
                    return Err(Error::DimensionMismatch {
                        clip_id: clip_id.clone(),
                        expected: d,
                        found: (da, dm),
                    })
                }
                _ => {}
            }
        }
        Ok(Self {
            source: Source::Dir { root, index },
            overlay: BTreeMap::new(),
            dims,
            flip_seed: 0,
        })
    }

    pub fn in_memory(clips: impl IntoIterator<Item = ClipFeatures>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut dims = None;
        for cf in clips {
            cf.validate()?;
            match dims {
                None => dims = Some(cf.dims()),
                Some(d) if d != cf.dims() => {
                    return Err(Error::DimensionMismatch {
                        clip_id: cf.clip_id.clone(),
                        expected: d,
                        found: cf.dims(),
                    })
                }
                _ => {}
            }
            map.insert(cf.clip_id.clone(), cf);
        }
        Ok(Self {
            source: Source::Memory(map),
            overlay: BTreeMap::new(),
            dims,
            flip_seed: 0,
        })
    }

    /// Seed for the surrogate flip permutation.
    pub fn with_flip_seed(mut self, seed: u64) -> Self {
        self.flip_seed = seed;
        self
    }

    /// Copy of the store that also serves `clips`, which take precedence
    /// over stored entries with the same id.
    pub fn with_overlay(&self, clips: impl IntoIterator<Item = ClipFeatures>) -> Result<Self> {
        let mut out = self.clone();
        for cf in clips {
            cf.validate()?;
            match out.dims {
                None => out.dims = Some(cf.dims()),
                Some(d) if d != cf.dims() => {
                    return Err(Error::DimensionMismatch {
                        clip_id: cf.clip_id.clone(),
                        expected: d,
                        found: cf.dims(),
                    })
                }
                _ => {}
            }
            out.overlay.insert(cf.clip_id.clone(), cf);
        }
        Ok(out)
    }

    pub fn flip_seed(&self) -> u64 {
        self.flip_seed
    }

    /// `(D_a, D_m)`, or `None` for an empty store.
    pub fn dims(&self) -> Option<(usize, usize)> {
        self.dims
    }

    pub fn root(&self) -> Option<&Path> {
        match &self.source {
            Source::Dir { root, .. } => Some(root),
            Source::Memory(_) => None,
        }
    }

    pub fn contains(&self, clip_id: &str) -> bool {
        if self.overlay.contains_key(clip_id) {
            return true;
        }
        match &self.source {
            Source::Dir { index, .. } => index.contains_key(clip_id),
            Source::Memory(map) => map.contains_key(clip_id),
        }
    }

    pub fn clip_ids(&self) -> Vec<String> {
        let base: Vec<&String> = match &self.source {
            Source::Dir { index, .. } => index.keys().collect(),
            Source::Memory(map) => map.keys().collect(),
        };
        let ids: std::collections::BTreeSet<String> =
            base.into_iter().chain(self.overlay.keys()).cloned().collect();
        ids.into_iter().collect()
    }

    pub fn len(&self) -> usize {
        self.clip_ids().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn load_clip(&self, clip_id: &str) -> Result<ClipFeatures> {
        if let Some(cf) = self.overlay.get(clip_id) {
            return Ok(cf.clone());
        }
        let cf = match &self.source {
            Source::Dir { index, .. } => {
                let path = index
                    .get(clip_id)
                    .ok_or_else(|| Error::MissingClip(clip_id.to_string()))?;
                let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
                ClipFeatures::read_from(clip_id, &mut BufReader::new(file)).map_err(|e| {
                    Error::Format {
                        kind: "feature",
                        path: path.display().to_string(),
                        message: e.to_string(),
                    }
                })?
            }
            Source::Memory(map) => map
                .get(clip_id)
                .cloned()
                .ok_or_else(|| Error::MissingClip(clip_id.to_string()))?,
        };
        if let Some(expected) = self.dims {
            if cf.dims() != expected {
                return Err(Error::DimensionMismatch {
                    clip_id: clip_id.to_string(),
                    expected,
                    found: cf.dims(),
                });
            }
        }
        cf.validate()?;
        Ok(cf)
    }

    /// Features of the horizontally flipped clip.
    ///
    /// A stored flipped entry (`<clip_id>__hflip`, or the base id when
    /// `clip_id` is itself a flipped id) is returned verbatim. Otherwise the
    /// surrogate is produced: appearance and motion columns are permuted by
    /// store-seeded involutive permutations. The surrogate stands in for
    /// re-running the frozen backbones on mirrored frames and is not
    /// visually faithful.
    pub fn flipped_features(&self, clip_id: &str) -> Result<ClipFeatures> {
        let target = flipped_clip_id(clip_id);
        if self.contains(&target) {
            return self.load_clip(&target);
        }
        let src = self.load_clip(clip_id)?;
        Ok(surrogate_flip(&src, &target, self.flip_seed))
    }

    /// Whether `flipped_features` would fall back to the surrogate.
    pub fn uses_surrogate_flip(&self, clip_id: &str) -> bool {
        !self.contains(&flipped_clip_id(clip_id))
    }
}

/// Surrogate flip of `src`, stored under `target_id`.
pub fn surrogate_flip(src: &ClipFeatures, target_id: &str, seed: u64) -> ClipFeatures {
    let (da, dm) = src.dims();
    let pa = involutive_permutation(da, seed, "hflip/appearance");
    let pm = involutive_permutation(dm, seed, "hflip/motion");
    ClipFeatures {
        clip_id: target_id.to_string(),
        appearance: permute_cols(&src.appearance, &pa),
        motion: permute_cols(&src.motion, &pm),
    }
}

/// Write `clips` into `root` as `<clip_id>.feat` files. An existing
/// `index.json` in `root` is extended with the new entries.
pub fn write_store<'a>(root: impl AsRef<Path>, clips: impl IntoIterator<Item = &'a ClipFeatures>) -> Result<usize> {
    let root = root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut written = Vec::new();
    for cf in clips {
        let name = format!("{}.{EXTENSION}", cf.clip_id);
        cf.save(root.join(&name))?;
        written.push((cf.clip_id.clone(), name));
    }
    let index_path = root.join("index.json");
    if index_path.exists() && !written.is_empty() {
        let text = fs::read_to_string(&index_path).map_err(|e| Error::io(&index_path, e))?;
        let mut index: BTreeMap<String, String> = serde_json::from_str(&text).map_err(|e| Error::Format {
            kind: "feature index",
            path: index_path.display().to_string(),
            message: e.to_string(),
        })?;
        index.extend(written.iter().cloned());
        let text = serde_json::to_string_pretty(&index).expect("string map serializes");
        fs::write(&index_path, text + "\n").map_err(|e| Error::io(&index_path, e))?;
    }
    Ok(written.len())
}
