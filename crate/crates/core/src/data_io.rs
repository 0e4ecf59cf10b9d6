//! Feature files, manifests, frame labels and the synthetic dataset generator.
//!
//! Feature file layout (little endian): magic `HVDF`, `u16` version, `u32`
//! rows, `u32` cols, then `rows * cols` `f32` values row-major.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FeatureSequence, Modality};
use crate::tensor::Matrix;
use crate::training::{VideoBag, FRAMES_PER_SNIPPET};
use crate::Rng;

pub const FEATURE_MAGIC: &[u8; 4] = b"HVDF";
pub const FEATURE_VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

pub fn features_to_bytes(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * m.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for &v in m.as_slice() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses a feature file; `origin` only labels errors.
pub fn features_from_bytes(bytes: &[u8], origin: &Path) -> Result<Matrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(origin, bytes.len() as u64, "truncated header"));
    }
    if &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format(origin, 0, "bad magic, expected HVDF"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(Error::format(origin, 4, format!("unsupported version {version}")));
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format(origin, 6, "matrix size overflows"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::format(
            origin,
            bytes.len() as u64,
            format!("truncated payload: {rows}x{cols} needs {expected} bytes, found {}", payload.len()),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format(
            origin,
            (HEADER_LEN + expected) as u64,
            "trailing bytes after payload",
        ));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(Error::format(origin, (HEADER_LEN + 4 * i) as u64, "non-finite value"));
        }
        data.push(f64::from(v));
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn write_features(path: impl AsRef<Path>, m: &Matrix) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, features_to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    features_from_bytes(&bytes, path)
}

/// One line per frame, `0` or `1`.
pub fn write_frame_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(2 * labels.len());
    for l in labels {
        writeln!(out, "{l}").unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_frame_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.lines() {
        match line.trim() {
            "0" => out.push(0),
            "1" => out.push(1),
            "" => {}
            other => return Err(Error::format(path, offset, format!("frame label `{other}` is not 0 or 1"))),
        }
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

/// Repeats each snippet score once per frame.
pub fn expand_scores(scores: &[f64]) -> Vec<f64> {
    scores
        .iter()
        .flat_map(|&s| std::iter::repeat_n(s, FRAMES_PER_SNIPPET))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub visual: PathBuf,
    pub audio: PathBuf,
    pub label: u8,
    pub frame_labels: Option<PathBuf>,
}

/// Comma-separated `id,visual,audio,label[,frame_labels]` lines; paths are
/// relative to the manifest's directory. Blank lines and `#` comments are
/// skipped.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, dir: impl Into<PathBuf>, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut offset = 0u64;
        for line in text.lines() {
            let trimmed = line.trim();
            if !trimmed.is_empty() && !trimmed.starts_with('#') {
                let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
                let bad = |msg: &str| Error::format(origin, offset, format!("{msg}: `{trimmed}`"));
                if !(4..=5).contains(&fields.len()) {
                    return Err(bad("expected id,visual,audio,label[,frame_labels]"));
                }
                let label = match fields[3] {
                    "0" => 0,
                    "1" => 1,
                    _ => return Err(bad("label must be 0 or 1")),
                };
                entries.push(ManifestEntry {
                    id: fields[0].to_owned(),
                    visual: fields[1].into(),
                    audio: fields[2].into(),
                    label,
                    frame_labels: fields.get(4).filter(|s| !s.is_empty()).map(PathBuf::from),
                });
            }
            offset += line.len() as u64 + 1;
        }
        Ok(Self {
            dir: dir.into(),
            entries,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, dir, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            write!(out, "{},{},{},{}", e.id, e.visual.display(), e.audio.display(), e.label).unwrap();
            if let Some(f) = &e.frame_labels {
                write!(out, ",{}", f.display()).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        self.dir.join(p)
    }

    /// Loads every referenced file. Missing files and mismatched snippet
    /// counts are errors.
    pub fn load(&self) -> Result<Vec<VideoBag>> {
        self.entries
            .iter()
            .map(|e| {
                let v = read_features(self.resolve(&e.visual))?;
                let a = read_features(self.resolve(&e.audio))?;
                if v.rows() != a.rows() {
                    return Err(Error::Data(format!(
                        "video `{}`: visual has {} snippets, audio {}",
                        e.id,
                        v.rows(),
                        a.rows()
                    )));
                }
                let frames = e
                    .frame_labels
                    .as_ref()
                    .map(|p| read_frame_labels(self.resolve(p)))
                    .transpose()?;
                let data_err = |err: Error| Error::Data(format!("video `{}`: {err}", e.id));
                VideoBag::new(
                    e.id.clone(),
                    FeatureSequence::new(v, Modality::Visual).map_err(data_err)?,
                    FeatureSequence::new(a, Modality::Audio).map_err(data_err)?,
                    e.label,
                    frames,
                )
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub t_min: usize,
    pub t_max: usize,
    pub visual_dim: usize,
    pub audio_dim: usize,
    /// Shift of violent snippets along the hidden direction of each modality.
    pub separation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_train: 64,
            n_test: 32,
            t_min: 8,
            t_max: 32,
            visual_dim: 16,
            audio_dim: 8,
            separation: 4.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.separation >= 0.0) || !self.separation.is_finite() {
            return Err(Error::Config("separation must be finite and >= 0".into()));
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return Err(Error::Config("need 1 <= t_min <= t_max".into()));
        }
        if self.visual_dim == 0 || self.audio_dim == 0 {
            return Err(Error::Config("feature dimensions must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub train: Vec<VideoBag>,
    pub test: Vec<VideoBag>,
    /// Unit directions along which violent snippets are shifted.
    pub visual_direction: Vec<f64>,
    pub audio_direction: Vec<f64>,
}

impl SyntheticDataset {
    /// Frame scores of the projection onto the hidden directions.
    pub fn oracle_frame_scores(&self, bag: &VideoBag) -> Vec<f64> {
        let s: Vec<f64> = (0..bag.len())
            .map(|i| {
                crate::tensor::dot(bag.visual.data().row(i), &self.visual_direction)
                    + crate::tensor::dot(bag.audio.data().row(i), &self.audio_direction)
            })
            .collect();
        expand_scores(&s)
    }
}

fn unit_direction(rng: &mut Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = crate::tensor::norm(&v);
        if n > 1e-8 {
            return v.iter().map(|x| x / n).collect();
        }
    }
}

fn synth_video(
    rng: &mut Rng,
    cfg: &SynthConfig,
    id: String,
    label: u8,
    dirs: (&[f64], &[f64]),
) -> Result<VideoBag> {
    let t = rng.random_range(cfg.t_min..=cfg.t_max);
    let mut violent = vec![false; t];
    if label == 1 {
        let frac = rng.random_range(0.1..=0.5);
        let len = ((frac * t as f64).round() as usize).clamp(1, t);
        let start = rng.random_range(0..=t - len);
        violent[start..start + len].iter_mut().for_each(|v| *v = true);
    }
    let mut modality = |dim: usize, dir: &[f64], m: Modality| -> Result<FeatureSequence> {
        let mut data = Vec::with_capacity(t * dim);
        for &is_violent in &violent {
            let shift = if is_violent { cfg.separation } else { 0.0 };
            for &d in dir {
                let x: f64 = rng.sample(StandardNormal);
                // stored as f32 on disk; keep memory and disk identical
                data.push(f64::from((x + shift * d) as f32));
            }
        }
        FeatureSequence::new(Matrix::from_vec(t, dim, data)?, m)
    };
    let visual = modality(cfg.visual_dim, dirs.0, Modality::Visual)?;
    let audio = modality(cfg.audio_dim, dirs.1, Modality::Audio)?;
    let snippet_labels: Vec<f64> = violent.iter().map(|&v| f64::from(u8::from(v))).collect();
    let frames = expand_scores(&snippet_labels).into_iter().map(|v| v as u8).collect();
    VideoBag::new(id, visual, audio, label, Some(frames))
}

/// Deterministic synthetic dataset. Labels alternate so both splits are
/// balanced; violent videos hold one contiguous violent run covering 10-50%
/// of their snippets.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let visual_direction = unit_direction(&mut rng, cfg.visual_dim);
    let audio_direction = unit_direction(&mut rng, cfg.audio_dim);
    let dirs = (visual_direction.as_slice(), audio_direction.as_slice());
    let mut split = |prefix: &str, n: usize| -> Result<Vec<VideoBag>> {
        (0..n)
            .map(|i| synth_video(&mut rng, cfg, format!("{prefix}{i:04}"), ((i + 1) % 2) as u8, dirs))
            .collect()
    };
    let train = split("train_", cfg.n_train)?;
    let test = split("test_", cfg.n_test)?;
    Ok(SyntheticDataset {
        train,
        test,
        visual_direction,
        audio_direction,
    })
}

/// Writes `features/`, `labels/`, `train.csv` and `test.csv` under `dir`.
/// Frame labels are written for the test split only.
pub fn write_dataset(dir: impl AsRef<Path>, data: &SyntheticDataset) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["features", "labels"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (name, bags, with_frames) in [("train.csv", &data.train, false), ("test.csv", &data.test, true)] {
        let mut entries = Vec::with_capacity(bags.len());
        for bag in bags {
            let visual = PathBuf::from(format!("features/{}_visual.hvdf", bag.id));
            let audio = PathBuf::from(format!("features/{}_audio.hvdf", bag.id));
            write_features(dir.join(&visual), bag.visual.data())?;
            write_features(dir.join(&audio), bag.audio.data())?;
            let frame_labels = match (&bag.frame_labels, with_frames) {
                (Some(f), true) => {
                    let p = PathBuf::from(format!("labels/{}.txt", bag.id));
                    write_frame_labels(dir.join(&p), f)?;
                    Some(p)
                }
                _ => None,
            };
            entries.push(ManifestEntry {
                id: bag.id.clone(),
                visual,
                audio,
                label: bag.label,
                frame_labels,
            });
        }
        Manifest {
            dir: dir.to_path_buf(),
            entries,
        }
        .write(dir.join(name))?;
    }
    Ok(())
}
