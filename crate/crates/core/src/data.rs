//! Embedding datasets stored in the `HALN` binary format, plus prompt-disjoint
//! splitting and a synthetic generator with a planted alignment rule.
//!
//! File layout (little-endian, no padding):
//!
//! ```text
//! magic     "HALN"
//! version   u32 = 1
//! dim       u32
//! count     u32
//! scale_min f32
//! scale_max f32
//! count x { group_id u32, mos_raw f32, image dim x f32, text dim x f32 }
//! ```

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HALN";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Prompt identity; samples sharing a prompt share a group.
    pub group_id: u32,
    pub mos_raw: f32,
    /// Normalized score in `[0, 1]`, or NaN when loaded without scores.
    pub score: f64,
    pub image_emb: Vec<f32>,
    pub text_emb: Vec<f32>,
}

impl Sample {
    pub fn image_f64(&self) -> Vec<f64> {
        self.image_emb.iter().map(|&x| x as f64).collect()
    }

    pub fn text_f64(&self) -> Vec<f64> {
        self.text_emb.iter().map(|&x| x as f64).collect()
    }

    pub fn has_score(&self) -> bool {
        (0.0..=1.0).contains(&self.score)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub samples: Vec<Sample>,
    pub scale_min: f32,
    pub scale_max: f32,
}

impl Dataset {
    pub fn new(dim: usize, scale_min: f32, scale_max: f32) -> Result<Self> {
        if !(scale_min < scale_max) {
            return Err(Error::invalid(format!(
                "scale bounds must satisfy min < max, got [{scale_min}, {scale_max}]"
            )));
        }
        Ok(Self {
            dim,
            samples: Vec::new(),
            scale_min,
            scale_max,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same header, a chosen subset of samples.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            dim: self.dim,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            scale_min: self.scale_min,
            scale_max: self.scale_max,
        }
    }

    pub fn scores(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.score).collect()
    }

    pub fn group_ids(&self) -> Vec<u32> {
        let mut g: Vec<u32> = self.samples.iter().map(|s| s.group_id).collect();
        g.sort_unstable();
        g.dedup();
        g
    }

    /// Push a sample, normalizing its raw MOS against the dataset scale.
    pub fn push(
        &mut self,
        group_id: u32,
        mos_raw: f32,
        image_emb: Vec<f32>,
        text_emb: Vec<f32>,
    ) -> Result<()> {
        let index = self.samples.len();
        if image_emb.len() != self.dim || text_emb.len() != self.dim {
            return Err(Error::Data {
                index,
                message: format!(
                    "embedding dimension differs from dataset dimension {}",
                    self.dim
                ),
            });
        }
        let score = normalize_score(mos_raw as f64, self.scale_min as f64, self.scale_max as f64)
            .map_err(|e| Error::Data {
            index,
            message: e.to_string(),
        })?;
        self.samples.push(Sample {
            group_id,
            mos_raw,
            score,
            image_emb,
            text_emb,
        });
        Ok(())
    }
}

/// Linear min-max normalization of a raw MOS onto `[0, 1]`.
pub fn normalize_score(mos: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::invalid(format!(
            "scale bounds must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    if !(lo..=hi).contains(&mos) {
        return Err(Error::invalid(format!(
            "MOS {mos} outside scale [{lo}, {hi}]"
        )));
    }
    Ok(((mos - lo) / (hi - lo)).clamp(0.0, 1.0))
}

pub fn encode_embeddings(ds: &Dataset) -> Vec<u8> {
    let rec = 8 + 8 * ds.dim;
    let mut buf = Vec::with_capacity(HEADER_LEN + rec * ds.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ds.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    buf.extend_from_slice(&ds.scale_min.to_le_bytes());
    buf.extend_from_slice(&ds.scale_max.to_le_bytes());
    for s in &ds.samples {
        buf.extend_from_slice(&s.group_id.to_le_bytes());
        buf.extend_from_slice(&s.mos_raw.to_le_bytes());
        for x in s.image_emb.iter().chain(&s.text_emb) {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf
}

pub fn save_embeddings(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_embeddings(ds))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.buf.len() as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(4 * n, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parse a `HALN` buffer. With `require_scores`, every MOS must lie on the
/// declared scale; otherwise out-of-scale or NaN MOS values load with a NaN
/// score (for inference-only files).
pub fn decode_embeddings(buf: &[u8], require_scores: bool) -> Result<Dataset> {
    let mut r = Reader { buf, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad magic {:?}", String::from_utf8_lossy(magic)),
        });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let dim = r.u32("dim")? as usize;
    if dim == 0 {
        return Err(Error::Format {
            offset: 8,
            message: "dimension must be positive".into(),
        });
    }
    let count = r.u32("count")? as usize;
    let scale_min = r.f32("scale_min")?;
    let scale_max = r.f32("scale_max")?;
    if !(scale_min < scale_max) {
        return Err(Error::Format {
            offset: 16,
            message: format!("scale bounds must satisfy min < max, got [{scale_min}, {scale_max}]"),
        });
    }
    let rec_len = 8 + 8 * dim;
    let expected = HEADER_LEN as u64 + (count as u64) * (rec_len as u64);
    if (buf.len() as u64) < expected {
        return Err(Error::Format {
            offset: buf.len() as u64,
            message: format!(
                "truncated: header declares {count} records ({expected} bytes), file has {} bytes",
                buf.len()
            ),
        });
    }
    if (buf.len() as u64) > expected {
        return Err(Error::Format {
            offset: expected,
            message: format!(
                "{} trailing bytes after last record",
                buf.len() as u64 - expected
            ),
        });
    }

    let mut samples = Vec::with_capacity(count);
    for index in 0..count {
        let group_id = r.u32("group_id")?;
        let mos_raw = r.f32("mos")?;
        let image_emb = r.f32s(dim, "image embedding")?;
        let text_emb = r.f32s(dim, "text embedding")?;
        if image_emb.iter().chain(&text_emb).any(|x| !x.is_finite()) {
            return Err(Error::Data {
                index,
                message: "non-finite embedding value".into(),
            });
        }
        let score = match normalize_score(mos_raw as f64, scale_min as f64, scale_max as f64) {
            Ok(s) => s,
            Err(_) if !require_scores => f64::NAN,
            Err(e) => {
                return Err(Error::Data {
                    index,
                    message: e.to_string(),
                })
            }
        };
        samples.push(Sample {
            group_id,
            mos_raw,
            score,
            image_emb,
            text_emb,
        });
    }
    Ok(Dataset {
        dim,
        samples,
        scale_min,
        scale_max,
    })
}

/// Load a scored dataset.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_embeddings(&fs::read(path)?, true)
}

/// Load a dataset whose MOS values may be placeholders.
pub fn load_embeddings_unscored(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_embeddings(&fs::read(path)?, false)
}

/// Partition by group id so no prompt appears on both sides.
///
/// Distinct groups are shuffled with the seed and assigned to the train side
/// until it holds at least `train_fraction` of the samples. At least one group
/// always lands on each side.
pub fn prompt_disjoint_split(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut by_group: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        by_group.entry(s.group_id).or_default().push(i);
    }
    if by_group.len() < 2 {
        return Err(Error::invalid(format!(
            "prompt-disjoint split needs at least 2 groups, got {}",
            by_group.len()
        )));
    }
    let mut groups: Vec<&Vec<usize>> = by_group.values().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);

    let target = train_fraction * ds.len() as f64 - 1e-9;
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    let last = groups.len() - 1;
    for (gi, members) in groups.into_iter().enumerate() {
        let train_full = train_idx.len() as f64 >= target;
        if gi == 0 || (!train_full && gi < last) {
            train_idx.extend_from_slice(members);
        } else {
            test_idx.extend_from_slice(members);
        }
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    Ok((ds.subset(&train_idx), ds.subset(&test_idx)))
}

/// Largest planted angle between an image and its prompt.
pub const SYNTH_MAX_ANGLE: f64 = FRAC_PI_2;

/// Synthetic dataset with a planted angle-to-score rule.
///
/// Prompts are unit vectors drawn inside a `d/4`-dimensional concept
/// subspace, one per group. Each image is its prompt rotated by a uniform
/// angle `theta` in `[0, pi/2]` toward a random direction of the full space,
/// so misaligned images carry more off-subspace energy. The score is
/// `1 - theta / (pi/2)` plus uniform noise in `[-noise, noise]`, clamped to
/// `[0, 1]`, and stored as a MOS on the 1..5 scale.
pub fn synthetic_dataset(n: usize, d: usize, seed: u64, noise: f64) -> Result<Dataset> {
    if n < 10 {
        return Err(Error::invalid(format!(
            "synthetic dataset needs n >= 10, got {n}"
        )));
    }
    if d < 4 {
        return Err(Error::invalid(format!(
            "synthetic dataset needs d >= 4, got {d}"
        )));
    }
    if !(noise.is_finite() && noise >= 0.0) {
        return Err(Error::invalid(format!(
            "noise must be non-negative, got {noise}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_groups = (n / 40).max(5);
    let concept_dim = (d / 4).max(2);

    let centers: Vec<Vec<f64>> = (0..n_groups)
        .map(|_| {
            let mut c = vec![0.0; d];
            for x in c.iter_mut().take(concept_dim) {
                *x = rng.sample(StandardNormal);
            }
            normalize(&mut c);
            c
        })
        .collect();

    let mut ds = Dataset::new(d, 1.0, 5.0)?;
    for i in 0..n {
        let g = i % n_groups;
        let center = &centers[g];
        let theta = rng.random_range(0.0..=SYNTH_MAX_ANGLE);
        let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let along: f64 = dir.iter().zip(center).map(|(a, b)| a * b).sum();
        for (x, c) in dir.iter_mut().zip(center) {
            *x -= along * c;
        }
        normalize(&mut dir);
        let image: Vec<f32> = center
            .iter()
            .zip(&dir)
            .map(|(c, u)| (theta.cos() * c + theta.sin() * u) as f32)
            .collect();
        let jitter = if noise > 0.0 {
            rng.random_range(-noise..=noise)
        } else {
            0.0
        };
        let score = (1.0 - theta / SYNTH_MAX_ANGLE + jitter).clamp(0.0, 1.0);
        let mos = (1.0 + 4.0 * score) as f32;
        let text: Vec<f32> = center.iter().map(|&x| x as f32).collect();
        ds.push(g as u32, mos, image, text)?;
    }
    Ok(ds)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v {
            *x /= n;
        }
    }
}
