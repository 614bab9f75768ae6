//! Packed pairs of compressed and original blocks.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binfmt::{BinReader, BinWriter};
use crate::dispatch::{is_group, Codec};
use crate::error::{Error, Result};
use crate::frames::{read_yuv, whole_frame_count, ycbcr_to_rgb, Geometry, RgbImage, BLOCK_SIZE};
use crate::tensor::{Shape, Tensor4};

pub const DATASET_MAGIC: &[u8; 4] = b"PPKD";
pub const DATASET_VERSION: u16 = 1;
const CHANNELS: usize = 3;

/// A decoded sequence and the original it was encoded from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SequencePair {
    pub compressed: PathBuf,
    pub original: PathBuf,
    pub geometry: Geometry,
}

/// Sampling plan for [`build_dataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetPlan {
    /// Frames drawn per sequence; `None` takes every frame.
    pub frames_per_sequence: Option<usize>,
    pub blocks_per_frame: usize,
    pub block_size: usize,
    /// Stored precision per channel: 8 or 16 bits.
    pub sample_bits: u8,
}

impl Default for DatasetPlan {
    fn default() -> Self {
        DatasetPlan {
            frames_per_sequence: None,
            blocks_per_frame: 16,
            block_size: BLOCK_SIZE,
            sample_bits: 16,
        }
    }
}

/// Where a block was cut from. `rotation` counts quarter turns
/// counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockOrigin {
    pub source: u32,
    pub frame: u32,
    pub x: u32,
    pub y: u32,
    pub rotation: u8,
}

/// Co-located block pairs with values in `[0,1]`, stored channel-major per
/// block at the dataset's sample precision.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPairDataset {
    pub codec: Codec,
    pub qp_group: String,
    block: usize,
    sample_bits: u8,
    sources: Vec<(String, String)>,
    compressed: Vec<f32>,
    original: Vec<f32>,
    origins: Vec<Option<BlockOrigin>>,
}

fn check_bits(bits: u8) -> Result<()> {
    if bits != 8 && bits != 16 {
        return Err(Error::Invalid(format!(
            "sample precision must be 8 or 16 bits, got {bits}"
        )));
    }
    Ok(())
}

fn levels(bits: u8) -> f64 {
    ((1u32 << bits) - 1) as f64
}

/// Rounds to the nearest representable stored sample.
pub fn quantize_sample(v: f32, bits: u8) -> f32 {
    let l = levels(bits);
    ((v.clamp(0.0, 1.0) as f64 * l).round() / l) as f32
}

/// Copies a `b x b` crop at `(x0, y0)` rotated by `rotation` quarter turns
/// counter-clockwise.
pub fn crop_rotated(img: &RgbImage, x0: usize, y0: usize, b: usize, rotation: u8) -> Vec<f32> {
    let mut out = vec![0.0f32; CHANNELS * b * b];
    for c in 0..CHANNELS {
        for y in 0..b {
            for x in 0..b {
                let (sx, sy) = match rotation % 4 {
                    0 => (x, y),
                    1 => (b - 1 - y, x),
                    2 => (b - 1 - x, b - 1 - y),
                    _ => (y, b - 1 - x),
                };
                out[(c * b + y) * b + x] = img.get(c, x0 + sx, y0 + sy);
            }
        }
    }
    out
}

impl BlockPairDataset {
    /// Wraps in-memory blocks shaped `(n,3,b,b)` with values in `[0,1]`.
    pub fn from_blocks(
        codec: Codec,
        qp_group: impl Into<String>,
        compressed: &Tensor4<f32>,
        original: &Tensor4<f32>,
        sample_bits: u8,
    ) -> Result<Self> {
        check_bits(sample_bits)?;
        let qp_group = qp_group.into();
        check_group(codec, &qp_group)?;
        let s = compressed.shape();
        if s != original.shape() || s.c != CHANNELS || s.h != s.w || s.h == 0 {
            return Err(Error::shape(
                "dataset",
                format!(
                    "pairs must be matching (n,3,b,b) tensors, got {s} and {}",
                    original.shape()
                ),
            ));
        }
        let q = |t: &Tensor4<f32>| {
            t.data()
                .iter()
                .map(|&v| quantize_sample(v, sample_bits))
                .collect()
        };
        Ok(BlockPairDataset {
            codec,
            qp_group,
            block: s.h,
            sample_bits,
            sources: Vec::new(),
            compressed: q(compressed),
            original: q(original),
            origins: vec![None; s.n],
        })
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn block_size(&self) -> usize {
        self.block
    }

    pub fn sample_bits(&self) -> u8 {
        self.sample_bits
    }

    /// `(compressed, original)` file names of each source sequence.
    pub fn sources(&self) -> &[(String, String)] {
        &self.sources
    }

    pub fn origin(&self, i: usize) -> Option<BlockOrigin> {
        self.origins[i]
    }

    fn item_len(&self) -> usize {
        CHANNELS * self.block * self.block
    }

    /// Compressed and original values of pair `i` in `[0,1]`.
    pub fn pair(&self, i: usize) -> (&[f32], &[f32]) {
        let n = self.item_len();
        (&self.compressed[i * n..][..n], &self.original[i * n..][..n])
    }

    /// Gathers pairs into network-ready tensors in `[-1,1]`.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor4<f32>, Tensor4<f32>)> {
        let b = self.block;
        let shape = Shape::new(indices.len(), CHANNELS, b, b);
        let mut x = Vec::with_capacity(shape.len());
        let mut y = Vec::with_capacity(shape.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Invalid(format!(
                    "pair {i} requested from a dataset of {}",
                    self.len()
                )));
            }
            let (c, o) = self.pair(i);
            x.extend(c.iter().map(|&v| 2.0 * v - 1.0));
            y.extend(o.iter().map(|&v| 2.0 * v - 1.0));
        }
        Ok((Tensor4::from_vec(shape, x)?, Tensor4::from_vec(shape, y)?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(DATASET_MAGIC, DATASET_VERSION);
        w.str(&self.codec.to_string());
        w.str(&self.qp_group);
        w.u32(self.block as u32);
        w.u8(CHANNELS as u8);
        w.u8(self.sample_bits);
        w.u32(self.sources.len() as u32);
        for (c, o) in &self.sources {
            w.str(c);
            w.str(o);
        }
        w.u64(self.len() as u64);
        let l = levels(self.sample_bits);
        for i in 0..self.len() {
            let (c, o) = self.pair(i);
            for &v in c.iter().chain(o) {
                let code = (v as f64 * l).round() as u16;
                if self.sample_bits == 8 {
                    w.u8(code as u8);
                } else {
                    w.u16(code);
                }
            }
        }
        for origin in &self.origins {
            match origin {
                Some(o) => {
                    w.u8(1);
                    w.u32(o.source);
                    w.u32(o.frame);
                    w.u32(o.x);
                    w.u32(o.y);
                    w.u8(o.rotation);
                }
                None => w.u8(0),
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::open(bytes, DATASET_MAGIC, DATASET_VERSION, "dataset")?;
        let codec: Codec = r.str()?.parse()?;
        let qp_group = r.str()?;
        check_group(codec, &qp_group)?;
        let block = r.u32()? as usize;
        let channels = r.u8()? as usize;
        let sample_bits = r.u8()?;
        if channels != CHANNELS || block == 0 {
            return Err(Error::Format(format!(
                "dataset blocks are {channels}x{block}x{block}"
            )));
        }
        check_bits(sample_bits).map_err(|e| Error::Format(e.to_string()))?;
        let n_sources = r.u32()? as usize;
        let mut sources = Vec::with_capacity(n_sources);
        for _ in 0..n_sources {
            sources.push((r.str()?, r.str()?));
        }
        let count = r.usize()?;
        let per = CHANNELS * block * block;
        let l = levels(sample_bits);
        let mut compressed = Vec::with_capacity(count.saturating_mul(per).min(1 << 28));
        let mut original = Vec::with_capacity(compressed.capacity());
        for _ in 0..count {
            for dst in [&mut compressed, &mut original] {
                for _ in 0..per {
                    let code = if sample_bits == 8 {
                        r.u8()? as u16
                    } else {
                        r.u16()?
                    };
                    dst.push((code as f64 / l) as f32);
                }
            }
        }
        let mut origins = Vec::with_capacity(count);
        for _ in 0..count {
            origins.push(match r.u8()? {
                0 => None,
                1 => Some(BlockOrigin {
                    source: r.u32()?,
                    frame: r.u32()?,
                    x: r.u32()?,
                    y: r.u32()?,
                    rotation: r.u8()?,
                }),
                t => return Err(Error::Format(format!("dataset index tag {t}"))),
            });
        }
        r.finish()?;
        Ok(BlockPairDataset {
            codec,
            qp_group,
            block,
            sample_bits,
            sources,
            compressed,
            original,
            origins,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn check_group(codec: Codec, group: &str) -> Result<()> {
    if !is_group(codec, group) {
        return Err(Error::Invalid(format!(
            "`{group}` is not a {codec} QP group"
        )));
    }
    Ok(())
}

/// Checks every pair and returns its frame count, reading nothing else.
pub fn validate_pairs(pairs: &[SequencePair], plan: &DatasetPlan) -> Result<Vec<usize>> {
    check_bits(plan.sample_bits)?;
    if pairs.is_empty() || plan.blocks_per_frame == 0 || plan.frames_per_sequence == Some(0) {
        return Err(Error::Invalid(
            "dataset needs at least one sequence, frame and block".into(),
        ));
    }
    let mut counts = Vec::with_capacity(pairs.len());
    for p in pairs {
        let g = Geometry::new(p.geometry.width, p.geometry.height, p.geometry.bit_depth)?;
        if g.width < plan.block_size || g.height < plan.block_size {
            return Err(Error::Invalid(format!(
                "{}: frame {}x{} is smaller than the {b}x{b} block",
                p.compressed.display(),
                g.width,
                g.height,
                b = plan.block_size
            )));
        }
        let nc = whole_frame_count(&p.compressed, g)?;
        let no = whole_frame_count(&p.original, g)?;
        if nc != no {
            return Err(Error::Invalid(format!(
                "{} has {nc} frames but {} has {no}",
                p.compressed.display(),
                p.original.display()
            )));
        }
        if nc == 0 {
            return Err(Error::Invalid(format!(
                "{} holds no whole frame",
                p.compressed.display()
            )));
        }
        if let Some(k) = plan.frames_per_sequence {
            if k > nc {
                return Err(Error::Invalid(format!(
                    "{} frames requested from {} which has {nc}",
                    k,
                    p.compressed.display()
                )));
            }
        }
        counts.push(nc);
    }
    Ok(counts)
}

/// Random co-located crops from randomly chosen frames, each pair turned by
/// the same random multiple of 90 degrees.
pub fn build_dataset(
    pairs: &[SequencePair],
    plan: &DatasetPlan,
    codec: Codec,
    qp_group: &str,
    seed: u64,
) -> Result<BlockPairDataset> {
    check_group(codec, qp_group)?;
    let counts = validate_pairs(pairs, plan)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = plan.block_size;
    let mut compressed = Vec::new();
    let mut original = Vec::new();
    let mut origins = Vec::new();
    for (si, (p, &n)) in pairs.iter().zip(&counts).enumerate() {
        let mut frames = match plan.frames_per_sequence {
            Some(k) => index::sample(&mut rng, n, k).into_vec(),
            None => (0..n).collect(),
        };
        frames.sort_unstable();
        for f in frames {
            let c_img = ycbcr_to_rgb(&read_yuv(&p.compressed, p.geometry, f)?);
            let o_img = ycbcr_to_rgb(&read_yuv(&p.original, p.geometry, f)?);
            for _ in 0..plan.blocks_per_frame {
                let x = rng.random_range(0..=p.geometry.width - b);
                let y = rng.random_range(0..=p.geometry.height - b);
                let rotation = rng.random_range(0..4u8);
                let q = |v: Vec<f32>| v.into_iter().map(|s| quantize_sample(s, plan.sample_bits));
                compressed.extend(q(crop_rotated(&c_img, x, y, b, rotation)));
                original.extend(q(crop_rotated(&o_img, x, y, b, rotation)));
                origins.push(Some(BlockOrigin {
                    source: si as u32,
                    frame: f as u32,
                    x: x as u32,
                    y: y as u32,
                    rotation,
                }));
            }
        }
    }
    let name = |p: &Path| {
        p.file_name().map_or_else(
            || p.display().to_string(),
            |s| s.to_string_lossy().into_owned(),
        )
    };
    Ok(BlockPairDataset {
        codec,
        qp_group: qp_group.to_string(),
        block: b,
        sample_bits: plan.sample_bits,
        sources: pairs
            .iter()
            .map(|p| (name(&p.compressed), name(&p.original)))
            .collect(),
        compressed,
        original,
        origins,
    })
}
