use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// One 4:2:0 frame with unsigned samples of 8 or 10 bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanarFrame420 {
    width: usize,
    height: usize,
    bit_depth: u8,
    pub y: Vec<u16>,
    pub cb: Vec<u16>,
    pub cr: Vec<u16>,
}

/// Frame geometry as supplied on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
}

impl Geometry {
    pub fn new(width: usize, height: usize, bit_depth: u8) -> Result<Self> {
        if width == 0 || height == 0 || width % 2 == 1 || height % 2 == 1 {
            return Err(Error::Invalid(format!(
                "frame dimensions {width}x{height} must be positive and even"
            )));
        }
        if bit_depth != 8 && bit_depth != 10 {
            return Err(Error::Invalid(format!(
                "bit depth {bit_depth} is not 8 or 10"
            )));
        }
        Ok(Geometry {
            width,
            height,
            bit_depth,
        })
    }

    pub fn bytes_per_sample(&self) -> usize {
        if self.bit_depth > 8 {
            2
        } else {
            1
        }
    }

    pub fn max_sample(&self) -> u16 {
        (1u16 << self.bit_depth) - 1
    }

    pub fn luma_len(&self) -> usize {
        self.width * self.height
    }

    pub fn chroma_len(&self) -> usize {
        (self.width / 2) * (self.height / 2)
    }

    /// Bytes of one frame on disk.
    pub fn frame_bytes(&self) -> usize {
        (self.luma_len() + 2 * self.chroma_len()) * self.bytes_per_sample()
    }
}

impl PlanarFrame420 {
    /// Builds a frame after checking plane sizes and sample range.
    pub fn new(geometry: Geometry, y: Vec<u16>, cb: Vec<u16>, cr: Vec<u16>) -> Result<Self> {
        let g = Geometry::new(geometry.width, geometry.height, geometry.bit_depth)?;
        if y.len() != g.luma_len() || cb.len() != g.chroma_len() || cr.len() != g.chroma_len() {
            return Err(Error::Invalid(format!(
                "plane sizes {}/{}/{} do not match {}x{} 4:2:0",
                y.len(),
                cb.len(),
                cr.len(),
                g.width,
                g.height
            )));
        }
        let max = g.max_sample();
        for (plane, data) in [("Y", &y), ("Cb", &cb), ("Cr", &cr)] {
            if let Some((i, v)) = data.iter().enumerate().find(|(_, &v)| v > max) {
                return Err(Error::SampleRange(format!(
                    "{plane} sample {i} is {v}, above the {}-bit maximum {max}",
                    g.bit_depth
                )));
            }
        }
        Ok(PlanarFrame420 {
            width: g.width,
            height: g.height,
            bit_depth: g.bit_depth,
            y,
            cb,
            cr,
        })
    }

    /// Uniform frame.
    pub fn filled(geometry: Geometry, y: u16, cb: u16, cr: u16) -> Result<Self> {
        Self::new(
            geometry,
            vec![y; geometry.luma_len()],
            vec![cb; geometry.chroma_len()],
            vec![cr; geometry.chroma_len()],
        )
    }

    pub fn geometry(&self) -> Geometry {
        Geometry {
            width: self.width,
            height: self.height,
            bit_depth: self.bit_depth,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bit_depth(&self) -> u8 {
        self.bit_depth
    }

    /// Raw bytes, 10-bit samples as little-endian 16-bit words.
    pub fn to_bytes(&self) -> Vec<u8> {
        let g = self.geometry();
        let mut out = Vec::with_capacity(g.frame_bytes());
        for plane in [&self.y, &self.cb, &self.cr] {
            if g.bytes_per_sample() == 1 {
                out.extend(plane.iter().map(|&v| v as u8));
            } else {
                for &v in plane.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(geometry: Geometry, bytes: &[u8]) -> Result<Self> {
        let g = Geometry::new(geometry.width, geometry.height, geometry.bit_depth)?;
        if bytes.len() != g.frame_bytes() {
            return Err(Error::ShortFile(format!(
                "frame needs {} bytes, got {}",
                g.frame_bytes(),
                bytes.len()
            )));
        }
        let samples: Vec<u16> = if g.bytes_per_sample() == 1 {
            bytes.iter().map(|&b| b as u16).collect()
        } else {
            bytes
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect()
        };
        let (l, c) = (g.luma_len(), g.chroma_len());
        Self::new(
            g,
            samples[..l].to_vec(),
            samples[l..l + c].to_vec(),
            samples[l + c..].to_vec(),
        )
    }
}

/// Number of whole frames in a raw file.
pub fn frame_count(path: &Path, geometry: Geometry) -> Result<usize> {
    let g = Geometry::new(geometry.width, geometry.height, geometry.bit_depth)?;
    let len = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    Ok((len / g.frame_bytes() as u64) as usize)
}

/// Frame count of a file that must hold only whole frames; a remainder
/// means the geometry does not describe the file.
pub fn whole_frame_count(path: &Path, geometry: Geometry) -> Result<usize> {
    let g = Geometry::new(geometry.width, geometry.height, geometry.bit_depth)?;
    let len = fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
    let size = g.frame_bytes() as u64;
    if len % size != 0 {
        return Err(Error::Invalid(format!(
            "{} is {len} bytes, not a whole number of {}x{} {}-bit frames ({size} bytes each)",
            path.display(),
            g.width,
            g.height,
            g.bit_depth
        )));
    }
    Ok((len / size) as usize)
}

/// Reads frame `index` of a raw planar file.
pub fn read_yuv(path: &Path, geometry: Geometry, index: usize) -> Result<PlanarFrame420> {
    let g = Geometry::new(geometry.width, geometry.height, geometry.bit_depth)?;
    let size = g.frame_bytes() as u64;
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let need = (index as u64 + 1) * size;
    if len < need {
        return Err(Error::ShortFile(format!(
            "{} has {len} bytes; frame {index} of {}x{} {}-bit needs {need}",
            path.display(),
            g.width,
            g.height,
            g.bit_depth
        )));
    }
    let mut buf = vec![0u8; size as usize];
    file.seek(SeekFrom::Start(index as u64 * size))
        .and_then(|_| file.read_exact(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    PlanarFrame420::from_bytes(g, &buf)
}

/// Writes `frames` to a new file, replacing any existing one.
pub fn write_yuv(path: &Path, frames: &[PlanarFrame420]) -> Result<()> {
    let mut out = Vec::new();
    for f in frames {
        out.extend(f.to_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Appends one frame to a file, creating it if needed.
pub fn append_yuv(path: &Path, frame: &PlanarFrame420) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    file.write_all(&frame.to_bytes())
        .map_err(|e| Error::io(path, e))
}
