use crate::error::{Error, Result};
use crate::frames::color::{clamp_unit, RgbImage};
use crate::tensor::{Scalar, Shape, Tensor4};

pub const BLOCK_SIZE: usize = 96;
pub const BLOCK_OVERLAP: usize = 4;

/// Top-left corners of overlapping square blocks, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockGrid {
    pub block: usize,
    pub overlap: usize,
    pub width: usize,
    pub height: usize,
    pub positions: Vec<(usize, usize)>,
}

/// Offsets along one axis: stride `block - overlap`, with the last block
/// moved back to end exactly at `dim`.
pub fn axis_positions(dim: usize, block: usize, overlap: usize) -> Vec<usize> {
    let stride = block - overlap;
    let mut out = Vec::new();
    let mut p = 0;
    loop {
        if p + block >= dim {
            out.push(dim - block);
            return out;
        }
        out.push(p);
        p += stride;
    }
}

/// Plans the tiling of a `width x height` frame.
pub fn plan_blocks(width: usize, height: usize, block: usize, overlap: usize) -> Result<BlockGrid> {
    if block == 0 || overlap >= block {
        return Err(Error::Invalid(format!(
            "block size {block} must exceed overlap {overlap}"
        )));
    }
    if width < block || height < block {
        return Err(Error::Invalid(format!(
            "frame {width}x{height} is smaller than the {block}x{block} block"
        )));
    }
    let xs = axis_positions(width, block, overlap);
    let ys = axis_positions(height, block, overlap);
    let positions = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .collect();
    Ok(BlockGrid {
        block,
        overlap,
        width,
        height,
        positions,
    })
}

impl BlockGrid {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// How many blocks cover each pixel, row-major.
    pub fn coverage(&self) -> Vec<u32> {
        let mut count = vec![0u32; self.width * self.height];
        for &(x0, y0) in &self.positions {
            for y in y0..y0 + self.block {
                for c in &mut count[y * self.width + x0..y * self.width + x0 + self.block] {
                    *c += 1;
                }
            }
        }
        count
    }

    fn check_image(&self, width: usize, height: usize) -> Result<()> {
        if (width, height) != (self.width, self.height) {
            return Err(Error::Invalid(format!(
                "grid planned for {}x{}, image is {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Cuts the image into blocks in grid order, mapping `v` to `2v - 1`.
pub fn extract_blocks<T: Scalar>(img: &RgbImage, grid: &BlockGrid) -> Result<Tensor4<T>> {
    extract_range(img, grid, 0, grid.len())
}

/// Blocks `start..start + count` of the grid.
pub fn extract_range<T: Scalar>(
    img: &RgbImage,
    grid: &BlockGrid,
    start: usize,
    count: usize,
) -> Result<Tensor4<T>> {
    grid.check_image(img.width(), img.height())?;
    if start + count > grid.len() {
        return Err(Error::Invalid(format!(
            "blocks {start}..{} requested from a grid of {}",
            start + count,
            grid.len()
        )));
    }
    let b = grid.block;
    let mut out = Tensor4::zeros(Shape::new(count, 3, b, b));
    for (i, &(x0, y0)) in grid.positions[start..start + count].iter().enumerate() {
        let item = out.item_slice_mut(i);
        for c in 0..3 {
            let plane = img.plane(c);
            for y in 0..b {
                let src = &plane[(y0 + y) * img.width() + x0..][..b];
                let dst = &mut item[(c * b + y) * b..][..b];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = T::of(2.0 * s as f64 - 1.0);
                }
            }
        }
    }
    Ok(out)
}

/// Averages every block contribution per pixel and maps back to `[0,1]`.
pub fn aggregate_blocks<T: Scalar>(blocks: &Tensor4<T>, grid: &BlockGrid) -> Result<RgbImage> {
    let b = grid.block;
    let s = blocks.shape();
    if s != Shape::new(grid.len(), 3, b, b) {
        return Err(Error::Invalid(format!(
            "{} blocks of {s} for a grid of {} blocks of {b}x{b}",
            s.n,
            grid.len()
        )));
    }
    let (w, h) = (grid.width, grid.height);
    let n = w * h;
    let mut sum = vec![0.0f64; 3 * n];
    for (i, &(x0, y0)) in grid.positions.iter().enumerate() {
        let item = blocks.item_slice(i);
        for c in 0..3 {
            for y in 0..b {
                let src = &item[(c * b + y) * b..][..b];
                let dst = &mut sum[c * n + (y0 + y) * w + x0..][..b];
                for (d, v) in dst.iter_mut().zip(src) {
                    *d += v.f64();
                }
            }
        }
    }
    let count = grid.coverage();
    let data = sum
        .iter()
        .enumerate()
        .map(|(i, &v)| clamp_unit((v / count[i % n] as f64 + 1.0) / 2.0))
        .collect();
    RgbImage::new(w, h, data)
}
