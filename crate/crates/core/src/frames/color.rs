//! BT.709 limited-range conversion between 4:2:0 YCbCr and RGB in `[0,1]`.

use crate::error::{Error, Result};
use crate::frames::yuv::{Geometry, PlanarFrame420};

const KR: f64 = 0.2126;
const KB: f64 = 0.0722;
const KG: f64 = 1.0 - KR - KB;
/// `2 (1 - KB)` and `2 (1 - KR)`.
const CB_SCALE: f64 = 1.8556;
const CR_SCALE: f64 = 1.5748;

/// Three planes of reals in `[0,1]`, stored channel-major (R, G, B).
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    /// Values are clamped into `[0,1]`; magnitudes below `2^-24` are flushed
    /// to zero so the `[-1,1]` block mapping is exact at 64-bit precision.
    pub fn new(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::Invalid(format!(
                "{} values for a {width}x{height} RGB image",
                data.len()
            )));
        }
        for v in &mut data {
            *v = clamp_unit(*v as f64);
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in rgb {
            data.extend(std::iter::repeat_n(clamp_unit(c as f64), width * height));
        }
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        [self.get(0, x, y), self.get(1, x, y), self.get(2, x, y)]
    }
}

pub(crate) fn clamp_unit(v: f64) -> f32 {
    let c = v.clamp(0.0, 1.0) as f32;
    if c < f32::EPSILON / 2.0 {
        0.0
    } else {
        c
    }
}

fn scale(bit_depth: u8) -> f64 {
    (1u32 << (bit_depth - 8)) as f64
}

/// Decodes one sample triple to RGB (unclamped).
pub fn ycbcr_to_rgb_pixel(y: u16, cb: u16, cr: u16, bit_depth: u8) -> [f64; 3] {
    let s = scale(bit_depth);
    let yy = (y as f64 - 16.0 * s) / (219.0 * s);
    let pb = (cb as f64 - 128.0 * s) / (224.0 * s);
    let pr = (cr as f64 - 128.0 * s) / (224.0 * s);
    let r = yy + CR_SCALE * pr;
    let b = yy + CB_SCALE * pb;
    let g = (yy - KR * r - KB * b) / KG;
    [r, g, b]
}

/// Luma and colour differences (`Y`, `Pb`, `Pr`) of an RGB triple.
pub fn rgb_to_ypbpr(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let y = KR * r + KG * g + KB * b;
    [y, (b - y) / CB_SCALE, (r - y) / CR_SCALE]
}

fn quantize(v: f64, lo: f64, hi: f64) -> u16 {
    v.round().clamp(lo, hi) as u16
}

/// Limited-range luma code.
pub fn luma_code(y: f64, bit_depth: u8) -> u16 {
    let s = scale(bit_depth);
    quantize(16.0 * s + 219.0 * s * y, 16.0 * s, 235.0 * s)
}

/// Limited-range chroma code.
pub fn chroma_code(p: f64, bit_depth: u8) -> u16 {
    let s = scale(bit_depth);
    quantize(128.0 * s + 224.0 * s * p, 16.0 * s, 240.0 * s)
}

/// Encodes one RGB triple without subsampling.
pub fn rgb_to_ycbcr_pixel(rgb: [f64; 3], bit_depth: u8) -> [u16; 3] {
    let [y, pb, pr] = rgb_to_ypbpr(rgb.map(|v| v.clamp(0.0, 1.0)));
    [
        luma_code(y, bit_depth),
        chroma_code(pb, bit_depth),
        chroma_code(pr, bit_depth),
    ]
}

/// Nearest-neighbour chroma upsampling, then the inverse matrix.
pub fn ycbcr_to_rgb(frame: &PlanarFrame420) -> RgbImage {
    let (w, h, bd) = (frame.width(), frame.height(), frame.bit_depth());
    let n = w * h;
    let mut data = vec![0.0f32; 3 * n];
    for y in 0..h {
        for x in 0..w {
            let ci = (y / 2) * (w / 2) + x / 2;
            let rgb = ycbcr_to_rgb_pixel(frame.y[y * w + x], frame.cb[ci], frame.cr[ci], bd);
            for c in 0..3 {
                data[c * n + y * w + x] = clamp_unit(rgb[c]);
            }
        }
    }
    RgbImage {
        width: w,
        height: h,
        data,
    }
}

/// Forward matrix, then 2x2 mean chroma downsampling.
pub fn rgb_to_ycbcr(img: &RgbImage, bit_depth: u8) -> Result<PlanarFrame420> {
    let g = Geometry::new(img.width, img.height, bit_depth)?;
    let (w, h) = (g.width, g.height);
    let mut yp = vec![0u16; g.luma_len()];
    let mut pb = vec![0.0f64; g.chroma_len()];
    let mut pr = vec![0.0f64; g.chroma_len()];
    for y in 0..h {
        for x in 0..w {
            let rgb = img.pixel(x, y).map(|v| v as f64);
            let [l, b, r] = rgb_to_ypbpr(rgb);
            yp[y * w + x] = luma_code(l, bit_depth);
            let ci = (y / 2) * (w / 2) + x / 2;
            pb[ci] += b;
            pr[ci] += r;
        }
    }
    let cb = pb
        .iter()
        .map(|&v| chroma_code(v / 4.0, bit_depth))
        .collect();
    let cr = pr
        .iter()
        .map(|&v| chroma_code(v / 4.0, bit_depth))
        .collect();
    PlanarFrame420::new(g, yp, cb, cr)
}
