//! Raw YUV I/O, colour conversion and tiled inference over whole frames.

mod color;
mod tiling;
mod yuv;

use rayon::prelude::*;

pub use color::{
    chroma_code, luma_code, rgb_to_ycbcr, rgb_to_ycbcr_pixel, rgb_to_ypbpr, ycbcr_to_rgb,
    ycbcr_to_rgb_pixel, RgbImage,
};
pub use tiling::{
    aggregate_blocks, axis_positions, extract_blocks, extract_range, plan_blocks, BlockGrid,
    BLOCK_OVERLAP, BLOCK_SIZE,
};
pub use yuv::{
    append_yuv, frame_count, read_yuv, whole_frame_count, write_yuv, Geometry, PlanarFrame420,
};

use crate::error::Result;
use crate::models::{Generator, ModelBundle};
use crate::tensor::{Scalar, Tensor4};

/// Anything that maps a batch of `[-1,1]` blocks to blocks of the same shape.
pub trait BlockEnhancer<T: Scalar>: Sync {
    fn block_size(&self) -> usize;
    fn enhance(&self, blocks: &Tensor4<T>) -> Result<Tensor4<T>>;
}

impl<T: Scalar> BlockEnhancer<T> for Generator<T> {
    fn block_size(&self) -> usize {
        self.config.input_block_size
    }

    fn enhance(&self, blocks: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.infer(blocks)
    }
}

impl BlockEnhancer<f32> for ModelBundle {
    fn block_size(&self) -> usize {
        self.generator.config.input_block_size
    }

    fn enhance(&self, blocks: &Tensor4<f32>) -> Result<Tensor4<f32>> {
        self.generator.infer(blocks)
    }
}

/// Blocks per forward call.
pub const ENHANCE_BATCH: usize = 8;

/// Runs `model` over every block of `img` and stitches the result. Batches
/// may run on several threads; stitching happens in grid order, so output is
/// independent of scheduling.
pub fn enhance_image<T: Scalar, M: BlockEnhancer<T> + ?Sized>(
    model: &M,
    img: &RgbImage,
) -> Result<RgbImage> {
    let grid = plan_blocks(img.width(), img.height(), model.block_size(), BLOCK_OVERLAP)?;
    let starts: Vec<usize> = (0..grid.len()).step_by(ENHANCE_BATCH).collect();
    let outputs: Vec<Tensor4<T>> = starts
        .par_iter()
        .map(|&s| {
            let count = ENHANCE_BATCH.min(grid.len() - s);
            let blocks = extract_range(img, &grid, s, count)?;
            model.enhance(&blocks)
        })
        .collect::<Result<_>>()?;
    aggregate_blocks(&Tensor4::concat_batch(&outputs)?, &grid)
}

/// Decodes to RGB, enhances block-wise and re-encodes at the input bit depth.
pub fn enhance_frame<T: Scalar, M: BlockEnhancer<T> + ?Sized>(
    model: &M,
    frame: &PlanarFrame420,
) -> Result<PlanarFrame420> {
    let rgb = ycbcr_to_rgb(frame);
    let out = enhance_image(model, &rgb)?;
    rgb_to_ycbcr(&out, frame.bit_depth())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::models::GeneratorConfig;
    use crate::tensor::Shape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frame(g: Geometry, seed: u64) -> PlanarFrame420 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let max = g.max_sample() + 1;
        let mut plane = |n| {
            (0..n)
                .map(|_| rng.random_range(0..max))
                .collect::<Vec<u16>>()
        };
        let (y, cb, cr) = (
            plane(g.luma_len()),
            plane(g.chroma_len()),
            plane(g.chroma_len()),
        );
        PlanarFrame420::new(g, y, cb, cr).unwrap()
    }

    fn random_rgb(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::new(w, h, (0..3 * w * h).map(|_| rng.random::<f32>()).collect()).unwrap()
    }

    #[test]
    fn yuv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        for bd in [8, 10] {
            let g = Geometry::new(4, 4, bd).unwrap();
            let frames = [random_frame(g, 1), random_frame(g, 2)];
            let path = dir.path().join(format!("f{bd}.yuv"));
            write_yuv(&path, &frames).unwrap();
            let bytes = std::fs::read(&path).unwrap();
            assert_eq!(bytes.len(), 2 * g.frame_bytes());
            assert_eq!(frame_count(&path, g).unwrap(), 2);
            let back: Vec<_> = (0..2).map(|i| read_yuv(&path, g, i).unwrap()).collect();
            assert_eq!(back, frames);
            let again = dir.path().join("again.yuv");
            write_yuv(&again, &back).unwrap();
            assert_eq!(std::fs::read(&again).unwrap(), bytes);
            assert!(matches!(read_yuv(&path, g, 2), Err(Error::ShortFile(_))));
        }
        assert!(Geometry::new(5, 4, 8).is_err());
        assert!(Geometry::new(4, 4, 12).is_err());
        let g = Geometry::new(2, 2, 10).unwrap();
        let mut raw = PlanarFrame420::filled(g, 64, 512, 512).unwrap().to_bytes();
        raw[2..4].copy_from_slice(&1024u16.to_le_bytes());
        let path = dir.path().join("range.yuv");
        std::fs::write(&path, &raw).unwrap();
        assert!(matches!(read_yuv(&path, g, 0), Err(Error::SampleRange(_))));
    }

    #[test]
    fn limited_range_anchor_points() {
        assert_eq!(ycbcr_to_rgb_pixel(940, 512, 512, 10), [1.0, 1.0, 1.0]);
        assert_eq!(ycbcr_to_rgb_pixel(64, 512, 512, 10), [0.0, 0.0, 0.0]);
        assert_eq!(ycbcr_to_rgb_pixel(235, 128, 128, 8), [1.0, 1.0, 1.0]);
        assert_eq!(rgb_to_ycbcr_pixel([1.0; 3], 10), [940, 512, 512]);
        assert_eq!(rgb_to_ycbcr_pixel([0.0; 3], 10), [64, 512, 512]);
        let white =
            PlanarFrame420::filled(Geometry::new(2, 2, 10).unwrap(), 940, 512, 512).unwrap();
        assert!(ycbcr_to_rgb(&white).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn pixel_matrix_round_trip_within_two_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut worst = 0.0f64;
        for _ in 0..20000 {
            let rgb = [rng.random::<f64>(), rng.random(), rng.random()];
            let [y, cb, cr] = rgb_to_ycbcr_pixel(rgb, 10);
            let back = ycbcr_to_rgb_pixel(y, cb, cr, 10);
            for c in 0..3 {
                worst = worst.max((back[c].clamp(0.0, 1.0) - rgb[c]).abs());
            }
        }
        assert!(worst <= 2.0 / 1023.0, "{worst}");
    }

    #[test]
    fn constant_frames_survive_subsampling() {
        let g = Geometry::new(6, 4, 10).unwrap();
        let f = PlanarFrame420::filled(g, 500, 300, 700).unwrap();
        let back = rgb_to_ycbcr(&ycbcr_to_rgb(&f), 10).unwrap();
        for (a, b) in
            f.y.iter()
                .chain(&f.cb)
                .chain(&f.cr)
                .zip(back.y.iter().chain(&back.cb).chain(&back.cr))
        {
            assert!(a.abs_diff(*b) <= 2);
        }
    }

    #[test]
    fn block_plans() {
        let g = plan_blocks(96, 96, 96, 4).unwrap();
        assert_eq!(g.positions, vec![(0, 0)]);
        assert_eq!(axis_positions(100, 96, 4), vec![0, 4]);
        assert_eq!(plan_blocks(100, 100, 96, 4).unwrap().len(), 4);
        let hd = plan_blocks(1920, 1080, 96, 4).unwrap();
        assert_eq!(axis_positions(1920, 96, 4).len(), 21);
        assert_eq!(axis_positions(1080, 96, 4).len(), 12);
        assert_eq!(hd.len(), 252);
        assert!(plan_blocks(95, 200, 96, 4).is_err());
        assert!(plan_blocks(200, 200, 4, 4).is_err());
    }

    #[test]
    fn identity_tiling_is_bit_exact() {
        for (w, h) in [(96, 96), (100, 100), (240, 136), (190, 97)] {
            let img = random_rgb(w, h, (w * h) as u64);
            let grid = plan_blocks(w, h, 96, 4).unwrap();
            let blocks: Tensor4<f64> = extract_blocks(&img, &grid).unwrap();
            assert_eq!(aggregate_blocks(&blocks, &grid).unwrap(), img);
        }
    }

    #[test]
    fn extract_maps_range() {
        let img = RgbImage::filled(96, 96, [0.5, 0.0, 1.0]);
        let grid = plan_blocks(96, 96, 96, 4).unwrap();
        let b: Tensor4<f32> = extract_blocks(&img, &grid).unwrap();
        assert_eq!(b.shape(), Shape::new(1, 3, 96, 96));
        assert_eq!(
            (b.at(0, 0, 5, 5), b.at(0, 1, 5, 5), b.at(0, 2, 5, 5)),
            (0.0, -1.0, 1.0)
        );
        let other = plan_blocks(100, 96, 96, 4).unwrap();
        assert!(extract_blocks::<f32>(&img, &other).is_err());
    }

    #[test]
    fn overlap_region_is_the_mean() {
        let grid = plan_blocks(100, 96, 96, 4).unwrap();
        let (a, b) = (-0.5f64, 0.25f64);
        let blocks = Tensor4::concat_batch(&[
            Tensor4::full(Shape::new(1, 3, 96, 96), a),
            Tensor4::full(Shape::new(1, 3, 96, 96), b),
        ])
        .unwrap();
        let img = aggregate_blocks(&blocks, &grid).unwrap();
        let unit = |v: f64| ((v + 1.0) / 2.0) as f32;
        assert_eq!(img.get(0, 2, 10), unit(a));
        assert_eq!(img.get(1, 50, 10), unit((a + b) / 2.0));
        assert_eq!(img.get(2, 99, 10), unit(b));
        assert!(aggregate_blocks(&blocks.batch_range(0, 1).unwrap(), &grid).is_err());
    }

    /// Constant over each 2x2 chroma site and away from the gamut edges, so
    /// 4:2:0 decoding stays in gamut.
    fn in_gamut_rgb(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sites: Vec<f32> = (0..3 * (w / 2) * (h / 2))
            .map(|_| rng.random_range(0.2..0.8))
            .collect();
        let mut data = vec![0.0; 3 * w * h];
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data[(c * h + y) * w + x] = sites[(c * (h / 2) + y / 2) * (w / 2) + x / 2];
                }
            }
        }
        RgbImage::new(w, h, data).unwrap()
    }

    struct PassThrough;

    impl BlockEnhancer<f64> for PassThrough {
        fn block_size(&self) -> usize {
            96
        }

        fn enhance(&self, blocks: &Tensor4<f64>) -> Result<Tensor4<f64>> {
            Ok(blocks.clone())
        }
    }

    #[test]
    fn pass_through_enhancement_only_adds_colour_error() {
        let g = Geometry::new(200, 112, 10).unwrap();
        // start from a frame that already went through the colour pipeline
        let src = rgb_to_ycbcr(&in_gamut_rgb(200, 112, 8), 10).unwrap();
        let out = enhance_frame(&PassThrough, &src).unwrap();
        assert_eq!(out.geometry(), g);
        let planes = |f: &PlanarFrame420| [f.y.clone(), f.cb.clone(), f.cr.clone()];
        for (a, b) in planes(&src).iter().zip(planes(&out).iter()) {
            assert!(a.iter().zip(b).all(|(p, q)| p.abs_diff(*q) <= 2));
        }
        assert_eq!(enhance_frame(&PassThrough, &src).unwrap(), out);
    }

    #[test]
    fn generator_enhancement_keeps_geometry_and_range() {
        let cfg = GeneratorConfig {
            num_residual_blocks: 1,
            feature_width: 4,
            ..GeneratorConfig::default()
        };
        let gen = Generator::<f32>::new(cfg, 1).unwrap();
        for bd in [8, 10] {
            let src = random_frame(Geometry::new(100, 98, bd).unwrap(), 4);
            let a = enhance_frame(&gen, &src).unwrap();
            assert_eq!(a.geometry(), src.geometry());
            assert_eq!(enhance_frame(&gen, &src).unwrap(), a);
        }
    }
}
