//! Dataset construction, the two training procedures and resumable state.

mod checkpoint;
mod config;
mod dataset;
mod trainer;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use config::{lr_at_epoch, TrainConfig};
pub use dataset::{
    build_dataset, crop_rotated, quantize_sample, validate_pairs, BlockOrigin, BlockPairDataset,
    DatasetPlan, SequencePair, DATASET_MAGIC, DATASET_VERSION,
};
pub use trainer::{train_l1, train_perceptual, EpochSummary, LogRow, Trainer, LOG_HEADER};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dispatch::Codec;
    use crate::error::Error;
    use crate::frames::{rgb_to_ycbcr, write_yuv, ycbcr_to_rgb, Geometry, RgbImage};
    use crate::losses::{PixelDomain, SsimParams};
    use crate::models::{DiscriminatorConfig, Generator, GeneratorConfig, Method};
    use crate::tensor::{Shape, Tensor4};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::path::Path;

    const B: usize = 16;

    fn tiny_config(method: Method) -> TrainConfig {
        let mut d = DiscriminatorConfig::reduced(16);
        d.input_block_size = B;
        d.dense_width = 8;
        TrainConfig {
            method,
            generator: GeneratorConfig {
                num_residual_blocks: 1,
                feature_width: 8,
                kernel_size: 3,
                input_block_size: B,
            },
            discriminator: d,
            learning_rate: 1e-3,
            lr_decay_every: 1000,
            epochs: 4,
            stage1_epochs: 2,
            batch_size: 4,
            ssim: SsimParams {
                window: 7,
                ..SsimParams::default()
            },
            ..TrainConfig::default()
        }
    }

    /// Smooth textured blocks in `[0.15, 0.85]` and a noisy copy.
    fn toy_pairs(n: usize, seed: u64, noise: f32) -> (Tensor4<f32>, Tensor4<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = Shape::new(n, 3, B, B);
        let mut clean = Tensor4::zeros(shape);
        let mut noisy = Tensor4::zeros(shape);
        for i in 0..n {
            let (fx, fy, ph): (f32, f32, f32) = (
                rng.random_range(0.2..0.7),
                rng.random_range(0.2..0.7),
                rng.random_range(0.0..6.0),
            );
            for c in 0..3 {
                for y in 0..B {
                    for x in 0..B {
                        let v = 0.5
                            + 0.35 * (fx * x as f32 + ph).sin() * (fy * y as f32 + c as f32).cos();
                        clean.set(i, c, y, x, v);
                        noisy.set(
                            i,
                            c,
                            y,
                            x,
                            (v + noise * rng.random_range(-1.0f32..1.0)).clamp(0.0, 1.0),
                        );
                    }
                }
            }
        }
        (noisy, clean)
    }

    fn toy_dataset(n: usize, seed: u64, noise: f32) -> BlockPairDataset {
        let (c, o) = toy_pairs(n, seed, noise);
        BlockPairDataset::from_blocks(Codec::Vvc, "QP37", &c, &o, 16).unwrap()
    }

    fn run(trainer: &mut Trainer, ds: &BlockPairDataset) -> Vec<LogRow> {
        let mut rows = Vec::new();
        trainer
            .run(ds, &mut |r| {
                rows.push(*r);
                Ok(())
            })
            .unwrap();
        rows
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at_epoch(&c, 0).unwrap(), 1e-4);
        assert_eq!(lr_at_epoch(&c, 99).unwrap(), 1e-4);
        assert!((lr_at_epoch(&c, 100).unwrap() - 1e-5).abs() < 1e-20);
        assert!((lr_at_epoch(&c, 199).unwrap() - 1e-5).abs() < 1e-20);
        assert!(lr_at_epoch(&c, 200).is_err());
        let rates: Vec<_> = (0..200).map(|e| lr_at_epoch(&c, e).unwrap()).collect();
        assert!(rates.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = tiny_config(Method::Perceptual);
        c.stage1_epochs = c.epochs;
        assert!(c.validate().is_err());
        let mut c = tiny_config(Method::L1);
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = tiny_config(Method::L1);
        c.learning_rate = -1.0;
        assert!(c.validate().is_err());
    }

    fn write_sequence(path: &Path, g: Geometry, frames: usize, seed: u64, noise: f32) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::new();
        for f in 0..frames {
            let mut data = Vec::with_capacity(3 * g.width * g.height);
            for c in 0..3 {
                for y in 0..g.height {
                    for x in 0..g.width {
                        let v = 0.5
                            + 0.3
                                * ((x + 3 * c) as f32 * 0.21 + f as f32).sin()
                                * (y as f32 * 0.13).cos();
                        data.push(v + noise * rng.random_range(-1.0f32..1.0));
                    }
                }
            }
            let img = RgbImage::new(g.width, g.height, data).unwrap();
            out.push(rgb_to_ycbcr(&img, g.bit_depth).unwrap());
        }
        write_yuv(path, &out).unwrap();
    }

    fn two_sequences(dir: &Path) -> Vec<SequencePair> {
        let g = Geometry::new(40, 24, 10).unwrap();
        (0..2)
            .map(|s| {
                let compressed = dir.join(format!("s{s}_dec.yuv"));
                let original = dir.join(format!("s{s}_org.yuv"));
                write_sequence(&original, g, 3, 10 + s, 0.0);
                write_sequence(&compressed, g, 3, 20 + s, 0.05);
                SequencePair {
                    compressed,
                    original,
                    geometry: g,
                }
            })
            .collect()
    }

    fn plan() -> DatasetPlan {
        DatasetPlan {
            frames_per_sequence: Some(2),
            blocks_per_frame: 4,
            block_size: B,
            sample_bits: 16,
        }
    }

    #[test]
    fn dataset_counts_determinism_and_recrop() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = two_sequences(dir.path());
        let ds = build_dataset(&pairs, &plan(), Codec::Vvc, "QP32", 9).unwrap();
        assert_eq!(ds.len(), 16);
        let again = build_dataset(&pairs, &plan(), Codec::Vvc, "QP32", 9).unwrap();
        assert_eq!(ds.to_bytes(), again.to_bytes());
        let other = build_dataset(&pairs, &plan(), Codec::Vvc, "QP32", 10).unwrap();
        assert_ne!(ds.to_bytes(), other.to_bytes());

        let mut rotations = [0usize; 4];
        for i in 0..ds.len() {
            let o = ds.origin(i).unwrap();
            rotations[o.rotation as usize] += 1;
            let p = &pairs[o.source as usize];
            for (path, stored) in [(&p.original, ds.pair(i).1), (&p.compressed, ds.pair(i).0)] {
                let img = ycbcr_to_rgb(
                    &crate::frames::read_yuv(path, p.geometry, o.frame as usize).unwrap(),
                );
                let crop: Vec<f32> = crop_rotated(&img, o.x as usize, o.y as usize, B, o.rotation)
                    .into_iter()
                    .map(|v| quantize_sample(v, 16))
                    .collect();
                assert_eq!(crop, stored);
            }
        }
        assert!(rotations.iter().filter(|&&r| r > 0).count() > 1);

        let path = dir.path().join("d.ppkd");
        ds.save(&path).unwrap();
        assert_eq!(BlockPairDataset::load(&path).unwrap(), ds);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[40] ^= 1;
        assert!(matches!(
            BlockPairDataset::from_bytes(&bytes),
            Err(Error::Checksum { .. })
        ));
    }

    #[test]
    fn dataset_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let mut pairs = two_sequences(dir.path());
        let mut short = plan();
        short.block_size = 32;
        assert!(
            matches!(build_dataset(&pairs, &short, Codec::Vvc, "QP32", 1), Err(Error::Invalid(m)) if m.contains("smaller"))
        );
        let mut many = plan();
        many.frames_per_sequence = Some(5);
        assert!(build_dataset(&pairs, &many, Codec::Vvc, "QP32", 1).is_err());
        assert!(build_dataset(&pairs, &plan(), Codec::Av1, "QP22", 1).is_err());
        let g = Geometry::new(40, 24, 10).unwrap();
        write_sequence(&pairs[1].compressed, g, 2, 3, 0.0);
        assert!(
            matches!(build_dataset(&pairs, &plan(), Codec::Vvc, "QP32", 1), Err(Error::Invalid(m)) if m.contains("frames"))
        );
        pairs[1].geometry = Geometry::new(20, 24, 10).unwrap();
        assert!(build_dataset(&pairs, &plan(), Codec::Vvc, "QP32", 1).is_err());
    }

    #[test]
    fn rotation_is_a_quarter_turn() {
        let data: Vec<f32> = (0..3 * 4 * 4).map(|i| i as f32 / 64.0).collect();
        let img = RgbImage::new(4, 4, data).unwrap();
        let r1 = crop_rotated(&img, 0, 0, 4, 1);
        // Counter-clockwise: the top-right corner moves to the top-left.
        assert_eq!(r1[0], img.get(0, 3, 0));
        assert_eq!(r1[3], img.get(0, 3, 3));
        let mut r = crop_rotated(&img, 0, 0, 4, 0);
        let once = |v: &[f32]| {
            let t = RgbImage::new(4, 4, v.to_vec()).unwrap();
            crop_rotated(&t, 0, 0, 4, 1)
        };
        for _ in 0..4 {
            r = once(&r);
        }
        assert_eq!(r, crop_rotated(&img, 0, 0, 4, 0));
        assert_eq!(
            once(&once(&crop_rotated(&img, 0, 0, 4, 0))),
            crop_rotated(&img, 0, 0, 4, 2)
        );
    }

    #[test]
    fn empty_dataset_rejected() {
        let empty = Tensor4::<f32>::zeros(Shape::new(0, 3, B, B));
        let ds = BlockPairDataset::from_blocks(Codec::Vvc, "QP37", &empty, &empty, 8).unwrap();
        assert!(train_l1(&ds, &tiny_config(Method::L1), 1).is_err());
        assert!(train_perceptual(&ds, &tiny_config(Method::Perceptual), 1).is_err());
    }

    #[test]
    fn l1_training_is_bitwise_reproducible() {
        let ds = toy_dataset(8, 1, 0.1);
        let a = train_l1(&ds, &tiny_config(Method::L1), 5).unwrap();
        let b = train_l1(&ds, &tiny_config(Method::L1), 5).unwrap();
        assert!(a.generator.params.bit_equal(&b.generator.params));
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert_eq!(a.method, Method::L1);
        assert_eq!(a.qp_group, "QP37");
        let c = train_l1(&ds, &tiny_config(Method::L1), 6).unwrap();
        assert!(!a.generator.params.bit_equal(&c.generator.params));
    }

    #[test]
    fn identity_pairs_drive_l1_down() {
        let (_, clean) = toy_pairs(8, 2, 0.0);
        let ds = BlockPairDataset::from_blocks(Codec::Vvc, "QP22", &clean, &clean, 16).unwrap();
        let mut c = tiny_config(Method::L1);
        c.epochs = 100;
        c.batch_size = 4;
        c.learning_rate = 3e-3;
        let mut t = Trainer::for_dataset(&ds, c, 3).unwrap();
        let rows = run(&mut t, &ds);
        assert_eq!(rows.len(), 200);
        let first = rows[0].loss_total;
        let last = rows[rows.len() - 1].loss_total;
        assert!(last < 0.1 * first, "{first} -> {last}");
        let h = t.history();
        assert!(h[h.len() - 1].mean_loss <= h[0].mean_loss);
    }

    #[test]
    fn epoch_mean_descends_on_noisy_pairs() {
        let ds = toy_dataset(8, 4, 0.1);
        let mut c = tiny_config(Method::L1);
        c.epochs = 20;
        let mut t = Trainer::for_dataset(&ds, c, 4).unwrap();
        run(&mut t, &ds);
        let h = t.history();
        assert!(h[h.len() - 1].mean_loss <= h[0].mean_loss);
    }

    #[test]
    fn stage_two_starts_from_stage_one_output() {
        let ds = toy_dataset(8, 5, 0.1);
        let config = tiny_config(Method::Perceptual);
        let mut stage1_only = Trainer::for_dataset(&ds, config.clone(), 7).unwrap();
        stage1_only
            .run_until(&ds, config.stage1_epochs, &mut |_| Ok(()))
            .unwrap();
        assert!(stage1_only.stage1_output().is_none());

        let mut full = Trainer::for_dataset(&ds, config.clone(), 7).unwrap();
        let rows = run(&mut full, &ds);
        let snap = full.stage1_output().unwrap();
        assert!(snap.bit_equal(&stage1_only.generator().params));
        assert!(!snap.bit_equal(&full.generator().params));
        let stage1_rows = rows.iter().filter(|r| r.epoch < config.stage1_epochs);
        assert!(stage1_rows
            .clone()
            .all(|r| r.loss_adv.is_none() && r.loss_ssim.is_some()));
        let stage2: Vec<_> = rows
            .iter()
            .filter(|r| r.epoch >= config.stage1_epochs)
            .collect();
        assert!(stage2
            .iter()
            .all(|r| r.loss_adv.is_some() && r.loss_disc.is_some()));
        let bundle = full.bundle().unwrap();
        assert_eq!(bundle.method, Method::Perceptual);
        assert!(bundle.discriminator.is_some());
    }

    #[test]
    fn zero_weights_reduce_stage_two_to_ssim() {
        let ds = toy_dataset(8, 6, 0.1);
        let mut config = tiny_config(Method::Perceptual);
        config.weights.alpha = 0.0;
        config.weights.beta = 0.0;
        let mut a = Trainer::for_dataset(&ds, config.clone(), 8).unwrap();
        let rows_a = run(&mut a, &ds);
        // A different discriminator must not change anything the generator sees.
        let mut b = Trainer::for_dataset(&ds, config.clone(), 8).unwrap();
        for (_, p) in b.discriminator_mut().unwrap().params.iter_mut() {
            if p.trainable {
                p.value = p.value.map(|v| v * -1.5 + 0.01);
            }
        }
        let rows_b = run(&mut b, &ds);
        assert!(a.generator().params.bit_equal(&b.generator().params));
        for (ra, rb) in rows_a.iter().zip(&rows_b) {
            assert_eq!(ra.loss_total.to_bits(), rb.loss_total.to_bits());
        }
        for r in rows_a.iter().filter(|r| r.epoch >= config.stage1_epochs) {
            assert!((r.loss_total - r.loss_ssim.unwrap()).abs() < 1e-6);
            assert_ne!(r.loss_adv.unwrap(), 0.0);
        }
        assert_ne!(
            rows_a.last().unwrap().loss_disc,
            rows_b.last().unwrap().loss_disc
        );
    }

    #[test]
    fn discriminator_separates_clean_from_noisy() {
        let (noisy, clean) = toy_pairs(8, 7, 0.6);
        let ds = BlockPairDataset::from_blocks(Codec::Vvc, "QP42", &noisy, &clean, 16).unwrap();
        let mut config = tiny_config(Method::Perceptual);
        config.learning_rate = 1e-3;
        let mut t = Trainer::for_dataset(&ds, config, 9).unwrap();
        t.generator = Generator::zeroed(t.config.generator).unwrap();
        let frozen = t.generator.params.clone();
        let (x, y) = ds.batch(&(0..8).collect::<Vec<_>>()).unwrap();
        let mut losses = Vec::new();
        for _ in 0..200 {
            losses.push(t.discriminator_step(&x, &y, 1e-3).unwrap());
        }
        assert!(t.generator.params.bit_equal(&frozen));
        let two_ln2 = 2.0 * std::f64::consts::LN_2;
        assert!(losses.last().unwrap() < &two_ln2, "{:?}", &losses[190..]);
        assert!(losses.last().unwrap() < &losses[0]);
    }

    fn assert_resume_matches(method: Method, stop: usize) {
        let ds = toy_dataset(8, 11, 0.1);
        let config = tiny_config(method);
        let mut straight = Trainer::for_dataset(&ds, config.clone(), 12).unwrap();
        let rows_straight = run(&mut straight, &ds);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ppkc");
        let mut first = Trainer::for_dataset(&ds, config.clone(), 12).unwrap();
        let mut rows = Vec::new();
        first
            .run_until(&ds, stop, &mut |r| {
                rows.push(*r);
                Ok(())
            })
            .unwrap();
        save_checkpoint(&first, &path).unwrap();
        drop(first);
        let ckpt = load_checkpoint(&path).unwrap();
        assert_eq!(ckpt.to_bytes(), std::fs::read(&path).unwrap());
        let mut resumed = Trainer::resume(ckpt, config).unwrap();
        rows.extend(run(&mut resumed, &ds));
        assert!(resumed
            .generator()
            .params
            .bit_equal(&straight.generator().params));
        assert_eq!(resumed.step(), straight.step());
        assert_eq!(rows, rows_straight);
        assert_eq!(resumed.history(), straight.history());
        if method == Method::Perceptual {
            let (a, b) = (
                resumed.discriminator().unwrap(),
                straight.discriminator().unwrap(),
            );
            assert!(a.params.bit_equal(&b.params));
            assert!(resumed
                .stage1_output()
                .unwrap()
                .bit_equal(straight.stage1_output().unwrap()));
        }
        assert_eq!(
            resumed.bundle().unwrap().to_bytes(),
            straight.bundle().unwrap().to_bytes()
        );
    }

    #[test]
    fn resume_equals_uninterrupted_l1() {
        assert_resume_matches(Method::L1, 1);
    }

    #[test]
    fn resume_equals_uninterrupted_across_stages() {
        assert_resume_matches(Method::Perceptual, 1);
        assert_resume_matches(Method::Perceptual, 3);
    }

    #[test]
    fn checkpoint_rejects_other_configs() {
        let ds = toy_dataset(4, 13, 0.1);
        let config = tiny_config(Method::L1);
        let mut t = Trainer::for_dataset(&ds, config.clone(), 1).unwrap();
        t.run_until(&ds, 1, &mut |_| Ok(())).unwrap();
        let ck = t.checkpoint();
        let mut other = config.clone();
        other.generator.feature_width = 4;
        assert!(
            matches!(Trainer::resume(ck.clone(), other), Err(Error::MetadataMismatch(m)) if m.contains("g.width"))
        );
        assert!(matches!(
            Trainer::resume(ck.clone(), tiny_config(Method::Perceptual)),
            Err(Error::MetadataMismatch(_))
        ));
        let mut bytes = ck.to_bytes();
        bytes[4] = 9;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Version { found: 9, .. })
        ));
        assert!(Trainer::resume(ck, config).is_ok());
    }

    #[test]
    fn log_rows_render() {
        let r = LogRow {
            epoch: 1,
            step: 7,
            loss_total: 0.5,
            loss_ssim: None,
            loss_l1: Some(0.5),
            loss_adv: None,
            loss_disc: None,
            lr: 1e-4,
        };
        assert_eq!(r.to_csv(), "1,7,0.5,,0.5,,0.0001");
        assert_eq!(LOG_HEADER.split(',').count(), r.to_csv().split(',').count());
    }

    #[test]
    fn unit_domain_is_not_used_for_training() {
        assert_eq!(TrainConfig::default().ssim.domain, PixelDomain::Signed);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn lr_never_increases(every in 1usize..50, epochs in 2usize..300, decay in 0.01f64..1.0) {
            let c = TrainConfig { lr_decay_every: every, epochs, lr_decay: decay, ..TrainConfig::default() };
            for e in 1..epochs {
                prop_assert!(lr_at_epoch(&c, e).unwrap() <= lr_at_epoch(&c, e - 1).unwrap());
            }
        }

        #[test]
        fn stored_samples_are_fixed_points(v in 0.0f32..1.0, sixteen in any::<bool>()) {
            let bits = if sixteen { 16 } else { 8 };
            let q = quantize_sample(v, bits);
            prop_assert_eq!(quantize_sample(q, bits), q);
        }
    }
}
