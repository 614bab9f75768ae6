use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ppnet::dispatch::{select_model, Codec, ModelRegistry};
use ppnet::frames::{enhance_frame, read_yuv, whole_frame_count, Geometry};
use ppnet::metrics::{
    bd_rate, curve_from_csv, format_percent, parse_manifest, psnr, psnr_rgb, qp_subrange,
    sequence_mean, ssim_metric, write_gnuplot, write_long, BdReport, QpRange, RateQualityCurve,
};
use ppnet::models::{DiscriminatorConfig, GeneratorConfig, Method, ModelBundle};
use ppnet::training::{
    build_dataset, load_checkpoint, BlockPairDataset, DatasetPlan, SequencePair, TrainConfig,
    Trainer, LOG_HEADER,
};
use ppnet::{Error, Result};

use crate::{
    BdrateArgs, Command, CurvesArgs, DatasetBuildArgs, DatasetCommand, EnhanceArgs, MethodArg,
    QpRangeArg, QualityArgs, TrainArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Dataset {
            command: DatasetCommand::Build(a),
        } => dataset_build(a),
        Command::Train(a) => train(a),
        Command::Enhance(a) => enhance(a),
        Command::Quality(a) => quality(a),
        Command::Bdrate(a) => bdrate(a),
        Command::Curves(a) => curves(a),
    }
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::L1 => Method::L1,
            MethodArg::Perceptual => Method::Perceptual,
        }
    }
}

impl From<QpRangeArg> for QpRange {
    fn from(r: QpRangeArg) -> Self {
        match r {
            QpRangeArg::Low => QpRange::Low,
            QpRangeArg::High => QpRange::High,
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_pair_list(path: &Path) -> Result<Vec<SequencePair>> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let expected = ["decoded", "original", "width", "height", "bit_depth"];
    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        detail: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Parse {
            line: 1,
            detail: format!("pair list header must be `{}`", expected.join(",")),
        });
    }
    let mut pairs = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<usize> {
            record[i].parse().map_err(|_| Error::Parse {
                line,
                detail: format!("`{}` is not a whole number", &record[i]),
            })
        };
        let bit_depth = num(4)?;
        let geometry = Geometry::new(num(2)?, num(3)?, u8::try_from(bit_depth).unwrap_or(0))?;
        pairs.push(SequencePair {
            compressed: base.join(&record[0]),
            original: base.join(&record[1]),
            geometry,
        });
    }
    Ok(pairs)
}

fn dataset_build(a: DatasetBuildArgs) -> Result<()> {
    let codec: Codec = a.codec.parse()?;
    let mut pairs = Vec::new();
    if !a.pairs.is_empty() {
        let (Some(w), Some(h)) = (a.width, a.height) else {
            return Err(Error::Invalid("--pair needs --width and --height".into()));
        };
        let geometry = Geometry::new(w, h, a.bit_depth)?;
        for p in a.pairs.chunks(2) {
            pairs.push(SequencePair {
                compressed: p[0].clone(),
                original: p[1].clone(),
                geometry,
            });
        }
    }
    if let Some(list) = &a.pair_list {
        pairs.extend(parse_pair_list(list)?);
    }
    if pairs.is_empty() {
        return Err(Error::Invalid(
            "no sequence pairs given (use --pair or --pair-list)".into(),
        ));
    }
    let plan = DatasetPlan {
        frames_per_sequence: a.frames_per_sequence,
        blocks_per_frame: a.blocks_per_frame,
        block_size: a.block_size,
        sample_bits: a.sample_bits,
    };
    let ds = build_dataset(&pairs, &plan, codec, &a.qp_group, a.seed)?;
    ds.save(&a.output)?;
    println!(
        "wrote {} block pairs ({}x{}, {}-bit samples) from {} sequence pairs to {}",
        ds.len(),
        ds.block_size(),
        ds.block_size(),
        ds.sample_bits(),
        pairs.len(),
        a.output.display()
    );
    println!("tags: {} {}", ds.codec, ds.qp_group);
    Ok(())
}

fn train_config(a: &TrainArgs, block: usize) -> Result<TrainConfig> {
    if a.disc_reduce == 0 {
        return Err(Error::Invalid("--disc-reduce must be at least 1".into()));
    }
    let mut discriminator = DiscriminatorConfig::reduced(a.disc_reduce);
    discriminator.input_block_size = block;
    let mut config = TrainConfig {
        method: a.method.into(),
        generator: GeneratorConfig {
            num_residual_blocks: a.residual_blocks,
            feature_width: a.features,
            input_block_size: block,
            ..GeneratorConfig::default()
        },
        discriminator,
        learning_rate: a.lr,
        lr_decay: a.lr_decay,
        lr_decay_every: a.lr_decay_every,
        epochs: a.epochs,
        stage1_epochs: a.stage1_epochs,
        batch_size: a.batch_size,
        ..TrainConfig::default()
    };
    config.weights.alpha = a.alpha;
    config.weights.beta = a.beta;
    config.validate()?;
    Ok(config)
}

fn train(a: TrainArgs) -> Result<()> {
    let ds = BlockPairDataset::load(&a.dataset)?;
    let config = train_config(&a, ds.block_size())?;
    let mut trainer = match &a.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.codec != ds.codec || ckpt.qp_group != ds.qp_group || ckpt.seed != a.seed {
                return Err(Error::MetadataMismatch(format!(
                    "checkpoint is for {} {} seed {}, run is {} {} seed {}",
                    ckpt.codec, ckpt.qp_group, ckpt.seed, ds.codec, ds.qp_group, a.seed
                )));
            }
            Trainer::resume(ckpt, config)?
        }
        None => Trainer::for_dataset(&ds, config, a.seed)?,
    };
    if let Some(stop) = a.stop_after {
        if stop <= trainer.epoch() {
            return Err(Error::Invalid(format!(
                "--stop-after {stop} is not beyond the current epoch {}",
                trainer.epoch()
            )));
        }
    }

    let mut log = match &a.log {
        Some(path) => Some(open_log(path, a.resume.is_some())?),
        None => None,
    };
    let end = a.stop_after.unwrap_or(usize::MAX);
    while !trainer.is_finished() && trainer.epoch() < end {
        let log_path = a.log.clone().unwrap_or_default();
        let summary = trainer.run_epoch(&ds, &mut |row| {
            if let Some(w) = log.as_mut() {
                writeln!(w, "{}", row.to_csv()).map_err(|e| Error::io(&log_path, e))?;
            }
            Ok(())
        })?;
        if let (Some(w), Some(path)) = (log.as_mut(), &a.log) {
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        if let Some(path) = &a.checkpoint {
            trainer.checkpoint().save(path)?;
        }
        eprintln!(
            "epoch {}: {} steps, mean loss {:.6}",
            summary.epoch, summary.steps, summary.mean_loss
        );
    }
    let bundle = trainer.bundle()?;
    bundle.save(&a.output)?;
    println!(
        "wrote {} model ({} {}) after {} epochs / {} steps to {}",
        bundle.method,
        bundle.codec,
        bundle.qp_group,
        trainer.epoch(),
        trainer.step(),
        a.output.display()
    );
    Ok(())
}

fn open_log(path: &Path, append: bool) -> Result<BufWriter<File>> {
    let exists = path.exists();
    let file = if append {
        OpenOptions::new().create(true).append(true).open(path)
    } else {
        File::create(path)
    }
    .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    if !append || !exists {
        writeln!(w, "{LOG_HEADER}").map_err(|e| Error::io(path, e))?;
    }
    Ok(w)
}

fn load_model(a: &EnhanceArgs, codec: Codec) -> Result<ModelBundle> {
    let method: Method = a.method.into();
    match (&a.models, &a.model) {
        (Some(registry), _) => {
            let reg = ModelRegistry::load(registry)?;
            let group = select_model(codec, a.qp)?;
            let bundle = reg.resolve(codec, a.qp, method)?;
            eprintln!("QP {} selects the {group} {method} model", a.qp);
            Ok(bundle)
        }
        (None, Some(path)) => {
            let bundle = ModelBundle::load(path)?;
            if bundle.codec != codec {
                return Err(Error::MetadataMismatch(format!(
                    "{} holds a {} model, {codec} requested",
                    path.display(),
                    bundle.codec
                )));
            }
            Ok(bundle)
        }
        (None, None) => Err(Error::Invalid("give --models or --model".into())),
    }
}

fn partial_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    output.with_file_name(name)
}

fn enhance(a: EnhanceArgs) -> Result<()> {
    let codec: Codec = a.codec.parse()?;
    let g = Geometry::new(a.geometry.width, a.geometry.height, a.geometry.bit_depth)?;
    let available = whole_frame_count(&a.input, g)?;
    let frames = a.frames.unwrap_or(available);
    if frames == 0 || frames > available {
        return Err(Error::Invalid(format!(
            "{frames} frames requested, {} holds {available}",
            a.input.display()
        )));
    }
    let bundle = load_model(&a, codec)?;
    let block = bundle.generator.config.input_block_size;
    if g.width < block || g.height < block {
        return Err(Error::Invalid(format!(
            "frame {}x{} is smaller than the model's {block}x{block} block",
            g.width, g.height
        )));
    }
    let tmp = partial_path(&a.output);
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let result = (|| -> Result<()> {
        for i in 0..frames {
            let frame = read_yuv(&a.input, g, i)?;
            let out = enhance_frame(&bundle, &frame)?;
            w.write_all(&out.to_bytes())
                .map_err(|e| Error::io(&tmp, e))?;
        }
        w.flush().map_err(|e| Error::io(&tmp, e))
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    drop(w);
    fs::rename(&tmp, &a.output).map_err(|e| Error::io(&a.output, e))?;
    eprintln!(
        "enhanced {frames} frames with the {} {} {} model",
        bundle.codec, bundle.qp_group, bundle.method
    );
    Ok(())
}

fn quality(a: QualityArgs) -> Result<()> {
    let g = Geometry::new(a.geometry.width, a.geometry.height, a.geometry.bit_depth)?;
    let nr = whole_frame_count(&a.reference, g)?;
    let nt = whole_frame_count(&a.test, g)?;
    if nr != nt || nr == 0 {
        return Err(Error::Invalid(format!(
            "{} has {nr} frames, {} has {nt}",
            a.reference.display(),
            a.test.display()
        )));
    }
    let mut out = String::from(if a.rgb {
        "frame,psnr_rgb,ssim_y\n"
    } else {
        "frame,psnr_y,ssim_y\n"
    });
    let (mut ps, mut ss) = (Vec::new(), Vec::new());
    for i in 0..nr {
        let r = read_yuv(&a.reference, g, i)?;
        let t = read_yuv(&a.test, g, i)?;
        let p = if a.rgb {
            psnr_rgb(&r, &t)?
        } else {
            psnr(&r, &t)?
        };
        let s = ssim_metric(&r, &t)?;
        out.push_str(&format!("{i},{p},{s}\n"));
        ps.push(p);
        ss.push(s);
    }
    let mean = |v: &[f64]| sequence_mean(v).expect("at least one frame");
    out.push_str(&format!("mean,{},{}\n", mean(&ps), mean(&ss)));
    print!("{out}");
    Ok(())
}

fn load_curve(path: &Path, range: Option<(Codec, QpRange)>) -> Result<RateQualityCurve> {
    let c = curve_from_csv(path)?;
    match range {
        Some((codec, r)) => qp_subrange(&c, codec, r),
        None => Ok(c),
    }
}

fn bdrate(a: BdrateArgs) -> Result<()> {
    let range = match a.qp_range {
        Some(r) => Some((a.codec.parse::<Codec>()?, QpRange::from(r))),
        None => None,
    };
    if let Some(manifest) = &a.table {
        let base = manifest.parent().unwrap_or(Path::new("."));
        let entries = parse_manifest(&read_text(manifest)?, base)?;
        let mut results = Vec::with_capacity(entries.len());
        for e in &entries {
            let anchor = load_curve(&e.anchor, range)?;
            let test = load_curve(&e.test, range)?;
            let bd = bd_rate(&anchor, &test).map_err(|err| match err {
                Error::Curve(m) => Error::Curve(format!("{} / {}: {m}", e.class, e.sequence)),
                other => other,
            })?;
            results.push((e.class.clone(), e.sequence.clone(), bd));
        }
        let column = match range {
            Some((_, r)) => format!("{} ({r} QP)", a.label),
            None => a.label.clone(),
        };
        let report = BdReport::build(column, &results)?;
        let csv = report.to_csv()?;
        if let Some(path) = &a.csv_out {
            write_file(path, csv.as_bytes())?;
        }
        print!("{}", report.to_text());
        return Ok(());
    }
    let (Some(anchor), Some(test)) = (&a.anchor, &a.test) else {
        return Err(Error::Invalid(
            "give --anchor and --test, or --table".into(),
        ));
    };
    let bd = bd_rate(&load_curve(anchor, range)?, &load_curve(test, range)?)?;
    println!("{}", format_percent(bd));
    Ok(())
}

fn curves(a: CurvesArgs) -> Result<()> {
    let mut curves = Vec::with_capacity(a.inputs.len());
    for path in &a.inputs {
        curves.push(curve_from_csv(path)?);
    }
    let stems: Vec<String> = curves.iter().map(|c| c.label().to_string()).collect();
    for (i, c) in curves.iter_mut().enumerate() {
        if stems.iter().filter(|s| **s == stems[i]).count() > 1 {
            *c = RateQualityCurve::new(a.inputs[i].display().to_string(), c.points().to_vec())?;
        }
    }
    let long = write_long(&curves)?;
    let plot = a.gnuplot.as_ref().map(|_| write_gnuplot(&curves));
    write_file(&a.csv, long.as_bytes())?;
    if let (Some(path), Some(plot)) = (&a.gnuplot, plot) {
        write_file(path, plot.as_bytes())?;
    }
    println!(
        "wrote {} curves, {} points",
        curves.len(),
        curves.iter().map(|c| c.len()).sum::<usize>()
    );
    Ok(())
}
