use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binfmt::{BinReader, BinWriter};
use crate::dispatch::Codec;
use crate::error::{Error, Result};
use crate::models::{Discriminator, Generator};
use crate::nn::{Adam, AdamConfig, ParameterSet};
use crate::training::config::TrainConfig;
use crate::training::trainer::{EpochSummary, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PPKC";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Snapshot of a run between epochs.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    /// [`TrainConfig::describe`] of the run that wrote it.
    pub description: Vec<(String, String)>,
    pub seed: u64,
    pub codec: Codec,
    pub qp_group: String,
    pub epoch: usize,
    pub step: u64,
    pub generator: ParameterSet<f32>,
    pub discriminator: Option<ParameterSet<f32>>,
    pub g_opt: Adam<f32>,
    pub d_opt: Adam<f32>,
    pub stage1_output: Option<ParameterSet<f32>>,
    pub history: Vec<EpochSummary>,
    rng: ChaCha8Rng,
}

fn write_params(w: &mut BinWriter, p: &ParameterSet<f32>) {
    w.u32(p.len() as u32);
    for (name, param) in p.iter() {
        w.str(name);
        w.u8(param.trainable as u8);
        w.tensor(&param.value);
    }
}

fn read_params(r: &mut BinReader) -> Result<ParameterSet<f32>> {
    let n = r.u32()?;
    let mut p = ParameterSet::new();
    for _ in 0..n {
        let name = r.str()?;
        let trainable = r.u8()? != 0;
        let value = r.tensor()?;
        p.insert(name, value, trainable)?;
    }
    Ok(p)
}

fn write_opt_params(w: &mut BinWriter, p: Option<&ParameterSet<f32>>) {
    match p {
        Some(p) => {
            w.u8(1);
            write_params(w, p);
        }
        None => w.u8(0),
    }
}

fn read_opt_params(r: &mut BinReader) -> Result<Option<ParameterSet<f32>>> {
    match r.u8()? {
        0 => Ok(None),
        _ => Ok(Some(read_params(r)?)),
    }
}

fn write_adam(w: &mut BinWriter, a: &Adam<f32>) {
    w.u64(a.steps());
    let moments: Vec<_> = a.moments().collect();
    w.u32(moments.len() as u32);
    for (name, m, v) in moments {
        w.str(name);
        w.tensor(m);
        w.tensor(v);
    }
}

fn read_adam(r: &mut BinReader) -> Result<Adam<f32>> {
    let steps = r.u64()?;
    let n = r.u32()?;
    let mut moments = Vec::with_capacity(n as usize);
    for _ in 0..n {
        moments.push((r.str()?, r.tensor()?, r.tensor()?));
    }
    Ok(Adam::restore(AdamConfig::default(), steps, moments))
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(CHECKPOINT_MAGIC, CHECKPOINT_VERSION);
        w.u32(self.description.len() as u32);
        for (k, v) in &self.description {
            w.str(k);
            w.str(v);
        }
        w.u64(self.seed);
        w.str(&self.codec.to_string());
        w.str(&self.qp_group);
        w.u64(self.epoch as u64);
        w.u64(self.step);
        w.bytes(&self.rng.get_seed());
        w.u64(self.rng.get_stream());
        let pos = self.rng.get_word_pos();
        w.u64(pos as u64);
        w.u64((pos >> 64) as u64);
        write_params(&mut w, &self.generator);
        write_opt_params(&mut w, self.discriminator.as_ref());
        write_adam(&mut w, &self.g_opt);
        write_adam(&mut w, &self.d_opt);
        write_opt_params(&mut w, self.stage1_output.as_ref());
        w.u64(self.history.len() as u64);
        for h in &self.history {
            w.u64(h.epoch as u64);
            w.u64(h.steps);
            w.f64(h.mean_loss);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::open(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, "checkpoint")?;
        let n = r.u32()?;
        let mut description = Vec::with_capacity(n as usize);
        for _ in 0..n {
            description.push((r.str()?, r.str()?));
        }
        let seed = r.u64()?;
        let codec = r.str()?.parse()?;
        let qp_group = r.str()?;
        let epoch = r.usize()?;
        let step = r.u64()?;
        let rng_seed: [u8; 32] = r.bytes(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let lo = r.u64()? as u128;
        let hi = r.u64()? as u128;
        let mut rng = ChaCha8Rng::from_seed(rng_seed);
        rng.set_stream(stream);
        rng.set_word_pos(lo | (hi << 64));
        let generator = read_params(&mut r)?;
        let discriminator = read_opt_params(&mut r)?;
        let g_opt = read_adam(&mut r)?;
        let d_opt = read_adam(&mut r)?;
        let stage1_output = read_opt_params(&mut r)?;
        let h = r.usize()?;
        let mut history = Vec::with_capacity(h.min(1 << 20));
        for _ in 0..h {
            history.push(EpochSummary {
                epoch: r.usize()?,
                steps: r.u64()?,
                mean_loss: r.f64()?,
            });
        }
        r.finish()?;
        Ok(Checkpoint {
            description,
            seed,
            codec,
            qp_group,
            epoch,
            step,
            generator,
            discriminator,
            g_opt,
            d_opt,
            stage1_output,
            history,
            rng,
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

pub fn save_checkpoint(trainer: &Trainer, path: &Path) -> Result<()> {
    trainer.checkpoint().save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

impl Trainer {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            description: self.config.describe(),
            seed: self.seed,
            codec: self.codec,
            qp_group: self.qp_group.clone(),
            epoch: self.epoch,
            step: self.step,
            generator: self.generator.params.clone(),
            discriminator: self.discriminator.as_ref().map(|d| d.params.clone()),
            g_opt: self.g_opt.clone(),
            d_opt: self.d_opt.clone(),
            stage1_output: self.stage1_output.clone(),
            history: self.history.clone(),
            rng: self.rng.clone(),
        }
    }

    /// Continues a run; `config` must describe the run that wrote `ckpt`.
    pub fn resume(ckpt: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let expected = config.describe();
        for (k, v) in &expected {
            match ckpt.description.iter().find(|(ck, _)| ck == k) {
                Some((_, cv)) if cv == v => {}
                Some((_, cv)) => {
                    return Err(Error::MetadataMismatch(format!(
                        "checkpoint has {k} = {cv}, configuration has {v}"
                    )))
                }
                None => {
                    return Err(Error::MetadataMismatch(format!(
                        "checkpoint does not record {k}"
                    )))
                }
            }
        }
        if ckpt.description.len() != expected.len() {
            return Err(Error::MetadataMismatch(
                "checkpoint was written for another method".into(),
            ));
        }
        if ckpt.epoch > config.epochs {
            return Err(Error::MetadataMismatch(format!(
                "checkpoint is at epoch {} of {}",
                ckpt.epoch, config.epochs
            )));
        }
        let generator = Generator::from_params(config.generator, ckpt.generator)?;
        let discriminator = match ckpt.discriminator {
            Some(p) => Some(Discriminator::from_params(config.discriminator.clone(), p)?),
            None => None,
        };
        let (mut g_opt, mut d_opt) = (ckpt.g_opt, ckpt.d_opt);
        g_opt.config = config.adam;
        d_opt.config = config.adam;
        let mut t = Trainer::new(config, ckpt.codec, &ckpt.qp_group, ckpt.seed)?;
        if discriminator.is_some() != t.discriminator.is_some() {
            return Err(Error::MetadataMismatch(
                "discriminator presence differs from the method".into(),
            ));
        }
        t.generator = generator;
        t.discriminator = discriminator;
        t.g_opt = g_opt;
        t.d_opt = d_opt;
        t.rng = ckpt.rng;
        t.epoch = ckpt.epoch;
        t.step = ckpt.step;
        t.stage1_output = ckpt.stage1_output;
        t.history = ckpt.history;
        Ok(t)
    }
}
