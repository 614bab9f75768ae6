use std::fs;
use std::path::Path;

use crate::binfmt::{BinReader, BinWriter};
use crate::dispatch::{is_group, Codec};
use crate::error::{Error, Result};
use crate::models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, Method};

pub const MODEL_MAGIC: &[u8; 4] = b"PPKM";
pub const MODEL_VERSION: u16 = 1;

/// Trained weights plus the tags used to pick them at evaluation time.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub codec: Codec,
    pub qp_group: String,
    pub method: Method,
    pub generator: Generator<f32>,
    pub discriminator: Option<Discriminator<f32>>,
    /// Free-form metadata kept verbatim (seed, step count, ...).
    pub notes: Vec<(String, String)>,
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn meta_err(detail: impl Into<String>) -> Error {
    Error::Format(format!("model metadata: {}", detail.into()))
}

fn take(meta: &mut Vec<(String, String)>, key: &str) -> Result<String> {
    let i = meta
        .iter()
        .position(|(k, _)| k == key)
        .ok_or_else(|| meta_err(format!("missing `{key}`")))?;
    Ok(meta.remove(i).1)
}

fn take_num<N: std::str::FromStr>(meta: &mut Vec<(String, String)>, key: &str) -> Result<N> {
    let v = take(meta, key)?;
    v.parse()
        .map_err(|_| meta_err(format!("`{key}` = `{v}` is not a number")))
}

fn take_list(meta: &mut Vec<(String, String)>, key: &str) -> Result<Vec<usize>> {
    let v = take(meta, key)?;
    v.split(',')
        .map(|x| {
            x.parse()
                .map_err(|_| meta_err(format!("`{key}` = `{v}` is not a list")))
        })
        .collect()
}

impl ModelBundle {
    pub fn new(
        codec: Codec,
        qp_group: impl Into<String>,
        method: Method,
        generator: Generator<f32>,
    ) -> Result<Self> {
        let qp_group = qp_group.into();
        if !is_group(codec, &qp_group) {
            return Err(Error::Invalid(format!(
                "`{qp_group}` is not a {codec} QP group"
            )));
        }
        Ok(ModelBundle {
            codec,
            qp_group,
            method,
            generator,
            discriminator: None,
            notes: Vec::new(),
        })
    }

    fn metadata(&self) -> Vec<(String, String)> {
        let g = &self.generator.config;
        let mut m = vec![
            ("codec".to_string(), self.codec.to_string()),
            ("qp_group".into(), self.qp_group.clone()),
            ("method".into(), self.method.to_string()),
            ("g.blocks".into(), g.num_residual_blocks.to_string()),
            ("g.width".into(), g.feature_width.to_string()),
            ("g.kernel".into(), g.kernel_size.to_string()),
            ("g.block_size".into(), g.input_block_size.to_string()),
        ];
        if let Some(d) = &self.discriminator {
            let c = &d.config;
            m.extend([
                ("d.widths".to_string(), join(&c.widths)),
                ("d.strides".into(), join(&c.strides)),
                ("d.kernel".into(), c.kernel_size.to_string()),
                ("d.dense".into(), c.dense_width.to_string()),
                ("d.block_size".into(), c.input_block_size.to_string()),
                // `{:?}` prints the shortest exact round-trip form
                ("d.slope".into(), format!("{:?}", c.leaky_slope)),
                ("d.eps".into(), format!("{:?}", c.bn_eps)),
                ("d.momentum".into(), format!("{:?}", c.bn_momentum)),
            ]);
        }
        m.extend(self.notes.iter().cloned());
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = BinWriter::new(MODEL_MAGIC, MODEL_VERSION);
        let meta = self.metadata();
        w.u32(meta.len() as u32);
        for (k, v) in &meta {
            w.str(k);
            w.str(v);
        }
        let flat = self.generator.params.flatten();
        w.u64(flat.len() as u64);
        w.scalars(&flat);
        match &self.discriminator {
            Some(d) => {
                w.u8(1);
                let flat = d.params.flatten();
                w.u64(flat.len() as u64);
                w.scalars(&flat);
            }
            None => w.u8(0),
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = BinReader::open(bytes, MODEL_MAGIC, MODEL_VERSION, "model")?;
        let n = r.u32()? as usize;
        let mut meta = Vec::with_capacity(n);
        for _ in 0..n {
            meta.push((r.str()?, r.str()?));
        }
        let codec: Codec = take(&mut meta, "codec")?.parse()?;
        let qp_group = take(&mut meta, "qp_group")?;
        let method: Method = take(&mut meta, "method")?.parse()?;
        let gcfg = GeneratorConfig {
            num_residual_blocks: take_num(&mut meta, "g.blocks")?,
            feature_width: take_num(&mut meta, "g.width")?,
            kernel_size: take_num(&mut meta, "g.kernel")?,
            input_block_size: take_num(&mut meta, "g.block_size")?,
        };
        let mut generator = Generator::zeroed(gcfg)?;
        let count = r.usize()?;
        generator.params.assign_flat(&r.scalars::<f32>(count)?)?;
        let discriminator = match r.u8()? {
            0 => None,
            1 => {
                let dcfg = DiscriminatorConfig {
                    widths: take_list(&mut meta, "d.widths")?,
                    strides: take_list(&mut meta, "d.strides")?,
                    kernel_size: take_num(&mut meta, "d.kernel")?,
                    dense_width: take_num(&mut meta, "d.dense")?,
                    input_block_size: take_num(&mut meta, "d.block_size")?,
                    leaky_slope: take_num(&mut meta, "d.slope")?,
                    bn_eps: take_num(&mut meta, "d.eps")?,
                    bn_momentum: take_num(&mut meta, "d.momentum")?,
                };
                let mut d = Discriminator::zeroed(dcfg)?;
                let count = r.usize()?;
                d.params.assign_flat(&r.scalars::<f32>(count)?)?;
                Some(d)
            }
            other => {
                return Err(Error::Format(format!(
                    "model: bad discriminator flag {other}"
                )))
            }
        };
        r.finish()?;
        let mut bundle = ModelBundle::new(codec, qp_group, method, generator)?;
        bundle.discriminator = discriminator;
        bundle.notes = meta;
        Ok(bundle)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rejects a bundle whose generator was built with another topology.
    pub fn expect_generator_config(&self, config: &GeneratorConfig) -> Result<()> {
        if self.generator.config != *config {
            return Err(Error::Topology(format!(
                "bundle generator is {:?}, expected {:?}",
                self.generator.config, config
            )));
        }
        Ok(())
    }

    pub fn note(&self, key: &str) -> Option<&str> {
        self.notes
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}
