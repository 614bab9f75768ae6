//! Codec/QP to model selection and the on-disk model registry.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::models::{Method, ModelBundle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Codec {
    Vvc,
    Av1,
}

impl Codec {
    pub const ALL: [Codec; 2] = [Codec::Vvc, Codec::Av1];

    pub fn as_str(self) -> &'static str {
        match self {
            Codec::Vvc => "VVC",
            Codec::Av1 => "AV1",
        }
    }
}

impl fmt::Display for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Codec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "VVC" => Ok(Codec::Vvc),
            "AV1" => Ok(Codec::Av1),
            _ => Err(Error::Invalid(format!(
                "unknown codec `{s}` (expected VVC or AV1)"
            ))),
        }
    }
}

/// Upper-inclusive thresholds and the group each interval selects.
#[derive(Clone, Debug, PartialEq)]
pub struct QpModelTable {
    pub codec: Codec,
    pub intervals: Vec<(f64, &'static str)>,
}

impl QpModelTable {
    pub fn for_codec(codec: Codec) -> Self {
        let intervals = match codec {
            Codec::Vvc => vec![
                (24.5, "QP22"),
                (29.5, "QP27"),
                (34.5, "QP32"),
                (39.5, "QP37"),
                (f64::INFINITY, "QP42"),
            ],
            Codec::Av1 => vec![
                (37.5, "QP32"),
                (49.0, "QP43"),
                (59.0, "QP55"),
                (f64::INFINITY, "QP63"),
            ],
        };
        QpModelTable { codec, intervals }
    }

    pub fn groups(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.intervals.iter().map(|&(_, g)| g)
    }

    /// First interval whose upper bound is `>= qp`.
    pub fn select(&self, qp: f64) -> Result<&'static str> {
        if qp.is_nan() {
            return Err(Error::Invalid("QP is NaN".into()));
        }
        Ok(self
            .intervals
            .iter()
            .find(|&&(upper, _)| qp <= upper)
            .map(|&(_, g)| g)
            .expect("last threshold is infinite"))
    }
}

/// Group label of the model trained for `codec` that serves `qp_eval`.
pub fn select_model(codec: Codec, qp_eval: f64) -> Result<&'static str> {
    QpModelTable::for_codec(codec).select(qp_eval)
}

/// Whether `group` is one of the labels of `codec`.
pub fn is_group(codec: Codec, group: &str) -> bool {
    QpModelTable::for_codec(codec).groups().any(|g| g == group)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegistryEntry {
    pub codec: Codec,
    pub qp_group: String,
    pub method: Method,
    pub path: PathBuf,
}

/// `(codec, qp_group, method) -> model file` map backed by a text manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ModelRegistry {
    entries: Vec<RegistryEntry>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    /// Adds or replaces the entry for the same key.
    pub fn insert(&mut self, entry: RegistryEntry) -> Result<()> {
        if !is_group(entry.codec, &entry.qp_group) {
            return Err(Error::Invalid(format!(
                "`{}` is not a {} QP group",
                entry.qp_group, entry.codec
            )));
        }
        self.entries.retain(|e| {
            !(e.codec == entry.codec && e.qp_group == entry.qp_group && e.method == entry.method)
        });
        self.entries.push(entry);
        Ok(())
    }

    pub fn get(&self, codec: Codec, qp_group: &str, method: Method) -> Option<&RegistryEntry> {
        self.entries
            .iter()
            .find(|e| e.codec == codec && e.qp_group == qp_group && e.method == method)
    }

    /// Parses manifest text. Relative paths are taken relative to `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut reg = ModelRegistry::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |detail: String| Error::Parse {
                line: i as u64 + 1,
                detail,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [codec, group, method, path] = fields[..] else {
                return Err(parse_err(format!(
                    "expected `codec qp_group method path`, found {} fields",
                    fields.len()
                )));
            };
            let path = Path::new(path);
            let entry = RegistryEntry {
                codec: codec.parse().map_err(|e: Error| parse_err(e.to_string()))?,
                qp_group: group.to_string(),
                method: method
                    .parse()
                    .map_err(|e: Error| parse_err(e.to_string()))?,
                path: if path.is_absolute() {
                    path.to_path_buf()
                } else {
                    base.join(path)
                },
            };
            reg.insert(entry).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Manifest text; paths are written as stored.
    pub fn to_manifest(&self) -> String {
        let mut s = String::from("# codec qp_group method path\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{} {} {} {}\n",
                e.codec,
                e.qp_group,
                e.method,
                e.path.display()
            ));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_manifest()).map_err(|e| Error::io(path, e))
    }

    /// Selects the group for `qp_eval`, loads the registered bundle and
    /// checks that its tags match the request.
    pub fn resolve(&self, codec: Codec, qp_eval: f64, method: Method) -> Result<ModelBundle> {
        let group = select_model(codec, qp_eval)?;
        let Some(entry) = self.get(codec, group, method) else {
            let available: Vec<String> = self
                .entries
                .iter()
                .filter(|e| e.codec == codec && e.method == method)
                .map(|e| e.qp_group.clone())
                .collect();
            return Err(Error::NoModel {
                codec: codec.to_string(),
                group: group.to_string(),
                method: method.to_string(),
                available: if available.is_empty() {
                    "none".into()
                } else {
                    available.join(", ")
                },
            });
        };
        let bundle = ModelBundle::load(&entry.path)?;
        if bundle.codec != codec || bundle.qp_group != group || bundle.method != method {
            return Err(Error::MetadataMismatch(format!(
                "{} is tagged ({}, {}, {}) but registered as ({codec}, {group}, {method})",
                entry.path.display(),
                bundle.codec,
                bundle.qp_group,
                bundle.method
            )));
        }
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vvc_intervals_as_written() {
        let cases = [
            (22.0, "QP22"),
            (24.5, "QP22"),
            (24.6, "QP27"),
            (29.5, "QP27"),
            (34.5, "QP32"),
            (37.0, "QP37"),
            (39.5, "QP37"),
            (39.51, "QP42"),
            (42.0, "QP42"),
            (-5.0, "QP22"),
        ];
        for (qp, g) in cases {
            assert_eq!(select_model(Codec::Vvc, qp).unwrap(), g, "qp {qp}");
        }
    }

    #[test]
    fn av1_intervals_as_written() {
        let cases = [
            (32.0, "QP32"),
            (37.5, "QP32"),
            (38.0, "QP43"),
            (49.0, "QP43"),
            (49.5, "QP55"),
            (59.0, "QP55"),
            (59.01, "QP63"),
            (63.0, "QP63"),
        ];
        for (qp, g) in cases {
            assert_eq!(select_model(Codec::Av1, qp).unwrap(), g, "qp {qp}");
        }
    }

    #[test]
    fn codec_parsing() {
        assert_eq!("vvc".parse::<Codec>().unwrap(), Codec::Vvc);
        assert_eq!("AV1".parse::<Codec>().unwrap(), Codec::Av1);
        assert!("HEVC".parse::<Codec>().is_err());
        assert!(select_model(Codec::Vvc, f64::NAN).is_err());
    }

    #[test]
    fn nine_labels() {
        let n: usize = Codec::ALL
            .iter()
            .map(|&c| QpModelTable::for_codec(c).groups().count())
            .sum();
        assert_eq!(n, 9);
    }

    #[test]
    fn manifest_round_trip() {
        let text =
            "# models\nVVC QP42 l1 a/vvc42.ppkm\nAV1 QP63 perceptual /abs/av1.ppkm # trailing\n\n";
        let reg = ModelRegistry::parse(text, Path::new("/base")).unwrap();
        assert_eq!(reg.entries().len(), 2);
        assert_eq!(reg.entries()[0].path, Path::new("/base/a/vvc42.ppkm"));
        assert_eq!(reg.entries()[1].method, Method::Perceptual);
        let again = ModelRegistry::parse(&reg.to_manifest(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, reg);
    }

    #[test]
    fn manifest_errors_carry_line_numbers() {
        for (text, line) in [
            ("VVC QP42 l1\n", 1),
            ("\nHEVC QP42 l1 x\n", 2),
            ("VVC QP43 l1 x\n", 1),
            ("VVC QP42 ssim x\n", 1),
        ] {
            match ModelRegistry::parse(text, Path::new(".")) {
                Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn empty_registry_reports_missing_group() {
        let err = ModelRegistry::new()
            .resolve(Codec::Vvc, 42.0, Method::L1)
            .unwrap_err();
        assert!(matches!(err, Error::NoModel { ref group, .. } if group == "QP42"));
        assert_eq!(err.exit_code(), 3);
    }
}
