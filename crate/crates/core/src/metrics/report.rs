//! Per-sequence, per-class and overall BD-rate tables.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One manifest row: which curves to compare for a sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub class: String,
    pub sequence: String,
    pub anchor: PathBuf,
    pub test: PathBuf,
}

pub const MANIFEST_HEADER: [&str; 4] = ["class", "sequence", "anchor_csv", "test_csv"];

/// Reads `class,sequence,anchor_csv,test_csv`; relative paths resolve
/// against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| Error::Parse {
        line: 1,
        detail: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Parse {
            line: 1,
            detail: format!("manifest header must be `{}`", MANIFEST_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().any(str::is_empty) {
            return Err(Error::Parse {
                line,
                detail: "empty manifest field".into(),
            });
        }
        let resolve = |s: &str| {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        out.push(ManifestEntry {
            class: record[0].to_string(),
            sequence: record[1].to_string(),
            anchor: resolve(&record[2]),
            test: resolve(&record[3]),
        });
    }
    if out.is_empty() {
        return Err(Error::Invalid("manifest lists no sequences".into()));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RowKind {
    Sequence,
    ClassMean,
    /// Mean over every sequence.
    OverallSequences,
    /// Mean over the class means.
    OverallClasses,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub kind: RowKind,
    pub class: String,
    pub name: String,
    pub bd_rate: f64,
}

/// Rows in presentation order: each class's sequences followed by the class
/// mean, then both overall rows. Classes appear in first-seen order.
#[derive(Clone, Debug, PartialEq)]
pub struct BdReport {
    pub column: String,
    pub rows: Vec<ReportRow>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl BdReport {
    /// Groups `(class, sequence, bd_rate)` results.
    pub fn build(column: impl Into<String>, results: &[(String, String, f64)]) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::Invalid("no BD-rate results to report".into()));
        }
        let mut classes: Vec<&str> = Vec::new();
        for (c, _, _) in results {
            if !classes.contains(&c.as_str()) {
                classes.push(c);
            }
        }
        let mut rows = Vec::new();
        let mut class_means = Vec::new();
        for class in classes {
            let members: Vec<_> = results.iter().filter(|(c, _, _)| c == class).collect();
            for (c, s, v) in &members {
                rows.push(ReportRow {
                    kind: RowKind::Sequence,
                    class: c.clone(),
                    name: s.clone(),
                    bd_rate: *v,
                });
            }
            let m = mean(&members.iter().map(|(_, _, v)| *v).collect::<Vec<_>>());
            class_means.push(m);
            rows.push(ReportRow {
                kind: RowKind::ClassMean,
                class: class.to_string(),
                name: format!("Class {class} mean"),
                bd_rate: m,
            });
        }
        rows.push(ReportRow {
            kind: RowKind::OverallSequences,
            class: String::new(),
            name: "Overall (mean of sequences)".into(),
            bd_rate: mean(&results.iter().map(|r| r.2).collect::<Vec<_>>()),
        });
        rows.push(ReportRow {
            kind: RowKind::OverallClasses,
            class: String::new(),
            name: "Overall (mean of classes)".into(),
            bd_rate: mean(&class_means),
        });
        Ok(BdReport {
            column: column.into(),
            rows,
        })
    }

    /// Fixed-width table for terminals.
    pub fn to_text(&self) -> String {
        let class_w = self
            .rows
            .iter()
            .map(|r| r.class.len())
            .chain([5])
            .max()
            .unwrap_or(5);
        let name_w = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain([8])
            .max()
            .unwrap_or(8);
        let val_w = self
            .rows
            .iter()
            .map(|r| format_percent(r.bd_rate).len())
            .chain([self.column.chars().count()])
            .max()
            .unwrap_or(8);
        let mut out = format!(
            "{:<class_w$}  {:<name_w$}  {:>val_w$}\n",
            "Class", "Sequence", self.column
        );
        out.push_str(&format!("{}\n", "-".repeat(class_w + name_w + val_w + 4)));
        for r in &self.rows {
            if r.kind == RowKind::OverallSequences {
                out.push_str(&format!("{}\n", "-".repeat(class_w + name_w + val_w + 4)));
            }
            out.push_str(&format!(
                "{:<class_w$}  {:<name_w$}  {:>val_w$}\n",
                r.class,
                r.name,
                format_percent(r.bd_rate)
            ));
        }
        out
    }

    /// `kind,class,sequence,bd_rate_percent` with full precision values.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Invalid(format!("writing report: {e}"));
        w.write_record(["kind", "class", "sequence", "bd_rate_percent"])
            .map_err(err)?;
        for r in &self.rows {
            let kind = match r.kind {
                RowKind::Sequence => "sequence",
                RowKind::ClassMean => "class_mean",
                RowKind::OverallSequences => "overall_sequences",
                RowKind::OverallClasses => "overall_classes",
            };
            w.write_record([kind, &r.class, &r.name, &format!("{:.4}", r.bd_rate)])
                .map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Invalid(format!("writing report: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

/// One decimal with an explicit sign; values that round to zero print as
/// `0.0%`.
pub fn format_percent(v: f64) -> String {
    let s = format!("{v:.1}");
    if s == "0.0" || s == "-0.0" {
        "0.0%".into()
    } else if v > 0.0 {
        format!("+{s}%")
    } else {
        format!("{s}%")
    }
}
