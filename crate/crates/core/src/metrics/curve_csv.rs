//! `bitrate_kbps,quality[,qp]` files.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::bdrate::{RateQualityCurve, RateQualityPoint};

pub const RATE_COLUMN: &str = "bitrate_kbps";
pub const QUALITY_COLUMN: &str = "quality";
pub const QP_COLUMN: &str = "qp";

/// Rounds to six significant digits and renders the shortest exact form.
pub fn format_sig6(v: f64) -> String {
    let rounded: f64 = format!("{v:.5e}").parse().expect("scientific float");
    format!("{rounded}")
}

fn parse_err(line: u64, detail: impl Into<String>) -> Error {
    Error::Parse {
        line,
        detail: detail.into(),
    }
}

/// Parses curve rows from any reader. Points keep file order until the
/// curve constructor sorts them by bitrate.
pub fn read_curve(reader: impl Read, label: &str) -> Result<RateQualityCurve> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_qp = match names.as_slice() {
        [RATE_COLUMN, QUALITY_COLUMN] => false,
        [RATE_COLUMN, QUALITY_COLUMN, QP_COLUMN] => true,
        _ => {
            return Err(parse_err(
                1,
                format!(
                    "header must be `{RATE_COLUMN},{QUALITY_COLUMN}[,{QP_COLUMN}]`, found `{}`",
                    names.join(",")
                ),
            ))
        }
    };
    let mut points = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<f64> {
            let cell = &record[i];
            cell.parse::<f64>()
                .map_err(|_| parse_err(line, format!("{name} `{cell}` is not a number")))
        };
        let bitrate = field(0, RATE_COLUMN)?;
        let quality = field(1, QUALITY_COLUMN)?;
        let qp = if has_qp {
            let cell = &record[2];
            Some(cell.parse::<u32>().map_err(|_| {
                parse_err(line, format!("{QP_COLUMN} `{cell}` is not a whole number"))
            })?)
        } else {
            None
        };
        points.push(RateQualityPoint {
            bitrate,
            quality,
            qp,
        });
    }
    RateQualityCurve::new(label, points)
}

fn csv_error(e: csv::Error, fallback_line: u64) -> Error {
    let line = e.position().map_or(fallback_line, |p| p.line());
    parse_err(line, e.to_string())
}

/// Reads a curve labelled with the file stem.
pub fn curve_from_csv(path: &Path) -> Result<RateQualityCurve> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let label = path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    read_curve(file, &label).map_err(|e| match e {
        Error::Parse { line, detail } => Error::Parse {
            line,
            detail: format!("{}: {detail}", path.display()),
        },
        other => other,
    })
}

/// Writes the curve in bitrate order; the QP column appears only when
/// every point carries one.
pub fn write_curve(curve: &RateQualityCurve, writer: impl Write) -> Result<()> {
    let with_qp = curve.points().iter().all(|p| p.qp.is_some());
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::Invalid(format!("writing curve: {e}"));
    if with_qp {
        w.write_record([RATE_COLUMN, QUALITY_COLUMN, QP_COLUMN])
            .map_err(io)?;
    } else {
        w.write_record([RATE_COLUMN, QUALITY_COLUMN]).map_err(io)?;
    }
    for p in curve.points() {
        let mut row = vec![format_sig6(p.bitrate), format_sig6(p.quality)];
        if let (true, Some(qp)) = (with_qp, p.qp) {
            row.push(qp.to_string());
        }
        w.write_record(&row).map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Invalid(format!("writing curve: {e}")))
}

pub fn curve_to_csv(curve: &RateQualityCurve, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_curve(curve, &mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub const CURVE_COLUMN: &str = "curve";

/// Several curves in one table, `curve,bitrate_kbps,quality[,qp]`, curves
/// in the given order.
pub fn write_long(curves: &[RateQualityCurve]) -> Result<String> {
    let with_qp = curves
        .iter()
        .flat_map(|c| c.points())
        .all(|p| p.qp.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Invalid(format!("writing curves: {e}"));
    let mut header = vec![CURVE_COLUMN, RATE_COLUMN, QUALITY_COLUMN];
    if with_qp {
        header.push(QP_COLUMN);
    }
    w.write_record(&header).map_err(err)?;
    for c in curves {
        for p in c.points() {
            let mut row = vec![
                c.label().to_string(),
                format_sig6(p.bitrate),
                format_sig6(p.quality),
            ];
            if let (true, Some(qp)) = (with_qp, p.qp) {
                row.push(qp.to_string());
            }
            w.write_record(&row).map_err(err)?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Invalid(format!("writing curves: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Inverse of [`write_long`]; curves come back in first-seen order.
pub fn read_long(text: &str) -> Result<Vec<RateQualityCurve>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_qp = match names.as_slice() {
        [CURVE_COLUMN, RATE_COLUMN, QUALITY_COLUMN] => false,
        [CURVE_COLUMN, RATE_COLUMN, QUALITY_COLUMN, QP_COLUMN] => true,
        _ => {
            return Err(parse_err(
                1,
                format!(
                    "header must be `{CURVE_COLUMN},{RATE_COLUMN},{QUALITY_COLUMN}[,{QP_COLUMN}]`"
                ),
            ))
        }
    };
    let mut groups: Vec<(String, Vec<RateQualityPoint>)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(e, 0))?;
        let line = record.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse()
                .map_err(|_| parse_err(line, format!("`{}` is not a number", &record[i])))
        };
        let qp = if has_qp {
            Some(record[3].parse().map_err(|_| {
                parse_err(line, format!("QP `{}` is not a whole number", &record[3]))
            })?)
        } else {
            None
        };
        let point = RateQualityPoint {
            bitrate: num(1)?,
            quality: num(2)?,
            qp,
        };
        match groups.iter_mut().find(|(l, _)| l == &record[0]) {
            Some((_, pts)) => pts.push(point),
            None => groups.push((record[0].to_string(), vec![point])),
        }
    }
    groups
        .into_iter()
        .map(|(label, pts)| RateQualityCurve::new(label, pts))
        .collect()
}

/// Gnuplot data: one `# label` block per curve, blocks separated by two
/// blank lines so `index` selects a curve.
pub fn write_gnuplot(curves: &[RateQualityCurve]) -> String {
    let mut out = String::new();
    for (i, c) in curves.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        out.push_str(&format!(
            "# {}\n# {RATE_COLUMN} {QUALITY_COLUMN}\n",
            c.label()
        ));
        for p in c.points() {
            out.push_str(&format!(
                "{} {}\n",
                format_sig6(p.bitrate),
                format_sig6(p.quality)
            ));
        }
    }
    out
}
