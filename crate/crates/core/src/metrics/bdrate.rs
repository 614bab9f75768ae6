//! Bjøntegaard delta rate between two rate-quality curves.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::dispatch::Codec;
use crate::error::{Error, Result};

/// One encode: bitrate in kbit/s and a quality score, optionally tagged with
/// the QP that produced it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateQualityPoint {
    pub bitrate: f64,
    pub quality: f64,
    pub qp: Option<u32>,
}

impl RateQualityPoint {
    pub fn new(bitrate: f64, quality: f64) -> Self {
        RateQualityPoint {
            bitrate,
            quality,
            qp: None,
        }
    }

    pub fn with_qp(bitrate: f64, quality: f64, qp: u32) -> Self {
        RateQualityPoint {
            bitrate,
            quality,
            qp: Some(qp),
        }
    }
}

/// At least four points, sorted by bitrate, with quality rising along with it.
#[derive(Clone, Debug, PartialEq)]
pub struct RateQualityCurve {
    label: String,
    points: Vec<RateQualityPoint>,
}

pub const MIN_CURVE_POINTS: usize = 4;

impl RateQualityCurve {
    /// Sorts by bitrate and checks the curve is usable for a cubic fit.
    pub fn new(label: impl Into<String>, mut points: Vec<RateQualityPoint>) -> Result<Self> {
        let label = label.into();
        if points.len() < MIN_CURVE_POINTS {
            return Err(Error::Curve(format!(
                "`{label}` has {} points; at least {MIN_CURVE_POINTS} are needed",
                points.len()
            )));
        }
        for p in &points {
            if !(p.bitrate.is_finite() && p.bitrate > 0.0) {
                return Err(Error::Curve(format!(
                    "`{label}`: bitrate {} must be positive and finite",
                    p.bitrate
                )));
            }
            if !p.quality.is_finite() {
                return Err(Error::Curve(format!(
                    "`{label}`: quality {} is not finite",
                    p.quality
                )));
            }
        }
        points.sort_by(|a, b| a.bitrate.total_cmp(&b.bitrate));
        for w in points.windows(2) {
            if w[1].bitrate == w[0].bitrate {
                return Err(Error::Curve(format!(
                    "`{label}`: bitrate {} appears twice",
                    w[0].bitrate
                )));
            }
            if w[1].quality <= w[0].quality {
                return Err(Error::Curve(format!(
                    "`{label}` is not monotone: quality {} at {} kbps does not exceed {} at {} kbps",
                    w[1].quality, w[1].bitrate, w[0].quality, w[0].bitrate
                )));
            }
        }
        Ok(RateQualityCurve { label, points })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn points(&self) -> &[RateQualityPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Lowest and highest quality.
    pub fn quality_range(&self) -> (f64, f64) {
        (
            self.points[0].quality,
            self.points[self.points.len() - 1].quality,
        )
    }

    /// Same points with every bitrate multiplied by `factor`.
    pub fn scale_bitrate(&self, factor: f64) -> Result<Self> {
        let points = self
            .points
            .iter()
            .map(|p| RateQualityPoint {
                bitrate: p.bitrate * factor,
                ..*p
            })
            .collect();
        Self::new(self.label.clone(), points)
    }
}

/// Cubic `log10(rate)` as a function of quality. The quality axis is
/// shifted and scaled to `[-1, 1]` over the data before fitting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicFit {
    pub center: f64,
    pub half_width: f64,
    /// Coefficients of `1, u, u^2, u^3` with `u = (q - center) / half_width`.
    pub coeffs: [f64; 4],
}

impl CubicFit {
    /// Least-squares fit to the curve's points.
    pub fn of(curve: &RateQualityCurve) -> Result<Self> {
        let (lo, hi) = curve.quality_range();
        let center = 0.5 * (lo + hi);
        let half_width = 0.5 * (hi - lo);
        let n = curve.len();
        let a = DMatrix::from_fn(n, 4, |i, j| {
            ((curve.points[i].quality - center) / half_width).powi(j as i32)
        });
        let b = DVector::from_iterator(n, curve.points.iter().map(|p| p.bitrate.log10()));
        let x = a
            .svd(true, true)
            .solve(&b, 1e-12)
            .map_err(|e| Error::Curve(format!("`{}`: cubic fit failed: {e}", curve.label)))?;
        Ok(CubicFit {
            center,
            half_width,
            coeffs: [x[0], x[1], x[2], x[3]],
        })
    }

    fn u(&self, q: f64) -> f64 {
        (q - self.center) / self.half_width
    }

    /// Fitted `log10(rate)` at quality `q`.
    pub fn eval(&self, q: f64) -> f64 {
        let u = self.u(q);
        let [c0, c1, c2, c3] = self.coeffs;
        c0 + u * (c1 + u * (c2 + u * c3))
    }

    fn antiderivative(&self, q: f64) -> f64 {
        let u = self.u(q);
        let [c0, c1, c2, c3] = self.coeffs;
        self.half_width * u * (c0 + u * (c1 / 2.0 + u * (c2 / 3.0 + u * c3 / 4.0)))
    }

    /// Exact integral over `[a, b]` in quality units.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.antiderivative(b) - self.antiderivative(a)
    }
}

/// Quality interval shared by both curves.
pub fn overlap(anchor: &RateQualityCurve, test: &RateQualityCurve) -> Result<(f64, f64)> {
    let (a0, a1) = anchor.quality_range();
    let (t0, t1) = test.quality_range();
    let (lo, hi) = (a0.max(t0), a1.min(t1));
    if hi <= lo {
        return Err(Error::Curve(format!(
            "quality ranges do not overlap: `{}` spans [{a0}, {a1}], `{}` spans [{t0}, {t1}]",
            anchor.label, test.label
        )));
    }
    Ok((lo, hi))
}

/// Percentage bitrate change of `test` relative to `anchor` at equal quality.
/// Negative values mean `test` needs fewer bits.
pub fn bd_rate(anchor: &RateQualityCurve, test: &RateQualityCurve) -> Result<f64> {
    let (lo, hi) = overlap(anchor, test)?;
    let fa = CubicFit::of(anchor)?;
    let ft = CubicFit::of(test)?;
    let avg = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg) - 1.0) * 100.0)
}

/// QP band of a five-point VVC sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpRange {
    Low,
    High,
}

impl QpRange {
    pub fn qps(self, codec: Codec) -> Result<[u32; 4]> {
        match (codec, self) {
            (Codec::Vvc, QpRange::Low) => Ok([22, 27, 32, 37]),
            (Codec::Vvc, QpRange::High) => Ok([27, 32, 37, 42]),
            (Codec::Av1, _) => Err(Error::Invalid(format!(
                "{codec} results use a single QP range; `{self}` is only defined for {}",
                Codec::Vvc
            ))),
        }
    }
}

impl fmt::Display for QpRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QpRange::Low => "low",
            QpRange::High => "high",
        })
    }
}

impl FromStr for QpRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(QpRange::Low),
            "high" => Ok(QpRange::High),
            _ => Err(Error::Invalid(format!(
                "QP range `{s}` is not `low` or `high`"
            ))),
        }
    }
}

/// Keeps the points whose QP tags belong to `range`.
pub fn qp_subrange(
    curve: &RateQualityCurve,
    codec: Codec,
    range: QpRange,
) -> Result<RateQualityCurve> {
    let wanted = range.qps(codec)?;
    let mut points = Vec::with_capacity(wanted.len());
    for qp in wanted {
        let p = curve
            .points
            .iter()
            .find(|p| p.qp == Some(qp))
            .ok_or_else(|| Error::Curve(format!("`{}` has no point for QP {qp}", curve.label)))?;
        points.push(*p);
    }
    RateQualityCurve::new(format!("{} ({range})", curve.label), points)
}
