//! Frame quality and rate-quality comparisons.

mod bdrate;
mod curve_csv;
mod quality;
mod report;

pub use bdrate::{
    bd_rate, overlap, qp_subrange, CubicFit, QpRange, RateQualityCurve, RateQualityPoint,
    MIN_CURVE_POINTS,
};
pub use curve_csv::{
    curve_from_csv, curve_to_csv, format_sig6, read_curve, read_long, write_curve, write_gnuplot,
    write_long, CURVE_COLUMN, QP_COLUMN, QUALITY_COLUMN, RATE_COLUMN,
};
pub use quality::{
    luma_tensor, psnr, psnr_from_mse, psnr_rgb, sequence_mean, ssim_metric, PSNR_CAP_DB,
};
pub use report::{
    format_percent, parse_manifest, BdReport, ManifestEntry, ReportRow, RowKind, MANIFEST_HEADER,
};
