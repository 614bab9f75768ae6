use crate::error::{Error, Result};
use crate::frames::{ycbcr_to_rgb, PlanarFrame420};
use crate::losses::{self, SsimParams};
use crate::tensor::{Shape, Tensor4};

/// Reported instead of infinity when two planes are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

fn check_pair(a: &PlanarFrame420, b: &PlanarFrame420) -> Result<()> {
    if a.geometry() != b.geometry() {
        return Err(Error::Invalid(format!(
            "frame geometry differs: {:?} vs {:?}",
            a.geometry(),
            b.geometry()
        )));
    }
    Ok(())
}

/// `10 log10(peak^2 / mse)` capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
}

fn plane_mse(a: &[u16], b: &[u16]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// Luma PSNR in dB with peak `2^bit_depth - 1`.
pub fn psnr(reference: &PlanarFrame420, test: &PlanarFrame420) -> Result<f64> {
    check_pair(reference, test)?;
    let peak = reference.geometry().max_sample() as f64;
    Ok(psnr_from_mse(plane_mse(&reference.y, &test.y), peak))
}

/// Mean of the three per-channel RGB PSNRs (peak 1).
pub fn psnr_rgb(reference: &PlanarFrame420, test: &PlanarFrame420) -> Result<f64> {
    check_pair(reference, test)?;
    let (a, b) = (ycbcr_to_rgb(reference), ycbcr_to_rgb(test));
    let mut total = 0.0;
    for c in 0..3 {
        let sum: f64 = a
            .plane(c)
            .iter()
            .zip(b.plane(c))
            .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
            .sum();
        total += psnr_from_mse(sum / a.plane(c).len() as f64, 1.0);
    }
    Ok(total / 3.0)
}

/// Luma plane scaled to `[0,1]` as a `(1,1,h,w)` tensor.
pub fn luma_tensor(frame: &PlanarFrame420) -> Tensor4<f64> {
    let peak = frame.geometry().max_sample() as f64;
    let shape = Shape::new(1, 1, frame.height(), frame.width());
    Tensor4::from_vec(shape, frame.y.iter().map(|&v| v as f64 / peak).collect())
        .expect("plane size")
}

/// SSIM of the normalised luma planes.
pub fn ssim_metric(reference: &PlanarFrame420, test: &PlanarFrame420) -> Result<f64> {
    check_pair(reference, test)?;
    losses::ssim(
        &luma_tensor(reference),
        &luma_tensor(test),
        &SsimParams::unit(),
    )
}

/// Arithmetic mean of per-frame values.
pub fn sequence_mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
