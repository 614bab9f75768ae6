//! Training objectives and their gradients.
//!
//! Image losses take network-domain tensors (values in `[-1, 1]`) unless the
//! [`SsimParams::domain`] says otherwise. All reductions run in `f64`
//! regardless of the tensor element type.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor4};

/// Default per-scale MS-SSIM exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Lower clamp applied to probabilities before taking logarithms.
pub const LOG_EPS: f64 = 1e-12;

/// Weights of the combined generator objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    /// Weight of the l1 term.
    pub alpha: f64,
    /// Weight of the adversarial term.
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.025,
            beta: 5e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Invalid(format!(
                "loss weights must be non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// How tensor values map onto the `[0, L]` range SSIM is evaluated in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixelDomain {
    /// Values in `[-1, 1]`, mapped with `(v + 1) / 2`.
    Signed,
    /// Values already in `[0, L]`.
    Unit,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    pub domain: PixelDomain,
    /// MS-SSIM exponents, finest first. Truncated to the usable scale count
    /// and renormalised.
    pub ms_weights: Vec<f64>,
    /// Upper bound on MS-SSIM scales; `None` uses every scale that fits.
    pub max_scales: Option<usize>,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            domain: PixelDomain::Signed,
            ms_weights: MS_SSIM_WEIGHTS.to_vec(),
            max_scales: None,
        }
    }
}

impl SsimParams {
    /// Parameters for images already normalised to `[0, 1]`.
    pub fn unit() -> Self {
        SsimParams {
            domain: PixelDomain::Unit,
            ..Default::default()
        }
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    fn validate(&self) -> Result<()> {
        if self.window == 0 || self.window % 2 == 0 {
            return Err(Error::Invalid(format!(
                "SSIM window must be odd, got {}",
                self.window
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Invalid("SSIM sigma must be positive".into()));
        }
        Ok(())
    }

    fn map_in(&self, v: f64) -> f64 {
        match self.domain {
            PixelDomain::Signed => (v + 1.0) * 0.5,
            PixelDomain::Unit => v,
        }
    }

    fn grad_factor(&self) -> f64 {
        match self.domain {
            PixelDomain::Signed => 0.5,
            PixelDomain::Unit => 1.0,
        }
    }

    /// Number of MS-SSIM scales used for an image whose smaller side is
    /// `min_side`: `min(5, floor(log2(min_side / window)) + 1)`, further
    /// capped by `max_scales` and the number of weights.
    pub fn ms_scales(&self, min_side: usize) -> Result<usize> {
        if min_side < self.window {
            return Err(Error::Invalid(format!(
                "image side {min_side} is smaller than the {} px SSIM window",
                self.window
            )));
        }
        let mut fit = 1;
        while fit < 5 && self.window << fit <= min_side {
            fit += 1;
        }
        let cap = self
            .max_scales
            .unwrap_or(usize::MAX)
            .min(self.ms_weights.len());
        if cap == 0 {
            return Err(Error::Invalid("MS-SSIM needs at least one scale".into()));
        }
        Ok(fit.min(cap))
    }

    /// Exponents for `scales` scales, renormalised to sum to one.
    pub fn ms_effective_weights(&self, scales: usize) -> Vec<f64> {
        let w = &self.ms_weights[..scales];
        let total: f64 = w.iter().sum();
        w.iter().map(|v| v / total).collect()
    }
}

fn check_same(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("{a} vs {b}")));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(output: &Tensor4<T>, target: &Tensor4<T>) -> Result<f64> {
    check_same("l1_loss", output.shape(), target.shape())?;
    let n = output.len().max(1) as f64;
    Ok(output
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a.f64() - b.f64()).abs())
        .sum::<f64>()
        / n)
}

/// Gradient of [`l1_loss`] with respect to `output` (zero where equal).
pub fn l1_backward<T: Scalar>(
    output: &Tensor4<T>,
    target: &Tensor4<T>,
    grad: f64,
) -> Result<Tensor4<T>> {
    check_same("l1_loss", output.shape(), target.shape())?;
    let k = grad / output.len().max(1) as f64;
    output.zip_map(target, |a, b| {
        let d = a.f64() - b.f64();
        T::of(if d > 0.0 {
            k
        } else if d < 0.0 {
            -k
        } else {
            0.0
        })
    })
}

/// Mean squared difference.
pub fn mse_loss<T: Scalar>(output: &Tensor4<T>, target: &Tensor4<T>) -> Result<f64> {
    check_same("mse_loss", output.shape(), target.shape())?;
    let n = output.len().max(1) as f64;
    Ok(output
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| (a.f64() - b.f64()).powi(2))
        .sum::<f64>()
        / n)
}

pub fn mse_backward<T: Scalar>(
    output: &Tensor4<T>,
    target: &Tensor4<T>,
    grad: f64,
) -> Result<Tensor4<T>> {
    check_same("mse_loss", output.shape(), target.shape())?;
    let k = 2.0 * grad / output.len().max(1) as f64;
    output.zip_map(target, |a, b| T::of(k * (a.f64() - b.f64())))
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Separable valid-mode Gaussian filter of an `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (mh, mw) = (h - k + 1, w - k + 1);
    let mut horiz = vec![0.0; h * mw];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..mw {
            horiz[y * mw + x] = g.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; mh * mw];
    for y in 0..mh {
        for (t, &gt) in g.iter().enumerate() {
            let src_row = &horiz[(y + t) * mw..(y + t + 1) * mw];
            let dst = &mut out[y * mw..(y + 1) * mw];
            for (d, s) in dst.iter_mut().zip(src_row) {
                *d += gt * s;
            }
        }
    }
    out
}

/// Transpose of [`filter_valid`]: scatters a map back onto the plane.
fn filter_valid_adjoint(map: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (mh, mw) = (h - k + 1, w - k + 1);
    let mut horiz = vec![0.0; h * mw];
    for y in 0..mh {
        let src = &map[y * mw..(y + 1) * mw];
        for (t, &gt) in g.iter().enumerate() {
            let dst = &mut horiz[(y + t) * mw..(y + t + 1) * mw];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += gt * s;
            }
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let src = &horiz[y * mw..(y + 1) * mw];
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, &s) in src.iter().enumerate() {
            for (t, &gt) in g.iter().enumerate() {
                dst[x + t] += gt * s;
            }
        }
    }
    out
}

/// Local statistics of one plane pair.
struct PlaneStats {
    len: usize,
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
    lum: Vec<f64>,
    cs: Vec<f64>,
}

fn plane_stats(x: &[f64], y: &[f64], h: usize, w: usize, p: &SsimParams, g: &[f64]) -> PlaneStats {
    let mu_x = filter_valid(x, h, w, g);
    let mu_y = filter_valid(y, h, w, g);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).collect::<Vec<_>>();
    let e_xx = filter_valid(&sq(x, x), h, w, g);
    let e_yy = filter_valid(&sq(y, y), h, w, g);
    let e_xy = filter_valid(&sq(x, y), h, w, g);
    let (c1, c2) = (p.c1(), p.c2());
    let len = mu_x.len();
    let mut st = PlaneStats {
        len,
        var_x: vec![0.0; len],
        var_y: vec![0.0; len],
        cov: vec![0.0; len],
        lum: vec![0.0; len],
        cs: vec![0.0; len],
        mu_x,
        mu_y,
    };
    for i in 0..len {
        let (mx, my) = (st.mu_x[i], st.mu_y[i]);
        st.var_x[i] = e_xx[i] - mx * mx;
        st.var_y[i] = e_yy[i] - my * my;
        st.cov[i] = e_xy[i] - mx * my;
        st.lum[i] = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        st.cs[i] = (2.0 * st.cov[i] + c2) / (st.var_x[i] + st.var_y[i] + c2);
    }
    st
}

/// Pulls per-position gradients on the luminance and contrast-structure
/// maps back onto both planes.
#[allow(clippy::too_many_arguments)]
fn plane_backward(
    x: &[f64],
    y: &[f64],
    h: usize,
    w: usize,
    p: &SsimParams,
    g: &[f64],
    st: &PlaneStats,
    d_lum: &[f64],
    d_cs: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let (c1, c2) = (p.c1(), p.c2());
    let n = st.len;
    let mut g_mx = vec![0.0; n];
    let mut g_my = vec![0.0; n];
    let mut g_exx = vec![0.0; n];
    let mut g_eyy = vec![0.0; n];
    let mut g_exy = vec![0.0; n];
    for i in 0..n {
        let (mx, my) = (st.mu_x[i], st.mu_y[i]);
        let a = mx * mx + my * my + c1;
        let b = st.var_x[i] + st.var_y[i] + c2;
        let (l, cs) = (st.lum[i], st.cs[i]);
        let dl_dmx = (2.0 * my - 2.0 * mx * l) / a;
        let dl_dmy = (2.0 * mx - 2.0 * my * l) / a;
        let dcs_dvar = -cs / b;
        let dcs_dcov = 2.0 / b;
        // var_x = E[xx] - mx^2, cov = E[xy] - mx my
        g_mx[i] = d_lum[i] * dl_dmx + d_cs[i] * (dcs_dvar * (-2.0 * mx) + dcs_dcov * (-my));
        g_my[i] = d_lum[i] * dl_dmy + d_cs[i] * (dcs_dvar * (-2.0 * my) + dcs_dcov * (-mx));
        g_exx[i] = d_cs[i] * dcs_dvar;
        g_eyy[i] = d_cs[i] * dcs_dvar;
        g_exy[i] = d_cs[i] * dcs_dcov;
    }
    let a_mx = filter_valid_adjoint(&g_mx, h, w, g);
    let a_my = filter_valid_adjoint(&g_my, h, w, g);
    let a_xx = filter_valid_adjoint(&g_exx, h, w, g);
    let a_yy = filter_valid_adjoint(&g_eyy, h, w, g);
    let a_xy = filter_valid_adjoint(&g_exy, h, w, g);
    let dx = (0..h * w)
        .map(|i| a_mx[i] + 2.0 * x[i] * a_xx[i] + y[i] * a_xy[i])
        .collect();
    let dy = (0..h * w)
        .map(|i| a_my[i] + 2.0 * y[i] * a_yy[i] + x[i] * a_xy[i])
        .collect();
    (dx, dy)
}

fn planes<T: Scalar>(t: &Tensor4<T>, p: &SsimParams) -> Vec<Vec<f64>> {
    let s = t.shape();
    t.data()
        .chunks(s.plane_len())
        .map(|pl| pl.iter().map(|v| p.map_in(v.f64())).collect())
        .collect()
}

fn ssim_check<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, p: &SsimParams) -> Result<()> {
    p.validate()?;
    check_same("ssim", a.shape(), b.shape())?;
    let s = a.shape();
    if s.is_empty() {
        return Err(Error::shape("ssim", "empty image"));
    }
    if s.h < p.window || s.w < p.window {
        return Err(Error::Invalid(format!(
            "image {}x{} is smaller than the {} px SSIM window",
            s.h, s.w, p.window
        )));
    }
    Ok(())
}

fn from_planes<T: Scalar>(shape: Shape, planes: Vec<Vec<f64>>, factor: f64) -> Tensor4<T> {
    let data = planes
        .into_iter()
        .flatten()
        .map(|v| T::of(v * factor))
        .collect();
    Tensor4::from_vec(shape, data).expect("plane count matches shape")
}

/// Mean SSIM over every `(item, channel)` plane.
pub fn ssim<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, p: &SsimParams) -> Result<f64> {
    ssim_check(a, b, p)?;
    let s = a.shape();
    let g = gaussian_window(p.window, p.sigma);
    let (pa, pb) = (planes(a, p), planes(b, p));
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        let st = plane_stats(x, y, s.h, s.w, p, &g);
        total += st.lum.iter().zip(&st.cs).map(|(l, c)| l * c).sum::<f64>() / st.len as f64;
    }
    Ok(total / pa.len() as f64)
}

/// Gradients of `grad * ssim(a, b)` with respect to both images.
pub fn ssim_backward<T: Scalar>(
    a: &Tensor4<T>,
    b: &Tensor4<T>,
    p: &SsimParams,
    grad: f64,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    ssim_check(a, b, p)?;
    let s = a.shape();
    let g = gaussian_window(p.window, p.sigma);
    let (pa, pb) = (planes(a, p), planes(b, p));
    let count = pa.len() as f64;
    let mut da = Vec::with_capacity(pa.len());
    let mut db = Vec::with_capacity(pa.len());
    for (x, y) in pa.iter().zip(&pb) {
        let st = plane_stats(x, y, s.h, s.w, p, &g);
        let k = grad / (count * st.len as f64);
        let d_lum: Vec<f64> = st.cs.iter().map(|c| k * c).collect();
        let d_cs: Vec<f64> = st.lum.iter().map(|l| k * l).collect();
        let (dx, dy) = plane_backward(x, y, s.h, s.w, p, &g, &st, &d_lum, &d_cs);
        da.push(dx);
        db.push(dy);
    }
    let f = p.grad_factor();
    Ok((from_planes(s, da, f), from_planes(s, db, f)))
}

/// 2x2 mean pooling; a trailing odd row or column is dropped.
fn downsample(src: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = 0.25 * (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]);
        }
    }
    (out, oh, ow)
}

fn downsample_adjoint(grad: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; h * w];
    for y in 0..oh {
        for x in 0..ow {
            let q = 0.25 * grad[y * ow + x];
            let i = 2 * y * w + 2 * x;
            out[i] += q;
            out[i + 1] += q;
            out[i + w] += q;
            out[i + w + 1] += q;
        }
    }
    out
}

struct Pyramid {
    levels: Vec<(Vec<f64>, Vec<f64>, usize, usize)>,
}

fn pyramid(x: &[f64], y: &[f64], h: usize, w: usize, scales: usize) -> Pyramid {
    let mut levels = vec![(x.to_vec(), y.to_vec(), h, w)];
    for _ in 1..scales {
        let (px, py, ph, pw) = levels.last().unwrap();
        let (dx, nh, nw) = downsample(px, *ph, *pw);
        let (dy, _, _) = downsample(py, *ph, *pw);
        levels.push((dx, dy, nh, nw));
    }
    Pyramid { levels }
}

/// Per-scale means: contrast-structure at every scale but the coarsest,
/// full SSIM at the coarsest.
fn scale_means(pyr: &Pyramid, p: &SsimParams, g: &[f64]) -> (Vec<PlaneStats>, Vec<f64>) {
    let last = pyr.levels.len() - 1;
    let mut stats = Vec::new();
    let mut means = Vec::new();
    for (j, (x, y, h, w)) in pyr.levels.iter().enumerate() {
        let st = plane_stats(x, y, *h, *w, p, g);
        let m = if j == last {
            st.lum.iter().zip(&st.cs).map(|(l, c)| l * c).sum::<f64>()
        } else {
            st.cs.iter().sum::<f64>()
        } / st.len as f64;
        stats.push(st);
        means.push(m);
    }
    (stats, means)
}

/// Multi-scale SSIM averaged over planes. Negative per-scale terms are
/// clamped to zero before exponentiation.
pub fn ms_ssim<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, p: &SsimParams) -> Result<f64> {
    ssim_check(a, b, p)?;
    let s = a.shape();
    let scales = p.ms_scales(s.h.min(s.w))?;
    let weights = p.ms_effective_weights(scales);
    let g = gaussian_window(p.window, p.sigma);
    let (pa, pb) = (planes(a, p), planes(b, p));
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        let pyr = pyramid(x, y, s.h, s.w, scales);
        let (_, means) = scale_means(&pyr, p, &g);
        total += means
            .iter()
            .zip(&weights)
            .map(|(m, w)| m.max(0.0).powf(*w))
            .product::<f64>();
    }
    Ok(total / pa.len() as f64)
}

pub fn ms_ssim_backward<T: Scalar>(
    a: &Tensor4<T>,
    b: &Tensor4<T>,
    p: &SsimParams,
    grad: f64,
) -> Result<(Tensor4<T>, Tensor4<T>)> {
    ssim_check(a, b, p)?;
    let s = a.shape();
    let scales = p.ms_scales(s.h.min(s.w))?;
    let weights = p.ms_effective_weights(scales);
    let g = gaussian_window(p.window, p.sigma);
    let (pa, pb) = (planes(a, p), planes(b, p));
    let count = pa.len() as f64;
    let mut da = Vec::with_capacity(pa.len());
    let mut db = Vec::with_capacity(pa.len());
    for (x, y) in pa.iter().zip(&pb) {
        let pyr = pyramid(x, y, s.h, s.w, scales);
        let (stats, means) = scale_means(&pyr, p, &g);
        let prod: f64 = means
            .iter()
            .zip(&weights)
            .map(|(m, w)| m.max(0.0).powf(*w))
            .product();
        let d_prod = grad / count;
        let last = scales - 1;
        let mut acc_x: Option<Vec<f64>> = None;
        let mut acc_y: Option<Vec<f64>> = None;
        for j in (0..scales).rev() {
            let (lx, ly, h, w) = &pyr.levels[j];
            let st = &stats[j];
            let dm = if means[j] > 0.0 {
                d_prod * weights[j] * prod / means[j]
            } else {
                0.0
            };
            let k = dm / st.len as f64;
            let (d_lum, d_cs): (Vec<f64>, Vec<f64>) = if j == last {
                (
                    st.cs.iter().map(|c| k * c).collect(),
                    st.lum.iter().map(|l| k * l).collect(),
                )
            } else {
                (vec![0.0; st.len], vec![k; st.len])
            };
            let (mut gx, mut gy) = plane_backward(lx, ly, *h, *w, p, &g, st, &d_lum, &d_cs);
            if let (Some(cx), Some(cy)) = (acc_x.take(), acc_y.take()) {
                let ux = downsample_adjoint(&cx, *h, *w);
                let uy = downsample_adjoint(&cy, *h, *w);
                gx.iter_mut().zip(ux).for_each(|(a, u)| *a += u);
                gy.iter_mut().zip(uy).for_each(|(a, u)| *a += u);
            }
            acc_x = Some(gx);
            acc_y = Some(gy);
        }
        da.push(acc_x.unwrap());
        db.push(acc_y.unwrap());
    }
    let f = p.grad_factor();
    Ok((from_planes(s, da, f), from_planes(s, db, f)))
}

/// `-ln(max(sigmoid(u), eps))` and its derivative.
fn neg_log_sigmoid(u: f64) -> (f64, f64) {
    // sigmoid(u) and 1 - sigmoid(u) = sigmoid(-u), both computed stably
    let (s, one_minus) = if u >= 0.0 {
        let e = (-u).exp();
        (1.0 / (1.0 + e), e / (1.0 + e))
    } else {
        let e = u.exp();
        (e / (1.0 + e), 1.0 / (1.0 + e))
    };
    if s > LOG_EPS {
        (-s.ln(), -one_minus)
    } else {
        (-LOG_EPS.ln(), 0.0)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Evaluates `mean_i phi(sr * (r_i - mean f)) + mean_j phi(sf * (f_j - mean r))`
/// with `phi = -ln sigmoid`, returning the value and both gradients.
fn relativistic(real: &[f64], fake: &[f64], sr: f64, sf: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Invalid(
            "relativistic loss needs non-empty real and fake batches".into(),
        ));
    }
    let (mr, mf) = (mean(real), mean(fake));
    let (nr, nf) = (real.len() as f64, fake.len() as f64);
    let mut value = 0.0;
    let mut dr = vec![0.0; real.len()];
    let mut df = vec![0.0; fake.len()];
    let mut sum_r = 0.0;
    for (i, &r) in real.iter().enumerate() {
        let (v, d) = neg_log_sigmoid(sr * (r - mf));
        value += v / nr;
        let g = sr * d / nr;
        dr[i] += g;
        sum_r += g;
    }
    let mut sum_f = 0.0;
    for (j, &f) in fake.iter().enumerate() {
        let (v, d) = neg_log_sigmoid(sf * (f - mr));
        value += v / nf;
        let g = sf * d / nf;
        df[j] += g;
        sum_f += g;
    }
    // the batch means couple every score to the other class
    dr.iter_mut().for_each(|v| *v -= sum_f / nr);
    df.iter_mut().for_each(|v| *v -= sum_r / nf);
    Ok((value, dr, df))
}

/// Adversarial generator loss:
/// `-E_r[ln(1 - sig(r - E_f f))] - E_f[ln(sig(f - E_r r))]`.
pub fn ragan_generator_loss(real: &[f64], fake: &[f64]) -> Result<f64> {
    relativistic(real, fake, -1.0, 1.0).map(|r| r.0)
}

/// Returns `(loss, d real, d fake)`.
pub fn ragan_generator_grad(real: &[f64], fake: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    relativistic(real, fake, -1.0, 1.0)
}

/// Discriminator loss:
/// `-E_r[ln(sig(r - E_f f))] - E_f[ln(1 - sig(f - E_r r))]`.
pub fn ragan_discriminator_loss(real: &[f64], fake: &[f64]) -> Result<f64> {
    relativistic(real, fake, 1.0, -1.0).map(|r| r.0)
}

pub fn ragan_discriminator_grad(real: &[f64], fake: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    relativistic(real, fake, 1.0, -1.0)
}

/// Individual terms of the combined generator objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CombinedLoss {
    pub total: f64,
    pub ssim: f64,
    pub l1: f64,
    pub adversarial: f64,
}

/// `(1 - ssim) + alpha * l1 + beta * adversarial`.
pub fn combined_generator_loss<T: Scalar>(
    output: &Tensor4<T>,
    target: &Tensor4<T>,
    scores_real: &[f64],
    scores_fake: &[f64],
    weights: LossWeights,
    params: &SsimParams,
) -> Result<CombinedLoss> {
    weights.validate()?;
    let ssim_loss = 1.0 - ssim(output, target, params)?;
    let l1 = l1_loss(output, target)?;
    let adversarial = ragan_generator_loss(scores_real, scores_fake)?;
    Ok(CombinedLoss {
        total: ssim_loss + weights.alpha * l1 + weights.beta * adversarial,
        ssim: ssim_loss,
        l1,
        adversarial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: Shape, seed: u64, lo: f64, hi: f64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_vec(
            shape,
            (0..shape.len()).map(|_| rng.random_range(lo..hi)).collect(),
        )
        .unwrap()
    }

    /// Smooth pattern so SSIM stays well inside (0, 1).
    fn texture(shape: Shape, seed: u64) -> Tensor4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fx, fy, ph): (f64, f64, f64) = (
            rng.random_range(0.1..0.4),
            rng.random_range(0.1..0.4),
            rng.random_range(0.0..6.0),
        );
        let mut t = Tensor4::zeros(shape);
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        let v = 0.6
                            * (fx * x as f64 + ph + c as f64).sin()
                            * (fy * y as f64 + n as f64).cos();
                        t.set(n, c, y, x, v);
                    }
                }
            }
        }
        t
    }

    fn add_noise(t: &Tensor4<f64>, amp: f64, seed: u64) -> Tensor4<f64> {
        let noise = random(t.shape(), seed, -1.0, 1.0);
        t.zip_map(&noise, |a, b| (a + amp * b).clamp(-1.0, 1.0))
            .unwrap()
    }

    #[test]
    fn l1_cases() {
        let a = random(Shape::new(2, 3, 4, 4), 1, -1.0, 1.0);
        assert_eq!(l1_loss(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v - 0.25);
        assert!((l1_loss(&a, &b).unwrap() - 0.25).abs() < 1e-15);
        let c = random(a.shape(), 2, -1.0, 1.0);
        let mut acc = 0.0;
        for i in 0..a.len() {
            acc += (a.data()[i] - c.data()[i]).abs();
        }
        assert!((l1_loss(&a, &c).unwrap() - acc / a.len() as f64).abs() < 1e-12);
        assert!(l1_loss(&a, &Tensor4::zeros(Shape::new(1, 3, 4, 4))).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let p = SsimParams::default();
        let a = texture(Shape::new(2, 3, 24, 20), 1);
        assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-12);
        let b = add_noise(&a, 0.2, 3);
        let ab = ssim(&a, &b, &p).unwrap();
        assert_eq!(ab, ssim(&b, &a, &p).unwrap());
        assert!(ab < 1.0 && ab > -1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor4::<f64>::zeros(Shape::new(1, 1, 10, 30));
        assert!(ssim(&a, &a, &SsimParams::default()).is_err());
    }

    /// Direct per-pixel windowed sums, no separable filtering.
    fn ssim_oracle(a: &Tensor4<f64>, b: &Tensor4<f64>) -> f64 {
        let p = SsimParams::default();
        let s = a.shape();
        let k = 11;
        let g1 = gaussian_window(k, 1.5);
        let (c1, c2) = ((0.01f64).powi(2), (0.03f64).powi(2));
        let mut total = 0.0;
        let mut count = 0.0;
        for n in 0..s.n {
            for c in 0..s.c {
                let mut plane_sum = 0.0;
                let mut m = 0.0;
                for y in 0..=s.h - k {
                    for x in 0..=s.w - k {
                        let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                        for u in 0..k {
                            for v in 0..k {
                                let wgt = g1[u] * g1[v];
                                let va = p.map_in(a.at(n, c, y + u, x + v));
                                let vb = p.map_in(b.at(n, c, y + u, x + v));
                                mx += wgt * va;
                                my += wgt * vb;
                                xx += wgt * va * va;
                                yy += wgt * vb * vb;
                                xy += wgt * va * vb;
                            }
                        }
                        let (sx, sy, sxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
                        plane_sum += (2.0 * mx * my + c1) * (2.0 * sxy + c2)
                            / ((mx * mx + my * my + c1) * (sx + sy + c2));
                        m += 1.0;
                    }
                }
                total += plane_sum / m;
                count += 1.0;
            }
        }
        total / count
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        let a = random(Shape::new(1, 2, 16, 14), 5, -1.0, 1.0);
        let b = random(a.shape(), 6, -1.0, 1.0);
        let got = ssim(&a, &b, &SsimParams::default()).unwrap();
        assert!((got - ssim_oracle(&a, &b)).abs() < 1e-9);
        let t = texture(Shape::new(1, 1, 20, 20), 2);
        let u = add_noise(&t, 0.1, 9);
        assert!((ssim(&t, &u, &SsimParams::default()).unwrap() - ssim_oracle(&t, &u)).abs() < 1e-9);
    }

    #[test]
    fn ms_ssim_scale_rule() {
        let p = SsimParams::default();
        assert_eq!(p.ms_scales(96).unwrap(), 4);
        assert_eq!(p.ms_scales(176).unwrap(), 5);
        assert_eq!(p.ms_scales(1000).unwrap(), 5);
        assert_eq!(p.ms_scales(32).unwrap(), 2);
        assert_eq!(p.ms_scales(11).unwrap(), 1);
        assert!(p.ms_scales(10).is_err());
        let w = p.ms_effective_weights(4);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ms_ssim_properties() {
        let p = SsimParams::default();
        let a = texture(Shape::new(1, 3, 96, 96), 4);
        assert!((ms_ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-12);
        let b = add_noise(&a, 0.1, 2);
        assert_eq!(ms_ssim(&a, &b, &p).unwrap(), ms_ssim(&b, &a, &p).unwrap());
        let single = SsimParams {
            max_scales: Some(1),
            ..SsimParams::default()
        };
        assert!((ms_ssim(&a, &b, &single).unwrap() - ssim(&a, &b, &p).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ms_ssim_decreases_with_noise() {
        let p = SsimParams::default();
        let a = texture(Shape::new(1, 3, 96, 96), 7);
        let mut last = 1.0;
        for amp in [0.02, 0.05, 0.1, 0.2, 0.4] {
            let v = ms_ssim(&a, &add_noise(&a, amp, 11), &p).unwrap();
            assert!(v < last, "amp {amp}: {v} !< {last}");
            last = v;
        }
    }

    fn direct_generator_loss(real: &[f64], fake: &[f64]) -> f64 {
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mr = real.iter().sum::<f64>() / real.len() as f64;
        let mf = fake.iter().sum::<f64>() / fake.len() as f64;
        let t1: f64 =
            real.iter().map(|r| (1.0 - sig(r - mf)).ln()).sum::<f64>() / real.len() as f64;
        let t2: f64 = fake.iter().map(|f| sig(f - mr).ln()).sum::<f64>() / fake.len() as f64;
        -t1 - t2
    }

    fn direct_discriminator_loss(real: &[f64], fake: &[f64]) -> f64 {
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let mr = real.iter().sum::<f64>() / real.len() as f64;
        let mf = fake.iter().sum::<f64>() / fake.len() as f64;
        let t1: f64 = real.iter().map(|r| sig(r - mf).ln()).sum::<f64>() / real.len() as f64;
        let t2: f64 =
            fake.iter().map(|f| (1.0 - sig(f - mr)).ln()).sum::<f64>() / fake.len() as f64;
        -t1 - t2
    }

    #[test]
    fn ragan_fixed_points() {
        let s = [0.3, 0.3, 0.3];
        let two_ln2 = 2.0 * std::f64::consts::LN_2;
        assert!((ragan_generator_loss(&s, &s).unwrap() - two_ln2).abs() < 1e-12);
        assert!((ragan_discriminator_loss(&s, &s).unwrap() - two_ln2).abs() < 1e-12);
        assert!(ragan_generator_loss(&[0.0, 0.1], &[20.0, 20.1]).unwrap() < 1e-6);
        assert!(ragan_discriminator_loss(&[20.0, 20.1], &[0.0, 0.1]).unwrap() < 1e-6);
        assert!(ragan_generator_loss(&[], &[1.0]).is_err());
        assert!(ragan_discriminator_loss(&[1.0], &[]).is_err());
    }

    #[test]
    fn ragan_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let real: Vec<f64> = (0..rng.random_range(1..6))
                .map(|_| rng.random_range(-3.0..3.0))
                .collect();
            let fake: Vec<f64> = (0..rng.random_range(1..6))
                .map(|_| rng.random_range(-3.0..3.0))
                .collect();
            let g = ragan_generator_loss(&real, &fake).unwrap();
            let d = ragan_discriminator_loss(&real, &fake).unwrap();
            assert!((g - direct_generator_loss(&real, &fake)).abs() < 1e-12);
            assert!((d - direct_discriminator_loss(&real, &fake)).abs() < 1e-12);
            assert!((d - ragan_generator_loss(&fake, &real).unwrap()).abs() < 1e-14);
            assert!(g >= 0.0 && d >= 0.0);
        }
    }

    #[test]
    fn ragan_gradients_match_finite_differences() {
        let real = [0.4, -1.2, 2.0];
        let fake = [0.1, 0.9];
        for (loss, grad) in [
            (
                ragan_generator_loss as fn(&[f64], &[f64]) -> Result<f64>,
                ragan_generator_grad as fn(&[f64], &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)>,
            ),
            (ragan_discriminator_loss, ragan_discriminator_grad),
        ] {
            let (_, dr, df) = grad(&real, &fake).unwrap();
            let h = 1e-6;
            for i in 0..real.len() {
                let mut p = real;
                let mut m = real;
                p[i] += h;
                m[i] -= h;
                let fd = (loss(&p, &fake).unwrap() - loss(&m, &fake).unwrap()) / (2.0 * h);
                assert!((fd - dr[i]).abs() < 1e-8);
            }
            for j in 0..fake.len() {
                let mut p = fake;
                let mut m = fake;
                p[j] += h;
                m[j] -= h;
                let fd = (loss(&real, &p).unwrap() - loss(&real, &m).unwrap()) / (2.0 * h);
                assert!((fd - df[j]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn combined_loss_cases() {
        let p = SsimParams::default();
        let a = texture(Shape::new(2, 3, 16, 16), 3);
        let s = [0.5, 0.5];
        let c = combined_generator_loss(&a, &a, &s, &s, LossWeights::default(), &p).unwrap();
        assert!(
            (c.total - 5e-3 * 2.0 * std::f64::consts::LN_2).abs() < 1e-12,
            "{c:?}"
        );
        let b = add_noise(&a, 0.3, 4);
        let zero = LossWeights {
            alpha: 0.0,
            beta: 0.0,
        };
        let c0 = combined_generator_loss(&b, &a, &[0.1, 2.0], &[-1.0], zero, &p).unwrap();
        assert_eq!(c0.total, 1.0 - ssim(&b, &a, &p).unwrap());
        let w = LossWeights::default();
        let (real, fake) = ([0.2, 1.4], [-0.3, 0.8]);
        let cw = combined_generator_loss(&b, &a, &real, &fake, w, &p).unwrap();
        let want = (1.0 - ssim(&b, &a, &p).unwrap())
            + w.alpha * l1_loss(&b, &a).unwrap()
            + w.beta * direct_generator_loss(&real, &fake);
        assert!((cw.total - want).abs() < 1e-12);
        assert!(LossWeights {
            alpha: -1.0,
            beta: 0.0
        }
        .validate()
        .is_err());
    }

    fn fd_check(loss: impl Fn(&Tensor4<f64>) -> f64, analytic: &Tensor4<f64>, x: &Tensor4<f64>) {
        let h = 1e-5;
        let scale = analytic.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..x.len() {
            let mut p = x.clone();
            let mut m = x.clone();
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            let a = analytic.data()[i];
            let rel = (fd - a).abs() / a.abs().max(fd.abs()).max(scale).max(1e-9);
            assert!(rel < 1e-5, "element {i}: analytic {a} vs numeric {fd}");
        }
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let p = SsimParams::default();
        let a = texture(Shape::new(1, 2, 14, 13), 12);
        let b = add_noise(&a, 0.2, 13);
        let (da, db) = ssim_backward(&a, &b, &p, 1.0).unwrap();
        fd_check(|x| ssim(x, &b, &p).unwrap(), &da, &a);
        fd_check(|x| ssim(&a, x, &p).unwrap(), &db, &b);
    }

    #[test]
    fn ms_ssim_gradient_matches_finite_differences() {
        let p = SsimParams::default();
        let a = texture(Shape::new(1, 1, 25, 23), 14);
        let b = add_noise(&a, 0.15, 15);
        assert_eq!(p.ms_scales(23).unwrap(), 2);
        let (da, db) = ms_ssim_backward(&a, &b, &p, 1.0).unwrap();
        fd_check(|x| ms_ssim(x, &b, &p).unwrap(), &da, &a);
        fd_check(|x| ms_ssim(&a, x, &p).unwrap(), &db, &b);
    }

    #[test]
    fn pixel_losses_gradients() {
        let a = random(Shape::new(1, 2, 3, 3), 16, -1.0, 1.0);
        let b = random(a.shape(), 17, -1.0, 1.0);
        fd_check(
            |x| l1_loss(x, &b).unwrap(),
            &l1_backward(&a, &b, 1.0).unwrap(),
            &a,
        );
        let g = mse_backward(&a, &b, 1.0).unwrap();
        fd_check(|x| mse_loss(x, &b).unwrap(), &g, &a);
        // closed form 2 (x - t) / N
        for i in 0..a.len() {
            assert!(
                (g.data()[i] - 2.0 * (a.data()[i] - b.data()[i]) / a.len() as f64).abs() < 1e-15
            );
        }
    }
}
