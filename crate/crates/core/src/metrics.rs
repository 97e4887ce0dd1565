//! Image quality metrics. Images are linear RGB in `[0, 1]`, so the PSNR
//! peak is 1.

use crate::error::{Error, Result};
use crate::render::{render_images, CameraSet, Image, RadianceModel};

pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch(a.dims(), b.dims()));
    }
    Ok(())
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.data.len().max(1) as f64)
}

/// PSNR in dB for an MSE at peak 1. Zero error maps to `+inf`.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Mean SSIM over all 8x8 windows (stride 1) of the channel-mean grayscale
/// images, uniform window weights.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let gray = |img: &Image| -> Vec<f64> {
        img.data.chunks_exact(3).map(|p| (p[0] + p[1] + p[2]) / 3.0).collect()
    };
    let (ga, gb) = (gray(a), gray(b));
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for y in y0..y0 + SSIM_WINDOW {
                for x in x0..x0 + SSIM_WINDOW {
                    let (va, vb) = (ga[y * w + x], gb[y * w + x]);
                    sa += va;
                    sb += vb;
                    saa += va * va;
                    sbb += vb * vb;
                    sab += va * vb;
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let var_a = (saa / n - ma * ma).max(0.0);
            let var_b = (sbb / n - mb * mb).max(0.0);
            let cov = sab / n - ma * mb;
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewQuality {
    pub psnr_db: f64,
    pub ssim: f64,
}

/// PSNR and SSIM over a set of views.
///
/// `psnr_db` is computed from the MSE pooled over all views; `ssim` is the
/// mean of per-view SSIM.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_view: Vec<ViewQuality>,
}

pub fn quality(renders: &[Image], truths: &[Image]) -> Result<QualityReport> {
    if renders.is_empty() || renders.len() != truths.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} renders vs {} ground-truth images",
            renders.len(),
            truths.len()
        )));
    }
    let mut per_view = Vec::with_capacity(renders.len());
    let mut sq = 0.0;
    let mut count = 0usize;
    for (r, t) in renders.iter().zip(truths) {
        let m = mse(r, t)?;
        sq += m * r.data.len() as f64;
        count += r.data.len();
        let s = if r.width >= SSIM_WINDOW && r.height >= SSIM_WINDOW {
            ssim(r, t)?
        } else {
            f64::NAN
        };
        per_view.push(ViewQuality {
            psnr_db: psnr_from_mse(m),
            ssim: s,
        });
    }
    Ok(QualityReport {
        psnr_db: psnr_from_mse(sq / count as f64),
        ssim: per_view.iter().map(|v| v.ssim).sum::<f64>() / per_view.len() as f64,
        per_view,
    })
}

/// Renders every camera in `cameras` and scores it against the stored images.
pub fn evaluate(model: &RadianceModel, cameras: &CameraSet) -> Result<QualityReport> {
    quality(&render_images(model, cameras), &cameras.images)
}
