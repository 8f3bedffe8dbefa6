//! Reconstruction quality: PSNR, SSIM and per-pixel spectral correlation.
//! Cube scores are the mean of per-band scores; data is assumed in `[0, 1]`.

use crate::error::{Error, Result};
use crate::imaging::HsiCube;

/// Reported in place of `+inf` for identical bands.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

#[derive(Clone, Debug, PartialEq)]
pub struct PsnrReport {
    pub per_band: Vec<f64>,
    pub mean: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn band_psnr(reference: &[f32], estimate: &[f32]) -> f64 {
    let mse = reference
        .iter()
        .zip(estimate)
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(reference: &HsiCube, estimate: &HsiCube) -> Result<PsnrReport> {
    reference.same_shape(estimate)?;
    let per_band: Vec<f64> = (0..reference.bands())
        .map(|b| band_psnr(reference.band(b), estimate.band(b)))
        .collect();
    let mean = mean(&per_band);
    Ok(PsnrReport { per_band, mean })
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / total).collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    w
}

/// Mean SSIM over every window position fully inside a `height x width` band.
pub fn ssim(reference: &[f32], estimate: &[f32], height: usize, width: usize) -> Result<f64> {
    if reference.len() != height * width || estimate.len() != height * width {
        return Err(Error::shape(format!(
            "bands must hold {height}x{width} values, got {} and {}",
            reference.len(),
            estimate.len()
        )));
    }
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "band {height}x{width} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let window = gaussian_window();
    let (oh, ow) = (height - SSIM_WINDOW + 1, width - SSIM_WINDOW + 1);
    let mut total = 0.0f64;
    for r in 0..oh {
        for c in 0..ow {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
            for i in 0..SSIM_WINDOW {
                let row = (r + i) * width + c;
                for j in 0..SSIM_WINDOW {
                    let g = window[i * SSIM_WINDOW + j];
                    let x = reference[row + j] as f64;
                    let y = estimate[row + j] as f64;
                    mx += g * x;
                    my += g * y;
                    sxx += g * x * x;
                    syy += g * y * y;
                    sxy += g * (x * y);
                }
            }
            let vx = sxx - mx * mx;
            let vy = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * (mx * my) + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
        }
    }
    Ok(total / (oh * ow) as f64)
}

/// Pearson correlation of the two spectra at `(row, col)`.
pub fn spectral_correlation(reference: &HsiCube, estimate: &HsiCube, row: usize, col: usize) -> Result<f64> {
    reference.same_shape(estimate)?;
    if row >= reference.height() || col >= reference.width() {
        return Err(Error::invalid(format!(
            "pixel ({row}, {col}) outside a {}x{} cube",
            reference.height(),
            reference.width()
        )));
    }
    if reference.bands() < 2 {
        return Err(Error::invalid("spectral correlation needs at least two bands"));
    }
    let a: Vec<f64> = reference.spectrum(row, col).iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = estimate.spectrum(row, col).iter().map(|&v| v as f64).collect();
    pearson(&a, &b).ok_or(Error::ConstantSpectrum(row, col))
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralEntry {
    pub row: usize,
    pub col: usize,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub band_psnr: Vec<f64>,
    pub band_ssim: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub spectral: Vec<SpectralEntry>,
}

impl MetricsReport {
    /// PSNR and SSIM for every band, plus correlations at `pixels`.
    pub fn evaluate(reference: &HsiCube, estimate: &HsiCube, pixels: &[(usize, usize)]) -> Result<Self> {
        let p = psnr(reference, estimate)?;
        let (h, w) = (reference.height(), reference.width());
        let band_ssim = (0..reference.bands())
            .map(|b| ssim(reference.band(b), estimate.band(b), h, w))
            .collect::<Result<Vec<_>>>()?;
        let spectral = pixels
            .iter()
            .map(|&(row, col)| {
                spectral_correlation(reference, estimate, row, col)
                    .map(|coefficient| SpectralEntry { row, col, coefficient })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricsReport {
            mean_ssim: mean(&band_ssim),
            band_psnr: p.per_band,
            band_ssim,
            mean_psnr: p.mean,
            spectral,
        })
    }
}
