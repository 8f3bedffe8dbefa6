//! File formats.
//!
//! The `HSC1` container is: the magic bytes `HSC1`, then little-endian `u32`
//! height, width and band count, then `H * W * C` little-endian `f32` values,
//! band-major with row-major planes. Wavelengths, when present, live in a
//! sidecar next to the cube (`<file>.wavelengths.csv`, one nm value per line).
//! Masks and snapshots are stored as single-band cubes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{CodedMask, HsiCube, Snapshot, System};
use crate::metrics::MetricsReport;
use crate::recon::CurvePoint;

pub const MAGIC: &[u8; 4] = b"HSC1";
const HEADER_LEN: usize = 16;

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

pub fn encode_cube(cube: &HsiCube) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * cube.values().len());
    out.extend_from_slice(MAGIC);
    for d in [cube.height(), cube.width(), cube.bands()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in cube.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses `HSC1` bytes; `path` only labels errors.
pub fn decode_cube(bytes: &[u8], path: &Path) -> Result<HsiCube> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { path: path.to_path_buf() });
    }
    if bytes.len() < HEADER_LEN {
        return Err(format_err(path, format!("header truncated at {} bytes", bytes.len())));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let expected = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| format_err(path, "dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!("{h}x{w}x{c} cube needs {expected} bytes, file has {}", bytes.len()),
        ));
    }
    let values: Vec<f32> = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(format_err(path, format!("non-finite value at index {i}")));
    }
    HsiCube::new(h, w, c, values).map_err(|e| format_err(path, e.to_string()))
}

pub fn wavelength_sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".wavelengths.csv");
    PathBuf::from(name)
}

pub fn read_wavelengths(path: &Path) -> Result<Vec<f32>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f32>().map_err(|e| format_err(path, format!("bad wavelength {l:?}: {e}"))))
        .collect()
}

pub fn write_wavelengths(path: &Path, wavelengths: &[f32]) -> Result<()> {
    let text: String = wavelengths.iter().map(|w| format!("{w}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a cube, attaching sidecar wavelengths when the sidecar exists.
pub fn read_cube(path: &Path) -> Result<HsiCube> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let cube = decode_cube(&bytes, path)?;
    let sidecar = wavelength_sidecar(path);
    if sidecar.exists() {
        let wl = read_wavelengths(&sidecar)?;
        return cube.with_wavelengths(wl).map_err(|e| format_err(&sidecar, e.to_string()));
    }
    Ok(cube)
}

/// Writes a cube, plus its wavelength sidecar when it carries wavelengths.
pub fn write_cube(path: &Path, cube: &HsiCube) -> Result<()> {
    fs::write(path, encode_cube(cube)).map_err(|e| Error::io(path, e))?;
    if let Some(wl) = cube.wavelengths() {
        write_wavelengths(&wavelength_sidecar(path), wl)?;
    }
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<CodedMask> {
    let cube = read_cube(path)?;
    if cube.bands() != 1 {
        return Err(format_err(path, format!("a mask has one band, found {}", cube.bands())));
    }
    let (h, w) = (cube.height(), cube.width());
    CodedMask::new(h, w, cube.into_values()).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &CodedMask) -> Result<()> {
    write_cube(path, &HsiCube::new(mask.height(), mask.width(), 1, mask.values().to_vec())?)
}

/// The system is not stored in the file; the caller supplies it.
pub fn read_snapshot(path: &Path, system: System) -> Result<Snapshot> {
    let cube = read_cube(path)?;
    if cube.bands() != 1 {
        return Err(format_err(path, format!("a measurement has one band, found {}", cube.bands())));
    }
    let (h, w) = (cube.height(), cube.width());
    Snapshot::new(system, h, w, cube.into_values())
}

pub fn write_snapshot(path: &Path, snapshot: &Snapshot) -> Result<()> {
    write_cube(
        path,
        &HsiCube::new(snapshot.height(), snapshot.width(), 1, snapshot.values().to_vec())?,
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

/// `iter,loss,psnr`; the PSNR column is empty without ground truth.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut s = String::from("iter,loss,psnr\n");
    for p in curve {
        match p.psnr {
            Some(db) => s.push_str(&format!("{},{},{}\n", p.iteration, p.loss, db)),
            None => s.push_str(&format!("{},{},\n", p.iteration, p.loss)),
        }
    }
    s
}

pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    write_text(path, &curve_csv(curve))
}

/// `band,psnr,ssim` per band, then a `mean` row.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut s = String::from("band,psnr,ssim\n");
    for (b, (p, q)) in report.band_psnr.iter().zip(&report.band_ssim).enumerate() {
        s.push_str(&format!("{b},{p},{q}\n"));
    }
    s.push_str(&format!("mean,{},{}\n", report.mean_psnr, report.mean_ssim));
    s
}

pub fn write_report(path: &Path, report: &MetricsReport) -> Result<()> {
    write_text(path, &report_csv(report))
}

/// Piecewise-linear visible-spectrum tint (after Bruton), black outside
/// 380-780 nm.
pub fn wavelength_to_rgb(nm: f32) -> [f32; 3] {
    match nm {
        x if (380.0..440.0).contains(&x) => [(440.0 - x) / 60.0, 0.0, 1.0],
        x if (440.0..490.0).contains(&x) => [0.0, (x - 440.0) / 50.0, 1.0],
        x if (490.0..510.0).contains(&x) => [0.0, 1.0, (510.0 - x) / 20.0],
        x if (510.0..580.0).contains(&x) => [(x - 510.0) / 70.0, 1.0, 0.0],
        x if (580.0..645.0).contains(&x) => [1.0, (645.0 - x) / 65.0, 0.0],
        x if (645.0..=780.0).contains(&x) => [1.0, 0.0, 0.0],
        _ => [0.0; 3],
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header()
        .and_then(|mut w| w.write_image_data(data))
        .map_err(|e| format_err(path, e.to_string()))
}

/// 8-bit grayscale, `[0, 1]` mapped linearly onto `[0, 255]`.
pub fn band_to_gray(cube: &HsiCube, band: usize) -> Result<Vec<u8>> {
    if band >= cube.bands() {
        return Err(Error::invalid(format!("band {band} out of range (cube has {})", cube.bands())));
    }
    Ok(cube.band(band).iter().map(|&v| quantize(v)).collect())
}

/// Each band tinted by its wavelength, summed, and normalized by the brightest channel.
pub fn cube_to_rgb(cube: &HsiCube, wavelengths: &[f32]) -> Result<Vec<u8>> {
    if wavelengths.len() != cube.bands() {
        return Err(Error::invalid(format!(
            "{} wavelengths for {} bands",
            wavelengths.len(),
            cube.bands()
        )));
    }
    let n = cube.height() * cube.width();
    let mut acc = vec![0.0f32; 3 * n];
    for (b, &nm) in wavelengths.iter().enumerate() {
        let tint = wavelength_to_rgb(nm);
        for (px, &v) in acc.chunks_exact_mut(3).zip(cube.band(b)) {
            for k in 0..3 {
                px[k] += tint[k] * v;
            }
        }
    }
    let peak = acc.iter().copied().fold(0.0f32, f32::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    Ok(acc.iter().map(|&v| quantize(v * scale)).collect())
}

pub fn export_band_png(cube: &HsiCube, band: usize, path: &Path) -> Result<()> {
    let data = band_to_gray(cube, band)?;
    write_png(path, cube.width(), cube.height(), png::ColorType::Grayscale, &data)
}

pub fn export_rgb_png(cube: &HsiCube, wavelengths: &[f32], path: &Path) -> Result<()> {
    let data = cube_to_rgb(cube, wavelengths)?;
    write_png(path, cube.width(), cube.height(), png::ColorType::Rgb, &data)
}
