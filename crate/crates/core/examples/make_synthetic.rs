//! Writes a seeded piecewise-smooth cube (with wavelength sidecar).
//!
//! ```text
//! cargo run -p cassi-core --example make_synthetic -- OUT.hsc [HEIGHT WIDTH BANDS SEED]
//! ```
//! Wavelengths are spread evenly over 450-650 nm.

use std::path::PathBuf;
use std::process::ExitCode;

use cassi_core::io::write_cube;
use cassi_core::synth::piecewise_smooth_cube;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(out) = args.first().map(PathBuf::from) else {
        eprintln!("usage: make_synthetic OUT.hsc [HEIGHT WIDTH BANDS SEED]");
        return ExitCode::FAILURE;
    };
    let num = |i: usize, default: u64| args.get(i).map_or(Ok(default), |s| s.parse::<u64>());
    let (Ok(h), Ok(w), Ok(c), Ok(seed)) = (num(1, 32), num(2, 32), num(3, 4), num(4, 2024)) else {
        eprintln!("HEIGHT, WIDTH, BANDS and SEED must be non-negative integers");
        return ExitCode::FAILURE;
    };
    let bands = c as usize;
    let wavelengths = (0..bands)
        .map(|i| if bands > 1 { 450.0 + 200.0 * i as f32 / (bands - 1) as f32 } else { 550.0 })
        .collect();
    let cube = piecewise_smooth_cube(h as usize, w as usize, bands, seed)
        .with_wavelengths(wavelengths)
        .expect("evenly spaced wavelengths");
    if let Err(e) = write_cube(&out, &cube) {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}
