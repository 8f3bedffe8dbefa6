//! `cassi`: simulate snapshot measurements, reconstruct cubes, score and
//! visualize them. Every subcommand exits 0 on success and prints a single
//! `error:` line to stderr otherwise.

use std::path::PathBuf;
use std::process::ExitCode;

use cassi_core::imaging::{generate_mask, simulate, DispersionModel, MaskKind, SensingOperator, System};
use cassi_core::io;
use cassi_core::metrics::MetricsReport;
use cassi_core::network::{ArchMode, InputMode};
use cassi_core::par::ExecMode;
use cassi_core::recon::{gaptv_reconstruct, reconstruct, GapTvConfig, RunConfig};
use cassi_core::{Error, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "cassi", version, about = "Coded-aperture snapshot spectral imaging toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a snapshot measurement from a cube and a mask.
    Simulate(SimulateArgs),
    /// Fit the unsupervised generator to a measurement.
    Reconstruct(ReconstructArgs),
    /// Classical GAP-TV reconstruction.
    BaselineGaptv(GapTvArgs),
    /// Per-band PSNR/SSIM of an estimate against a reference.
    Metrics(MetricsArgs),
    /// Write a band as grayscale PNG, or the whole cube as tinted RGB.
    ExportPng(ExportArgs),
    /// Draw a seeded random coded aperture.
    MakeMask(MaskArgs),
}

#[derive(Args, Debug)]
struct OpticsArgs {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    system: System,
    /// Dispersion in pixels per band.
    #[arg(long, default_value_t = 1)]
    shift: usize,
}

impl OpticsArgs {
    fn operator(&self, bands: usize) -> Result<SensingOperator> {
        if bands == 0 {
            return Err(Error::InvalidArgument("--bands must be at least 1".into()));
        }
        let mask = io::read_mask(&self.mask)?;
        SensingOperator::new(self.system, &mask, DispersionModel::new(self.shift), bands)
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    cube: PathBuf,
    #[command(flatten)]
    optics: OpticsArgs,
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    meas: PathBuf,
    #[command(flatten)]
    optics: OpticsArgs,
    #[arg(long)]
    bands: usize,
    #[arg(long, default_value_t = 2500)]
    iters: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "z_and_y")]
    input_mode: InputMode,
    #[arg(long, default_value = "full")]
    arch_mode: ArchMode,
    #[arg(long, default_value_t = 64)]
    feature_width: usize,
    #[arg(long, default_value_t = 32)]
    z_channels: usize,
    #[arg(long, default_value_t = 100)]
    log_every: usize,
    /// Run all kernels on the calling thread.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    out: PathBuf,
    /// Loss curve CSV (`iter,loss,psnr`).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Ground-truth cube, enables the PSNR column.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GapTvArgs {
    #[arg(long)]
    meas: PathBuf,
    #[command(flatten)]
    optics: OpticsArgs,
    #[arg(long)]
    bands: usize,
    #[arg(long, default_value_t = 50)]
    iters: usize,
    /// Defaults to a tenth of the measurement peak.
    #[arg(long)]
    tv_weight: Option<f32>,
    #[arg(long, default_value_t = 5)]
    tv_inner_iters: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Pixels (`row,col`) whose spectral correlation is printed.
    #[arg(long = "pixel", value_parser = parse_pixel)]
    pixels: Vec<(usize, usize)>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long, conflicts_with = "rgb", required_unless_present = "rgb")]
    band: Option<usize>,
    /// Uses the cube's wavelength sidecar.
    #[arg(long)]
    rgb: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct MaskArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value = "binary")]
    kind: MaskKind,
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_pixel(s: &str) -> std::result::Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected row,col, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(r)?, parse(c)?))
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => {
            let cube = io::read_cube(&a.cube)?;
            let op = a.optics.operator(cube.bands())?;
            let y = simulate(&cube, &op, a.noise_sigma, a.seed)?;
            io::write_snapshot(&a.out, &y)?;
            println!("wrote {}x{} {} measurement to {}", y.height(), y.width(), op.system(), a.out.display());
        }
        Command::Reconstruct(a) => {
            let run = RunConfig {
                iterations: a.iters,
                lr: a.lr,
                seed: a.seed,
                log_every: a.log_every,
                feature_width: a.feature_width,
                z_channels: a.z_channels,
                input_mode: a.input_mode,
                arch_mode: a.arch_mode,
                exec: if a.sequential { ExecMode::Sequential } else { ExecMode::Parallel },
            };
            run.validate()?;
            let op = a.optics.operator(a.bands)?;
            run.network_config(&op).validate()?;
            let y = io::read_snapshot(&a.meas, op.system())?;
            let gt = a.gt.as_deref().map(io::read_cube).transpose()?;
            let result = reconstruct(&y, &op, &run, gt.as_ref())?;
            io::write_cube(&a.out, &result.cube)?;
            if let Some(log) = &a.log {
                io::write_curve(log, &result.curve)?;
            }
            let last = result.curve.last().expect("curve has a final row");
            match last.psnr {
                Some(db) => println!("final loss {:.6} psnr {db:.3} dB", last.loss),
                None => println!("final loss {:.6}", last.loss),
            }
            println!("params sha256 {}", result.params_digest);
        }
        Command::BaselineGaptv(a) => {
            let op = a.optics.operator(a.bands)?;
            let y = io::read_snapshot(&a.meas, op.system())?;
            let config = GapTvConfig { iterations: a.iters, tv_weight: a.tv_weight, tv_inner_iters: a.tv_inner_iters };
            let cube = gaptv_reconstruct(&y, &op, &config)?;
            io::write_cube(&a.out, &cube)?;
            println!("wrote {}x{}x{} estimate to {}", cube.height(), cube.width(), cube.bands(), a.out.display());
        }
        Command::Metrics(a) => {
            let reference = io::read_cube(&a.reference)?;
            let estimate = io::read_cube(&a.est)?;
            let report = MetricsReport::evaluate(&reference, &estimate, &a.pixels)?;
            io::write_report(&a.report, &report)?;
            println!("mean psnr {:.3} dB, mean ssim {:.4}", report.mean_psnr, report.mean_ssim);
            for e in &report.spectral {
                println!("correlation at ({}, {}): {:.6}", e.row, e.col, e.coefficient);
            }
        }
        Command::ExportPng(a) => {
            let cube = io::read_cube(&a.cube)?;
            match a.band {
                Some(b) => io::export_band_png(&cube, b, &a.out)?,
                None => {
                    let wl = cube.wavelengths().ok_or_else(|| {
                        Error::InvalidArgument(format!(
                            "--rgb needs wavelengths; {} not found",
                            io::wavelength_sidecar(&a.cube).display()
                        ))
                    })?;
                    io::export_rgb_png(&cube, wl, &a.out)?;
                }
            }
        }
        Command::MakeMask(a) => {
            let mask = generate_mask(a.seed, a.height, a.width, a.kind, a.density)?;
            io::write_mask(&a.out, &mask)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("{line}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
