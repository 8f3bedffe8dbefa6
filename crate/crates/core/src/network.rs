//! The conditional generator that maps a fixed random code (optionally
//! concatenated with the normalized measurement) to a hyperspectral cube.
//!
//! ```text
//! input ─ 1x1 stem ─ LReLU ─ BRB ─ BRB ─ BRB ─ SSAM ─ 1x1 tail ─ sigmoid ─ cube
//! ```
//!
//! A bottleneck residual block (BRB) adds a 1x1 skip path to a
//! `1x1 (F→F/2) → LReLU → 3x3 → LReLU → 1x1 (F/2→F)` main path.
//!
//! The spatial-spectral attention module (SSAM) builds three scales with
//! stride-2 3x3 convolutions, then refines top-down. At scale `i` (2, then 1)
//! with coarser features `U = up2x(next)`:
//!
//! ```text
//! A_i  = sigmoid(conv3x3(U))
//! I'_i = A_i ⊙ conv3x3(I_i)
//! Î_i  = LReLU(conv3x3(concat(I'_i, U)))
//! ```
//!
//! where `next` is `I_3` for scale 2 and the refined `Î_2` for scale 1.
//!
//! Parameter count for `n_in` input channels, width `F` and `C` bands
//! (3x3 kernels count `9·in·out` weights, every conv carries `out` biases):
//!
//! | block                | weights                         | biases       |
//! |----------------------|---------------------------------|--------------|
//! | stem 1x1             | `n_in·F`                        | `F`          |
//! | each BRB (x3)        | `F² + F²/2 + 9F²/4 + F²/2`      | `F + F/2 + F/2 + F` |
//! | SSAM downsample (x2) | `9F²`                           | `F`          |
//! | SSAM per scale (x2)  | `9F² + 9F² + 18F²`              | `3F`         |
//! | tail 1x1             | `F·C`                           | `C`          |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{shift_back, DispersionModel, Snapshot, System};
use crate::tensor::{ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// Negative-side slope of every hidden activation.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Number of SSAM scales (the input scale plus two downsampled ones).
pub const SCALES: usize = 3;

/// Upper bound of the uniform random code.
pub const CODE_AMPLITUDE: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InputMode {
    ZOnly,
    YOnly,
    ZAndY,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ArchMode {
    BrbOnly,
    SsamOnly,
    Full,
}

impl InputMode {
    pub const ALL: [InputMode; 3] = [InputMode::ZOnly, InputMode::YOnly, InputMode::ZAndY];

    pub fn name(self) -> &'static str {
        match self {
            InputMode::ZOnly => "z_only",
            InputMode::YOnly => "y_only",
            InputMode::ZAndY => "z_and_y",
        }
    }
}

impl ArchMode {
    pub const ALL: [ArchMode; 3] = [ArchMode::BrbOnly, ArchMode::SsamOnly, ArchMode::Full];

    pub fn name(self) -> &'static str {
        match self {
            ArchMode::BrbOnly => "brb_only",
            ArchMode::SsamOnly => "ssam_only",
            ArchMode::Full => "full",
        }
    }

    fn has_brb(self) -> bool {
        self != ArchMode::SsamOnly
    }

    fn has_ssam(self) -> bool {
        self != ArchMode::BrbOnly
    }
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InputMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown input mode `{s}` (z_only, y_only, z_and_y)")))
    }
}

impl std::str::FromStr for ArchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown arch mode `{s}` (brb_only, ssam_only, full)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkConfig {
    pub bands: usize,
    pub feature_width: usize,
    pub z_channels: usize,
    pub input_mode: InputMode,
    pub arch_mode: ArchMode,
    pub system: System,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(bands: usize, system: System) -> Self {
        NetworkConfig {
            bands,
            feature_width: 64,
            z_channels: 32,
            input_mode: InputMode::ZAndY,
            arch_mode: ArchMode::Full,
            system,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 {
            return Err(Error::invalid("bands must be positive"));
        }
        if self.feature_width < 2 || !self.feature_width.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "feature width must be a positive even number, got {}",
                self.feature_width
            )));
        }
        if self.z_channels == 0 && self.input_mode != InputMode::YOnly {
            return Err(Error::invalid("random code needs at least one channel"));
        }
        Ok(())
    }

    /// Channels of the measurement-derived input maps.
    pub fn measurement_channels(&self) -> usize {
        match self.system {
            System::Ss => 1,
            System::Sd => self.bands,
        }
    }

    pub fn input_channels(&self) -> usize {
        match self.input_mode {
            InputMode::ZOnly => self.z_channels,
            InputMode::YOnly => self.measurement_channels(),
            InputMode::ZAndY => self.z_channels + self.measurement_channels(),
        }
    }
}

/// Ids of one convolution's weight and bias.
#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BrbLayer {
    pub skip: ConvLayer,
    pub reduce: ConvLayer,
    pub mid: ConvLayer,
    pub expand: ConvLayer,
}

/// Index 0 holds scale 1 (full resolution), index 1 scale 2.
#[derive(Clone, Copy, Debug)]
pub struct SsamLayer {
    pub down: [ConvLayer; 2],
    pub attention: [ConvLayer; 2],
    pub feature: [ConvLayer; 2],
    pub fuse: [ConvLayer; 2],
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub stem: ConvLayer,
    pub brbs: Vec<BrbLayer>,
    pub ssam: Option<SsamLayer>,
    pub tail: ConvLayer,
}

struct Builder {
    params: ParamStore<f32>,
    rng: ChaCha8Rng,
}

impl Builder {
    fn conv(&mut self, name: &str, inc: usize, outc: usize, k: usize, stride: usize) -> Result<ConvLayer> {
        let bound = 1.0 / ((inc * k * k) as f32).sqrt();
        let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| self.rng.random_range(-bound..bound)).collect() };
        let w = draw(outc * inc * k * k);
        let b = draw(outc);
        let weight = self.params.register(format!("{name}.weight"), Tensor::new(vec![outc, inc, k, k], w)?)?;
        let bias = self.params.register(format!("{name}.bias"), Tensor::new(vec![outc], b)?)?;
        Ok(ConvLayer { weight, bias, stride })
    }
}

/// Generator weights plus the layer map used to evaluate them.
#[derive(Clone, Debug)]
pub struct Network {
    config: NetworkConfig,
    layout: Layout,
    params: ParamStore<f32>,
}

/// Weights and biases drawn uniformly from `+-1/sqrt(fan_in)`.
pub fn build_network(config: NetworkConfig) -> Result<Network> {
    config.validate()?;
    let f = config.feature_width;
    let half = f / 2;
    let mut b = Builder { params: ParamStore::new(), rng: ChaCha8Rng::seed_from_u64(config.seed) };

    let stem = b.conv("stem", config.input_channels(), f, 1, 1)?;
    let mut brbs = Vec::new();
    if config.arch_mode.has_brb() {
        for i in 1..=3 {
            brbs.push(BrbLayer {
                skip: b.conv(&format!("brb{i}.skip"), f, f, 1, 1)?,
                reduce: b.conv(&format!("brb{i}.reduce"), f, half, 1, 1)?,
                mid: b.conv(&format!("brb{i}.mid"), half, half, 3, 1)?,
                expand: b.conv(&format!("brb{i}.expand"), half, f, 1, 1)?,
            });
        }
    }
    let ssam = if config.arch_mode.has_ssam() {
        let down = [b.conv("ssam.down1", f, f, 3, 2)?, b.conv("ssam.down2", f, f, 3, 2)?];
        let mut per_scale = |kind: &str, inc: usize| -> Result<[ConvLayer; 2]> {
            Ok([b.conv(&format!("ssam.{kind}1"), inc, f, 3, 1)?, b.conv(&format!("ssam.{kind}2"), inc, f, 3, 1)?])
        };
        let attention = per_scale("attention", f)?;
        let feature = per_scale("feature", f)?;
        let fuse = per_scale("fuse", 2 * f)?;
        Some(SsamLayer { down, attention, feature, fuse })
    } else {
        None
    };
    let tail = b.conv("tail", f, config.bands, 1, 1)?;

    Ok(Network { config, layout: Layout { stem, brbs, ssam, tail }, params: b.params })
}

fn conv<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, layer: &ConvLayer) -> Result<Var> {
    tape.conv2d(x, layer.weight, layer.bias, layer.stride)
}

fn lrelu<T: Scalar>(tape: &mut Tape<'_, T>, x: Var) -> Result<Var> {
    tape.leaky_relu(x, T::from_f64(LEAKY_SLOPE).unwrap())
}

/// `skip(x) + expand(lrelu(mid(lrelu(reduce(x)))))`.
pub fn brb_forward<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, block: &BrbLayer) -> Result<Var> {
    let skip = conv(tape, x, &block.skip)?;
    let r = conv(tape, x, &block.reduce)?;
    let r = lrelu(tape, r)?;
    let m = conv(tape, r, &block.mid)?;
    let m = lrelu(tape, m)?;
    let e = conv(tape, m, &block.expand)?;
    tape.add(skip, e)
}

/// Refines `fine` using the coarser map `coarse`; returns the fused map.
fn attend<T: Scalar>(tape: &mut Tape<'_, T>, fine: Var, coarse: Var, ssam: &SsamLayer, scale: usize) -> Result<Var> {
    let up = tape.upsample2x(coarse)?;
    let a = conv(tape, up, &ssam.attention[scale])?;
    let a = tape.sigmoid(a)?;
    let feat = conv(tape, fine, &ssam.feature[scale])?;
    let gated = tape.hadamard(a, feat)?;
    let cat = tape.concat_channels(gated, up)?;
    let fused = conv(tape, cat, &ssam.fuse[scale])?;
    lrelu(tape, fused)
}

pub fn ssam_forward<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, ssam: &SsamLayer) -> Result<Var> {
    let (_, h, w) = tape.value(x).chw()?;
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::shape(format!("attention module needs sizes divisible by 4, got {h}x{w}")));
    }
    let i2 = conv(tape, x, &ssam.down[0])?;
    let i2 = lrelu(tape, i2)?;
    let i3 = conv(tape, i2, &ssam.down[1])?;
    let i3 = lrelu(tape, i3)?;
    let refined2 = attend(tape, i2, i3, ssam, 1)?;
    attend(tape, x, refined2, ssam, 0)
}

impl Network {
    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    /// Records the generator on `tape`, whose parameter store must be this
    /// network's store (in any precision). Returns the `(C, H, W)` cube node.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, input: Var) -> Result<Var> {
        let (c, _, _) = tape.value(input).chw()?;
        if c != self.config.input_channels() {
            return Err(Error::shape(format!(
                "network expects {} input channels, got {c}",
                self.config.input_channels()
            )));
        }
        let x = conv(tape, input, &self.layout.stem)?;
        let mut x = lrelu(tape, x)?;
        for block in &self.layout.brbs {
            x = brb_forward(tape, x, block)?;
        }
        if let Some(ssam) = &self.layout.ssam {
            x = ssam_forward(tape, x, ssam)?;
        }
        let out = conv(tape, x, &self.layout.tail)?;
        tape.sigmoid(out)
    }

    /// Forward-only evaluation on `params` (which must share this layout).
    pub fn evaluate<T: Scalar>(&self, params: &ParamStore<T>, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new(params);
        let x = tape.constant(input.clone())?;
        let out = self.forward(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }
}

/// The fixed latent code `Z`, i.i.d. uniform on `[0, 0.1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomCode {
    pub seed: u64,
    tensor: Tensor<f32>,
}

impl RandomCode {
    pub fn draw(seed: u64, channels: usize, height: usize, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..channels * height * width)
            .map(|_| rng.random::<f32>() * CODE_AMPLITUDE)
            .collect();
        RandomCode { seed, tensor: Tensor::from_chw(channels, height, width, data).unwrap() }
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }
}

/// Builds the network input from `Z` and/or the max-normalized measurement
/// maps (one channel for SS, `C` shift-back windows for SD).
pub fn make_conditional_input(
    z: &RandomCode,
    y: &Snapshot,
    config: &NetworkConfig,
    disp: DispersionModel,
) -> Result<Tensor<f32>> {
    if y.system() != config.system {
        return Err(Error::SystemMismatch { expected: config.system.name(), actual: y.system().name() });
    }
    let (_, zh, zw) = z.tensor.chw()?;
    let y_maps = || -> Result<Tensor<f32>> {
        let peak = y.max();
        if peak <= 0.0 {
            return Err(Error::ZeroMeasurement);
        }
        let maps = match y.system() {
            System::Ss => y.to_tensor::<f32>(),
            System::Sd => shift_back(y, config.bands, disp)?.to_tensor(),
        };
        let (_, h, w) = maps.chw()?;
        if (h, w) != (zh, zw) {
            return Err(Error::shape(format!("measurement maps are {h}x{w}, code is {zh}x{zw}")));
        }
        Ok(maps.map(|v| v / peak))
    };
    match config.input_mode {
        InputMode::ZOnly => Ok(z.tensor.clone()),
        InputMode::YOnly => y_maps(),
        InputMode::ZAndY => {
            let maps = y_maps()?;
            let mut data = z.tensor.data().to_vec();
            data.extend_from_slice(maps.data());
            Tensor::from_chw(z.tensor.channels() + maps.channels(), zh, zw, data)
        }
    }
}
