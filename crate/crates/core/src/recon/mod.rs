//! Unsupervised reconstruction: fit the generator's weights so that its
//! output, pushed through the measurement operator, matches the snapshot in
//! the l1 sense. The classical GAP-TV baseline lives in [`gaptv`].

mod gaptv;

use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::imaging::{HsiCube, SensingOperator, Snapshot};
use crate::metrics::psnr;
use crate::network::{
    build_network, make_conditional_input, ArchMode, InputMode, Network, NetworkConfig, RandomCode,
};
use crate::par::ExecMode;
use crate::tensor::{AdamConfig, AdamState, GradientSet, ParamStore, Scalar, Tape, Tensor};

pub use gaptv::{gaptv_reconstruct, normalized_adjoint, tv_denoise, GapTvConfig};

/// Stream offset so the random code and the weight init never share a generator state.
const CODE_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    pub log_every: usize,
    pub feature_width: usize,
    pub z_channels: usize,
    pub input_mode: InputMode,
    pub arch_mode: ArchMode,
    pub exec: ExecMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            iterations: 2500,
            lr: 0.01,
            seed: 0,
            log_every: 100,
            feature_width: 64,
            z_channels: 32,
            input_mode: InputMode::ZAndY,
            arch_mode: ArchMode::Full,
            exec: ExecMode::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log interval must be at least 1"));
        }
        Ok(())
    }

    pub fn network_config(&self, op: &SensingOperator) -> NetworkConfig {
        NetworkConfig {
            bands: op.bands(),
            feature_width: self.feature_width,
            z_channels: self.z_channels,
            input_mode: self.input_mode,
            arch_mode: self.arch_mode,
            system: op.system(),
            seed: self.seed,
        }
    }
}

/// One logged row of the optimization curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    /// Number of Adam updates applied before this evaluation.
    pub iteration: usize,
    pub loss: f64,
    pub psnr: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ReconResult {
    pub cube: HsiCube,
    /// Rows at iteration 0, every `log_every` updates, and after the last update.
    pub curve: Vec<CurvePoint>,
    /// Loss after `k` updates, for `k = 0..=iterations`.
    pub loss_history: Vec<f64>,
    pub wall_seconds: f64,
    /// SHA-256 of the final weights (little-endian f32 bytes in registry order).
    pub params_digest: String,
}

impl ReconResult {
    pub fn final_loss(&self) -> f64 {
        *self.loss_history.last().expect("at least one evaluation")
    }

    /// Loss evaluated in 1-based iteration `i` (before that iteration's update).
    pub fn loss_at_iteration(&self, i: usize) -> f64 {
        self.loss_history[i - 1]
    }
}

fn check_measurement(y: &Snapshot, op: &SensingOperator) -> Result<()> {
    if y.system() != op.system() {
        return Err(Error::SystemMismatch { expected: op.system().name(), actual: y.system().name() });
    }
    if (y.height(), y.width()) != op.measurement_dims() {
        let (mh, mw) = op.measurement_dims();
        return Err(Error::shape(format!(
            "snapshot is {}x{}, operator produces {mh}x{mw}",
            y.height(),
            y.width()
        )));
    }
    Ok(())
}

/// `|| Y - Phi(estimate) ||_1` as an unnormalized sum.
pub fn l1_measurement_loss(estimate: &HsiCube, y: &Snapshot, op: &SensingOperator) -> Result<f64> {
    check_measurement(y, op)?;
    let fx = op.forward(estimate)?;
    Ok(fx
        .values()
        .iter()
        .zip(y.values())
        .map(|(&a, &b)| (b as f64 - a as f64).abs())
        .sum())
}

pub fn params_digest(params: &ParamStore<f32>) -> String {
    let mut h = Sha256::new();
    for (_, p) in params.iter() {
        for v in p.value.data() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// A freshly initialized generator with its fixed input and target.
pub struct Problem {
    pub net: Network,
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
}

impl Problem {
    pub fn new(y: &Snapshot, op: &SensingOperator, run: &RunConfig) -> Result<Self> {
        check_measurement(y, op)?;
        let config = run.network_config(op);
        let net = build_network(config)?;
        let code =
            RandomCode::draw(run.seed.wrapping_add(CODE_SEED_OFFSET), run.z_channels, op.height(), op.width());
        let input = make_conditional_input(&code, y, &config, op.dispersion())?;
        Ok(Problem { net, input, target: y.to_tensor() })
    }
}

/// One evaluation of the measurement loss for a given parameter snapshot.
#[derive(Clone, Debug)]
pub struct LossEvaluation<T> {
    pub loss: f64,
    /// Generator output `(bands, height, width)`.
    pub output: Tensor<T>,
    pub gradients: Option<GradientSet<T>>,
    /// Sign pattern of every kinked op on the tape (see [`Tape::branch_pattern`]).
    pub branches: Vec<i8>,
}

/// Forward pass, l1 measurement loss and (optionally) the reverse pass, with
/// parameters taken from `params` (any precision, same registry as `net`).
pub fn evaluate_loss<T: Scalar>(
    net: &Network,
    params: &ParamStore<T>,
    input: &Tensor<T>,
    target: &Tensor<T>,
    op: &SensingOperator,
    want_gradients: bool,
    exec: ExecMode,
) -> Result<LossEvaluation<T>> {
    let mut tape = Tape::with_mode(params, exec);
    let x = tape.constant(input.clone())?;
    let out = net.forward(&mut tape, x)?;
    let meas = tape.linear(out, op)?;
    let loss_node = tape.l1_distance(meas, target)?;
    let loss = tape.value(loss_node).data()[0].as_f64();
    let gradients = if want_gradients { Some(tape.backward(loss_node)?) } else { None };
    Ok(LossEvaluation { loss, output: tape.value(out).clone(), gradients, branches: tape.branch_pattern() })
}

/// Fits a freshly initialized generator to `y` with Adam for a fixed number
/// of iterations. `ground_truth`, when given, only feeds the PSNR column.
pub fn reconstruct(
    y: &Snapshot,
    op: &SensingOperator,
    run: &RunConfig,
    ground_truth: Option<&HsiCube>,
) -> Result<ReconResult> {
    run.validate()?;
    check_measurement(y, op)?;
    if let Some(gt) = ground_truth {
        if (gt.height(), gt.width(), gt.bands()) != (op.height(), op.width(), op.bands()) {
            return Err(Error::shape("ground truth does not match the operator's cube shape"));
        }
    }
    let started = Instant::now();
    let Problem { mut net, input, target } = Problem::new(y, op, run)?;
    let mut adam = AdamState::new(net.params(), AdamConfig::with_lr(run.lr));

    let mut curve = Vec::new();
    let mut history = Vec::with_capacity(run.iterations + 1);
    let log_point = |k: usize, loss: f64, out: &Tensor<f32>, curve: &mut Vec<CurvePoint>| -> Result<()> {
        let psnr = match ground_truth {
            Some(gt) => Some(psnr(gt, &HsiCube::from_tensor(out)?)?.mean),
            None => None,
        };
        curve.push(CurvePoint { iteration: k, loss, psnr });
        Ok(())
    };
    let as_nan_loss = |k: usize| move |e: Error| match e {
        Error::NonFinite(_) => Error::NanLoss(k),
        other => other,
    };

    for k in 0..run.iterations {
        let eval = evaluate_loss(&net, net.params(), &input, &target, op, true, run.exec)
            .map_err(as_nan_loss(k + 1))?;
        if !eval.loss.is_finite() {
            return Err(Error::NanLoss(k + 1));
        }
        history.push(eval.loss);
        if k % run.log_every == 0 {
            log_point(k, eval.loss, &eval.output, &mut curve)?;
        }
        adam.step(net.params_mut(), &eval.gradients.expect("requested"))?;
    }

    let out = net
        .evaluate(net.params(), &input)
        .map_err(as_nan_loss(run.iterations + 1))?;
    let cube = HsiCube::from_tensor(&out)?;
    let loss = l1_measurement_loss(&cube, y, op)?;
    if !loss.is_finite() {
        return Err(Error::NanLoss(run.iterations + 1));
    }
    history.push(loss);
    log_point(run.iterations, loss, &out, &mut curve)?;

    Ok(ReconResult {
        cube,
        curve,
        loss_history: history,
        wall_seconds: started.elapsed().as_secs_f64(),
        params_digest: params_digest(net.params()),
    })
}
