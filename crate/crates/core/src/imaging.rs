//! Coded masks, linear dispersion, and the SD-/SS-CASSI measurement operators.
//!
//! Dispersion shears along the width axis: band `i` (0-based) is displaced by
//! `shift_per_band * i` pixels. For SS-CASSI the shear is applied to the mask
//! (one shifted plane per band) and the detector sees `sum_i X_i * S_i` on the
//! cube's own `H x W` grid. For SD-CASSI the masked scene itself is sheared,
//! so the detector is `H x (W + shift * (C - 1))` wide.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{LinearOperator, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum System {
    /// Spatial-spectral encoding; detector matches the cube's spatial grid.
    Ss,
    /// Single disperser; detector is widened by the total shear.
    Sd,
}

impl System {
    pub fn name(self) -> &'static str {
        match self {
            System::Ss => "ss",
            System::Sd => "sd",
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ss" => Ok(System::Ss),
            "sd" => Ok(System::Sd),
            other => Err(Error::invalid(format!("unknown system `{other}` (expected ss or sd)"))),
        }
    }
}

/// Hyperspectral cube, band-major (`values[(band * H + row) * W + col]`).
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
    wavelengths: Option<Vec<f32>>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::invalid(format!("empty cube {height}x{width}x{bands}")));
        }
        if values.len() != height * width * bands {
            return Err(Error::shape(format!(
                "{height}x{width}x{bands} cube needs {} values, got {}",
                height * width * bands,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cube values".into()));
        }
        Ok(HsiCube { height, width, bands, values, wavelengths: None })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Self {
        HsiCube { height, width, bands, values: vec![0.0; height * width * bands], wavelengths: None }
    }

    /// Attaches per-band wavelengths in nm; must be strictly increasing.
    pub fn with_wavelengths(mut self, wavelengths: Vec<f32>) -> Result<Self> {
        if wavelengths.len() != self.bands {
            return Err(Error::shape(format!(
                "{} wavelengths for {} bands",
                wavelengths.len(),
                self.bands
            )));
        }
        if wavelengths.iter().any(|w| !w.is_finite()) || wavelengths.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("wavelengths must be finite and strictly increasing"));
        }
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn wavelengths(&self) -> Option<&[f32]> {
        self.wavelengths.as_deref()
    }

    pub fn band(&self, i: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[i * n..(i + 1) * n]
    }

    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.values[(band * self.height + row) * self.width + col]
    }

    /// The spectrum at one pixel.
    pub fn spectrum(&self, row: usize, col: usize) -> Vec<f32> {
        (0..self.bands).map(|b| self.get(row, col, b)).collect()
    }

    pub fn clamp01(mut self) -> Self {
        self.values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.values.iter().map(|&v| T::of_f32(v)).collect();
        Tensor::from_chw(self.bands, self.height, self.width, data).expect("cube dims are consistent")
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (c, h, w) = t.chw()?;
        HsiCube::new(h, w, c, t.data().iter().map(|v| v.as_f32()).collect())
    }

    pub(crate) fn same_shape(&self, other: &HsiCube) -> Result<()> {
        if (self.height, self.width, self.bands) != (other.height, other.width, other.bands) {
            return Err(Error::shape(format!(
                "cube {}x{}x{} vs {}x{}x{}",
                self.height, self.width, self.bands, other.height, other.width, other.bands
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Binary,
    Gray,
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(MaskKind::Binary),
            "gray" | "grey" => Ok(MaskKind::Gray),
            other => Err(Error::invalid(format!("unknown mask kind `{other}`"))),
        }
    }
}

/// Aperture transmission `T(h, w)` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CodedMask {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl CodedMask {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("mask must be non-empty"));
        }
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} mask needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::invalid("mask transmission must lie in [0, 1]"));
        }
        Ok(CodedMask { height, width, values })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        CodedMask { height, width, values: vec![1.0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }
}

/// Linear dispersion `psi(band i) = shift_per_band * i` pixels along the width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DispersionModel {
    pub shift_per_band: usize,
}

impl Default for DispersionModel {
    fn default() -> Self {
        DispersionModel { shift_per_band: 1 }
    }
}

impl DispersionModel {
    pub fn new(shift_per_band: usize) -> Self {
        DispersionModel { shift_per_band }
    }

    pub fn shift(&self, band: usize) -> usize {
        self.shift_per_band * band
    }

    /// Extra detector columns needed for `bands` bands.
    pub fn spread(&self, bands: usize) -> usize {
        self.shift(bands.saturating_sub(1))
    }
}

/// Per-band shifted masks `S_1 .. S_C`, each `H x W`, stored band-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedMaskStack {
    height: usize,
    width: usize,
    bands: usize,
    planes: Vec<f32>,
}

impl ShiftedMaskStack {
    pub fn new(height: usize, width: usize, bands: usize, planes: Vec<f32>) -> Result<Self> {
        if planes.len() != height * width * bands {
            return Err(Error::shape("shifted mask stack size mismatch"));
        }
        Ok(ShiftedMaskStack { height, width, bands, planes })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn plane(&self, i: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.planes[i * n..(i + 1) * n]
    }

    pub fn planes(&self) -> &[f32] {
        &self.planes
    }
}

/// Where a snapshot came from.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub noise_sigma: f64,
}

/// A 2D detector measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    system: System,
    height: usize,
    width: usize,
    values: Vec<f32>,
    pub provenance: Provenance,
}

impl Snapshot {
    pub fn new(system: System, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::shape(format!(
                "{height}x{width} snapshot needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("snapshot values".into()));
        }
        Ok(Snapshot { system, height, width, values, provenance: Provenance::default() })
    }

    pub fn system(&self) -> System {
        self.system
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.values.iter().map(|&v| T::of_f32(v)).collect();
        Tensor::from_chw(1, self.height, self.width, data).expect("snapshot dims are consistent")
    }
}

/// Random aperture code: i.i.d. Bernoulli(`density`) or uniform `[0, 1]`.
pub fn generate_mask(seed: u64, height: usize, width: usize, kind: MaskKind, density: f64) -> Result<CodedMask> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }
    if !(density > 0.0 && density < 1.0) {
        return Err(Error::invalid(format!("density {density} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..height * width)
        .map(|_| match kind {
            MaskKind::Binary => {
                if rng.random::<f64>() < density {
                    1.0
                } else {
                    0.0
                }
            }
            MaskKind::Gray => rng.random::<f32>(),
        })
        .collect();
    CodedMask::new(height, width, values)
}

/// Translates `mask` by `psi(band)` along the width for every band, zero-filling.
pub fn shift_mask_stack(mask: &CodedMask, disp: DispersionModel, bands: usize) -> Result<ShiftedMaskStack> {
    if bands == 0 {
        return Err(Error::invalid("need at least one band"));
    }
    if disp.spread(bands) > mask.width {
        return Err(Error::invalid(format!(
            "total shift {} exceeds mask width {}",
            disp.spread(bands),
            mask.width
        )));
    }
    let (h, w) = (mask.height, mask.width);
    let mut planes = vec![0.0f32; bands * h * w];
    for (i, plane) in planes.chunks_mut(h * w).enumerate() {
        let d = disp.shift(i);
        for (dst, src) in plane.chunks_mut(w).zip(mask.values.chunks(w)) {
            if d < w {
                dst[d..].copy_from_slice(&src[..w - d]);
            }
        }
    }
    ShiftedMaskStack::new(h, w, bands, planes)
}

#[derive(Clone, Debug, PartialEq)]
enum Encoding {
    Ss(ShiftedMaskStack),
    Sd(CodedMask),
}

/// The measurement matrix `Phi` for one system, mask, and band count.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingOperator {
    height: usize,
    width: usize,
    bands: usize,
    disp: DispersionModel,
    encoding: Encoding,
}

impl SensingOperator {
    pub fn new(system: System, mask: &CodedMask, disp: DispersionModel, bands: usize) -> Result<Self> {
        let encoding = match system {
            System::Ss => Encoding::Ss(shift_mask_stack(mask, disp, bands)?),
            System::Sd => {
                if bands == 0 {
                    return Err(Error::invalid("need at least one band"));
                }
                Encoding::Sd(mask.clone())
            }
        };
        Ok(SensingOperator { height: mask.height, width: mask.width, bands, disp, encoding })
    }

    pub fn from_stack(stack: ShiftedMaskStack, disp: DispersionModel) -> Self {
        SensingOperator {
            height: stack.height,
            width: stack.width,
            bands: stack.bands,
            disp,
            encoding: Encoding::Ss(stack),
        }
    }

    pub fn system(&self) -> System {
        match self.encoding {
            Encoding::Ss(_) => System::Ss,
            Encoding::Sd(_) => System::Sd,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dispersion(&self) -> DispersionModel {
        self.disp
    }

    /// Detector size `(rows, cols)`.
    pub fn measurement_dims(&self) -> (usize, usize) {
        match self.encoding {
            Encoding::Ss(_) => (self.height, self.width),
            Encoding::Sd(_) => (self.height, self.width + self.disp.spread(self.bands)),
        }
    }

    fn check_cube_len(&self, n: usize) -> Result<()> {
        if n != self.height * self.width * self.bands {
            return Err(Error::shape(format!(
                "operator expects a {}x{}x{} cube ({} values), got {n}",
                self.height,
                self.width,
                self.bands,
                self.height * self.width * self.bands
            )));
        }
        Ok(())
    }

    fn check_meas_len(&self, n: usize) -> Result<()> {
        let (mh, mw) = self.measurement_dims();
        if n != mh * mw {
            return Err(Error::shape(format!("operator expects a {mh}x{mw} measurement, got {n} values")));
        }
        Ok(())
    }

    /// `Phi x` on raw band-major slices.
    pub fn apply_slice<T: Scalar>(&self, cube: &[T], out: &mut [T]) -> Result<()> {
        self.check_cube_len(cube.len())?;
        self.check_meas_len(out.len())?;
        out.iter_mut().for_each(|v| *v = T::zero());
        let (h, w) = (self.height, self.width);
        match &self.encoding {
            Encoding::Ss(stack) => {
                for (band, s) in cube.chunks(h * w).zip(stack.planes.chunks(h * w)) {
                    for ((o, &x), &m) in out.iter_mut().zip(band).zip(s) {
                        *o = *o + x * T::of_f32(m);
                    }
                }
            }
            Encoding::Sd(mask) => {
                let (_, mw) = self.measurement_dims();
                for (i, band) in cube.chunks(h * w).enumerate() {
                    let d = self.disp.shift(i);
                    for r in 0..h {
                        let dst = &mut out[r * mw + d..][..w];
                        let src = &band[r * w..][..w];
                        let t = &mask.values[r * w..][..w];
                        for ((o, &x), &m) in dst.iter_mut().zip(src).zip(t) {
                            *o = *o + x * T::of_f32(m);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// `Phi^T y` on raw slices.
    pub fn adjoint_slice<T: Scalar>(&self, meas: &[T], out: &mut [T]) -> Result<()> {
        self.check_meas_len(meas.len())?;
        self.check_cube_len(out.len())?;
        let (h, w) = (self.height, self.width);
        match &self.encoding {
            Encoding::Ss(stack) => {
                for (band, s) in out.chunks_mut(h * w).zip(stack.planes.chunks(h * w)) {
                    for ((o, &y), &m) in band.iter_mut().zip(meas).zip(s) {
                        *o = y * T::of_f32(m);
                    }
                }
            }
            Encoding::Sd(mask) => {
                let (_, mw) = self.measurement_dims();
                for (i, band) in out.chunks_mut(h * w).enumerate() {
                    let d = self.disp.shift(i);
                    for r in 0..h {
                        let src = &meas[r * mw + d..][..w];
                        let t = &mask.values[r * w..][..w];
                        for ((o, &y), &m) in band[r * w..][..w].iter_mut().zip(src).zip(t) {
                            *o = y * T::of_f32(m);
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn forward(&self, cube: &HsiCube) -> Result<Snapshot> {
        let (mh, mw) = self.measurement_dims();
        let mut out = vec![0.0f32; mh * mw];
        self.apply_slice(cube.values(), &mut out)?;
        Snapshot::new(self.system(), mh, mw, out)
    }

    pub fn adjoint(&self, snapshot: &Snapshot) -> Result<HsiCube> {
        if snapshot.system != self.system() {
            return Err(Error::SystemMismatch {
                expected: self.system().name(),
                actual: snapshot.system.name(),
            });
        }
        let mut out = vec![0.0f32; self.height * self.width * self.bands];
        self.adjoint_slice(snapshot.values(), &mut out)?;
        HsiCube::new(self.height, self.width, self.bands, out)
    }

    /// Diagonal of `Phi Phi^T` on the detector grid.
    pub fn gram_diagonal(&self) -> Vec<f32> {
        let (mh, mw) = self.measurement_dims();
        let mut r = vec![0.0f32; mh * mw];
        let (h, w) = (self.height, self.width);
        match &self.encoding {
            Encoding::Ss(stack) => {
                for s in stack.planes.chunks(h * w) {
                    r.iter_mut().zip(s).for_each(|(r, &m)| *r += m * m);
                }
            }
            Encoding::Sd(mask) => {
                for i in 0..self.bands {
                    let d = self.disp.shift(i);
                    for row in 0..h {
                        let dst = &mut r[row * mw + d..][..w];
                        let t = &mask.values[row * w..][..w];
                        dst.iter_mut().zip(t).for_each(|(r, &m)| *r += m * m);
                    }
                }
            }
        }
        r
    }
}

impl<T: Scalar> LinearOperator<T> for SensingOperator {
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (mh, mw) = self.measurement_dims();
        let mut out = vec![T::zero(); mh * mw];
        self.apply_slice(x.data(), &mut out)?;
        Tensor::from_chw(1, mh, mw, out)
    }

    fn apply_adjoint(&self, y: &Tensor<T>) -> Result<Tensor<T>> {
        let mut out = vec![T::zero(); self.height * self.width * self.bands];
        self.adjoint_slice(y.data(), &mut out)?;
        Tensor::from_chw(self.bands, self.height, self.width, out)
    }
}

fn check_spatial(cube: &HsiCube, h: usize, w: usize) -> Result<()> {
    if (cube.height, cube.width) != (h, w) {
        return Err(Error::shape(format!(
            "cube is {}x{}, masks are {h}x{w}",
            cube.height, cube.width
        )));
    }
    Ok(())
}

/// `Y = sum_i X_i * S_i`.
pub fn forward_ss(cube: &HsiCube, stack: &ShiftedMaskStack) -> Result<Snapshot> {
    check_spatial(cube, stack.height, stack.width)?;
    if cube.bands != stack.bands {
        return Err(Error::shape(format!("{} bands vs {} mask planes", cube.bands, stack.bands)));
    }
    SensingOperator::from_stack(stack.clone(), DispersionModel::default()).forward(cube)
}

/// Mask the scene, shear band `i` by `psi(i)` columns, and sum on the detector.
pub fn forward_sd(cube: &HsiCube, mask: &CodedMask, disp: DispersionModel) -> Result<Snapshot> {
    check_spatial(cube, mask.height, mask.width)?;
    SensingOperator::new(System::Sd, mask, disp, cube.bands)?.forward(cube)
}

/// `Phi^T y` for the operator described by `op`.
pub fn adjoint(snapshot: &Snapshot, op: &SensingOperator) -> Result<HsiCube> {
    op.adjoint(snapshot)
}

/// Cuts the `H x W` window starting at column `psi(i)` out of an SD snapshot
/// for every band, giving a `C`-channel map aligned with the scene.
pub fn shift_back(snapshot: &Snapshot, bands: usize, disp: DispersionModel) -> Result<HsiCube> {
    if snapshot.system != System::Sd {
        return Err(Error::SystemMismatch { expected: "sd", actual: snapshot.system.name() });
    }
    let spread = disp.spread(bands);
    if bands == 0 || snapshot.width <= spread {
        return Err(Error::shape(format!(
            "snapshot width {} too small for {bands} bands with shift {}",
            snapshot.width, disp.shift_per_band
        )));
    }
    let (h, mw) = (snapshot.height, snapshot.width);
    let w = mw - spread;
    let mut out = vec![0.0f32; h * w * bands];
    for (i, band) in out.chunks_mut(h * w).enumerate() {
        let d = disp.shift(i);
        for r in 0..h {
            band[r * w..][..w].copy_from_slice(&snapshot.values[r * mw + d..][..w]);
        }
    }
    HsiCube::new(h, w, bands, out)
}

/// `y = Phi x + e` with i.i.d. Gaussian `e` of standard deviation `noise_sigma`.
pub fn simulate(cube: &HsiCube, op: &SensingOperator, noise_sigma: f64, seed: u64) -> Result<Snapshot> {
    if !noise_sigma.is_finite() || noise_sigma < 0.0 {
        return Err(Error::invalid(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let mut snap = op.forward(cube)?;
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
        for v in snap.values.iter_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    snap.provenance = Provenance { seed: Some(seed), noise_sigma };
    Ok(snap)
}

/// Measurement entries per cube entry.
pub fn measurement_rate(system: System, height: usize, width: usize, bands: usize) -> f64 {
    match system {
        System::Ss => 1.0 / bands as f64,
        System::Sd => (height * (width + bands - 1)) as f64 / (height * width * bands) as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lcg_values(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f32>()).collect()
    }

    fn random_cube(h: usize, w: usize, c: usize, seed: u64) -> HsiCube {
        HsiCube::new(h, w, c, lcg_values(h * w * c, seed)).unwrap()
    }

    #[test]
    fn masks_are_deterministic_and_binary() {
        let a = generate_mask(7, 16, 16, MaskKind::Binary, 0.5).unwrap();
        let b = generate_mask(7, 16, 16, MaskKind::Binary, 0.5).unwrap();
        assert_eq!(a, b);
        assert!(a.is_binary());
        let g = generate_mask(7, 16, 16, MaskKind::Gray, 0.5).unwrap();
        assert!(g.values().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn mask_density_concentrates() {
        // 3 sigma of Binomial(65536, 0.5)/65536 is ~0.0059
        let m = generate_mask(1, 256, 256, MaskKind::Binary, 0.5).unwrap();
        assert!((0.47..=0.53).contains(&m.mean()));
    }

    #[test]
    fn mask_rejects_bad_arguments() {
        assert!(generate_mask(0, 0, 4, MaskKind::Binary, 0.5).is_err());
        assert!(generate_mask(0, 4, 4, MaskKind::Binary, 1.0).is_err());
        assert!(generate_mask(0, 4, 4, MaskKind::Binary, 0.0).is_err());
    }

    #[test]
    fn shift_stack_examples() {
        let mask = CodedMask::new(1, 3, vec![1.0, 0.0, 1.0]).unwrap();
        let s = shift_mask_stack(&mask, DispersionModel::new(1), 2).unwrap();
        assert_eq!(s.plane(0), mask.values());
        assert_eq!(s.plane(1), &[0.0, 1.0, 0.0]);

        let s0 = shift_mask_stack(&mask, DispersionModel::new(0), 4).unwrap();
        for i in 0..4 {
            assert_eq!(s0.plane(i), mask.values());
        }
        let s1 = shift_mask_stack(&mask, DispersionModel::new(2), 1).unwrap();
        assert_eq!(s1.bands(), 1);
        assert_eq!(s1.plane(0), mask.values());
        assert!(shift_mask_stack(&mask, DispersionModel::new(2), 3).is_err());
    }

    #[test]
    fn shifts_compose() {
        let mask = generate_mask(3, 4, 9, MaskKind::Gray, 0.5).unwrap();
        let by_one = shift_mask_stack(&mask, DispersionModel::new(1), 3).unwrap();
        let by_two = shift_mask_stack(&mask, DispersionModel::new(2), 2).unwrap();
        // shifting plane 1 of the 1-px stack by one more pixel equals plane 1 of the 2-px stack
        let once = CodedMask::new(4, 9, by_one.plane(1).to_vec()).unwrap();
        let twice = shift_mask_stack(&once, DispersionModel::new(1), 2).unwrap();
        assert_eq!(twice.plane(1), by_two.plane(1));
        assert_eq!(by_one.plane(2), by_two.plane(1));
    }

    #[test]
    fn forward_ss_examples() {
        let cube = HsiCube::new(1, 1, 2, vec![0.5, 1.0]).unwrap();
        let stack = ShiftedMaskStack::new(1, 1, 2, vec![1.0, 1.0]).unwrap();
        assert_eq!(forward_ss(&cube, &stack).unwrap().values(), &[1.5]);
        let zero = HsiCube::zeros(3, 4, 2);
        let stack = shift_mask_stack(&generate_mask(2, 3, 4, MaskKind::Binary, 0.5).unwrap(), DispersionModel::new(1), 2).unwrap();
        assert!(forward_ss(&zero, &stack).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_sd_examples() {
        let cube = HsiCube::new(1, 1, 2, vec![0.25, 0.75]).unwrap();
        let y = forward_sd(&cube, &CodedMask::ones(1, 1), DispersionModel::new(1)).unwrap();
        assert_eq!((y.height(), y.width()), (1, 2));
        assert_eq!(y.values(), &[0.25, 0.75]);

        let cube = random_cube(3, 4, 1, 5);
        let mask = generate_mask(5, 3, 4, MaskKind::Binary, 0.5).unwrap();
        let y = forward_sd(&cube, &mask, DispersionModel::new(1)).unwrap();
        let expect: Vec<f32> = cube.values().iter().zip(mask.values()).map(|(x, t)| x * t).collect();
        assert_eq!(y.values(), expect.as_slice());
    }

    #[test]
    fn sd_with_zero_shift_is_ss_with_unshifted_masks() {
        let cube = random_cube(4, 5, 3, 8);
        let mask = generate_mask(8, 4, 5, MaskKind::Gray, 0.5).unwrap();
        let sd = forward_sd(&cube, &mask, DispersionModel::new(0)).unwrap();
        let ss = forward_ss(&cube, &shift_mask_stack(&mask, DispersionModel::new(0), 3).unwrap()).unwrap();
        assert_eq!(sd.values(), ss.values());
    }

    #[test]
    fn all_ones_masks_give_band_sum() {
        let cube = random_cube(3, 3, 4, 9);
        let stack = shift_mask_stack(&CodedMask::ones(3, 3), DispersionModel::new(0), 4).unwrap();
        let y = forward_ss(&cube, &stack).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                let s: f32 = cube.spectrum(r, c).iter().sum();
                assert!((y.values()[r * 3 + c] - s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn adjoint_examples() {
        let mask = CodedMask::ones(2, 3);
        let op = SensingOperator::new(System::Ss, &mask, DispersionModel::new(0), 3).unwrap();
        let y = Snapshot::new(System::Ss, 2, 3, lcg_values(6, 2)).unwrap();
        let x = op.adjoint(&y).unwrap();
        for b in 0..3 {
            assert_eq!(x.band(b), y.values());
        }
        let zero = Snapshot::new(System::Ss, 2, 3, vec![0.0; 6]).unwrap();
        assert!(op.adjoint(&zero).unwrap().values().iter().all(|&v| v == 0.0));
        let wrong = Snapshot::new(System::Sd, 2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(op.adjoint(&wrong), Err(Error::SystemMismatch { .. })));
    }

    #[test]
    fn adjoint_identity_both_systems() {
        for system in [System::Ss, System::Sd] {
            for seed in 0..5 {
                let mask = generate_mask(seed, 6, 7, MaskKind::Gray, 0.5).unwrap();
                let op = SensingOperator::new(system, &mask, DispersionModel::new(1), 4).unwrap();
                let x = random_cube(6, 7, 4, seed + 100);
                let (mh, mw) = op.measurement_dims();
                let y = Snapshot::new(system, mh, mw, lcg_values(mh * mw, seed + 200)).unwrap();
                let lhs: f64 = op.forward(&x).unwrap().values().iter().zip(y.values()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
                let rhs: f64 = x.values().iter().zip(op.adjoint(&y).unwrap().values()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
                assert!((lhs - rhs).abs() / lhs.abs() < 1e-5);
            }
        }
    }

    #[test]
    fn shift_back_examples() {
        let y = Snapshot::new(System::Sd, 1, 2, vec![0.3, 0.9]).unwrap();
        let c = shift_back(&y, 2, DispersionModel::new(1)).unwrap();
        assert_eq!((c.height(), c.width(), c.bands()), (1, 1, 2));
        assert_eq!(c.values(), &[0.3, 0.9]);

        let y1 = Snapshot::new(System::Sd, 2, 3, lcg_values(6, 3)).unwrap();
        let c1 = shift_back(&y1, 1, DispersionModel::new(1)).unwrap();
        assert_eq!(c1.values(), y1.values());

        let ss = Snapshot::new(System::Ss, 1, 2, vec![0.0; 2]).unwrap();
        assert!(shift_back(&ss, 2, DispersionModel::new(1)).is_err());
    }

    #[test]
    fn shift_back_window_oracle() {
        // With an all-ones mask, window i at (h, w) reads detector column w + i,
        // which collects band b from scene column w + i - b.
        let (h, w, c) = (3, 4, 3);
        let cube = random_cube(h, w, c, 12);
        let y = forward_sd(&cube, &CodedMask::ones(h, w), DispersionModel::new(1)).unwrap();
        let back = shift_back(&y, c, DispersionModel::new(1)).unwrap();
        for i in 0..c {
            for r in 0..h {
                for col in 0..w {
                    let det = col + i;
                    let mut expect = 0.0f32;
                    for b in 0..c {
                        if det >= b && det - b < w {
                            expect += cube.get(r, det - b, b);
                        }
                    }
                    assert!((back.get(r, col, i) - expect).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn simulate_noise_statistics() {
        let cube = random_cube(128, 128, 2, 1);
        let mask = generate_mask(1, 128, 128, MaskKind::Binary, 0.5).unwrap();
        let op = SensingOperator::new(System::Ss, &mask, DispersionModel::new(1), 2).unwrap();
        let clean = simulate(&cube, &op, 0.0, 3).unwrap();
        assert_eq!(clean.values(), op.forward(&cube).unwrap().values());
        let a = simulate(&cube, &op, 0.01, 3).unwrap();
        let b = simulate(&cube, &op, 0.01, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.provenance, Provenance { seed: Some(3), noise_sigma: 0.01 });
        let res: Vec<f64> = a.values().iter().zip(clean.values()).map(|(x, y)| (x - y) as f64).collect();
        let mean = res.iter().sum::<f64>() / res.len() as f64;
        let std = (res.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (res.len() - 1) as f64).sqrt();
        assert!((0.009..=0.011).contains(&std), "{std}");
        assert!(simulate(&cube, &op, -1.0, 3).is_err());
    }

    #[test]
    fn measurement_rates() {
        assert_eq!(measurement_rate(System::Ss, 256, 256, 31), 1.0 / 31.0);
        assert_eq!(measurement_rate(System::Sd, 8, 8, 1), 1.0);
        assert_eq!(
            measurement_rate(System::Sd, 256, 256, 31),
            (256.0 * 286.0) / (256.0 * 256.0 * 31.0)
        );
    }

    #[test]
    fn wavelengths_must_increase() {
        let c = HsiCube::zeros(1, 1, 3);
        assert!(c.clone().with_wavelengths(vec![400.0, 410.0, 420.0]).is_ok());
        assert!(c.clone().with_wavelengths(vec![400.0, 400.0, 420.0]).is_err());
        assert!(c.with_wavelengths(vec![400.0]).is_err());
    }
}
