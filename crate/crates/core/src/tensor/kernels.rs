//! Numeric kernels behind the tape ops: zero-padded 2D convolution via
//! im2col + GEMM, and half-pixel bilinear 2x upsampling.

use super::{gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par::{block_rows, for_each_row_block, ExecMode};

/// Spatial bookkeeping for one convolution call.
#[derive(Clone, Copy, Debug)]
struct ConvGeometry {
    in_channels: usize,
    out_channels: usize,
    height: usize,
    width: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_height: usize,
    out_width: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: &[usize], stride: usize) -> Result<Self> {
        let &[c, h, w] = input else {
            return Err(Error::shape(format!("conv input must be (c, h, w), got {input:?}")));
        };
        let &[oc, ic, kh, kw] = kernel else {
            return Err(Error::shape(format!("conv kernel must be [out, in, k, k], got {kernel:?}")));
        };
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(Error::shape(format!("kernel size must be 1x1 or 3x3, got {kh}x{kw}")));
        }
        if ic != c {
            return Err(Error::shape(format!("kernel expects {ic} input channels, input has {c}")));
        }
        let (out_height, out_width) = match stride {
            1 => (h, w),
            2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::shape(format!("stride 2 needs even spatial size, got {h}x{w}")));
                }
                (h / 2, w / 2)
            }
            s => return Err(Error::shape(format!("stride must be 1 or 2, got {s}"))),
        };
        Ok(ConvGeometry {
            in_channels: c,
            out_channels: oc,
            height: h,
            width: w,
            k: kh,
            stride,
            pad: kh / 2,
            out_height,
            out_width,
        })
    }

    fn taps(&self) -> usize {
        self.k * self.k
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.taps()
    }

    fn out_pixels(&self) -> usize {
        self.out_height * self.out_width
    }

    /// 1x1 stride-1 convolutions read the input directly as the column matrix.
    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1
    }

    /// Input coordinate read by output `o` at tap offset `t`, if inside.
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let s = (o * self.stride + t) as isize - self.pad as isize;
        (s >= 0 && (s as usize) < extent).then_some(s as usize)
    }
}

fn im2col<T: Scalar>(geo: &ConvGeometry, input: &[T], mode: ExecMode) -> Vec<T> {
    let p = geo.out_pixels();
    let taps = geo.taps();
    let mut col = vec![T::zero(); geo.patch_len() * p];
    let rows = block_rows(mode, geo.in_channels);
    for_each_row_block(mode, &mut col, taps * p, rows, |first, block| {
        for (ci, chan) in block.chunks_mut(taps * p).enumerate() {
            let plane = &input[(first + ci) * geo.height * geo.width..][..geo.height * geo.width];
            for ky in 0..geo.k {
                for kx in 0..geo.k {
                    let row = &mut chan[(ky * geo.k + kx) * p..][..p];
                    for oy in 0..geo.out_height {
                        let Some(iy) = geo.source(oy, ky, geo.height) else { continue };
                        let src = &plane[iy * geo.width..][..geo.width];
                        let dst = &mut row[oy * geo.out_width..][..geo.out_width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            if let Some(ix) = geo.source(ox, kx, geo.width) {
                                *d = src[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    col
}

fn col2im<T: Scalar>(geo: &ConvGeometry, col: &[T], mode: ExecMode) -> Vec<T> {
    let p = geo.out_pixels();
    let taps = geo.taps();
    let plane_len = geo.height * geo.width;
    let mut out = vec![T::zero(); geo.in_channels * plane_len];
    let rows = block_rows(mode, geo.in_channels);
    for_each_row_block(mode, &mut out, plane_len, rows, |first, block| {
        for (ci, plane) in block.chunks_mut(plane_len).enumerate() {
            let chan = &col[(first + ci) * taps * p..][..taps * p];
            for ky in 0..geo.k {
                for kx in 0..geo.k {
                    let row = &chan[(ky * geo.k + kx) * p..][..p];
                    for oy in 0..geo.out_height {
                        let Some(iy) = geo.source(oy, ky, geo.height) else { continue };
                        let dst = &mut plane[iy * geo.width..][..geo.width];
                        let src = &row[oy * geo.out_width..][..geo.out_width];
                        for (ox, &g) in src.iter().enumerate() {
                            if let Some(ix) = geo.source(ox, kx, geo.width) {
                                dst[ix] = dst[ix] + g;
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn check_bias<T: Scalar>(bias: &Tensor<T>, out_channels: usize) -> Result<()> {
    if bias.dims() != [out_channels] {
        return Err(Error::shape(format!(
            "bias must be [{out_channels}], got {:?}",
            bias.dims()
        )));
    }
    Ok(())
}

/// Zero-padded (`k/2`) convolution with stride 1 or 2.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    mode: ExecMode,
) -> Result<Tensor<T>> {
    let geo = ConvGeometry::new(input.dims(), kernel.dims(), stride)?;
    check_bias(bias, geo.out_channels)?;
    let p = geo.out_pixels();
    let r = geo.patch_len();
    let owned;
    let col: &[T] = if geo.is_pointwise() {
        input.data()
    } else {
        owned = im2col(&geo, input.data(), mode);
        &owned
    };
    let mut out = vec![T::zero(); geo.out_channels * p];
    let rows = block_rows(mode, geo.out_channels);
    let w = kernel.data();
    let b = bias.data();
    for_each_row_block(mode, &mut out, p, rows, |first, block| {
        let m = block.len() / p;
        for (i, row) in block.chunks_mut(p).enumerate() {
            row.fill(b[first + i]);
        }
        gemm(
            m,
            r,
            p,
            MatRef::row_major(w, r).skip_rows(first),
            MatRef::row_major(col, p),
            T::one(),
            block,
        );
    });
    Tensor::from_chw(geo.out_channels, geo.out_height, geo.out_width, out)
}

/// Gradients of [`conv2d`] with respect to its three operands.
#[derive(Clone, Debug)]
pub struct ConvGrads<T> {
    /// `None` when the caller did not ask for it.
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    grad_out: &Tensor<T>,
    want_input: bool,
    mode: ExecMode,
) -> Result<ConvGrads<T>> {
    let geo = ConvGeometry::new(input.dims(), kernel.dims(), stride)?;
    let p = geo.out_pixels();
    let r = geo.patch_len();
    if grad_out.dims() != [geo.out_channels, geo.out_height, geo.out_width] {
        return Err(Error::shape(format!(
            "conv output gradient {:?} does not match output shape",
            grad_out.dims()
        )));
    }
    let dy = grad_out.data();
    let bias: Vec<T> = dy.chunks(p).map(|row| row.iter().copied().sum()).collect();

    let owned;
    let col: &[T] = if geo.is_pointwise() {
        input.data()
    } else {
        owned = im2col(&geo, input.data(), mode);
        &owned
    };

    // dW = dY * col^T
    let mut dw = vec![T::zero(); geo.out_channels * r];
    let rows = block_rows(mode, geo.out_channels);
    for_each_row_block(mode, &mut dw, r, rows, |first, block| {
        let m = block.len() / r;
        gemm(
            m,
            p,
            r,
            MatRef::row_major(dy, p).skip_rows(first),
            MatRef::transposed(col, p),
            T::zero(),
            block,
        );
    });

    let input_grad = if want_input {
        // dcol = W^T * dY
        let mut dcol = vec![T::zero(); r * p];
        let rows = block_rows(mode, r);
        let w = kernel.data();
        for_each_row_block(mode, &mut dcol, p, rows, |first, block| {
            let m = block.len() / p;
            gemm(
                m,
                geo.out_channels,
                p,
                MatRef::transposed(w, r).skip_rows(first),
                MatRef::row_major(dy, p),
                T::zero(),
                block,
            );
        });
        let data = if geo.is_pointwise() { dcol } else { col2im(&geo, &dcol, mode) };
        Some(Tensor::from_chw(geo.in_channels, geo.height, geo.width, data)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        kernel: Tensor::new(kernel.dims().to_vec(), dw)?,
        bias: Tensor::new(vec![geo.out_channels], bias)?,
    })
}

/// Interpolation taps along one axis: (lower index, upper index, upper weight).
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|d| {
            let s = ((d as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear 2x upsampling with half-pixel centers and border clamping.
pub fn upsample2x<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.chw()?;
    if h == 0 || w == 0 {
        return Err(Error::shape("upsample of an empty map"));
    }
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * oh * ow];
    for (src, dst) in input.data().chunks(h * w).zip(out.chunks_mut(oh * ow)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy).unwrap();
            let r0 = &src[y0 * w..][..w];
            let r1 = &src[y1 * w..][..w];
            let row = &mut dst[oy * ow..][..ow];
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx).unwrap();
                let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
                let bot = r1[x0] + (r1[x1] - r1[x0]) * fx;
                row[ox] = top + (bot - top) * fy;
            }
        }
    }
    Tensor::from_chw(c, oh, ow, out)
}

/// Adjoint of [`upsample2x`]: scatters a `(c, 2h, 2w)` gradient back to `(c, h, w)`.
pub fn upsample2x_backward<T: Scalar>(grad_out: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (c, oh, ow) = grad_out.chw()?;
    if oh != 2 * h || ow != 2 * w {
        return Err(Error::shape(format!("upsample gradient {oh}x{ow} vs source {h}x{w}")));
    }
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut out = vec![T::zero(); c * h * w];
    for (g, dst) in grad_out.data().chunks(oh * ow).zip(out.chunks_mut(h * w)) {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::from_f64(fy).unwrap();
            let row = &g[oy * ow..][..ow];
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::from_f64(fx).unwrap();
                let v = row[ox];
                let top = v * (T::one() - fy);
                let bot = v * fy;
                dst[y0 * w + x0] = dst[y0 * w + x0] + top * (T::one() - fx);
                dst[y0 * w + x1] = dst[y0 * w + x1] + top * fx;
                dst[y1 * w + x0] = dst[y1 * w + x0] + bot * (T::one() - fx);
                dst[y1 * w + x1] = dst[y1 * w + x1] + bot * fx;
            }
        }
    }
    Tensor::from_chw(c, h, w, out)
}
