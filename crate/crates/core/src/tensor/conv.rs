//! Strided, dilated N-d convolution (cross-correlation) and its transpose.
//!
//! Every kernel is lowered to im2col + GEMM. Inputs with 1 or 2 spatial
//! dimensions are promoted to 3 by prepending unit extents, so a single
//! gather/scatter routine serves 1D, 2D and 3D.
//!
//! Tap `t` of a dilated kernel reads input position `o * stride + t * rate - pad`;
//! rate 1 is the ordinary convolution.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{cfg_err, dim_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Padding {
    /// No padding; output shrinks by `rate * (kernel - 1)`.
    Valid,
    /// Zero padding of `rate * (kernel - 1)` split evenly (extra cell after),
    /// so stride-1 output extent equals input extent.
    SameZero,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub dilation: Vec<usize>,
    pub padding: Padding,
    pub in_channels: usize,
    pub out_channels: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride 1, rate 1, same-zero padding, with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: Vec<usize>) -> Self {
        let dims = kernel.len();
        ConvSpec {
            kernel,
            stride: vec![1; dims],
            dilation: vec![1; dims],
            padding: Padding::SameZero,
            in_channels,
            out_channels,
            bias: true,
        }
    }

    /// Isotropic kernel of extent `k` in each of `dims` spatial dimensions.
    pub fn cube(dims: usize, in_channels: usize, out_channels: usize, k: usize) -> Self {
        Self::new(in_channels, out_channels, vec![k; dims])
    }

    pub fn with_stride(mut self, s: usize) -> Self {
        self.stride = vec![s; self.kernel.len()];
        self
    }

    pub fn with_dilation(mut self, r: usize) -> Self {
        self.dilation = vec![r; self.kernel.len()];
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn spatial_dims(&self) -> usize {
        self.kernel.len()
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    /// `(out_channels, in_channels, kernel...)`.
    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend_from_slice(&self.kernel);
        s
    }

    /// `(in_channels, out_channels, kernel...)`, the transposed-conv layout.
    pub fn transposed_weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.in_channels, self.out_channels];
        s.extend_from_slice(&self.kernel);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.kernel.len();
        if !(1..=3).contains(&d) {
            return Err(cfg_err!("convolution supports 1 to 3 spatial dims, got {d}"));
        }
        if self.stride.len() != d || self.dilation.len() != d {
            return Err(cfg_err!(
                "kernel {:?}, stride {:?} and dilation {:?} must have equal rank",
                self.kernel,
                self.stride,
                self.dilation
            ));
        }
        if self.kernel.iter().any(|&k| k == 0) {
            return Err(cfg_err!("kernel extents must be positive: {:?}", self.kernel));
        }
        if self.stride.iter().any(|&s| s == 0) {
            return Err(cfg_err!("stride must be >= 1: {:?}", self.stride));
        }
        if self.dilation.iter().any(|&r| r == 0) {
            return Err(cfg_err!("dilation rate must be >= 1: {:?}", self.dilation));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(cfg_err!("channel counts must be positive"));
        }
        Ok(())
    }

    /// Zero padding inserted before each spatial dim.
    fn pad_before(&self) -> Vec<usize> {
        match self.padding {
            Padding::Valid => vec![0; self.kernel.len()],
            Padding::SameZero => self
                .kernel
                .iter()
                .zip(&self.dilation)
                .map(|(&k, &r)| r * (k - 1) / 2)
                .collect(),
        }
    }

    /// Output spatial extents for the given input extents.
    pub fn output_extents(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.validate()?;
        if input.len() != self.kernel.len() {
            return Err(dim_err!(
                "input has {} spatial dims, kernel has {}",
                input.len(),
                self.kernel.len()
            ));
        }
        let mut out = Vec::with_capacity(input.len());
        for d in 0..input.len() {
            let span = self.dilation[d] * (self.kernel[d] - 1) + 1;
            let padded = match self.padding {
                Padding::Valid => input[d],
                Padding::SameZero => input[d] + span - 1,
            };
            if padded < span {
                return Err(dim_err!(
                    "spatial extent {} in dim {d} is smaller than the dilated kernel span {span}",
                    input[d]
                ));
            }
            out.push((padded - span) / self.stride[d] + 1);
        }
        Ok(out)
    }
}

/// Gather/scatter geometry promoted to three spatial dims.
#[derive(Debug, Clone)]
struct Geometry {
    channels: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    rate: [usize; 3],
    pad: [usize; 3],
}

fn promote(v: &[usize], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    out[3 - v.len()..].copy_from_slice(v);
    out
}

impl Geometry {
    fn new(spec: &ConvSpec, channels: usize, input: &[usize]) -> Result<Self> {
        let output = spec.output_extents(input)?;
        Ok(Geometry {
            channels,
            input: promote(input, 1),
            output: promote(&output, 1),
            kernel: promote(&spec.kernel, 1),
            stride: promote(&spec.stride, 1),
            rate: promote(&spec.dilation, 1),
            pad: promote(&spec.pad_before(), 0),
        })
    }

    fn rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn cols(&self) -> usize {
        self.output.iter().product()
    }

    fn input_len(&self) -> usize {
        self.channels * self.input.iter().product::<usize>()
    }

    /// Input index along `dim` read by output `o` at tap `t`, if inside.
    #[inline]
    fn source(&self, dim: usize, o: usize, t: usize) -> Option<usize> {
        let i = (o * self.stride[dim] + t * self.rate[dim]) as isize - self.pad[dim] as isize;
        (i >= 0 && (i as usize) < self.input[dim]).then_some(i as usize)
    }

    /// Half-open range of outputs along the last dim whose tap `t` lands inside.
    #[inline]
    fn inner_range(&self, t: usize) -> (usize, usize) {
        let (s, off, n) = (
            self.stride[2] as isize,
            (t * self.rate[2]) as isize - self.pad[2] as isize,
            self.input[2] as isize,
        );
        // o*s + off >= 0 and o*s + off < n
        let lo = if off >= 0 { 0 } else { (-off + s - 1) / s };
        let hi = if n - off <= 0 { 0 } else { (n - off + s - 1) / s };
        let out = self.output[2] as isize;
        (lo.clamp(0, out) as usize, hi.clamp(0, out) as usize)
    }

    /// Visits each im2col row as (row index, channel, taps).
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, [usize; 3])) {
        let mut row = 0;
        for c in 0..self.channels {
            for a in 0..self.kernel[0] {
                for b in 0..self.kernel[1] {
                    for t in 0..self.kernel[2] {
                        f(row, c, [a, b, t]);
                        row += 1;
                    }
                }
            }
        }
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let n = self.cols();
        let plane = self.input.iter().product::<usize>();
        let [o0, o1, o2] = self.output;
        self.for_each_row(|row, c, [a, b, t]| {
            let src = &x[c * plane..(c + 1) * plane];
            let dst = &mut cols[row * n..(row + 1) * n];
            let (lo, hi) = self.inner_range(t);
            let shift = (t * self.rate[2]) as isize - self.pad[2] as isize;
            let mut o = 0;
            for od in 0..o0 {
                let Some(id) = self.source(0, od, a) else {
                    dst[o..o + o1 * o2].fill(0.0);
                    o += o1 * o2;
                    continue;
                };
                for oh in 0..o1 {
                    let row_out = &mut dst[o..o + o2];
                    o += o2;
                    let Some(ih) = self.source(1, oh, b) else {
                        row_out.fill(0.0);
                        continue;
                    };
                    let base = (id * self.input[1] + ih) * self.input[2];
                    row_out[..lo].fill(0.0);
                    row_out[hi.max(lo)..].fill(0.0);
                    for (ow, v) in row_out.iter_mut().enumerate().take(hi).skip(lo) {
                        let iw = (ow * self.stride[2]) as isize + shift;
                        *v = src[base + iw as usize];
                    }
                }
            }
        });
    }

    /// Adjoint of `im2col`: scatter-adds columns back into `x`.
    fn col2im(&self, cols: &[f64], x: &mut [f64]) {
        let n = self.cols();
        let plane = self.input.iter().product::<usize>();
        let [o0, o1, o2] = self.output;
        self.for_each_row(|row, c, [a, b, t]| {
            let src = &cols[row * n..(row + 1) * n];
            let (lo, hi) = self.inner_range(t);
            let shift = (t * self.rate[2]) as isize - self.pad[2] as isize;
            let dst = &mut x[c * plane..(c + 1) * plane];
            for od in 0..o0 {
                let Some(id) = self.source(0, od, a) else {
                    continue;
                };
                for oh in 0..o1 {
                    let Some(ih) = self.source(1, oh, b) else {
                        continue;
                    };
                    let base = (id * self.input[1] + ih) * self.input[2];
                    let col_row = &src[(od * o1 + oh) * o2..(od * o1 + oh + 1) * o2];
                    for (ow, &v) in col_row.iter().enumerate().take(hi).skip(lo) {
                        let iw = (ow * self.stride[2]) as isize + shift;
                        dst[base + iw as usize] += v;
                    }
                }
            }
        });
    }
}

/// `c = a · b + beta · c` on row-major slices, optionally transposing operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    a: &[f64],
    a_shape: (usize, usize),
    a_t: bool,
    b: &[f64],
    b_shape: (usize, usize),
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    let a = ArrayView2::from_shape(a_shape, a).expect("gemm lhs shape");
    let b = ArrayView2::from_shape(b_shape, b).expect("gemm rhs shape");
    let a = if a_t { a.reversed_axes() } else { a };
    let b = if b_t { b.reversed_axes() } else { b };
    let mut c = ArrayViewMut2::from_shape((a.nrows(), b.ncols()), c).expect("gemm out shape");
    general_mat_mul(1.0, &a, &b, beta, &mut c);
}

fn check_input(input: &Tensor, spec: &ConvSpec, channels: usize) -> Result<()> {
    spec.validate()?;
    if input.ndim() != spec.spatial_dims() + 2 {
        return Err(dim_err!(
            "input shape {:?} is not (batch, channels, {} spatial dims)",
            input.shape(),
            spec.spatial_dims()
        ));
    }
    if input.channels() != channels {
        return Err(dim_err!(
            "input has {} channels, layer expects {channels}",
            input.channels()
        ));
    }
    Ok(())
}

fn check_weights(weights: &Tensor, expected: &[usize]) -> Result<()> {
    if weights.shape() != expected {
        return Err(dim_err!(
            "weights shaped {:?}, expected {expected:?}",
            weights.shape()
        ));
    }
    Ok(())
}

fn check_bias(bias: Option<&Tensor>, spec: &ConvSpec, channels: usize) -> Result<()> {
    match (spec.bias, bias) {
        (true, Some(b)) if b.shape() == [channels] => Ok(()),
        (true, Some(b)) => Err(dim_err!(
            "bias shaped {:?}, expected [{channels}]",
            b.shape()
        )),
        (true, None) => Err(cfg_err!("layer declares a bias but none was supplied")),
        (false, Some(_)) => Err(cfg_err!("layer declares no bias but one was supplied")),
        (false, None) => Ok(()),
    }
}

fn out_shape(batch: usize, channels: usize, spatial: &[usize]) -> Vec<usize> {
    let mut s = vec![batch, channels];
    s.extend_from_slice(spatial);
    s
}

fn add_bias(out: &mut [f64], bias: Option<&Tensor>, per_channel: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_mut(per_channel).zip(b.data()) {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

/// Cross-correlation `o[i] = sum_s f[i*stride + r*s - pad] * w[s]` over all
/// input channels, plus optional per-channel bias.
pub fn conv_nd(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    check_input(input, spec, spec.in_channels)?;
    check_weights(weights, &spec.weight_shape())?;
    check_bias(bias, spec, spec.out_channels)?;
    let geom = Geometry::new(spec, spec.in_channels, input.spatial())?;
    let out_spatial = spec.output_extents(input.spatial())?;
    let (k, n) = (geom.rows(), geom.cols());
    let cout = spec.out_channels;
    let in_len = geom.input_len();

    let mut out = vec![0.0; input.batch() * cout * n];
    out.par_chunks_mut(cout * n)
        .zip(input.data().par_chunks(in_len))
        .for_each(|(dst, x)| {
            let mut cols = vec![0.0; k * n];
            geom.im2col(x, &mut cols);
            gemm(weights.data(), (cout, k), false, &cols, (k, n), false, 0.0, dst);
            add_bias(dst, bias, n);
        });
    let precision = input.precision().join(weights.precision());
    Ok(Tensor::from_vec(&out_shape(input.batch(), cout, &out_spatial), out)?.finish(precision))
}

/// Gradients of a convolution-type layer.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

fn bias_grad(grad_out: &Tensor) -> Tensor {
    let c = grad_out.channels();
    let per = grad_out.len() / (grad_out.batch() * c);
    let mut db = vec![0.0; c];
    for item in grad_out.data().chunks(c * per) {
        for (ch, chunk) in item.chunks(per).enumerate() {
            db[ch] += chunk.iter().sum::<f64>();
        }
    }
    Tensor::from_vec(&[c], db).expect("bias shape")
}

/// Backward pass of [`conv_nd`] given the upstream gradient.
pub fn conv_nd_backward(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    check_input(input, spec, spec.in_channels)?;
    check_weights(weights, &spec.weight_shape())?;
    let geom = Geometry::new(spec, spec.in_channels, input.spatial())?;
    let expected = out_shape(
        input.batch(),
        spec.out_channels,
        &spec.output_extents(input.spatial())?,
    );
    if grad_out.shape() != expected {
        return Err(dim_err!(
            "output gradient shaped {:?}, expected {expected:?}",
            grad_out.shape()
        ));
    }
    let (k, n) = (geom.rows(), geom.cols());
    let cout = spec.out_channels;
    let in_len = geom.input_len();

    let mut dx = vec![0.0; input.len()];
    let mut dw = vec![0.0; weights.len()];
    let mut cols = vec![0.0; k * n];
    let mut dcols = vec![0.0; k * n];
    for ((x, gy), dxb) in input
        .data()
        .chunks(in_len)
        .zip(grad_out.data().chunks(cout * n))
        .zip(dx.chunks_mut(in_len))
    {
        geom.im2col(x, &mut cols);
        gemm(gy, (cout, n), false, &cols, (k, n), true, 1.0, &mut dw);
        gemm(weights.data(), (cout, k), true, gy, (cout, n), false, 0.0, &mut dcols);
        geom.col2im(&dcols, dxb);
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), dx)?,
        weight: Tensor::from_vec(weights.shape(), dw)?,
        bias: spec.bias.then(|| bias_grad(grad_out)),
    })
}

fn check_transposed(spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    if spec.kernel != spec.stride
        || spec.dilation.iter().any(|&r| r != 1)
        || spec.padding != Padding::Valid
    {
        return Err(cfg_err!(
            "transposed convolution supports kernel == stride, rate 1, valid padding; got kernel {:?}, stride {:?}, rate {:?}, {:?}",
            spec.kernel,
            spec.stride,
            spec.dilation,
            spec.padding
        ));
    }
    Ok(())
}

/// Geometry of the strided convolution whose adjoint is the transposed layer.
fn transposed_geometry(spec: &ConvSpec, input_spatial: &[usize]) -> Result<(Geometry, Vec<usize>)> {
    let out_spatial: Vec<usize> = input_spatial
        .iter()
        .zip(&spec.stride)
        .map(|(&e, &s)| e * s)
        .collect();
    let geom = Geometry::new(spec, spec.out_channels, &out_spatial)?;
    Ok((geom, out_spatial))
}

/// Transposed (fractionally strided) convolution: the adjoint of a
/// valid-padded strided [`conv_nd`] sharing the same weight tensor.
/// Weights are laid out `(in_channels, out_channels, kernel...)`.
pub fn transposed_conv_nd(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    check_transposed(spec)?;
    check_input(input, spec, spec.in_channels)?;
    check_weights(weights, &spec.transposed_weight_shape())?;
    check_bias(bias, spec, spec.out_channels)?;
    let (geom, out_spatial) = transposed_geometry(spec, input.spatial())?;
    let (k, n) = (geom.rows(), geom.cols());
    let cin = spec.in_channels;
    let out_len = geom.input_len();

    let mut out = vec![0.0; input.batch() * out_len];
    out.par_chunks_mut(out_len)
        .zip(input.data().par_chunks(cin * n))
        .for_each(|(dst, y)| {
            let mut cols = vec![0.0; k * n];
            gemm(weights.data(), (cin, k), true, y, (cin, n), false, 0.0, &mut cols);
            geom.col2im(&cols, dst);
            add_bias(dst, bias, out_len / spec.out_channels);
        });
    let precision = input.precision().join(weights.precision());
    Ok(
        Tensor::from_vec(&out_shape(input.batch(), spec.out_channels, &out_spatial), out)?
            .finish(precision),
    )
}

/// Backward pass of [`transposed_conv_nd`].
pub fn transposed_conv_nd_backward(
    input: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    check_transposed(spec)?;
    check_input(input, spec, spec.in_channels)?;
    check_weights(weights, &spec.transposed_weight_shape())?;
    let (geom, out_spatial) = transposed_geometry(spec, input.spatial())?;
    let expected = out_shape(input.batch(), spec.out_channels, &out_spatial);
    if grad_out.shape() != expected {
        return Err(dim_err!(
            "output gradient shaped {:?}, expected {expected:?}",
            grad_out.shape()
        ));
    }
    let (k, n) = (geom.rows(), geom.cols());
    let cin = spec.in_channels;
    let out_len = geom.input_len();

    let mut dy = vec![0.0; input.len()];
    let mut dw = vec![0.0; weights.len()];
    let mut cols = vec![0.0; k * n];
    for ((y, g), dyb) in input
        .data()
        .chunks(cin * n)
        .zip(grad_out.data().chunks(out_len))
        .zip(dy.chunks_mut(cin * n))
    {
        geom.im2col(g, &mut cols);
        gemm(weights.data(), (cin, k), false, &cols, (k, n), false, 0.0, dyb);
        gemm(y, (cin, n), false, &cols, (k, n), true, 1.0, &mut dw);
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(input.shape(), dy)?,
        weight: Tensor::from_vec(weights.shape(), dw)?,
        bias: spec.bias.then(|| bias_grad(grad_out)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn dilated_1d_hand_example() {
        // f = 1..8, w = [1, 0, -1], r = 2, valid
        let x = t(&[1, 1, 8], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let w = t(&[1, 1, 3], &[1., 0., -1.]);
        let spec = ConvSpec::cube(1, 1, 1, 3)
            .with_dilation(2)
            .with_padding(Padding::Valid)
            .without_bias();
        let y = conv_nd(&x, &w, None, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4]);
        assert_eq!(y.data(), &[-4., -4., -4., -4.]);

        // 1-based taps f[i + r s], s = 1..S, stay in range for i = 1..2 only;
        // they are the library outputs shifted by r - 1.
        let f = x.data();
        let one_based: Vec<f64> = (1..=2)
            .map(|i| (1..=3).map(|s| f[i + 2 * s - 1] * w.data()[s - 1]).sum())
            .collect();
        assert_eq!(one_based, vec![-4., -4.]);
        assert_eq!(&y.data()[1..3], one_based.as_slice());
    }

    #[test]
    fn identity_kernel_any_rate() {
        let x = Tensor::from_fn(&[2, 1, 5, 6], |i| (i as f64).sin());
        let w = Tensor::full(&[1, 1, 1, 1], 1.0);
        for r in 1..4 {
            let spec = ConvSpec::cube(2, 1, 1, 1).with_dilation(r).without_bias();
            assert_eq!(conv_nd(&x, &w, None, &spec).unwrap(), x);
        }
    }

    #[test]
    fn same_padding_preserves_extent_for_dilated_kernels() {
        for r in 1..4 {
            let spec = ConvSpec::cube(2, 3, 2, 3).with_dilation(r);
            assert_eq!(spec.output_extents(&[9, 7]).unwrap(), vec![9, 7]);
        }
        let spec = ConvSpec::cube(3, 1, 1, 2).with_stride(2).with_padding(Padding::Valid);
        assert_eq!(spec.output_extents(&[8, 6, 4]).unwrap(), vec![4, 3, 2]);
    }

    #[test]
    fn rejects_bad_configuration() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        let w = Tensor::zeros(&[1, 2, 3, 3]);
        let mut spec = ConvSpec::cube(2, 2, 1, 3).without_bias();
        spec.stride = vec![0, 1];
        assert!(matches!(conv_nd(&x, &w, None, &spec), Err(crate::Error::Config(_))));
        let spec = ConvSpec::cube(2, 2, 1, 3).with_dilation(0).without_bias();
        assert!(matches!(conv_nd(&x, &w, None, &spec), Err(crate::Error::Config(_))));
        let spec = ConvSpec::cube(2, 3, 1, 3).without_bias();
        assert!(matches!(conv_nd(&x, &w, None, &spec), Err(crate::Error::Dimension(_))));
        let spec = ConvSpec::cube(2, 2, 1, 3).with_padding(Padding::Valid).with_dilation(2).without_bias();
        assert!(matches!(conv_nd(&x, &w, None, &spec), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn transposed_footprint_and_errors() {
        let y = t(&[1, 1, 1, 1], &[2.5]);
        let w = Tensor::full(&[1, 1, 2, 2], 1.0);
        let spec = ConvSpec::cube(2, 1, 1, 2)
            .with_stride(2)
            .with_padding(Padding::Valid)
            .without_bias();
        let out = transposed_conv_nd(&y, &w, None, &spec).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert!(out.data().iter().all(|&v| v == 2.5));

        let zero = Tensor::zeros(&[1, 1, 3, 3]);
        assert_eq!(transposed_conv_nd(&zero, &w, None, &spec).unwrap().max_abs(), 0.0);

        let bad = ConvSpec::cube(2, 1, 1, 3).with_stride(2).with_padding(Padding::Valid).without_bias();
        assert!(matches!(
            transposed_conv_nd(&y, &Tensor::zeros(&[1, 1, 3, 3]), None, &bad),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn bias_is_added_per_channel() {
        let x = Tensor::zeros(&[1, 1, 4]);
        let w = Tensor::zeros(&[2, 1, 3]);
        let b = t(&[2], &[0.5, -1.0]);
        let y = conv_nd(&x, &w, Some(&b), &ConvSpec::cube(1, 1, 2, 3)).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5, -1., -1., -1., -1.]);
    }

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    fn close(a: &Tensor, b: &Tensor, tol: f64) -> bool {
        a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn linear_without_bias(
            seed in 0u64..10_000,
            dims in 1usize..4,
            rate in 1usize..3,
            stride in 1usize..3,
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let spec = ConvSpec::cube(dims, 2, 3, 3).with_dilation(rate).with_stride(stride).without_bias();
            let shape: Vec<usize> = [1, 2].into_iter().chain(std::iter::repeat(6).take(dims)).collect();
            let (x, y) = (random(&shape, seed), random(&shape, seed + 1));
            let w = random(&spec.weight_shape(), seed + 2);
            let lhs = conv_nd(&x.scale(a).add(&y.scale(b)).unwrap(), &w, None, &spec).unwrap();
            let cx = conv_nd(&x, &w, None, &spec).unwrap();
            let cy = conv_nd(&y, &w, None, &spec).unwrap();
            let rhs = cx.scale(a).add(&cy.scale(b)).unwrap();
            prop_assert!(close(&lhs, &rhs, 1e-10));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn dilated_equals_zero_stuffed_kernel(seed in 0u64..10_000, rate in 1usize..4, k in 2usize..4) {
            let spec = ConvSpec::cube(2, 2, 2, k).with_dilation(rate).with_padding(Padding::Valid).without_bias();
            let span = rate * (k - 1) + 1;
            let stuffed_spec = ConvSpec::cube(2, 2, 2, span).with_padding(Padding::Valid).without_bias();
            let w = random(&spec.weight_shape(), seed);
            let mut stuffed = Tensor::zeros(&stuffed_spec.weight_shape());
            for o in 0..2 {
                for c in 0..2 {
                    for i in 0..k {
                        for j in 0..k {
                            stuffed.set(&[o, c, i * rate, j * rate], w.get(&[o, c, i, j]));
                        }
                    }
                }
            }
            let x = random(&[1, 2, 9, 8], seed + 1);
            let dilated = conv_nd(&x, &w, None, &spec).unwrap();
            let standard = conv_nd(&x, &stuffed, None, &stuffed_spec).unwrap();
            prop_assert!(close(&dilated, &standard, 1e-12));
        }

        #[test]
        fn translation_equivariant(seed in 0u64..10_000, rate in 1usize..4, shift in 1usize..4) {
            let spec = ConvSpec::cube(2, 1, 2, 3).with_dilation(rate).with_padding(Padding::Valid).without_bias();
            let w = random(&spec.weight_shape(), seed);
            let n = 10;
            let big = random(&[1, 1, n + shift, n + shift], seed + 1);
            let x = big.crop(&[0, 0, 0, 0], &[1, 1, n, n]).unwrap();
            let moved = big.crop(&[0, 0, shift, shift], &[1, 1, n, n]).unwrap();
            let y = conv_nd(&x, &w, None, &spec).unwrap();
            let ym = conv_nd(&moved, &w, None, &spec).unwrap();
            let m = y.shape()[2];
            prop_assume!(m > shift);
            for o in 0..2 {
                for i in 0..m - shift {
                    for j in 0..m - shift {
                        let (u, v) = (ym.get(&[0, o, i, j]), y.get(&[0, o, i + shift, j + shift]));
                        prop_assert!((u - v).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn transposed_is_adjoint_of_strided(seed in 0u64..10_000, dims in 1usize..4, k in 1usize..4) {
            let (narrow, wide, m) = (3, 2, 3);
            let down = ConvSpec::cube(dims, wide, narrow, k).with_stride(k).with_padding(Padding::Valid).without_bias();
            let up = ConvSpec::cube(dims, narrow, wide, k).with_stride(k).with_padding(Padding::Valid).without_bias();
            prop_assert_eq!(down.weight_shape(), up.transposed_weight_shape());
            let w = random(&up.transposed_weight_shape(), seed);
            let x_shape: Vec<usize> = [1, wide].into_iter().chain(std::iter::repeat(k * m).take(dims)).collect();
            let y_shape: Vec<usize> = [1, narrow].into_iter().chain(std::iter::repeat(m).take(dims)).collect();
            let (x, y) = (random(&x_shape, seed + 1), random(&y_shape, seed + 2));
            let lhs = conv_nd(&x, &w, None, &down).unwrap().dot(&y).unwrap();
            let rhs = x.dot(&transposed_conv_nd(&y, &w, None, &up).unwrap()).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
