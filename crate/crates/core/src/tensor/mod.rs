//! Dense N-dimensional tensors and the structural / convolutional operations
//! used by the networks, filters and metrics.
//!
//! Layout is fixed to `(batch, channels, spatial...)` for network tensors and
//! to plain spatial extents for images and acoustic fields. Data is row-major
//! with the last dimension fastest.

mod conv;
mod io;
mod ops;

pub use conv::{
    conv_nd, conv_nd_backward, transposed_conv_nd, transposed_conv_nd_backward, ConvGrads,
    ConvSpec, Padding,
};
pub use io::{read_patn, read_patn_from, write_patn, write_patn_to, PATN_MAGIC, PATN_VERSION};
pub(crate) use ops::max_pool_argmax;
pub use ops::{
    box_filter, concat_channels, concat_channels_backward, max_pool_backward, max_pool_nd, relu,
    relu_backward, slice_channels,
};

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Result};

/// Storage precision of a tensor.
///
/// Values are always held as `f64`; a `Single` tensor keeps every stored value
/// representable in `f32`, which is also what gets written to disk.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl Precision {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::Single => v as f32 as f64,
            Precision::Double => v,
        }
    }

    /// Result precision of an operation mixing two operands.
    pub fn join(self, other: Precision) -> Precision {
        if self == Precision::Single || other == Precision::Single {
            Precision::Single
        } else {
            Precision::Double
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    precision: Precision,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&e| e > 0),
            "tensor extents must be positive, got {shape:?}"
        );
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
            precision: Precision::Double,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&e| e == 0) {
            return Err(dim_err!("tensor extents must be positive, got {shape:?}"));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(dim_err!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            precision: Precision::Double,
        })
    }

    /// Builds a tensor by evaluating `f` at every flat index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.iter_mut().enumerate().for_each({
            let mut f = f;
            move |(i, v)| *v = f(i)
        });
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Converts to the requested precision, rounding values when narrowing.
    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        if precision == Precision::Single {
            self.data.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        self
    }

    pub(crate) fn finish(mut self, precision: Precision) -> Self {
        if precision == Precision::Single {
            return self.with_precision(Precision::Single);
        }
        self.precision = precision;
        self
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let mut t = Tensor::from_vec(shape, self.data.clone())?;
        t.precision = self.precision;
        Ok(t)
    }

    pub fn into_shape(self, shape: &[usize]) -> Result<Tensor> {
        let precision = self.precision;
        let mut t = Tensor::from_vec(shape, self.data)?;
        t.precision = precision;
        Ok(t)
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn flat_index(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let i = self.flat_index(index);
        self.data[i] = value;
    }

    /// Batch size for `(batch, channels, spatial...)` tensors.
    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Channel count for `(batch, channels, spatial...)` tensors.
    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// Spatial extents for `(batch, channels, spatial...)` tensors.
    pub fn spatial(&self) -> &[usize] {
        &self.shape[2..]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            precision: self.precision,
        }
        .finish(self.precision)
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let precision = self.precision.join(other.precision);
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            precision,
        }
        .finish(precision))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Euclidean inner product over all elements.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(dim_err!(
                "shape mismatch: {:?} vs {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(())
    }

    /// Adds leading batch and channel axes of extent one.
    pub fn as_batch(&self) -> Tensor {
        let mut shape = vec![1, 1];
        shape.extend_from_slice(&self.shape);
        let mut t = self.reshape(&shape).expect("same length");
        t.precision = self.precision;
        t
    }

    /// Selects item `b` of the batch axis, keeping a batch axis of one.
    pub fn batch_item(&self, b: usize) -> Tensor {
        let per = self.len() / self.shape[0];
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Tensor {
            shape,
            data: self.data[b * per..(b + 1) * per].to_vec(),
            precision: self.precision,
        }
    }

    /// Stacks tensors of identical shape `(1, ...)` along the batch axis.
    pub fn stack_batch(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| dim_err!("cannot stack an empty batch"))?;
        if first.shape[0] != 1 {
            return Err(dim_err!("stacked items need a batch axis of one"));
        }
        let mut data = Vec::with_capacity(first.len() * items.len());
        let mut precision = first.precision;
        for t in items {
            first.check_same_shape(t)?;
            precision = precision.join(t.precision);
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = items.len();
        Ok(Tensor {
            shape,
            data,
            precision,
        })
    }

    /// Pads (or crops, for negative amounts) each dimension symmetrically.
    pub fn pad_center(&self, before: &[usize], target: &[usize]) -> Result<Tensor> {
        if before.len() != self.ndim() || target.len() != self.ndim() {
            return Err(dim_err!("padding rank does not match tensor rank"));
        }
        for d in 0..self.ndim() {
            if before[d] + self.shape[d] > target[d] {
                return Err(dim_err!(
                    "padding {before:?} of {:?} overflows {target:?}",
                    self.shape
                ));
            }
        }
        let mut out = Tensor::zeros(target);
        out.precision = self.precision;
        for_each_index(&self.shape, |idx, flat| {
            let dst: Vec<usize> = idx.iter().zip(before).map(|(i, b)| i + b).collect();
            let k = out.flat_index(&dst);
            out.data[k] = self.data[flat];
        });
        Ok(out)
    }

    /// Extracts the box `[offset, offset + extents)`.
    pub fn crop(&self, offset: &[usize], extents: &[usize]) -> Result<Tensor> {
        if offset.len() != self.ndim() || extents.len() != self.ndim() {
            return Err(dim_err!("crop rank does not match tensor rank"));
        }
        for d in 0..self.ndim() {
            if offset[d] + extents[d] > self.shape[d] {
                return Err(dim_err!(
                    "crop {extents:?} at {offset:?} exceeds extents {:?}",
                    self.shape
                ));
            }
        }
        let mut out = Tensor::zeros(extents);
        out.precision = self.precision;
        for_each_index(extents, |idx, flat| {
            let src: Vec<usize> = idx.iter().zip(offset).map(|(i, o)| i + o).collect();
            out.data[flat] = self.get(&src);
        });
        Ok(out)
    }
}

impl std::ops::Index<usize> for Tensor {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * shape[d + 1];
    }
    strides
}

/// Visits every multi-index of `shape` in row-major order.
pub(crate) fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize], usize)) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..total {
        f(&idx, flat);
        for d in (0..shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(
            Tensor::from_vec(&[2, 3], vec![0.0; 5]),
            Err(crate::Error::Dimension(_))
        ));
        assert!(Tensor::from_vec(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn single_precision_rounds_values() {
        let t = Tensor::from_vec(&[1], vec![0.1]).unwrap().with_precision(Precision::Single);
        assert_eq!(t.data()[0], 0.1f32 as f64);
        let u = t.scale(3.0);
        assert_eq!(u.precision(), Precision::Single);
        assert_eq!(u.data()[0], (0.1f32 as f64 * 3.0) as f32 as f64);
    }

    #[test]
    fn pad_then_crop_roundtrips() {
        let t = Tensor::from_fn(&[3, 4], |i| i as f64);
        let p = t.pad_center(&[2, 1], &[7, 6]).unwrap();
        assert_eq!(p.get(&[2, 1]), 0.0);
        assert_eq!(p.get(&[4, 4]), 11.0);
        assert_eq!(p.crop(&[2, 1], &[3, 4]).unwrap(), t);
    }

    #[test]
    fn stack_and_split_batch() {
        let a = Tensor::full(&[1, 2, 2], 1.0);
        let b = Tensor::full(&[1, 2, 2], 2.0);
        let s = Tensor::stack_batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), &[2, 2, 2]);
        assert_eq!(s.batch_item(1), b);
        assert_eq!(s.batch_item(0), a);
    }
}
