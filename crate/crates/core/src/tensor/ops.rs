use std::ops::Range;

use super::{for_each_index, strides_of, Tensor};
use crate::error::{cfg_err, dim_err, Result};

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Upstream gradient masked by `input > 0` (subgradient 0 at the kink).
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.zip_map(grad_out, |x, g| if x > 0.0 { g } else { 0.0 })
}

/// Channel-wise concatenation of `(batch, channels, spatial...)` tensors;
/// earlier operands occupy the leading channel blocks unchanged.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| dim_err!("concatenation needs at least one operand"))?;
    if first.ndim() < 2 {
        return Err(dim_err!("concatenation needs (batch, channels, ...) tensors"));
    }
    let batch = first.batch();
    let spatial = first.spatial().to_vec();
    let mut precision = first.precision();
    for p in parts {
        if p.ndim() != first.ndim() || p.batch() != batch || p.spatial() != spatial.as_slice() {
            return Err(dim_err!(
                "cannot concatenate {:?} with {:?}: batch and spatial extents differ",
                first.shape(),
                p.shape()
            ));
        }
        precision = precision.join(p.precision());
    }
    let plane: usize = spatial.iter().product();
    let channels: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(batch * channels * plane);
    for b in 0..batch {
        for p in parts {
            let per = p.channels() * plane;
            data.extend_from_slice(&p.data()[b * per..(b + 1) * per]);
        }
    }
    let mut shape = vec![batch, channels];
    shape.extend_from_slice(&spatial);
    Ok(Tensor::from_vec(&shape, data)?.finish(precision))
}

/// Splits a concatenation gradient back into per-operand gradients.
pub fn concat_channels_backward(grad_out: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let total: usize = channels.iter().sum();
    if grad_out.ndim() < 2 || grad_out.channels() != total {
        return Err(dim_err!(
            "gradient shaped {:?} does not split into channel blocks {channels:?}",
            grad_out.shape()
        ));
    }
    let mut start = 0;
    channels
        .iter()
        .map(|&c| {
            let part = slice_channels(grad_out, start..start + c);
            start += c;
            part
        })
        .collect()
}

pub fn slice_channels(input: &Tensor, range: Range<usize>) -> Result<Tensor> {
    if input.ndim() < 2 || range.end > input.channels() || range.is_empty() {
        return Err(dim_err!(
            "channel range {range:?} invalid for shape {:?}",
            input.shape()
        ));
    }
    let plane: usize = input.spatial().iter().product();
    let per = input.channels() * plane;
    let mut data = Vec::with_capacity(input.batch() * range.len() * plane);
    for b in 0..input.batch() {
        data.extend_from_slice(&input.data()[b * per + range.start * plane..b * per + range.end * plane]);
    }
    let mut shape = input.shape().to_vec();
    shape[1] = range.len();
    Ok(Tensor::from_vec(&shape, data)?.finish(input.precision()))
}

fn pool_geometry(input: &Tensor, window: &[usize]) -> Result<Vec<usize>> {
    if input.ndim() != window.len() + 2 {
        return Err(dim_err!(
            "pooling window {window:?} does not match input {:?}",
            input.shape()
        ));
    }
    if window.iter().any(|&w| w == 0) {
        return Err(cfg_err!("pooling window must be positive: {window:?}"));
    }
    let mut out = input.shape()[..2].to_vec();
    for (d, (&e, &w)) in input.spatial().iter().zip(window).enumerate() {
        if e % w != 0 {
            return Err(dim_err!(
                "spatial extent {e} in dim {d} is not divisible by pooling window {w}"
            ));
        }
        out.push(e / w);
    }
    Ok(out)
}

/// Flat input index of the (first) maximum in each pooling window.
fn pool_argmax(input: &Tensor, window: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let strides = input.strides();
    let win_offsets: Vec<usize> = {
        let mut offs = Vec::new();
        for_each_index(window, |w, _| {
            offs.push(w.iter().enumerate().map(|(d, &i)| i * strides[d + 2]).sum());
        });
        offs
    };
    let mut arg = Vec::with_capacity(out_shape.iter().product());
    for_each_index(out_shape, |o, _| {
        let base = o[0] * strides[0]
            + o[1] * strides[1]
            + o[2..]
                .iter()
                .enumerate()
                .map(|(d, &i)| i * window[d] * strides[d + 2])
                .sum::<usize>();
        let best = win_offsets
            .iter()
            .map(|&off| base + off)
            .fold(None::<usize>, |best, i| match best {
                Some(b) if input.data()[b] >= input.data()[i] => Some(b),
                _ => Some(i),
            })
            .expect("non-empty window");
        arg.push(best);
    });
    arg
}

/// Flat input indices selected by [`max_pool_nd`].
pub(crate) fn max_pool_argmax(input: &Tensor, window: &[usize]) -> Result<Vec<usize>> {
    let out_shape = pool_geometry(input, window)?;
    Ok(pool_argmax(input, window, &out_shape))
}

/// Non-overlapping max pooling over the spatial dims of a
/// `(batch, channels, spatial...)` tensor.
pub fn max_pool_nd(input: &Tensor, window: &[usize]) -> Result<Tensor> {
    let out_shape = pool_geometry(input, window)?;
    let arg = pool_argmax(input, window, &out_shape);
    let data = arg.into_iter().map(|i| input.data()[i]).collect();
    Ok(Tensor::from_vec(&out_shape, data)?.finish(input.precision()))
}

/// Routes each output gradient to the first maximal element of its window.
pub fn max_pool_backward(input: &Tensor, window: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let out_shape = pool_geometry(input, window)?;
    if grad_out.shape() != out_shape.as_slice() {
        return Err(dim_err!(
            "pool gradient shaped {:?}, expected {out_shape:?}",
            grad_out.shape()
        ));
    }
    let mut dx = Tensor::zeros(input.shape());
    for (i, g) in pool_argmax(input, window, &out_shape)
        .into_iter()
        .zip(grad_out.data())
    {
        dx.data_mut()[i] += g;
    }
    Ok(dx)
}

/// Separable moving average of odd `width` along every dimension of
/// `input`, zero padded, same-size output.
pub fn box_filter(input: &Tensor, width: usize) -> Result<Tensor> {
    if width % 2 == 0 {
        return Err(cfg_err!("box filter width must be odd, got {width}"));
    }
    let half = (width / 2) as isize;
    let shape = input.shape().to_vec();
    let strides = strides_of(&shape);
    let mut cur = input.data().to_vec();
    let mut next = vec![0.0; cur.len()];
    for d in 0..shape.len() {
        let (n, stride) = (shape[d] as isize, strides[d]);
        let outer = cur.len() / (shape[d] * stride);
        for o in 0..outer {
            for inner in 0..stride {
                let base = o * shape[d] * stride + inner;
                for i in 0..n {
                    let lo = (i - half).max(0);
                    let hi = (i + half).min(n - 1);
                    let s: f64 = (lo..=hi).map(|j| cur[base + j as usize * stride]).sum();
                    next[base + i as usize * stride] = s / width as f64;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(Tensor::from_vec(&shape, cur)?.finish(input.precision()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn relu_examples() {
        let x = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::full(&[4], -3.0);
        assert_eq!(relu(&neg).max_abs(), 0.0);
    }

    proptest! {
        #[test]
        fn relu_is_idempotent(v in prop::collection::vec(-10.0f64..10.0, 1..50)) {
            let x = Tensor::from_vec(&[v.len()], v).unwrap();
            prop_assert_eq!(relu(&relu(&x)), relu(&x));
        }
    }

    #[test]
    fn concat_shapes_and_leading_block() {
        let a = Tensor::from_fn(&[1, 4, 8, 8], |i| i as f64);
        let b = Tensor::from_fn(&[1, 6, 8, 8], |i| -(i as f64));
        let c = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[1, 10, 8, 8]);
        assert_eq!(slice_channels(&c, 0..4).unwrap(), a);
        assert_eq!(slice_channels(&c, 4..10).unwrap(), b);
        let bad = Tensor::zeros(&[1, 2, 4, 8]);
        assert!(matches!(concat_channels(&[&a, &bad]), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn max_pool_examples() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(max_pool_nd(&x, &[2, 2]).unwrap().data(), &[4.0]);
        let c = Tensor::full(&[2, 3, 4, 4], 0.7);
        let p = max_pool_nd(&c, &[2, 2]).unwrap();
        assert_eq!(p.shape(), &[2, 3, 2, 2]);
        assert!(p.data().iter().all(|&v| v == 0.7));
        let odd = Tensor::zeros(&[1, 1, 3, 4]);
        assert!(matches!(max_pool_nd(&odd, &[2, 2]), Err(crate::Error::Dimension(_))));
    }

    #[test]
    fn box_filter_impulse_and_interior() {
        let x = Tensor::from_vec(&[5], vec![0., 0., 1., 0., 0.]).unwrap();
        let y = box_filter(&x, 5).unwrap();
        for v in y.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let c = Tensor::full(&[9, 9], 3.0);
        let f = box_filter(&c, 3).unwrap();
        for i in 1..8 {
            for j in 1..8 {
                assert!((f.get(&[i, j]) - 3.0).abs() < 1e-12);
            }
        }
        assert!(matches!(box_filter(&x, 4), Err(crate::Error::Config(_))));
    }
}
