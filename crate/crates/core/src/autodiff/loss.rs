use crate::error::Result;
use crate::tensor::Tensor;

/// Mean over all elements of the squared difference.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    pred.check_same_shape(target)?;
    let n = pred.len() as f64;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n)
}

/// Loss value and its gradient with respect to `pred`.
pub fn mse_loss_grad(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let loss = mse_loss(pred, target)?;
    let scale = 2.0 / pred.len() as f64;
    let grad = pred.zip_map(target, |p, t| scale * (p - t))?;
    Ok((loss, grad))
}
