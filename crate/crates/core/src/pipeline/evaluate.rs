use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::metrics::{ms_ssim, psnr, ssim, MsSsimConfig};
use crate::tensor::Tensor;

pub const TIME_REVERSAL: &str = "time_reversal";

/// One CSV row: `sample_id,method,msssim,ssim,psnr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub sample_id: String,
    pub method: String,
    pub msssim: f64,
    pub ssim: f64,
    pub psnr: f64,
}

/// Scores `preds` against `targets` after clamping negatives to zero. PSNR
/// uses a peak of 1, the normalized phantom maximum.
pub fn score_images(method: &str, ids: &[String], preds: &[Tensor], targets: &[Tensor]) -> Result<Vec<EvalRow>> {
    if ids.len() != preds.len() || preds.len() != targets.len() {
        return Err(dim_err!(
            "{} ids, {} predictions, {} targets",
            ids.len(),
            preds.len(),
            targets.len()
        ));
    }
    let ms = MsSsimConfig::default();
    let single = MsSsimConfig::single_scale();
    (0..ids.len())
        .into_par_iter()
        .map(|i| {
            let p = preds[i].map(|v| v.max(0.0));
            let t = &targets[i];
            Ok(EvalRow {
                sample_id: ids[i].clone(),
                method: method.to_string(),
                msssim: ms_ssim(&p, t, &ms)?,
                ssim: ssim(&p, t, &single)?,
                psnr: psnr(&p, t, 1.0)?,
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<EvalRow>> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::io(path, e.into());
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    r.deserialize().map(|row| row.map_err(io)).collect()
}

/// Metric values of `method`, in row order.
pub fn column(rows: &[EvalRow], method: &str, metric: fn(&EvalRow) -> f64) -> Vec<f64> {
    rows.iter().filter(|r| r.method == method).map(metric).collect()
}
