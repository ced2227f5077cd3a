//! Central finite-difference verification of [`OpGraph::backward`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::OpGraph;
use super::loss::{mse_loss, mse_loss_grad};
use crate::error::{cfg_err, Result};
use crate::tensor::{Precision, Tensor};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step, in `[1e-7, 1e-3]`.
    pub epsilon: f64,
    /// Minimum number of parameter scalars to compare (all of them if fewer exist).
    pub samples: usize,
    /// Also compare the gradient with respect to every input element.
    pub check_input: bool,
    /// Target of the MSE objective; zeros when absent.
    pub target: Option<Tensor>,
    /// Gradients below this magnitude are compared on an absolute scale.
    pub abs_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: 1e-5,
            samples: 256,
            check_input: false,
            target: None,
            abs_floor: 1e-7,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Scalars skipped because a perturbation crossed a ReLU / max-pool kink.
    pub skipped_kinks: usize,
    /// Location of the worst mismatch, e.g. `enc0.init.weight[3]`.
    pub worst: String,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares backward gradients of `mse(graph(input), 0)` with central
/// differences over a random subsample of parameters.
pub fn grad_check(graph: &mut OpGraph, input: &Tensor, epsilon: f64) -> Result<GradCheckReport> {
    grad_check_with(
        graph,
        input,
        &GradCheckOptions {
            epsilon,
            ..Default::default()
        },
    )
}

pub fn grad_check_with(
    graph: &mut OpGraph,
    input: &Tensor,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    if !(1e-7..=1e-3).contains(&opts.epsilon) {
        return Err(cfg_err!(
            "finite-difference epsilon {} outside [1e-7, 1e-3]",
            opts.epsilon
        ));
    }
    if input.precision() == Precision::Single
        || graph.params().tensors().any(|t| t.precision() == Precision::Single)
    {
        return Err(cfg_err!(
            "gradient checking needs double precision; single precision is too coarse"
        ));
    }
    let out = graph.forward(input)?;
    let target = match &opts.target {
        Some(t) => t.clone(),
        None => Tensor::zeros(out.shape()),
    };
    let (_, dout) = mse_loss_grad(&out, &target)?;
    let grads = graph.backward(&dout)?;
    let signature = graph.kink_signature(input)?;
    let eps = opts.epsilon;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
        worst: String::new(),
    };
    let record = |report: &mut GradCheckReport, err: f64, loc: String| {
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = loc;
        }
    };

    let mut candidates: Vec<(usize, usize)> = graph
        .params()
        .tensors()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |k| (p, k)))
        .collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));

    let mut param_checked = 0;
    for (p, k) in candidates {
        if param_checked >= opts.samples {
            break;
        }
        let orig = graph.params().get(p).data()[k];
        let eval = |graph: &mut OpGraph, v: f64| -> Result<(f64, u64)> {
            graph.params_mut().get_mut(p).data_mut()[k] = v;
            let loss = mse_loss(&graph.evaluate(input)?, &target)?;
            Ok((loss, graph.kink_signature(input)?))
        };
        let (lp, sp) = eval(graph, orig + eps)?;
        let (lm, sm) = eval(graph, orig - eps)?;
        graph.params_mut().get_mut(p).data_mut()[k] = orig;
        if sp != signature || sm != signature {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (lp - lm) / (2.0 * eps);
        let err = relative_error(grads.params[p][k], numeric, opts.abs_floor);
        record(&mut report, err, format!("{}[{k}]", graph.params().name(p)));
        param_checked += 1;
    }

    if opts.check_input {
        let mut x = input.clone();
        for k in 0..x.len() {
            let orig = x.data()[k];
            x.data_mut()[k] = orig + eps;
            let lp = mse_loss(&graph.evaluate(&x)?, &target)?;
            let sp = graph.kink_signature(&x)?;
            x.data_mut()[k] = orig - eps;
            let lm = mse_loss(&graph.evaluate(&x)?, &target)?;
            let sm = graph.kink_signature(&x)?;
            x.data_mut()[k] = orig;
            if sp != signature || sm != signature {
                report.skipped_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * eps);
            let err = relative_error(grads.input.data()[k], numeric, opts.abs_floor);
            record(&mut report, err, format!("input[{k}]"));
        }
    }
    Ok(report)
}
