use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::dataset::{build_dataset, load_manifest, load_split, Split};
use super::evaluate::{score_images, write_csv, EvalRow, TIME_REVERSAL};
use super::stats::{wilcoxon_signed_rank, Summary, Wilcoxon};
use super::train::{run_inference, run_training, Checkpoint, CHECKPOINT_FILE};
use crate::error::{cfg_err, Error, Result};
use crate::network::{NetworkConfig, Variant};
use crate::tensor::Tensor;

pub const EVALUATION_FILE: &str = "evaluation.csv";
pub const SUMMARY_CSV: &str = "study_summary.csv";
pub const SUMMARY_TABLE: &str = "study_summary.md";

/// Paired difference `a - b` of per-sample MS-SSIM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub difference: Summary,
    pub wilcoxon: Wilcoxon,
}

impl Comparison {
    pub fn of(a: &[f64], b: &[f64]) -> Comparison {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        Comparison {
            difference: Summary::of(&d),
            wilcoxon: wilcoxon_signed_rank(&d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub n_angles: usize,
    pub network_label: String,
    pub baseline_label: String,
    pub time_reversal: Summary,
    pub baseline: Summary,
    pub network: Summary,
    pub baseline_vs_tr: Comparison,
    pub network_vs_tr: Comparison,
    pub network_vs_baseline: Comparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub levels: Vec<LevelReport>,
}

/// Method names for the two trained networks; identical variants get a
/// `baseline_` prefix on the second so rows stay distinguishable.
pub fn method_labels(network: &NetworkConfig, baseline: &NetworkConfig) -> (String, String) {
    let label = |v: Variant| match v {
        Variant::DdUnet => "dd_unet",
        Variant::FdUnet => "fd_unet",
    };
    let n = label(network.variant).to_string();
    let b = label(baseline.variant);
    let b = if b == n { format!("baseline_{b}") } else { b.to_string() };
    (n, b)
}

/// Per-sample MS-SSIM for each method, paired by sample id.
fn paired(rows: &[EvalRow], methods: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut by_id: HashMap<&str, Vec<Option<f64>>> = HashMap::new();
    let mut order = Vec::new();
    for r in rows {
        let Some(k) = methods.iter().position(|m| *m == r.method) else {
            continue;
        };
        let slot = by_id.entry(&r.sample_id).or_insert_with(|| {
            order.push(r.sample_id.as_str());
            vec![None; methods.len()]
        });
        slot[k] = Some(r.msssim);
    }
    let mut out = vec![Vec::with_capacity(order.len()); methods.len()];
    for id in order {
        for (k, v) in by_id[id].iter().enumerate() {
            let v = v.ok_or_else(|| cfg_err!("sample {id} has no {} score", methods[k]))?;
            out[k].push(v);
        }
    }
    Ok(out)
}

pub fn summarize_level(n_angles: usize, rows: &[EvalRow], network_label: &str, baseline_label: &str) -> Result<LevelReport> {
    let cols = paired(rows, &[TIME_REVERSAL, baseline_label, network_label])?;
    let (tr, base, net) = (&cols[0], &cols[1], &cols[2]);
    if tr.is_empty() {
        return Err(cfg_err!("no evaluated samples at {n_angles} angles"));
    }
    Ok(LevelReport {
        n_angles,
        network_label: network_label.to_string(),
        baseline_label: baseline_label.to_string(),
        time_reversal: Summary::of(tr),
        baseline: Summary::of(base),
        network: Summary::of(net),
        baseline_vs_tr: Comparison::of(base, tr),
        network_vs_tr: Comparison::of(net, tr),
        network_vs_baseline: Comparison::of(net, base),
    })
}

#[derive(Serialize)]
struct SummaryRow {
    n_angles: usize,
    n_test: usize,
    tr_mean: f64,
    tr_std: f64,
    baseline: String,
    baseline_mean: f64,
    baseline_std: f64,
    network: String,
    network_mean: f64,
    network_std: f64,
    baseline_minus_tr_mean: f64,
    baseline_minus_tr_std: f64,
    network_minus_tr_mean: f64,
    network_minus_tr_std: f64,
    network_minus_baseline_mean: f64,
    network_minus_baseline_std: f64,
    network_minus_baseline_p: f64,
}

impl StudyReport {
    /// Markdown table of mean ± std MS-SSIM per method and the paired
    /// differences, one row per sparsity level.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let Some(first) = self.levels.first() else {
            return s;
        };
        let (n, b) = (&first.network_label, &first.baseline_label);
        let _ = writeln!(
            s,
            "| angles | time reversal | {b} | {n} | {b} - TR | {n} - TR | {n} - {b} | p ({n} vs {b}) |"
        );
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|");
        for l in &self.levels {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} | {:.2e} |",
                l.n_angles,
                l.time_reversal,
                l.baseline,
                l.network,
                l.baseline_vs_tr.difference,
                l.network_vs_tr.difference,
                l.network_vs_baseline.difference,
                l.network_vs_baseline.wilcoxon.p_value
            );
        }
        s
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        let rows: Vec<SummaryRow> = self
            .levels
            .iter()
            .map(|l| SummaryRow {
                n_angles: l.n_angles,
                n_test: l.time_reversal.n,
                tr_mean: l.time_reversal.mean,
                tr_std: l.time_reversal.std,
                baseline: l.baseline_label.clone(),
                baseline_mean: l.baseline.mean,
                baseline_std: l.baseline.std,
                network: l.network_label.clone(),
                network_mean: l.network.mean,
                network_std: l.network.std,
                baseline_minus_tr_mean: l.baseline_vs_tr.difference.mean,
                baseline_minus_tr_std: l.baseline_vs_tr.difference.std,
                network_minus_tr_mean: l.network_vs_tr.difference.mean,
                network_minus_tr_std: l.network_vs_tr.difference.std,
                network_minus_baseline_mean: l.network_vs_baseline.difference.mean,
                network_minus_baseline_std: l.network_vs_baseline.difference.std,
                network_minus_baseline_p: l.network_vs_baseline.wilcoxon.p_value,
            })
            .collect();
        write_csv(&rows, dir.join(SUMMARY_CSV))?;
        let path = dir.join(SUMMARY_TABLE);
        fs::write(&path, self.table()).map_err(|e| Error::io(&path, e))?;
        let path = dir.join("study_report.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(&path, e))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

fn reusable_dataset(cfg: &ExperimentConfig, n_angles: usize, dir: &Path) -> bool {
    load_manifest(dir).is_ok_and(|m| m.n_angles == n_angles && m.config == *cfg)
}

fn train_or_reuse(
    cfg: &ExperimentConfig,
    network: &NetworkConfig,
    train: &[super::dataset::Pair],
    test: &[super::dataset::Pair],
    dir: &Path,
) -> Result<Checkpoint> {
    let steps = (cfg.training.epochs * train.len().div_ceil(cfg.training.batch_size)) as u64;
    if dir.join(CHECKPOINT_FILE).exists() {
        if let Ok(ckpt) = Checkpoint::load(dir) {
            if ckpt.network == *network && ckpt.optimizer.step_count == steps {
                log::info!("reusing checkpoint in {}", dir.display());
                return Ok(ckpt);
            }
        }
    }
    Ok(run_training(network, &cfg.training, train, test, Some(dir))?.0)
}

/// Dataset, both networks and all three methods' scores at one sparsity
/// level. Completed datasets and checkpoints under `dir` are reused.
pub fn run_level(cfg: &ExperimentConfig, n_angles: usize, dir: &Path) -> Result<Vec<EvalRow>> {
    let data_dir = dir.join("data");
    if !reusable_dataset(cfg, n_angles, &data_dir) {
        build_dataset(cfg, n_angles, &data_dir)?;
    }
    let manifest = load_manifest(&data_dir)?;
    let train = load_split(&data_dir, &manifest, Split::Train)?;
    let test = load_split(&data_dir, &manifest, Split::Test)?;
    let ids: Vec<String> = test.iter().map(|p| p.id.clone()).collect();
    let inputs: Vec<Tensor> = test.iter().map(|p| p.input.clone()).collect();
    let targets: Vec<Tensor> = test.iter().map(|p| p.target.clone()).collect();

    let (net_label, base_label) = method_labels(&cfg.network, &cfg.baseline);
    let mut rows = score_images(TIME_REVERSAL, &ids, &inputs, &targets)?;
    for (label, net) in [(&base_label, &cfg.baseline), (&net_label, &cfg.network)] {
        let ckpt = train_or_reuse(cfg, net, &train, &test, &dir.join(label))?;
        let outputs = run_inference(&ckpt, &inputs)?;
        rows.extend(score_images(label, &ids, &outputs, &targets)?);
    }
    write_csv(&rows, dir.join(EVALUATION_FILE))?;
    Ok(rows)
}

/// Every sparsity level of `cfg`, written under `cfg.output_dir`.
pub fn run_study(cfg: &ExperimentConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let (net_label, base_label) = method_labels(&cfg.network, &cfg.baseline);
    let mut levels = Vec::new();
    for &n_angles in &cfg.sensors.sparsity_levels {
        log::info!("study level: {n_angles} angles");
        let rows = run_level(cfg, n_angles, &out.join(format!("angles_{n_angles:03}")))?;
        levels.push(summarize_level(n_angles, &rows, &net_label, &base_label)?);
    }
    let report = StudyReport { levels };
    report.save(out)?;
    Ok(report)
}
