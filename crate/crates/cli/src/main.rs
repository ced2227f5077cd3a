use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use pat_core::acoustics::{add_noise_psnr, simulate_forward, time_reversal, SensorData};
use pat_core::phantom::derive_seed;
use pat_core::pipeline::{
    build_dataset, export_image, load_manifest, load_split, run_inference, run_study, run_training, score_images,
    write_csv, Checkpoint, ExperimentConfig, ExportMode, Split, TIME_REVERSAL,
};
use pat_core::tensor::{read_patn, write_patn};
use pat_core::Tensor;

/// Photoacoustic tomography workbench: phantoms, wave simulation, time
/// reversal and post-processing networks.
#[derive(Parser, Debug)]
#[command(name = "pat", version, about)]
struct Cli {
    /// Worker threads for data generation and evaluation
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded numerics for bit-reproducible runs
    #[arg(long, global = true)]
    deterministic: bool,
    /// Verbosity (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment configuration (JSON); the desk study when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's global seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the configuration's output_dir
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Which {
    Network,
    Baseline,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write phantoms as PATN files (and PGM previews)
    PhantomGen {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Simulate sensor data for a phantom
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Phantom to simulate; a seeded one is generated when omitted
        #[arg(long)]
        input: Option<PathBuf>,
        /// Sensor angles; the configuration's n_angles when omitted
        #[arg(long)]
        angles: Option<usize>,
    },
    /// Time-reversal reconstruction of recorded sensor data
    ReconstructTr {
        #[command(flatten)]
        common: Common,
        /// Directory holding `<stem>.patn` and `<stem>.json`
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "sensor_data")]
        stem: String,
    },
    /// Simulate (input, target) pairs for training and testing
    BuildDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        angles: Option<usize>,
    },
    /// Train a network on a dataset
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Which::Network)]
        which: Which,
    },
    /// Apply a trained network to PATN images or a dataset's test split
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, conflicts_with = "data")]
        input: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score time reversal and trained networks on a test split (CSV)
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directories; the method name is the directory name
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
    },
    /// Sparsity study: datasets, both networks and a summary per level
    Study {
        #[command(flatten)]
        common: Common,
    },
    /// Export an image or volume as a 16-bit PGM
    ExportMip {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Mip)]
        mode: Mode,
        #[arg(long, default_value_t = 2)]
        axis: usize,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Mode {
    Slice,
    Mip,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => ExperimentConfig::desk_study(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.validate()?;
        fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
        Ok(cfg)
    }
}

fn preview(image: &Tensor, path: &Path) -> Result<()> {
    let mode = if image.ndim() == 3 { ExportMode::Mip } else { ExportMode::Slice };
    Ok(export_image(image, path, mode, 2)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PhantomGen { common, count } => {
            let cfg = common.load()?;
            for i in 0..count {
                let p = cfg.phantom.generate(derive_seed(cfg.seed, "phantom/cli", i as u64))?;
                let stem = cfg.output_dir.join(format!("phantom_{i:04}"));
                write_patn(&p, stem.with_extension("patn"))?;
                preview(&p, &stem.with_extension("pgm"))?;
            }
            println!("{count} phantom(s) written to {}", cfg.output_dir.display());
        }
        Command::Simulate { common, input, angles } => {
            let cfg = common.load()?;
            let p0 = match input {
                Some(p) => read_patn(&p)?,
                None => cfg.phantom.generate(derive_seed(cfg.seed, "phantom/cli", 0))?,
            };
            let geo = cfg.geometry(angles.unwrap_or(cfg.sensors.n_angles))?;
            if p0.shape() != geo.phantom_extents.as_slice() {
                bail!("phantom {:?} does not match the configured extents {:?}", p0.shape(), geo.phantom_extents);
            }
            let padded = geo.pad_phantom(&p0)?;
            let medium = geo.true_medium(&cfg, &padded)?;
            let mut data = simulate_forward(&padded, &medium, &geo.sensors, geo.num_steps(&cfg), geo.dt(&cfg))?;
            if let Some(db) = cfg.noise_psnr_db {
                data = add_noise_psnr(&data, db, derive_seed(cfg.seed, "noise/cli", 0))?;
            }
            data.save(&cfg.output_dir, "sensor_data")?;
            write_patn(&p0, cfg.output_dir.join("phantom.patn"))?;
            println!(
                "{} sensors x {} steps written to {}",
                data.num_sensors(),
                data.num_steps(),
                cfg.output_dir.display()
            );
        }
        Command::ReconstructTr { common, data, stem } => {
            let cfg = common.load()?;
            let y = SensorData::load(&data, &stem)?;
            let geo = cfg.geometry(y.layout.n_angles)?;
            let assumed = geo.with_sponge(&cfg, geo.assumed.clone())?;
            let image = geo.crop(&time_reversal(&y, &assumed, &geo.sensors)?)?;
            write_patn(&image, cfg.output_dir.join("reconstruction.patn"))?;
            preview(&image, &cfg.output_dir.join("reconstruction.pgm"))?;
            println!("reconstruction written to {}", cfg.output_dir.display());
        }
        Command::BuildDataset { common, angles } => {
            let cfg = common.load()?;
            let m = build_dataset(&cfg, angles.unwrap_or(cfg.sensors.n_angles), &cfg.output_dir)?;
            println!("{} pairs written to {}", m.samples.len(), cfg.output_dir.display());
        }
        Command::Train { common, data, which } => {
            let cfg = common.load()?;
            let manifest = load_manifest(&data)?;
            let train = load_split(&data, &manifest, Split::Train)?;
            let test = load_split(&data, &manifest, Split::Test)?;
            let net = match which {
                Which::Network => &cfg.network,
                Which::Baseline => &cfg.baseline,
            };
            let (_, history) = run_training(net, &cfg.training, &train, &test, Some(&cfg.output_dir))?;
            if let Some(last) = history.epoch_loss.last() {
                println!("{} epochs, final loss {last:.6e}", history.epoch_loss.len());
            }
            println!("checkpoint written to {}", cfg.output_dir.display());
        }
        Command::Infer {
            common,
            checkpoint,
            input,
            data,
        } => {
            let cfg = common.load()?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (names, images): (Vec<String>, Vec<Tensor>) = match data {
                Some(d) => {
                    let m = load_manifest(&d)?;
                    load_split(&d, &m, Split::Test)?.into_iter().map(|p| (p.id, p.input)).unzip()
                }
                None => input
                    .iter()
                    .map(|p| {
                        let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                        Ok((stem, read_patn(p)?))
                    })
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .unzip(),
            };
            if images.is_empty() {
                bail!("no inputs given; pass --input or --data");
            }
            let outputs = run_inference(&ckpt, &images)?;
            for (name, y) in names.iter().zip(&outputs) {
                write_patn(y, cfg.output_dir.join(format!("{name}_output.patn")))?;
            }
            println!("{} output(s) written to {}", outputs.len(), cfg.output_dir.display());
        }
        Command::Evaluate {
            common,
            data,
            checkpoint,
        } => {
            let cfg = common.load()?;
            let m = load_manifest(&data)?;
            let test = load_split(&data, &m, Split::Test)?;
            let ids: Vec<String> = test.iter().map(|p| p.id.clone()).collect();
            let inputs: Vec<Tensor> = test.iter().map(|p| p.input.clone()).collect();
            let targets: Vec<Tensor> = test.iter().map(|p| p.target.clone()).collect();
            let mut rows = score_images(TIME_REVERSAL, &ids, &inputs, &targets)?;
            for dir in &checkpoint {
                let method = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "network".into());
                let outputs = run_inference(&Checkpoint::load(dir)?, &inputs)?;
                rows.extend(score_images(&method, &ids, &outputs, &targets)?);
            }
            let path = cfg.output_dir.join("evaluation.csv");
            write_csv(&rows, &path)?;
            println!("{} rows written to {}", rows.len(), path.display());
        }
        Command::Study { common } => {
            let cfg = common.load()?;
            let report = run_study(&cfg)?;
            print!("{}", report.table());
        }
        Command::ExportMip {
            input,
            output,
            mode,
            axis,
        } => {
            let image = read_patn(&input)?;
            let mode = match mode {
                Mode::Slice => ExportMode::Slice,
                Mode::Mip => ExportMode::Mip,
            };
            export_image(&image, &output, mode, axis)?;
            println!("{} written", output.display());
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    run(cli)
}
