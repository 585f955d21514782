//! Command-line front end. Every subcommand reads the TOML run config
//! (optional, defaults otherwise), writes its outputs as files, and returns
//! 0 on success, 1 on configuration or runtime failure, 2 on usage errors.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::container;
use crate::error::{invalid, Error, Result};
use crate::eval::{evaluate, first_bin_ratios, mse_histogram, MseHistogram};
use crate::nets::{init_model, load_model, save_model, Model};
use crate::synthdata::{
    build_ground_truth, fit_dictionaries, gen_dataset, load_dataset, save_dataset, Split, StoredDataset,
};
use crate::trainer::train_with;

#[derive(Debug, Parser)]
#[command(name = "hkit", version, about = "Feature-hallucination toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration
    #[arg(long)]
    config: Option<PathBuf>,
    /// overrides the seed(s) this subcommand consumes
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit PCA, k-means and GMM on the training split and store them.
    FitDict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// defaults to rewriting --data
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Encode, pool, power-normalize and sketch the ground-truth targets.
    BuildGt {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; writes logs, histograms and checkpoints under --out.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and mAP of a checkpoint on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// checkpoint file or a directory holding model.ckpt
        #[arg(long)]
        model: PathBuf,
        /// defaults to the checkpoint's directory
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Squared-error histograms of every hallucination stream.
    Histogram {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// epoch tag used in the output file names
        #[arg(long, default_value_t = 0)]
        epoch: usize,
    },
    /// Print the manifest of a dataset or checkpoint file.
    DumpManifest { file: PathBuf },
}

pub const CHECKPOINT: &str = "model.ckpt";

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Config with the data, dictionary and ground-truth tables replaced by what
/// the dataset file recorded.
fn config_for(common: &Common, stored: &StoredDataset) -> Result<RunConfig> {
    let mut cfg = load_config(common)?;
    cfg.data = stored.dataset.config.clone();
    if let Some((d, _)) = &stored.dict {
        cfg.dict = d.clone();
    }
    if let Some(gt) = &stored.gt {
        cfg.gt = gt.config.clone();
    }
    Ok(cfg)
}

fn model_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(CHECKPOINT)
    } else {
        p.to_path_buf()
    }
}

fn out_dir_for(model: &Path, out: &Option<PathBuf>) -> PathBuf {
    match out {
        Some(o) => o.clone(),
        None => model_path(model).parent().map(Path::to_path_buf).unwrap_or_default(),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn split_set(stored: &StoredDataset, model: &Model, split: Split) -> Result<crate::trainer::TrainingSet> {
    let ids = if model.config.streams.is_empty() { Vec::new() } else { model.stream_ids() };
    stored.dataset.training_set(stored.gt.as_ref(), split, &ids)
}

fn histograms(model: &Model, stored: &StoredDataset, epoch: usize) -> Result<Vec<MseHistogram>> {
    let mut out = Vec::new();
    if model.halluc.is_empty() {
        return Err(invalid("model has no hallucination streams"));
    }
    for split in [Split::Train, Split::Test] {
        let set = split_set(stored, model, split)?;
        if set.is_empty() {
            continue;
        }
        let outs = model.hallucinate(&set.blocks)?;
        for ((id, _), (o, g)) in model.halluc.iter().zip(outs.iter().zip(&set.gt)) {
            out.push(MseHistogram {
                stream: id.label(model.config.multiplicity),
                split: split.name().into(),
                epoch,
                bins: mse_histogram(o, g)?,
            });
        }
    }
    Ok(out)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { common, out } => {
            let mut cfg = load_config(&common)?;
            if let Some(s) = common.seed {
                cfg.data.seed = s;
            }
            cfg.validate()?;
            let ds = gen_dataset(&cfg.data)?;
            save_dataset(&out, &StoredDataset::new(ds))
        }
        Command::FitDict { common, data, out } => {
            let stored = load_dataset(&data)?;
            let mut cfg = load_config(&common)?;
            cfg.data = stored.dataset.config.clone();
            if let Some(s) = common.seed {
                cfg.dict.seed = s;
            }
            cfg.validate()?;
            let dicts = fit_dictionaries(&stored.dataset, &cfg.dict)?;
            let updated = StoredDataset { dataset: stored.dataset, dict: Some((cfg.dict, dicts)), gt: None };
            save_dataset(out.as_ref().unwrap_or(&data), &updated)
        }
        Command::BuildGt { common, data, out } => {
            let stored = load_dataset(&data)?;
            let (dict_cfg, dicts) = stored
                .dict
                .clone()
                .ok_or_else(|| Error::State("dataset has no dictionaries; run fit-dict first".into()))?;
            let mut cfg = load_config(&common)?;
            cfg.data = stored.dataset.config.clone();
            cfg.dict = dict_cfg;
            if let Some(s) = common.seed {
                cfg.gt.sketch_seed = s;
            }
            cfg.validate()?;
            let gt = build_ground_truth(&stored.dataset, &dicts, &cfg.gt)?;
            let updated = StoredDataset { gt: Some(gt), ..stored };
            save_dataset(out.as_ref().unwrap_or(&data), &updated)
        }
        Command::Train { common, data, out } => {
            let stored = load_dataset(&data)?;
            let mut cfg = config_for(&common, &stored)?;
            if let Some(s) = common.seed {
                cfg.model.seed = s;
                cfg.train.seed = s;
            }
            cfg.validate()?;
            if !cfg.model.streams.is_empty() && stored.gt.is_none() {
                return Err(Error::State("dataset has no ground truth; run build-gt first".into()));
            }
            let model = init_model(&cfg.arch(), cfg.model.seed)?;
            let train_set = split_set(&stored, &model, Split::Train)?;
            let test_set = split_set(&stored, &model, Split::Test)?;
            fs::create_dir_all(&out)?;
            write(&out.join("config.toml"), &cfg.to_toml()?)?;
            let snapshots = cfg.train.snapshot_epochs.clone();
            let (model, log) = train_with(&cfg.train, model, &train_set, &test_set, |epoch, m| {
                if snapshots.contains(&epoch) {
                    save_model(&out.join(format!("e{epoch}")).join(CHECKPOINT), m)?;
                }
                Ok(())
            })?;
            save_model(&out.join("final").join(CHECKPOINT), &model)?;
            write(&out.join("log.txt"), &log.to_text())?;
            write(&out.join("steps.txt"), &log.steps_text())?;
            for h in &log.histograms {
                write(&out.join(h.file_name()), &h.to_text())?;
            }
            write(&out.join("hist_ratios.txt"), &first_bin_ratios(&log.histograms))?;
            Ok(())
        }
        Command::Eval { common, data, model, out } => {
            let _ = load_config(&common)?;
            let stored = load_dataset(&data)?;
            let m = load_model(&model_path(&model))?;
            let set = split_set(&stored, &m, Split::Test)?;
            let metrics = evaluate(&m, &set.blocks, &set.gt, &set.labels)?;
            let absent = metrics.absent_classes();
            if !absent.is_empty() {
                eprintln!("warning: classes {absent:?} absent from the test split; excluded from mAP");
            }
            write(&out_dir_for(&model, &out).join("metrics.txt"), &metrics.to_text())
        }
        Command::Histogram { common, data, model, out, epoch } => {
            let _ = load_config(&common)?;
            let stored = load_dataset(&data)?;
            let m = load_model(&model_path(&model))?;
            let dir = out_dir_for(&model, &out);
            let hists = histograms(&m, &stored, epoch)?;
            for h in &hists {
                write(&dir.join(h.file_name()), &h.to_text())?;
            }
            write(&dir.join(format!("hist_ratios_e{epoch}.txt")), &first_bin_ratios(&hists))
        }
        Command::DumpManifest { file } => {
            let first = container::read_first(&file)?;
            let text = String::from_utf8(first.payload)
                .map_err(|_| Error::Format { section: first.name.clone(), message: "not UTF-8".into() })?;
            print!("{text}");
            Ok(())
        }
    }
}
