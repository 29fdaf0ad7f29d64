//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration or usage error,
//! 3 data error, 4 failed bound verification.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use crate::config::Config;
use crate::dataset::{compute_stats, parse_sparse_file, write_sparse_file, Dataset, SparseFile};
use crate::encoder::BagOfEmbeddings;
use crate::error::{Error, Result};
use crate::infer::{
    build_fusion_training_set, fit_tree, parse_predictions, shortlist_size, write_predictions, FusionTree, Predictor,
};
use crate::metrics::{evaluate, propensities};
use crate::negmine::Strategy;
use crate::synth::generate;
use crate::theory::verify_bound;
use crate::trainer::{eval_points, train_m1, train_m2, write_log, ClassifierBank};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_BOUND: i32 = 4;

pub const ENCODER_FILE: &str = "encoder.ckpt";
pub const CLASSIFIER_FILE: &str = "classifiers.ckpt";
pub const FUSION_FILE: &str = "fusion.bin";
pub const FREQUENCY_FILE: &str = "label_frequencies.txt";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Parser)]
#[command(name = "xcmine", version, about = "Extreme multi-label training with cluster-based negative mining")]
struct Cli {
    /// TOML configuration file; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print relevance statistics of the training data.
    Stats,
    /// Train the encoder, the classifiers and the fusion tree.
    Train,
    /// Write top-k predictions for the test points.
    Predict {
        /// Directory holding the trained model (defaults to --out).
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Score a prediction file against the test labels.
    Evaluate {
        /// Prediction TSV (defaults to <out>/predictions.tsv).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Check the negative-mining bound on the current embeddings.
    VerifyBound {
        #[arg(long)]
        radius: Option<f64>,
        /// Trained model directory; a freshly initialized encoder otherwise.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Train the encoder with each miner strategy and log P@1 per epoch.
    CompareMiners {
        /// Comma-separated strategy names.
        #[arg(long, value_delimiter = ',')]
        strategies: Option<Vec<String>>,
    },
    /// Generate a synthetic dataset.
    Synth,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Stats => "stats",
            Command::Train => "train",
            Command::Predict { .. } => "predict",
            Command::Evaluate { .. } => "evaluate",
            Command::VerifyBound { .. } => "verify-bound",
            Command::CompareMiners { .. } => "compare-miners",
            Command::Synth => "synth",
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    threads: usize,
    config: &'a Config,
}

/// Outcome of a successful command.
enum Outcome {
    Done,
    BoundFailed,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_FAILURE,
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("NGAME_LOG", "warn")).try_init();
    match execute(&cli) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::BoundFailed) => EXIT_BOUND,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: &Cli) -> Result<Outcome> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    // The global pool can only be set once per process; later calls keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Command::VerifyBound { radius: Some(r), .. } = cli.command {
        cfg.verify.radius = r;
    }
    if let Command::CompareMiners { strategies: Some(list) } = &cli.command {
        cfg.compare.strategies = list.iter().map(|s| s.trim().parse()).collect::<Result<Vec<Strategy>>>()?;
    }
    if let Command::Predict { k: Some(k), .. } = cli.command {
        cfg.infer.k = k;
    }
    cfg.validate()?;
    let config_dir = cli.config.as_deref().and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
    fs::create_dir_all(&cli.out)?;
    write_manifest(&cli.out, cli.command.name(), cli.threads, &cfg)?;
    info!("running {} with seed {}", cli.command.name(), cfg.seed);

    let ctx = Ctx { cfg: &cfg, out: &cli.out, base: &config_dir };
    match &cli.command {
        Command::Stats => ctx.stats(),
        Command::Train => ctx.train(),
        Command::Predict { model, .. } => ctx.predict(model.as_deref().unwrap_or(&cli.out)),
        Command::Evaluate { predictions } => {
            let default = cli.out.join("predictions.tsv");
            ctx.evaluate(predictions.as_deref().unwrap_or(&default))
        }
        Command::VerifyBound { model, .. } => ctx.verify(model.as_deref()),
        Command::CompareMiners { .. } => ctx.compare(),
        Command::Synth => ctx.synth(),
    }
}

fn write_manifest(out: &Path, command: &str, threads: usize, cfg: &Config) -> Result<()> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: cfg.seed,
        threads,
        config: cfg,
    };
    let text = toml::to_string(&m).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    fs::write(out.join(MANIFEST_FILE), text)?;
    Ok(())
}

struct Ctx<'a> {
    cfg: &'a Config,
    out: &'a Path,
    /// Relative data paths are resolved against the config file's directory.
    base: &'a Path,
}

impl Ctx<'_> {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn required(&self, p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        p.as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config(format!("{key} is not set")))
    }

    fn label_file(&self) -> Result<SparseFile> {
        parse_sparse_file(self.required(&self.cfg.data.labels, "data.labels")?)
    }

    fn train_data(&self) -> Result<Dataset> {
        let points = parse_sparse_file(self.required(&self.cfg.data.train, "data.train")?)?;
        Dataset::from_files(points, self.label_file()?)
    }

    fn test_data(&self) -> Result<Dataset> {
        let points = parse_sparse_file(self.required(&self.cfg.data.test, "data.test")?)?;
        Dataset::from_files(points, self.label_file()?)
    }

    /// Training data from the configured files, or the configured synthetic
    /// task when no training file is set.
    fn train_or_synth(&self) -> Result<Dataset> {
        if self.cfg.data.train.is_some() {
            self.train_data()
        } else {
            info!("data.train not set; using the synthetic task");
            Ok(generate(&self.cfg.synth_spec())?.dataset)
        }
    }

    fn stats(&self) -> Result<Outcome> {
        let report = compute_stats(&self.train_data()?).report();
        print!("{report}");
        fs::write(self.out.join("stats.txt"), report)?;
        Ok(Outcome::Done)
    }

    fn train(&self) -> Result<Outcome> {
        let cfg = self.cfg;
        let ds = self.train_data()?;
        let mut enc = BagOfEmbeddings::random(ds.num_features(), cfg.model.dim, cfg.encoder_seed())?;
        let m1_log = train_m1(&ds, &mut enc, &cfg.m1_config())?;
        enc.save(self.out.join(ENCODER_FILE))?;
        write_log(self.out.join("m1_log.csv"), &m1_log)?;
        info!("encoder trained for {} epochs", m1_log.len());

        let (bank, m2_log) = train_m2(&ds, &enc, &cfg.m2_config())?;
        bank.save(self.out.join(CLASSIFIER_FILE))?;
        write_log(self.out.join("m2_log.csv"), &m2_log)?;
        let freqs = ds.label_frequencies();
        write_frequencies(&self.out.join(FREQUENCY_FILE), &freqs)?;

        if cfg.infer.fusion {
            let mode = cfg.infer.index.mode(ds.num_labels(), cfg.index_seed());
            let predictor = Predictor::new(&enc, &bank, ds.label_features(), freqs, mode)?;
            let val = eval_points(&ds, cfg.infer.validation_points, cfg.derived_seed(7));
            let xs: Vec<_> = val.iter().map(|&i| ds.point(i).clone()).collect();
            let ys: Vec<_> = val.iter().map(|&i| ds.positives(i).to_vec()).collect();
            let size = shortlist_size(cfg.infer.k, cfg.infer.shortlist, ds.num_labels());
            let samples = build_fusion_training_set(&predictor, &xs, &ys, size)?;
            let tree = fit_tree(&samples, &cfg.infer.tree_params())?;
            tree.save(self.out.join(FUSION_FILE))?;
            info!("fusion tree fitted on {} pairs, depth {}", samples.len(), tree.depth());
        }
        Ok(Outcome::Done)
    }

    fn predict(&self, model: &Path) -> Result<Outcome> {
        let cfg = self.cfg;
        let test = self.test_data()?;
        let enc = BagOfEmbeddings::load(model.join(ENCODER_FILE))?;
        let bank = ClassifierBank::load(model.join(CLASSIFIER_FILE))?;
        let freqs = read_frequencies(&model.join(FREQUENCY_FILE))?;
        let tree_path = model.join(FUSION_FILE);
        let tree = if cfg.infer.fusion && tree_path.exists() { Some(FusionTree::load(&tree_path)?) } else { None };
        let mode = cfg.infer.index.mode(bank.num_labels(), cfg.index_seed());
        let predictor = Predictor::new(&enc, &bank, test.label_features(), freqs, mode)?
            .with_tree(tree)
            .with_shortlist(cfg.infer.shortlist);
        let preds = predictor.predict_batch(test.points(), cfg.infer.k)?;
        write_predictions(self.out.join("predictions.tsv"), &preds)?;
        Ok(Outcome::Done)
    }

    fn evaluate(&self, predictions: &Path) -> Result<Outcome> {
        let cfg = self.cfg;
        let test = self.test_data()?;
        let preds = parse_predictions(&fs::read_to_string(predictions)?)?;
        if preds.len() != test.num_points() {
            return Err(Error::Value(format!(
                "{} prediction rows for {} test points",
                preds.len(),
                test.num_points()
            )));
        }
        if let Some(&bad) = preds.iter().flatten().find(|&&l| l >= test.num_labels()) {
            return Err(Error::Range(format!("predicted label {bad} >= L={}", test.num_labels())));
        }
        let reference = if cfg.data.train.is_some() { self.train_data()? } else { test.clone() };
        let props = propensities(&reference.label_frequencies(), reference.num_points(), cfg.metrics.a, cfg.metrics.b)?;
        let (report, rows) = evaluate(&preds, test.relevance(), &props, &cfg.metrics.ks)?;
        let text = report.to_text();
        print!("{text}");
        fs::write(self.out.join("metrics.txt"), &text)?;
        let mut per_point = String::new();
        if let Some(first) = rows.first() {
            let names: Vec<&str> = first.values.iter().map(|(k, _)| k.as_str()).collect();
            let _ = writeln!(per_point, "point,{}", names.join(","));
        }
        for r in &rows {
            let vals: Vec<String> = r.values.iter().map(|(_, v)| v.to_string()).collect();
            let _ = writeln!(per_point, "{},{}", r.point, vals.join(","));
        }
        fs::write(self.out.join("metrics_per_point.csv"), per_point)?;
        Ok(Outcome::Done)
    }

    fn verify(&self, model: Option<&Path>) -> Result<Outcome> {
        let cfg = self.cfg;
        let ds = self.train_or_synth()?;
        let enc = match model {
            Some(dir) => BagOfEmbeddings::load(dir.join(ENCODER_FILE))?,
            None => BagOfEmbeddings::random(ds.num_features(), cfg.model.dim, cfg.encoder_seed())?,
        };
        let report = verify_bound(&ds, &enc, &cfg.verify_config())?;
        let text = report.to_text();
        print!("{text}");
        fs::write(self.out.join("verify.txt"), &text)?;
        Ok(if report.holds { Outcome::Done } else { Outcome::BoundFailed })
    }

    fn compare(&self) -> Result<Outcome> {
        let cfg = self.cfg;
        let ds = self.train_or_synth()?;
        let mut csv = String::from("epoch,strategy,p_at_1,seconds,overhead_seconds\n");
        for &strategy in &cfg.compare.strategies {
            let mut enc = BagOfEmbeddings::random(ds.num_features(), cfg.model.dim, cfg.encoder_seed())?;
            let mut tc = cfg.m1_config();
            tc.miner.strategy = strategy;
            tc.epochs = cfg.compare.epochs;
            tc.stop_at_p1 = cfg.compare.stop_at_p1;
            if tc.eval_sample == 0 {
                return Err(Error::Config("compare-miners needs train.eval_sample >= 1".into()));
            }
            let log = train_m1(&ds, &mut enc, &tc)?;
            for e in &log {
                let p1 = e.p_at_1.map_or_else(String::new, |p| p.to_string());
                let _ = writeln!(csv, "{},{},{},{},{}", e.epoch, strategy, p1, e.seconds, e.overhead_seconds);
            }
            info!("{strategy}: {} epochs", log.len());
        }
        fs::write(self.out.join("compare_miners.csv"), csv)?;
        Ok(Outcome::Done)
    }

    fn synth(&self) -> Result<Outcome> {
        let data = generate(&self.cfg.synth_spec())?;
        write_sparse_file(self.out.join("train.txt"), &data.dataset.to_point_file())?;
        write_sparse_file(self.out.join("labels.txt"), &data.dataset.to_label_file())?;
        write_sparse_file(self.out.join("test.txt"), &data.test)?;
        let assign: String = data
            .point_cluster
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{i},{c}\n"))
            .collect();
        fs::write(self.out.join("point_clusters.csv"), format!("point,cluster\n{assign}"))?;
        Ok(Outcome::Done)
    }
}

fn write_frequencies(path: &Path, freqs: &[usize]) -> Result<()> {
    let text: String = freqs.iter().map(|f| format!("{f}\n")).collect();
    fs::write(path, text)?;
    Ok(())
}

fn read_frequencies(path: &Path) -> Result<Vec<usize>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::Format(format!("{}: line {}: bad frequency", path.display(), i + 1)))
        })
        .collect()
}
