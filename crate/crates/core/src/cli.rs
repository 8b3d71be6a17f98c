//! The `discourse` command-line tool. [`run`] returns the process exit code:
//! 0 on success, 2 for bad input, 1 for internal failures. Error lines on
//! stderr start with `error:`.

use std::collections::HashMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::classifier::{Checkpoint, DiscourseModel};
use crate::config::{RunConfig, CONFIG_ECHO_FILE};
use crate::corpus::{compute_stats, load_dataset, make_split, quality_screen, Dataset, DatasetSplit, DiscourseLabel};
use crate::encoders::{write_captions, CaptionSource};
use crate::error::{Error, Result};
use crate::evaluation::{
    ablation_rows, ablation_table, export_heatmap, run_ablation, significance, AblationGrid, EvalReport, Significance,
};
use crate::pipeline::{check_split, fit, predictions, score, FeatureExtractor, Prediction};

#[derive(Debug, Parser)]
#[command(name = "discourse", version, about = "Image-text discourse relation classifier", args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print label counts and mean text lengths.
    Stats {
        #[arg(long)]
        dataset: PathBuf,
        /// Also write stats.json and histograms.tsv into a run directory here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check that every record parses and every image decodes.
    Validate {
        #[arg(long)]
        dataset: PathBuf,
        /// Allow posts without a label.
        #[arg(long)]
        unlabeled: bool,
        /// Run the quality screens and list flagged posts.
        #[arg(long)]
        quality: bool,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Write an 80/10/10 train/validation/test split.
    Split {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precompute image captions into a jsonl file.
    Caption {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long = "caption-source", default_value = "stub:0")]
        caption_source: String,
        /// Defaults to captions.jsonl next to the dataset file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and score it on the test split.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Score a checkpoint on one part of a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Without a split every post in the dataset is scored.
        #[arg(long)]
        split: Option<PathBuf>,
        #[arg(long, default_value = "test", value_parser = ["train", "validation", "test"])]
        subset: String,
        /// Predictions file of another system for a significance test.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Train one model per cell of an ablation grid.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, value_parser = ["modalities", "length", "fusion"])]
        grid: String,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Export attention heatmaps for one post.
    Visualize {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        post: String,
        #[arg(long)]
        per_head: bool,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Print the effective configuration.
    Config {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

/// Configuration flags. Each one maps to the config key of the same name.
#[derive(Debug, Default, Args)]
struct ConfigArgs {
    /// Flat `key = value` file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    heads: Option<String>,
    /// Image grid side; the encoder yields grid-size^2 regions.
    #[arg(long)]
    grid_size: Option<String>,
    #[arg(long)]
    image_channels: Option<String>,
    #[arg(long)]
    text_cap: Option<String>,
    #[arg(long)]
    caption_cap: Option<String>,
    /// multihead, concat, attention or coattention.
    #[arg(long)]
    fusion: Option<String>,
    /// Comma-separated subset of text,image,caption.
    #[arg(long)]
    modalities: Option<String>,
    #[arg(long)]
    backend_text: Option<String>,
    #[arg(long)]
    backend_image: Option<String>,
    #[arg(long)]
    caption_source: Option<String>,
    /// Any other config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("seed", &self.seed),
            ("batch-size", &self.batch_size),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("patience", &self.patience),
            ("hidden", &self.hidden),
            ("heads", &self.heads),
            ("grid-size", &self.grid_size),
            ("image-channels", &self.image_channels),
            ("text-cap", &self.text_cap),
            ("caption-cap", &self.caption_cap),
            ("fusion", &self.fusion),
            ("modalities", &self.modalities),
            ("backend-text", &self.backend_text),
            ("backend-image", &self.backend_image),
            ("caption-source", &self.caption_source),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let _ = write!(err, "{}", e.render());
            return 2;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if matches!(e, Error::MissingCaption(_) | Error::CaptionsUnavailable(_)) {
                let _ = writeln!(
                    err,
                    "hint: precompute captions with `discourse caption --dataset <file>` (writes captions.jsonl \
                     next to the dataset), pass --caption-source stub:<seed>, or leave captions out with \
                     --modalities text,image"
                );
            }
            if e.is_user_error() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Stats { dataset, out: dir } => cmd_stats(&dataset, dir.as_deref(), out),
        Command::Validate {
            dataset,
            unlabeled,
            quality,
            config,
        } => cmd_validate(&dataset, !unlabeled, quality, &config.resolve()?, out),
        Command::Split { dataset, seed, out: path } => cmd_split(&dataset, seed, &path, out),
        Command::Caption {
            dataset,
            caption_source,
            out: path,
        } => cmd_caption(&dataset, &caption_source, path, out),
        Command::Train {
            dataset,
            split,
            config,
            out: dir,
        } => cmd_train(&dataset, &split, &config.resolve()?, &dir, out).map(|_| ()),
        Command::Eval {
            checkpoint,
            dataset,
            split,
            subset,
            compare,
            config,
            out: dir,
        } => cmd_eval(&checkpoint, &dataset, split.as_deref(), &subset, compare.as_deref(), &config, &dir, out),
        Command::Ablate {
            dataset,
            split,
            grid,
            config,
            out: dir,
        } => cmd_ablate(&dataset, &split, grid.parse()?, &config.resolve()?, &dir, out),
        Command::Visualize {
            checkpoint,
            dataset,
            post,
            per_head,
            config,
            out: dir,
        } => cmd_visualize(&checkpoint, &dataset, &post, per_head, &config, &dir, out),
        Command::Config { config } => {
            let cfg = config.resolve()?;
            write!(out, "{}", cfg.echo()).map_err(stdout_err)
        }
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Creates `<out>/<kind>-<local timestamp>`, adding a counter on collision.
fn run_dir(out: &Path, kind: &str) -> Result<PathBuf> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    let base = format!("{kind}-{stamp}");
    let mut dir = out.join(&base);
    let mut n = 1;
    while dir.exists() {
        dir = out.join(format!("{base}-{n}"));
        n += 1;
    }
    fs::create_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_echo(dir: &Path, cfg: &RunConfig) -> Result<()> {
    let path = dir.join(CONFIG_ECHO_FILE);
    fs::write(&path, cfg.echo()).map_err(|e| Error::io(&path, e))
}

fn report_line(report: &EvalReport) -> String {
    let mut line = String::new();
    for (label, v) in DiscourseLabel::ALL.iter().zip(report.table_row()) {
        line.push_str(&format!("{} {v:.2}  ", label.abbrev()));
    }
    line.push_str(&format!("wF1 {:.2}", report.weighted_f1));
    line
}

fn cmd_stats(dataset: &Path, dir: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let data = load_dataset(dataset, true)?;
    let stats = compute_stats(&data.posts)?;
    write!(out, "{}", stats.table()).map_err(stdout_err)?;
    if let Some(dir) = dir {
        let run = run_dir(dir, "stats")?;
        write_json(&run.join("stats.json"), &stats)?;
        let hist = run.join("histograms.tsv");
        let mut buf = Vec::new();
        stats.write_histograms(&mut buf).map_err(|e| Error::io(&hist, e))?;
        fs::write(&hist, buf).map_err(|e| Error::io(&hist, e))?;
        writeln!(out, "run directory: {}", run.display()).map_err(stdout_err)?;
    }
    Ok(())
}

fn cmd_validate(dataset: &Path, require_labels: bool, quality: bool, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let data = load_dataset(dataset, require_labels)?;
    let verdicts: Vec<Result<_>> = data
        .posts
        .par_iter()
        .map(|p| quality_screen(p, &data.image_path(p), &cfg.quality))
        .collect();
    let mut first_error = None;
    for v in verdicts {
        match v {
            Ok(v) if quality && !v.flags.is_empty() => {
                let flags: Vec<String> = v.flags.iter().map(|f| serde_json::to_string(f).unwrap_or_default()).collect();
                writeln!(out, "flagged\t{}\t{}", v.id, flags.join(",").replace('"', "")).map_err(stdout_err)?;
            }
            Ok(_) => {}
            Err(e) => {
                writeln!(out, "invalid\t{e}").map_err(stdout_err)?;
                first_error.get_or_insert(e);
            }
        }
    }
    match first_error {
        Some(e) => Err(e),
        None => {
            writeln!(out, "ok: {} posts", data.len()).map_err(stdout_err)?;
            Ok(())
        }
    }
}

fn cmd_split(dataset: &Path, seed: u64, path: &Path, out: &mut dyn Write) -> Result<()> {
    let data = load_dataset(dataset, false)?;
    let split = make_split(&data.posts, seed)?;
    split.write(path)?;
    writeln!(
        out,
        "train {}  validation {}  test {}",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    )
    .map_err(stdout_err)
}

fn cmd_caption(dataset: &Path, spec: &str, path: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let data = load_dataset(dataset, false)?;
    if spec.starts_with("precomputed:") {
        return Err(Error::Config("caption generation needs a captioner, not a precomputed file".into()));
    }
    let source = CaptionSource::from_spec(spec, &data.root)?;
    let captions = data
        .posts
        .par_iter()
        .map(|p| source.caption_image(&p.id, &data.image_path(p)).map(|c| (p.id.clone(), c)))
        .collect::<Result<Vec<_>>>()?;
    let path = path.unwrap_or_else(|| data.root.join("captions.jsonl"));
    write_captions(&path, captions.iter().map(|(i, c)| (i.as_str(), c.as_str())))?;
    writeln!(out, "wrote {} captions to {}", captions.len(), path.display()).map_err(stdout_err)
}

fn cmd_train(dataset: &Path, split: &Path, cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<PathBuf> {
    let data = load_dataset(dataset, true)?;
    let split = DatasetSplit::read(split)?;
    let run = run_dir(dir, "train")?;
    write_echo(&run, cfg)?;
    let result = fit(cfg, &data, &split)?;
    let outcome = &result.outcome;
    Checkpoint::new(
        &outcome.model,
        &cfg.train,
        &cfg.text_backend,
        &cfg.image_backend,
        Some(split.seed),
        outcome.best_epoch,
        outcome.class_weights,
    )
    .save(&run.join("checkpoint"))?;
    write_jsonl(&run.join("train_log.jsonl"), &outcome.log)?;
    write_json(&run.join("report.json"), &result.test_report.record())?;
    write_jsonl(&run.join("predictions.jsonl"), &result.test_predictions)?;
    for rec in &outcome.log {
        writeln!(
            out,
            "epoch {:>3}  loss {:.6}  val wF1 {:.2}",
            rec.epoch, rec.train_loss, rec.val_weighted_f1
        )
        .map_err(stdout_err)?;
    }
    writeln!(out, "best epoch {}", outcome.best_epoch).map_err(stdout_err)?;
    writeln!(out, "test  {}", report_line(&result.test_report)).map_err(stdout_err)?;
    writeln!(out, "run directory: {}", run.display()).map_err(stdout_err)?;
    Ok(run)
}

/// Config for a command that runs a saved model: flags and file first,
/// then the checkpoint's model, training and encoder settings on top.
fn checkpoint_config(args: &ConfigArgs, ck: &Checkpoint) -> Result<RunConfig> {
    let mut cfg = args.resolve()?;
    cfg.model = ck.model_config.clone();
    cfg.train = ck.train_config.clone();
    cfg.text_backend = ck.text_backend.clone();
    cfg.image_backend = ck.image_backend.clone();
    Ok(cfg)
}

fn read_predictions(path: &Path) -> Result<HashMap<String, DiscourseLabel>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        if map.insert(p.id.clone(), p.label).is_some() {
            return Err(Error::DuplicateId(p.id));
        }
    }
    Ok(map)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    split: Option<&Path>,
    subset: &str,
    compare: Option<&Path>,
    args: &ConfigArgs,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.model()?;
    let cfg = checkpoint_config(args, &ck)?;
    let data = load_dataset(dataset, true)?;
    let ids = match split {
        Some(path) => {
            let split = DatasetSplit::read(path)?;
            check_split(&data, &split)?;
            match subset {
                "train" => split.train,
                "validation" => split.validation,
                _ => split.test,
            }
        }
        None => data.posts.iter().map(|p| p.id.clone()).collect(),
    };
    let posts = FeatureExtractor::from_config(&cfg)?.encode(&data, &ids)?;
    let preds = predictions(&model, &posts)?;
    let mut report = score(&preds)?;

    if let Some(path) = compare {
        let other = read_predictions(path)?;
        let ours: HashMap<&str, ()> = preds.iter().map(|p| (p.id.as_str(), ())).collect();
        let missing: Vec<String> = preds
            .iter()
            .filter(|p| !other.contains_key(&p.id))
            .map(|p| p.id.clone())
            .chain(other.keys().filter(|id| !ours.contains_key(id.as_str())).cloned())
            .collect();
        if !missing.is_empty() {
            return Err(Error::IdSetMismatch(missing));
        }
        let a: Vec<DiscourseLabel> = preds.iter().map(|p| p.label).collect();
        let b: Vec<DiscourseLabel> = preds.iter().map(|p| other[&p.id]).collect();
        let truths: Vec<DiscourseLabel> = preds.iter().map(|p| p.truth.expect("scored posts are labelled")).collect();
        let p_value = significance(&a, &b, &truths, cfg.significance_trials, cfg.train.seed)?;
        report.significance = Some(Significance {
            baseline: path.display().to_string(),
            p_value,
        });
    }

    let run = run_dir(dir, "eval")?;
    write_echo(&run, &cfg)?;
    write_json(&run.join("report.json"), &report.record())?;
    write_jsonl(&run.join("predictions.jsonl"), &preds)?;
    writeln!(out, "{subset}  {}", report_line(&report)).map_err(stdout_err)?;
    if let Some(s) = &report.significance {
        writeln!(out, "p-value vs {}: {}", s.baseline, s.p_value).map_err(stdout_err)?;
    }
    writeln!(out, "run directory: {}", run.display()).map_err(stdout_err)
}

fn cmd_ablate(dataset: &Path, split: &Path, grid: AblationGrid, cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let data = load_dataset(dataset, true)?;
    let split = DatasetSplit::read(split)?;
    let run = run_dir(dir, "ablate")?;
    write_echo(&run, cfg)?;
    let results = run_ablation(&grid.specs(cfg), &data, &split, cfg)?;
    let table = ablation_table(&results);
    write_json(&run.join("ablation.json"), &ablation_rows(&results))?;
    let tsv = run.join("ablation.tsv");
    fs::write(&tsv, &table).map_err(|e| Error::io(&tsv, e))?;
    write!(out, "{table}").map_err(stdout_err)?;
    writeln!(out, "run directory: {}", run.display()).map_err(stdout_err)
}

fn cmd_visualize(
    checkpoint: &Path,
    dataset: &Path,
    post_id: &str,
    per_head: bool,
    args: &ConfigArgs,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    if !ck.model_config.fusion.has_attention() {
        return Err(Error::NoAttention);
    }
    let model: DiscourseModel = ck.model()?;
    let cfg = checkpoint_config(args, &ck)?;
    let data: Dataset = load_dataset(dataset, false)?;
    let post = data.get(post_id).ok_or_else(|| Error::UnknownId(post_id.to_string()))?;
    let encoded = FeatureExtractor::from_config(&cfg)?.encode(&data, &[post_id.to_string()])?;
    let fused = model.fuse(&encoded[0])?;
    let run = run_dir(dir, "visualize")?;
    write_echo(&run, &cfg)?;
    let files = export_heatmap(post_id, &data.image_path(post), &fused, &run, per_head)?;
    for path in files.head_grids.iter().chain([&files.mean_grid, &files.overlay]) {
        writeln!(out, "{}", path.display()).map_err(stdout_err)?;
    }
    Ok(())
}
