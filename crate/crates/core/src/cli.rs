//! The `mitoscope` command line: synth, train, detect and eval.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::data::{load_annotations, load_frames, save_annotations, synth_generate, write_frames, Bounds, Video};
use crate::error::Error;
use crate::evaluation::{
    format_histogram_csv, format_scores_csv, match_detections, prf1, timing_histogram, write_text,
};
use crate::network::{load_checkpoint, save_checkpoint, BranchedModel, ModelKind};
use crate::pipeline::{class_ranking, detect_supervised, detect_unsupervised, training_samples};
use crate::plot::{write_bar_chart, write_line_chart};
use crate::postprocess::{read_detections_csv, write_detections_csv};
use crate::training::{train_with, write_loss_csv};

#[derive(Debug, Parser)]
#[command(name = "mitoscope", version, about = "Event detection in cell time-lapse videos")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic video with division annotations.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory (frames/, annotations.csv, config.toml).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint, loss.csv and loss.png.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory of frame_NNNN.pgm|png files.
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Mode,
        /// Half-open frame range `A:B` used for training.
        #[arg(long, value_parser = parse_range)]
        train_range: Option<Range<usize>>,
        /// Overrides `training.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Detect events with a trained checkpoint.
    Detect {
        #[arg(long)]
        model: PathBuf,
        /// Must agree with the checkpoint's network settings; defaults to
        /// the `<model>.config.toml` written by `train`, if present.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        frames: PathBuf,
        /// Half-open frame range `A:B`; defaults to the whole video.
        #[arg(long, value_parser = parse_range)]
        range: Option<Range<usize>>,
        /// Event class reported as divisions (unsupervised models).
        #[arg(long)]
        division_class: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score detections against annotations.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        annotations: PathBuf,
        /// Temporal thresholds in frames.
        #[arg(long = "th", default_values_t = [1usize, 3])]
        thresholds: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Timing histogram CSV (a PNG chart is written beside it).
        #[arg(long)]
        hist: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    #[value(alias = "unsupervised")]
    Unsup,
    #[value(alias = "supervised")]
    Sup,
}

impl From<Mode> for ModelKind {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Unsup => ModelKind::Unsupervised,
            Mode::Sup => ModelKind::Supervised,
        }
    }
}

/// Parse a half-open `A:B` range.
pub fn parse_range(s: &str) -> std::result::Result<Range<usize>, String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected A:B, got `{s}`"))?;
    let a: usize = a.trim().parse().map_err(|_| format!("bad range start `{a}`"))?;
    let b: usize = b.trim().parse().map_err(|_| format!("bad range end `{b}`"))?;
    if a >= b {
        return Err(format!("empty range {a}:{b}"));
    }
    Ok(a..b)
}

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation; exit code 2.
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env()?;
    Ok(cfg)
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from(name), |p| p.join(name))
}

/// `<file>.config.toml` next to a command's main output.
fn echo_path(out: &Path) -> PathBuf {
    let name = out.file_name().map_or_else(|| "run".into(), |n| n.to_string_lossy().into_owned());
    sibling(out, &format!("{name}.config.toml"))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

fn check_range(range: &Range<usize>, video: &Video) -> CliResult<()> {
    if range.end > video.frame_count() {
        return Err(CliError::Usage(format!(
            "range {}:{} exceeds the {}-frame video",
            range.start,
            range.end,
            video.frame_count()
        )));
    }
    Ok(())
}

pub fn synth(config: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = load_config(config)?;
    let (video, anns) = synth_generate(&cfg.synthetic())?;
    write_frames(&video, &out.join("frames"))?;
    save_annotations(&anns, &out.join("annotations.csv"))?;
    write_text(&cfg.to_toml(), &out.join("config.toml"))?;
    println!("{} frames, {} divisions -> {}", video.frame_count(), anns.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn train(
    config: Option<&Path>,
    frames: &Path,
    annotations: Option<&Path>,
    mode: Mode,
    train_range: Option<Range<usize>>,
    epochs: Option<usize>,
    out: &Path,
) -> CliResult<()> {
    let mut cfg = load_config(config)?;
    if let Some(e) = epochs {
        cfg.training.epochs = e;
    }
    let kind = ModelKind::from(mode);
    if kind == ModelKind::Supervised && annotations.is_none() {
        return Err(CliError::Usage("--mode sup requires --annotations".into()));
    }
    let video = load_frames(frames)?.load_all()?;
    let range = train_range.unwrap_or(0..video.frame_count());
    check_range(&range, &video)?;
    let anns = match annotations {
        Some(p) => Some(load_annotations(
            p,
            Some(Bounds { width: video.width, height: video.height, frames: Some(video.frame_count()) }),
        )?),
        None => None,
    };
    let mut model = BranchedModel::init(cfg.network(), kind, cfg.seed)?;
    let samples = training_samples(&model, &video, range, anns.as_deref(), &cfg.pipeline())?;
    let tc = cfg.train();
    eprintln!("training {} model on {} samples for {} epochs", kind.as_str(), samples.len(), tc.epochs);
    let curve = train_with(&mut model, &samples, &tc, |e, l, _| eprintln!("epoch {e}/{} loss {l:.6}", tc.epochs))?;
    ensure_parent(out)?;
    save_checkpoint(&model, out)?;
    write_loss_csv(&curve, &sibling(out, "loss.csv"))?;
    write_line_chart(&curve, &sibling(out, "loss.png"))?;
    write_text(&cfg.to_toml(), &echo_path(out))?;
    Ok(())
}

pub fn detect(
    model_path: &Path,
    config: Option<&Path>,
    frames: &Path,
    range: Option<Range<usize>>,
    division_class: Option<usize>,
    out: &Path,
) -> CliResult<()> {
    // without --config, fall back to the settings echoed by `train`
    let echoed = echo_path(model_path);
    let config = config.or_else(|| echoed.is_file().then_some(echoed.as_path()));
    let mut cfg = load_config(config)?;
    let model = load_checkpoint(model_path)?;
    if config.is_some() && cfg.network() != model.config {
        return Err(CliError::Run(Error::Config(format!(
            "network settings in the config differ from checkpoint {}",
            model_path.display()
        ))));
    }
    cfg.network = model.config.into();
    let video = load_frames(frames)?.load_all()?;
    let range = range.unwrap_or(0..video.frame_count());
    check_range(&range, &video)?;
    let pc = cfg.pipeline();
    let dets = match model.kind {
        ModelKind::Supervised => detect_supervised(&model, &video, range, &pc)?,
        ModelKind::Unsupervised => {
            let Some(class) = division_class else {
                let ranking = class_ranking(&model, &video, range, &pc)?;
                println!("class,score,patches");
                for r in &ranking {
                    println!("{},{:.6},{}", r.class, r.score, r.patches);
                }
                return Err(CliError::Usage(
                    "unsupervised model: choose the division class from the ranking above with --division-class K"
                        .into(),
                ));
            };
            if class >= model.config.classes {
                return Err(CliError::Usage(format!(
                    "--division-class {class} out of range: the model has {} classes",
                    model.config.classes
                )));
            }
            detect_unsupervised(&model, &video, range, class, &pc)?
        }
    };
    ensure_parent(out)?;
    write_detections_csv(&dets, out)?;
    write_text(&cfg.to_toml(), &echo_path(out))?;
    println!("{} detections -> {}", dets.len(), out.display());
    Ok(())
}

pub fn eval(
    config: Option<&Path>,
    detections: &Path,
    annotations: &Path,
    thresholds: &[usize],
    out: &Path,
    hist: Option<&Path>,
) -> CliResult<()> {
    let cfg = load_config(config)?;
    if thresholds.is_empty() {
        return Err(CliError::Usage("at least one --th is required".into()));
    }
    let dets = read_detections_csv(detections)?;
    let anns = load_annotations(annotations, None)?;
    let spatial = cfg.evaluation.spatial_threshold;
    let rows: Vec<_> = thresholds.iter().map(|&th| (th, prf1(&match_detections(&dets, &anns, spatial, th)))).collect();
    ensure_parent(out)?;
    write_text(&format_scores_csv(&rows), out)?;
    for (th, s) in &rows {
        println!("th={th}: precision {:.3} recall {:.3} f1 {:.3}", s.precision, s.recall, s.f1);
    }
    if let Some(h) = hist {
        let loosest = *thresholds.iter().max().expect("non-empty");
        let bins = timing_histogram(&match_detections(&dets, &anns, spatial, loosest), cfg.evaluation.histogram_max);
        ensure_parent(h)?;
        write_text(&format_histogram_csv(&bins), h)?;
        write_bar_chart(&bins.iter().map(|b| b.1).collect::<Vec<_>>(), &h.with_extension("png"))?;
    }
    write_text(&cfg.to_toml(), &echo_path(out))?;
    Ok(())
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { config, out } => synth(config.as_deref(), &out),
        Command::Train { config, frames, annotations, mode, train_range, epochs, out } => {
            train(config.as_deref(), &frames, annotations.as_deref(), mode, train_range, epochs, &out)
        }
        Command::Detect { model, config, frames, range, division_class, out } => {
            detect(&model, config.as_deref(), &frames, range, division_class, &out)
        }
        Command::Eval { config, detections, annotations, thresholds, out, hist } => {
            eval(config.as_deref(), &detections, &annotations, &thresholds, &out, hist.as_deref())
        }
    }
}

/// Entry point of the binary: exit 0 on success, 2 on usage errors, 1 otherwise.
pub fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CliError::Usage(_) => ExitCode::from(2),
                CliError::Run(_) => ExitCode::FAILURE,
            }
        }
    }
}
