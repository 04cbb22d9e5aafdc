//! Command-line front end: `segment`, `eval`, `synth` and `ablate`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O or malformed
//! input, 3 numeric failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::encoder::{
    label_path_for, load_labels, load_stream, synth_stream, write_stream, FeatureStream, StreamFormat,
    SynthSpec,
};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate, write_json, EvalOptions, EvalReport};
use crate::predictor::{CellKind, ErrorNorm, PredictorConfig};
use crate::segmenter::{
    export_trace, run_stream, AdaptiveConfig, GatingConfig, InputScaling, LrInterpretation, Segmentation,
    StreamOptions,
};

/// Every knob of a segmentation run. `input_dim` is taken from the data.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub cell: CellKind,
    pub hidden_dim: usize,
    pub bptt_window: usize,
    pub init_stddev: f64,
    pub forget_bias: f64,
    pub error_norm: ErrorNorm,
    pub seed: u64,
    pub history: usize,
    pub threshold: f64,
    pub refractory: usize,
    pub warmup: Option<usize>,
    pub adaptive: bool,
    pub lambda_init: f64,
    pub delta_minus: f64,
    pub delta_plus: f64,
    pub interpretation: LrInterpretation,
    pub reset_on_boundary: bool,
    pub input_scaling: InputScaling,
    /// `None` picks the format from the file extension.
    pub format: Option<StreamFormat>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PredictorConfig::default();
        let g = GatingConfig::default();
        let a = AdaptiveConfig::default();
        let o = StreamOptions::default();
        Self {
            cell: p.cell,
            hidden_dim: p.hidden_dim,
            bptt_window: p.bptt_window,
            init_stddev: p.init_stddev,
            forget_bias: p.forget_bias,
            error_norm: p.error_norm,
            seed: p.seed,
            history: g.history,
            threshold: g.threshold,
            refractory: g.refractory,
            warmup: g.warmup,
            adaptive: a.enabled,
            lambda_init: a.lambda_init,
            delta_minus: a.delta_minus,
            delta_plus: a.delta_plus,
            interpretation: a.interpretation,
            reset_on_boundary: o.reset_on_boundary,
            input_scaling: o.input_scaling,
            format: None,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_format(value: &str) -> Result<Option<StreamFormat>> {
    match value {
        "auto" => Ok(None),
        "csv" => Ok(Some(StreamFormat::Csv)),
        "binary" => Ok(Some(StreamFormat::Binary)),
        other => Err(Error::Config(format!("format: expected auto, csv or binary, got {other:?}"))),
    }
}

fn format_name(f: Option<StreamFormat>) -> &'static str {
    match f {
        None => "auto",
        Some(StreamFormat::Csv) => "csv",
        Some(StreamFormat::Binary) => "binary",
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 19] = [
        "cell",
        "hidden_dim",
        "bptt_window",
        "init_stddev",
        "forget_bias",
        "error_norm",
        "seed",
        "history",
        "threshold",
        "refractory",
        "warmup",
        "adaptive",
        "lambda_init",
        "delta_minus",
        "delta_plus",
        "interpretation",
        "reset_on_boundary",
        "input_scaling",
        "format",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "cell" => self.cell = v.parse()?,
            "hidden_dim" => self.hidden_dim = parse_value(key, v)?,
            "bptt_window" => self.bptt_window = parse_value(key, v)?,
            "init_stddev" => self.init_stddev = parse_value(key, v)?,
            "forget_bias" => self.forget_bias = parse_value(key, v)?,
            "error_norm" => self.error_norm = v.parse()?,
            "seed" => self.seed = parse_value(key, v)?,
            "history" => self.history = parse_value(key, v)?,
            "threshold" => self.threshold = parse_value(key, v)?,
            "refractory" => self.refractory = parse_value(key, v)?,
            "warmup" => self.warmup = if v == "auto" { None } else { Some(parse_value(key, v)?) },
            "adaptive" => self.adaptive = parse_bool(key, v)?,
            "lambda_init" => self.lambda_init = parse_value(key, v)?,
            "delta_minus" => self.delta_minus = parse_value(key, v)?,
            "delta_plus" => self.delta_plus = parse_value(key, v)?,
            "interpretation" => self.interpretation = v.parse()?,
            "reset_on_boundary" => self.reset_on_boundary = parse_bool(key, v)?,
            "input_scaling" => self.input_scaling = v.parse()?,
            "format" => self.format = parse_format(v)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "cell" => self.cell.as_str().to_string(),
            "hidden_dim" => self.hidden_dim.to_string(),
            "bptt_window" => self.bptt_window.to_string(),
            // `{:?}` keeps the shortest round-tripping representation
            "init_stddev" => format!("{:?}", self.init_stddev),
            "forget_bias" => format!("{:?}", self.forget_bias),
            "error_norm" => self.error_norm.as_str().to_string(),
            "seed" => self.seed.to_string(),
            "history" => self.history.to_string(),
            "threshold" => format!("{:?}", self.threshold),
            "refractory" => self.refractory.to_string(),
            "warmup" => self.warmup.map_or_else(|| "auto".to_string(), |w| w.to_string()),
            "adaptive" => self.adaptive.to_string(),
            "lambda_init" => format!("{:?}", self.lambda_init),
            "delta_minus" => format!("{:?}", self.delta_minus),
            "delta_plus" => format!("{:?}", self.delta_plus),
            "interpretation" => self.interpretation.as_str().to_string(),
            "reset_on_boundary" => self.reset_on_boundary.to_string(),
            "input_scaling" => self.input_scaling.as_str().to_string(),
            "format" => format_name(self.format).to_string(),
            _ => return None,
        })
    }

    /// Flat `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of [`RunConfig::to_text`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn predictor(&self, input_dim: usize) -> PredictorConfig {
        PredictorConfig {
            cell: self.cell,
            input_dim,
            hidden_dim: self.hidden_dim,
            bptt_window: self.bptt_window,
            init_stddev: self.init_stddev,
            forget_bias: self.forget_bias,
            error_norm: self.error_norm,
            seed: self.seed,
        }
    }

    pub fn gating(&self) -> GatingConfig {
        GatingConfig {
            history: self.history,
            threshold: self.threshold,
            refractory: self.refractory,
            warmup: self.warmup,
        }
    }

    pub fn adaptive_config(&self) -> AdaptiveConfig {
        AdaptiveConfig {
            enabled: self.adaptive,
            lambda_init: self.lambda_init,
            delta_minus: self.delta_minus,
            delta_plus: self.delta_plus,
            interpretation: self.interpretation,
        }
    }

    pub fn stream_options(&self) -> StreamOptions {
        StreamOptions {
            reset_on_boundary: self.reset_on_boundary,
            input_scaling: self.input_scaling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.predictor(1).validate()?;
        self.gating().validate()?;
        self.adaptive_config().validate()
    }
}

/// Runs the configured pipeline over one stream.
pub fn segment_stream(cfg: &RunConfig, stream: &FeatureStream<f64>) -> Result<crate::segmenter::RunOutput<f64>> {
    run_stream(
        stream.features().iter().cloned(),
        stream.source_id(),
        &cfg.predictor(stream.dim()),
        &cfg.gating(),
        &cfg.adaptive_config(),
        &cfg.stream_options(),
    )
}

#[derive(Debug, Parser)]
#[command(name = "evseg", version, about = "Online event segmentation from next-frame prediction error")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment one feature stream.
    Segment(SegmentArgs),
    /// Score segmentations against frame labels.
    Eval(EvalArgs),
    /// Write synthetic feature streams with labels.
    Synth(SynthArgs),
    /// Sweep cell × adaptive × history × threshold over a labelled corpus.
    Ablate(AblateArgs),
}

/// Flags mirroring [`RunConfig`]; any flag given overrides the config file.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    pub print_config: bool,
    #[arg(long)]
    pub cell: Option<String>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub bptt_window: Option<usize>,
    #[arg(long)]
    pub init_stddev: Option<f64>,
    #[arg(long)]
    pub forget_bias: Option<f64>,
    /// l2sq or l1
    #[arg(long)]
    pub error_norm: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prediction history n of the quality filter.
    #[arg(long)]
    pub history: Option<usize>,
    /// Gate threshold ψ.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub refractory: Option<usize>,
    /// Frames without boundaries at the start; `auto` uses the history length.
    #[arg(long)]
    pub warmup: Option<String>,
    /// true or false
    #[arg(long)]
    pub adaptive: Option<String>,
    #[arg(long)]
    pub lambda_init: Option<f64>,
    #[arg(long)]
    pub delta_minus: Option<f64>,
    #[arg(long)]
    pub delta_plus: Option<f64>,
    /// divide_high or multiply_high
    #[arg(long)]
    pub interpretation: Option<String>,
    /// true or false
    #[arg(long)]
    pub reset_on_boundary: Option<String>,
    /// none or first_frame
    #[arg(long)]
    pub input_scaling: Option<String>,
    /// auto, csv or binary
    #[arg(long)]
    pub format: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut put = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        put("cell", self.cell.clone());
        put("hidden_dim", self.hidden_dim.map(|v| v.to_string()));
        put("bptt_window", self.bptt_window.map(|v| v.to_string()));
        put("init_stddev", self.init_stddev.map(|v| format!("{v:?}")));
        put("forget_bias", self.forget_bias.map(|v| format!("{v:?}")));
        put("error_norm", self.error_norm.clone());
        put("seed", self.seed.map(|v| v.to_string()));
        put("history", self.history.map(|v| v.to_string()));
        put("threshold", self.threshold.map(|v| format!("{v:?}")));
        put("refractory", self.refractory.map(|v| v.to_string()));
        put("warmup", self.warmup.clone());
        put("adaptive", self.adaptive.clone());
        put("lambda_init", self.lambda_init.map(|v| format!("{v:?}")));
        put("delta_minus", self.delta_minus.map(|v| format!("{v:?}")));
        put("delta_plus", self.delta_plus.map(|v| format!("{v:?}")));
        put("interpretation", self.interpretation.clone());
        put("reset_on_boundary", self.reset_on_boundary.clone());
        put("input_scaling", self.input_scaling.clone());
        put("format", self.format.clone());
        out
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for (k, v) in self.overrides() {
            cfg.set(k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Feature stream (CSV, or binary .psf/.bin).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// A segmentation JSON file, or a directory of them.
    #[arg(long)]
    pub pred: PathBuf,
    /// A label CSV, or a directory holding `<stem>.labels.csv` for every
    /// prediction. Defaults to the prediction directory.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Class id treated as background (excluded from matching).
    #[arg(long)]
    pub background: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub num_events: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 40)]
    pub min_len: usize,
    #[arg(long, default_value_t = 80)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1.0)]
    pub cluster_spread: f64,
    #[arg(long, default_value_t = 8.0)]
    pub cluster_separation: f64,
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    /// Seed of the first stream; stream k uses `seed + k`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// csv or binary
    #[arg(long, default_value = "csv")]
    pub format: String,
}

impl SynthArgs {
    fn spec(&self, k: usize) -> SynthSpec {
        SynthSpec {
            num_events: self.num_events,
            dim: self.dim,
            min_len: self.min_len,
            max_len: self.max_len,
            cluster_spread: self.cluster_spread,
            cluster_separation: self.cluster_separation,
            noise_std: self.noise_std,
            seed: self.seed + k as u64,
        }
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Labelled stream, or a directory of them. Without it a synthetic
    /// corpus is generated from the `synth` flags.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "rnn,lstm")]
    pub cells: Vec<String>,
    /// Adaptive learning settings to try (true/false).
    #[arg(long = "adaptive-grid", value_delimiter = ',', default_value = "true,false")]
    pub adaptive_grid: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "5")]
    pub histories: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1.5")]
    pub thresholds: Vec<f64>,
    /// Number of synthetic streams when no input is given.
    #[arg(long, default_value_t = 20)]
    pub synth_count: usize,
    #[arg(long, default_value_t = 0)]
    pub synth_seed: u64,
    #[arg(long, default_value_t = 32)]
    pub synth_dim: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Segment(a) => cmd_segment(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Ablate(a) => cmd_ablate(&a),
    }
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_input(path: &Path, format: Option<StreamFormat>) -> Result<FeatureStream<f64>> {
    load_stream(path, format.unwrap_or_else(|| StreamFormat::from_path(path)))
}

pub fn cmd_segment(args: &SegmentArgs) -> Result<()> {
    let cfg = args.config.resolve()?;
    if args.config.print_config {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let started = Instant::now();
    let stream = load_input(&args.input, cfg.format)?;
    let out = segment_stream(&cfg, &stream)?;

    create_out_dir(&args.out)?;
    write_text(&args.out.join("config.txt"), &cfg.to_text())?;
    out.segmentation.write_json(&args.out.join("segments.json"))?;
    export_trace(&out.gating, &args.out.join("trace.csv"))?;
    out.predictor.save_checkpoint(&args.out.join("model.psp"))?;

    println!(
        "frames={} boundaries={} segments={} wall_time={:.3}s",
        stream.len(),
        out.gating.boundaries.len(),
        out.segmentation.segments.len(),
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// `(prediction, labels)` file pairs for `eval`.
fn eval_pairs(pred: &Path, labels: Option<&Path>) -> Result<Vec<(PathBuf, PathBuf)>> {
    if !pred.is_dir() {
        let labels = labels
            .ok_or_else(|| Error::Usage("--labels is required when --pred is a file".into()))?
            .to_path_buf();
        return Ok(vec![(pred.to_path_buf(), labels)]);
    }
    let label_dir = labels.unwrap_or(pred);
    let mut jsons: Vec<PathBuf> = fs::read_dir(pred)
        .map_err(|e| Error::io(pred, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    jsons.sort();
    if jsons.is_empty() {
        return Err(Error::Usage(format!("no .json segmentations in {}", pred.display())));
    }
    Ok(jsons
        .into_iter()
        .map(|p| {
            let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            let l = label_dir.join(format!("{stem}.labels.csv"));
            (p, l)
        })
        .collect())
}

fn eval_one(pred: &Path, labels: &Path, opts: &EvalOptions) -> Result<EvalReport> {
    let seg = Segmentation::read_json(pred)?;
    let gt = load_labels(labels)?;
    evaluate(&seg, &gt, opts).map_err(|e| match e {
        Error::Usage(m) => Error::Usage(format!("{}: {m}", pred.display())),
        other => other,
    })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let opts = EvalOptions {
        background: args.background,
    };
    let pairs = eval_pairs(&args.pred, args.labels.as_deref())?;
    let corpus = args.pred.is_dir();
    let reports: Vec<EvalReport> = pairs
        .par_iter()
        .map(|(p, l)| eval_one(p, l, &opts))
        .collect::<Result<_>>()?;

    create_out_dir(&args.out)?;
    let mut echo = format!("pred = {}\n", args.pred.display());
    if let Some(l) = &args.labels {
        let _ = writeln!(echo, "labels = {}", l.display());
    }
    let _ = writeln!(echo, "background = {}", args.background.map_or("none".into(), |b| b.to_string()));
    write_text(&args.out.join("config.txt"), &echo)?;

    let report_path = args.out.join("report.json");
    let (mof, iou, f1) = if corpus {
        let mut csv = String::from("source_id,frames,predicted_segments,mof,iou,f1\n");
        for r in &reports {
            let _ = writeln!(
                csv,
                "{},{},{},{:.6},{:.6},{:.6}",
                r.source_id, r.frames, r.predicted_segments, r.mof, r.iou, r.f1
            );
        }
        write_text(&args.out.join("per_video.csv"), &csv)?;
        let c = aggregate(reports);
        write_json(&c, &report_path)?;
        (c.mof, c.iou, c.f1)
    } else {
        let r = &reports[0];
        write_json(r, &report_path)?;
        (r.mof, r.iou, r.f1)
    };
    println!("videos={} mof={mof:.4} iou={iou:.4} f1={f1:.4}", pairs.len());
    Ok(())
}

fn parse_stream_format(s: &str) -> Result<StreamFormat> {
    match parse_format(s)? {
        Some(f) => Ok(f),
        None => Err(Error::Usage("synth needs an explicit format: csv or binary".into())),
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let format = parse_stream_format(&args.format)?;
    if args.count == 0 {
        return Err(Error::Usage("--count must be >= 1".into()));
    }
    let streams: Vec<FeatureStream<f64>> = (0..args.count)
        .map(|k| synth_stream(&args.spec(k)))
        .collect::<Result<_>>()?;
    create_out_dir(&args.out)?;
    let ext = match format {
        StreamFormat::Csv => "csv",
        StreamFormat::Binary => "psf",
    };
    for s in &streams {
        write_stream(s, &args.out.join(format!("{}.{ext}", s.source_id())), format)?;
    }
    let spec = args.spec(0);
    let echo = format!(
        "num_events = {}\ndim = {}\nmin_len = {}\nmax_len = {}\ncluster_spread = {:?}\n\
         cluster_separation = {:?}\nnoise_std = {:?}\nseed = {}\ncount = {}\nformat = {}\n",
        spec.num_events,
        spec.dim,
        spec.min_len,
        spec.max_len,
        spec.cluster_spread,
        spec.cluster_separation,
        spec.noise_std,
        spec.seed,
        args.count,
        args.format
    );
    write_text(&args.out.join("config.txt"), &echo)?;
    println!("streams={} frames={}", streams.len(), streams.iter().map(|s| s.len()).sum::<usize>());
    Ok(())
}

fn is_stream_file(p: &Path) -> bool {
    let name = p.file_name().unwrap_or_default().to_string_lossy();
    if name.ends_with(".labels.csv") {
        return false;
    }
    matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "psf" | "bin"))
}

fn load_corpus(input: &Path, format: Option<StreamFormat>) -> Result<Vec<FeatureStream<f64>>> {
    let files = if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| Error::io(input, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| is_stream_file(p))
            .collect();
        files.sort();
        files
    } else {
        vec![input.to_path_buf()]
    };
    let streams: Vec<FeatureStream<f64>> = files
        .iter()
        .map(|f| load_input(f, format))
        .collect::<Result<_>>()?;
    for (s, f) in streams.iter().zip(&files) {
        if s.labels().is_none() {
            return Err(Error::Usage(format!(
                "{} has no labels ({} missing)",
                f.display(),
                label_path_for(f).display()
            )));
        }
    }
    if streams.is_empty() {
        return Err(Error::Usage(format!("no streams found in {}", input.display())));
    }
    Ok(streams)
}

/// One cell of the ablation grid, averaged over the corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub config_hash: String,
    pub cell: CellKind,
    pub adaptive: bool,
    pub history: usize,
    pub threshold: f64,
    pub streams: usize,
    pub boundaries: f64,
    pub segments: f64,
    pub mof: f64,
    pub iou: f64,
    pub f1: f64,
}

pub const ABLATION_HEADER: &str = "config_hash,cell,adaptive,history,threshold,streams,boundaries,segments,mof,iou,f1";

impl AblationRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{:?},{},{:.4},{:.4},{:.6},{:.6},{:.6}",
            self.config_hash,
            self.cell.as_str(),
            self.adaptive,
            self.history,
            self.threshold,
            self.streams,
            self.boundaries,
            self.segments,
            self.mof,
            self.iou,
            self.f1
        )
    }
}

/// Expands the grid over `base` and scores every configuration on `corpus`.
/// Rows come back sorted by config hash.
pub fn ablate(
    base: &RunConfig,
    cells: &[CellKind],
    adaptive: &[bool],
    histories: &[usize],
    thresholds: &[f64],
    corpus: &[FeatureStream<f64>],
) -> Result<Vec<AblationRow>> {
    let mut grid = Vec::new();
    for &cell in cells {
        for &a in adaptive {
            for &history in histories {
                for &threshold in thresholds {
                    let cfg = RunConfig {
                        cell,
                        adaptive: a,
                        history,
                        threshold,
                        ..base.clone()
                    };
                    cfg.validate()?;
                    grid.push(cfg);
                }
            }
        }
    }
    if grid.is_empty() || corpus.is_empty() {
        return Err(Error::Usage("ablation grid is empty".into()));
    }

    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|g| (0..corpus.len()).map(move |s| (g, s)))
        .collect();
    let scored: Vec<(usize, EvalReport, usize)> = jobs
        .par_iter()
        .map(|&(g, s)| {
            let stream = &corpus[s];
            let out = segment_stream(&grid[g], stream)?;
            let labels = stream.labels().expect("corpus streams carry labels");
            let report = evaluate(&out.segmentation, labels, &EvalOptions::default())?;
            Ok((g, report, out.gating.boundaries.len()))
        })
        .collect::<Result<_>>()?;

    let n = corpus.len() as f64;
    let mut rows: Vec<AblationRow> = grid
        .iter()
        .enumerate()
        .map(|(g, cfg)| {
            let mine: Vec<&(usize, EvalReport, usize)> = scored.iter().filter(|r| r.0 == g).collect();
            let mean = |f: &dyn Fn(&(usize, EvalReport, usize)) -> f64| mine.iter().map(|r| f(r)).sum::<f64>() / n;
            AblationRow {
                config_hash: cfg.hash(),
                cell: cfg.cell,
                adaptive: cfg.adaptive,
                history: cfg.history,
                threshold: cfg.threshold,
                streams: corpus.len(),
                boundaries: mean(&|r| r.2 as f64),
                segments: mean(&|r| r.1.predicted_segments as f64),
                mof: mean(&|r| r.1.mof),
                iou: mean(&|r| r.1.iou),
                f1: mean(&|r| r.1.f1),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.config_hash.cmp(&b.config_hash));
    Ok(rows)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let base = args.config.resolve()?;
    if args.config.print_config {
        print!("{}", base.to_text());
        return Ok(());
    }
    let cells: Vec<CellKind> = args.cells.iter().map(|c| c.parse()).collect::<Result<_>>()?;
    let adaptive: Vec<bool> = args
        .adaptive_grid
        .iter()
        .map(|v| parse_bool("adaptive-grid", v))
        .collect::<Result<_>>()?;
    let corpus = match &args.input {
        Some(path) => load_corpus(path, base.format)?,
        None => (0..args.synth_count)
            .map(|k| {
                synth_stream(&SynthSpec {
                    dim: args.synth_dim,
                    seed: args.synth_seed + k as u64,
                    ..SynthSpec::default()
                })
            })
            .collect::<Result<_>>()?,
    };
    let rows = ablate(&base, &cells, &adaptive, &args.histories, &args.thresholds, &corpus)?;

    create_out_dir(&args.out)?;
    let mut echo = base.to_text();
    let _ = writeln!(echo, "# grid (not part of the run config)");
    let _ = writeln!(echo, "# cells = {}", args.cells.join(","));
    let _ = writeln!(echo, "# adaptive_grid = {}", args.adaptive_grid.join(","));
    let _ = writeln!(
        echo,
        "# histories = {}",
        args.histories.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",")
    );
    let _ = writeln!(
        echo,
        "# thresholds = {}",
        args.thresholds.iter().map(|t| format!("{t:?}")).collect::<Vec<_>>().join(",")
    );
    match &args.input {
        Some(p) => {
            let _ = writeln!(echo, "# input = {}", p.display());
        }
        None => {
            let _ = writeln!(
                echo,
                "# synth_count = {}\n# synth_seed = {}\n# synth_dim = {}",
                args.synth_count, args.synth_seed, args.synth_dim
            );
        }
    }
    write_text(&args.out.join("config.txt"), &echo)?;

    let mut csv = String::from(ABLATION_HEADER);
    csv.push('\n');
    for r in &rows {
        csv.push_str(&r.to_csv_line());
        csv.push('\n');
    }
    write_text(&args.out.join("results.csv"), &csv)?;
    println!("configs={} streams={}", rows.len(), corpus.len());
    Ok(())
}
