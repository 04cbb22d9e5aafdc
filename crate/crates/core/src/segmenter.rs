//! Single-pass event segmentation driven by prediction error.
//!
//! Each incoming frame is compared with the forecast made on the previous
//! frame. The error is judged against a low-pass running average `P_q`; a
//! transient spike fires the gate and opens a new segment. The same error,
//! compared with the mean error of the current segment, picks the learning
//! rate for the one gradient step taken per frame.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Vector};
use crate::predictor::{Predictor, PredictorConfig, UpdateOutcome};

/// Ratio denominators never go below this.
pub const QUALITY_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GatingConfig {
    /// Error history `n` of the low-pass filter.
    pub history: usize,
    /// Boundary threshold `ψ_e` on `E_P(t) / P_q(t−1)`.
    pub threshold: f64,
    /// Frames after a boundary during which no new boundary may fire.
    pub refractory: usize,
    /// Frames at the start of the stream during which the gate is held at 0.
    /// `None` means "same as `history`".
    pub warmup: Option<usize>,
}

impl Default for GatingConfig {
    fn default() -> Self {
        Self {
            history: 5,
            threshold: 1.5,
            refractory: 0,
            warmup: None,
        }
    }
}

impl GatingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history == 0 {
            return Err(Error::Config("gating history n must be >= 1".into()));
        }
        if !(self.threshold > 1.0 && self.threshold.is_finite()) {
            return Err(Error::Config(format!(
                "gating threshold must be > 1, got {}",
                self.threshold
            )));
        }
        Ok(())
    }

    pub fn warmup_frames(&self) -> usize {
        self.warmup.unwrap_or(self.history)
    }
}

/// Which way the high-error branch scales the initial rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LrInterpretation {
    /// High error: `λ_init / Δ−` (100× faster at defaults). Low error: `λ_init · Δ+`.
    DivideHigh,
    /// High error: `λ_init · Δ−`. Low error: `λ_init · Δ+`.
    MultiplyHigh,
}

impl LrInterpretation {
    pub fn as_str(self) -> &'static str {
        match self {
            LrInterpretation::DivideHigh => "divide_high",
            LrInterpretation::MultiplyHigh => "multiply_high",
        }
    }
}

impl std::str::FromStr for LrInterpretation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "divide_high" => Ok(LrInterpretation::DivideHigh),
            "multiply_high" => Ok(LrInterpretation::MultiplyHigh),
            other => Err(Error::Config(format!(
                "unknown interpretation {other:?} (expected divide_high or multiply_high)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveConfig {
    pub enabled: bool,
    pub lambda_init: f64,
    pub delta_minus: f64,
    pub delta_plus: f64,
    pub interpretation: LrInterpretation,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            lambda_init: 1e-6,
            delta_minus: 1e-2,
            delta_plus: 1e-3,
            interpretation: LrInterpretation::DivideHigh,
        }
    }
}

impl AdaptiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_init > 0.0 && self.lambda_init.is_finite()) {
            return Err(Error::Config("lambda_init must be > 0".into()));
        }
        for (name, d) in [("delta_minus", self.delta_minus), ("delta_plus", self.delta_plus)] {
            if !(d > 0.0 && d <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {d}")));
            }
        }
        Ok(())
    }
}

/// How frames are rescaled before prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum InputScaling {
    None,
    /// Divide every frame by the RMS value of the first frame. Causal, so the
    /// stream is still read once, and it makes the whole pipeline invariant to
    /// a global rescaling of the features.
    FirstFrame,
}

impl InputScaling {
    pub fn as_str(self) -> &'static str {
        match self {
            InputScaling::None => "none",
            InputScaling::FirstFrame => "first_frame",
        }
    }
}

impl std::str::FromStr for InputScaling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(InputScaling::None),
            "first_frame" => Ok(InputScaling::FirstFrame),
            other => Err(Error::Config(format!(
                "unknown input scaling {other:?} (expected none or first_frame)"
            ))),
        }
    }
}

/// Options of the streaming loop that are not part of gating or the rate rule.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamOptions {
    /// Zero `(h, m)` whenever a boundary fires.
    pub reset_on_boundary: bool,
    pub input_scaling: InputScaling,
}

impl Default for StreamOptions {
    fn default() -> Self {
        Self {
            reset_on_boundary: false,
            input_scaling: InputScaling::None,
        }
    }
}

/// `P_q(t) = P_q(t−1) + (E_P(t) − P_q(t−1)) / n`
pub fn update_quality<T: Scalar>(quality_prev: T, error: T, n: usize) -> T {
    assert!(n >= 1, "update_quality: n must be >= 1");
    quality_prev + (error - quality_prev) / T::lit(n as f64)
}

/// Fires when `E_P(t) / max(P_q(t−1), ε)` strictly exceeds `threshold`.
pub fn gate<T: Scalar>(error: T, quality_prev: T, threshold: T) -> bool {
    let denom = quality_prev.max(T::lit(QUALITY_FLOOR));
    error / denom > threshold
}

/// Learning rate chosen from the current error and the segment's mean error.
pub fn adaptive_lr(error: f64, segment_mean: f64, cfg: &AdaptiveConfig) -> f64 {
    if error > segment_mean {
        match cfg.interpretation {
            LrInterpretation::DivideHigh => cfg.lambda_init / cfg.delta_minus,
            LrInterpretation::MultiplyHigh => cfg.lambda_init * cfg.delta_minus,
        }
    } else if error < segment_mean {
        cfg.lambda_init * cfg.delta_plus
    } else {
        cfg.lambda_init
    }
}

/// One row of the per-frame trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub error: f64,
    pub quality: f64,
    pub gate: bool,
    pub lr: f64,
}

/// Running state of the gate and of the rate rule.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GatingState {
    /// `P_q(t)`; `None` until the first error is seen.
    pub quality: Option<f64>,
    segment_error_sum: f64,
    segment_error_count: usize,
    pub frames_since_boundary: usize,
    pub boundaries: Vec<usize>,
    pub error_log: Vec<TraceRow>,
    /// Frames whose error was non-finite and were left out of learning.
    pub skipped: Vec<usize>,
}

impl GatingState {
    /// Mean error since the last boundary, `None` for an empty segment.
    pub fn segment_mean(&self) -> Option<f64> {
        (self.segment_error_count > 0)
            .then(|| self.segment_error_sum / self.segment_error_count as f64)
    }

    fn open_segment(&mut self) {
        self.segment_error_sum = 0.0;
        self.segment_error_count = 0;
        self.frames_since_boundary = 0;
    }

    fn record_segment_error(&mut self, e: f64) {
        self.segment_error_sum += e;
        self.segment_error_count += 1;
    }
}

/// A contiguous run of frames `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub id: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub source_id: String,
    pub total_frames: usize,
    pub segments: Vec<Segment>,
}

impl Segmentation {
    /// Segments opened at each boundary frame. Boundaries outside
    /// `1..total_frames` and duplicates are ignored.
    pub fn from_boundaries(boundaries: &[usize], total_frames: usize, source_id: impl Into<String>) -> Self {
        let mut cuts: Vec<usize> = boundaries
            .iter()
            .copied()
            .filter(|&b| b > 0 && b < total_frames)
            .collect();
        cuts.sort_unstable();
        cuts.dedup();
        let mut starts = vec![0];
        starts.extend(cuts);
        let segments = starts
            .iter()
            .enumerate()
            .map(|(id, &start)| Segment {
                start,
                end: starts.get(id + 1).copied().unwrap_or(total_frames),
                id,
            })
            .collect();
        Self {
            source_id: source_id.into(),
            total_frames,
            segments,
        }
    }

    /// Segments from per-frame labels: a new segment at every label change.
    pub fn from_labels(labels: &[usize], source_id: impl Into<String>) -> Self {
        let cuts: Vec<usize> = (1..labels.len()).filter(|&t| labels[t] != labels[t - 1]).collect();
        Self::from_boundaries(&cuts, labels.len(), source_id)
    }

    pub fn boundaries(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }

    /// Segment id of every frame.
    pub fn frame_labels(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.total_frames);
        for s in &self.segments {
            out.extend(std::iter::repeat_n(s.id, s.len()));
        }
        out
    }

    /// Checks that the segments partition `[0, total_frames)` with ids `0, 1, …`.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for (k, s) in self.segments.iter().enumerate() {
            if s.start != next || s.end <= s.start || s.id != k {
                return Err(Error::Usage(format!(
                    "segment {k} ({}..{}, id {}) breaks the partition",
                    s.start, s.end, s.id
                )));
            }
            next = s.end;
        }
        if next != self.total_frames || self.total_frames == 0 {
            return Err(Error::Usage(format!(
                "segments cover {next} of {} frames",
                self.total_frames
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("segmentation serialises")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let seg: Segmentation =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        seg.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(seg)
    }
}

/// Streaming segmenter; feed frames with [`Segmenter::push`].
pub struct Segmenter<T> {
    predictor: Predictor<T>,
    gating: GatingConfig,
    adaptive: AdaptiveConfig,
    options: StreamOptions,
    state: GatingState,
    targets: VecDeque<Vector<T>>,
    last_prediction: Option<Vector<T>>,
    scale: Option<T>,
    frames_seen: usize,
    /// The latest finite frame produced a non-finite error.
    model_overflow: bool,
}

impl<T: Scalar> Segmenter<T> {
    pub fn new(
        pcfg: &PredictorConfig,
        gating: GatingConfig,
        adaptive: AdaptiveConfig,
        options: StreamOptions,
    ) -> Result<Self> {
        gating.validate()?;
        adaptive.validate()?;
        Ok(Self {
            predictor: Predictor::new(pcfg)?,
            gating,
            adaptive,
            options,
            state: GatingState::default(),
            targets: VecDeque::new(),
            last_prediction: None,
            scale: None,
            frames_seen: 0,
            model_overflow: false,
        })
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    pub fn state(&self) -> &GatingState {
        &self.state
    }

    pub fn predictor(&self) -> &Predictor<T> {
        &self.predictor
    }

    fn rescale(&mut self, frame: Vector<T>) -> Vector<T> {
        match self.options.input_scaling {
            InputScaling::None => frame,
            InputScaling::FirstFrame => {
                let s = *self.scale.get_or_insert_with(|| {
                    let rms = (frame.norm_sq() / T::lit(frame.dim() as f64)).sqrt();
                    if rms > T::zero() && rms.is_finite() {
                        rms
                    } else {
                        T::one()
                    }
                });
                frame.map(|x| x / s)
            }
        }
    }

    /// Consumes one frame. Returns `true` when the frame opens a new event.
    pub fn push(&mut self, frame: Vector<T>) -> Result<bool> {
        if frame.dim() != self.predictor.input_dim() {
            return Err(Error::Usage(format!(
                "frame {} has dim {}, predictor expects {}",
                self.frames_seen,
                frame.dim(),
                self.predictor.input_dim()
            )));
        }
        let t = self.frames_seen;
        self.frames_seen += 1;
        let x = self.rescale(frame);

        let Some(prediction) = self.last_prediction.take() else {
            self.state.frames_since_boundary += 1;
            self.last_prediction = Some(self.predictor.step(&x));
            return Ok(false);
        };

        let error = self.predictor.loss(&prediction, &x).to_f64_lossy();
        if x.is_finite() {
            self.model_overflow = !error.is_finite();
        }
        if !error.is_finite() || !x.is_finite() {
            warn!("frame {t}: non-finite prediction error, skipping update");
            self.state.skipped.push(t);
            self.state.error_log.push(TraceRow {
                t,
                error,
                quality: self.state.quality.unwrap_or(f64::NAN),
                gate: false,
                lr: 0.0,
            });
            self.state.frames_since_boundary += 1;
            self.last_prediction = Some(prediction);
            return Ok(false);
        }

        // self-calibrating start: P_q(0) = E_P(1)
        let quality_prev = self.state.quality.unwrap_or(error);
        let fire = t > self.gating.warmup_frames()
            && self.state.frames_since_boundary > self.gating.refractory
            && gate(error, quality_prev, self.gating.threshold);

        let lr = if self.adaptive.enabled {
            adaptive_lr(error, self.state.segment_mean().unwrap_or(error), &self.adaptive)
        } else {
            self.adaptive.lambda_init
        };

        self.targets.push_back(x.clone());
        while self.targets.len() > self.predictor.tape().len() {
            self.targets.pop_front();
        }
        let grads = self.predictor.backward(self.targets.make_contiguous())?;
        if self.predictor.apply_update(&grads, T::lit(lr))? == UpdateOutcome::SkippedNonFinite {
            warn!("frame {t}: non-finite gradient, update skipped");
            self.state.skipped.push(t);
        }

        if fire {
            self.state.boundaries.push(t);
            self.state.open_segment();
            if self.options.reset_on_boundary {
                self.predictor.reset_hidden();
                self.targets.clear();
            }
        }
        self.state.record_segment_error(error);
        self.state.frames_since_boundary += 1;

        let quality = update_quality(quality_prev, error, self.gating.history);
        self.state.quality = Some(quality);
        self.state.error_log.push(TraceRow {
            t,
            error,
            quality,
            gate: fire,
            lr,
        });

        self.last_prediction = Some(self.predictor.step(&x));
        Ok(fire)
    }

    pub fn finish(self, source_id: impl Into<String>) -> RunOutput<T> {
        let segmentation = Segmentation::from_boundaries(&self.state.boundaries, self.frames_seen, source_id);
        RunOutput {
            segmentation,
            gating: self.state,
            predictor: self.predictor,
        }
    }
}

pub struct RunOutput<T> {
    pub segmentation: Segmentation,
    pub gating: GatingState,
    pub predictor: Predictor<T>,
}

/// Runs the whole pipeline over `frames`, pulling each frame exactly once.
pub fn run_stream<T: Scalar, I>(
    frames: I,
    source_id: &str,
    pcfg: &PredictorConfig,
    gating: &GatingConfig,
    adaptive: &AdaptiveConfig,
    options: &StreamOptions,
) -> Result<RunOutput<T>>
where
    I: IntoIterator<Item = Vector<T>>,
{
    let mut seg = Segmenter::new(pcfg, gating.clone(), adaptive.clone(), options.clone())?;
    for frame in frames {
        seg.push(frame)?;
    }
    if seg.frames_seen() < 2 {
        return Err(Error::Usage(format!(
            "stream {source_id:?} has {} frame(s); at least 2 are needed",
            seg.frames_seen()
        )));
    }
    if !seg.predictor().params().is_finite() {
        return Err(Error::Numeric("predictor parameters are non-finite".into()));
    }
    if seg.model_overflow {
        return Err(Error::Numeric(format!(
            "prediction error is non-finite at the end of the stream ({} frame(s) skipped)",
            seg.state().skipped.len()
        )));
    }
    Ok(seg.finish(source_id))
}

pub const TRACE_HEADER: &str = "t,E_P,P_q,G,lambda";

pub fn export_trace(state: &GatingState, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "{TRACE_HEADER}").map_err(io)?;
    for r in &state.error_log {
        writeln!(out, "{},{},{},{},{}", r.t, r.error, r.quality, u8::from(r.gate), r.lr).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != TRACE_HEADER {
        return Err(Error::format(path, format!("unexpected trace header {header:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, format!("row {i}: {e}")))?;
        let bad = || Error::format(path, format!("row {i}: malformed trace row"));
        let num = |k: usize| rec.get(k).and_then(|s| s.parse::<f64>().ok()).ok_or_else(bad);
        rows.push(TraceRow {
            t: rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?,
            error: num(1)?,
            quality: num(2)?,
            gate: match rec.get(3) {
                Some("1") => true,
                Some("0") => false,
                _ => return Err(bad()),
            },
            lr: num(4)?,
        });
    }
    Ok(rows)
}
