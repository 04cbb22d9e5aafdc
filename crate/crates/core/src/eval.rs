//! Scoring predicted segmentations against frame labels.
//!
//! Predicted segments carry no class semantics, so each segment is first
//! matched one-to-one to a ground-truth class by maximising shared frames
//! (Hungarian algorithm). Mean-over-frames, Jaccard IoU and frame-level F1 are
//! computed under that matching.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};
use crate::segmenter::Segmentation;

/// Frame counts shared by predicted segments (rows) and ground-truth classes (columns).
#[derive(Clone, Debug, PartialEq)]
pub struct OverlapTable {
    pub matrix: Matrix<f64>,
    /// Class id of each column, ascending.
    pub classes: Vec<usize>,
}

pub fn overlap_matrix(pred: &Segmentation, gt: &[usize]) -> Result<OverlapTable> {
    if gt.is_empty() {
        return Err(Error::Usage("ground-truth timeline is empty".into()));
    }
    if pred.total_frames != gt.len() {
        return Err(Error::Usage(format!(
            "segmentation covers {} frames but ground truth has {}",
            pred.total_frames,
            gt.len()
        )));
    }
    let mut classes: Vec<usize> = gt.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let column: BTreeMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut matrix = Matrix::zeros(pred.segments.len(), classes.len())?;
    for (row, seg) in pred.segments.iter().enumerate() {
        for &label in &gt[seg.start..seg.end] {
            let col = column[&label];
            matrix.set(row, col, matrix.get(row, col) + 1.0);
        }
    }
    Ok(OverlapTable { matrix, classes })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Max,
    Min,
}

/// Optimal one-to-one assignment of rows to columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment<T> {
    /// Column assigned to each row; `None` when the row was left unmatched
    /// (only possible when there are more rows than columns).
    pub row_to_col: Vec<Option<usize>>,
    pub total: T,
}

/// Hungarian algorithm (shortest augmenting paths with potentials), `O(n³)`.
/// Rectangular inputs are padded with zeros to a square.
pub fn hungarian<T: Scalar>(m: &Matrix<T>, sense: Sense) -> Assignment<T> {
    let (rows, cols) = (m.rows(), m.cols());
    let n = rows.max(cols);
    let cost = |r: usize, c: usize| -> T {
        let v = if r < rows && c < cols { m.get(r, c) } else { T::zero() };
        match sense {
            Sense::Min => v,
            Sense::Max => -v,
        }
    };

    // 1-based arrays, index 0 is the virtual source row/column.
    let inf = T::infinity();
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut owner = vec![0usize; n + 1]; // owner[col] = row
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut min_to = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = inf;
            let mut col1 = 0;
            for col in 1..=n {
                if used[col] {
                    continue;
                }
                let reduced = cost(r0 - 1, col - 1) - u[r0] - v[col];
                if reduced < min_to[col] {
                    min_to[col] = reduced;
                    way[col] = col0;
                }
                if min_to[col] < delta {
                    delta = min_to[col];
                    col1 = col;
                }
            }
            for col in 0..=n {
                if used[col] {
                    u[owner[col]] += delta;
                    v[col] -= delta;
                } else {
                    min_to[col] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![None; rows];
    let mut total = T::zero();
    for col in 1..=n {
        let r = owner[col] - 1;
        if r < rows && col - 1 < cols {
            row_to_col[r] = Some(col - 1);
            total += m.get(r, col - 1);
        }
    }
    Assignment { row_to_col, total }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub segment: usize,
    pub class: usize,
    pub overlap: usize,
}

/// Segment-to-class matching. Pairs that share no frame are reported as unmatched.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AssignmentTable {
    pub mapping: Vec<MatchedPair>,
    pub unmatched_segments: Vec<usize>,
    pub unmatched_classes: Vec<usize>,
    pub total_overlap: usize,
}

impl AssignmentTable {
    pub fn class_of(&self, segment: usize) -> Option<usize> {
        self.mapping.iter().find(|p| p.segment == segment).map(|p| p.class)
    }

    pub fn segment_of(&self, class: usize) -> Option<usize> {
        self.mapping.iter().find(|p| p.class == class).map(|p| p.segment)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalOptions {
    /// Ground-truth class left out of matching. Its frames still count in
    /// the MoF and recall denominators; it is left out of the IoU mean.
    pub background: Option<usize>,
}

pub fn validate_labels(gt: &[usize]) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::Usage("ground-truth timeline is empty".into()));
    }
    Ok(())
}

/// Hungarian matching of predicted segments to ground-truth classes by overlap.
pub fn match_segments(pred: &Segmentation, gt: &[usize], opts: &EvalOptions) -> Result<AssignmentTable> {
    validate_labels(gt)?;
    let table = overlap_matrix(pred, gt)?;
    let candidates: Vec<usize> = (0..table.classes.len())
        .filter(|&c| Some(table.classes[c]) != opts.background)
        .collect();

    let mut out = AssignmentTable::default();
    if candidates.is_empty() {
        out.unmatched_segments = pred.segments.iter().map(|s| s.id).collect();
        return Ok(out);
    }
    let mut sub = Matrix::<f64>::zeros(table.matrix.rows(), candidates.len())?;
    for r in 0..sub.rows() {
        for (k, &c) in candidates.iter().enumerate() {
            sub.set(r, k, table.matrix.get(r, c));
        }
    }
    let assignment = hungarian(&sub, Sense::Max);
    let mut matched_cols = vec![false; candidates.len()];
    for (row, col) in assignment.row_to_col.iter().enumerate() {
        let segment = pred.segments[row].id;
        match col {
            Some(k) if sub.get(row, *k) > 0.0 => {
                let overlap = sub.get(row, *k) as usize;
                matched_cols[*k] = true;
                out.total_overlap += overlap;
                out.mapping.push(MatchedPair {
                    segment,
                    class: table.classes[candidates[*k]],
                    overlap,
                });
            }
            _ => out.unmatched_segments.push(segment),
        }
    }
    out.unmatched_classes = candidates
        .iter()
        .zip(&matched_cols)
        .filter(|(_, &m)| !m)
        .map(|(&c, _)| table.classes[c])
        .collect();
    Ok(out)
}

fn check_lengths(pred: &Segmentation, gt: &[usize]) -> Result<()> {
    validate_labels(gt)?;
    if pred.total_frames != gt.len() {
        return Err(Error::Usage(format!(
            "segmentation covers {} frames but ground truth has {}",
            pred.total_frames,
            gt.len()
        )));
    }
    Ok(())
}

/// Frames whose mapped class equals the ground truth.
fn correct_frames(pred: &Segmentation, gt: &[usize], assignment: &AssignmentTable) -> usize {
    pred.segments
        .iter()
        .filter_map(|s| assignment.class_of(s.id).map(|c| (s, c)))
        .map(|(s, c)| gt[s.start..s.end].iter().filter(|&&l| l == c).count())
        .sum()
}

/// Mean over frames: fraction of frames whose mapped label is correct.
pub fn mof(pred: &Segmentation, gt: &[usize], assignment: &AssignmentTable) -> Result<f64> {
    check_lengths(pred, gt)?;
    Ok(correct_frames(pred, gt, assignment) as f64 / gt.len() as f64)
}

/// Jaccard index of every non-background class against its matched segment;
/// unmatched classes score 0.
pub fn per_class_iou(
    pred: &Segmentation,
    gt: &[usize],
    assignment: &AssignmentTable,
    opts: &EvalOptions,
) -> Result<Vec<(usize, f64)>> {
    check_lengths(pred, gt)?;
    let mut classes: Vec<usize> = gt.iter().copied().filter(|&c| Some(c) != opts.background).collect();
    classes.sort_unstable();
    classes.dedup();
    Ok(classes
        .into_iter()
        .map(|c| {
            let class_frames = gt.iter().filter(|&&l| l == c).count();
            let score = match assignment.segment_of(c).and_then(|id| pred.segments.iter().find(|s| s.id == id)) {
                Some(seg) => {
                    let inter = gt[seg.start..seg.end].iter().filter(|&&l| l == c).count();
                    let union = class_frames + seg.len() - inter;
                    inter as f64 / union as f64
                }
                None => 0.0,
            };
            (c, score)
        })
        .collect())
}

pub fn iou(pred: &Segmentation, gt: &[usize], assignment: &AssignmentTable, opts: &EvalOptions) -> Result<f64> {
    let per_class = per_class_iou(pred, gt, assignment, opts)?;
    if per_class.is_empty() {
        return Ok(0.0);
    }
    Ok(per_class.iter().map(|(_, s)| s).sum::<f64>() / per_class.len() as f64)
}

/// Frame-level micro precision/recall/F1 under the matching.
///
/// Precision counts frames of matched segments, recall counts all frames.
pub fn precision_recall_f1(pred: &Segmentation, gt: &[usize], assignment: &AssignmentTable) -> Result<(f64, f64, f64)> {
    check_lengths(pred, gt)?;
    let correct = correct_frames(pred, gt, assignment) as f64;
    let matched_frames: usize = pred
        .segments
        .iter()
        .filter(|s| assignment.class_of(s.id).is_some())
        .map(|s| s.len())
        .sum();
    let precision = if matched_frames > 0 { correct / matched_frames as f64 } else { 0.0 };
    let recall = correct / gt.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok((precision, recall, f1))
}

pub fn f1(pred: &Segmentation, gt: &[usize], assignment: &AssignmentTable) -> Result<f64> {
    Ok(precision_recall_f1(pred, gt, assignment)?.2)
}

/// One-to-one pairing of true and predicted boundary frames minimising total
/// distance. Returns `(truth, predicted)` pairs; surplus boundaries on either
/// side stay unpaired.
pub fn match_boundaries(truth: &[usize], predicted: &[usize]) -> Vec<(usize, usize)> {
    if truth.is_empty() || predicted.is_empty() {
        return Vec::new();
    }
    let mut cost = Matrix::<f64>::zeros(truth.len(), predicted.len()).expect("non-empty");
    for (r, &t) in truth.iter().enumerate() {
        for (c, &p) in predicted.iter().enumerate() {
            cost.set(r, c, (t as f64 - p as f64).abs());
        }
    }
    hungarian(&cost, Sense::Min)
        .row_to_col
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| (truth[r], predicted[c])))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassIou {
    pub class: usize,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source_id: String,
    pub frames: usize,
    pub predicted_segments: usize,
    pub mof: f64,
    pub iou: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub per_class_iou: Vec<ClassIou>,
    pub assignment: Vec<MatchedPair>,
    pub unmatched_segments: Vec<usize>,
    pub unmatched_classes: Vec<usize>,
    pub definitions: BTreeMap<String, String>,
}

pub fn metric_definitions() -> BTreeMap<String, String> {
    [
        ("matching", "hungarian one-to-one, segment to class, maximising shared frames"),
        ("mof", "correctly mapped frames / all frames"),
        ("iou", "mean over ground-truth classes of jaccard(class frames, matched segment frames)"),
        ("f1", "frame-micro"),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect()
}

pub fn evaluate(pred: &Segmentation, gt: &[usize], opts: &EvalOptions) -> Result<EvalReport> {
    check_lengths(pred, gt)?;
    let assignment = match_segments(pred, gt, opts)?;
    let (precision, recall, f1) = precision_recall_f1(pred, gt, &assignment)?;
    let per_class = per_class_iou(pred, gt, &assignment, opts)?;
    let iou = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|(_, s)| s).sum::<f64>() / per_class.len() as f64
    };
    Ok(EvalReport {
        source_id: pred.source_id.clone(),
        frames: gt.len(),
        predicted_segments: pred.segments.len(),
        mof: mof(pred, gt, &assignment)?,
        iou,
        f1,
        precision,
        recall,
        per_class_iou: per_class.into_iter().map(|(class, iou)| ClassIou { class, iou }).collect(),
        assignment: assignment.mapping,
        unmatched_segments: assignment.unmatched_segments,
        unmatched_classes: assignment.unmatched_classes,
        definitions: metric_definitions(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    /// Mean of per-video metrics (the headline numbers).
    pub mof: f64,
    pub iou: f64,
    pub f1: f64,
    /// MoF with frames pooled across all videos.
    pub pooled_mof: f64,
    pub videos: usize,
    pub per_video: Vec<EvalReport>,
    pub definitions: BTreeMap<String, String>,
}

pub fn aggregate(reports: Vec<EvalReport>) -> CorpusReport {
    let n = reports.len().max(1) as f64;
    let mean = |f: fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let frames: usize = reports.iter().map(|r| r.frames).sum();
    let correct: f64 = reports.iter().map(|r| r.mof * r.frames as f64).sum();
    let mut definitions = metric_definitions();
    definitions.insert("corpus".into(), "mean of per-video metrics; pooled_mof pools frames".into());
    CorpusReport {
        mof: mean(|r| r.mof),
        iou: mean(|r| r.iou),
        f1: mean(|r| r.f1),
        pooled_mof: if frames > 0 { correct / frames as f64 } else { 0.0 },
        videos: reports.len(),
        per_video: reports,
        definitions,
    }
}

pub fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serialises");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
