//! Feature streams: loading precomputed per-frame features, a fixed random
//! projection encoder, optional standardisation, and a synthetic generator
//! with ground-truth event labels.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::numerics::{gaussian_init, Matrix, Rng, Scalar, Vector};

const STREAM_MAGIC: &[u8; 4] = b"PSF1";

/// Ordered per-frame feature vectors with optional ground-truth labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStream<T> {
    features: Vec<Vector<T>>,
    labels: Option<Vec<usize>>,
    frame_rate: Option<f64>,
    source_id: String,
}

impl<T: Scalar> FeatureStream<T> {
    pub fn new(
        features: Vec<Vector<T>>,
        labels: Option<Vec<usize>>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let dim = features.first().map_or(0, Vector::dim);
        if dim == 0 {
            return Err(Error::Usage("feature stream must have at least one frame of dim >= 1".into()));
        }
        if let Some(t) = features.iter().position(|f| f.dim() != dim) {
            return Err(Error::Usage(format!(
                "frame {t} has dim {}, expected {dim}",
                features[t].dim()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != features.len() {
                return Err(Error::Usage(format!(
                    "{} labels for {} frames",
                    l.len(),
                    features.len()
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            frame_rate: None,
            source_id: source_id.into(),
        })
    }

    pub fn with_frame_rate(mut self, fps: f64) -> Self {
        self.frame_rate = Some(fps);
        self
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].dim()
    }

    pub fn features(&self) -> &[Vector<T>] {
        &self.features
    }

    pub fn into_features(self) -> Vec<Vector<T>> {
        self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn frame_rate(&self) -> Option<f64> {
        self.frame_rate
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    pub fn set_source_id(&mut self, id: impl Into<String>) {
        self.source_id = id.into();
    }

    pub fn set_labels(&mut self, labels: Option<Vec<usize>>) -> Result<()> {
        if let Some(l) = &labels {
            if l.len() != self.len() {
                return Err(Error::Usage(format!(
                    "{} labels for {} frames",
                    l.len(),
                    self.len()
                )));
            }
        }
        self.labels = labels;
        Ok(())
    }

    /// Frame positions where the ground-truth label changes.
    pub fn label_boundaries(&self) -> Vec<usize> {
        self.labels
            .as_ref()
            .map(|l| (1..l.len()).filter(|&t| l[t] != l[t - 1]).collect())
            .unwrap_or_default()
    }

    /// Every feature multiplied by `k`.
    pub fn scaled(&self, k: T) -> Self {
        Self {
            features: self.features.iter().map(|f| f.scale(k)).collect(),
            ..self.clone()
        }
    }

    pub fn cast<U: Scalar>(&self) -> FeatureStream<U> {
        FeatureStream {
            features: self.features.iter().map(Vector::cast).collect(),
            labels: self.labels.clone(),
            frame_rate: self.frame_rate,
            source_id: self.source_id.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamFormat {
    Csv,
    Binary,
}

impl StreamFormat {
    /// `.psf` and `.bin` files are binary, everything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("psf") | Some("bin") => StreamFormat::Binary,
            _ => StreamFormat::Csv,
        }
    }
}

/// `frames.csv` → `frames.labels.csv`
pub fn label_path_for(path: &Path) -> PathBuf {
    path.with_extension("labels.csv")
}

pub fn load_stream(path: &Path, format: StreamFormat) -> Result<FeatureStream<f64>> {
    let features = match format {
        StreamFormat::Csv => read_feature_csv(path)?,
        StreamFormat::Binary => read_feature_binary(path)?,
    };
    let labels_path = label_path_for(path);
    let labels = if labels_path.is_file() {
        let labels = load_labels(&labels_path)?;
        if labels.len() != features.len() {
            return Err(Error::format(
                &labels_path,
                format!("{} labels for {} frames", labels.len(), features.len()),
            ));
        }
        Some(labels)
    } else {
        None
    };
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureStream::new(features, labels, id)
}

fn read_feature_csv(path: &Path) -> Result<Vec<Vector<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut frames = Vec::new();
    let mut width = None;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
        let expected = *width.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::format(
                path,
                format!("row {row} has {} columns, expected {expected}", record.len()),
            ));
        }
        let values = record
            .iter()
            .enumerate()
            .map(|(col, cell)| {
                cell.parse::<f64>().map_err(|_| {
                    Error::format(path, format!("non-numeric cell {cell:?} at row {row}, column {col}"))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        frames.push(Vector::from_vec(values));
    }
    if frames.is_empty() || width == Some(0) {
        return Err(Error::format(path, "no frames"));
    }
    Ok(frames)
}

fn read_feature_binary(path: &Path) -> Result<Vec<Vector<f64>>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != STREAM_MAGIC {
        return Err(Error::format(path, "missing PSF1 header"));
    }
    let frames = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if frames == 0 || dim == 0 {
        return Err(Error::format(path, "no frames"));
    }
    let body = &bytes[12..];
    if body.len() != frames * dim * 8 {
        return Err(Error::format(
            path,
            format!(
                "header declares {frames}x{dim} values but body holds {} bytes",
                body.len()
            ),
        ));
    }
    Ok(body
        .chunks_exact(dim * 8)
        .map(|frame| {
            frame
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect::<Vec<f64>>()
                .into()
        })
        .collect())
}

pub fn write_stream<T: Scalar>(stream: &FeatureStream<T>, path: &Path, format: StreamFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    match format {
        StreamFormat::Csv => {
            for frame in stream.features() {
                let line = frame
                    .iter()
                    .map(|x| x.to_f64_lossy().to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                writeln!(out, "{line}").map_err(io)?;
            }
        }
        StreamFormat::Binary => {
            let frames = u32::try_from(stream.len())
                .map_err(|_| Error::Usage("too many frames for PSF1".into()))?;
            let dim = u32::try_from(stream.dim())
                .map_err(|_| Error::Usage("dimension too large for PSF1".into()))?;
            out.write_all(STREAM_MAGIC).map_err(io)?;
            out.write_all(&frames.to_le_bytes()).map_err(io)?;
            out.write_all(&dim.to_le_bytes()).map_err(io)?;
            for x in stream.features().iter().flat_map(|f| f.iter()) {
                out.write_all(&x.to_f64_lossy().to_le_bytes()).map_err(io)?;
            }
        }
    }
    out.flush().map_err(io)?;
    if let Some(labels) = stream.labels() {
        write_labels(labels, &label_path_for(path))?;
    }
    Ok(())
}

/// One non-negative integer per line.
pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| Error::format(path, format!("line {i}: {l:?} is not a non-negative integer")))
        })
        .collect::<Result<Vec<_>>>()?;
    if labels.is_empty() {
        return Err(Error::format(path, "no labels"));
    }
    Ok(labels)
}

pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut text = String::with_capacity(labels.len() * 3);
    for l in labels {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Fixed Gaussian projection `x ↦ R x` with `R_ij ~ N(0, 1/out_dim)`.
#[derive(Clone, Debug)]
pub struct RandomProjection<T> {
    in_dim: usize,
    out_dim: usize,
    matrix: Option<Matrix<T>>,
}

impl<T: Scalar> RandomProjection<T> {
    pub fn new(in_dim: usize, out_dim: usize, seed: u64) -> Result<Self> {
        if out_dim == 0 {
            return Err(Error::Usage("projection output dimension must be >= 1".into()));
        }
        let scale = 1.0 / (out_dim as f64).sqrt();
        let matrix = gaussian_init(&mut Rng::new(seed), out_dim, in_dim, scale)?;
        Ok(Self {
            in_dim,
            out_dim,
            matrix: Some(matrix),
        })
    }

    /// Pass-through encoder.
    pub fn identity(dim: usize) -> Self {
        Self {
            in_dim: dim,
            out_dim: dim,
            matrix: None,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn encode(&self, x: &Vector<T>) -> Vector<T> {
        assert_eq!(x.dim(), self.in_dim, "projection: input dimension mismatch");
        match &self.matrix {
            Some(m) => m.matvec(x),
            None => x.clone(),
        }
    }

    pub fn encode_stream(&self, raw: &FeatureStream<T>) -> Result<FeatureStream<T>> {
        if raw.dim() != self.in_dim {
            return Err(Error::Usage(format!(
                "projection expects dim {}, stream has dim {}",
                self.in_dim,
                raw.dim()
            )));
        }
        Ok(FeatureStream {
            features: raw.features().iter().map(|f| self.encode(f)).collect(),
            ..raw.clone()
        })
    }
}

/// Encodes a stream through a seeded random projection; `identity` keeps the
/// stream untouched and requires `out_dim` to equal the input dimension.
pub fn random_projection_encoder<T: Scalar>(
    raw: &FeatureStream<T>,
    out_dim: usize,
    seed: u64,
    identity: bool,
) -> Result<FeatureStream<T>> {
    let projection = if identity {
        if out_dim != raw.dim() {
            return Err(Error::Usage(format!(
                "identity projection needs out_dim == {}, got {out_dim}",
                raw.dim()
            )));
        }
        RandomProjection::identity(out_dim)
    } else {
        RandomProjection::new(raw.dim(), out_dim, seed)?
    };
    projection.encode_stream(raw)
}

/// Per-dimension zero mean / unit variance over the whole stream.
/// Needs the full stream up front, so it is opt-in.
pub fn standardize<T: Scalar>(stream: &FeatureStream<T>) -> FeatureStream<T> {
    let n = T::lit(stream.len() as f64);
    let dim = stream.dim();
    let mut mean = Vector::<T>::zeros(dim);
    for f in stream.features() {
        mean.axpy(T::one(), f);
    }
    let mean = mean.scale(T::one() / n);
    let mut var = Vector::<T>::zeros(dim);
    for f in stream.features() {
        let d = f.sub(&mean);
        var.axpy(T::one(), &d.hadamard(&d));
    }
    let inv_std = var.map(|v| {
        let s = (v / n).sqrt();
        if s > T::zero() {
            T::one() / s
        } else {
            T::one()
        }
    });
    FeatureStream {
        features: stream
            .features()
            .iter()
            .map(|f| f.sub(&mean).hadamard(&inv_std))
            .collect(),
        ..stream.clone()
    }
}

/// Parameters of the piecewise-stationary synthetic generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_events: usize,
    pub dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Per-frame spread around the event prototype.
    pub cluster_spread: f64,
    /// Minimum pairwise distance between event prototypes.
    pub cluster_separation: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_events: 5,
            dim: 32,
            min_len: 40,
            max_len: 80,
            cluster_spread: 1.0,
            cluster_separation: 8.0,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

const MAX_PROTOTYPE_ATTEMPTS: usize = 10_000;

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_events == 0 {
            return bad("num_events must be >= 1");
        }
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("need 1 <= min_len <= max_len");
        }
        if !(self.cluster_separation > 0.0) {
            return bad("cluster_separation must be > 0");
        }
        if !(self.noise_std >= 0.0) || !(self.cluster_spread >= 0.0) {
            return bad("noise_std and cluster_spread must be >= 0");
        }
        Ok(())
    }
}

/// Event prototypes with pairwise distance at least `cluster_separation`.
///
/// Candidates are drawn from `N(0, s²/D)` per coordinate (`s` the separation),
/// which puts typical pairwise distances near `√2·s` in high dimension.
pub fn synth_prototypes(spec: &SynthSpec, rng: &mut Rng) -> Result<Vec<Vector<f64>>> {
    let per_coord = spec.cluster_separation / (spec.dim as f64).sqrt();
    let mut protos: Vec<Vector<f64>> = Vec::with_capacity(spec.num_events);
    let mut attempts = 0;
    while protos.len() < spec.num_events {
        attempts += 1;
        if attempts > MAX_PROTOTYPE_ATTEMPTS {
            return Err(Error::Config(format!(
                "could not place {} prototypes {} apart in {} dimensions after {} attempts",
                spec.num_events, spec.cluster_separation, spec.dim, MAX_PROTOTYPE_ATTEMPTS
            )));
        }
        let candidate: Vector<f64> = rng.normal_vector(spec.dim, per_coord);
        let min_sq = spec.cluster_separation * spec.cluster_separation;
        if protos.iter().all(|p| p.sub(&candidate).norm_sq() >= min_sq) {
            protos.push(candidate);
        }
    }
    Ok(protos)
}

/// Generates `num_events` consecutive events, each a run of noisy frames
/// around its own prototype. Labels hold the event index per frame.
pub fn synth_stream<T: Scalar>(spec: &SynthSpec) -> Result<FeatureStream<T>> {
    Ok(synth_stream_with_prototypes(spec)?.0)
}

pub fn synth_stream_with_prototypes<T: Scalar>(
    spec: &SynthSpec,
) -> Result<(FeatureStream<T>, Vec<Vector<f64>>)> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let protos = synth_prototypes(spec, &mut rng)?;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (k, proto) in protos.iter().enumerate() {
        let len = rng.uniform_int(spec.min_len, spec.max_len);
        for _ in 0..len {
            let frame: Vec<T> = proto
                .iter()
                .map(|&p| {
                    let within = rng.normal() * spec.cluster_spread;
                    let noise = rng.normal() * spec.noise_std;
                    T::lit(p + within + noise)
                })
                .collect();
            features.push(Vector::from_vec(frame));
            labels.push(k);
        }
    }
    let stream = FeatureStream::new(features, Some(labels), format!("synth-{}", spec.seed))?;
    Ok((stream, protos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn csv_parses_rows_as_frames() {
        let dir = tmp();
        let p = dir.path().join("x.csv");
        fs::write(&p, "1,2,3,4\n5,6,7,8\n9,10,11,12\n").unwrap();
        let s = load_stream(&p, StreamFormat::Csv).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.dim(), 4);
        assert_eq!(s.features()[2].as_slice(), &[9.0, 10.0, 11.0, 12.0]);
        assert!(s.labels().is_none());
        assert_eq!(s.source_id(), "x");
    }

    #[test]
    fn csv_errors() {
        let dir = tmp();
        let empty = dir.path().join("empty.csv");
        fs::write(&empty, "").unwrap();
        assert!(matches!(load_stream(&empty, StreamFormat::Csv), Err(Error::Format { .. })));

        let ragged = dir.path().join("ragged.csv");
        fs::write(&ragged, "1,2,3,4\n1,2,3,4\n1,2,3,4,5\n").unwrap();
        let err = load_stream(&ragged, StreamFormat::Csv).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");

        let bad = dir.path().join("bad.csv");
        fs::write(&bad, "1,2\n3,x\n").unwrap();
        let err = load_stream(&bad, StreamFormat::Csv).unwrap_err().to_string();
        assert!(err.contains("row 1, column 1"), "{err}");

        let missing = dir.path().join("nope.csv");
        let err = load_stream(&missing, StreamFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("nope.csv"));
    }

    #[test]
    fn companion_labels_are_loaded_and_checked() {
        let dir = tmp();
        let p = dir.path().join("v.csv");
        fs::write(&p, "1,2\n3,4\n").unwrap();
        fs::write(dir.path().join("v.labels.csv"), "0\n1\n").unwrap();
        let s = load_stream(&p, StreamFormat::Csv).unwrap();
        assert_eq!(s.labels(), Some(&[0usize, 1][..]));

        fs::write(dir.path().join("v.labels.csv"), "0\n1\n1\n").unwrap();
        assert!(load_stream(&p, StreamFormat::Csv).is_err());
    }

    #[test]
    fn binary_roundtrip_is_bit_exact_and_csv_is_value_exact() {
        let spec = SynthSpec {
            num_events: 3,
            dim: 7,
            min_len: 4,
            max_len: 9,
            ..SynthSpec::default()
        };
        let s: FeatureStream<f64> = synth_stream(&spec).unwrap();
        let dir = tmp();

        let bin = dir.path().join("s.psf");
        write_stream(&s, &bin, StreamFormat::Binary).unwrap();
        let back = load_stream(&bin, StreamFormat::Binary).unwrap();
        assert_eq!(back.features(), s.features());
        assert_eq!(back.labels(), s.labels());
        let bytes = fs::read(&bin).unwrap();
        assert_eq!(&bytes[..4], b"PSF1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize, s.len());
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 7);
        assert_eq!(bytes.len(), 12 + s.len() * 7 * 8);

        let csv = dir.path().join("s.csv");
        write_stream(&s, &csv, StreamFormat::Csv).unwrap();
        let back = load_stream(&csv, StreamFormat::Csv).unwrap();
        for (a, b) in back.features().iter().zip(s.features()) {
            assert!(a.sub(b).max_abs() <= 1e-9);
        }
    }

    #[test]
    fn truncated_binary_is_rejected() {
        let dir = tmp();
        let p = dir.path().join("t.psf");
        let mut bytes = b"PSF1".to_vec();
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(1.0f64.to_le_bytes());
        fs::write(&p, bytes).unwrap();
        assert!(matches!(load_stream(&p, StreamFormat::Binary), Err(Error::Format { .. })));
    }

    #[test]
    fn identity_projection_passes_through() {
        let s: FeatureStream<f64> = synth_stream(&SynthSpec { dim: 6, ..SynthSpec::default() }).unwrap();
        let out = random_projection_encoder(&s, 6, 1, true).unwrap();
        assert_eq!(out, s);
        assert!(random_projection_encoder(&s, 5, 1, true).is_err());
        assert!(random_projection_encoder(&s, 0, 1, false).is_err());
    }

    #[test]
    fn projection_is_deterministic_and_keeps_labels() {
        let s: FeatureStream<f64> = synth_stream(&SynthSpec { dim: 20, ..SynthSpec::default() }).unwrap();
        let a = random_projection_encoder(&s, 8, 99, false).unwrap();
        let b = random_projection_encoder(&s, 8, 99, false).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), 8);
        assert_eq!(a.labels(), s.labels());
    }

    #[test]
    fn projection_approximately_preserves_distances() {
        // D=512 → 64: Johnson-Lindenstrauss, checked on all 190 pairs of 20 frames.
        let mut rng = Rng::new(2024);
        let frames: Vec<Vector<f64>> = (0..20).map(|_| rng.normal_vector(512, 1.0)).collect();
        let proj = RandomProjection::<f64>::new(512, 64, 5).unwrap();
        let encoded: Vec<_> = frames.iter().map(|f| proj.encode(f)).collect();
        for i in 0..20 {
            for j in (i + 1)..20 {
                let before = frames[i].sub(&frames[j]).norm_sq().sqrt();
                let after = encoded[i].sub(&encoded[j]).norm_sq().sqrt();
                let ratio = after / before;
                assert!((0.7..=1.3).contains(&ratio), "pair ({i},{j}) ratio {ratio}");
            }
        }
    }

    #[test]
    fn projection_is_linear() {
        let mut rng = Rng::new(3);
        let proj = RandomProjection::<f64>::new(10, 4, 1).unwrap();
        for _ in 0..20 {
            let a: Vector<f64> = rng.normal_vector(10, 3.0);
            let b: Vector<f64> = rng.normal_vector(10, 3.0);
            let lhs = proj.encode(&a.add(&b));
            let rhs = proj.encode(&a).add(&proj.encode(&b));
            assert!(lhs.sub(&rhs).max_abs() <= 1e-9);
        }
    }

    #[test]
    fn synth_single_event_has_no_boundaries() {
        let s: FeatureStream<f64> = synth_stream(&SynthSpec { num_events: 1, ..SynthSpec::default() }).unwrap();
        assert!(s.labels().unwrap().iter().all(|&l| l == 0));
        assert!(s.label_boundaries().is_empty());
    }

    #[test]
    fn synth_fixed_lengths_place_boundaries_exactly() {
        let s: FeatureStream<f64> = synth_stream(&SynthSpec {
            num_events: 4,
            min_len: 50,
            max_len: 50,
            ..SynthSpec::default()
        })
        .unwrap();
        assert_eq!(s.len(), 200);
        assert_eq!(s.label_boundaries(), vec![50, 100, 150]);
    }

    #[test]
    fn synth_frames_are_classifiable_by_nearest_prototype() {
        let spec = SynthSpec {
            num_events: 5,
            cluster_spread: 1.0,
            cluster_separation: 10.0,
            seed: 17,
            ..SynthSpec::default()
        };
        let (s, protos) = synth_stream_with_prototypes::<f64>(&spec).unwrap();
        for (i, p) in protos.iter().enumerate() {
            for q in &protos[i + 1..] {
                assert!(p.sub(q).norm_sq().sqrt() >= 10.0);
            }
        }
        let labels = s.labels().unwrap();
        let correct = s
            .features()
            .iter()
            .zip(labels)
            .filter(|(f, &l)| {
                let nearest = (0..protos.len())
                    .min_by(|&a, &b| {
                        f.sub(&protos[a])
                            .norm_sq()
                            .partial_cmp(&f.sub(&protos[b]).norm_sq())
                            .unwrap()
                    })
                    .unwrap();
                nearest == l
            })
            .count();
        assert!(correct as f64 >= 0.99 * s.len() as f64, "{correct}/{}", s.len());
    }

    #[test]
    fn synth_seeds() {
        let spec = SynthSpec::default();
        let a: FeatureStream<f64> = synth_stream(&spec).unwrap();
        let b: FeatureStream<f64> = synth_stream(&spec).unwrap();
        assert_eq!(a, b);
        let (_, p1) = synth_stream_with_prototypes::<f64>(&spec).unwrap();
        let (_, p2) = synth_stream_with_prototypes::<f64>(&SynthSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(p1, p2);
    }

    #[test]
    fn synth_rejects_infeasible_and_invalid_specs() {
        let infeasible = SynthSpec {
            num_events: 40,
            dim: 1,
            cluster_separation: 5.0,
            ..SynthSpec::default()
        };
        assert!(matches!(synth_stream::<f64>(&infeasible), Err(Error::Config(_))));
        let bad = SynthSpec { min_len: 5, max_len: 4, ..SynthSpec::default() };
        assert!(synth_stream::<f64>(&bad).is_err());
        let bad = SynthSpec { cluster_separation: 0.0, ..SynthSpec::default() };
        assert!(synth_stream::<f64>(&bad).is_err());
    }

    #[test]
    fn standardize_gives_zero_mean_unit_variance() {
        let s: FeatureStream<f64> = synth_stream(&SynthSpec::default()).unwrap();
        let z = standardize(&s);
        let n = z.len() as f64;
        for d in 0..z.dim() {
            let mean = z.features().iter().map(|f| f[d]).sum::<f64>() / n;
            let var = z.features().iter().map(|f| (f[d] - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }
}
