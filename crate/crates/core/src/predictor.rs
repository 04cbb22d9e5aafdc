//! Recurrent next-feature predictor.
//!
//! A single RNN or LSTM cell reads the current feature vector and an affine
//! decoder maps the hidden state to a forecast of the next feature vector.
//! Every step is recorded on a bounded tape so that the squared prediction
//! error can be backpropagated through the last `bptt_window` steps.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{gaussian_init, Matrix, Rng, Scalar, Vector};

const CHECKPOINT_MAGIC: &[u8; 4] = b"PSP1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CellKind {
    Rnn,
    Lstm,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Lstm => "lstm",
        }
    }

    fn tag(self) -> u32 {
        match self {
            CellKind::Rnn => 0,
            CellKind::Lstm => 1,
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnn" => Ok(CellKind::Rnn),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::Config(format!("unknown cell {other:?} (expected rnn or lstm)"))),
        }
    }
}

/// How the per-frame prediction error is measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ErrorNorm {
    /// Sum of squared residuals.
    L2Sq,
    /// Sum of absolute residuals.
    L1,
}

impl ErrorNorm {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorNorm::L2Sq => "l2sq",
            ErrorNorm::L1 => "l1",
        }
    }
}

impl std::str::FromStr for ErrorNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2sq" => Ok(ErrorNorm::L2Sq),
            "l1" => Ok(ErrorNorm::L1),
            other => Err(Error::Config(format!("unknown error norm {other:?} (expected l2sq or l1)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictorConfig {
    pub cell: CellKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub bptt_window: usize,
    pub init_stddev: f64,
    pub forget_bias: f64,
    pub error_norm: ErrorNorm,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Lstm,
            input_dim: 4096,
            hidden_dim: 2048,
            bptt_window: 5,
            init_stddev: 0.01,
            forget_bias: 1.0,
            error_norm: ErrorNorm::L2Sq,
            seed: 0,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.bptt_window == 0 {
            return Err(Error::Config(format!(
                "input_dim, hidden_dim and bptt_window must be >= 1 (got {}, {}, {})",
                self.input_dim, self.hidden_dim, self.bptt_window
            )));
        }
        if !(self.init_stddev > 0.0 && self.init_stddev.is_finite()) {
            return Err(Error::Config("init_stddev must be positive".into()));
        }
        if !self.forget_bias.is_finite() {
            return Err(Error::Config("forget_bias must be finite".into()));
        }
        Ok(())
    }
}

/// Gate weights of the LSTM cell. Input maps are `H×D`, recurrent maps `H×H`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    pub w_i: Matrix<T>,
    pub w_f: Matrix<T>,
    pub w_o: Matrix<T>,
    pub w_g: Matrix<T>,
    pub w_hi: Matrix<T>,
    pub w_hf: Matrix<T>,
    pub w_ho: Matrix<T>,
    pub w_hg: Matrix<T>,
    pub b_i: Vector<T>,
    pub b_f: Vector<T>,
    pub b_o: Vector<T>,
    pub b_g: Vector<T>,
}

/// Elman cell: `h_t = tanh(W_x x + W_h h_{t-1} + b_h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnParams<T> {
    pub w_x: Matrix<T>,
    pub w_h: Matrix<T>,
    pub b_h: Vector<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellParams<T> {
    Lstm(LstmParams<T>),
    Rnn(RnnParams<T>),
}

/// All learnable tensors. Also used to hold gradients, which share the shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub cell: CellParams<T>,
    pub w_dec: Matrix<T>,
    pub b_dec: Vector<T>,
}

pub type Gradients<T> = Params<T>;

impl<T: Scalar> Params<T> {
    pub fn init(cfg: &PredictorConfig) -> Result<Self> {
        cfg.validate()?;
        let (d, h, s) = (cfg.input_dim, cfg.hidden_dim, cfg.init_stddev);
        let mut rng = Rng::new(cfg.seed);
        let cell = match cfg.cell {
            CellKind::Lstm => CellParams::Lstm(LstmParams {
                w_i: gaussian_init(&mut rng, h, d, s)?,
                w_f: gaussian_init(&mut rng, h, d, s)?,
                w_o: gaussian_init(&mut rng, h, d, s)?,
                w_g: gaussian_init(&mut rng, h, d, s)?,
                w_hi: gaussian_init(&mut rng, h, h, s)?,
                w_hf: gaussian_init(&mut rng, h, h, s)?,
                w_ho: gaussian_init(&mut rng, h, h, s)?,
                w_hg: gaussian_init(&mut rng, h, h, s)?,
                b_i: Vector::zeros(h),
                b_f: Vector::from_vec(vec![T::lit(cfg.forget_bias); h]),
                b_o: Vector::zeros(h),
                b_g: Vector::zeros(h),
            }),
            CellKind::Rnn => CellParams::Rnn(RnnParams {
                w_x: gaussian_init(&mut rng, h, d, s)?,
                w_h: gaussian_init(&mut rng, h, h, s)?,
                b_h: Vector::zeros(h),
            }),
        };
        Ok(Self {
            cell,
            w_dec: gaussian_init(&mut rng, d, h, s)?,
            b_dec: Vector::zeros(d),
        })
    }

    pub fn kind(&self) -> CellKind {
        match self.cell {
            CellParams::Lstm(_) => CellKind::Lstm,
            CellParams::Rnn(_) => CellKind::Rnn,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_dec.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_dec.cols()
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(T::zero());
        }
        z
    }

    /// Named tensors in checkpoint declaration order.
    pub fn tensors(&self) -> Vec<(&'static str, &[T])> {
        let mut out: Vec<(&'static str, &[T])> = match &self.cell {
            CellParams::Lstm(p) => vec![
                ("w_i", p.w_i.as_slice()),
                ("w_f", p.w_f.as_slice()),
                ("w_o", p.w_o.as_slice()),
                ("w_g", p.w_g.as_slice()),
                ("w_hi", p.w_hi.as_slice()),
                ("w_hf", p.w_hf.as_slice()),
                ("w_ho", p.w_ho.as_slice()),
                ("w_hg", p.w_hg.as_slice()),
                ("b_i", p.b_i.as_slice()),
                ("b_f", p.b_f.as_slice()),
                ("b_o", p.b_o.as_slice()),
                ("b_g", p.b_g.as_slice()),
            ],
            CellParams::Rnn(p) => vec![
                ("w_x", p.w_x.as_slice()),
                ("w_h", p.w_h.as_slice()),
                ("b_h", p.b_h.as_slice()),
            ],
        };
        out.push(("w_dec", self.w_dec.as_slice()));
        out.push(("b_dec", self.b_dec.as_slice()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        let mut out: Vec<(&'static str, &mut [T])> = match &mut self.cell {
            CellParams::Lstm(p) => vec![
                ("w_i", p.w_i.as_mut_slice()),
                ("w_f", p.w_f.as_mut_slice()),
                ("w_o", p.w_o.as_mut_slice()),
                ("w_g", p.w_g.as_mut_slice()),
                ("w_hi", p.w_hi.as_mut_slice()),
                ("w_hf", p.w_hf.as_mut_slice()),
                ("w_ho", p.w_ho.as_mut_slice()),
                ("w_hg", p.w_hg.as_mut_slice()),
                ("b_i", p.b_i.as_mut_slice()),
                ("b_f", p.b_f.as_mut_slice()),
                ("b_o", p.b_o.as_mut_slice()),
                ("b_g", p.b_g.as_mut_slice()),
            ],
            CellParams::Rnn(p) => vec![
                ("w_x", p.w_x.as_mut_slice()),
                ("w_h", p.w_h.as_mut_slice()),
                ("b_h", p.b_h.as_mut_slice()),
            ],
        };
        out.push(("w_dec", self.w_dec.as_mut_slice()));
        out.push(("b_dec", self.b_dec.as_mut_slice()));
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|x| x.is_finite()))
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `self += k · other`
    pub fn axpy(&mut self, k: T, other: &Self) {
        let src = other.tensors();
        for ((name, dst), (_, src)) in self.tensors_mut().into_iter().zip(src) {
            assert_eq!(dst.len(), src.len(), "axpy: shape mismatch in {name}");
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
}

/// Gate activations kept for the LSTM backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmActivations<T> {
    pub i: Vector<T>,
    pub f: Vector<T>,
    pub o: Vector<T>,
    pub g: Vector<T>,
    pub tanh_m: Vector<T>,
}

/// Everything one step needs to be differentiated later.
#[derive(Clone, Debug, PartialEq)]
pub struct TapeEntry<T> {
    pub input: Vector<T>,
    pub h_prev: Vector<T>,
    pub m_prev: Vector<T>,
    pub gates: Option<LstmActivations<T>>,
    pub m: Vector<T>,
    pub h: Vector<T>,
    pub prediction: Vector<T>,
}

/// Parameters plus the recurrent state `(h, m)` and the step tape.
#[derive(Clone, Debug)]
pub struct Predictor<T> {
    params: Params<T>,
    window: usize,
    norm: ErrorNorm,
    h: Vector<T>,
    m: Vector<T>,
    tape: VecDeque<TapeEntry<T>>,
}

/// Outcome of [`Predictor::apply_update`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateOutcome {
    Applied,
    /// The gradient held NaN or infinite entries; parameters were left alone.
    SkippedNonFinite,
}

impl<T: Scalar> Predictor<T> {
    pub fn new(cfg: &PredictorConfig) -> Result<Self> {
        Ok(Self::from_params(Params::init(cfg)?, cfg.bptt_window, cfg.error_norm))
    }

    pub fn from_params(params: Params<T>, bptt_window: usize, norm: ErrorNorm) -> Self {
        assert!(bptt_window >= 1, "bptt_window must be >= 1");
        let h = params.hidden_dim();
        Self {
            params,
            window: bptt_window,
            norm,
            h: Vector::zeros(h),
            m: Vector::zeros(h),
            tape: VecDeque::with_capacity(bptt_window),
        }
    }

    pub fn params(&self) -> &Params<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params<T> {
        &mut self.params
    }

    pub fn kind(&self) -> CellKind {
        self.params.kind()
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.params.hidden_dim()
    }

    pub fn bptt_window(&self) -> usize {
        self.window
    }

    pub fn error_norm(&self) -> ErrorNorm {
        self.norm
    }

    /// Event state `h_t`.
    pub fn hidden(&self) -> &Vector<T> {
        &self.h
    }

    /// Memory state `m_t` (always zero for the RNN cell).
    pub fn memory(&self) -> &Vector<T> {
        &self.m
    }

    pub fn set_state(&mut self, h: Vector<T>, m: Vector<T>) {
        assert_eq!(h.dim(), self.hidden_dim(), "set_state: hidden dim mismatch");
        assert_eq!(m.dim(), self.hidden_dim(), "set_state: memory dim mismatch");
        self.h = h;
        self.m = m;
    }

    pub fn tape(&self) -> &VecDeque<TapeEntry<T>> {
        &self.tape
    }

    /// Advances the cell on `x` and returns the forecast of the next input.
    pub fn step(&mut self, x: &Vector<T>) -> Vector<T> {
        assert_eq!(
            x.dim(),
            self.input_dim(),
            "step: input has dim {} but predictor expects {}",
            x.dim(),
            self.input_dim()
        );
        let h_prev = std::mem::replace(&mut self.h, Vector::zeros(0));
        let m_prev = std::mem::replace(&mut self.m, Vector::zeros(0));
        let (h, m, gates) = match &self.params.cell {
            CellParams::Lstm(p) => {
                let pre = |w: &Matrix<T>, wh: &Matrix<T>, b: &Vector<T>| {
                    w.matvec(x).add(&wh.matvec(&h_prev)).add(b)
                };
                let i = pre(&p.w_i, &p.w_hi, &p.b_i).sigmoid();
                let f = pre(&p.w_f, &p.w_hf, &p.b_f).sigmoid();
                let o = pre(&p.w_o, &p.w_ho, &p.b_o).sigmoid();
                let g = pre(&p.w_g, &p.w_hg, &p.b_g).tanh();
                let m = f.hadamard(&m_prev).add(&i.hadamard(&g));
                let tanh_m = m.tanh();
                let h = o.hadamard(&tanh_m);
                (h, m, Some(LstmActivations { i, f, o, g, tanh_m }))
            }
            CellParams::Rnn(p) => {
                let h = p.w_x.matvec(x).add(&p.w_h.matvec(&h_prev)).add(&p.b_h).tanh();
                (h, Vector::zeros(self.hidden_dim()), None)
            }
        };
        let prediction = self.params.w_dec.matvec(&h).add(&self.params.b_dec);
        if self.tape.len() == self.window {
            self.tape.pop_front();
        }
        self.tape.push_back(TapeEntry {
            input: x.clone(),
            h_prev,
            m_prev,
            gates,
            m: m.clone(),
            h: h.clone(),
            prediction: prediction.clone(),
        });
        self.h = h;
        self.m = m;
        prediction
    }

    /// Prediction error under this predictor's norm.
    pub fn loss(&self, prediction: &Vector<T>, observed: &Vector<T>) -> T {
        loss(prediction, observed, self.norm)
    }

    /// Gradient of `Σ_k loss(prediction_k, observed[k])` over the taped steps,
    /// treating the state before the oldest taped step as a constant.
    ///
    /// `observed[k]` is the target for the prediction made at tape entry `k`
    /// (oldest first).
    pub fn backward(&self, observed: &[Vector<T>]) -> Result<Gradients<T>> {
        if self.tape.is_empty() {
            return Err(Error::Usage("backward called with an empty tape".into()));
        }
        if observed.len() != self.tape.len() {
            return Err(Error::Usage(format!(
                "backward needs one target per taped step ({} steps, {} targets)",
                self.tape.len(),
                observed.len()
            )));
        }
        let hd = self.hidden_dim();
        let mut grads = self.params.zeros_like();
        let mut dh_next = Vector::<T>::zeros(hd);
        let mut dm_next = Vector::<T>::zeros(hd);
        let one = T::one();

        for (entry, target) in self.tape.iter().zip(observed).rev() {
            let dy = loss_gradient(&entry.prediction, target, self.norm);
            grads.b_dec.axpy(one, &dy);
            grads.w_dec.add_outer(one, &dy, &entry.h);
            let dh = self.params.w_dec.matvec_transposed(&dy).add(&dh_next);

            match (&self.params.cell, &mut grads.cell) {
                (CellParams::Lstm(p), CellParams::Lstm(g)) => {
                    let a = entry.gates.as_ref().expect("LSTM tape entry carries gates");
                    let d_o = dh.hadamard(&a.tanh_m);
                    let dm = dh
                        .hadamard(&a.o)
                        .hadamard(&a.tanh_m.map(|t| one - t * t))
                        .add(&dm_next);
                    let d_i = dm.hadamard(&a.g);
                    let d_g = dm.hadamard(&a.i);
                    let d_f = dm.hadamard(&entry.m_prev);
                    dm_next = dm.hadamard(&a.f);

                    let sig_grad = |s: &Vector<T>| s.map(|v| v * (one - v));
                    let da_i = d_i.hadamard(&sig_grad(&a.i));
                    let da_f = d_f.hadamard(&sig_grad(&a.f));
                    let da_o = d_o.hadamard(&sig_grad(&a.o));
                    let da_g = d_g.hadamard(&a.g.map(|v| one - v * v));

                    g.w_i.add_outer(one, &da_i, &entry.input);
                    g.w_f.add_outer(one, &da_f, &entry.input);
                    g.w_o.add_outer(one, &da_o, &entry.input);
                    g.w_g.add_outer(one, &da_g, &entry.input);
                    g.w_hi.add_outer(one, &da_i, &entry.h_prev);
                    g.w_hf.add_outer(one, &da_f, &entry.h_prev);
                    g.w_ho.add_outer(one, &da_o, &entry.h_prev);
                    g.w_hg.add_outer(one, &da_g, &entry.h_prev);
                    g.b_i.axpy(one, &da_i);
                    g.b_f.axpy(one, &da_f);
                    g.b_o.axpy(one, &da_o);
                    g.b_g.axpy(one, &da_g);

                    dh_next = p
                        .w_hi
                        .matvec_transposed(&da_i)
                        .add(&p.w_hf.matvec_transposed(&da_f))
                        .add(&p.w_ho.matvec_transposed(&da_o))
                        .add(&p.w_hg.matvec_transposed(&da_g));
                }
                (CellParams::Rnn(p), CellParams::Rnn(g)) => {
                    let da = dh.hadamard(&entry.h.map(|v| one - v * v));
                    g.w_x.add_outer(one, &da, &entry.input);
                    g.w_h.add_outer(one, &da, &entry.h_prev);
                    g.b_h.axpy(one, &da);
                    dh_next = p.w_h.matvec_transposed(&da);
                }
                _ => unreachable!("gradient buffer mirrors parameter layout"),
            }
        }
        Ok(grads)
    }

    /// Plain gradient descent `θ ← θ − lr·∇θ`. Recurrent state is untouched.
    pub fn apply_update(&mut self, grads: &Gradients<T>, lr: T) -> Result<UpdateOutcome> {
        if !(lr > T::zero() && lr.is_finite()) {
            return Err(Error::Usage(format!("learning rate must be positive, got {lr}")));
        }
        if !grads.is_finite() {
            return Ok(UpdateOutcome::SkippedNonFinite);
        }
        self.params.axpy(-lr, grads);
        if !self.params.is_finite() {
            return Err(Error::Numeric("parameters became non-finite after an update".into()));
        }
        Ok(UpdateOutcome::Applied)
    }

    /// Zeroes `h` and `m` and clears the tape; parameters are kept.
    pub fn reset_hidden(&mut self) {
        self.h = Vector::zeros(self.hidden_dim());
        self.m = Vector::zeros(self.hidden_dim());
        self.tape.clear();
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        write_checkpoint(&self.params, path)
    }
}

/// `Σ (observed − prediction)²` for [`ErrorNorm::L2Sq`], `Σ |observed − prediction|` for L1.
pub fn loss<T: Scalar>(prediction: &Vector<T>, observed: &Vector<T>, norm: ErrorNorm) -> T {
    assert_eq!(prediction.dim(), observed.dim(), "loss: dimension mismatch");
    let residuals = observed.iter().zip(prediction.iter()).map(|(&o, &p)| o - p);
    match norm {
        ErrorNorm::L2Sq => residuals.map(|r| r * r).sum(),
        ErrorNorm::L1 => residuals.map(|r| r.abs()).sum(),
    }
}

fn loss_gradient<T: Scalar>(prediction: &Vector<T>, observed: &Vector<T>, norm: ErrorNorm) -> Vector<T> {
    let two = T::lit(2.0);
    let r = prediction.sub(observed);
    match norm {
        ErrorNorm::L2Sq => r.scale(two),
        ErrorNorm::L1 => r.map(|v| if v > T::zero() { T::one() } else if v < T::zero() { -T::one() } else { T::zero() }),
    }
}

/// `PSP1`, cell tag (u32: 0 rnn, 1 lstm), input dim (u32), hidden dim (u32),
/// then every tensor in declaration order as little-endian f64.
pub fn write_checkpoint<T: Scalar>(params: &Params<T>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    out.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    for v in [
        params.kind().tag(),
        params.input_dim() as u32,
        params.hidden_dim() as u32,
    ] {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    for (_, t) in params.tensors() {
        for x in t {
            out.write_all(&x.to_f64_lossy().to_le_bytes()).map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Reads a checkpoint and checks it against the expected cell and shape.
pub fn read_checkpoint<T: Scalar>(path: &Path, expected: &PredictorConfig) -> Result<Params<T>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(path, "missing PSP1 header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let (tag, d, h) = (word(0), word(1) as usize, word(2) as usize);
    if tag != expected.cell.tag() {
        return Err(Error::format(
            path,
            format!("checkpoint cell tag {tag} does not match {}", expected.cell.as_str()),
        ));
    }
    if d != expected.input_dim || h != expected.hidden_dim {
        return Err(Error::format(
            path,
            format!(
                "checkpoint dims {d}x{h} do not match expected {}x{}",
                expected.input_dim, expected.hidden_dim
            ),
        ));
    }
    let mut params = Params::<T>::init(expected)?;
    let body = &bytes[16..];
    let needed = params.num_values() * 8;
    if body.len() != needed {
        return Err(Error::format(
            path,
            format!("expected {needed} bytes of parameters, found {}", body.len()),
        ));
    }
    let mut values = body
        .chunks_exact(8)
        .map(|b| T::lit(f64::from_le_bytes(b.try_into().unwrap())));
    for (_, t) in params.tensors_mut() {
        for x in t.iter_mut() {
            *x = values.next().expect("length checked above");
        }
    }
    Ok(params)
}
