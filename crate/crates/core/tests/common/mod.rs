//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the code paths it checks except
//! for reading parameters and running forward steps.

#![allow(dead_code, clippy::needless_range_loop)]

use evseg::numerics::{Matrix, Rng, Vector};
use evseg::predictor::{
    loss, CellKind, CellParams, ErrorNorm, Params, Predictor, PredictorConfig,
};

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn affine(w: &Matrix<f64>, x: &[f64], wh: &Matrix<f64>, h: &[f64], b: &Vector<f64>, r: usize) -> f64 {
    let mut acc = b[r];
    for c in 0..w.cols() {
        acc += w.get(r, c) * x[c];
    }
    for c in 0..wh.cols() {
        acc += wh.get(r, c) * h[c];
    }
    acc
}

/// One step of the cell written as plain per-element loops.
/// Returns `(prediction, h, m)`.
pub fn scalar_step(
    params: &Params<f64>,
    x: &[f64],
    h_prev: &[f64],
    m_prev: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = params.hidden_dim();
    let mut h = vec![0.0; hd];
    let mut m = vec![0.0; hd];
    match &params.cell {
        CellParams::Lstm(p) => {
            for r in 0..hd {
                let i = logistic(affine(&p.w_i, x, &p.w_hi, h_prev, &p.b_i, r));
                let f = logistic(affine(&p.w_f, x, &p.w_hf, h_prev, &p.b_f, r));
                let o = logistic(affine(&p.w_o, x, &p.w_ho, h_prev, &p.b_o, r));
                let g = affine(&p.w_g, x, &p.w_hg, h_prev, &p.b_g, r).tanh();
                m[r] = f * m_prev[r] + i * g;
                h[r] = o * m[r].tanh();
            }
        }
        CellParams::Rnn(p) => {
            for r in 0..hd {
                h[r] = affine(&p.w_x, x, &p.w_h, h_prev, &p.b_h, r).tanh();
            }
        }
    }
    let d = params.input_dim();
    let mut y = vec![0.0; d];
    for r in 0..d {
        y[r] = params.b_dec[r];
        for c in 0..hd {
            y[r] += params.w_dec.get(r, c) * h[c];
        }
    }
    (y, h, m)
}

pub fn random_config(cell: CellKind, d: usize, h: usize, window: usize, seed: u64) -> PredictorConfig {
    PredictorConfig {
        cell,
        input_dim: d,
        hidden_dim: h,
        bptt_window: window,
        init_stddev: 0.5,
        forget_bias: 1.0,
        error_norm: ErrorNorm::L2Sq,
        seed,
    }
}

/// Max over elements of `|a - n| / max(|a|, |n|, floor)` for one tensor.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub const FD_EPS: f64 = 1e-5;
/// Gradients below this magnitude are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-6;

/// Checks `Predictor::backward` against central finite differences of the
/// windowed loss, starting from a random `(h0, m0)`.
/// Returns `(tensor name, max relative error)` for every tensor.
pub fn gradient_check(cell: CellKind, d: usize, h: usize, window: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let cfg = random_config(cell, d, h, window, seed);
    let mut rng = Rng::new(seed ^ 0x9e37_79b9_7f4a_7c15);
    let h0: Vector<f64> = rng.normal_vector::<f64>(h, 1.0).tanh();
    let m0: Vector<f64> = if cell == CellKind::Lstm {
        rng.normal_vector(h, 1.0)
    } else {
        Vector::zeros(h)
    };
    let inputs: Vec<Vector<f64>> = (0..window).map(|_| rng.normal_vector(d, 1.0)).collect();
    let targets: Vec<Vector<f64>> = (0..window).map(|_| rng.normal_vector(d, 1.0)).collect();

    let base = Params::<f64>::init(&cfg).unwrap();
    let window_loss = |params: &Params<f64>| -> f64 {
        let mut p = Predictor::from_params(params.clone(), window, ErrorNorm::L2Sq);
        p.set_state(h0.clone(), m0.clone());
        inputs
            .iter()
            .zip(&targets)
            .map(|(x, y)| loss(&p.step(x), y, ErrorNorm::L2Sq))
            .sum()
    };

    let mut p = Predictor::from_params(base.clone(), window, ErrorNorm::L2Sq);
    p.set_state(h0.clone(), m0.clone());
    for x in &inputs {
        p.step(x);
    }
    let grads = p.backward(&targets).unwrap();

    let names: Vec<&'static str> = base.tensors().iter().map(|(n, _)| *n).collect();
    let mut out = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let len = base.tensors()[ti].1.len();
        let mut numeric = vec![0.0; len];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let mut plus = base.clone();
            plus.tensors_mut()[ti].1[k] += FD_EPS;
            let mut minus = base.clone();
            minus.tensors_mut()[ti].1[k] -= FD_EPS;
            *slot = (window_loss(&plus) - window_loss(&minus)) / (2.0 * FD_EPS);
        }
        let analytic = grads.tensors()[ti].1.to_vec();
        out.push((*name, relative_error(&analytic, &numeric, FD_FLOOR)));
    }
    out
}

/// Best total over all permutations (rows ≤ cols assumed after transposition).
pub fn brute_force_assignment(m: &[Vec<f64>], maximize: bool) -> f64 {
    let rows = m.len();
    let cols = m[0].len();
    // pad to square with zeros
    let n = rows.max(cols);
    let at = |r: usize, c: usize| if r < rows && c < cols { m[r][c] } else { 0.0 };
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
    permute(&mut perm, 0, &mut |p| {
        let total: f64 = p.iter().enumerate().map(|(r, &c)| at(r, c)).sum();
        if (maximize && total > best) || (!maximize && total < best) {
            best = total;
        }
    });
    best
}

fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        f(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

/// `P(t) = (1 − 1/n)^t P(0) + Σ_{s=1..t} (1/n)(1 − 1/n)^{t−s} E(s)`
pub fn ema_closed_form(p0: f64, errors: &[f64], n: usize) -> f64 {
    let a = 1.0 / n as f64;
    let t = errors.len();
    let mut acc = (1.0 - a).powi(t as i32) * p0;
    for (s, &e) in errors.iter().enumerate() {
        acc += a * (1.0 - a).powi((t - 1 - s) as i32) * e;
    }
    acc
}
