//! Noise predictors `eps(x_t, y, t)`.
//!
//! Two implementations: the exact conditional expectation for the
//! conjugate-Gaussian toy (clean and noise both i.i.d. Gaussian), and a
//! small fully connected network over fixed-length frames.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::Rng;

pub const DEFAULT_FRAME: usize = 128;
pub const DEFAULT_HIDDEN: usize = 256;
/// Number of sinusoid pairs in the step embedding.
const EMBED_FREQS: usize = 8;
const EMBED_DIM: usize = 1 + 2 * EMBED_FREQS;

const CKPT_MAGIC: &[u8; 4] = b"CDFP";
const CKPT_VERSION: u32 = 1;

/// MMSE predictor for `x0 ~ N(0, clean_var I)`, `n ~ N(0, noise_var I)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianOracle {
    clean_var: f64,
    noise_var: f64,
}

impl GaussianOracle {
    pub fn new(clean_var: f64, noise_var: f64) -> Result<Self> {
        if !(clean_var > 0.0 && noise_var > 0.0 && clean_var.is_finite() && noise_var.is_finite())
        {
            return Err(Error::Predictor(format!(
                "oracle variances must be positive, got ({clean_var}, {noise_var})"
            )));
        }
        Ok(Self {
            clean_var,
            noise_var,
        })
    }

    pub fn clean_var(&self) -> f64 {
        self.clean_var
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Weights `(w_x, w_y)` with `E[x0 | x_t, y] = w_x x_t + w_y y`.
    pub fn clean_weights(&self, s: &NoiseSchedule, t: usize) -> (f64, f64) {
        let (vx, vn) = (self.clean_var, self.noise_var);
        let sab = s.alpha_bar(t).sqrt();
        let m = s.m(t);
        // x_t = sab x0 + m sab n + sqrt(delta) eps, y = x0 + n.
        let var_xt = sab * sab * (vx + m * m * vn) + s.delta(t);
        let cov_xy = sab * (vx + m * vn);
        let var_y = vx + vn;
        let (c0x, c0y) = (sab * vx, vx);
        let det = var_xt * var_y - cov_xy * cov_xy;
        (
            (var_y * c0x - cov_xy * c0y) / det,
            (var_xt * c0y - cov_xy * c0x) / det,
        )
    }

    pub fn predict(&self, s: &NoiseSchedule, t: usize, x_t: &[f64], y: &[f64]) -> Vec<f64> {
        let (wx, wy) = self.clean_weights(s, t);
        let sab = s.alpha_bar(t).sqrt();
        let scale = 1.0 / s.one_minus_alpha_bar(t).sqrt();
        x_t.iter()
            .zip(y)
            .map(|(&xt, &y)| (xt - sab * (wx * xt + wy * y)) * scale)
            .collect()
    }
}

/// One training pair for the trainable predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub x_t: Vec<f64>,
    pub y: Vec<f64>,
    pub t: usize,
    pub target: Vec<f64>,
}

/// Two-hidden-layer SiLU network mapping `[x_t frame, y frame, step
/// embedding]` to a noise frame.
///
/// Parameters live in one flat vector laid out as
/// `W1 (h x in), b1, W2 (h x h), b2, W3 (frame x h), b3`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainablePredictor {
    frame: usize,
    hidden: usize,
    params: Vec<f64>,
}

struct Layout {
    w1: (usize, usize, usize),
    b1: usize,
    w2: (usize, usize, usize),
    b2: usize,
    w3: (usize, usize, usize),
    b3: usize,
    total: usize,
}

fn layout(frame: usize, hidden: usize) -> Layout {
    let input = 2 * frame + EMBED_DIM;
    let w1 = (0, hidden, input);
    let b1 = hidden * input;
    let w2 = (b1 + hidden, hidden, hidden);
    let b2 = w2.0 + hidden * hidden;
    let w3 = (b2 + hidden, frame, hidden);
    let b3 = w3.0 + frame * hidden;
    Layout {
        w1,
        b1,
        w2,
        b2,
        w3,
        b3,
        total: b3 + frame,
    }
}

pub fn param_count(frame: usize, hidden: usize) -> usize {
    layout(frame, hidden).total
}

fn silu(z: f64) -> f64 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f64) -> f64 {
    let sig = 1.0 / (1.0 + (-z).exp());
    sig * (1.0 + z * (1.0 - sig))
}

/// Sinusoidal features of the normalised continuous training step.
pub fn step_embedding(aligned_step: f64, train_steps: usize) -> [f64; EMBED_DIM] {
    let tau = aligned_step / train_steps.max(1) as f64;
    let mut out = [0.0; EMBED_DIM];
    out[0] = tau;
    for k in 0..EMBED_FREQS {
        let w = PI * f64::from(1u32 << k);
        out[1 + 2 * k] = (w * tau).sin();
        out[2 + 2 * k] = (w * tau).cos();
    }
    out
}

struct Activations {
    input: Array2<f64>,
    z1: Array2<f64>,
    h1: Array2<f64>,
    z2: Array2<f64>,
    h2: Array2<f64>,
    out: Array2<f64>,
}

impl TrainablePredictor {
    /// Glorot-uniform hidden layers, small output layer, zero biases.
    pub fn new(frame: usize, hidden: usize, rng: &mut Rng) -> Self {
        let l = layout(frame, hidden);
        let mut params = vec![0.0; l.total];
        for ((off, rows, cols), gain) in [(l.w1, 1.0), (l.w2, 1.0), (l.w3, 0.1)] {
            let bound = gain * (6.0 / (rows + cols) as f64).sqrt();
            for p in &mut params[off..off + rows * cols] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Self {
            frame,
            hidden,
            params,
        }
    }

    pub fn with_default_shape(rng: &mut Rng) -> Self {
        Self::new(DEFAULT_FRAME, DEFAULT_HIDDEN, rng)
    }

    pub fn from_params(frame: usize, hidden: usize, params: Vec<f64>) -> Result<Self> {
        let want = param_count(frame, hidden);
        if params.len() != want {
            return Err(Error::LengthMismatch {
                expected: want,
                actual: params.len(),
            });
        }
        Ok(Self {
            frame,
            hidden,
            params,
        })
    }

    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn mat(&self, (off, rows, cols): (usize, usize, usize)) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[off..off + rows * cols]).unwrap()
    }

    fn vec(&self, off: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[off..off + len])
    }

    fn build_input(&self, rows: &[(&[f64], &[f64], [f64; EMBED_DIM])]) -> Array2<f64> {
        let width = 2 * self.frame + EMBED_DIM;
        let mut input = Array2::zeros((rows.len(), width));
        for (mut row, (xt, y, emb)) in input.outer_iter_mut().zip(rows) {
            row.slice_mut(s![..self.frame])
                .assign(&ArrayView1::from(*xt));
            row.slice_mut(s![self.frame..2 * self.frame])
                .assign(&ArrayView1::from(*y));
            row.slice_mut(s![2 * self.frame..])
                .assign(&ArrayView1::from(&emb[..]));
        }
        input
    }

    fn forward(&self, input: Array2<f64>) -> Activations {
        let l = layout(self.frame, self.hidden);
        let z1 = input.dot(&self.mat(l.w1).t()) + self.vec(l.b1, self.hidden);
        let h1 = z1.mapv(silu);
        let z2 = h1.dot(&self.mat(l.w2).t()) + self.vec(l.b2, self.hidden);
        let h2 = z2.mapv(silu);
        let out = h2.dot(&self.mat(l.w3).t()) + self.vec(l.b3, self.frame);
        Activations {
            input,
            z1,
            h1,
            z2,
            h2,
            out,
        }
    }

    /// Predicts one frame per row.
    fn predict_frames(&self, frames: &[(&[f64], &[f64])], s: &NoiseSchedule, t: usize) -> Array2<f64> {
        let emb = step_embedding(s.aligned_step(t), s.train_steps());
        let rows: Vec<_> = frames.iter().map(|(x, y)| (*x, *y, emb)).collect();
        self.forward(self.build_input(&rows)).out
    }

    /// Predicts a signal of any length by overlapping frames (50% hop)
    /// cross-faded with a triangular window.
    pub fn predict(&self, s: &NoiseSchedule, t: usize, x_t: &[f64], y: &[f64]) -> Vec<f64> {
        let len = x_t.len();
        let frame = self.frame;
        if len == frame {
            let out = self.predict_frames(&[(x_t, y)], s, t);
            return out.row(0).to_vec();
        }
        let hop = (frame / 2).max(1);
        let mut starts = vec![0usize];
        while starts.last().unwrap() + frame < len {
            starts.push(starts.last().unwrap() + hop);
        }
        let padded_len = starts.last().unwrap() + frame;
        let mut xp = x_t.to_vec();
        let mut yp = y.to_vec();
        xp.resize(padded_len, 0.0);
        yp.resize(padded_len, 0.0);

        let frames: Vec<(&[f64], &[f64])> = starts
            .iter()
            .map(|&st| (&xp[st..st + frame], &yp[st..st + frame]))
            .collect();
        let pred = self.predict_frames(&frames, s, t);

        let window: Vec<f64> = (0..frame)
            .map(|i| 1.0 - ((2.0 * (i as f64 + 0.5) / frame as f64) - 1.0).abs())
            .collect();
        let mut acc = vec![0.0; padded_len];
        let mut norm = vec![0.0; padded_len];
        for (row, &st) in pred.outer_iter().zip(&starts) {
            for i in 0..frame {
                acc[st + i] += window[i] * row[i];
                norm[st + i] += window[i];
            }
        }
        acc.truncate(len);
        acc.iter_mut().zip(&norm).for_each(|(a, n)| *a /= n);
        acc
    }

    /// Mean squared error over all batch elements and its gradient with
    /// respect to the flat parameter vector.
    pub fn loss_and_gradient(
        &self,
        batch: &[TrainingExample],
        s: &NoiseSchedule,
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Predictor("empty batch".into()));
        }
        for ex in batch {
            for len in [ex.x_t.len(), ex.y.len(), ex.target.len()] {
                if len != self.frame {
                    return Err(Error::LengthMismatch {
                        expected: self.frame,
                        actual: len,
                    });
                }
            }
            s.check_step(ex.t, 1)?;
        }
        let rows: Vec<_> = batch
            .iter()
            .map(|ex| {
                (
                    ex.x_t.as_slice(),
                    ex.y.as_slice(),
                    step_embedding(s.aligned_step(ex.t), s.train_steps()),
                )
            })
            .collect();
        let act = self.forward(self.build_input(&rows));

        let mut target = Array2::zeros((batch.len(), self.frame));
        for (mut row, ex) in target.outer_iter_mut().zip(batch) {
            row.assign(&ArrayView1::from(&ex.target[..]));
        }
        let diff = &act.out - &target;
        let count = diff.len() as f64;
        let loss = diff.iter().map(|d| d * d).sum::<f64>() / count;

        let l = layout(self.frame, self.hidden);
        let mut grad = vec![0.0; l.total];
        let d_out = diff * (2.0 / count);

        let mut write_mat = |(off, rows, cols): (usize, usize, usize), m: Array2<f64>| {
            debug_assert_eq!(m.dim(), (rows, cols));
            for (dst, src) in grad[off..off + rows * cols].iter_mut().zip(m.iter()) {
                *dst = *src;
            }
        };
        write_mat(l.w3, d_out.t().dot(&act.h2));
        let d_h2 = d_out.dot(&self.mat(l.w3));
        let d_z2 = d_h2 * act.z2.mapv(silu_grad);
        write_mat(l.w2, d_z2.t().dot(&act.h1));
        let d_h1 = d_z2.dot(&self.mat(l.w2));
        let d_z1 = d_h1 * act.z1.mapv(silu_grad);
        write_mat(l.w1, d_z1.t().dot(&act.input));

        let mut write_vec = |off: usize, v: Array1<f64>| {
            grad[off..off + v.len()].copy_from_slice(v.as_slice().unwrap());
        };
        write_vec(l.b3, d_out.sum_axis(Axis(0)));
        write_vec(l.b2, d_z2.sum_axis(Axis(0)));
        write_vec(l.b1, d_z1.sum_axis(Axis(0)));
        Ok((loss, grad))
    }

    /// Flat little-endian f64 parameters behind a 16-byte header:
    /// magic `CDFP`, u32 version, u64 parameter count.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(16 + 8 * self.params.len());
        buf.extend_from_slice(CKPT_MAGIC);
        buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            buf.extend_from_slice(&p.to_le_bytes());
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    /// Loads a checkpoint for a network with `frame`-sample frames; the
    /// hidden width is recovered from the parameter count.
    pub fn load(path: &Path, frame: usize) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let bad = |message: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message,
        };
        if bytes.len() < 16 {
            return Err(bad(format!("file is {} bytes, header needs 16", bytes.len())));
        }
        if &bytes[..4] != CKPT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CKPT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() != 16 + 8 * count {
            return Err(bad(format!(
                "header declares {count} parameters but body has {} bytes",
                bytes.len() - 16
            )));
        }
        let hidden = (1..=16_384)
            .find(|&h| param_count(frame, h) >= count)
            .filter(|&h| param_count(frame, h) == count)
            .ok_or_else(|| bad(format!("{count} parameters fit no network with frame {frame}")))?;
        let params = bytes[16..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::from_params(frame, hidden, params)
    }
}

/// A noise predictor: analytic oracle or trainable network.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Oracle(GaussianOracle),
    Trainable(TrainablePredictor),
}

impl From<GaussianOracle> for Predictor {
    fn from(o: GaussianOracle) -> Self {
        Predictor::Oracle(o)
    }
}

impl From<TrainablePredictor> for Predictor {
    fn from(p: TrainablePredictor) -> Self {
        Predictor::Trainable(p)
    }
}

impl Predictor {
    pub fn predict(
        &self,
        s: &NoiseSchedule,
        t: usize,
        x_t: &[f64],
        y: &[f64],
    ) -> Result<Vec<f64>> {
        if x_t.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: x_t.len(),
                actual: y.len(),
            });
        }
        s.check_step(t, 1)?;
        Ok(match self {
            Predictor::Oracle(o) => o.predict(s, t, x_t, y),
            Predictor::Trainable(p) => p.predict(s, t, x_t, y),
        })
    }

    pub fn train_gradient(
        &self,
        batch: &[TrainingExample],
        s: &NoiseSchedule,
    ) -> Result<(f64, Vec<f64>)> {
        match self {
            Predictor::Oracle(_) => Err(Error::Predictor(
                "analytic oracle has no trainable parameters".into(),
            )),
            Predictor::Trainable(p) => p.loss_and_gradient(batch, s),
        }
    }
}
