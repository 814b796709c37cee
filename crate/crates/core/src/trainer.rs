//! Training loop for the trainable predictor: draw `(x0, y)`, a step `t`
//! and Gaussian noise, build `x_t`, regress the combined-noise target.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::audio::read_wav;
use crate::error::{Error, Result};
use crate::forward::{training_target, xt_from_noise, PairedSignal};
use crate::predictor::{TrainablePredictor, TrainingExample, DEFAULT_FRAME, DEFAULT_HIDDEN};
use crate::schedule::{build_schedule, MKind, NoiseSchedule, ScheduleConfig};
use crate::{seeded_rng, standard_normal_vec, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidConfig(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub hidden: usize,
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            hidden: DEFAULT_HIDDEN,
            schedule: ScheduleConfig::base(),
        }
    }
}

impl TrainConfig {
    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are
    /// errors; missing keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::ConfigParse {
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            fn num<T: FromStr>(v: &str, key: &str) -> std::result::Result<T, String> {
                v.parse().map_err(|_| format!("bad value `{v}` for `{key}`"))
            }
            match key {
                "iterations" => cfg.iterations = num(value, key).map_err(err)?,
                "batch_size" => cfg.batch_size = num(value, key).map_err(err)?,
                "learning_rate" => cfg.learning_rate = num(value, key).map_err(err)?,
                "seed" => cfg.seed = num(value, key).map_err(err)?,
                "hidden" => cfg.hidden = num(value, key).map_err(err)?,
                "optimizer" => cfg.optimizer = value.parse().map_err(|e: Error| err(e.to_string()))?,
                "steps" | "T" => cfg.schedule.steps = num(value, key).map_err(err)?,
                "beta_start" => cfg.schedule.beta_start = num(value, key).map_err(err)?,
                "beta_end" => cfg.schedule.beta_end = num(value, key).map_err(err)?,
                "m" => {
                    cfg.schedule.m_kind =
                        value.parse::<MKind>().map_err(|e| err(e.to_string()))?
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and hidden must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        self.schedule.validate()
    }
}

/// Source of aligned `(x0, y)` frames.
pub trait FrameSource {
    fn frame_len(&self) -> usize;
    fn next_pair(&mut self, rng: &mut Rng) -> Result<PairedSignal>;
}

/// Synthetic clean/noisy frames: clean is a mixture of random-phase
/// sinusoids; noise is AR(1)-filtered Gaussian plus uniform bursts.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub frame: usize,
    pub sample_rate: f64,
    pub max_tones: usize,
    pub ar_coef: f64,
    pub noise_std: f64,
    pub burst_prob: f64,
    pub burst_amp: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            frame: DEFAULT_FRAME,
            sample_rate: 16_000.0,
            max_tones: 3,
            ar_coef: 0.8,
            noise_std: 0.15,
            burst_prob: 0.3,
            burst_amp: 0.4,
        }
    }
}

impl SyntheticTask {
    pub fn clean(&self, len: usize, rng: &mut Rng) -> Vec<f64> {
        let tones = rng.random_range(1..=self.max_tones);
        let mut out = vec![0.0; len];
        for _ in 0..tones {
            let freq = rng.random_range(100.0..2000.0);
            let amp = rng.random_range(0.1..0.4);
            let phase = rng.random_range(0.0..2.0 * PI);
            let w = 2.0 * PI * freq / self.sample_rate;
            for (i, v) in out.iter_mut().enumerate() {
                *v += amp * (w * i as f64 + phase).sin();
            }
        }
        out
    }

    pub fn noise(&self, len: usize, rng: &mut Rng) -> Vec<f64> {
        let innov = self.noise_std * (1.0 - self.ar_coef * self.ar_coef).sqrt();
        let z0: f64 = StandardNormal.sample(&mut *rng);
        let mut state = self.noise_std * z0;
        let mut out: Vec<f64> = (0..len)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut *rng);
                state = self.ar_coef * state + innov * z;
                state
            })
            .collect();
        if rng.random_bool(self.burst_prob) {
            let burst = rng.random_range(len / 16..=len / 4).max(1);
            let start = rng.random_range(0..=len - burst.min(len));
            for v in out.iter_mut().skip(start).take(burst) {
                *v += rng.random_range(-self.burst_amp..self.burst_amp);
            }
        }
        out
    }

    pub fn pair(&self, len: usize, rng: &mut Rng) -> PairedSignal {
        let x0 = self.clean(len, rng);
        let n = self.noise(len, rng);
        let y = x0.iter().zip(&n).map(|(a, b)| a + b).collect();
        PairedSignal::new(x0, y).expect("synthetic frames are finite")
    }
}

impl FrameSource for SyntheticTask {
    fn frame_len(&self) -> usize {
        self.frame
    }

    fn next_pair(&mut self, rng: &mut Rng) -> Result<PairedSignal> {
        Ok(self.pair(self.frame, rng))
    }
}

/// `x0 ~ N(0, clean_var I)`, `y = x0 + n`, `n ~ N(0, noise_var I)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianTask {
    pub frame: usize,
    pub clean_var: f64,
    pub noise_var: f64,
}

impl GaussianTask {
    pub fn pair(&self, len: usize, rng: &mut Rng) -> PairedSignal {
        let x0: Vec<f64> = standard_normal_vec(rng, len)
            .into_iter()
            .map(|v| v * self.clean_var.sqrt())
            .collect();
        let y = x0
            .iter()
            .zip(standard_normal_vec(rng, len))
            .map(|(x, n)| x + self.noise_var.sqrt() * n)
            .collect();
        PairedSignal::new(x0, y).expect("gaussian frames are finite")
    }
}

impl FrameSource for GaussianTask {
    fn frame_len(&self) -> usize {
        self.frame
    }

    fn next_pair(&mut self, rng: &mut Rng) -> Result<PairedSignal> {
        Ok(self.pair(self.frame, rng))
    }
}

/// Random frames cut from matching clean/noisy WAV files (same file name
/// in both directories).
#[derive(Debug, Clone)]
pub struct WavPairSource {
    frame: usize,
    pairs: Vec<PairedSignal>,
}

impl WavPairSource {
    pub fn open(clean_dir: &Path, noisy_dir: &Path, frame: usize) -> Result<Self> {
        let mut names: Vec<PathBuf> = fs::read_dir(clean_dir)
            .map_err(|e| Error::io(clean_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        names.sort();
        let mut pairs = Vec::new();
        for clean_path in names {
            let noisy_path = noisy_dir.join(clean_path.file_name().unwrap());
            let clean = read_wav(&clean_path)?;
            let noisy = read_wav(&noisy_path)?;
            if clean.sample_rate != noisy.sample_rate {
                return Err(Error::InvalidSignal(format!(
                    "{}: sample rate {} differs from noisy {}",
                    clean_path.display(),
                    clean.sample_rate,
                    noisy.sample_rate
                )));
            }
            let len = clean.samples.len().min(noisy.samples.len());
            if len < frame {
                continue;
            }
            pairs.push(PairedSignal::new(
                clean.samples[..len].to_vec(),
                noisy.samples[..len].to_vec(),
            )?);
        }
        if pairs.is_empty() {
            return Err(Error::InvalidSignal(format!(
                "no usable wav pairs of at least {frame} samples in {}",
                clean_dir.display()
            )));
        }
        Ok(Self { frame, pairs })
    }
}

impl FrameSource for WavPairSource {
    fn frame_len(&self) -> usize {
        self.frame
    }

    fn next_pair(&mut self, rng: &mut Rng) -> Result<PairedSignal> {
        let p = &self.pairs[rng.random_range(0..self.pairs.len())];
        let start = rng.random_range(0..=p.len() - self.frame);
        let end = start + self.frame;
        PairedSignal::new(p.x0()[start..end].to_vec(), p.y()[start..end].to_vec())
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, params: usize) -> Self {
        let (m, v) = match kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam => (vec![0.0; params], vec![0.0; params]),
        };
        Self {
            kind,
            lr,
            m,
            v,
            step: 0,
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                self.step += 1;
                let c1 = 1.0 - B1.powi(self.step);
                let c2 = 1.0 - B2.powi(self.step);
                for (((p, g), m), v) in params
                    .iter_mut()
                    .zip(grad)
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    *m = B1 * *m + (1.0 - B1) * g;
                    *v = B2 * *v + (1.0 - B2) * g * g;
                    *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                }
            }
        }
    }
}

/// Builds one training example: `t ~ U{1..T}`, `eps ~ N(0, I)`.
pub fn make_example(s: &NoiseSchedule, pair: &PairedSignal, rng: &mut Rng) -> TrainingExample {
    let t = rng.random_range(1..=s.steps());
    let eps = standard_normal_vec(rng, pair.len());
    TrainingExample {
        x_t: xt_from_noise(s, t, pair.x0(), pair.y(), &eps),
        y: pair.y().to_vec(),
        t,
        target: training_target(s, t, pair.x0(), pair.y(), &eps),
    }
}

/// One gradient update on `batch`; returns the loss before the update.
pub fn train_step(
    s: &NoiseSchedule,
    predictor: &mut TrainablePredictor,
    optimizer: &mut Optimizer,
    batch: &[PairedSignal],
    rng: &mut Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Predictor("empty batch".into()));
    }
    let examples: Vec<TrainingExample> = batch.iter().map(|p| make_example(s, p, rng)).collect();
    let (loss, grad) = predictor.loss_and_gradient(&examples, s)?;
    optimizer.apply(predictor.params_mut(), &grad);
    Ok(loss)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the end of the lowest-mean-loss window.
    pub best: TrainablePredictor,
    pub last: TrainablePredictor,
    pub trace: Vec<f64>,
}

impl TrainOutcome {
    pub fn trace_text(&self) -> String {
        let mut out = String::new();
        for (i, l) in self.trace.iter().enumerate() {
            let _ = writeln!(out, "{}\t{l:e}", i + 1);
        }
        out
    }

    pub fn write(&self, checkpoint: &Path, trace: &Path) -> Result<()> {
        self.best.save(checkpoint)?;
        fs::write(trace, self.trace_text()).map_err(|e| Error::io(trace, e))
    }
}

const BEST_WINDOW: usize = 100;

/// Runs `config.iterations` steps on frames from `source`, starting from
/// `predictor`. Deterministic given `config.seed`.
pub fn run_training(
    config: &TrainConfig,
    source: &mut dyn FrameSource,
    predictor: TrainablePredictor,
) -> Result<TrainOutcome> {
    config.validate()?;
    if source.frame_len() != predictor.frame() {
        return Err(Error::LengthMismatch {
            expected: predictor.frame(),
            actual: source.frame_len(),
        });
    }
    let s = build_schedule(&config.schedule)?;
    let mut rng = seeded_rng(config.seed);
    let mut net = predictor;
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, net.params().len());
    let mut best = net.clone();
    let mut best_loss = f64::INFINITY;
    let mut trace = Vec::with_capacity(config.iterations);
    for i in 0..config.iterations {
        let batch = (0..config.batch_size)
            .map(|_| source.next_pair(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        trace.push(train_step(&s, &mut net, &mut opt, &batch, &mut rng)?);
        let done = i + 1;
        if done % BEST_WINDOW == 0 || done == config.iterations {
            let from = (done - 1) / BEST_WINDOW * BEST_WINDOW;
            let window = &trace[from..done];
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            if mean < best_loss {
                best_loss = mean;
                best = net.clone();
            }
        }
    }
    Ok(TrainOutcome {
        best,
        last: net,
        trace,
    })
}

pub fn init_predictor(config: &TrainConfig) -> TrainablePredictor {
    // Separate stream from the data so initialisation does not shift batches.
    let mut rng = seeded_rng(config.seed ^ 0x5eed_1417);
    TrainablePredictor::new(DEFAULT_FRAME, config.hidden, &mut rng)
}
