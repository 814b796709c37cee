//! Per-step scalars of the conditional diffusion process.
//!
//! All arrays are indexed by step `t` in `0..=T`. Index 0 holds the data
//! step (`alpha_bar = 1`, `m = 0`, `delta = 0`); quantities that only exist
//! for `t >= 1` (beta, delta_cond, delta_tilde) store a zero placeholder there.

// Negated comparisons below are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Inference variances of the six-step fast sampling schedule.
pub const FAST_GAMMA: [f64; 6] = [0.0001, 0.001, 0.01, 0.05, 0.2, 0.35];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BetaKind {
    /// Arithmetic progression from `beta_start` to `beta_end`, both inclusive.
    #[default]
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MKind {
    /// `m_t = sqrt((1 - abar_t) / sqrt(abar_t))`.
    #[default]
    PaperDefault,
    /// `m_t = 0`: the vanilla DDPM.
    Zero,
}

impl std::str::FromStr for MKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" | "paper_default" | "default" => Ok(MKind::PaperDefault),
            "zero" | "0" => Ok(MKind::Zero),
            other => Err(Error::InvalidConfig(format!("unknown m kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub beta_kind: BetaKind,
    pub m_kind: MKind,
}

impl ScheduleConfig {
    /// 50 steps, beta in [1e-4, 0.035].
    pub fn base() -> Self {
        Self {
            steps: 50,
            beta_start: 1e-4,
            beta_end: 0.035,
            beta_kind: BetaKind::Linear,
            m_kind: MKind::PaperDefault,
        }
    }

    /// 200 steps, beta in [1e-4, 0.0095].
    pub fn large() -> Self {
        Self {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.0095,
            beta_kind: BetaKind::Linear,
            m_kind: MKind::PaperDefault,
        }
    }

    pub fn with_m(mut self, m_kind: MKind) -> Self {
        self.m_kind = m_kind;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("step count must be >= 1".into()));
        }
        let ok = self.beta_start > 0.0
            && self.beta_start <= self.beta_end
            && self.beta_end < 1.0
            && self.beta_start.is_finite()
            && self.beta_end.is_finite();
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "need 0 < beta_start <= beta_end < 1, got [{}, {}]",
                self.beta_start, self.beta_end
            )));
        }
        Ok(())
    }

    pub fn betas(&self) -> Vec<f64> {
        match self.beta_kind {
            BetaKind::Linear => linear_betas(self.steps, self.beta_start, self.beta_end),
        }
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::base()
    }
}

pub fn linear_betas(steps: usize, start: f64, end: f64) -> Vec<f64> {
    if steps == 1 {
        return vec![start];
    }
    let span = end - start;
    let last = (steps - 1) as f64;
    (0..steps)
        .map(|i| {
            if i == steps - 1 {
                end
            } else {
                start + span * (i as f64) / last
            }
        })
        .collect()
}

/// Closed-form interpolation ratio from the cumulative signal fraction.
/// `one_minus_alpha_bar` is passed separately to keep precision near `abar = 1`.
pub fn default_m(alpha_bar: f64, one_minus_alpha_bar: f64) -> f64 {
    (one_minus_alpha_bar / alpha_bar.sqrt()).sqrt()
}

/// Reverse-step weights and variance at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorCoefficients {
    pub c_x: f64,
    pub c_y: f64,
    pub c_eps: f64,
    pub variance: f64,
}

/// Immutable table of per-step scalars for a `T`-step process.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    one_minus_alpha_bar: Vec<f64>,
    m: Vec<f64>,
    delta: Vec<f64>,
    delta_cond: Vec<f64>,
    delta_tilde: Vec<f64>,
    aligned_step: Vec<f64>,
    train_steps: usize,
}

pub fn build_schedule(config: &ScheduleConfig) -> Result<NoiseSchedule> {
    config.validate()?;
    NoiseSchedule::from_betas(&config.betas(), config.m_kind)
}

impl NoiseSchedule {
    /// Builds a schedule from an explicit beta sequence (`beta_1..beta_T`).
    pub fn from_betas(betas: &[f64], m_kind: MKind) -> Result<Self> {
        validate_betas(betas)?;
        let (alpha_bar, one_minus) = cumulative(betas);
        let m = m_from_alpha_bar(&alpha_bar, &one_minus, m_kind);
        let aligned = (0..=betas.len()).map(|t| t as f64).collect();
        Self::assemble(betas, alpha_bar, one_minus, m, aligned, betas.len())
    }

    /// Builds a schedule from betas and an explicit `m[0..=T]` sequence.
    pub fn from_betas_and_m(betas: &[f64], m: &[f64]) -> Result<Self> {
        validate_betas(betas)?;
        if m.len() != betas.len() + 1 {
            return Err(Error::LengthMismatch {
                expected: betas.len() + 1,
                actual: m.len(),
            });
        }
        if m[0] != 0.0 {
            return Err(Error::InvalidConfig(format!("m[0] must be 0, got {}", m[0])));
        }
        let (alpha_bar, one_minus) = cumulative(betas);
        let aligned = (0..=betas.len()).map(|t| t as f64).collect();
        Self::assemble(betas, alpha_bar, one_minus, m.to_vec(), aligned, betas.len())
    }

    fn assemble(
        betas: &[f64],
        alpha_bar: Vec<f64>,
        one_minus_alpha_bar: Vec<f64>,
        m: Vec<f64>,
        aligned_step: Vec<f64>,
        train_steps: usize,
    ) -> Result<Self> {
        let steps = betas.len();
        let mut beta = Vec::with_capacity(steps + 1);
        beta.push(0.0);
        beta.extend_from_slice(betas);
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();

        let delta: Vec<f64> = (0..=steps)
            .map(|t| one_minus_alpha_bar[t] - m[t] * m[t] * alpha_bar[t])
            .collect();

        let mut delta_cond = vec![0.0; steps + 1];
        let mut delta_tilde = vec![0.0; steps + 1];
        for t in 1..=steps {
            if m[t - 1] == 1.0 {
                return Err(Error::InadmissibleSchedule {
                    quantity: "1 - m",
                    step: t - 1,
                    value: 0.0,
                });
            }
            let r = (1.0 - m[t]) / (1.0 - m[t - 1]);
            // delta_t - r^2 alpha_t delta_{t-1}, regrouped so that m = 0 gives beta_t exactly.
            delta_cond[t] = beta[t] + alpha[t] * one_minus_alpha_bar[t - 1] * (1.0 - r * r)
                - alpha_bar[t] * (m[t] * m[t] - r * r * m[t - 1] * m[t - 1]);
            delta_tilde[t] = if t == 1 {
                delta_cond[1]
            } else {
                delta_cond[t] * delta[t - 1] / delta[t]
            };
        }

        let schedule = Self {
            beta,
            alpha,
            alpha_bar,
            one_minus_alpha_bar,
            m,
            delta,
            delta_cond,
            delta_tilde,
            aligned_step,
            train_steps,
        };
        schedule.check_admissible()?;
        Ok(schedule)
    }

    fn check_admissible(&self) -> Result<()> {
        let positive = |quantity: &'static str, values: &[f64]| -> Result<()> {
            for (t, &v) in values.iter().enumerate().skip(1) {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::InadmissibleSchedule {
                        quantity,
                        step: t,
                        value: v,
                    });
                }
            }
            Ok(())
        };
        positive("delta", &self.delta)?;
        positive("delta_cond", &self.delta_cond)?;
        positive("delta_tilde", &self.delta_tilde)?;
        for (t, w) in self.alpha_bar.windows(2).enumerate() {
            if !(w[1] < w[0]) || !(w[1] > 0.0) {
                return Err(Error::InadmissibleSchedule {
                    quantity: "alpha_bar",
                    step: t + 1,
                    value: w[1],
                });
            }
        }
        Ok(())
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    /// Step count of the training schedule this one was aligned to.
    pub fn train_steps(&self) -> usize {
        self.train_steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }
    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.one_minus_alpha_bar[t]
    }
    pub fn m(&self, t: usize) -> f64 {
        self.m[t]
    }
    pub fn delta(&self, t: usize) -> f64 {
        self.delta[t]
    }
    pub fn delta_cond(&self, t: usize) -> f64 {
        self.delta_cond[t]
    }
    pub fn delta_tilde(&self, t: usize) -> f64 {
        self.delta_tilde[t]
    }

    /// Continuous position of step `t` on the training schedule. Equal to
    /// `t` for training schedules; fractional for fast-sampling schedules.
    pub fn aligned_step(&self, t: usize) -> f64 {
        self.aligned_step[t]
    }

    /// `beta_1..beta_T`.
    pub fn betas(&self) -> &[f64] {
        &self.beta[1..]
    }
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
    pub fn ms(&self) -> &[f64] {
        &self.m
    }
    pub fn deltas(&self) -> &[f64] {
        &self.delta
    }

    pub fn check_step(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            return Err(Error::StepOutOfRange {
                step: t,
                min,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn posterior_coefficients(&self, t: usize) -> Result<PosteriorCoefficients> {
        self.check_step(t, 1)?;
        let (m_t, m_prev) = (self.m[t], self.m[t - 1]);
        let (d_t, d_prev) = (self.delta[t], self.delta[t - 1]);
        let d_cond = self.delta_cond[t];
        let sqrt_alpha = self.alpha[t].sqrt();

        let r = (1.0 - m_t) / (1.0 - m_prev);
        // At t = 1 delta_0 = 0, so the x_t carry-over term vanishes.
        let carry = if t == 1 {
            0.0
        } else {
            r * (d_prev / d_t) * sqrt_alpha
        };
        let c_x = carry + (1.0 - m_prev) * (d_cond / d_t) / sqrt_alpha;
        let c_y = if t == 1 {
            0.0
        } else {
            (m_prev * d_t - m_t * r * self.alpha[t] * d_prev) * self.alpha_bar[t - 1].sqrt() / d_t
        };
        let c_eps =
            (1.0 - m_prev) * (d_cond / d_t) * self.one_minus_alpha_bar[t].sqrt() / sqrt_alpha;
        Ok(PosteriorCoefficients {
            c_x,
            c_y,
            c_eps,
            variance: self.delta_tilde[t],
        })
    }

    /// Reduced schedule for fast sampling with inference variances `gamma`.
    ///
    /// Each inference step is placed on the training schedule by bracketing
    /// its `sqrt(abar)` between two training steps and interpolating
    /// linearly; `m` and the variances are recomputed from the inference
    /// `abar`.
    pub fn fast_sampling(&self, gamma: &[f64]) -> Result<NoiseSchedule> {
        if gamma.is_empty() {
            return Err(Error::InvalidGamma("empty".into()));
        }
        if gamma.len() > self.steps() {
            return Err(Error::InvalidGamma(format!(
                "{} inference steps exceed {} training steps",
                gamma.len(),
                self.steps()
            )));
        }
        if gamma.iter().any(|g| !(*g > 0.0 && *g < 1.0)) {
            return Err(Error::InvalidGamma("values must lie in (0, 1)".into()));
        }
        if gamma.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidGamma("values must be strictly increasing".into()));
        }

        let (alpha_bar, one_minus) = cumulative(gamma);
        let train_sqrt: Vec<f64> = self.alpha_bar.iter().map(|a| a.sqrt()).collect();
        let min_ab = *self.alpha_bar.last().unwrap();

        let mut aligned = vec![0.0; gamma.len() + 1];
        for s in 1..=gamma.len() {
            let target = alpha_bar[s].sqrt();
            aligned[s] = align_step(&train_sqrt, target).ok_or(Error::GammaOutOfRange {
                gamma: gamma[s - 1],
                alpha_bar: alpha_bar[s],
                min: min_ab,
            })?;
        }

        let m_kind = if self.m.iter().all(|&m| m == 0.0) {
            MKind::Zero
        } else {
            MKind::PaperDefault
        };
        let m = m_from_alpha_bar(&alpha_bar, &one_minus, m_kind);
        Self::assemble(gamma, alpha_bar, one_minus, m, aligned, self.train_steps)
    }

    /// Tab-separated table, one row per `t` in `0..=T`.
    pub fn to_table(&self) -> String {
        let mut out = String::from("# t\tbeta\talpha_bar\tm\tdelta\tdelta_cond\tdelta_tilde\n");
        for t in 0..=self.steps() {
            let _ = writeln!(
                out,
                "{t}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}\t{:e}",
                self.beta[t],
                self.alpha_bar[t],
                self.m[t],
                self.delta[t],
                self.delta_cond[t],
                self.delta_tilde[t]
            );
        }
        out
    }

    /// Parses a table written by [`to_table`](Self::to_table). The beta and
    /// m columns define the schedule; the derived columns are checked
    /// against the rebuilt values.
    pub fn from_table(text: &str) -> Result<NoiseSchedule> {
        let mut rows: Vec<[f64; 7]> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 7 {
                return Err(Error::ConfigParse {
                    line: lineno + 1,
                    message: format!("expected 7 columns, got {}", fields.len()),
                });
            }
            let mut row = [0.0; 7];
            for (slot, field) in row.iter_mut().zip(&fields) {
                *slot = field.trim().parse().map_err(|_| Error::ConfigParse {
                    line: lineno + 1,
                    message: format!("bad number `{field}`"),
                })?;
            }
            if row[0] as usize != rows.len() {
                return Err(Error::ConfigParse {
                    line: lineno + 1,
                    message: format!("expected step {}, got {}", rows.len(), row[0]),
                });
            }
            rows.push(row);
        }
        if rows.len() < 2 {
            return Err(Error::ConfigParse {
                line: 0,
                message: "table needs rows for t = 0..T with T >= 1".into(),
            });
        }
        let betas: Vec<f64> = rows[1..].iter().map(|r| r[1]).collect();
        let m: Vec<f64> = rows.iter().map(|r| r[3]).collect();
        let s = NoiseSchedule::from_betas_and_m(&betas, &m)?;
        for (t, row) in rows.iter().enumerate() {
            let rebuilt = [s.alpha_bar[t], s.delta[t], s.delta_cond[t], s.delta_tilde[t]];
            for (k, (&a, &b)) in [row[2], row[4], row[5], row[6]].iter().zip(&rebuilt).enumerate() {
                if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1e-300) {
                    return Err(Error::ConfigParse {
                        line: t + 1,
                        message: format!("column {} disagrees with rebuilt value {b:e}", k + 3),
                    });
                }
            }
        }
        Ok(s)
    }
}

fn validate_betas(betas: &[f64]) -> Result<()> {
    if betas.is_empty() {
        return Err(Error::InvalidConfig("beta sequence is empty".into()));
    }
    for (i, &b) in betas.iter().enumerate() {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "beta_{} = {b} outside (0, 1)",
                i + 1
            )));
        }
    }
    if let Some(i) = betas.windows(2).position(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig(format!(
            "beta decreases at step {}",
            i + 2
        )));
    }
    Ok(())
}

/// `(abar[0..=T], 1 - abar[0..=T])`, the latter accumulated directly.
fn cumulative(betas: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
    let mut one_minus = Vec::with_capacity(betas.len() + 1);
    alpha_bar.push(1.0);
    one_minus.push(0.0);
    for &b in betas {
        let a = 1.0 - b;
        let prev_ab = *alpha_bar.last().unwrap();
        let prev_om: f64 = *one_minus.last().unwrap();
        alpha_bar.push(prev_ab * a);
        one_minus.push(prev_om * a + b);
    }
    (alpha_bar, one_minus)
}

fn m_from_alpha_bar(alpha_bar: &[f64], one_minus: &[f64], kind: MKind) -> Vec<f64> {
    match kind {
        MKind::Zero => vec![0.0; alpha_bar.len()],
        MKind::PaperDefault => alpha_bar
            .iter()
            .zip(one_minus)
            .map(|(&ab, &om)| default_m(ab, om))
            .collect(),
    }
}

/// Position of `target` on the decreasing sequence `sqrt_ab[0..=T]`.
fn align_step(sqrt_ab: &[f64], target: f64) -> Option<f64> {
    let last = sqrt_ab.len() - 1;
    // Tolerate rounding at the tail end.
    if target < sqrt_ab[last] {
        return if sqrt_ab[last] - target <= 1e-12 * sqrt_ab[last] {
            Some(last as f64)
        } else {
            None
        };
    }
    if target > sqrt_ab[0] {
        return None;
    }
    for t in 0..last {
        let (hi, lo) = (sqrt_ab[t], sqrt_ab[t + 1]);
        if target == hi {
            return Some(t as f64);
        }
        if target <= hi && target >= lo {
            return Some(t as f64 + (hi - target) / (hi - lo));
        }
    }
    Some(last as f64)
}
