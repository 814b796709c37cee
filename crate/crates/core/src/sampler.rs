//! Conditional reverse chain: start from the noisy signal and denoise step
//! by step down to `x0`.

use crate::error::{Error, Result};
use crate::forward::DiffusionState;
use crate::predictor::Predictor;
use crate::schedule::NoiseSchedule;
use crate::{fill_standard_normal, Rng};

/// Share of the noisy input mixed back into the enhanced output.
pub const DEFAULT_RATIO: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnhanceOptions {
    pub ratio: f64,
    /// Skip the noise draw on the final (t = 1) step.
    pub deterministic_last: bool,
}

impl Default for EnhanceOptions {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_RATIO,
            deterministic_last: true,
        }
    }
}

fn check_finite(y: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::InvalidSignal("empty signal".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSignal("non-finite sample in noisy input".into()));
    }
    Ok(())
}

/// `x_T = sqrt(abar_T) y + sqrt(delta_T) eps`.
pub fn init_xt(s: &NoiseSchedule, y: &[f64], rng: &mut Rng) -> Result<DiffusionState> {
    check_finite(y)?;
    let t = s.steps();
    let sab = s.alpha_bar(t).sqrt();
    let sd = s.delta(t).sqrt();
    let mut x = vec![0.0; y.len()];
    fill_standard_normal(rng, &mut x);
    for (xi, yi) in x.iter_mut().zip(y) {
        *xi = sab * yi + sd * *xi;
    }
    Ok(DiffusionState { t, x })
}

/// Mean of the reverse step given a noise estimate.
pub fn reverse_mean(
    s: &NoiseSchedule,
    t: usize,
    x_t: &[f64],
    y: &[f64],
    eps_hat: &[f64],
) -> Result<Vec<f64>> {
    let c = s.posterior_coefficients(t)?;
    Ok(x_t
        .iter()
        .zip(y)
        .zip(eps_hat)
        .map(|((x, y), e)| c.c_x * x + c.c_y * y - c.c_eps * e)
        .collect())
}

pub fn reverse_step(
    s: &NoiseSchedule,
    h: &Predictor,
    state: &DiffusionState,
    y: &[f64],
    rng: &mut Rng,
    deterministic_last: bool,
) -> Result<DiffusionState> {
    let t = state.t;
    s.check_step(t, 1)?;
    if state.x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: state.x.len(),
        });
    }
    let eps_hat = h.predict(s, t, &state.x, y)?;
    let mut x = reverse_mean(s, t, &state.x, y, &eps_hat)?;
    if !(t == 1 && deterministic_last) {
        let sd = s.delta_tilde(t).sqrt();
        let mut z = vec![0.0; x.len()];
        fill_standard_normal(rng, &mut z);
        x.iter_mut().zip(&z).for_each(|(xi, zi)| *xi += sd * zi);
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: t });
    }
    Ok(DiffusionState { t: t - 1, x })
}

/// `(1 - ratio) x0_hat + ratio y`.
pub fn recombine(x0_hat: &[f64], y: &[f64], ratio: f64) -> Vec<f64> {
    x0_hat
        .iter()
        .zip(y)
        .map(|(x, y)| (1.0 - ratio) * x + ratio * y)
        .collect()
}

/// Runs the full reverse chain from `x_T` and recombines with `y`.
pub fn enhance(
    s: &NoiseSchedule,
    h: &Predictor,
    y: &[f64],
    rng: &mut Rng,
    opts: EnhanceOptions,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&opts.ratio) {
        return Err(Error::InvalidConfig(format!(
            "recombination ratio {} outside [0, 1]",
            opts.ratio
        )));
    }
    let mut state = init_xt(s, y, rng)?;
    while state.t > 0 {
        state = reverse_step(s, h, &state, y, rng, opts.deterministic_last)?;
    }
    if opts.ratio == 1.0 {
        return Ok(y.to_vec());
    }
    Ok(recombine(&state.x, y, opts.ratio))
}
