//! Conditional forward process: the marginal `q(x_t | x0, y)`, the single
//! step `q(x_t | x_{t-1}, y)` and the posterior `q(x_{t-1} | x_t, x0, y)`.

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::{fill_standard_normal, Rng};

/// Aligned clean and noisy signals of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSignal {
    x0: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSignal {
    pub fn new(x0: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x0.is_empty() {
            return Err(Error::InvalidSignal("empty signal".into()));
        }
        if x0.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: x0.len(),
                actual: y.len(),
            });
        }
        if x0.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::InvalidSignal("non-finite sample".into()));
        }
        Ok(Self { x0, y })
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    /// The real noise `n = y - x0`.
    pub fn noise(&self) -> Vec<f64> {
        self.y.iter().zip(&self.x0).map(|(y, x)| y - x).collect()
    }
}

/// Latent signal `x_t` at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub t: usize,
    pub x: Vec<f64>,
}

/// Mean coefficients and variance of `q(x_t | x_{t-1}, y)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleStep {
    pub coef_prev: f64,
    pub coef_y: f64,
    pub var: f64,
}

/// Draws `x_t ~ q(x_t | x0, y)` and returns it with the Gaussian noise used.
pub fn sample_xt(
    s: &NoiseSchedule,
    p: &PairedSignal,
    t: usize,
    rng: &mut Rng,
) -> Result<(DiffusionState, Vec<f64>)> {
    s.check_step(t, 1)?;
    let mut eps = vec![0.0; p.len()];
    fill_standard_normal(rng, &mut eps);
    let x = xt_from_noise(s, t, p.x0(), p.y(), &eps);
    Ok((DiffusionState { t, x }, eps))
}

/// `x_t = (1 - m_t) sqrt(abar_t) x0 + m_t sqrt(abar_t) y + sqrt(delta_t) eps`.
pub fn xt_from_noise(s: &NoiseSchedule, t: usize, x0: &[f64], y: &[f64], eps: &[f64]) -> Vec<f64> {
    let sab = s.alpha_bar(t).sqrt();
    let (cx, cy) = ((1.0 - s.m(t)) * sab, s.m(t) * sab);
    let sd = s.delta(t).sqrt();
    x0.iter()
        .zip(y)
        .zip(eps)
        .map(|((x, y), e)| cx * x + cy * y + sd * e)
        .collect()
}

/// Regression target of the training objective:
/// `(m_t sqrt(abar_t) (y - x0) + sqrt(delta_t) eps) / sqrt(1 - abar_t)`.
pub fn training_target(
    s: &NoiseSchedule,
    t: usize,
    x0: &[f64],
    y: &[f64],
    eps: &[f64],
) -> Vec<f64> {
    let scale = 1.0 / s.one_minus_alpha_bar(t).sqrt();
    let cn = s.m(t) * s.alpha_bar(t).sqrt() * scale;
    let ce = s.delta(t).sqrt() * scale;
    x0.iter()
        .zip(y)
        .zip(eps)
        .map(|((x, y), e)| cn * (y - x) + ce * e)
        .collect()
}

/// The same target written through `x_t`: `(x_t - sqrt(abar_t) x0) / sqrt(1 - abar_t)`.
pub fn target_from_xt(s: &NoiseSchedule, t: usize, x_t: &[f64], x0: &[f64]) -> Vec<f64> {
    let sab = s.alpha_bar(t).sqrt();
    let scale = 1.0 / s.one_minus_alpha_bar(t).sqrt();
    x_t.iter()
        .zip(x0)
        .map(|(xt, x)| (xt - sab * x) * scale)
        .collect()
}

pub fn single_step_params(s: &NoiseSchedule, t: usize) -> Result<SingleStep> {
    s.check_step(t, 1)?;
    let r = (1.0 - s.m(t)) / (1.0 - s.m(t - 1));
    Ok(SingleStep {
        coef_prev: r * s.alpha(t).sqrt(),
        coef_y: (s.m(t) - r * s.m(t - 1)) * s.alpha_bar(t).sqrt(),
        var: s.delta_cond(t),
    })
}

/// Mean and variance of `q(x_{t-1} | x_t, x0, y)` for `2 <= t <= T`.
pub fn posterior_mean_var(
    s: &NoiseSchedule,
    t: usize,
    x_t: &[f64],
    x0: &[f64],
    y: &[f64],
) -> Result<(Vec<f64>, f64)> {
    s.check_step(t, 2)?;
    for other in [x0.len(), y.len()] {
        if other != x_t.len() {
            return Err(Error::LengthMismatch {
                expected: x_t.len(),
                actual: other,
            });
        }
    }
    let (m_t, m_prev) = (s.m(t), s.m(t - 1));
    let (d_t, d_prev) = (s.delta(t), s.delta(t - 1));
    let r = (1.0 - m_t) / (1.0 - m_prev);
    let sab_prev = s.alpha_bar(t - 1).sqrt();

    let wx = r * (d_prev / d_t) * s.alpha(t).sqrt();
    let w0 = (1.0 - m_prev) * (s.delta_cond(t) / d_t) * sab_prev;
    let wy = (m_prev * d_t - m_t * r * s.alpha(t) * d_prev) * sab_prev / d_t;
    let mean = x_t
        .iter()
        .zip(x0)
        .zip(y)
        .map(|((xt, x), y)| wx * xt + w0 * x + wy * y)
        .collect();
    Ok((mean, s.delta_tilde(t)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::{build_schedule, MKind, ScheduleConfig};
    use crate::seeded_rng;
    use approx::assert_relative_eq;

    fn toy() -> NoiseSchedule {
        NoiseSchedule::from_betas(&[0.1, 0.2, 0.3, 0.4], MKind::PaperDefault).unwrap()
    }

    #[test]
    fn paired_signal_validation() {
        assert!(PairedSignal::new(vec![], vec![]).is_err());
        assert!(PairedSignal::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(PairedSignal::new(vec![f64::NAN], vec![1.0]).is_err());
        let p = PairedSignal::new(vec![1.0, 2.0], vec![1.5, 1.0]).unwrap();
        assert_eq!(p.noise(), vec![0.5, -1.0]);
    }

    #[test]
    fn sample_xt_t1_std() {
        let s = toy();
        let n = 100_000;
        let p = PairedSignal::new(vec![0.3; n], vec![0.3; n]).unwrap();
        let mut rng = seeded_rng(7);
        let (state, _) = sample_xt(&s, &p, 1, &mut rng).unwrap();
        let mean_target = s.alpha_bar(1).sqrt() * 0.3;
        let var: f64 = state.x.iter().map(|x| (x - mean_target).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        // std of the sample std is about sd / sqrt(2n).
        let want = 0.0716_f64;
        assert!((sd - s.delta(1).sqrt()).abs() < 3.0 * sd / (2.0 * n as f64).sqrt());
        assert!((sd - want).abs() < 1e-3, "{sd}");
    }

    #[test]
    fn sample_xt_zero_m_matches_ddpm_marginal() {
        let s = build_schedule(&ScheduleConfig::base().with_m(MKind::Zero)).unwrap();
        let n = 100_000;
        let t = 30;
        let p = PairedSignal::new(vec![0.7; n], vec![-2.0; n]).unwrap();
        let (state, _) = sample_xt(&s, &p, t, &mut seeded_rng(1)).unwrap();
        let mean = state.x.iter().sum::<f64>() / n as f64;
        let var = state.x.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let want_var = 1.0 - s.alpha_bar(t);
        assert!((mean - s.alpha_bar(t).sqrt() * 0.7).abs() < 3.0 * (want_var / n as f64).sqrt());
        assert!((var - want_var).abs() < 3.0 * want_var * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn x0_equal_y_mean_ignores_m() {
        let s = toy();
        let x0 = vec![0.4, -1.1];
        let xt = xt_from_noise(&s, 3, &x0, &x0, &[0.0, 0.0]);
        for (a, b) in xt.iter().zip(&x0) {
            assert_relative_eq!(*a, s.alpha_bar(3).sqrt() * b, max_relative = 1e-14);
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let s = toy();
        let p = PairedSignal::new(vec![0.1; 16], vec![0.2; 16]).unwrap();
        let a = sample_xt(&s, &p, 2, &mut seeded_rng(9)).unwrap();
        let b = sample_xt(&s, &p, 2, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
        assert!(sample_xt(&s, &p, 0, &mut seeded_rng(9)).is_err());
        assert!(sample_xt(&s, &p, 5, &mut seeded_rng(9)).is_err());
    }

    #[test]
    fn single_step_cases() {
        let z = build_schedule(&ScheduleConfig::base().with_m(MKind::Zero)).unwrap();
        for t in 1..=z.steps() {
            let p = single_step_params(&z, t).unwrap();
            assert_eq!(p.coef_prev, z.alpha(t).sqrt());
            assert_eq!(p.coef_y, 0.0);
            assert_eq!(p.var, z.beta(t));
        }
        let s = toy();
        let p = single_step_params(&s, 2).unwrap();
        // 40-digit evaluation of the single-step formulas.
        assert!((p.coef_prev - 0.563_620_481_122_857_7).abs() < 1e-13);
        assert!((p.coef_y - 0.313_830_800_543_407).abs() < 1e-13);
        assert!((p.var - 0.040_781_953_873_970_87).abs() < 1e-13);

        let p1 = single_step_params(&s, 1).unwrap();
        assert_relative_eq!(p1.coef_prev, (1.0 - s.m(1)) * s.alpha(1).sqrt(), max_relative = 1e-15);
        assert_relative_eq!(p1.coef_y, s.m(1) * s.alpha_bar(1).sqrt(), max_relative = 1e-15);
        assert_eq!(p1.var, s.delta(1));
        assert!(single_step_params(&s, 0).is_err());
    }

    /// Gaussian conditioning of x_{t-1} on x_t, built from the marginal at
    /// t-1 and the single step.
    fn brute_posterior(s: &NoiseSchedule, t: usize, xt: f64, x0: f64, y: f64) -> (f64, f64) {
        let sab = s.alpha_bar(t - 1).sqrt();
        let mu1 = (1.0 - s.m(t - 1)) * sab * x0 + s.m(t - 1) * sab * y;
        let v1 = s.delta(t - 1);
        let p = single_step_params(s, t).unwrap();
        let mu2 = p.coef_prev * mu1 + p.coef_y * y;
        let c12 = p.coef_prev * v1;
        let v2 = p.coef_prev * p.coef_prev * v1 + p.var;
        (mu1 + c12 / v2 * (xt - mu2), v1 - c12 * c12 / v2)
    }

    #[test]
    fn posterior_scalar_example() {
        let s = toy();
        let (mean, var) = posterior_mean_var(&s, 3, &[0.5], &[1.0], &[1.2]).unwrap();
        let (bm, bv) = brute_posterior(&s, 3, 0.5, 1.0, 1.2);
        assert!((mean[0] - bm).abs() < 1e-12);
        assert!((var - bv).abs() < 1e-12);
        assert!((mean[0] - 0.914_753_934_479_337_7).abs() < 1e-12);
    }

    #[test]
    fn posterior_zero_m_is_ddpm() {
        let s = build_schedule(&ScheduleConfig::base().with_m(MKind::Zero)).unwrap();
        for t in [2, 10, 50] {
            let (mean, var) = posterior_mean_var(&s, t, &[0.3], &[-0.8], &[5.0]).unwrap();
            let (a, ab, abp, b) = (s.alpha(t), s.alpha_bar(t), s.alpha_bar(t - 1), s.beta(t));
            let want = (a.sqrt() * (1.0 - abp) * 0.3 + abp.sqrt() * b * -0.8) / (1.0 - ab);
            assert_relative_eq!(mean[0], want, max_relative = 1e-12);
            assert_relative_eq!(var, (1.0 - abp) * b / (1.0 - ab), max_relative = 1e-12);
        }
    }

    #[test]
    fn posterior_collapses_on_noiseless_trajectory() {
        let s = build_schedule(&ScheduleConfig::base()).unwrap();
        for t in 2..=s.steps() {
            let x0 = 0.6;
            let xt = s.alpha_bar(t).sqrt() * x0;
            let (mean, _) = posterior_mean_var(&s, t, &[xt], &[x0], &[x0]).unwrap();
            assert!((mean[0] - s.alpha_bar(t - 1).sqrt() * x0).abs() < 1e-12);
        }
    }

    #[test]
    fn posterior_errors() {
        let s = toy();
        assert!(posterior_mean_var(&s, 1, &[0.0], &[0.0], &[0.0]).is_err());
        assert!(posterior_mean_var(&s, 2, &[0.0], &[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn target_identity() {
        let s = build_schedule(&ScheduleConfig::base()).unwrap();
        let mut rng = seeded_rng(3);
        let p = PairedSignal::new(vec![0.2, -0.5, 0.9], vec![0.4, 0.1, 1.7]).unwrap();
        for t in 1..=s.steps() {
            let (state, eps) = sample_xt(&s, &p, t, &mut rng).unwrap();
            let a = training_target(&s, t, p.x0(), p.y(), &eps);
            let b = target_from_xt(&s, t, &state.x, p.x0());
            for (a, b) in a.iter().zip(&b) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn posterior_matches_conditioning(
                t in 2usize..=50,
                xt in -3.0f64..3.0,
                x0 in -3.0f64..3.0,
                y in -3.0f64..3.0,
            ) {
                let s = build_schedule(&ScheduleConfig::base()).unwrap();
                let (mean, var) = posterior_mean_var(&s, t, &[xt], &[x0], &[y]).unwrap();
                let (bm, bv) = brute_posterior(&s, t, xt, x0, y);
                prop_assert!((mean[0] - bm).abs() < 1e-6);
                prop_assert!((var - bv).abs() < 1e-6);
            }

            #[test]
            fn composition_reproduces_marginal(t in 1usize..=200) {
                let s = build_schedule(&ScheduleConfig::large()).unwrap();
                let (mut c0, mut cy, mut v) = (1.0f64, 0.0f64, 0.0f64);
                for k in 1..=t {
                    let p = single_step_params(&s, k).unwrap();
                    c0 *= p.coef_prev;
                    cy = p.coef_prev * cy + p.coef_y;
                    v = p.coef_prev * p.coef_prev * v + p.var;
                }
                let sab = s.alpha_bar(t).sqrt();
                prop_assert!((c0 - (1.0 - s.m(t)) * sab).abs() < 1e-10);
                prop_assert!((cy - s.m(t) * sab).abs() < 1e-10);
                prop_assert!((v - s.delta(t)).abs() < 1e-10);
            }
        }
    }
}
