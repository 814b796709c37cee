//! Numerical certification of the model's identities.
//!
//! Every check recomputes its reference from first principles (vanilla
//! DDPM formulas, bivariate Gaussian conditioning, sample statistics)
//! rather than reusing the library's posterior formulas.

use std::fmt::Write as _;

use rand::Rng as _;

use crate::forward::{sample_xt, single_step_params, target_from_xt, training_target, xt_from_noise, posterior_mean_var, PairedSignal};
use crate::schedule::{build_schedule, linear_betas, MKind, NoiseSchedule, ScheduleConfig};
use crate::{seeded_rng, standard_normal_vec, Rng};

pub const REDUCTION_TOL: f64 = 1e-12;
pub const MC_STANDARD_ERRORS: f64 = 4.0;
pub const BAYES_TOL: f64 = 1e-6;
pub const TARGET_TOL: f64 = 1e-12;
pub const RECURSION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub max_error: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl CheckReport {
    fn new(name: impl Into<String>, max_error: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            max_error,
            threshold,
            passed: max_error < threshold,
        }
    }

    fn merge(name: impl Into<String>, reports: &[CheckReport]) -> Self {
        let threshold = reports.first().map_or(0.0, |r| r.threshold);
        let max_error = reports.iter().map(|r| r.max_error).fold(0.0, f64::max);
        Self {
            name: name.into(),
            max_error,
            threshold,
            passed: reports.iter().all(|r| r.passed),
        }
    }
}

/// Compares the `m = 0` conditional coefficients against the vanilla DDPM
/// reverse step computed directly from the betas. The `t = 1` variance is a
/// convention (vanilla gives zero) and is excluded.
pub fn check_reduction_to_ddpm(betas: &[f64]) -> CheckReport {
    let name = format!("reduction_to_ddpm[T={}]", betas.len());
    let Ok(s) = NoiseSchedule::from_betas(betas, MKind::Zero) else {
        return CheckReport::new(name, f64::INFINITY, REDUCTION_TOL);
    };
    let mut log_ab = 0.0f64;
    let mut prev_one_minus = 0.0f64;
    let mut worst = 0.0f64;
    for (i, &beta) in betas.iter().enumerate() {
        let t = i + 1;
        log_ab += (-beta).ln_1p();
        let one_minus = -log_ab.exp_m1();
        let alpha = 1.0 - beta;
        let c_x = 1.0 / alpha.sqrt();
        let c_eps = beta / (one_minus.sqrt() * alpha.sqrt());
        let var = prev_one_minus * beta / one_minus;

        let c = s.posterior_coefficients(t).expect("t in range");
        worst = worst
            .max((c.c_x - c_x).abs())
            .max(c.c_y.abs())
            .max((c.c_eps - c_eps).abs());
        if t >= 2 {
            worst = worst.max((c.variance - var).abs());
        }
        prev_one_minus = one_minus;
    }
    CheckReport::new(name, worst, REDUCTION_TOL)
}

/// Draws `n ~ N(0, 1)`, `y = x0 + n`, samples `x_t` and compares the
/// sample mean and variance to `sqrt(abar_t) x0` and `1 - abar_t`. The
/// reported error is the largest deviation in standard errors.
pub fn check_marginalization(
    s: &NoiseSchedule,
    x0: f64,
    n_draws: usize,
    steps: &[usize],
    rng: &mut Rng,
) -> CheckReport {
    let mut worst = 0.0f64;
    for &t in steps {
        let noise = standard_normal_vec(rng, n_draws);
        let y: Vec<f64> = noise.iter().map(|n| x0 + n).collect();
        let pair = PairedSignal::new(vec![x0; n_draws], y).expect("finite draws");
        let (state, _) = sample_xt(s, &pair, t, rng).expect("t in range");
        let n = n_draws as f64;
        let mean = state.x.iter().sum::<f64>() / n;
        let var = state.x.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);

        let want_mean = s.alpha_bar(t).sqrt() * x0;
        let want_var = 1.0 - s.alpha_bar(t);
        let z_mean = (mean - want_mean).abs() / (want_var / n).sqrt();
        let z_var = (var - want_var).abs() / (want_var * (2.0 / (n - 1.0)).sqrt());
        worst = worst.max(z_mean).max(z_var);
    }
    CheckReport::new(
        format!("marginalization[T={},x0={x0}]", s.steps()),
        worst,
        MC_STANDARD_ERRORS,
    )
}

/// Conditions the joint Gaussian of `(x_{t-1}, x_t)` given `(x0, y)` on
/// `x_t`. Returns the posterior mean and variance of `x_{t-1}`.
pub fn bivariate_posterior(s: &NoiseSchedule, t: usize, x_t: f64, x0: f64, y: f64) -> (f64, f64) {
    let (m, mp) = (s.m(t), s.m(t - 1));
    let sab_prev = s.alpha_bar(t - 1).sqrt();
    // Marginal of x_{t-1}.
    let mu_prev = (1.0 - mp) * sab_prev * x0 + mp * sab_prev * y;
    let var_prev = s.delta(t - 1);
    // Single step x_t | x_{t-1}, y.
    let ratio = (1.0 - m) / (1.0 - mp);
    let a = ratio * s.alpha(t).sqrt();
    let b = (m - ratio * mp) * s.alpha_bar(t).sqrt();
    let step_var = s.delta(t) - ratio * ratio * s.alpha(t) * s.delta(t - 1);

    let cov = [[var_prev, a * var_prev], [a * var_prev, a * a * var_prev + step_var]];
    let mu = [mu_prev, a * mu_prev + b * y];
    let gain = cov[0][1] / cov[1][1];
    (mu[0] + gain * (x_t - mu[1]), cov[0][0] - gain * cov[1][0])
}

pub fn check_posterior_bayes(s: &NoiseSchedule, t: usize, trials: usize, rng: &mut Rng) -> CheckReport {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let x0 = rng.random_range(-2.0..2.0);
        let y = x0 + rng.random_range(-1.5..1.5);
        let x_t = rng.random_range(-3.0..3.0);
        let (mean, var) = posterior_mean_var(s, t, &[x_t], &[x0], &[y]).expect("t >= 2");
        let (bm, bv) = bivariate_posterior(s, t, x_t, x0, y);
        worst = worst.max((mean[0] - bm).abs()).max((var - bv).abs());
    }
    CheckReport::new(format!("posterior_bayes[T={},t={t}]", s.steps()), worst, BAYES_TOL)
}

/// The training target written through `(y - x0, eps)` equals the one
/// written through `x_t`, and its coefficient ratio is `m sqrt(abar) : sqrt(delta)`.
pub fn check_target_consistency(s: &NoiseSchedule, trials: usize, rng: &mut Rng) -> CheckReport {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let t = rng.random_range(1..=s.steps());
        let x0 = [rng.random_range(-1.0..1.0)];
        let y = [x0[0] + rng.random_range(-1.0..1.0)];
        let eps = standard_normal_vec(rng, 1);
        let x_t = xt_from_noise(s, t, &x0, &y, &eps);
        let a = training_target(s, t, &x0, &y, &eps)[0];
        let b = target_from_xt(s, t, &x_t, &x0)[0];
        worst = worst.max((a - b).abs());
    }
    for t in 1..=s.steps() {
        let from_noise = training_target(s, t, &[0.0], &[1.0], &[0.0])[0];
        let from_eps = training_target(s, t, &[0.0], &[0.0], &[1.0])[0];
        let want = s.m(t) * s.alpha_bar(t).sqrt() / s.delta(t).sqrt();
        worst = worst.max((from_noise / from_eps - want).abs() / want.max(1.0));
    }
    CheckReport::new(format!("target_consistency[T={}]", s.steps()), worst, TARGET_TOL)
}

/// Composes the single-step affine maps from step 1 to each `t` and
/// compares with the closed-form marginal.
pub fn check_recursion(s: &NoiseSchedule) -> CheckReport {
    let (mut c0, mut cy, mut v) = (1.0f64, 0.0f64, 0.0f64);
    let mut worst = 0.0f64;
    for t in 1..=s.steps() {
        let p = single_step_params(s, t).expect("t in range");
        c0 *= p.coef_prev;
        cy = p.coef_prev * cy + p.coef_y;
        v = p.coef_prev * p.coef_prev * v + p.var;
        let sab = s.alpha_bar(t).sqrt();
        worst = worst
            .max((c0 - (1.0 - s.m(t)) * sab).abs())
            .max((cy - s.m(t) * sab).abs())
            .max((v - s.delta(t)).abs());
    }
    CheckReport::new(format!("recursion[T={}]", s.steps()), worst, RECURSION_TOL)
}

/// Random admissible linear beta schedule.
pub fn fuzz_betas(rng: &mut Rng) -> Vec<f64> {
    let steps = rng.random_range(1..=300);
    let start = 10f64.powf(rng.random_range(-5.0..-2.0));
    let end = start + rng.random_range(0.0..0.2);
    linear_betas(steps, start, end)
}

/// Random linear schedule that is admissible with the default `m`
/// (resampled until every conditional variance is positive).
pub fn fuzz_admissible(rng: &mut Rng) -> NoiseSchedule {
    loop {
        if let Ok(s) = NoiseSchedule::from_betas(&fuzz_betas(rng), MKind::PaperDefault) {
            return s;
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub fuzz: usize,
    pub seed: u64,
    pub mc_draws: usize,
    pub bayes_trials: usize,
    pub target_trials: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            fuzz: 100,
            seed: 0,
            mc_draws: 100_000,
            bayes_trials: 1000,
            target_trials: 10_000,
        }
    }
}

pub fn run_suite(opts: SuiteOptions) -> Vec<CheckReport> {
    let mut rng = seeded_rng(opts.seed);
    let base = build_schedule(&ScheduleConfig::base()).expect("base schedule");
    let large = build_schedule(&ScheduleConfig::large()).expect("large schedule");
    let toy = NoiseSchedule::from_betas(&[0.1, 0.2, 0.3, 0.4], MKind::PaperDefault)
        .expect("toy schedule");

    let mut out = vec![
        check_reduction_to_ddpm(base.betas()),
        check_reduction_to_ddpm(large.betas()),
    ];
    let fuzzed: Vec<Vec<f64>> = (0..opts.fuzz).map(|_| fuzz_betas(&mut rng)).collect();
    if !fuzzed.is_empty() {
        let reports: Vec<_> = fuzzed.iter().map(|b| check_reduction_to_ddpm(b)).collect();
        out.push(CheckReport::merge(format!("reduction_to_ddpm[fuzz x{}]", opts.fuzz), &reports));
    }

    out.push(check_marginalization(&toy, 0.5, opts.mc_draws, &[1, 2, 3, 4], &mut rng));
    let sampled: Vec<usize> = (1..=10).map(|k| 5 * k).collect();
    out.push(check_marginalization(&base, 0.5, opts.mc_draws, &sampled, &mut rng));
    out.push(check_marginalization(&base, 0.0, opts.mc_draws, &sampled, &mut rng));
    let large_steps: Vec<usize> = (1..=10).map(|k| 20 * k).collect();
    out.push(check_marginalization(&large, -0.7, opts.mc_draws, &large_steps, &mut rng));

    for s in [&toy, &base, &large] {
        let reports: Vec<_> = (2..=s.steps())
            .map(|t| check_posterior_bayes(s, t, opts.bayes_trials, &mut rng))
            .collect();
        out.push(CheckReport::merge(format!("posterior_bayes[T={}]", s.steps()), &reports));
    }

    for s in [&base, &large] {
        out.push(check_target_consistency(s, opts.target_trials, &mut rng));
        out.push(check_recursion(s));
    }

    if !fuzzed.is_empty() {
        let schedules: Vec<_> = (0..opts.fuzz).map(|_| fuzz_admissible(&mut rng)).collect();
        let recursion: Vec<_> = schedules.iter().map(check_recursion).collect();
        out.push(CheckReport::merge(format!("recursion[fuzz x{}]", recursion.len()), &recursion));
        let bayes: Vec<_> = schedules
            .iter()
            .flat_map(|s| (2..=s.steps()).map(|t| (s, t)).collect::<Vec<_>>())
            .map(|(s, t)| check_posterior_bayes(s, t, 20, &mut rng))
            .collect();
        out.push(CheckReport::merge(format!("posterior_bayes[fuzz x{}]", schedules.len()), &bayes));
    }
    out
}

pub fn format_table(reports: &[CheckReport]) -> String {
    let mut out = String::from("# check\tmax_error\tthreshold\tresult\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{}\t{:e}\t{:e}\t{}",
            r.name,
            r.max_error,
            r.threshold,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    out
}
