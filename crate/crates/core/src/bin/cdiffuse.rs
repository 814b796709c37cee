use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cdiffuse::audio::{read_wav, segmental_snr, si_sdr, write_wav, AudioClip};
use cdiffuse::predictor::DEFAULT_FRAME;
use cdiffuse::sampler::{enhance, EnhanceOptions, DEFAULT_RATIO};
use cdiffuse::schedule::{build_schedule, MKind, FAST_GAMMA};
use cdiffuse::trainer::{init_predictor, run_training, FrameSource, SyntheticTask, TrainConfig, WavPairSource};
use cdiffuse::verify::{format_table, run_suite, SuiteOptions};
use cdiffuse::{seeded_rng, Error, GaussianOracle, Predictor, Result, ScheduleConfig, TrainablePredictor};

#[derive(Parser)]
#[command(name = "cdiffuse", version, about = "Conditional diffusion speech enhancement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Noise-schedule utilities.
    Schedule {
        #[command(subcommand)]
        action: ScheduleAction,
    },
    /// Run the numerical verification suite.
    Verify {
        /// Number of random schedules for the DDPM-reduction check.
        #[arg(long, default_value_t = 100)]
        fuzz: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the noise predictor.
    Train(TrainArgs),
    /// Enhance a noisy WAV file.
    Enhance(EnhanceArgs),
    /// Compare an estimate with a reference WAV.
    Metrics {
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScheduleAction {
    /// Print per-step quantities as a tab-separated table.
    Dump {
        #[command(flatten)]
        schedule: ScheduleArgs,
        /// Comma-separated inference variances; dumps the reduced schedule.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        fast: Option<Vec<f64>>,
    },
}

#[derive(Args, Clone)]
struct ScheduleArgs {
    /// Number of steps [default: 50].
    #[arg(long = "T")]
    steps: Option<usize>,
    /// [default: 1e-4]
    #[arg(long)]
    beta_start: Option<f64>,
    /// [default: 0.035]
    #[arg(long)]
    beta_end: Option<f64>,
    /// `paper` or `zero`.
    #[arg(long, default_value = "paper")]
    m: MKind,
}

impl ScheduleArgs {
    fn config(&self) -> ScheduleConfig {
        let base = ScheduleConfig::base();
        ScheduleConfig {
            steps: self.steps.unwrap_or(base.steps),
            beta_start: self.beta_start.unwrap_or(base.beta_start),
            beta_end: self.beta_end.unwrap_or(base.beta_end),
            ..base
        }
        .with_m(self.m)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Train on synthetic tone-in-noise frames (default when no dirs are given).
    #[arg(long, conflicts_with_all = ["clean_dir", "noisy_dir"])]
    synthetic: bool,
    #[arg(long, requires = "noisy_dir")]
    clean_dir: Option<PathBuf>,
    #[arg(long, requires = "clean_dir")]
    noisy_dir: Option<PathBuf>,
    /// Checkpoint path; the loss trace goes to `<out>.trace.tsv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    ckpt: Option<PathBuf>,
    /// Analytic Gaussian predictor: `clean_var,noise_var`.
    #[arg(long, value_parser = parse_pair)]
    oracle: Option<(f64, f64)>,
    /// Training config, to rebuild the schedule the checkpoint was trained on.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RATIO)]
    ratio: f64,
    /// Use the full training schedule instead of the 6-step fast schedule.
    #[arg(long)]
    full: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Schedule {
            action: ScheduleAction::Dump { schedule, fast },
        } => {
            let s = build_schedule(&schedule.config())?;
            let s = match fast {
                Some(g) if g.is_empty() => s.fast_sampling(&FAST_GAMMA)?,
                Some(g) => s.fast_sampling(&g)?,
                None => s,
            };
            print!("{}", s.to_table());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { fuzz, seed } => {
            let reports = run_suite(SuiteOptions {
                fuzz,
                seed,
                ..Default::default()
            });
            print!("{}", format_table(&reports));
            if reports.iter().all(|r| r.passed) {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Train(args) => train(args),
        Command::Enhance(args) => run_enhance(args),
        Command::Metrics { est, reference } => {
            let est = read_wav(&est)?;
            let reference = read_wav(&reference)?;
            println!("si_sdr={:.4}", si_sdr(&est.samples, &reference.samples)?);
            println!("seg_snr={:.4}", segmental_snr(&est.samples, &reference.samples)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn parse_pair(text: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = text
        .split_once(',')
        .ok_or_else(|| format!("expected `clean_var,noise_var`, got `{text}`"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad number `{v}`"));
    Ok((num(a)?, num(b)?))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::parse(&fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?),
        None => Ok(TrainConfig::default()),
    }
}

fn train(args: TrainArgs) -> Result<ExitCode> {
    let config = load_config(args.config.as_deref())?;
    let mut source: Box<dyn FrameSource> = match (&args.clean_dir, &args.noisy_dir) {
        (Some(c), Some(n)) if !args.synthetic => Box::new(WavPairSource::open(c, n, DEFAULT_FRAME)?),
        _ => Box::new(SyntheticTask::default()),
    };
    let outcome = run_training(&config, source.as_mut(), init_predictor(&config))?;
    let mut trace = args.out.clone().into_os_string();
    trace.push(".trace.tsv");
    outcome.write(&args.out, Path::new(&trace))?;
    let n = outcome.trace.len();
    if n > 0 {
        let w = n.min(100);
        let head = outcome.trace[..w].iter().sum::<f64>() / w as f64;
        let tail = outcome.trace[n - w..].iter().sum::<f64>() / w as f64;
        println!("iterations={n} first_window_loss={head:.6} last_window_loss={tail:.6}");
    }
    Ok(ExitCode::SUCCESS)
}

fn run_enhance(args: EnhanceArgs) -> Result<ExitCode> {
    let config = load_config(args.config.as_deref())?;
    let schedule = build_schedule(&config.schedule)?;
    let schedule = if args.full {
        schedule
    } else {
        schedule.fast_sampling(&FAST_GAMMA)?
    };
    let predictor: Predictor = match (&args.ckpt, &args.oracle) {
        (Some(path), _) => TrainablePredictor::load(path, DEFAULT_FRAME)?.into(),
        (None, Some((sx, sn))) => GaussianOracle::new(*sx, *sn)?.into(),
        (None, None) => unreachable!("clap requires --ckpt or --oracle"),
    };
    let noisy = read_wav(&args.input)?;
    let opts = EnhanceOptions {
        ratio: args.ratio,
        ..Default::default()
    };
    let out = enhance(&schedule, &predictor, &noisy.samples, &mut seeded_rng(args.seed), opts)?;
    write_wav(&AudioClip::new(out, noisy.sample_rate)?, &args.out)?;
    Ok(ExitCode::SUCCESS)
}
